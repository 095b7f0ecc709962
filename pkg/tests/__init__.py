"""Test suite for nearfield-distortion."""
