"""Command Line Interface for nearfield-distortion."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ..config import Scenario
from ..exceptions import ConfigurationError, NfdError, NumericalError, ValidationMismatchError
from .experiments import EXPERIMENTS, RunContext
from .tracer import RunTracer

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3

DEFAULT_SCENARIO = "config/default/config.yaml"


class NfdCLI:
    """Main CLI class for nearfield-distortion."""

    def __init__(self):
        self.scenario: Optional[Scenario] = None
        self.tracer: Optional[RunTracer] = None

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Main entry point for the CLI; returns the process exit code."""
        parser = self.create_parser()
        args = parser.parse_args(argv)

        if not hasattr(args, 'func'):
            parser.print_help()
            return EXIT_OK

        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        try:
            args.func(args)
        except ValidationMismatchError as e:
            print(f"❌ Validation mismatch: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        except (ConfigurationError, FileNotFoundError) as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except NumericalError as e:
            print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        except NfdError as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        except Exception as e:
            logging.getLogger(__name__).debug("Unexpected failure", exc_info=True)
            print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    def create_parser(self):
        """Create the command line argument parser."""
        parser = argparse.ArgumentParser(
            prog="nfd",
            description="nearfield-distortion - PA distortion focusing in near-field arrays",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  nfd predict --scenario config/scenarios/fig5a.yaml     # Focal-point predictions
  nfd radiate --scenario config/scenarios/fig5a.yaml     # Directional PSD heatmap
  nfd validate --scenario config/scenarios/fig7b.yaml    # Predictions vs simulated peaks
  nfd calibrate --scenario config/default/config.yaml    # PA coefficients for an EVM
  nfd run --scenario config/scenarios/fig8.yaml          # Experiment named in the file
            """
        )

        parser.add_argument(
            "--verbose", "-v",
            action="store_true",
            help="Enable verbose output"
        )

        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--scenario", "-s", type=str, default=DEFAULT_SCENARIO,
                            help="Scenario file (YAML or JSON)")
        common.add_argument("--seed", type=int, help="Override the scenario RNG seed")
        common.add_argument("--out", type=str, help="Output directory")
        common.add_argument("--workers", type=int, help="Maximum worker threads")
        common.add_argument("--grid", type=float, help="Angular grid step in degrees")

        subparsers = parser.add_subparsers(title="commands", dest="command")

        descriptions = {
            "predict": "Predict distortion focal points",
            "radiate": "Simulate and scan the directional PSD",
            "rates": "Sum rate over precoder, EVM and SNR",
            "schedule": "Distortion-aware vs unaware scheduling",
            "calibrate": "PA coefficients for a target EVM",
            "validate": "Compare predicted focal points with simulated peaks",
        }
        for name, help_text in descriptions.items():
            sub = subparsers.add_parser(name, parents=[common], help=help_text)
            sub.set_defaults(func=self.cmd_experiment, experiment=name)

        run_parser = subparsers.add_parser("run", parents=[common],
                                           help="Run the experiment named in the scenario")
        run_parser.set_defaults(func=self.cmd_experiment, experiment=None)

        return parser

    def load_scenario(self, args) -> Scenario:
        """Load the scenario and apply command-line overrides."""
        scenario = Scenario.from_file(args.scenario)
        if args.seed is not None:
            scenario.rng_seed = args.seed
        if args.out:
            scenario.output.directory = args.out
        if args.workers is not None:
            scenario.output.workers = args.workers
        if args.experiment:
            scenario.experiment = args.experiment
        scenario.validate()
        self.scenario = scenario
        return scenario

    def cmd_experiment(self, args):
        """Run one experiment and write its manifest."""
        scenario = self.load_scenario(args)
        output_dir = Path(scenario.output.directory)
        output_dir.mkdir(parents=True, exist_ok=True)

        print(f"🚀 Running {scenario.experiment} for scenario {scenario.name!r}")
        print(f"🎲 Seed: {scenario.rng_seed}  👥 Workers: {scenario.output.workers}")

        self.tracer = RunTracer(output_dir, scenario.fingerprint(), scenario.rng_seed,
                                scenario.output.workers)
        ctx = RunContext(scenario=scenario, output_dir=output_dir, tracer=self.tracer,
                         workers=scenario.output.workers, grid_deg=args.grid)
        handle = self.tracer.start_stage(scenario.experiment)
        try:
            EXPERIMENTS[scenario.experiment](ctx)
        except Exception as e:
            self.tracer.end_stage(handle, error=f"{type(e).__name__}: {e}")
            raise
        else:
            self.tracer.end_stage(handle)
        finally:
            manifest = self.tracer.save_manifest()
            print(f"📝 Manifest: {manifest}")

        print(f"\n✅ {scenario.experiment} completed!")
        for artifact in sorted(self.tracer.artifacts):
            print(f"📁 {artifact}")


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    cli = NfdCLI()
    sys.exit(cli.run(argv))


if __name__ == "__main__":
    main()
