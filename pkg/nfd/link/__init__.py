"""Link-level evaluation and frequency scheduling."""

from .evaluation import LinkBudget, rate_sweep, sindr, sum_rate
from .scheduler import ScheduleAssignment, schedule, scheduling_experiment

__all__ = [
    "LinkBudget",
    "rate_sweep",
    "sindr",
    "sum_rate",
    "ScheduleAssignment",
    "schedule",
    "scheduling_experiment",
]
