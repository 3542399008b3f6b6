"""Attend, adapt and transfer: soft attention over frozen source-task solutions."""

__version__ = "0.1.0"
