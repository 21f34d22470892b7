"""Closed-loop task planning with corrective re-prompting from precondition errors."""

__version__ = "0.1.0"
