"""Claims-based pregnancy episode detection and complication-risk triage."""

__version__ = "0.1.0"
