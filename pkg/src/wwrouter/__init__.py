"""Grid detailed router with offline-RL-tuned ripup-and-reroute weights."""

__version__ = "0.1.0"
