"""Cold-start-aware data passing for serverless functions, with a simulated cluster."""

__version__ = "0.1.0"
