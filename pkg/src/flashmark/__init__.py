"""flashmark: IO-pattern micro-benchmark harness for flash block devices."""

__version__ = "0.1.0"
