"""Writer retrieval engine and benchmark harness for historical document images."""

__version__ = "0.1.0"
