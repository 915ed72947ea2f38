"""Wave-equation estimate harness on asymptotically Euclidean metrics."""

__version__ = "0.1.0"
