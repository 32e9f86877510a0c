"""Tooling around an endoscopic CADe pipeline: augmentation, corruption
benchmarks, consensus ground truth, loss kernels, evaluation and model
comparison. Trained networks are external; their outputs arrive as files."""

__version__ = "0.1.0"
