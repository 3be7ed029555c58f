"""Multi-level unsupervised domain adaptation for semantic segmentation."""

__version__ = "0.1.0"
IGNORE_INDEX = 255
