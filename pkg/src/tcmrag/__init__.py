"""Case-based TCM diagnosis engine: hybrid retrieval, segmentation, prompting, evaluation."""

__version__ = "0.1.0"
