"""Train binary classifiers directly on confusion-matrix metrics.

The package replaces the thresholding step inside metrics such as accuracy,
F-beta and AUROC with a piecewise-linear surrogate, making the metrics
differentiable so a network can be trained on them directly instead of on
cross-entropy.
"""

__version__ = "0.1.0"
