"""ftcnn: a small-CNN training engine built around layer-wise fine-tuning.

Per-layer learning rates with an epoch-floor decay schedule implement
incremental layer freezing; the surrounding apparatus covers patch
augmentation, candidate-level aggregation, ROC/FROC evaluation with
confidence-interval significance testing, and an interface-segmentation
post-processor with open-snake smoothing.
"""

__version__ = "0.1.0"
