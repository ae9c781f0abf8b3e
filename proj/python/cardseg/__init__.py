"""Semi-supervised cardiac MRI segmentation core.

Thin Python surface over the C++ implementation: preprocessing,
augmentation, histogram-matching domain adaptation, dice metrics,
synthetic phantom slices, and residual U-Net training/inference.
"""

from cardseg._cardseg import (
    Network,
    center_crop,
    center_crop_mask,
    dice_coefficient,
    evaluate_set,
    hflip,
    histogram_match,
    normalize_intensity,
    percentile,
    phantom_slices,
    rotate,
    sharpen,
)

__all__ = [
    "Network",
    "center_crop",
    "center_crop_mask",
    "dice_coefficient",
    "evaluate_set",
    "hflip",
    "histogram_match",
    "normalize_intensity",
    "percentile",
    "phantom_slices",
    "rotate",
    "sharpen",
]
