from .dataset import (
    AUG_OPS,
    FLIP_PERMUTATION,
    HR_SIZE,
    LR_SIZE,
    N_LANDMARKS,
    ManifestEntry,
    Sample,
    augment,
    build_sample,
    from_uint8,
    load_cached_samples,
    load_image,
    load_sample_cache,
    load_samples,
    read_landmarks,
    read_manifest,
    save_image,
    save_sample_cache,
    to_uint8,
)
from .heatmaps import DEFAULT_SIGMA, HEATMAP_SIZE, render_heatmaps
from .resize import (
    DegenerateBoundingBoxError,
    bicubic_resize,
    crop_and_resize,
    cubic_kernel,
    resize_matrices,
)

__all__ = [
    "AUG_OPS", "FLIP_PERMUTATION", "HR_SIZE", "LR_SIZE", "N_LANDMARKS",
    "ManifestEntry", "Sample", "augment", "build_sample", "from_uint8",
    "load_cached_samples", "load_image", "load_sample_cache", "load_samples",
    "read_landmarks", "read_manifest", "save_image", "save_sample_cache",
    "to_uint8", "DEFAULT_SIGMA", "HEATMAP_SIZE", "render_heatmaps",
    "DegenerateBoundingBoxError", "bicubic_resize", "crop_and_resize",
    "cubic_kernel", "resize_matrices",
]
