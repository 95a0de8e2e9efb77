"""Exact Gaussian/DoG scale-space keypoint detector and a camera-simulation
harness for measuring how sampling, refinement, filtering and acquisition
perturbations affect detection stability.
"""

from .image import (DigitalImage, estimate_blob_sigma, gaussian_blob_image,
                    oversample_bspline3, read_image, write_image)
from .scalespace import (ScaleSpace, ScaleSpaceConfig, build_scale_space,
                         dct_gaussian_convolve, dct_resample,
                         dump_scale_space, sample_dct_interpolant,
                         sampled_kernel_convolve, semigroup_deviation)
from .extrema import (DoGVolume, Keypoint, build_dog, canonical_sort,
                      compute_features, contrast_filter, detect_keypoints,
                      edge_filter, read_keypoints_csv, refine,
                      scan_discrete_extrema, write_keypoints_csv)
from .stability import (MatchTolerance, OccurrenceMatrix, StabilityReport,
                        boundary_filter, new_lost_rates,
                        normalize_scale_kappa, occurrence_matrix,
                        same_detection, stability_and_precision, unique_set)
from .camera import (AcquisitionSpec, SeriesRecord, make_translation_series,
                     make_zoom_series, simulate_snapshot, stream,
                     synthetic_reference, wrong_blur_series,
                     write_series_manifest)
from .experiments import balanced_delta_min

__version__ = "0.1.0"

__all__ = [
    "DigitalImage", "read_image", "write_image", "oversample_bspline3",
    "estimate_blob_sigma", "gaussian_blob_image",
    "ScaleSpaceConfig", "ScaleSpace", "dct_gaussian_convolve",
    "sampled_kernel_convolve", "build_scale_space", "semigroup_deviation",
    "dct_resample", "sample_dct_interpolant", "dump_scale_space",
    "DoGVolume", "Keypoint", "build_dog", "scan_discrete_extrema", "refine",
    "compute_features", "contrast_filter", "edge_filter", "detect_keypoints",
    "canonical_sort", "write_keypoints_csv", "read_keypoints_csv",
    "MatchTolerance", "OccurrenceMatrix", "StabilityReport", "same_detection",
    "unique_set", "boundary_filter", "normalize_scale_kappa",
    "occurrence_matrix", "new_lost_rates", "stability_and_precision",
    "AcquisitionSpec", "SeriesRecord", "simulate_snapshot",
    "make_translation_series", "make_zoom_series", "wrong_blur_series",
    "write_series_manifest", "synthetic_reference", "stream",
    "balanced_delta_min",
]
