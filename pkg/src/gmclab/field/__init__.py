"""Log-correlated Gaussian fields: kernels, mollified covariances, samplers,
the sphere GFF and the two Gaussian theorem harnesses."""

from .covariance import (Calibration, calibrate_constants, mollified_covariance,
                         radial_covariance, radial_covariance_fast, radial_table,
                         variance)
from .kernel import Box, LogKernelSpec, MollifierSpec, log_plus
from .sampling import (ExactSampler, FieldSample, GridSpec, SpectralSampler,
                       make_sampler, psd_factor, sample_coupled,
                       sample_log_field)
from .sphere import (SphereGffSampler, SphereGrid, ball_average, ball_mask,
                     chord_half, geodesic_distance, green_integral,
                     green_matrix, green_sphere, green_sphere_centered,
                     round_density, sample_sphere_gff)
from .theorems import girsanov_check, kahane_compare

__all__ = [
    "Box", "Calibration", "ExactSampler", "FieldSample", "GridSpec",
    "LogKernelSpec", "MollifierSpec", "SpectralSampler", "SphereGffSampler",
    "SphereGrid", "ball_average", "ball_mask", "calibrate_constants",
    "chord_half", "geodesic_distance", "girsanov_check", "green_integral",
    "green_matrix", "green_sphere", "green_sphere_centered", "kahane_compare",
    "log_plus", "make_sampler", "mollified_covariance", "psd_factor",
    "radial_covariance", "radial_covariance_fast", "radial_table",
    "round_density", "sample_coupled", "sample_log_field",
    "sample_sphere_gff", "variance",
]
