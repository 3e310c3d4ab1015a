"""Compton scattering tomography toolkit: phantoms, the attenuated
(non-linear) ray transform, reconstruction, support and density recovery,
and spectral diagnostics of V-line and sinogram singularities."""

__version__ = "0.1.0"

from .grid import GridSpec, ImageGrid, ScanGeometry, Sinogram, rasterize, sample_bilinear  # noqa: E402
from .phantom import PhantomSpec, builtin_phantom  # noqa: E402
from .physics import PhysicsParams, klein_nishina, klein_nishina_total, scattered_energy  # noqa: E402
from .raytransforms import (KernelSpec, VLineParams, divergent_beam, radon_adjoint,  # noqa: E402
                            radon_forward, smoothed_vline_field, vline, vline_field)
from .forward import add_noise, compton_forward, density_response_curve  # noqa: E402
from .recon import ReconConfig, fbp_lambda, landweber, reconstruct, tv_reconstruct  # noqa: E402
from .postproc import (EdgeConfig, close_boundary, detect_edges, estimate_density,  # noqa: E402
                       fill_support, p_metric)
from .analysis import (edge_strength_ratio, singularity_order_map, sobolev_partial_norms,  # noqa: E402
                       vline_fourier_coefficients, vline_smoothing_report)

__all__ = [
    "GridSpec", "ImageGrid", "ScanGeometry", "Sinogram", "rasterize", "sample_bilinear",
    "PhantomSpec", "builtin_phantom",
    "PhysicsParams", "klein_nishina", "klein_nishina_total", "scattered_energy",
    "KernelSpec", "VLineParams", "divergent_beam", "radon_adjoint", "radon_forward",
    "smoothed_vline_field", "vline", "vline_field",
    "add_noise", "compton_forward", "density_response_curve",
    "ReconConfig", "fbp_lambda", "landweber", "reconstruct", "tv_reconstruct",
    "EdgeConfig", "close_boundary", "detect_edges", "estimate_density", "fill_support", "p_metric",
    "edge_strength_ratio", "singularity_order_map", "sobolev_partial_norms",
    "vline_fourier_coefficients", "vline_smoothing_report",
]
