"""Non-linear Compton forward model and the additive Gaussian noise model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .grid import ImageGrid, ScanGeometry, Sinogram
from .physics import PhysicsParams, lambda_weight
from .raytransforms import VLineFieldEngine, VLineParams, _weight_values, ray_projector

__all__ = [
    "Sinogram", "compton_forward", "add_noise", "standard_normal_stream",
    "DensityModel", "DensityResponse", "density_response_curve", "tangent_probes",
]


def _resolve_vline(phys: PhysicsParams, vp: VLineParams | None) -> VLineParams:
    if vp is None:
        return VLineParams.from_physics(phys)
    for name in ("a", "b", "psi"):
        if not math.isclose(getattr(vp, name), getattr(phys, name), rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f"V-line parameter {name}={getattr(vp, name)} disagrees with "
                             f"physics {name}={getattr(phys, name)}")
    return vp


def compton_forward(f: ImageGrid, geom: ScanGeometry, phys: PhysicsParams,
                    vp: VLineParams | None = None, w=None) -> Sinogram:
    """Attenuated scatter data ``lambda * int_L w f exp(-smoothed V f(x, theta)) dl``.

    The exponent field is computed once per angle and reused for every offset
    ``s``. ``vp`` defaults to the leg weights and opening angle in ``phys``
    (with the default leg length and kernel); an explicit ``vp`` must agree
    with ``phys`` on ``a``, ``b`` and ``psi``. ``w`` is as in
    :func:`cst.raytransforms.radon_forward`.
    """
    if np.any(f.values < 0):
        raise ValueError("density must be non-negative")
    vp = _resolve_vline(phys, vp)
    lam = lambda_weight(phys)
    P = ray_projector(f.spec, geom)
    engine = VLineFieldEngine(f, vp)
    out = np.empty(geom.shape)
    for j, th in enumerate(geom.theta):
        wv = _weight_values(w, f.spec, th)
        h = f.values * np.exp(-engine.smoothed(th))
        if wv is not None:
            h = wv * h
        out[j] = lam * P.forward_angle(j, h.ravel())
    return Sinogram(out, geom)


def standard_normal_stream(seed: int, n: int) -> np.ndarray:
    """``n`` standard normal draws, reproducible from the algorithm alone.

    Uses the raw 64-bit outputs of PCG64 (PCG-XSL-RR 128/64) seeded through
    numpy's SeedSequence; the top 53 bits ``k`` give ``u = (k + 1/2) / 2**53``
    in the open interval (0, 1) and ``eta = Phi^{-1}(u)`` by inverse CDF.
    """
    raw = np.random.PCG64(seed).random_raw(n)
    k = np.asarray(raw, dtype=np.uint64) >> np.uint64(11)
    u = (k.astype(np.float64) + 0.5) / 2.0 ** 53
    return ndtri(u)


def add_noise(b: Sinogram, gamma: float, seed: int) -> Sinogram:
    """``b + gamma * ||b||_2 / sqrt(k) * eta`` with ``k`` the number of samples."""
    if gamma < 0:
        raise ValueError("noise level gamma must be non-negative")
    if gamma == 0:
        return b
    k = b.values.size
    eta = standard_normal_stream(seed, k).reshape(b.values.shape)
    return b.with_values(b.values + gamma * np.linalg.norm(b.values) / math.sqrt(k) * eta)


class DensityModel:
    """Fast evaluation of ``compton_forward(n_e * chi)`` for many ``n_e``.

    The V-line transform is linear, so the exponent for ``n_e * chi`` is
    ``n_e`` times the exponent for ``chi``. Fields for ``chi`` are computed
    once per angle and kept only on the support pixels.
    """

    def __init__(self, chi: ImageGrid, geom: ScanGeometry, phys: PhysicsParams,
                 vp: VLineParams | None = None, w=None):
        if np.any(chi.values < 0):
            raise ValueError("support indicator must be non-negative")
        self.geom = geom
        self.vp = _resolve_vline(phys, vp)
        self.lam = lambda_weight(phys)
        cols = np.flatnonzero(chi.values.ravel())
        self.cols = cols
        P = ray_projector(chi.spec, geom)
        engine = VLineFieldEngine(chi, self.vp)
        chi_c = chi.values.ravel()[cols]
        self.base = np.empty((geom.ntheta, cols.size))
        self.expo = np.empty((geom.ntheta, cols.size))
        self.blocks = []
        for j, th in enumerate(geom.theta):
            wv = _weight_values(w, chi.spec, th)
            wc = 1.0 if wv is None else np.broadcast_to(wv, chi.shape).ravel()[cols]
            self.base[j] = self.lam * wc * chi_c
            self.expo[j] = engine.smoothed(th).ravel()[cols]
            self.blocks.append(P.block(j)[:, cols].tocsr())

    def sinogram_values(self, ne: float) -> np.ndarray:
        """Values of ``compton_forward(ne * chi)``, shape ``(ntheta, ns)``."""
        out = np.empty(self.geom.shape)
        if ne == 0:
            out[:] = 0.0
            return out
        h = ne * self.base * np.exp(-ne * self.expo)
        for j, blk in enumerate(self.blocks):
            out[j] = blk @ h[j]
        return out

    def __call__(self, ne: float) -> Sinogram:
        return Sinogram(self.sinogram_values(ne), self.geom)


def tangent_probes(chi: ImageGrid, geom: ScanGeometry, width: float | None = None) -> np.ndarray:
    """Near-tangent lines on the convex side of the support.

    For each angle the support function ``h(theta) = max x.Theta`` over
    support pixels is found; probes are the offset bins with
    ``s`` in ``[h - width, h]`` (default ``width`` = 2 pixels). Returns an
    ``(m, 2)`` integer array of ``(theta index, s index)`` pairs.
    """
    width = 2 * max(chi.dx, chi.dy) if width is None else width
    X, Y = chi.mesh()
    sup = chi.values > 0
    if not sup.any():
        raise ValueError("support is empty")
    xs, ys = X[sup], Y[sup]
    s = geom.s
    out = []
    for j, th in enumerate(geom.theta):
        h = np.max(xs * math.cos(th) + ys * math.sin(th))
        for i in np.flatnonzero((s >= h - width) & (s <= h)):
            out.append((j, i))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class DensityResponse:
    ne: np.ndarray        # (n,)
    values: np.ndarray    # (n, m) data at the probe lines
    probes: np.ndarray    # (m, 2) (theta index, s index)


def density_response_curve(omega_mask: ImageGrid, geom: ScanGeometry, phys: PhysicsParams,
                           vp: VLineParams | None, ne_grid, probes=None, w=None) -> DensityResponse:
    """Data ``R(n_e chi_Omega)`` at probe lines for each ``n_e`` in ``ne_grid``."""
    ne_grid = np.asarray(ne_grid, dtype=float)
    if np.any(ne_grid < 0):
        raise ValueError("densities must be non-negative")
    probes = tangent_probes(omega_mask, geom) if probes is None else np.asarray(probes, dtype=np.int64)
    model = DensityModel(omega_mask, geom, phys, vp, w)
    vals = np.array([model.sinogram_values(ne)[probes[:, 0], probes[:, 1]] for ne in ne_grid])
    return DensityResponse(ne_grid, vals.reshape(ne_grid.size, len(probes)), probes)
