"""Reconstruction from (non-linear) scatter data treated as linear Radon data:
lambda-tomography backprojection, Landweber iteration and smoothed-TV
least squares."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ImageGrid, ScanGeometry, Sinogram
from .raytransforms import adjoint_scale, radon_adjoint, ray_projector

DEFAULT_GRID = GridSpec(200, 200)
METHODS = ("fbp_lambda", "landweber", "tv")
DEFAULT_ITERATIONS = {"fbp_lambda": 1, "landweber": 200, "tv": 300}


@dataclass(frozen=True)
class ReconConfig:
    """Settings for all reconstruction methods.

    ``iterations=None`` picks the per-method default; ``relaxation=None``
    uses ``1/L`` with ``L`` a power-iteration estimate of ``||A||^2``.
    ``tol > 0`` stops early once the relative change of the residual
    (Landweber) or objective (TV) falls below it.
    """

    method: str = "tv"
    iterations: int | None = None
    relaxation: float | None = None
    tv_lambda: float = 0.02
    tv_beta: float = 0.05
    derivative_order: int = 2
    tol: float = 0.0
    tv_global_sqrt: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.iterations is None:
            object.__setattr__(self, "iterations", DEFAULT_ITERATIONS[self.method])
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.relaxation is not None and self.relaxation <= 0:
            raise ValueError("relaxation must be positive")
        if self.tv_lambda < 0:
            raise ValueError("tv_lambda must be non-negative")
        if self.tv_beta <= 0:
            raise ValueError("tv_beta must be positive")
        if self.derivative_order not in (1, 2):
            raise ValueError("derivative order must be 1 or 2")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


class ReconstructionError(RuntimeError):
    """Iteration diverged or produced non-finite values."""


# ---------------------------------------------------------------------------
# Lambda tomography
# ---------------------------------------------------------------------------

def s_derivative(values: np.ndarray, ds: float, k: int) -> np.ndarray:
    """``d^k/ds^k`` along the last axis: central differences inside,
    second-order one-sided stencils at the two end bins."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] < 4:
        raise ValueError("need at least 4 offset samples")
    out = np.empty_like(v)
    if k == 1:
        out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * ds)
        out[..., 0] = (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * ds)
        out[..., -1] = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * ds)
    elif k == 2:
        out[..., 1:-1] = (v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]) / ds ** 2
        out[..., 0] = (2 * v[..., 0] - 5 * v[..., 1] + 4 * v[..., 2] - v[..., 3]) / ds ** 2
        out[..., -1] = (2 * v[..., -1] - 5 * v[..., -2] + 4 * v[..., -3] - v[..., -4]) / ds ** 2
    else:
        raise ValueError("derivative order must be 1 or 2")
    return out


def fbp_lambda(b: Sinogram, geom: ScanGeometry | None = None, k: int = 2,
               grid: GridSpec = DEFAULT_GRID) -> ImageGrid:
    """Backprojection of the ``k``-th offset derivative of the data.

    Singularities of the data are amplified, so the result highlights
    boundaries; no sign convention is imposed.
    """
    geom = b.geom if geom is None else geom
    if geom != b.geom:
        raise ValueError("sinogram geometry does not match")
    return radon_adjoint(b.with_values(s_derivative(b.values, geom.ds, k)), grid)


# ---------------------------------------------------------------------------
# Landweber
# ---------------------------------------------------------------------------

class _Operator:
    """Unweighted Radon matrix ``A`` with ``A*`` the adjoint in the
    ``ds dtheta`` / ``dx dy`` weighted inner products."""

    def __init__(self, grid: GridSpec, geom: ScanGeometry):
        self.grid, self.geom = grid, geom
        self.P = ray_projector(grid, geom)
        self.scale = adjoint_scale(grid, geom)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.P.forward(x)

    def transpose(self, r: np.ndarray) -> np.ndarray:
        return self.P.transpose(r)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        return self.scale * self.P.transpose(r)


def estimate_norm_squared(op: _Operator, iterations: int = 20) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``A* A``."""
    x = np.ones(op.grid.nx * op.grid.ny)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iterations):
        y = op.adjoint(op.forward(x))
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return lam


@dataclass
class LandweberResult:
    image: ImageGrid
    residuals: np.ndarray       # ||b - A x_k|| for k = 0..iterations
    relaxation: float
    norm_estimate: float


def landweber(b: Sinogram, geom: ScanGeometry | None = None, cfg: ReconConfig | None = None,
              grid: GridSpec = DEFAULT_GRID) -> LandweberResult:
    """``x <- x + omega A*(b - A x)`` from ``x = 0``.

    Raises :class:`ReconstructionError` if ``omega >= 2/L`` or if the
    residual grows to 10 times its running minimum.
    """
    cfg = ReconConfig("landweber") if cfg is None else cfg
    geom = b.geom if geom is None else geom
    op = _Operator(grid, geom)
    L = estimate_norm_squared(op)
    data = b.values.ravel()
    x = np.zeros(grid.nx * grid.ny)
    if L == 0:
        return LandweberResult(ImageGrid.from_spec(grid, x), np.full(cfg.iterations + 1, np.linalg.norm(data)), 0.0, 0.0)
    omega = 1.0 / L if cfg.relaxation is None else cfg.relaxation
    if omega * L >= 2.0:
        raise ReconstructionError(f"relaxation {omega:.3g} violates omega < 2/L = {2 / L:.3g}")
    r = data.copy()
    res = [float(np.linalg.norm(r))]
    best = res[0]
    for _ in range(cfg.iterations):
        x += omega * op.adjoint(r)
        r = data - op.forward(x)
        rn = float(np.linalg.norm(r))
        res.append(rn)
        if not math.isfinite(rn) or (best > 0 and rn > 10 * best):
            raise ReconstructionError(f"Landweber diverged: residual {rn:.3g} vs minimum {best:.3g} "
                                      f"after {len(res) - 1} iterations (omega*L = {omega * L:.3g})")
        if cfg.tol > 0 and abs(res[-2] - rn) <= cfg.tol * res[-2]:
            break
        best = min(best, rn)
    return LandweberResult(ImageGrid.from_spec(grid, x), np.array(res), omega, L)


# ---------------------------------------------------------------------------
# Smoothed total variation
# ---------------------------------------------------------------------------

def forward_differences(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences in pixel units, zero across the far edge (Neumann)."""
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def forward_differences_transpose(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Transpose of :func:`forward_differences` (minus the discrete divergence)."""
    out = np.zeros_like(px)
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1, :] -= py[:-1, :]
    out[1:, :] += py[:-1, :]
    return out


def tv_penalty(x: np.ndarray, beta: float, global_sqrt: bool = False) -> float:
    """``sum_i sqrt(|grad x_i|^2 + beta^2)``, or ``sqrt(||grad x||^2 + beta^2)`` if ``global_sqrt``."""
    gx, gy = forward_differences(x)
    if global_sqrt:
        return math.sqrt(float(np.sum(gx * gx + gy * gy)) + beta * beta)
    return float(np.sum(np.sqrt(gx * gx + gy * gy + beta * beta)))


def tv_penalty_gradient(x: np.ndarray, beta: float, global_sqrt: bool = False) -> np.ndarray:
    gx, gy = forward_differences(x)
    if global_sqrt:
        n = math.sqrt(float(np.sum(gx * gx + gy * gy)) + beta * beta)
    else:
        n = np.sqrt(gx * gx + gy * gy + beta * beta)
    return forward_differences_transpose(gx / n, gy / n)


def tv_objective(x: np.ndarray, op, data: np.ndarray, lam: float, beta: float,
                 global_sqrt: bool = False) -> float:
    """``||A x - b||^2 + lam * TV(x)`` with the plain Euclidean data norm.

    ``op`` is anything with ``forward`` (flattened image to flattened data).
    """
    r = op.forward(x.ravel()) - data
    return float(r @ r) + lam * tv_penalty(x, beta, global_sqrt)


def tv_gradient(x: np.ndarray, op, data: np.ndarray, lam: float, beta: float,
                global_sqrt: bool = False) -> np.ndarray:
    """Euclidean gradient of :func:`tv_objective`; ``op`` also needs ``transpose``."""
    r = op.forward(x.ravel()) - data
    g = 2.0 * op.transpose(r).reshape(x.shape)
    return g + lam * tv_penalty_gradient(x, beta, global_sqrt)


@dataclass
class TVResult:
    image: ImageGrid
    objective: np.ndarray       # objective after each accepted step, starting at x0
    steps: np.ndarray           # accepted step lengths
    rejected: int = 0           # backtracking reductions in total


def tv_reconstruct(b: Sinogram, geom: ScanGeometry | None = None, cfg: ReconConfig | None = None,
                   grid: GridSpec = DEFAULT_GRID, op=None, x0: np.ndarray | None = None) -> TVResult:
    """Gradient descent on ``||A x - b||^2 + lam * TV_beta(x)`` from ``x = 0``.

    Steps start from the Barzilai-Borwein length and are halved until the
    Armijo condition holds, so the objective never increases. Because the
    data term is quadratic, ``A`` applied to the search direction is
    computed once per iteration and trial steps cost no projections.
    ``op`` overrides the projector (anything with ``forward``/``transpose``).
    """
    cfg = ReconConfig("tv") if cfg is None else cfg
    geom = b.geom if geom is None else geom
    op = _Operator(grid, geom) if op is None else op
    lam, beta, gs = cfg.tv_lambda, cfg.tv_beta, cfg.tv_global_sqrt
    data = b.values.ravel()
    x = np.zeros(grid.shape) if x0 is None else np.array(x0, dtype=float).reshape(grid.shape)
    r = op.forward(x.ravel()) - data
    tv = tv_penalty(x, beta, gs)
    J = float(r @ r) + lam * tv
    if not math.isfinite(J):
        raise ReconstructionError("non-finite TV objective at the starting point")
    g = 2.0 * op.transpose(r).reshape(x.shape) + lam * tv_penalty_gradient(x, beta, gs)
    trace, steps = [J], []
    rejected = 0
    alpha = None
    prev = None
    for _ in range(cfg.iterations):
        gg = float(np.sum(g * g))
        if gg == 0:
            break
        Ag = op.forward(g.ravel())
        rAg, AgAg = float(r @ Ag), float(Ag @ Ag)
        if alpha is None:
            # exact line minimizer of the data term, a safe first guess
            alpha = gg / (2 * AgAg) if AgAg > 0 else 1.0
        while True:
            xt = x - alpha * g
            Jt = float(r @ r) - 2 * alpha * rAg + alpha * alpha * AgAg + lam * tv_penalty(xt, beta, gs)
            if not math.isfinite(Jt):
                raise ReconstructionError("non-finite TV objective")
            if Jt <= J - 1e-4 * alpha * gg:
                break
            alpha *= 0.5
            rejected += 1
            if alpha < 1e-30:
                Jt = None
                break
        if Jt is None:
            break
        prev = (x, g)
        x = xt
        r = r - alpha * Ag
        J = Jt
        gnew = 2.0 * op.transpose(r).reshape(x.shape) + lam * tv_penalty_gradient(x, beta, gs)
        trace.append(J)
        steps.append(alpha)
        # Barzilai-Borwein length for the next trial step
        sdiff, ydiff = x - prev[0], gnew - prev[1]
        sy = float(np.sum(sdiff * ydiff))
        alpha = float(np.sum(sdiff * sdiff)) / sy if sy > 0 else 2 * alpha
        g = gnew
        if cfg.tol > 0 and abs(trace[-2] - J) <= cfg.tol * abs(trace[-2]):
            break
    return TVResult(ImageGrid.from_spec(grid, x), np.array(trace), np.array(steps), rejected)


def reconstruct(b: Sinogram, cfg: ReconConfig, grid: GridSpec = DEFAULT_GRID) -> ImageGrid:
    """Dispatch on ``cfg.method`` and return the reconstructed image."""
    if cfg.method == "fbp_lambda":
        return fbp_lambda(b, b.geom, cfg.derivative_order, grid)
    if cfg.method == "landweber":
        return landweber(b, b.geom, cfg, grid).image
    return tv_reconstruct(b, b.geom, cfg, grid).image
