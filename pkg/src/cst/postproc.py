"""Edge maps, boundary closing, support filling and density-value estimation."""

from __future__ import annotations

import math

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .forward import DensityModel
from .grid import GridSpec, ImageGrid, ScanGeometry, Sinogram
from .physics import PhysicsParams
from .raytransforms import VLineParams

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True, eq=False)
class EdgeMap:
    mask: np.ndarray            # bool, (ny, nx)
    spec: GridSpec

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != self.spec.shape:
            raise ValueError(f"edge mask shape {m.shape} does not match grid {self.spec.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    nx = property(lambda self: self.spec.nx)
    ny = property(lambda self: self.spec.ny)

    def to_image(self) -> ImageGrid:
        return ImageGrid.from_spec(self.spec, self.mask.astype(float))


@dataclass(frozen=True, eq=False)
class SupportMask:
    mask: np.ndarray            # bool, (ny, nx)
    spec: GridSpec
    component_count: int = 0
    touches_border: bool = False    # the largest component reaches the image border
    enclosed: bool = True           # the largest component holds pixels inside its edges

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != self.spec.shape:
            raise ValueError(f"support mask shape {m.shape} does not match grid {self.spec.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def failed(self) -> bool:
        """True if the support is empty, its main component reaches the border,
        or the fill leaked through the boundary so only edge pixels remain."""
        return self.touches_border or not self.enclosed or not self.mask.any()

    def to_image(self) -> ImageGrid:
        return ImageGrid.from_spec(self.spec, self.mask.astype(float))


@dataclass(frozen=True)
class EdgeConfig:
    low: float = 0.7            # hysteresis quantiles of gradient magnitude
    high: float = 0.9
    sigma: float = 1.0          # pre-smoothing, pixels
    nms_radius: int = 3         # suppression window along the gradient, pixels

    def __post_init__(self):
        if not 0.0 <= self.low < self.high <= 1.0:
            raise ValueError("edge thresholds must satisfy 0 <= low < high <= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.nms_radius < 1:
            raise ValueError("nms_radius must be >= 1")


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray, radius: int = 1) -> np.ndarray:
    """Keep pixels that are maximal along the gradient direction (4 sectors)
    among the neighbours up to ``radius`` steps away on either side."""
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.floor((ang + 22.5) / 45.0).astype(int) % 4
    R = int(radius)
    p = np.pad(mag, R)
    ny, nx = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    # unit steps (row, col) along the gradient for 0, 45, 90, 135 degrees
    for k, (dr, dc) in enumerate(((0, 1), (1, 1), (1, 0), (1, -1))):
        ok = sector == k
        for t in range(1, R + 1):
            fwd = p[R + t * dr:R + t * dr + ny, R + t * dc:R + t * dc + nx]
            bwd = p[R - t * dr:R - t * dr + ny, R - t * dc:R - t * dc + nx]
            ok &= (mag > fwd) & (mag >= bwd)
        keep |= ok
    return keep & (mag > 0)


def gradient_magnitude(img: ImageGrid, sigma: float = 1.0):
    v = ndimage.gaussian_filter(img.values, sigma, mode="nearest") if sigma > 0 else img.values
    gx = ndimage.sobel(v, axis=1, mode="nearest")
    gy = ndimage.sobel(v, axis=0, mode="nearest")
    return np.hypot(gx, gy), gx, gy


def detect_edges(img: ImageGrid, cfg: EdgeConfig | None = None) -> EdgeMap:
    """Canny-style edges: Gaussian smoothing, Sobel gradients, non-maximum
    suppression, and hysteresis with thresholds at quantiles of the
    gradient magnitude over all pixels."""
    cfg = EdgeConfig() if cfg is None else cfg
    mag, gx, gy = gradient_magnitude(img, cfg.sigma)
    thin = _non_max_suppression(mag, gx, gy, cfg.nms_radius)
    lo, hi = np.quantile(mag, [cfg.low, cfg.high])
    weak = thin & (mag > lo)
    strong = thin & (mag > hi)
    labels, n = ndimage.label(weak, structure=EIGHT_CONNECTED)
    if n == 0:
        return EdgeMap(np.zeros(img.shape, bool), img.spec)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return EdgeMap(keep[labels], img.spec)


def disk_structure(radius: float) -> np.ndarray:
    r = int(math.floor(radius + 1e-9))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= radius * radius + 1e-9


def _exterior(free: np.ndarray) -> np.ndarray:
    """Pixels of ``free`` 4-connected to the array border."""
    labels, _ = ndimage.label(free, structure=FOUR_CONNECTED)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    return np.isin(labels, border[border > 0])


def close_boundary(e: EdgeMap, radius: int = 2) -> EdgeMap:
    """Morphological closing with a disk of ``radius`` pixels, plus bridges over
    gaps of up to ``2*radius`` pixels.

    Closing alone cannot reconnect two ends of a one-pixel line, so the
    edges are also dilated, filled from the border and eroded back; the
    boundary of that region is added to the closed edges. The bridging disk
    has radius ``radius * sqrt(2)`` so that gaps of ``2*radius`` pixels are
    spanned along diagonals as well as along the axes.
    """
    if radius < 1:
        raise ValueError("closing radius must be >= 1")
    se = disk_structure(radius)
    bridge = disk_structure(radius * math.sqrt(2))
    pad = bridge.shape[0] // 2 + 1
    m = np.pad(e.mask, pad)
    closed = ndimage.binary_closing(m, structure=se)
    filled = ~_exterior(~ndimage.binary_dilation(m, structure=bridge))
    region = ndimage.binary_erosion(filled, structure=bridge)
    rim = region & ~ndimage.binary_erosion(region, structure=FOUR_CONNECTED)
    return EdgeMap((closed | rim)[pad:-pad, pad:-pad], e.spec)


def fill_support(e: EdgeMap) -> SupportMask:
    """Flood the non-edge pixels from the image border (4-connected); the
    support is everything the flood does not reach, edges included.

    Failure is judged on the largest support component: it must stay off
    the border and contain pixels the edges enclose. Small stray edge
    fragments elsewhere are counted in ``component_count`` but do not fail
    the fill.
    """
    support = ~_exterior(~e.mask)
    comp, ncomp = ndimage.label(support, structure=EIGHT_CONNECTED)
    touches, enclosed = False, False
    if ncomp:
        main = np.argmax(np.bincount(comp.ravel())[1:]) + 1
        rim = np.concatenate([comp[0], comp[-1], comp[:, 0], comp[:, -1]])
        touches = bool(np.any(rim == main))
        enclosed = bool(np.any((comp == main) & ~e.mask))
    return SupportMask(support, e.spec, int(ncomp), touches, enclosed)


def true_support(spec, grid: GridSpec) -> np.ndarray:
    """Exact support indicator of a phantom description at the cell centers of ``grid``."""
    X, Y = grid.mesh()
    return spec.evaluate(X, Y) > 0


def p_metric(a, b) -> float:
    """Fraction of pixels on which two binary masks agree."""
    a = getattr(a, "mask", a)
    b = getattr(b, "mask", b)
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError("masks must have the same shape")
    return float(np.mean(a == b))


@dataclass
class DensityEstimate:
    ne_hat: float
    ne_grid: np.ndarray
    residuals: np.ndarray
    refined: bool


def estimate_density(omega_hat: SupportMask | ImageGrid, b: Sinogram, geom: ScanGeometry | None,
                     phys: PhysicsParams, vp: VLineParams | None = None, u_m: float = 2.0,
                     n_grid: int = 201, refine: bool = True, w=None) -> DensityEstimate:
    """Least-squares density value for ``f = n_e * chi_Omega``.

    Scans ``r(n_e) = ||compton_forward(n_e chi) - b||^2`` on ``n_grid``
    uniform points of ``[0, u_m]``; with ``refine`` a golden-section search
    (tolerance 1e-3) runs on the two grid cells around an interior minimum.
    """
    if u_m <= 0:
        raise ValueError("u_m must be positive")
    if n_grid < 3:
        raise ValueError("n_grid must be >= 3")
    geom = b.geom if geom is None else geom
    chi = omega_hat.to_image() if isinstance(omega_hat, SupportMask) else omega_hat
    if not np.any(chi.values):
        raise ValueError("support mask is empty")
    model = DensityModel(chi, geom, phys, vp, w)
    data = b.values

    def residual(ne: float) -> float:
        d = model.sinogram_values(ne) - data
        return float(np.sum(d * d))

    grid = np.linspace(0.0, u_m, n_grid)
    res = np.array([residual(ne) for ne in grid])
    i = int(np.argmin(res))
    ne_hat, refined = float(grid[i]), False
    if refine and 0 < i < n_grid - 1:
        opt = optimize.minimize_scalar(residual, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                       method="golden", tol=1e-3)
        if grid[i - 1] <= opt.x <= grid[i + 1] and opt.fun <= res[i]:
            ne_hat, refined = float(opt.x), True
    return DensityEstimate(ne_hat, grid, res, refined)
