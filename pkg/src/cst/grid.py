"""Physical-coordinate grids, scan geometry, bilinear sampling and rasterization.

Layout conventions used throughout the package:

* ``ImageGrid.values`` has shape ``(ny, nx)``; row ``j`` holds the samples at
  ``y = ymin + (j + 1/2) * dy`` and column ``i`` those at ``x = xmin + (i + 1/2) * dx``
  (row-major, x fastest).
* ``Sinogram.values`` has shape ``(ntheta, ns)`` (row-major, s fastest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BOUNDS = (-1.0, 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class GridSpec:
    """Shape and bounds of an image grid, without values (hashable)."""

    nx: int
    ny: int
    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("grid bounds must satisfy xmax > xmin and ymax > ymin")

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.nx

    @property
    def dy(self) -> float:
        return (self.ymax - self.ymin) / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.xmax, self.ymin, self.ymax)

    @property
    def x(self) -> np.ndarray:
        return self.xmin + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.ymin + (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def zeros(self) -> "ImageGrid":
        return ImageGrid(np.zeros(self.shape), *self.bounds)


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """A 2-D scalar field sampled at cell centers of a rectangle."""

    values: np.ndarray
    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0
    spec: GridSpec = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"image values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        spec = GridSpec(v.shape[1], v.shape[0], float(self.xmin), float(self.xmax),
                        float(self.ymin), float(self.ymax))
        object.__setattr__(self, "spec", spec)

    @classmethod
    def from_spec(cls, spec: GridSpec, values) -> "ImageGrid":
        return cls(np.asarray(values).reshape(spec.shape), *spec.bounds)

    def with_values(self, values) -> "ImageGrid":
        return ImageGrid.from_spec(self.spec, values)

    nx = property(lambda self: self.spec.nx)
    ny = property(lambda self: self.spec.ny)
    dx = property(lambda self: self.spec.dx)
    dy = property(lambda self: self.spec.dy)
    shape = property(lambda self: self.spec.shape)
    bounds = property(lambda self: self.spec.bounds)

    def mesh(self):
        return self.spec.mesh()


@dataclass(frozen=True)
class ScanGeometry:
    """Sampling of the line parameters ``(s, theta)``.

    Offsets are sampled with both endpoints included
    (``ds = (smax - smin) / (ns - 1)``); angles are periodic samples
    ``thetamin + j * dtheta`` with ``dtheta = (thetamax - thetamin) / ntheta``,
    so ``theta = 2*pi`` is not duplicated on a full turn.
    """

    ns: int = 282
    ntheta: int = 360
    smin: float = -math.sqrt(2.0)
    smax: float = math.sqrt(2.0)
    thetamin: float = 0.0
    thetamax: float = 2.0 * math.pi

    def __post_init__(self):
        if self.ns < 2 or self.ntheta < 2:
            raise ValueError("scan geometry needs ns, ntheta >= 2")
        if not (self.smax > self.smin and self.thetamax > self.thetamin):
            raise ValueError("scan geometry needs smax > smin and thetamax > thetamin")

    @property
    def ds(self) -> float:
        return (self.smax - self.smin) / (self.ns - 1)

    @property
    def dtheta(self) -> float:
        return (self.thetamax - self.thetamin) / self.ntheta

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.smin, self.smax, self.ns)

    @property
    def theta(self) -> np.ndarray:
        return self.thetamin + np.arange(self.ntheta) * self.dtheta

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ntheta, self.ns)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Samples over ``(theta, s)``; ``values`` has shape ``(ntheta, ns)``."""

    values: np.ndarray
    geom: ScanGeometry

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != self.geom.shape:
            raise ValueError(f"sinogram shape {v.shape} does not match geometry {self.geom.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "Sinogram":
        return Sinogram(np.asarray(values).reshape(self.geom.shape), self.geom)


def sample_bilinear(grid: ImageGrid, x, y) -> np.ndarray:
    """Bilinear interpolation of ``grid`` at points ``(x, y)``.

    Points outside the closed rectangle ``[xmin, xmax] x [ymin, ymax]`` give 0.
    Inside the rectangle but beyond the outermost cell centers the value is
    clamped to the edge cells, so constants are reproduced everywhere in the
    domain. ``x`` and ``y`` broadcast against each other.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    spec = grid.spec
    inside = (x >= spec.xmin) & (x <= spec.xmax) & (y >= spec.ymin) & (y <= spec.ymax)
    u = np.clip((x - spec.xmin) / spec.dx - 0.5, 0.0, spec.nx - 1)
    v = np.clip((y - spec.ymin) / spec.dy - 0.5, 0.0, spec.ny - 1)
    i0 = np.minimum(np.floor(u).astype(np.intp), spec.nx - 2)
    j0 = np.minimum(np.floor(v).astype(np.intp), spec.ny - 2)
    fx = u - i0
    fy = v - j0
    f = grid.values
    out = ((1 - fy) * ((1 - fx) * f[j0, i0] + fx * f[j0, i0 + 1])
           + fy * ((1 - fx) * f[j0 + 1, i0] + fx * f[j0 + 1, i0 + 1]))
    return np.where(inside, out, 0.0)


def rasterize(spec, nx: int, ny: int | None = None, bounds=DEFAULT_BOUNDS,
              supersample: int = 4) -> ImageGrid:
    """Sample a phantom description onto a grid.

    ``spec`` is anything with an ``evaluate(X, Y)`` method (see
    :class:`cst.phantom.PhantomSpec`). With ``supersample=k`` each cell value is
    the mean over a ``k x k`` lattice of sub-cell centers; ``supersample=1``
    samples the exact indicator at cell centers.
    """
    ny = nx if ny is None else ny
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    gspec = GridSpec(nx, ny, *bounds)
    k = int(supersample)
    offs = (np.arange(k) + 0.5) / k - 0.5
    X, Y = gspec.mesh()
    acc = np.zeros(gspec.shape)
    for oy in offs:
        for ox in offs:
            acc += spec.evaluate(X + ox * gspec.dx, Y + oy * gspec.dy)
    return ImageGrid(acc / (k * k), *bounds)
