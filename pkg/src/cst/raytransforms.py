"""Linear integral transforms: weighted Radon projector and its adjoint,
divergent-beam and V-line transforms, and kernel smoothing.

All line integrals use composite-midpoint quadrature with step at most half
the pixel pitch, sampling the image through :func:`cst.grid.sample_bilinear`.
The Radon projector is assembled once per (grid, geometry) pair as a sparse
matrix holding exactly those quadrature weights, so the backprojector is its
exact transpose.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy import ndimage

from .grid import GridSpec, ImageGrid, ScanGeometry, Sinogram, sample_bilinear


def midpoint_nodes(length: float, h: float) -> tuple[np.ndarray, float]:
    """Midpoint nodes on ``[0, length]`` with step ``<= h``; returns ``(t, dt)``."""
    n = max(1, int(math.ceil(length / h - 1e-9)))
    dt = length / n
    return (np.arange(n) + 0.5) * dt, dt


def leg_nodes(nu: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes and weights on ``[0, nu]`` with fixed step ``h``.

    Full cells ``[k h, (k+1) h]`` are followed by one shorter cell if ``h``
    does not divide ``nu``; lengthening a leg therefore only appends nodes.
    """
    n = int(math.floor(nu / h + 1e-9))
    t = (np.arange(n) + 0.5) * h
    wt = np.full(n, h)
    rem = nu - n * h
    if rem > 1e-9 * h:
        t = np.append(t, n * h + rem / 2)
        wt = np.append(wt, rem)
    return t, wt


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing kernel with unit mass (times ``scale``).

    ``kind`` is ``"delta"``, ``"disk"`` (indicator of a disk of ``radius``) or
    ``"gaussian"`` (standard deviation ``sigma``, truncated at 4 sigma).
    ``scale`` multiplies the normalized kernel; ``scale = pi * radius**2``
    reproduces an unnormalized disk indicator.
    """

    kind: str = "delta"
    radius: float = 0.0
    sigma: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("delta", "disk", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "disk" and self.radius <= 0:
            raise ValueError("disk kernel needs radius > 0")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian kernel needs sigma > 0")
        if self.scale <= 0:
            raise ValueError("kernel scale must be positive")

    def support_radius(self) -> float:
        return {"delta": 0.0, "disk": self.radius, "gaussian": 4.0 * self.sigma}[self.kind]

    def weights(self, dx: float, dy: float) -> np.ndarray:
        """Discrete kernel on the pixel lattice, odd-sized and centered."""
        if self.kind == "delta":
            return np.full((1, 1), self.scale)
        r = self.support_radius()
        mx, my = int(math.floor(r / dx + 1e-9)), int(math.floor(r / dy + 1e-9))
        X, Y = np.meshgrid(np.arange(-mx, mx + 1) * dx, np.arange(-my, my + 1) * dy)
        d2 = X ** 2 + Y ** 2
        if self.kind == "disk":
            w = (d2 <= r * r * (1 + 1e-9)).astype(float)
        else:
            w = np.exp(-d2 / (2 * self.sigma ** 2)) * (d2 <= r * r * (1 + 1e-9))
        return self.scale * w / w.sum()


@dataclass(frozen=True)
class VLineParams:
    """Leg weights ``a`` (incoming, direction Phi) and ``b`` (outgoing, Phi'),
    half-opening angle ``psi``, leg length ``nu`` and smoothing kernel."""

    a: float = 1.0
    b: float = 1.0
    psi: float = math.pi / 4
    nu: float = 4.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("disk", radius=0.02))

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("leg length nu must be positive")
        # 2*psi = pi is the straight-line limit (both legs collinear)
        if not 0.0 < 2 * self.psi <= math.pi:
            raise ValueError("opening angle 2*psi must lie in (0, pi]")

    @classmethod
    def from_physics(cls, phys, nu: float = 4.0, kernel: KernelSpec | None = None) -> "VLineParams":
        kernel = KernelSpec("disk", radius=0.02) if kernel is None else kernel
        return cls(phys.a, phys.b, phys.psi, nu, kernel)

    def leg_angles(self, phi: float) -> tuple[float, float]:
        return phi + 2 * self.psi - math.pi / 2, phi - math.pi / 2


# ---------------------------------------------------------------------------
# Radon projector
# ---------------------------------------------------------------------------

def _ray_half_length(gspec: GridSpec) -> float:
    return max(math.hypot(x, y) for x in (gspec.xmin, gspec.xmax) for y in (gspec.ymin, gspec.ymax))


def _bilinear_taps(gspec: GridSpec, x: np.ndarray, y: np.ndarray):
    """Column indices and weights (4 per point) reproducing ``sample_bilinear``."""
    u = np.clip((x - gspec.xmin) / gspec.dx - 0.5, 0.0, gspec.nx - 1)
    v = np.clip((y - gspec.ymin) / gspec.dy - 0.5, 0.0, gspec.ny - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), gspec.nx - 2)
    j0 = np.minimum(np.floor(v).astype(np.int64), gspec.ny - 2)
    fx = u - i0
    fy = v - j0
    base = j0 * gspec.nx + i0
    cols = np.stack([base, base + 1, base + gspec.nx, base + gspec.nx + 1])
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return cols, wts


# Bound on 4 taps per quadrature node inside the domain; taps of neighbouring
# nodes share pixels, so the stored count is about a third of this. Above the
# limit projections are computed on the fly.
MATRIX_NNZ_LIMIT = 1.6e8


class RayProjector:
    """Line-integral quadrature for one (grid, geometry) pair.

    Row ``j*ns + i`` integrates along ``x = s_i Theta_j + t Theta_j^perp`` for
    ``t`` in ``[-T, T]`` (``T`` = distance to the farthest domain corner) with
    midpoint step at most ``min(dx, dy)/2``. Small problems precompute the
    sparse matrix of these weights; large ones evaluate the identical taps
    angle by angle so memory stays bounded.
    """

    def __init__(self, gspec: GridSpec, geom: ScanGeometry, max_nnz: float = MATRIX_NNZ_LIMIT):
        self.gspec, self.geom = gspec, geom
        T = _ray_half_length(gspec)
        t, self.dt = midpoint_nodes(2 * T, min(gspec.dx, gspec.dy) / 2)
        self.t = t - T
        self.npix = gspec.nx * gspec.ny
        est = 4 * geom.ntheta * geom.ns * self.t.size * _inside_fraction(gspec, geom)
        self.matrix = self._assemble() if est <= max_nnz else None

    def _taps(self, j: int):
        th = self.geom.theta[j]
        c, sn = math.cos(th), math.sin(th)
        s, t, g = self.geom.s, self.t, self.gspec
        X = s[:, None] * c - t[None, :] * sn
        Y = s[:, None] * sn + t[None, :] * c
        inside = (X >= g.xmin) & (X <= g.xmax) & (Y >= g.ymin) & (Y <= g.ymax)
        r, k = np.nonzero(inside)
        cols, wts = _bilinear_taps(g, X[r, k], Y[r, k])
        return np.broadcast_to(r, cols.shape).ravel(), cols.ravel(), self.dt * wts.ravel()

    def _assemble(self) -> sp.csr_matrix:
        ns = self.geom.ns
        data, indices, indptr = [], [], [np.zeros(1, dtype=np.int64)]
        offset = 0
        for j in range(self.geom.ntheta):
            rows, cols, vals = self._taps(j)
            blk = sp.coo_matrix((vals, (rows, cols)), shape=(ns, self.npix)).tocsr()
            blk.sum_duplicates()
            data.append(blk.data)
            indices.append(blk.indices)
            indptr.append(blk.indptr[1:].astype(np.int64) + offset)
            offset += blk.nnz
        idx = np.int32 if offset < 2 ** 31 else np.int64
        return sp.csr_matrix((np.concatenate(data), np.concatenate(indices).astype(idx),
                              np.concatenate(indptr).astype(idx)),
                             shape=(self.geom.ntheta * ns, self.npix))

    def block(self, j: int) -> sp.csr_matrix:
        """Rows of angle ``j`` as a sparse ``(ns, npix)`` matrix."""
        ns = self.geom.ns
        A = self.matrix
        if A is None:
            rows, cols, vals = self._taps(j)
            return sp.csr_matrix((vals, (rows, cols)), shape=(ns, self.npix))
        p0, p1 = A.indptr[j * ns], A.indptr[(j + 1) * ns]
        ptr = A.indptr[j * ns:(j + 1) * ns + 1] - p0
        return sp.csr_matrix((A.data[p0:p1], A.indices[p0:p1], ptr), shape=(ns, self.npix), copy=False)

    def forward_angle(self, j: int, h: np.ndarray) -> np.ndarray:
        """Unweighted projections of the flattened image ``h`` at angle ``j``."""
        if self.matrix is not None:
            return self.block(j) @ h
        rows, cols, vals = self._taps(j)
        return np.bincount(rows, vals * h[cols], minlength=self.geom.ns)

    def adjoint_angle(self, j: int, g: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`forward_angle` (no measure scaling)."""
        if self.matrix is not None:
            return self.block(j).T @ g
        rows, cols, vals = self._taps(j)
        return np.bincount(cols, vals * g[rows], minlength=self.npix)

    def forward(self, h: np.ndarray) -> np.ndarray:
        """All projections of the flattened image ``h``, shape ``(ntheta*ns,)``."""
        if self.matrix is not None:
            return self.matrix @ h
        return np.concatenate([self.forward_angle(j, h) for j in range(self.geom.ntheta)])

    def transpose(self, g: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.T @ g
        g = g.reshape(self.geom.shape)
        acc = np.zeros(self.npix)
        for j in range(self.geom.ntheta):
            acc += self.adjoint_angle(j, g[j])
        return acc


def _inside_fraction(gspec: GridSpec, geom: ScanGeometry) -> float:
    T = _ray_half_length(gspec)
    area = (gspec.xmax - gspec.xmin) * (gspec.ymax - gspec.ymin)
    return min(1.0, area / (2 * T * (geom.smax - geom.smin)))


@functools.lru_cache(maxsize=4)
def ray_projector(gspec: GridSpec, geom: ScanGeometry) -> RayProjector:
    """Cached :class:`RayProjector` for ``(gspec, geom)``."""
    return RayProjector(gspec, geom)


def system_matrix(gspec: GridSpec, geom: ScanGeometry) -> sp.csr_matrix:
    """Sparse ``(ntheta*ns, ny*nx)`` matrix of the unweighted quadrature."""
    P = ray_projector(gspec, geom)
    return P.matrix if P.matrix is not None else RayProjector(gspec, geom, max_nnz=math.inf).matrix


def adjoint_scale(gspec: GridSpec, geom: ScanGeometry) -> float:
    """Factor making ``scale * A.T`` the adjoint for inner products weighted by
    ``ds*dtheta`` (sinograms) and ``dx*dy`` (images)."""
    return geom.ds * geom.dtheta / (gspec.dx * gspec.dy)


def _weight_values(w, gspec: GridSpec, theta: float | None = None):
    if w is None:
        return None
    if isinstance(w, ImageGrid):
        w = w.values
    if callable(w):
        X, Y = gspec.mesh()
        return np.broadcast_to(np.asarray(w(X, Y, theta), dtype=float), gspec.shape)
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return w
    if w.shape != gspec.shape:
        raise ValueError(f"weight field shape {w.shape} does not match grid {gspec.shape}")
    return w


def radon_forward(f: ImageGrid, geom: ScanGeometry, w=None) -> Sinogram:
    """Weighted line integrals ``R_w f(s, theta)``.

    ``w`` is ``None`` (unit weight), a scalar, an array/ImageGrid on the image
    grid, or a callable ``w(X, Y, theta)`` for angle-dependent weights.
    """
    P = ray_projector(f.spec, geom)
    if callable(w) and not isinstance(w, ImageGrid):
        out = np.empty(geom.shape)
        for j, th in enumerate(geom.theta):
            out[j] = P.forward_angle(j, (_weight_values(w, f.spec, th) * f.values).ravel())
        return Sinogram(out, geom)
    wv = _weight_values(w, f.spec)
    h = f.values if wv is None else wv * f.values
    return Sinogram(P.forward(h.ravel()).reshape(geom.shape), geom)


def radon_adjoint(g: Sinogram, grid: GridSpec | ImageGrid, w=None) -> ImageGrid:
    """Backprojection: the exact adjoint of :func:`radon_forward` for the
    inner products ``ds*dtheta*sum(.)`` on sinograms and ``dx*dy*sum(.)`` on images.

    Each angle contributes the transposed bilinear quadrature of its row, so
    backprojecting a constant ``c`` gives roughly ``c * (thetamax - thetamin)``.
    """
    gspec = grid.spec if isinstance(grid, ImageGrid) else grid
    geom = g.geom
    P = ray_projector(gspec, geom)
    scale = adjoint_scale(gspec, geom)
    if callable(w) and not isinstance(w, ImageGrid):
        acc = np.zeros(P.npix)
        for j, th in enumerate(geom.theta):
            acc += P.adjoint_angle(j, g.values[j]) * _weight_values(w, gspec, th).ravel()
        return ImageGrid.from_spec(gspec, scale * acc)
    out = scale * P.transpose(g.values.ravel()).reshape(gspec.shape)
    wv = _weight_values(w, gspec)
    return ImageGrid.from_spec(gspec, out if wv is None else wv * out)


# ---------------------------------------------------------------------------
# Divergent-beam and V-line transforms
# ---------------------------------------------------------------------------

def divergent_beam(f: ImageGrid, x, phi: float, nu: float) -> np.ndarray:
    """``int_0^nu f(x + t Phi) dt`` with ``Phi = (cos phi, sin phi)``.

    ``x`` is a point ``(x1, x2)`` or an array of points with last axis 2.
    """
    if nu <= 0:
        raise ValueError("leg length nu must be positive")
    x = np.asarray(x, dtype=float)
    t, wt = leg_nodes(nu, min(f.dx, f.dy) / 2)
    c, s = math.cos(phi), math.sin(phi)
    px = x[..., 0, None] + t * c
    py = x[..., 1, None] + t * s
    return (sample_bilinear(f, px, py) * wt).sum(axis=-1)


def vline(f: ImageGrid, x, phi: float, p: VLineParams) -> np.ndarray:
    """Truncated V-line transform ``a L f(x, Phi) + b L f(x, Phi')`` at point(s) ``x``."""
    ang_in, ang_out = p.leg_angles(phi)
    return p.a * divergent_beam(f, x, ang_in, p.nu) + p.b * divergent_beam(f, x, ang_out, p.nu)


def _border_is_zero(v: np.ndarray) -> bool:
    return not (v[0].any() or v[-1].any() or v[:, 0].any() or v[:, -1].any())


class VLineFieldEngine:
    """Evaluates the V-line transform at every cell center for many angles.

    For a fixed direction the quadrature nodes ``x + t_k Phi`` of every cell
    share the same sub-pixel offsets, so the whole field is a correlation of
    the image with a sparse stencil; this is evaluated by FFT. The result
    equals pointwise :func:`vline` whenever the outermost ring of cells is
    zero (then edge clamping and zero extension coincide); otherwise the
    engine falls back to direct pointwise quadrature.
    """

    def __init__(self, f: ImageGrid, p: VLineParams, method: str = "auto"):
        if method not in ("auto", "fft", "direct"):
            raise ValueError(f"unknown method {method!r}")
        self.f = f
        self.p = p
        ny, nx = f.shape
        if method == "auto":
            method = "fft" if _border_is_zero(f.values) else "direct"
        if method == "fft" and not _border_is_zero(f.values):
            raise ValueError("fft evaluation requires a zero outer ring of cells")
        self.method = method
        self.t, self.wt = leg_nodes(p.nu, min(f.dx, f.dy) / 2)
        if method == "fft":
            self._pshape = (scipy.fft.next_fast_len(3 * ny - 2, real=True),
                            scipy.fft.next_fast_len(3 * nx - 2, real=True))
            self._fhat = scipy.fft.rfft2(f.values, s=self._pshape)

    def _stencil(self, phi: float) -> np.ndarray:
        ny, nx = self.f.shape
        K = np.zeros((2 * ny - 1, 2 * nx - 1))
        for weight, ang in zip((self.p.a, self.p.b), self.p.leg_angles(phi)):
            if weight == 0:
                continue
            du = self.t * math.cos(ang) / self.f.dx
            dv = self.t * math.sin(ang) / self.f.dy
            n0 = np.floor(du).astype(np.int64)
            m0 = np.floor(dv).astype(np.int64)
            fx, fy = du - n0, dv - m0
            for dm, dn, wt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                               (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
                m, n = m0 + dm, n0 + dn
                ok = (np.abs(m) <= ny - 1) & (np.abs(n) <= nx - 1)
                # flipped stencil: correlation becomes convolution
                np.add.at(K, (ny - 1 - m[ok], nx - 1 - n[ok]), weight * self.wt[ok] * wt[ok])
        return K

    def field(self, phi: float) -> np.ndarray:
        """Unsmoothed V-line values at all cell centers, shape ``(ny, nx)``."""
        ny, nx = self.f.shape
        if self.p.a == 0 and self.p.b == 0:
            return np.zeros((ny, nx))
        if self.method == "direct":
            X, Y = self.f.mesh()
            pts = np.stack([X, Y], axis=-1)
            out = np.empty((ny, nx))
            rows = max(1, int(2 ** 22 // (nx * self.t.size)))
            for r0 in range(0, ny, rows):
                out[r0:r0 + rows] = vline(self.f, pts[r0:r0 + rows], phi, self.p)
            return out
        khat = scipy.fft.rfft2(self._stencil(phi), s=self._pshape)
        full = scipy.fft.irfft2(self._fhat * khat, s=self._pshape)
        return full[ny - 1:2 * ny - 1, nx - 1:2 * nx - 1]

    def smoothed(self, phi: float) -> np.ndarray:
        return _convolve(self.field(phi), self.p.kernel, self.f.dx, self.f.dy)


def vline_field(f: ImageGrid, phi: float, p: VLineParams, method: str = "auto") -> ImageGrid:
    """Pointwise (unsmoothed) V-line transform on every cell center."""
    return f.with_values(VLineFieldEngine(f, p, method).field(phi))


def _convolve(values: np.ndarray, k: KernelSpec, dx: float, dy: float) -> np.ndarray:
    W = k.weights(dx, dy)
    if W.size == 1:
        return values * W[0, 0]
    # half-sample symmetric extension keeps constants and total mass for symmetric kernels
    return ndimage.convolve(values, W, mode="reflect")


def convolve_kernel(field: ImageGrid, k: KernelSpec) -> ImageGrid:
    """Discrete convolution of ``field`` with the normalized kernel ``k``."""
    return field.with_values(_convolve(field.values, k, field.dx, field.dy))


def smoothed_vline_field(f: ImageGrid, phi: float, p: VLineParams, method: str = "auto") -> ImageGrid:
    """Kernel-smoothed V-line field: the exponent of the Compton forward model at angle ``phi``."""
    return f.with_values(VLineFieldEngine(f, p, method).smoothed(phi))
