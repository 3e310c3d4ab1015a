"""Spectral and microlocal diagnostics: Sobolev-order estimates, the angular
Fourier decomposition of the V-line transform, local singularity orders of
sinogram columns and edge-strength ratios along tangency curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from scipy import signal

from .grid import ImageGrid, ScanGeometry, Sinogram
from .raytransforms import KernelSpec, VLineFieldEngine, VLineParams

# ---------------------------------------------------------------------------
# Sobolev partial norms
# ---------------------------------------------------------------------------

FIT_BAND = (0.125, 0.5)     # fraction of the Nyquist frequency used for order fits
SHELLS_PER_OCTAVE = 8


@dataclass
class SpectralReport:
    cutoffs: np.ndarray             # dyadic radii in angular frequency, increasing
    partial_norms: np.ndarray       # weighted energy inside each cutoff
    fitted_order: float             # Sobolev-order estimate (inf for a zero image)
    alpha: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def continuous_spectrum(img: ImageGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Approximate ``F f(xi) = int exp(-i x.xi) f(x) dx`` on the DFT lattice.

    Returns ``(F, XI1, XI2)`` with angular frequencies in ``fft`` order; the
    phase accounts for the cell-center sample positions.
    """
    ny, nx = img.shape
    xi1 = 2 * np.pi * scipy.fft.fftfreq(nx, img.dx)
    xi2 = 2 * np.pi * scipy.fft.fftfreq(ny, img.dy)
    XI1, XI2 = np.meshgrid(xi1, xi2)
    x0 = img.spec.xmin + img.dx / 2
    y0 = img.spec.ymin + img.dy / 2
    F = scipy.fft.fft2(img.values) * img.dx * img.dy * np.exp(-1j * (XI1 * x0 + XI2 * y0))
    return F, XI1, XI2


def _spectral_energy(img: ImageGrid):
    F, XI1, XI2 = continuous_spectrum(img)
    ny, nx = img.shape
    dxi = (2 * np.pi / (nx * img.dx)) * (2 * np.pi / (ny * img.dy)) / (4 * np.pi ** 2)
    return np.abs(F) ** 2 * dxi, np.hypot(XI1, XI2)


def _nyquist(img: ImageGrid) -> float:
    return math.pi / max(img.dx, img.dy)


def _shell_slope(E: np.ndarray, r: np.ndarray, alpha: float, edges: np.ndarray) -> tuple[float, float]:
    """Log-log slope of weighted shell energies versus shell radius, and fit RMS."""
    w = E * (1.0 + r * r) ** alpha
    # bincount, not histogram: histogram differences cumulative sums and
    # loses small shells next to the large low-frequency energy
    idx = np.digitize(r.ravel(), edges) - 1
    inside = (idx >= 0) & (idx < edges.size - 1)
    sums = np.bincount(idx[inside], weights=w.ravel()[inside], minlength=edges.size - 1)
    centers = np.sqrt(edges[:-1] * edges[1:])
    ok = sums > 0
    if ok.sum() < 3:
        return float("nan"), float("nan")
    coef, res, *_ = np.polyfit(np.log(centers[ok]), np.log(sums[ok]), 1, full=True)
    rms = math.sqrt(float(res[0]) / ok.sum()) if len(res) else 0.0
    return float(coef[0]), rms


def fitted_sobolev_order(img: ImageGrid, band=FIT_BAND) -> tuple[float, float]:
    """Order ``alpha*`` at which weighted shell energies stop growing or decaying.

    A spectrum ``|F f|^2 ~ |xi|^(-2s-2)`` gives weighted shell energies
    ``~ |xi|^(2 alpha - 2 s)``, so the zero of the log-log slope in
    ``alpha`` estimates the Sobolev order ``s``. Returns ``(order, fit rms)``;
    the order is ``inf`` for a zero image.
    """
    E, r = _spectral_energy(img)
    if not np.any(E > 0):
        return math.inf, 0.0
    nyq = _nyquist(img)
    lo, hi = band[0] * nyq, band[1] * nyq
    n = max(3, int(round(SHELLS_PER_OCTAVE * math.log2(hi / lo))))
    edges = np.geomspace(lo, hi, n + 1)
    a, b = -4.0, 8.0
    sa = _shell_slope(E, r, a, edges)[0]
    sb = _shell_slope(E, r, b, edges)[0]
    if not (sa < 0 < sb):
        return (math.inf if sb <= 0 else -math.inf), float("nan")
    for _ in range(60):
        m = 0.5 * (a + b)
        if _shell_slope(E, r, m, edges)[0] < 0:
            a = m
        else:
            b = m
    order = 0.5 * (a + b)
    return order, _shell_slope(E, r, order, edges)[1]


def sobolev_partial_norms(img: ImageGrid, alpha: float = 0.0) -> SpectralReport:
    """Weighted Fourier energies ``sum (1+|xi|^2)^alpha |F f|^2`` inside dyadic cutoffs.

    Cutoffs halve from the Nyquist frequency down to a few lattice steps; the
    last one covers the whole lattice, so at ``alpha = 0`` it equals the
    discrete Parseval energy ``dx dy sum f^2``.
    """
    if not np.all(np.isfinite(img.values)):
        raise ValueError("image values must be finite")
    E, r = _spectral_energy(img)
    w = E * (1.0 + r * r) ** alpha
    nyq = _nyquist(img)
    dxi = 2 * np.pi / (max(img.nx * img.dx, img.ny * img.dy))
    m = max(1, int(math.floor(math.log2(nyq / (2 * dxi)))))
    cutoffs = nyq * 2.0 ** -np.arange(m, -1, -1)
    cutoffs = np.append(cutoffs, r.max() * (1 + 1e-12))
    partial = np.array([w[r <= c].sum() for c in cutoffs])
    order, rms = fitted_sobolev_order(img)
    return SpectralReport(cutoffs, partial, order, alpha,
                          {"fit_rms": rms, "band": FIT_BAND, "nyquist": nyq,
                           "tail_fraction": float(w[r > 0.5 * nyq].sum() / w.sum()) if w.sum() > 0 else 0.0})


# ---------------------------------------------------------------------------
# V-line smoothing
# ---------------------------------------------------------------------------

def radial_window(img: ImageGrid, r0: float = 0.72, r1: float = 0.96) -> np.ndarray:
    """C-infinity radial taper: 1 for ``|x| <= r0``, 0 for ``|x| >= r1``."""
    X, Y = img.mesh()
    t = np.clip((np.hypot(X, Y) - r0) / (r1 - r0), 0.0, 1.0)

    def bump(u):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    return bump(1 - t) / (bump(1 - t) + bump(t))


@dataclass
class SmoothingReport:
    order_f: float
    order_Vf: float

    @property
    def gain(self) -> float:
        return self.order_Vf - self.order_f


def vline_smoothing_report(f: ImageGrid, phi: float, p: VLineParams) -> SmoothingReport:
    """Fitted Sobolev orders of ``f`` and of its pointwise V-line field at angle ``phi``.

    Both fields are multiplied by the same smooth radial taper so that the
    shadow of the legs, which reaches the domain edge, does not create
    artificial jumps under the periodic FFT. The kernel in ``p`` is ignored.
    """
    p = VLineParams(p.a, p.b, p.psi, p.nu, KernelSpec())
    win = radial_window(f)
    V = VLineFieldEngine(f, p).field(phi)
    return SmoothingReport(fitted_sobolev_order(f.with_values(f.values * win))[0],
                           fitted_sobolev_order(f.with_values(V * win))[0])


# ---------------------------------------------------------------------------
# Angular Fourier decomposition of the V-line transform
# ---------------------------------------------------------------------------

@dataclass
class VLineFourierReport:
    k: np.ndarray                   # harmonic indices 0..k_max
    measured: np.ndarray            # (k, ny, nx) spatial transform of the k-th harmonic
    predicted: np.ndarray           # (k, ny, nx) closed form
    fields: np.ndarray              # (k, ny, nx) k-th harmonic in space
    xi_norm: np.ndarray             # (ny, nx) |xi|
    nyquist: float

    def band(self, lo: float = FIT_BAND[0], hi: float = FIT_BAND[1]) -> np.ndarray:
        return (self.xi_norm >= lo * self.nyquist) & (self.xi_norm <= hi * self.nyquist)

    def relative_error(self, k: int, lo: float = FIT_BAND[0], hi: float = FIT_BAND[1]) -> float:
        """``||measured - predicted|| / ||predicted||`` over the frequency band."""
        m = self.band(lo, hi)
        P = self.predicted[k][m]
        return float(np.linalg.norm(self.measured[k][m] - P) / np.linalg.norm(P))

    def median_ratio(self, k: int, lo: float = FIT_BAND[0], hi: float = FIT_BAND[1]) -> float:
        """Median of ``|measured| / |predicted|`` over the band, ignoring near-zeros of the prediction."""
        m = self.band(lo, hi)
        P = np.abs(self.predicted[k][m])
        if not np.any(P > 0):
            return float("nan")
        keep = P > 1e-6 * P.max()
        return float(np.median(np.abs(self.measured[k][m][keep]) / P[keep]))

    def norm(self, k: int) -> float:
        return float(np.linalg.norm(self.fields[k]))


def bilinear_transfer(img: ImageGrid, XI1: np.ndarray, XI2: np.ndarray) -> np.ndarray:
    """Fourier multiplier of bilinear interpolation from cell-center samples."""
    return (np.sinc(XI1 * img.dx / (2 * np.pi)) * np.sinc(XI2 * img.dy / (2 * np.pi))) ** 2


def predicted_vline_harmonic(Ff: np.ndarray, XI1: np.ndarray, XI2: np.ndarray, k: int,
                             a: float, b: float, psi: float) -> np.ndarray:
    """Closed form of the ``k``-th angular harmonic of the untruncated V-line transform.

    With ``V_k(x) = int_{-pi}^{pi} V f(x, phi) exp(-i k phi) d phi`` and
    ``F g(xi) = int exp(-i x.xi) g(x) dx``:
    ``F V_k(xi) = 2 pi (a exp(2 i k psi) + b) exp(-i k phi_xi) F f(xi) / |xi|``
    for ``k >= 0`` (an extra ``(-1)^k`` for ``k < 0``); ``xi = 0`` is set to 0.
    """
    r = np.hypot(XI1, XI2)
    phase = np.exp(-1j * k * np.arctan2(XI2, XI1))
    factor = 2 * np.pi * (a * np.exp(2j * k * psi) + b) * (1.0 if k >= 0 else (-1.0) ** k)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, factor * phase * Ff / np.where(r > 0, r, 1.0), 0.0)
    return out


def vline_harmonic_fields(f: ImageGrid, p: VLineParams, k_max: int, nphi: int = 256) -> np.ndarray:
    """``V_k(x)`` for ``k = 0..k_max`` by the trapezoid rule over ``nphi`` angles."""
    if k_max >= nphi // 2:
        raise ValueError("k_max must be smaller than nphi/2")
    p = VLineParams(p.a, p.b, p.psi, p.nu, KernelSpec())
    engine = VLineFieldEngine(f, p)
    ny, nx = f.shape
    acc = np.zeros((k_max + 1, ny, nx), dtype=complex)
    phis = 2 * np.pi * np.arange(nphi) / nphi
    ks = np.arange(k_max + 1)
    for phi in phis:
        V = engine.field(phi)
        acc += np.exp(-1j * ks * phi)[:, None, None] * V[None]
    return acc * (2 * np.pi / nphi)


def vline_fourier_coefficients(f: ImageGrid, p: VLineParams, k_max: int, nphi: int = 256,
                               taper: tuple[float, float] | None = None) -> VLineFourierReport:
    """Measured and predicted spatial spectra of the angular harmonics of ``V f``.

    The prediction applies the closed form to the spectrum of the bilinear
    interpolant of ``f`` (the function the quadrature actually integrates).
    Legs should be long enough to leave the support (``p.nu`` of 8 is ample).

    For ``k >= 1`` the ``1/|x|`` far field differs between opposite edges of
    the domain, which the periodic FFT turns into a jump and a slowly
    decaying error floor. ``taper=(r0, r1)`` multiplies each harmonic by
    :func:`radial_window` before measuring its spectrum; the taper itself
    costs a few percent of agreement at every ``k``.
    """
    fields = vline_harmonic_fields(f, p, k_max, nphi)
    Ff, XI1, XI2 = continuous_spectrum(f)
    Ff = Ff * bilinear_transfer(f, XI1, XI2)
    win = 1.0 if taper is None else radial_window(f, *taper)
    measured = np.empty_like(fields)
    predicted = np.empty_like(fields)
    for k in range(k_max + 1):
        measured[k] = _complex_spectrum(f, fields[k] * win)
        predicted[k] = predicted_vline_harmonic(Ff, XI1, XI2, k, p.a, p.b, p.psi)
    return VLineFourierReport(np.arange(k_max + 1), measured, predicted, fields,
                              np.hypot(XI1, XI2), _nyquist(f))


def _complex_spectrum(img: ImageGrid, values: np.ndarray) -> np.ndarray:
    ny, nx = img.shape
    xi1 = 2 * np.pi * scipy.fft.fftfreq(nx, img.dx)
    xi2 = 2 * np.pi * scipy.fft.fftfreq(ny, img.dy)
    XI1, XI2 = np.meshgrid(xi1, xi2)
    x0 = img.spec.xmin + img.dx / 2
    y0 = img.spec.ymin + img.dy / 2
    return scipy.fft.fft2(values) * img.dx * img.dy * np.exp(-1j * (XI1 * x0 + XI2 * y0))


def inverse_distance_kernel(dx: float, dy: float, mx: int, my: int) -> np.ndarray:
    """Weights of ``y -> 1/|y|`` on a ``(2my+1, 2mx+1)`` lattice times the cell area;
    the singular center cell holds the exact cell integral of ``1/|y|``."""
    X, Y = np.meshgrid(np.arange(-mx, mx + 1) * dx, np.arange(-my, my + 1) * dy)
    R = np.hypot(X, Y)
    K = np.where(R > 0, dx * dy / np.where(R > 0, R, 1.0), 0.0)
    a, b = dx / 2, dy / 2
    K[my, mx] = 4 * (a * math.asinh(b / a) + b * math.asinh(a / b))
    return K


def inverse_distance_convolution(f: ImageGrid) -> np.ndarray:
    """``(f * 1/|y|)`` at every cell center by direct discrete convolution."""
    ny, nx = f.shape
    K = inverse_distance_kernel(f.dx, f.dy, nx - 1, ny - 1)
    return signal.fftconvolve(f.values, K, mode="same")


# ---------------------------------------------------------------------------
# Local singularity orders of sinogram columns
# ---------------------------------------------------------------------------

FLAG_ORDER = 1.0            # H^1 dividing line
DEAD_BAND = 0.15
RESIDUAL_MAX = 0.1          # rms log-residual of an acceptable power-law fit
AMPLITUDE_FLOOR = 1e-4      # band amplitude relative to window * peak-to-peak range


@dataclass
class SingularityOrderMap:
    orders: np.ndarray          # (ntheta, ns) local order estimate; inf where no content is detectable
    confidence: np.ndarray      # (ntheta, ns) in [0, 1]; 0 where invalid
    residual: np.ndarray        # (ntheta, ns) rms log-residual of the decay fit
    valid: np.ndarray           # (ntheta, ns) bool
    flags: np.ndarray           # (ntheta, ns) bool, order below the H^1 line
    geom: ScanGeometry
    window: int

    def flagged_offsets(self, j: int) -> np.ndarray:
        return self.geom.s[self.flags[j]]


def _odd_extension(col: np.ndarray, h: int) -> np.ndarray:
    """Point-symmetric continuation by ``h`` samples at both ends (keeps value and slope)."""
    left = 2 * col[0] - col[h:0:-1]
    right = 2 * col[-1] - col[-2:-h - 2:-1]
    return np.concatenate([left, col, right])


def _column_orders(col: np.ndarray, W: int, floor: float, residual_max: float):
    ns = col.size
    h = W // 2
    k0, k1 = W // 16, W // 8
    ext = _odd_extension(col, W)
    seg = np.lib.stride_tricks.sliding_window_view(ext, W)[W - h:W - h + ns]
    # remove the least-squares line from every segment
    x = np.arange(W) - h
    B = np.stack([np.ones(W), x], axis=1)
    d = seg - (seg @ np.linalg.pinv(B).T) @ B.T
    A = np.abs(np.fft.rfft(d * signal.windows.hann(W, sym=False), axis=1))
    C = A[:, k0:k1 + 1]
    lk = np.log(np.arange(k0, k1 + 1))
    order = np.full(ns, np.inf)
    resid = np.full(ns, np.inf)
    scale = np.ptp(col) * W
    live = (C.mean(axis=1) > floor * scale) & np.all(C > 0, axis=1) if scale > 0 else np.zeros(ns, bool)
    if live.any():
        logC = np.log(C[live])
        lkc = lk - lk.mean()
        slope = (logC - logC.mean(axis=1, keepdims=True)) @ lkc / (lkc @ lkc)
        fit = logC.mean(axis=1, keepdims=True) + slope[:, None] * lkc
        order[live] = -slope - 0.5
        resid[live] = np.sqrt(np.mean((logC - fit) ** 2, axis=1))
    # a decay law is meaningful only if the spectrum keeps falling past the band
    falling = A[:, k1:2 * k1 + 1].max(axis=1) <= A[:, k0]
    inside = (np.arange(ns) >= h) & (np.arange(ns) < ns - h)
    valid = live & inside & falling & (resid < residual_max) & (order >= 0)
    # attribute a window's singularity to its largest second difference
    d2 = np.zeros(ext.size)
    d2[1:-1] = np.abs(np.diff(ext, 2))
    w2 = np.lib.stride_tricks.sliding_window_view(d2, W)[W - h:W - h + ns]
    localized = (w2[:, h] > 0) & (np.argmax(w2, axis=1) == h)
    return order, resid, valid, localized


def singularity_order_map(b: Sinogram, window: int = 64, dead_band: float = DEAD_BAND,
                          residual_max: float = RESIDUAL_MAX,
                          floor: float = AMPLITUDE_FLOOR) -> SingularityOrderMap:
    """Windowed-decay estimate of the local 1-D Sobolev order along each column.

    For every bin a Hann-windowed segment of ``window`` samples centered on
    the bin is detrended and transformed; the decay exponent ``p`` of the
    coefficient magnitudes over the band ``[window/16, window/8]`` (the upper
    half of the band coarser than the pixel-level blur) gives the order
    ``p - 1/2``. A jump has order 1/2, a square-root tangency order 1.

    A bin is valid when its window lies inside the data, the band carries
    content above ``floor``, the spectrum keeps decaying past the band and
    the log-log fit residual is below ``residual_max``. It is flagged when
    it is valid, its order is below ``1 + dead_band`` and it holds the
    largest second difference in its window (so each singularity is
    reported once, at its location).
    """
    W = int(window)
    if W < 16 or W & (W - 1):
        raise ValueError("window must be a power of two >= 16")
    if W >= b.geom.ns:
        raise ValueError("window must be shorter than the sinogram columns")
    shape = b.geom.shape
    orders = np.empty(shape)
    resid = np.empty(shape)
    valid = np.empty(shape, bool)
    loc = np.empty(shape, bool)
    for j, col in enumerate(b.values):
        orders[j], resid[j], valid[j], loc[j] = _column_orders(col, W, floor, residual_max)
    conf = np.where(valid, 1.0 / (1.0 + resid / residual_max), 0.0)
    flags = valid & loc & (orders < FLAG_ORDER + dead_band)
    return SingularityOrderMap(orders, conf, resid, valid, flags, b.geom, W)


# ---------------------------------------------------------------------------
# Tangency curves and edge strengths
# ---------------------------------------------------------------------------

def support_function(shape, theta) -> np.ndarray:
    """``h(theta) = max over the shape of x . (cos theta, sin theta)`` for disks and ellipses."""
    theta = np.asarray(theta, dtype=float)
    c = shape.cx * np.cos(theta) + shape.cy * np.sin(theta)
    if shape.kind == "disk":
        return c + shape.radius
    if shape.kind == "ellipse":
        t = theta - shape.angle
        return c + np.hypot(shape.a * np.cos(t), shape.b * np.sin(t))
    raise ValueError(f"no closed-form support function for {shape.kind!r}")


def tangency_curve(shape, geom: ScanGeometry) -> np.ndarray:
    """Points ``(s, theta)`` of the lines tangent to the boundary of ``shape``:
    ``s = h(theta)`` and ``s = -h(theta + pi)`` for every sampled angle."""
    th = geom.theta
    s = np.concatenate([support_function(shape, th), -support_function(shape, th + np.pi)])
    return np.stack([s, np.concatenate([th, th])], axis=1)


def _curve_bins(curve, geom: ScanGeometry) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(curve, dtype=float).reshape(-1, 2)
    if c.shape[0] == 0:
        raise ValueError("tangency curve is empty")
    i = np.rint((c[:, 0] - geom.smin) / geom.ds).astype(int)
    j = np.rint((c[:, 1] - geom.thetamin) / geom.dtheta).astype(int) % geom.ntheta
    keep = (i >= 0) & (i < geom.ns)
    if not keep.any():
        raise ValueError("tangency curve lies outside the scanned offsets")
    return j[keep], i[keep]


def second_derivative_strength(b: Sinogram, curve, reach: int = 1) -> float:
    """Median over the curve of ``max |d^2 b / ds^2|`` within ``reach`` bins of each point."""
    j, i = _curve_bins(curve, b.geom)
    d2 = np.zeros(b.values.shape)
    d2[:, 1:-1] = np.abs(np.diff(b.values, 2, axis=1)) / b.geom.ds ** 2
    ns = b.geom.ns
    near = np.stack([d2[j, np.clip(i + o, 0, ns - 1)] for o in range(-reach, reach + 1)])
    return float(np.median(near.max(axis=0)))


@dataclass
class EdgeRatio:
    ratio_nl: float
    ratio_lin: float


def edge_strength_ratio(b_nonlinear: Sinogram, b_linear: Sinogram, inner_curve, outer_curve) -> EdgeRatio:
    """Inner-to-outer tangency edge strength for a non-linear and a linear sinogram."""
    def ratio(b):
        outer = second_derivative_strength(b, outer_curve)
        if outer == 0:
            raise ValueError("outer tangency curve carries no edge")
        return second_derivative_strength(b, inner_curve) / outer
    return EdgeRatio(ratio(b_nonlinear), ratio(b_linear))
