"""Declarative phantoms ``f = u * chi_Omega`` built from signed shape primitives.

Shapes are applied in order to an occupancy map ``m`` (initially 0): a
positive shape takes the pointwise maximum (union), a negative shape
multiplies by ``1 - shape`` (subtraction). Sharp primitives evaluate to
indicators, so this is exact set algebra; smooth primitives give a profile
in ``[0, 1]``. The phantom value is ``u(x, y) * m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _rotate(X, Y, cx, cy, angle):
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = X - cx, Y - cy
    return c * dx + s * dy, -s * dx + c * dy


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float
    sign: int = 1
    kind = "disk"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")

    def evaluate(self, X, Y):
        return ((X - self.cx) ** 2 + (Y - self.cy) ** 2 < self.radius ** 2).astype(float)

    def extent(self):
        return math.hypot(self.cx, self.cy) + self.radius


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0
    sign: int = 1
    kind = "ellipse"

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def evaluate(self, X, Y):
        u, v = _rotate(X, Y, self.cx, self.cy, self.angle)
        return ((u / self.a) ** 2 + (v / self.b) ** 2 < 1.0).astype(float)

    def extent(self):
        return math.hypot(self.cx, self.cy) + max(self.a, self.b)


@dataclass(frozen=True)
class Rectangle:
    cx: float
    cy: float
    width: float
    height: float
    angle: float = 0.0
    sign: int = 1
    kind = "rectangle"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("rectangle sides must be positive")

    def evaluate(self, X, Y):
        u, v = _rotate(X, Y, self.cx, self.cy, self.angle)
        # half-open so that adjacent rectangles tile without overlap
        return ((u >= -self.width / 2) & (u < self.width / 2)
                & (v >= -self.height / 2) & (v < self.height / 2)).astype(float)

    def extent(self):
        return math.hypot(self.cx, self.cy) + 0.5 * math.hypot(self.width, self.height)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple
    sign: int = 1
    kind = "polygon"

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", verts)

    def evaluate(self, X, Y):
        # even-odd crossing rule
        inside = np.zeros(np.broadcast(X, Y).shape, dtype=bool)
        vs = self.vertices
        for (x0, y0), (x1, y1) in zip(vs, vs[1:] + vs[:1]):
            if y0 == y1:
                continue
            crosses = (Y >= min(y0, y1)) & (Y < max(y0, y1))
            xint = x0 + (Y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (X < xint)
        return inside.astype(float)

    def extent(self):
        return max(math.hypot(x, y) for x, y in self.vertices)


@dataclass(frozen=True)
class SmoothBlob:
    """Smooth radial profile: ``"bump"`` is the C-infinity bump
    ``exp(1 - 1/(1 - (r/R)^2))`` on ``r < R``; ``"gaussian"`` is
    ``exp(-r^2 / (2 sigma^2))`` cut off at ``r = R``."""

    cx: float
    cy: float
    radius: float
    profile: str = "bump"
    sigma: float = 0.0
    sign: int = 1
    kind = "blob"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("blob radius must be positive")
        if self.profile not in ("bump", "gaussian"):
            raise ValueError(f"unknown blob profile {self.profile!r}")
        if self.profile == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian blob needs sigma > 0")

    def evaluate(self, X, Y):
        r2 = (X - self.cx) ** 2 + (Y - self.cy) ** 2
        inside = r2 < self.radius ** 2
        if self.profile == "gaussian":
            return np.where(inside, np.exp(-r2 / (2 * self.sigma ** 2)), 0.0)
        q = np.where(inside, r2 / self.radius ** 2, 0.0)
        return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - q)), 0.0)

    def extent(self):
        return math.hypot(self.cx, self.cy) + self.radius


SHAPES = {cls.kind: cls for cls in (Disk, Ellipse, Rectangle, Polygon, SmoothBlob)}


@dataclass(frozen=True)
class PhantomSpec:
    """Ordered signed shapes and a polynomial amplitude ``u``.

    ``amplitude`` is a tuple of ``(p, q, c)`` terms giving
    ``u(x, y) = sum c * x**p * y**q``; a bare number is a constant.
    """

    shapes: tuple = ()
    amplitude: tuple = ((0, 0, 1.0),)
    positive: bool = True
    name: str = ""

    def __post_init__(self):
        amp = self.amplitude
        if isinstance(amp, (int, float)):
            amp = ((0, 0, float(amp)),)
        amp = tuple((int(p), int(q), float(c)) for p, q, c in amp)
        if any(p < 0 or q < 0 for p, q, _ in amp):
            raise ValueError("amplitude exponents must be non-negative")
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "shapes", tuple(self.shapes))
        for s in self.shapes:
            if s.sign not in (1, -1):
                raise ValueError("shape sign must be +1 or -1")

    def amplitude_at(self, X, Y):
        u = np.zeros(np.broadcast(X, Y).shape)
        for p, q, c in self.amplitude:
            u = u + c * X ** p * Y ** q
        return u

    def occupancy(self, X, Y):
        m = np.zeros(np.broadcast(X, Y).shape)
        for s in self.shapes:
            v = s.evaluate(X, Y)
            m = np.maximum(m, v) if s.sign > 0 else m * (1.0 - v)
        return m

    def evaluate(self, X, Y):
        m = self.occupancy(X, Y)
        if not self.shapes:
            return m
        u = self.amplitude_at(X, Y)
        if self.positive and np.any((m > 0) & (u <= 0)):
            raise ValueError("amplitude must be strictly positive on the support")
        return u * m

    def extent(self) -> float:
        """Radius of a disk centered at the origin containing every positive shape."""
        pos = [s.extent() for s in self.shapes if s.sign > 0]
        return max(pos) if pos else 0.0

    def to_dict(self) -> dict:
        shapes = []
        for s in self.shapes:
            d = {k: getattr(s, k) for k in s.__dataclass_fields__}
            if "vertices" in d:
                d["vertices"] = [list(v) for v in d["vertices"]]
            d["kind"] = s.kind
            shapes.append(d)
        return {"name": self.name, "positive": self.positive,
                "amplitude": [list(t) for t in self.amplitude], "shapes": shapes}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        shapes = []
        for sd in d.get("shapes", []):
            sd = dict(sd)
            kind = sd.pop("kind")
            if kind not in SHAPES:
                raise ValueError(f"unknown shape kind {kind!r}")
            if "vertices" in sd:
                sd["vertices"] = tuple(tuple(v) for v in sd["vertices"])
            shapes.append(SHAPES[kind](**sd))
        amp = d.get("amplitude", 1.0)
        if not isinstance(amp, (int, float)):
            amp = tuple(tuple(t) for t in amp)
        return cls(tuple(shapes), amp, bool(d.get("positive", True)), d.get("name", ""))


# Elliptic annulus walls are 0.3 units (7.5 cm) along both axes.
ANNULUS_OUTER = (0.75, 0.55)
ANNULUS_INNER = (0.45, 0.25)

BUILTIN_NAMES = ("non_convex", "elliptic_annulus", "square", "disk", "gaussian")


def builtin_phantom(name: str, density: float = 1.0, **params) -> PhantomSpec:
    """Named test phantoms with constant density ``density``.

    ``disk`` accepts ``radius`` (default 0.5); ``gaussian`` accepts ``sigma``
    (default 0.05) and is cut off at ``6 * sigma``.
    """
    amp = ((0, 0, float(density)),)
    if name == "non_convex":
        # ellipse with a circular bite taken out of its right flank
        shapes = (Ellipse(0.0, 0.0, 0.55, 0.42, 0.0),
                  Disk(0.52, 0.06, 0.24, sign=-1))
    elif name == "elliptic_annulus":
        shapes = (Ellipse(0.0, 0.0, *ANNULUS_OUTER),
                  Ellipse(0.0, 0.0, *ANNULUS_INNER, sign=-1))
    elif name == "square":
        shapes = (Rectangle(0.0, 0.0, 1.0, 1.0),)
    elif name == "disk":
        shapes = (Disk(0.0, 0.0, float(params.get("radius", 0.5))),)
    elif name == "gaussian":
        sigma = float(params.get("sigma", 0.05))
        shapes = (SmoothBlob(0.0, 0.0, 6 * sigma, profile="gaussian", sigma=sigma),)
    else:
        raise ValueError(f"unknown phantom {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    extra = set(params) - {"radius", "sigma"}
    if extra:
        raise ValueError(f"unexpected phantom parameters: {sorted(extra)}")
    spec = PhantomSpec(shapes, amp, True, name)
    if spec.extent() >= 1.0:
        raise ValueError(f"phantom {name!r} must lie inside the unit disk")
    return spec
