"""Planar primitives: affine conformal contractions, disks and Mobius maps.

Complex numbers are plain Python ``complex`` scalars or numpy complex arrays;
every map here is vectorised over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TANGENCY_TOL = 1e-10


class GeometryError(ValueError):
    """Raised for degenerate or inadmissible geometric configurations."""


def _finite(z: complex) -> bool:
    return math.isfinite(z.real) and math.isfinite(z.imag)


@dataclass(frozen=True)
class Disk:
    center: complex
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not _finite(self.center) or not math.isfinite(self.radius):
            raise GeometryError(f"non-finite disk {self}")
        if self.radius <= 0:
            raise GeometryError(f"disk radius must be positive, got {self.radius}")

    def contains(self, z, closed: bool = True):
        d = np.abs(np.asarray(z) - self.center)
        return d <= self.radius if closed else d < self.radius

    def boundary(self, n: int, phase: float = 0.0) -> np.ndarray:
        t = phase + 2 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * t)

    def distance_to(self, other: "Disk") -> float:
        """Distance between the closed disks (negative when they overlap)."""
        return abs(self.center - other.center) - self.radius - other.radius

    def inside(self, other: "Disk", margin: float = 0.0) -> bool:
        """True when the closure of self lies in the open disk `other`."""
        return abs(self.center - other.center) + self.radius < other.radius - margin


UNIT_DISK = Disk(0j, 1.0)


@dataclass(frozen=True)
class AffineContraction:
    """The conformal contraction z -> a z + b."""

    a: complex
    b: complex

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))
        if not (_finite(self.a) and _finite(self.b)):
            raise GeometryError("non-finite affine coefficients")
        if not 0 < abs(self.a) < 1:
            raise GeometryError(f"need 0 < |a| < 1, got |a| = {abs(self.a)}")

    @property
    def scale(self) -> float:
        return abs(self.a)

    def __call__(self, z):
        return self.a * z + self.b

    def inverse(self, z):
        return (z - self.b) / self.a

    def compose(self, inner: "AffineContraction") -> "AffineContraction":
        """self o inner."""
        return AffineContraction(self.a * inner.a, self.a * inner.b + self.b)


def apply_affine(m: AffineContraction, z):
    return m(z)


def fixed_point(m: AffineContraction) -> complex:
    if abs(m.a) >= 1:
        raise GeometryError("fixed point needs a contraction")
    return m.b / (1 - m.a)


def image_disk(m: AffineContraction, d: Disk) -> Disk:
    return Disk(m(d.center), abs(m.a) * d.radius)


@dataclass(frozen=True)
class Mobius:
    """z -> (a z + b) / (c z + d)."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c) == 0:
            raise GeometryError("singular Mobius map")

    def __call__(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def compose(self, inner: "Mobius") -> "Mobius":
        """self o inner."""
        return Mobius(
            self.a * inner.a + self.b * inner.c,
            self.a * inner.b + self.b * inner.d,
            self.c * inner.a + self.d * inner.c,
            self.c * inner.b + self.d * inner.d,
        )

    @staticmethod
    def identity() -> "Mobius":
        return Mobius(1, 0, 0, 1)

    @staticmethod
    def translation(t: complex) -> "Mobius":
        return Mobius(1, t, 0, 1)


@dataclass(frozen=True)
class CirclePairNormalization:
    """Mobius map sending an eccentric nested circle pair to |z| = r1 < |z| = r2."""

    forward: Mobius
    inner_radius: float
    outer_radius: float

    @property
    def backward(self) -> Mobius:
        return self.forward.inverse()

    @property
    def log_modulus(self) -> float:
        return math.log(self.outer_radius / self.inner_radius)


def check_nested(outer: Disk, inner: Disk, tol: float = TANGENCY_TOL) -> None:
    gap = outer.radius - abs(inner.center - outer.center) - inner.radius
    if gap <= tol:
        raise GeometryError(
            f"inner circle must lie strictly inside outer circle (gap {gap:.3e})"
        )


def normalize_circle_pair(outer: Disk, inner: Disk) -> CirclePairNormalization:
    """Send the ring outer \\ inner onto a round annulus centred at 0.

    Uses the pair of points symmetric with respect to both circles: the one
    inside the inner disk goes to 0, its partner (outside the outer disk) to
    infinity.  Concentric pairs only get translated.
    """
    check_nested(outer, inner)
    R, r = outer.radius, inner.radius
    offset = inner.center - outer.center
    x0 = abs(offset)
    if x0 <= 1e-14 * R:
        fwd = Mobius.translation(-outer.center)
        return CirclePairNormalization(fwd, r, R)
    u = offset / x0
    s = (R * R + x0 * x0 - r * r) / x0
    # smaller root of p^2 - s p + R^2, in the cancellation-free form
    p = 2 * R * R / (s + math.sqrt(s * s - 4 * R * R))
    q = R * R / p
    # zeta = (z - c_outer) * conj(u); M(zeta) = (zeta - p) / (zeta - q)
    cu = u.conjugate()
    rot = Mobius(cu, -outer.center * cu, 0, 1)
    fwd = Mobius(1, -p, 1, -q).compose(rot)
    r2 = p / R
    r1 = abs(p - x0) / r
    return CirclePairNormalization(fwd, r1, r2)


def winding_number(curve: np.ndarray, about: complex = 0j) -> int:
    """Winding number of a closed polyline (last point joins the first)."""
    w = np.asarray(curve) - about
    dtheta = np.angle(np.roll(w, -1) / w)
    return int(round(dtheta.sum() / (2 * np.pi)))
