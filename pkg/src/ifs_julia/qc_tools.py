"""Quasiconformal interpolation in ring domains and distortion estimates.

Ring interpolation works in two normalised frames.  The source ring (two
nested round circles) is sent by a Mobius map M to a round annulus
r1 < |zeta| < r2.  The target is read in a frame N (a Mobius map, the
identity by default) in which both prescribed boundary curves are star-shaped
about 0.  Along each normalised source ray the target log-radius and the
lifted target argument are blended linearly in t = log(|zeta|/r1)/log(r2/r1).
When both target curves are round in the N-frame the blend is a homeomorphism
whose Jacobian is (d logR/dt)(dA/dtheta) > 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .plane_geometry import Disk, GeometryError, Mobius, normalize_circle_pair

BOUNDARY_SAMPLES = 512
LIFT_SAMPLES = 4096
TWO_PI = 2 * np.pi


class InterpolationError(ValueError):
    pass


class AngleLift:
    """Continuous lift of arg g(theta) for a closed curve g, theta in R.

    A dense table of the unwrapped argument fixes the branch; queries snap the
    exact principal argument to the branch nearest the tabulated value.
    """

    def __init__(self, g: Callable[[np.ndarray], np.ndarray], n: int = LIFT_SAMPLES):
        self.n = n
        self.grid = TWO_PI * np.arange(n + 1) / n
        vals = g(self.grid[:-1])
        if np.any(np.abs(vals) == 0):
            raise InterpolationError("curve passes through the lifting centre")
        raw = np.angle(vals)
        steps = np.angle(np.roll(vals, -1) / vals)
        if np.abs(steps).max() > np.pi / 2:
            raise InterpolationError("curve argument varies too fast for the lift table")
        lift = raw[0] + np.concatenate([[0.0], np.cumsum(steps)])
        self.winding = int(round((lift[-1] - lift[0]) / TWO_PI))
        self.table = lift

    def __call__(self, theta, values) -> np.ndarray:
        th = np.mod(theta, TWO_PI)
        approx = np.interp(th, self.grid, self.table)
        raw = np.angle(values)
        return raw + TWO_PI * np.round((approx - raw) / TWO_PI)


@dataclass
class BoundaryCorrespondence:
    """Boundary values theta -> target point along a normalised circle."""

    target: Callable[[np.ndarray], np.ndarray]
    closed: bool = True

    def samples(self, n: int = BOUNDARY_SAMPLES):
        theta = TWO_PI * np.arange(n) / n
        return theta, self.target(theta)

    @classmethod
    def from_samples(cls, theta, points):
        """Periodic cubic-spline correspondence through sampled boundary values."""
        theta = np.asarray(theta, float)
        pts = np.asarray(points, complex)
        if np.any(np.diff(theta) <= 0) or theta[-1] - theta[0] >= TWO_PI:
            raise InterpolationError("sample angles must increase strictly within one turn")
        th = np.concatenate([theta, [theta[0] + TWO_PI]])
        p = np.concatenate([pts, [pts[0]]])
        sr = CubicSpline(th, p.real, bc_type="periodic")
        si = CubicSpline(th, p.imag, bc_type="periodic")

        def target(t):
            tt = theta[0] + np.mod(np.asarray(t) - theta[0], TWO_PI)
            return sr(tt) + 1j * si(tt)

        return cls(target)


def _polar_lift(g, n):
    lift = AngleLift(g, n)
    if lift.winding != 1:
        raise InterpolationError(
            f"boundary curve winds {lift.winding} times about the target centre; "
            "orientation mismatch or wrong centre"
        )
    return lift


class RingInterpolation:
    """Interpolation between prescribed boundary maps of a round ring.

    inner_map / outer_map take source boundary points (complex arrays) and
    return target points.  `target_frame` is a Mobius map in which the target
    boundary curves are star-shaped about 0 (default: identity).
    """

    def __init__(self, outer: Disk, inner: Disk, inner_map, outer_map,
                 target_frame: Mobius | None = None, lift_samples: int = LIFT_SAMPLES):
        try:
            self.norm = normalize_circle_pair(outer, inner)
        except GeometryError as exc:
            raise InterpolationError(str(exc)) from None
        self.outer, self.inner = outer, inner
        self.inner_map, self.outer_map = inner_map, outer_map
        self.M = self.norm.forward
        self.Minv = self.norm.backward
        self.frame = target_frame or Mobius.identity()
        self.frame_inv = self.frame.inverse()
        self.r1, self.r2 = self.norm.inner_radius, self.norm.outer_radius
        self.log_r1 = math.log(self.r1)
        self.log_span = math.log(self.r2 / self.r1)
        self.lift_in = _polar_lift(self._inner_values, lift_samples)
        self.lift_out = _polar_lift(self._outer_values, lift_samples)
        # align the outer lift with the inner one: least total turning,
        # ties to the smaller absolute rotation
        diff = self.lift_out.table[:-1] - self.lift_in.table[:-1]
        k = np.round(diff.mean() / TWO_PI)
        cands = [k - 1, k, k + 1]
        costs = [np.abs(diff - TWO_PI * c).sum() for c in cands]
        best = min(range(3), key=lambda n: (round(costs[n], 9), abs(cands[n])))
        self.offset = -TWO_PI * cands[best]
        rin = np.abs(self._inner_values(self.lift_in.grid[:-1]))
        rout = np.abs(self._outer_values(self.lift_out.grid[:-1]))
        if rin.max() >= rout.min():
            raise InterpolationError("target boundary curves are not nested (curves cross)")

    def source_point(self, t, theta):
        rho = np.exp(self.log_r1 + np.asarray(t) * self.log_span)
        return self.Minv(rho * np.exp(1j * np.asarray(theta)))

    def _inner_values(self, theta):
        return self.frame(self.inner_map(self.Minv(self.r1 * np.exp(1j * theta))))

    def _outer_values(self, theta):
        return self.frame(self.outer_map(self.Minv(self.r2 * np.exp(1j * theta))))

    def parameters(self, z):
        zeta = self.M(np.asarray(z, complex))
        t = (np.log(np.abs(zeta)) - self.log_r1) / self.log_span
        theta = np.mod(np.angle(zeta), TWO_PI)
        return t, theta

    def evaluate_params(self, t, theta):
        vi = self._inner_values(theta)
        vo = self._outer_values(theta)
        ai = self.lift_in(theta, vi)
        ao = self.lift_out(theta, vo) + self.offset
        log_r = (1 - t) * np.log(np.abs(vi)) + t * np.log(np.abs(vo))
        ang = (1 - t) * ai + t * ao
        return self.frame_inv(np.exp(log_r + 1j * ang))

    def __call__(self, z):
        t, theta = self.parameters(z)
        return self.evaluate_params(t, theta)

    def contains(self, z):
        z = np.asarray(z)
        return self.outer.contains(z) & ~self.inner.contains(z, closed=False)

    def boundary_error(self, n: int = BOUNDARY_SAMPLES) -> float:
        zi = self.inner.boundary(n)
        zo = self.outer.boundary(n)
        return float(max(np.abs(self(zi) - self.inner_map(zi)).max(),
                         np.abs(self(zo) - self.outer_map(zo)).max()))

    def grid_orientation(self, n: int = 256) -> "OrientationReport":
        t = np.linspace(0, 1, n)
        th = TWO_PI * np.arange(n + 1) / n
        T, TH = np.meshgrid(t, th, indexing="ij")
        return orientation_check(self.evaluate_params(T, TH))


def interpolate_ring(outer: Disk, inner: Disk, inner_map, outer_map,
                     target_frame: Mobius | None = None) -> RingInterpolation:
    return RingInterpolation(outer, inner, inner_map, outer_map, target_frame)


@dataclass
class OrientationReport:
    min_signed_area: float
    n_cells: int
    n_nonpositive: int

    @property
    def passed(self) -> bool:
        return self.n_nonpositive == 0


def orientation_check(images: np.ndarray) -> OrientationReport:
    """Signed areas of the image quads of a positively oriented grid.

    images[i, j] is the image of the grid node (u_i, v_j); the source grid
    must be positively oriented (u first, v second).
    """
    p00 = images[:-1, :-1]
    p10 = images[1:, :-1]
    p11 = images[1:, 1:]
    p01 = images[:-1, 1:]
    d1 = p11 - p00
    d2 = p01 - p10
    area = 0.5 * (d1.real * d2.imag - d1.imag * d2.real)
    return OrientationReport(float(area.min()), int(area.size), int(np.sum(area <= 0)))


class StarRingMap:
    """Map from the region between a round circle and an inner star-shaped
    curve onto the round annulus r_in < |w - center| < r_out.

    The region is normalised by the Mobius map of (outer, fitted inner circle);
    the inner curve's radial function in that frame is a periodic cubic spline
    through the traced samples.  Points move radially (log-linearly) in the
    normalised frame and inherit the argument of the outer boundary point on
    the same normalised ray, so the outer circle maps to the target outer
    circle preserving direction about its centre.
    """

    def __init__(self, outer: Disk, inner_curve: np.ndarray, r_in: float, r_out: float,
                 center: complex = 0j, lift_samples: int = LIFT_SAMPLES):
        curve = np.asarray(inner_curve, complex)
        c_fit = curve.mean()
        rho_fit = float(np.abs(curve - c_fit).mean())
        self.outer = outer
        self.norm = normalize_circle_pair(outer, Disk(c_fit, rho_fit))
        self.M, self.Minv = self.norm.forward, self.norm.backward
        zeta = self.M(curve)
        ang = np.angle(zeta)
        order = np.argsort(ang)
        ang_s = ang[order]
        steps = np.angle(np.roll(zeta, -1) / zeta)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise InterpolationError("traced inner curve is not star-shaped in the normalised frame")
        logr = np.log(np.abs(zeta))[order]
        th = np.concatenate([ang_s, [ang_s[0] + TWO_PI]])
        self._spline = CubicSpline(th, np.concatenate([logr, [logr[0]]]), bc_type="periodic")
        self._th0 = ang_s[0]
        self.log_r2 = math.log(self.norm.outer_radius)
        self.r_in, self.r_out, self.center = r_in, r_out, complex(center)
        if float(np.exp(logr.max())) >= self.norm.outer_radius:
            raise InterpolationError("inner curve meets the outer circle")
        self.lift = _polar_lift(lambda t: self.Minv(self.norm.outer_radius * np.exp(1j * t)) - outer.center,
                                lift_samples)

    def inner_log_radius(self, theta):
        tt = self._th0 + np.mod(theta - self._th0, TWO_PI)
        return self._spline(tt)

    def parameters(self, z):
        zeta = self.M(np.asarray(z, complex))
        theta = np.mod(np.angle(zeta), TWO_PI)
        lr_in = self.inner_log_radius(theta)
        t = (np.log(np.abs(zeta)) - lr_in) / (self.log_r2 - lr_in)
        return t, theta

    def evaluate_params(self, t, theta):
        edge = self.Minv(self.norm.outer_radius * np.exp(1j * theta)) - self.outer.center
        ang = self.lift(theta, edge)
        log_r = (1 - t) * math.log(self.r_in) + t * math.log(self.r_out)
        return self.center + np.exp(log_r + 1j * ang)

    def __call__(self, z):
        t, theta = self.parameters(z)
        return self.evaluate_params(t, theta)

    def grid_orientation(self, n: int = 256) -> OrientationReport:
        t = np.linspace(0, 1, n)
        th = TWO_PI * np.arange(n + 1) / n
        T, TH = np.meshgrid(t, th, indexing="ij")
        lr_in = self.inner_log_radius(TH)
        src = self.Minv(np.exp(lr_in + T * (self.log_r2 - lr_in) + 1j * TH))
        return orientation_check(self(src))


class SectorExtension:
    """Transfinite (Coons) extension over a curvilinear quadrilateral.

    Everything is in logarithmic coordinates zeta = s + i theta.  The source
    is {s_lo <= s <= s_hi, left(s) <= theta <= right(s)}, uniformised by
    (u, v) -> (s_lo + u (s_hi - s_lo), left + v (right - left)).  The four
    boundary maps are functions of the side parameter:
    bottom(u) on theta = left(s), top(u) on theta = right(s),
    inner(v) on s = s_lo, outer(v) on s = s_hi.
    Real-affine maps of (s, theta) are reproduced exactly.
    """

    CORNER_TOL = 1e-8

    def __init__(self, s_lo, s_hi, left, right, bottom, top, inner, outer):
        self.s_lo, self.s_hi = float(s_lo), float(s_hi)
        self.left, self.right = left, right
        self.bottom, self.top, self.inner, self.outer = bottom, top, inner, outer
        z0, z1 = np.array([0.0]), np.array([1.0])
        corners = {
            "inner-left": (bottom(z0), inner(z0)),
            "outer-left": (bottom(z1), outer(z0)),
            "inner-right": (top(z0), inner(z1)),
            "outer-right": (top(z1), outer(z1)),
        }
        for name, (p, q) in corners.items():
            if abs(p[0] - q[0]) > self.CORNER_TOL:
                raise InterpolationError(f"corner mismatch at {name}: {abs(p[0] - q[0]):.3e}")
        self.c00 = inner(z0)[0]
        self.c01 = inner(z1)[0]
        self.c10 = outer(z0)[0]
        self.c11 = outer(z1)[0]

    def parameters(self, zeta):
        zeta = np.asarray(zeta, complex)
        s = zeta.real
        u = (s - self.s_lo) / (self.s_hi - self.s_lo)
        lo, hi = self.left(s), self.right(s)
        v = (zeta.imag - lo) / (hi - lo)
        return u, v

    def source_point(self, u, v):
        s = self.s_lo + u * (self.s_hi - self.s_lo)
        lo, hi = self.left(s), self.right(s)
        return s + 1j * (lo + v * (hi - lo))

    def evaluate_params(self, u, v):
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        lin_v = (1 - v) * self.bottom(u) + v * self.top(u)
        lin_u = (1 - u) * self.inner(v) + u * self.outer(v)
        bil = ((1 - u) * (1 - v) * self.c00 + u * (1 - v) * self.c10
               + (1 - u) * v * self.c01 + u * v * self.c11)
        return lin_v + lin_u - bil

    def __call__(self, zeta):
        u, v = self.parameters(zeta)
        return self.evaluate_params(u, v)

    def grid_orientation(self, n: int = 256) -> OrientationReport:
        u = np.linspace(0, 1, n)
        U, V = np.meshgrid(u, u, indexing="ij")
        return orientation_check(self.evaluate_params(U, V))


def extend_sector(s_lo, s_hi, left, right, bottom, top, inner, outer,
                  check_grid: int = 128) -> SectorExtension:
    ext = SectorExtension(s_lo, s_hi, left, right, bottom, top, inner, outer)
    rep = ext.grid_orientation(check_grid)
    if not rep.passed:
        raise InterpolationError(
            f"sector extension folds on {rep.n_nonpositive} of {rep.n_cells} grid cells; "
            "increase boundary sample density or shorten the sector"
        )
    return ext


# Distortion ------------------------------------------------------------------

@dataclass
class DistortionReport:
    sup_abs_mu: float
    K_estimate: float
    n_samples: int
    n_degenerate: int
    h: float
    per_piece: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.sup_abs_mu < 1

    def to_dict(self) -> dict:
        return {
            "sup_abs_mu": self.sup_abs_mu,
            "K_estimate": self.K_estimate,
            "n_samples": self.n_samples,
            "n_degenerate": self.n_degenerate,
            "h": self.h,
            "per_piece": self.per_piece,
        }


def k_from_mu(mu: float) -> float:
    return (1 + mu) / (1 - mu) if mu < 1 else math.inf


def beltrami_coefficients(f, z, h: float = 1e-5):
    """Central-difference Wirtinger derivatives; returns (mu, f_z, f_zbar)."""
    z = np.asarray(z, complex)
    step = h * np.maximum(1.0, np.abs(z))
    fx = (f(z + step) - f(z - step)) / (2 * step)
    fy = (f(z + 1j * step) - f(z - 1j * step)) / (2 * step)
    fz = 0.5 * (fx - 1j * fy)
    fzb = 0.5 * (fx + 1j * fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = fzb / fz
    return mu, fz, fzb


def beltrami_estimate(f, points, h: float = 1e-5, tags=None) -> DistortionReport:
    z = np.asarray(points, complex).reshape(-1)
    mu, fz, _ = beltrami_coefficients(f, z, h)
    good = (np.abs(fz) >= 1e-12) & np.isfinite(mu)
    amu = np.abs(mu[good])
    sup = float(amu.max()) if amu.size else 0.0
    per_piece = {}
    if tags is not None:
        tags = np.asarray(tags).reshape(-1)[good]
        for tag in np.unique(tags):
            m = float(amu[tags == tag].max())
            per_piece[str(tag)] = {"sup_abs_mu": m, "K_estimate": k_from_mu(m),
                                   "n": int(np.sum(tags == tag))}
    return DistortionReport(sup, k_from_mu(sup), int(good.sum()), int((~good).sum()), h, per_piece)


def ring_modulus_trefftz(outer: Disk, inner: Disk, terms: int = 40, n: int = 2048) -> float:
    """Conformal modulus log(r2/r1) of a ring, independent of Mobius maps.

    Fits u = A + B log|z - c| + sum_n Re/Im (z - c)^(+-n) (c the inner centre)
    to u = 0 on the inner circle and u = 1 on the outer one by least squares;
    the flux of u is 2 pi B, so the modulus is 1/B.
    """
    c = inner.center
    zi = inner.boundary(n)
    zo = outer.boundary(n)
    pts = np.concatenate([zi, zo])
    rhs = np.concatenate([np.zeros(n), np.ones(n)])
    w = pts - c
    scale_out = outer.radius + abs(outer.center - c)
    cols = [np.ones_like(w.real), np.log(np.abs(w))]
    for k in range(1, terms + 1):
        zp = (w / scale_out) ** k
        zm = (inner.radius / w) ** k
        cols += [zp.real, zp.imag, zm.real, zm.imag]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return float(1 / coef[1])
