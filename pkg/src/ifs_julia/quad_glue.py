"""The glue quadratic p(z) = a (z - w)^2 - 10 and its containment checks."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .ifs_core import SeparationPlan

GLUE_EPS = 0.2
SAMPLES = 4096


class GlueError(ValueError):
    pass


def glue_radius_factor(eps: float) -> float:
    return math.sqrt(1 + eps) - 1


@dataclass(frozen=True)
class QuadraticGlue:
    w: complex
    a: complex
    z1: complex
    z2: complex
    R_star: float

    @property
    def half_span(self) -> float:
        """|10/a|^(1/2), the distance from w to either zero."""
        return math.sqrt(abs(10 / self.a))

    def __call__(self, z):
        return self.a * (z - self.w) ** 2 - 10

    def derivative(self, z):
        return 2 * self.a * (z - self.w)


def build_quadratic(wi: complex, wj: complex, eps: float = GLUE_EPS) -> QuadraticGlue:
    """Quadratic with critical point (wi+wj)/2 and zeros exactly wi, wj.

    z1, z2 = w -/+ sqrt(10/a) with the principal square root.
    """
    wi, wj = complex(wi), complex(wj)
    if abs(wj - wi) <= 1e-14:
        raise GlueError("the two zeros must be distinct")
    w = (wi + wj) / 2
    a = 40 / (wj - wi) ** 2
    root = cmath.sqrt(10 / a)
    R_star = glue_radius_factor(eps) * math.sqrt(abs(10 / a))
    return QuadraticGlue(w, a, w - root, w + root, R_star)


def eval_quadratic(q: QuadraticGlue, z):
    return q(z)


def figure_eight(q: QuadraticGlue, n_samples: int = SAMPLES) -> np.ndarray:
    """Closed polyline tracing p^{-1}(|zeta| = 10).

    Writing zeta = 10 e^{i theta}, zeta + 10 = 20 cos(theta/2) e^{i theta/2},
    so the lobe through z2 is w + sqrt(20 cos(theta/2)) e^{i theta/4} / sqrt(a)
    for theta in [-pi, pi]; the other lobe is its rotation by pi about w.
    Both lobes are traversed counter-clockwise and start/end at w.
    """
    if n_samples < 64:
        raise GlueError("need at least 64 samples")
    half = n_samples // 2
    theta = np.linspace(-np.pi, np.pi, half + 1)
    c = np.sin((np.pi - np.abs(theta)) / 2)  # = cos(theta/2), exactly 0 at the ends
    s = np.sqrt(20 * c) * np.exp(1j * theta / 4) / cmath.sqrt(q.a)
    lobe = q.w + s[:-1]
    return np.concatenate([lobe, q.w - s[:-1]])


def figure_eight_lobes(q: QuadraticGlue, n_samples: int = SAMPLES):
    curve = figure_eight(q, n_samples)
    half = len(curve) // 2
    return curve[:half], curve[half:]


def axis_angle(q: QuadraticGlue) -> float:
    """Direction (mod pi) of the line through z1, w, z2."""
    return -cmath.phase(q.a) / 2


@dataclass
class DiskBoundReport:
    eps: float
    radius: float
    max_abs_p: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.max_abs_p <= self.bound + 1e-9


def check_disk_bound(q: QuadraticGlue, eps: float, n_samples: int = SAMPLES,
                     zero: int = 1) -> DiskBoundReport:
    if eps <= 0:
        raise GlueError("eps must be positive")
    center = q.z1 if zero == 1 else q.z2
    radius = glue_radius_factor(eps) * q.half_span
    t = 2 * np.pi * np.arange(n_samples) / n_samples
    vals = np.abs(q(center + radius * np.exp(1j * t)))
    return DiskBoundReport(eps, radius, float(vals.max()), 10 * eps)


@dataclass
class ContainmentCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs


@dataclass
class ContainmentReport:
    checks: list[ContainmentCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[str]:
        return [f"{c.name}: {c.lhs:.6g} !< {c.rhs:.6g}" for c in self.checks if not c.passed]

    def raise_on_failure(self) -> None:
        if not self.passed:
            raise GlueError("; ".join(self.failures()))


def validate_containment(q: QuadraticGlue, plan: SeparationPlan,
                         branch_disks=None) -> ContainmentReport:
    """Check the glue disks fit the separation plan.

    unit_disk:      T + R* < 1, i.e. |a| > 10 ((sqrt(6/5)-1)/(1-T))^2
    delta_bound:    (sqrt(6/5) - 1) d > 2 delta r with d = d_lower
    delta_disk:     delta r < R*
    branch_inside:  optional; each inverse-branch disk sits strictly inside
                    its glue disk B(zero, R*)
    """
    rep = ContainmentReport()
    k = glue_radius_factor(GLUE_EPS)
    rep.checks.append(ContainmentCheck("unit_disk", plan.T + q.R_star, 1.0))
    rep.checks.append(ContainmentCheck("delta_bound", 2 * plan.delta * plan.r, k * plan.d_lower))
    rep.checks.append(ContainmentCheck("delta_disk", plan.delta * plan.r, q.R_star))
    if branch_disks is not None:
        for n, d in enumerate(branch_disks):
            zero = q.z1 if abs(d.center - q.z1) <= abs(d.center - q.z2) else q.z2
            rep.checks.append(ContainmentCheck(f"branch_inside[{n}]",
                                               abs(d.center - zero) + d.radius, q.R_star))
    return rep


def filled_set_radius(q: QuadraticGlue, iterations: int = 200) -> float:
    """Radius of a disk about 0 containing the filled Julia set of p.

    Iterates R <- |w| + |10/a|^(1/2) sqrt(1 + R/10) from R = 10, using
    p^{-1}(B(0, R)) within B(w, sqrt((R + 10)/|a|)).
    """
    R = 10.0
    for _ in range(iterations):
        R_new = abs(q.w) + q.half_span * math.sqrt(1 + R / 10)
        if abs(R_new - R) < 1e-15:
            break
        R = R_new
    return R
