"""A uniformly quasiregular map whose Julia set is a given disk-OSC attractor.

Piece layout of f (m maps phi_i with image disks E_i = phi_i(B)):

    E_i                     phi_i^{-1}                               conformal
    D_i minus E_i           ring interpolation                       ring
    |z| <= 1 off all D_i    core = h4 o h3 o h2 o h1                 core
    1 < |z| < 3/2           sector extensions                        sector
    |z| >= 3/2              z**m                                     power

h1 shrinks each D_i onto B(w_i, eps) inside a thin ring R_i around it; h2
pushes those small disks to v_i = (1 - 2 eps) omega_i by hops, each hop a
translation inside a carrier disk; h3 = z^m collapses them onto one blob K;
h4 maps the unit disk minus K onto 3/2 < |w| < 2 with the unit circle going
to |w| = 2 as u -> 2u.  On |z| = 1 the core therefore equals 2 z^m, which the
sector pieces interpolate to z^m on |z| = 3/2.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .ifs_core import ConformalIFS, attractor_chaos_game, require_valid
from .plane_geometry import Disk, Mobius, UNIT_DISK, normalize_circle_pair, winding_number
from .qc_tools import (RingInterpolation, SectorExtension, StarRingMap, beltrami_estimate,
                       extend_sector)
from .rendering import (GridMask, PixelGrid, distance_to_cloud_pixels, hausdorff_pixels,
                        track_pixel_disks)

CORE_INNER = 1.9
CORE_OUTER = 2.0
SECTOR_OUTER = 1.9
ESCAPE_THRESHOLD = 2.0
CONFIRM_STEPS = 3
TRACE_SAMPLES = 2048
SEAM_SAMPLES = 512
SEAM_TOL = 1e-6
MAX_ORDERS = 720
HOP_LENGTH = 1.0      # in units of eps
CARRIER_CAP = 0.5

TAGS = ("conformal", "ring", "core", "sector", "power")
TAG_LETTERS = "CRKSP"
GRAMMAR = re.compile(r"C*[RK]?S?P*")


class UqrError(ValueError):
    pass


# -- open set condition --------------------------------------------------------

@dataclass
class OSCReport:
    passes: bool
    gaps: np.ndarray
    margins: np.ndarray
    reasons: list = field(default_factory=list)

    @property
    def min_gap(self) -> float:
        off = self.gaps[~np.eye(len(self.gaps), dtype=bool)]
        return float(off.min()) if off.size else math.inf

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())


def check_strong_disk_osc(ifs: ConformalIFS) -> OSCReport:
    """Closed image disks inside the open unit disk, pairwise disjoint."""
    require_valid(ifs)
    a, b = np.abs(ifs.a), ifs.b
    gaps = np.abs(b[:, None] - b[None, :]) - a[:, None] - a[None, :]
    np.fill_diagonal(gaps, np.inf)
    margins = 1 - (np.abs(b) + a)
    reasons = [f"image disk {i} not inside the unit disk (margin {margins[i]:.4g})"
               for i in np.flatnonzero(margins <= 0)]
    for i, j in zip(*np.nonzero(np.triu(gaps <= 0, 1))):
        reasons.append(f"image disks {i} and {j} meet (gap {gaps[i, j]:.4g})")
    np.fill_diagonal(gaps, np.nan)
    return OSCReport(not reasons, gaps, margins, reasons)


# -- transport of the eps-disks -------------------------------------------------

@dataclass(frozen=True)
class Hop:
    index: int
    start: complex
    end: complex
    carrier: Disk

    @property
    def shift(self) -> complex:
        return self.end - self.start


def hop_carrier(start: complex, end: complex, eps: float, obstacles=()) -> Disk | None:
    """Widest admissible carrier disk for one hop, or None.

    The carrier is centred at the hop midpoint and must hold both positions
    of the moving eps-disk with clearance kappa = eps/4, stay kappa/2 inside
    the unit circle and keep kappa/2 away from every other eps-disk.  A wide
    carrier spreads the shear of the push over a thick layer.
    """
    kappa = eps / 4
    c = (start + end) / 2
    need = abs(end - start) / 2 + eps + kappa
    allowed = min(1 - kappa / 2 - abs(c), CARRIER_CAP)
    obstacles = np.asarray(obstacles, complex)
    if obstacles.size:
        allowed = min(allowed, float(np.abs(obstacles - c).min()) - eps - kappa / 2)
    if allowed < need:
        return None
    return Disk(c, allowed)


def carrier_clear(F: Disk, others, eps: float) -> bool:
    """Carrier inside the unit disk and clear of the other eps-disks."""
    kappa = eps / 4
    if abs(F.center) + F.radius > 1 - kappa / 2 + 1e-12:
        return False
    others = np.asarray(others, complex)
    return bool(np.all(np.abs(others - F.center) >= F.radius + eps + kappa / 2 - 1e-12))


def split_hops(index: int, start: complex, end: complex, eps: float, obstacles=()):
    """Hops of length at most eps along a segment, or None if some hop has
    no admissible carrier even after shortening."""
    hops, pos = [], complex(start)
    end = complex(end)
    while abs(end - pos) > 1e-15:
        step = min(abs(end - pos), HOP_LENGTH * eps)
        while True:
            # snap to the endpoint when accumulated rounding leaves a sliver
            nxt = end if step >= abs(end - pos) - 1e-12 else pos + step * (end - pos) / abs(end - pos)
            F = hop_carrier(pos, nxt, eps, obstacles)
            if F is not None:
                break
            step /= 2
            if step < eps / 16:
                return None
        hops.append(Hop(index, pos, nxt, F))
        pos = nxt
    return hops


def plan_push_path(start: complex, goal: complex, obstacles, eps: float):
    """Obstacle-avoiding polyline on a lattice of spacing eps/2, or None."""
    obstacles = np.asarray(obstacles, complex)
    step = eps / 2
    lim = 1.0
    ax = np.arange(-lim, lim + step / 2, step)
    X, Y = np.meshgrid(ax, ax)
    nodes = (X + 1j * Y).ravel()
    nodes = nodes[np.abs(nodes) <= 1 - 2 * eps]
    if obstacles.size:
        d = np.abs(nodes[:, None] - obstacles[None, :]).min(axis=1)
        nodes = nodes[d >= 2.5 * eps]
    nodes = np.concatenate([[start, goal], nodes])
    edges_i, edges_j, w = [], [], []
    nbr = [step, 1j * step, step + 1j * step, step - 1j * step]
    index = {complex(round(z.real / step), round(z.imag / step)): k
             for k, z in enumerate(nodes[2:], start=2)}
    for k, z in enumerate(nodes[2:], start=2):
        key = complex(round(z.real / step), round(z.imag / step))
        for dz in nbr:
            other = index.get(key + complex(round(dz.real / step), round(dz.imag / step)))
            if other is not None:
                edges_i.append(k)
                edges_j.append(other)
                w.append(abs(dz))
    for k, end in ((0, start), (1, goal)):
        near = np.flatnonzero(np.abs(nodes[2:] - end) <= 1.5 * step) + 2
        for n in near:
            edges_i.append(k)
            edges_j.append(int(n))
            w.append(abs(nodes[n] - end) + 1e-12)
    keep = [n for n in range(len(w))
            if hop_carrier(nodes[edges_i[n]], nodes[edges_j[n]], eps, obstacles) is not None]
    if not keep:
        return None
    ii = np.array(edges_i)[keep]
    jj = np.array(edges_j)[keep]
    ww = np.array(w)[keep]
    G = coo_matrix((ww, (ii, jj)), shape=(len(nodes), len(nodes))).tocsr()
    dist, pred = dijkstra(G, directed=False, indices=0, return_predecessors=True)
    if not np.isfinite(dist[1]):
        return None
    path = [1]
    while path[-1] != 0:
        path.append(int(pred[path[-1]]))
    return [complex(nodes[k]) for k in reversed(path)]


def assign_targets(w: np.ndarray, m: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest matching of the w_i to v_k = (1 - 2 eps) omega^k."""
    v = (1 - 2 * eps) * np.exp(2j * np.pi * np.arange(m) / m)
    cost = np.abs(w[:, None] - v[None, :])
    rows, cols = linear_sum_assignment(cost)
    sigma = np.empty(m, dtype=int)
    sigma[rows] = cols
    return v, sigma


def plan_pushes(w: np.ndarray, v_of: np.ndarray, eps: float, max_orders: int = MAX_ORDERS):
    """Hops moving each eps-disk from w_i to v_of[i], one disk at a time.

    Straight-line hops in some movement order are tried first; when no order
    works, each blocked disk follows a lattice polyline instead.
    """
    m = len(w)

    def attempt(order, allow_detour):
        pos = np.array(w, complex)
        hops = []
        for i in order:
            others = np.delete(pos, i)
            path = split_hops(i, pos[i], v_of[i], eps, others)
            if path is None:
                if not allow_detour:
                    return None
                poly = plan_push_path(pos[i], v_of[i], others, eps)
                if poly is None:
                    return None
                path = []
                for p, q in zip(poly[:-1], poly[1:]):
                    seg = split_hops(i, p, q, eps, others)
                    if seg is None:
                        return None
                    path += seg
            hops += path
            pos[i] = v_of[i]
        return hops

    for n, order in enumerate(itertools.permutations(range(m))):
        if n >= max_orders:
            break
        hops = attempt(order, False)
        if hops is not None:
            return hops, tuple(order), False
    hops = attempt(tuple(range(m)), True)
    if hops is None:
        raise UqrError("push: no obstacle-free transport for the eps-disks; reduce eps")
    return hops, tuple(range(m)), True


# -- sector geodesics ------------------------------------------------------------

class AnnulusGeodesic:
    """Hyperbolic geodesic of the round annulus 0 < s < L (s = log|z|) joining
    angle theta_in on s = 0 to theta_out on s = L, in universal-cover
    coordinates.  exp(pi (theta + i s) / L) sends the strip to the upper half
    plane, where the geodesic is a half circle centred on the real axis."""

    def __init__(self, L: float, theta_in: float, theta_out: float, samples: int = 4097):
        self.L, self.theta_in, self.theta_out = L, theta_in, theta_out
        xb = -math.exp(math.pi * (theta_out - theta_in) / L)
        self._c = (1 + xb) / 2
        self._R = (1 - xb) / 2
        self.radial = abs(theta_out - theta_in) < 1e-15
        if not self.radial:
            s = np.linspace(0, L, samples)
            z = np.exp(s + 1j * self.theta(s))
            cum = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(z)))])
            self._frac = CubicSpline(s, cum / cum[-1])

    def theta(self, s):
        s = np.asarray(s, float)
        if self.radial:
            return np.full(s.shape, self.theta_in)
        cpsi = np.cos(np.pi * s / self.L)
        t = self._c * cpsi + np.sqrt(self._c ** 2 * cpsi ** 2 - self._c ** 2 + self._R ** 2)
        return self.theta_in + self.L / np.pi * np.log(t)

    def arclength_fraction(self, s):
        s = np.asarray(s, float)
        if self.radial:
            return np.expm1(s) / math.expm1(self.L)
        return self._frac(s)


# -- plan --------------------------------------------------------------------------

@dataclass
class UqrPlan:
    ifs: ConformalIFS
    osc: OSCReport
    m: int
    eps: float
    caps: dict
    clearance: float
    E: list
    D: list
    R_outer: np.ndarray
    w: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    hops: list
    order: tuple
    detour_used: bool
    geodesics: list
    gamma: tuple

    @property
    def targets(self) -> np.ndarray:
        return self.v[self.sigma]


def eps_caps(osc: OSCReport, m: int) -> dict:
    s = math.sin(math.pi / m) if m > 1 else 1.0
    return {
        "gap/8": osc.min_gap / 8,
        "margin/4": osc.min_margin / 4,
        "0.1": 0.1,
        # carriers of the last hops clear the neighbouring targets
        "target_spacing": 2 * s / (3 + 4 * s),
    }


def plan_uqr(ifs: ConformalIFS, eps: float | None = None) -> UqrPlan:
    osc = check_strong_disk_osc(ifs)
    if not osc.passes:
        raise UqrError("strong disk open set condition fails: " + "; ".join(osc.reasons))
    m = len(ifs)
    if m < 2:
        raise UqrError("need at least two maps (the exterior map z^m must have degree >= 2)")
    caps = eps_caps(osc, m)
    binding = min(caps, key=caps.get)
    if eps is None:
        eps = caps[binding]
    elif not 0 < eps <= caps[binding]:
        raise UqrError(f"eps = {eps:g} violates the {binding} constraint (cap {caps[binding]:.6g})")
    a, b = np.abs(ifs.a), ifs.b
    clearance = min(osc.min_gap, osc.min_margin)
    E = [Disk(c, r) for c, r in zip(b, a)]
    D = [Disk(c, r + clearance / 4) for c, r in zip(b, a)]
    R_outer = a + 3 * clearance / 8
    w = b.copy()
    v, sigma = assign_targets(w, m, eps)
    hops, order, detour = plan_pushes(w, v[sigma], eps)
    L = math.log(SECTOR_OUTER)
    geos = [AnnulusGeodesic(L, 2 * math.pi * k / m, 2 * math.pi * k / m) for k in range(m)]
    return UqrPlan(ifs, osc, m, float(eps), caps, clearance, E, D, R_outer, w, v, sigma,
                   hops, order, detour, geos, (CORE_OUTER, SECTOR_OUTER ** m))


# -- the map -----------------------------------------------------------------------

def _wrap(x):
    return np.angle(np.exp(1j * x))


class UqrMap:
    def __init__(self, plan: UqrPlan):
        self.plan = plan
        self.m = plan.m
        m, eps = plan.m, plan.eps
        self.phi_a = plan.ifs.a
        self.phi_b = plan.ifs.b
        self._b = plan.ifs.b
        self._rE = np.abs(plan.ifs.a)
        self._rD = np.array([d.radius for d in plan.D])
        self._rR = plan.R_outer
        # h1
        self.h1_rings = []
        for i, d in enumerate(plan.D):
            c, rho = d.center, d.radius
            psi = (lambda z, c=c, rho=rho: c + eps * (z - c) / rho)
            ring = RingInterpolation(Disk(c, plan.R_outer[i]), d, psi, lambda z: z,
                                     target_frame=Mobius.translation(-c))
            self.h1_rings.append((c, rho, psi, ring))
        # h2
        self.h2_rings = []
        for hop in plan.hops:
            F = hop.carrier
            frame = normalize_circle_pair(F, Disk(hop.end, eps)).forward
            shift = hop.shift
            ring = RingInterpolation(F, Disk(hop.start, eps), lambda z, s=shift: z + s,
                                     lambda z: z, target_frame=frame)
            self.h2_rings.append((hop, ring))
        # h4
        s = 2 * np.pi * np.arange(TRACE_SAMPLES) / TRACE_SAMPLES
        blob = (plan.v[0] + eps * np.exp(1j * s)) ** m
        self.blob = blob
        self.h4 = StarRingMap(UNIT_DISK, blob, CORE_INNER, CORE_OUTER)
        # D_i minus E_i rings
        self.d_rings = []
        for i, (dk, ek) in enumerate(zip(plan.D, plan.E)):
            a_i, b_i = self.phi_a[i], self.phi_b[i]
            ring = RingInterpolation(dk, ek, lambda z, a=a_i, b=b_i: (z - b) / a, self.core)
            self.d_rings.append(ring)
        # sectors
        self.sectors = [self._sector(k) for k in range(m)]

    # core stages
    def h1(self, z):
        z = np.asarray(z, complex)
        out = z.copy()
        for c, rho, psi, ring in self.h1_rings:
            d = np.abs(z - c)
            inner = d <= rho
            mid = ~inner & (d <= ring.outer.radius)
            out[inner] = psi(z[inner])
            if mid.any():
                out[mid] = ring(z[mid])
        return out

    def h2(self, z):
        z = np.array(z, complex)
        eps = self.plan.eps
        for hop, ring in self.h2_rings:
            d = np.abs(z - hop.start)
            inner = d <= eps
            mid = ~inner & (np.abs(z - hop.carrier.center) <= hop.carrier.radius)
            if mid.any():
                z[mid] = ring(z[mid])
            z[inner] = z[inner] + hop.shift
        return z

    def h3(self, z):
        return np.asarray(z, complex) ** self.m

    def core(self, z):
        return self.h4(self.h3(self.h2(self.h1(z))))

    def _sector(self, k: int) -> SectorExtension:
        m, L = self.m, math.log(SECTOR_OUTER)
        g0, g1 = self.plan.geodesics[k], self.plan.geodesics[(k + 1) % m]
        lift = 2 * math.pi if k == m - 1 else 0.0
        lo, hi = self.plan.gamma
        left = g0.theta
        right = (lambda s: g1.theta(s) + lift)
        width0 = float(right(np.array(0.0)) - left(np.array(0.0)))
        beta = float(left(np.array(L)))
        width1 = float(right(np.array(L))) - beta

        def side(g, u, im):
            frac = g.arclength_fraction(np.asarray(u, float) * L)
            return np.log(lo + (hi - lo) * frac) + 1j * im

        def inner(v):
            v = np.asarray(v, float)
            val = self.core(np.exp(1j * (left(np.zeros_like(v)) + v * width0)))
            y = 2 * np.pi * v + _wrap(np.angle(val) - 2 * np.pi * v)
            return np.log(np.abs(val)) + 1j * y

        def outer(v):
            v = np.asarray(v, float)
            th = beta + v * width1
            return m * L + 1j * m * (th - beta)

        probe = inner(np.linspace(0, 1, 257))
        if np.abs(probe.imag - 2 * np.pi * np.linspace(0, 1, 257)).max() > np.pi / 2:
            raise UqrError(f"sector {k}: core trace on the unit circle is not close to 2 z^m")
        return extend_sector(0.0, L, left, right,
                             lambda u: side(g0, u, 0.0), lambda u: side(g1, u, 2 * np.pi),
                             inner, outer)

    def sector(self, z):
        z = np.asarray(z, complex)
        s = np.log(np.abs(z))
        left0 = self.plan.geodesics[0].theta(s)
        phi = np.mod(np.angle(z) - left0, 2 * np.pi)
        k = np.minimum((phi * self.m / (2 * np.pi)).astype(int), self.m - 1)
        out = np.empty_like(z)
        for j in np.unique(k):
            sel = k == j
            zeta = s[sel] + 1j * (left0[sel] + phi[sel])
            out[sel] = np.exp(self.sectors[j](zeta))
        return out

    def power(self, z):
        return z ** self.m

    def piece_index(self, z) -> np.ndarray:
        z = np.asarray(z, complex)
        r = np.abs(z)
        idx = np.full(z.shape, 2, dtype=np.int8)
        idx[r >= SECTOR_OUTER] = 4
        idx[(r > 1) & (r < SECTOR_OUTER)] = 3
        for i in range(self.m):
            d = np.abs(z - self._b[i])
            idx[d <= self._rD[i]] = 1
            idx[d <= self._rE[i]] = 0
        return idx

    def evaluate(self, z):
        """Images and piece indices (into TAGS)."""
        z = np.asarray(z, complex)
        idx = self.piece_index(z)
        out = np.empty_like(z)
        s = idx == 4
        out[s] = self.power(z[s])
        s = idx == 3
        if s.any():
            out[s] = self.sector(z[s])
        s = idx == 2
        if s.any():
            out[s] = self.core(z[s])
        for i in range(self.m):
            d = np.abs(z - self._b[i])
            e = (idx == 0) & (d <= self._rE[i])
            out[e] = (z[e] - self.phi_b[i]) / self.phi_a[i]
            r = (idx == 1) & (d <= self._rD[i])
            if r.any():
                out[r] = self.d_rings[i](z[r])
        return out, idx

    def __call__(self, z):
        scalar = np.ndim(z) == 0
        out = self.evaluate(np.atleast_1d(np.asarray(z, complex)))[0]
        return complex(out[0]) if scalar else out


def build_uqr(plan: UqrPlan) -> UqrMap:
    try:
        f = UqrMap(plan)
    except (ValueError, ArithmeticError) as exc:
        raise UqrError(f"build failed: {exc}") from exc
    seams = seam_audit(f)
    bad = {k: v for k, v in seams.items() if not v < SEAM_TOL}
    if bad:
        name, val = max(bad.items(), key=lambda kv: kv[1])
        raise UqrError(f"seam {name} mismatch {val:.3e} exceeds {SEAM_TOL:g}")
    f.seams = seams
    return f


def evaluate_uqr(f: UqrMap, z):
    scalar = np.ndim(z) == 0
    out, idx = f.evaluate(np.atleast_1d(np.asarray(z, complex)))
    if scalar:
        return complex(out[0]), TAGS[int(idx[0])]
    return out, np.array(TAGS)[idx]


# -- audits ------------------------------------------------------------------------

def seam_audit(f: UqrMap, n: int = SEAM_SAMPLES) -> dict:
    """Max mismatch between the formulas of adjacent pieces on shared curves."""
    t = 2 * np.pi * (np.arange(n) + 0.5) / n
    circ = np.exp(1j * t)
    out = {}
    for i in range(f.m):
        b, a = f.phi_b[i], f.phi_a[i]
        ze = b + f._rE[i] * circ
        out[f"E{i}|ring"] = float(np.abs((ze - b) / a - f.d_rings[i](ze)).max())
        zd = b + f._rD[i] * circ
        out[f"D{i}|core"] = float(np.abs(f.d_rings[i](zd) - f.core(zd)).max())
        c, rho, psi, ring = f.h1_rings[i]
        zi, zo = c + rho * circ, c + ring.outer.radius * circ
        out[f"h1:{i}:inner"] = float(np.abs(ring(zi) - psi(zi)).max())
        out[f"h1:{i}:outer"] = float(np.abs(ring(zo) - zo).max())
    hop_in = hop_out = 0.0
    for hop, ring in f.h2_rings:
        zi = hop.start + f.plan.eps * circ
        zo = hop.carrier.center + hop.carrier.radius * circ
        hop_in = max(hop_in, float(np.abs(ring(zi) - (zi + hop.shift)).max()))
        hop_out = max(hop_out, float(np.abs(ring(zo) - zo).max()))
    out["h2:inner"] = hop_in
    out["h2:outer"] = hop_out
    out["unit|sector"] = float(np.abs(f.core(circ) - f.sector(circ * (1 + 1e-15))).max())
    zs = SECTOR_OUTER * circ
    out["sector|power"] = float(np.abs(f.sector(zs * (1 - 1e-15)) - f.power(zs)).max())
    u = (np.arange(n) + 0.5) / n
    worst = 0.0
    for k in range(f.m):
        # top side of sector k-1 and bottom side of sector k share geodesic k
        a1 = np.exp(f.sectors[k - 1].evaluate_params(u, np.ones_like(u)))
        a2 = np.exp(f.sectors[k].evaluate_params(u, np.zeros_like(u)))
        worst = max(worst, float(np.abs(a1 - a2).max()))
    out["sector|sector"] = worst
    return out


def degree(f, radius: float = 3.0, n: int = 4096) -> int:
    t = 2 * np.pi * np.arange(n) / n
    return winding_number(np.asarray(f(radius * np.exp(1j * t))), 0j)


def iterate_escape(f: UqrMap, z0, max_iter: int, record_tags: bool = False):
    """Escape times (|z| > 2 then three steps of growth); -1 when bounded.

    With record_tags, also returns per-orbit tag strings up to the end of the
    confirmation window.
    """
    z = np.atleast_1d(np.asarray(z0, complex)).copy()
    n = z.size
    first = np.full(n, -1)
    done = np.zeros(n, dtype=bool)
    prev = np.abs(z)
    tags = [[] for _ in range(n)] if record_tags else None
    with np.errstate(all="ignore"):
        for k in range(max_iter + CONFIRM_STEPS):
            live = ~done
            if k >= max_iter:
                live &= first >= 0
            if not live.any():
                break
            lv = np.flatnonzero(live)
            new, idx = f.evaluate(z[lv])
            z[lv] = new
            if record_tags:
                for p, t in zip(lv, idx):
                    tags[p].append(TAG_LETTERS[t])
            a = np.abs(new)
            a[~np.isfinite(a)] = np.inf
            grew = a > prev[lv]
            tracking = first[lv] >= 0
            first[lv[tracking & ~grew]] = -1
            start = (first[lv] < 0) & (a > ESCAPE_THRESHOLD)
            first[lv[start]] = k + 1
            conf = (first[lv] >= 0) & (k + 1 - first[lv] >= CONFIRM_STEPS)
            done[lv[conf]] = True
            prev[lv] = a
    esc = np.where(done, first, -1)
    if record_tags:
        return esc, ["".join(t) for t in tags]
    return esc


def tag_audit(f: UqrMap, cloud, n_orbits: int = 10_000, seed: int = 0, max_iter: int = 200,
              px: float = 4.3e-3):
    """Grammar check of piece tags along escaping orbits.

    Half the orbits start near the attractor (cloud point plus a pixel-scale
    offset), half uniformly in [-1.6, 1.6]^2.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    half = n_orbits // 2
    pts = np.asarray(getattr(cloud, "points", cloud))
    near = pts[rng.integers(0, pts.size, half)] + px * (rng.random(half) - 0.5 + 1j * (rng.random(half) - 0.5))
    far = 1.6 * (2 * rng.random(n_orbits - half) - 1 + 1j * (2 * rng.random(n_orbits - half) - 1))
    z0 = np.concatenate([near, far])
    esc, tags = iterate_escape(f, z0, max_iter, record_tags=True)
    bad = [k for k, (e, t) in enumerate(zip(esc, tags)) if e < 0 or not GRAMMAR.fullmatch(t)]
    return {"orbits": int(z0.size), "violations": len(bad),
            "non_escaping": int(np.sum(esc < 0)),
            "max_conformal_prefix": int(max(len(t) - len(t.lstrip("C")) for t in tags)),
            "examples": [tags[k] for k in bad[:5]]}


def distortion_samples(f: UqrMap, n: int = 4096, seed: int = 0) -> np.ndarray:
    """Random points over all non-conformal pieces plus a sprinkling elsewhere."""
    rng = np.random.Generator(np.random.Philox(seed))

    def annulus(c, r0, r1, k):
        rad = np.sqrt(r0 ** 2 + (r1 ** 2 - r0 ** 2) * rng.random(k))
        return c + rad * np.exp(2j * np.pi * rng.random(k))

    parts = [annulus(0, 0, 1, n), annulus(0, 1, SECTOR_OUTER, n // 2),
             annulus(0, SECTOR_OUTER, 3, n // 8)]
    for i in range(f.m):
        parts.append(annulus(f.phi_b[i], f._rE[i], f._rD[i], n // 4))
        parts.append(annulus(f.phi_b[i], f._rD[i], f._rR[i], n // 4))
        parts.append(annulus(f.phi_b[i], 0, f._rE[i], n // 16))
    return np.concatenate(parts)


def iterate_distortion(f: UqrMap, max_n: int = 3, n: int = 4096, seed: int = 0,
                       words_per_level: int = 8, h: float = 1e-7) -> dict:
    """sup K of f^n at S_n = S_1 plus phi_w(S_1) for words w of length n-1.

    The pulled-back copies put the non-conformal pieces at the last step.
    """
    rng = np.random.Generator(np.random.Philox(seed + 1))
    S1 = distortion_samples(f, n, seed)
    out = {}
    for k in range(1, max_n + 1):
        pts = [S1]
        if k > 1:
            all_w = list(itertools.product(range(f.m), repeat=k - 1))
            pick = (all_w if len(all_w) <= words_per_level
                    else [all_w[i] for i in rng.choice(len(all_w), words_per_level, replace=False)])
            for word in pick:
                z = S1.copy()
                for i in reversed(word):
                    z = f.phi_a[i] * z + f.phi_b[i]
                pts.append(z)
        z = np.concatenate(pts)

        def fk(x, k=k):
            for _ in range(k):
                x = f.evaluate(x)[0]
            return x

        rep = beltrami_estimate(fk, z, h=h)
        out[k] = rep
    return out


def escape_level(f: UqrMap, pixel_size: float, seed: int = 0, n: int = 4096) -> int:
    """Escape time marking pixel-scale closeness to S.

    With k the deepest level whose cylinder disks phi_w(B), |w| = k, are at
    least a pixel across, points of those disks follow k inverse branches
    before reaching the core region, and core points need a fixed number of
    further steps to pass |z| = 2.  Pixels escaping no sooner than the sum
    form the pixel-scale neighbourhood of S.
    """
    depth = math.floor(math.log(pixel_size) / math.log(float(np.abs(f.phi_a).max())))
    rng = np.random.Generator(np.random.Philox(seed + 11))
    z = np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
    z = z[f.piece_index(z) == 2]
    core_time = int(iterate_escape(f, z, 20).min()) if z.size else 0
    return depth + core_time


def verify_uqr(f: UqrMap, grid: PixelGrid, max_iter: int = 60, n_cloud: int = 100_000,
               seed: int = 0, n_orbits: int = 10_000, distortion: bool = True) -> dict:
    """J(f) = S evidence at pixel scale plus structural audits."""
    ifs = f.plan.ifs
    cloud = attractor_chaos_game(ifs, n_cloud, seed=seed)
    mask, info = track_pixel_disks(grid, ifs.a, ifs.b, max_iter)
    gm = GridMask(grid, mask, dict(info, method="pixel-disk pullback through phi_i^{-1}"))
    esc = iterate_escape(f, grid.coords().ravel(), max_iter)
    stuck = esc < 0
    dist = (distance_to_cloud_pixels(grid, grid.coords().ravel()[stuck], cloud)
            if stuck.any() else np.zeros(0))
    m = f.m
    zz = 2 + 3 * np.random.Generator(np.random.Philox(seed)).random(4096)
    zz = zz * np.exp(2j * np.pi * np.random.Generator(np.random.Philox(seed + 7)).random(4096))
    exterior_exact = bool(np.array_equal(f(zz), zz ** m))
    level = escape_level(f, grid.pixel_size, seed)
    slow = GridMask(grid, ((esc < 0) | (esc >= level)).reshape(grid.resolution, grid.resolution))
    metrics = {
        "system": ifs.label,
        "m": m,
        "eps": f.plan.eps,
        "hausdorff_px": hausdorff_pixels(gm, cloud),
        "mask_pixels": int(mask.sum()),
        "escape_time_max": int(esc.max()),
        "non_escaping_pixels": int(stuck.sum()),
        "escape_level": level,
        "escape_hausdorff_px": hausdorff_pixels(slow, cloud),
        "dichotomy_ok": bool(np.all(dist <= 3)),
        "exterior_exact": exterior_exact,
        "degree": degree(f),
        "seams": dict(f.seams),
        "seam_max": max(f.seams.values()),
        "tag_audit": tag_audit(f, cloud, n_orbits, seed, px=grid.pixel_size),
    }
    if distortion:
        reps = iterate_distortion(f, seed=seed)
        k1 = reps[1].K_estimate
        metrics["K"] = {str(k): r.K_estimate for k, r in reps.items()}
        metrics["K_spread"] = max(abs(r.K_estimate / k1 - 1) for r in reps.values())
    metrics["passed"] = bool(
        metrics["hausdorff_px"] < 3 and metrics["escape_hausdorff_px"] < 3
        and metrics["dichotomy_ok"] and exterior_exact
        and metrics["degree"] == m and metrics["seam_max"] < SEAM_TOL
        and metrics["tag_audit"]["violations"] == 0
        and metrics.get("K_spread", 0) <= 0.05)
    metrics["_mask"] = gm
    metrics["_escape_time"] = esc.reshape(grid.resolution, grid.resolution)
    return metrics
