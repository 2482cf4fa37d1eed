"""Degree-two generators glued from IFS inverse branches and a quadratic.

Each generator g_j owns five pieces, selected in this priority order:

    inverse_f    f_i^{-1} on the closed disk f_i(B)
    inverse_psi  psi_j^{-1} on the closed disk psi_j(B)
    ring_f       ring interpolation on B(w_i, R*) minus f_i(B)
    ring_psi     ring interpolation on B(w_j, R*) minus psi_j(B)
    quad         p_j(z) = a (z - w)^2 - 10 everywhere else

The ring pieces take the unit-circle trace of the inverse branch on their
inner circle and the trace of p_j on their outer circle, so g_j is continuous
by construction; build time audits this on sampled seams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ifs_core import ConformalIFS, SeparationPlan, build_separation_plan, DEFAULT_DELTA
from .plane_geometry import AffineContraction, Disk, image_disk, winding_number, UNIT_DISK
from .qc_tools import RingInterpolation, beltrami_estimate, DistortionReport
from .quad_glue import (GLUE_EPS, GlueError, QuadraticGlue, build_quadratic,
                        filled_set_radius, validate_containment)
from .rendering import GridMask, PixelGrid, track_pixel_disks

SEAM_TOL = 1e-6
SEAM_SAMPLES = 512
ESCAPE_RADIUS = 10.0
CONFIRM_STEPS = 3
PROBE_RADIUS = 5.0

PIECES = ("inverse_f", "inverse_psi", "ring_f", "ring_psi", "quad")
ANALYTIC, INTERPOLATED = "Analytic", "Interpolated"
PIECE_KIND = {0: ANALYTIC, 1: ANALYTIC, 2: INTERPOLATED, 3: INTERPOLATED, 4: ANALYTIC}


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorPieces:
    j: int
    partner_index: int
    f: AffineContraction
    psi: AffineContraction
    f_disk: Disk
    psi_disk: Disk
    quad: QuadraticGlue
    glue_f: Disk
    glue_psi: Disk
    ring_f: RingInterpolation
    ring_psi: RingInterpolation
    seams: dict = field(default_factory=dict)

    def piece_index(self, z) -> np.ndarray:
        z = np.asarray(z, complex)
        idx = np.full(z.shape, 4, dtype=np.int8)
        for k, d in ((3, self.glue_psi), (2, self.glue_f), (1, self.psi_disk), (0, self.f_disk)):
            idx[d.contains(z)] = k
        return idx

    def evaluate_piece(self, k: int, z):
        z = np.asarray(z, complex)
        if k == 0:
            return self.f.inverse(z)
        if k == 1:
            return self.psi.inverse(z)
        if k == 2:
            return self.ring_f(z)
        if k == 3:
            return self.ring_psi(z)
        return self.quad(z)

    def __call__(self, z):
        return evaluate_generator(self, z)[0]


def _seam_error(g: GeneratorPieces, circle: Disk, a: int, b: int, n: int) -> float:
    pts = circle.boundary(n, phase=0.5 / n)
    return float(np.abs(g.evaluate_piece(a, pts) - g.evaluate_piece(b, pts)).max())


def build_generator(plan: SeparationPlan, j: int, eps: float = GLUE_EPS,
                    seam_samples: int = SEAM_SAMPLES, seam_tol: float = SEAM_TOL) -> GeneratorPieces:
    """Assemble g_j for the word map psi_j = plan.iterated.maps[j]."""
    if j in plan.f_indices:
        raise GeneratorError(f"index {j} is one of the separating maps f1, f2")
    maps = plan.iterated.maps
    partner = int(plan.partner[j])
    fi = maps[plan.f_indices[partner]]
    psi = maps[j]
    wi = fi.b / (1 - fi.a)
    wj = psi.b / (1 - psi.a)
    q = build_quadratic(wi, wj, eps)
    f_disk, psi_disk = image_disk(fi, UNIT_DISK), image_disk(psi, UNIT_DISK)
    rep = validate_containment(q, plan, branch_disks=[f_disk, psi_disk])
    try:
        rep.raise_on_failure()
    except GlueError as exc:
        raise GeneratorError(f"generator {j}: containment failed ({exc})") from None
    glue_f, glue_psi = Disk(wi, q.R_star), Disk(wj, q.R_star)
    ring_f = RingInterpolation(glue_f, f_disk, fi.inverse, q)
    ring_psi = RingInterpolation(glue_psi, psi_disk, psi.inverse, q)
    g = GeneratorPieces(j, partner, fi, psi, f_disk, psi_disk, q, glue_f, glue_psi, ring_f, ring_psi)
    g.seams = {
        "inverse_f|ring_f": _seam_error(g, f_disk, 0, 2, seam_samples),
        "ring_f|quad": _seam_error(g, glue_f, 2, 4, seam_samples),
        "inverse_psi|ring_psi": _seam_error(g, psi_disk, 1, 3, seam_samples),
        "ring_psi|quad": _seam_error(g, glue_psi, 3, 4, seam_samples),
    }
    bad = {k: v for k, v in g.seams.items() if not v < seam_tol}
    if bad:
        name, val = max(bad.items(), key=lambda kv: kv[1])
        raise GeneratorError(f"generator {j}: seam {name} mismatch {val:.3e} > {seam_tol:g}")
    return g


def evaluate_generator(g: GeneratorPieces, z):
    """Image and piece kind (Analytic / Interpolated) for scalar or array z."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, complex))
    idx = g.piece_index(z)
    out = np.empty_like(z)
    for k in np.unique(idx):
        sel = idx == k
        out[sel] = g.evaluate_piece(int(k), z[sel])
    if scalar:
        return complex(out[0]), PIECE_KIND[int(idx[0])]
    return out, np.array([PIECE_KIND[int(k)] for k in idx.ravel()]).reshape(idx.shape)


def degree_check(g, radius: float = PROBE_RADIUS, n: int = 4096) -> int:
    """Winding number of t -> g(radius e^{it}) about 0."""
    t = 2 * np.pi * np.arange(n) / n
    return winding_number(np.asarray(g(radius * np.exp(1j * t))), 0j)


def ring_image_floor(q: QuadraticGlue) -> float:
    """min |p| on the glue circles |z - zero| = R*, i.e. 10 (2k - k^2) with
    k = R* / |10/a|^(1/2)."""
    k = q.R_star / q.half_span
    return 10 * (2 * k - k * k)


def escape_radius_ok(q: QuadraticGlue, R: float) -> bool:
    """|a|(x - |w|)^2 - 10 - x is positive and increasing for x >= R."""
    A, W = abs(q.a), abs(q.w)
    return R > W and A * (R - W) ** 2 - 10 > R and 2 * A * (R - W) > 1


@dataclass
class Semigroup:
    plan: SeparationPlan
    generators: list[GeneratorPieces]
    escape_radius: float = ESCAPE_RADIUS

    def __post_init__(self):
        gs = self.generators
        self._fa = np.array([g.f.a for g in gs])
        self._fb = np.array([g.f.b for g in gs])
        self._pa = np.array([g.psi.a for g in gs])
        self._pb = np.array([g.psi.b for g in gs])
        self._wi = np.array([g.glue_f.center for g in gs])
        self._wj = np.array([g.glue_psi.center for g in gs])
        self._R = np.array([g.quad.R_star for g in gs])
        self._qa = np.array([g.quad.a for g in gs])
        self._qw = np.array([g.quad.w for g in gs])

    def __len__(self):
        return len(self.generators)

    def piece_index(self, z, gi) -> np.ndarray:
        idx = np.full(z.shape, 4, dtype=np.int8)
        idx[np.abs(z - self._wj[gi]) <= self._R[gi]] = 3
        idx[np.abs(z - self._wi[gi]) <= self._R[gi]] = 2
        idx[np.abs(z - self._pb[gi]) <= np.abs(self._pa[gi])] = 1
        idx[np.abs(z - self._fb[gi]) <= np.abs(self._fa[gi])] = 0
        return idx

    def step(self, z, gi):
        """Apply generator gi[n] to z[n]; returns (images, piece indices)."""
        z = np.asarray(z, complex)
        gi = np.asarray(gi)
        idx = self.piece_index(z, gi)
        out = np.empty_like(z)
        s = idx == 4
        out[s] = self._qa[gi[s]] * (z[s] - self._qw[gi[s]]) ** 2 - 10
        s = idx == 0
        out[s] = (z[s] - self._fb[gi[s]]) / self._fa[gi[s]]
        s = idx == 1
        out[s] = (z[s] - self._pb[gi[s]]) / self._pa[gi[s]]
        for k, attr in ((2, "ring_f"), (3, "ring_psi")):
            s = np.flatnonzero(idx == k)
            for g in np.unique(gi[s]):
                sub = s[gi[s] == g]
                out[sub] = getattr(self.generators[g], attr)(z[sub])
        return out, idx

    def __call__(self, word, z):
        for g in word:
            z, _ = self.step(np.atleast_1d(np.asarray(z, complex)),
                             np.full(np.size(z), g))
        return z

    def inverse_branches(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct affine inverse-branch data (a, b) across all generators."""
        a = np.concatenate([self._fa, self._pa])
        b = np.concatenate([self._fb, self._pb])
        key = np.round(np.column_stack([a.real, a.imag, b.real, b.imag]), 13)
        _, keep = np.unique(key, axis=0, return_index=True)
        keep.sort()
        return a[keep], b[keep]


def build_semigroup(ifs_or_plan, delta: float = DEFAULT_DELTA, eps: float = GLUE_EPS,
                    escape_radius: float = ESCAPE_RADIUS) -> Semigroup:
    plan = ifs_or_plan
    if isinstance(ifs_or_plan, ConformalIFS):
        plan = build_separation_plan(ifs_or_plan, delta)
    gens = [build_generator(plan, j, eps) for j in range(plan.m) if j not in plan.f_indices]
    if not gens:
        raise GeneratorError("the iterated system has no maps besides f1 and f2")
    for g in gens:
        # orbits leaving the glue disks land outside B(0, floor) and stay there
        if not filled_set_radius(g.quad) < ring_image_floor(g.quad):
            raise GeneratorError(f"generator {g.j}: filled set of p_j reaches the ring images")
        if not escape_radius_ok(g.quad, escape_radius):
            raise GeneratorError(
                f"generator {g.j}: modulus growth not guaranteed beyond radius {escape_radius}")
    return Semigroup(plan, gens, escape_radius)


@dataclass
class OrbitTrace:
    points: list
    piece_tags: list
    escaped: bool
    escape_index: int | None = None

    @property
    def interpolated_count(self) -> int:
        return sum(t == INTERPOLATED for t in self.piece_tags)


def _word_matrix(n_gen: int, n_orbits: int, max_steps: int, word=None, seed=None) -> np.ndarray:
    if word is not None:
        word = np.asarray(word, dtype=np.int64)
        if word.size == 0:
            raise GeneratorError("a word must be non-empty")
        if word.min() < 0 or word.max() >= n_gen:
            raise GeneratorError("word letter out of range")
        col = np.resize(word, max_steps + CONFIRM_STEPS)
        return np.repeat(col[:, None], n_orbits, axis=1)
    rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
    return rng.integers(0, n_gen, size=(max_steps + CONFIRM_STEPS, n_orbits))


def run_orbits(sg: Semigroup, z0, max_steps: int = 200, word=None, seed=None,
               escape_radius: float | None = None, record: bool = False):
    """Iterate many orbits in lockstep.

    Letters come from `word` (repeated cyclically) when given, otherwise they
    are drawn uniformly from a seeded Philox stream.

    Escape is declared at the first step k with |z_k| > escape_radius once the
    modulus grows on each of the next three steps.  Returns
    (escaped, escape_index, interpolated_before_escape, non_quad_after_escape,
    path, tags) where path/tags are None unless record is set.
    """
    R = sg.escape_radius if escape_radius is None else escape_radius
    if R < 10:
        raise GeneratorError("escape_radius must be at least 10")
    z = np.atleast_1d(np.asarray(z0, complex)).copy()
    n = z.size
    words = _word_matrix(len(sg), n, max_steps, word, seed)
    first_out = np.full(n, -1)
    escaped = np.zeros(n, dtype=bool)
    failed_confirm = np.zeros(n, dtype=bool)
    interp = np.zeros(n, dtype=np.int64)
    late_non_quad = np.zeros(n, dtype=np.int64)
    prev_abs = np.abs(z)
    path = [z.copy()] if record else None
    tags = [] if record else None
    with np.errstate(all="ignore"):
        for k in range(max_steps + CONFIRM_STEPS):
            live = ~escaped & ~failed_confirm
            if k >= max_steps:
                live &= first_out >= 0
            if not live.any():
                break
            zl = z[live]
            finite = np.isfinite(zl)
            new = zl.copy()
            pidx = np.full(zl.shape, 4, dtype=np.int8)
            if finite.any():
                new[finite], pidx[finite] = sg.step(zl[finite], words[k, live][finite])
            new[~finite] = np.inf
            z[live] = new
            is_interp = (pidx == 2) | (pidx == 3)
            pre = first_out[live] < 0
            interp[live] += is_interp & pre
            late_non_quad[live] += (pidx != 4) & ~pre
            absn = np.abs(new)
            absn[~np.isfinite(absn)] = np.inf
            lv = np.flatnonzero(live)
            grew = absn > prev_abs[lv]
            # bookkeeping for the confirmation window
            tracking = first_out[lv] >= 0
            broke = tracking & ~grew
            first_out[lv[broke]] = -1
            just_out = (first_out[lv] < 0) & (absn > R)
            first_out[lv[just_out]] = k + 1
            confirmed = (first_out[lv] >= 0) & (k + 1 - first_out[lv] >= CONFIRM_STEPS)
            escaped[lv[confirmed]] = True
            prev_abs[lv] = absn
            if record:
                path.append(z.copy())
                t = np.full(n, -1, dtype=np.int8)
                t[lv] = pidx
                tags.append(t)
    esc_idx = np.where(escaped, first_out, -1)
    return escaped, esc_idx, interp, late_non_quad, path, tags


def run_orbit(sg: Semigroup, z0: complex, max_steps: int = 200, word=None, seed=None,
              escape_radius: float | None = None) -> OrbitTrace:
    esc, idx, _, _, path, tags = run_orbits(sg, [z0], max_steps, word, seed, escape_radius,
                                            record=True)
    pts = [complex(p[0]) for p in path]
    tg = [PIECE_KIND[int(t[0])] for t in tags if t[0] >= 0]
    pts = pts[: len(tg) + 1]
    return OrbitTrace(pts, tg, bool(esc[0]), int(idx[0]) if esc[0] else None)


def julia_estimate_grid(sg: Semigroup, grid: PixelGrid, max_steps: int = 60, seed: int = 0,
                        audit_pixels: int = 2048, audit_words: int = 4,
                        audit_steps: int = 200) -> GridMask:
    """Julia-set mask by pixel-disk tracking through the inverse branches.

    A pixel is marked when its circumscribed disk can be pulled back through
    inverse branches until it reaches unit size, i.e. when some word keeps a
    pixel-sized neighbourhood inside the generators' branch domains.  A
    seeded sample of unmarked pixels is then iterated forward under random
    words to confirm escape.
    """
    if not grid.contains_unit_disk():
        raise GeneratorError("the window must contain the closed unit disk")
    a, b = sg.inverse_branches()
    mask, info = track_pixel_disks(grid, a, b, max_steps)
    rng = np.random.Generator(np.random.Philox(seed))
    off = np.flatnonzero(~mask.ravel())
    pick = rng.choice(off, size=min(audit_pixels, off.size), replace=False) if off.size else off
    z0 = np.repeat(grid.coords().ravel()[pick], audit_words)
    esc = run_orbits(sg, z0, audit_steps, seed=seed + 1)[0]
    info.update({
        "method": "pixel-disk pullback",
        "max_steps": max_steps,
        "seed": seed,
        "inverse_branches": int(a.size),
        "audit_orbits": int(z0.size),
        "audit_escaped_fraction": float(esc.mean()) if esc.size else 1.0,
    })
    return GridMask(grid, mask, info)


def ring_samples(ring: RingInterpolation, nt: int = 12, nth: int = 48) -> np.ndarray:
    t = (np.arange(nt) + 0.5) / nt
    th = 2 * np.pi * (np.arange(nth) + 0.25) / nth
    T, TH = np.meshgrid(t, th, indexing="ij")
    return ring.source_point(T, TH).ravel()


def _sampled_generators(sg: Semigroup, limit: int) -> np.ndarray:
    return np.unique(np.linspace(0, len(sg) - 1, min(limit, len(sg))).round().astype(int))


def _ring_sample_sets(sg: Semigroup, limit: int):
    """Per sampled generator: ring samples, plus their images under f / psi
    (which the same generator pulls straight back into its rings)."""
    direct, deeper, owner = [], [], []
    for n in _sampled_generators(sg, limit):
        g = sg.generators[n]
        pf, pp = ring_samples(g.ring_f), ring_samples(g.ring_psi)
        direct += [pf, pp]
        deeper += [g.f(pf), g.psi(pp)]
        owner += [np.full(pf.size + pp.size, n)]
    return np.concatenate(direct), np.concatenate(deeper), np.concatenate(owner)


def generator_distortion(sg: Semigroup, h: float = 1e-7, limit: int = 64) -> DistortionReport:
    """Sampled sup K over the ring pieces of (up to `limit`) generators."""
    z, _, owner = _ring_sample_sets(sg, limit)
    tags = [f"g{sg.generators[n].j}" for n in owner]
    return beltrami_estimate(lambda w: sg.step(w, owner)[0], z, h=h, tags=tags)


def composition_distortion(sg: Semigroup, steps: int = 3, n_words: int = 2, seed: int = 0,
                           h: float = 1e-7, limit: int = 64) -> DistortionReport:
    """Sampled sup K of random `steps`-fold compositions.

    The interpolated piece fires at the first step on the direct samples and
    at the second step on the deeper ones; the remaining letters are random.
    """
    if steps < 2:
        raise GeneratorError("compositions need at least two steps")
    rng = np.random.Generator(np.random.Philox(seed))
    direct, deeper, owner = _ring_sample_sets(sg, limit)
    z = np.concatenate([direct, deeper])
    reports = []
    for _ in range(n_words):
        word = rng.integers(0, len(sg), size=(steps, z.size))
        word[0] = np.concatenate([owner, owner])
        word[1, direct.size:] = owner

        def comp(w, word=word):
            for k in range(steps):
                w = sg.step(w, word[k])[0]
            return w

        reports.append(beltrami_estimate(comp, z, h=h))
    return max(reports, key=lambda r: r.sup_abs_mu)


def conformal_distortion(sg: Semigroup, n: int = 2048, seed: int = 0, h: float = 1e-6) -> float:
    """Sampled sup |mu| over the analytic pieces (inverse branches, quadratic)."""
    rng = np.random.Generator(np.random.Philox(seed))
    gi = rng.integers(0, len(sg), n)
    u = np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
    pts = np.concatenate([sg._fb[gi] + 0.9 * np.abs(sg._fa[gi]) * u,
                          sg._pb[gi] + 0.9 * np.abs(sg._pa[gi]) * u,
                          3 * u / np.abs(u) * (1 + rng.random(n))])
    gg = np.concatenate([gi, gi, gi])
    return beltrami_estimate(lambda w: sg.step(w, gg)[0], pts, h=h).sup_abs_mu
