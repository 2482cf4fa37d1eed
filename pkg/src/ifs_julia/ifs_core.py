"""Conformal IFS representation, attractor approximation and word iteration."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .plane_geometry import UNIT_DISK, AffineContraction, Disk, fixed_point, image_disk

WORD_CAP = 4096
DEFAULT_DELTA = 0.005


class IFSError(ValueError):
    pass


class CapExceeded(IFSError):
    pass


@dataclass(frozen=True)
class ConformalIFS:
    maps: tuple[AffineContraction, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise IFSError("an IFS needs at least one map")

    def __len__(self):
        return len(self.maps)

    @property
    def a(self) -> np.ndarray:
        return np.array([m.a for m in self.maps])

    @property
    def b(self) -> np.ndarray:
        return np.array([m.b for m in self.maps])

    @property
    def s_max(self) -> float:
        return max(m.scale for m in self.maps)

    @property
    def fixed_points(self) -> np.ndarray:
        return np.array([fixed_point(m) for m in self.maps])

    def image_disks(self) -> list[Disk]:
        return [image_disk(m, UNIT_DISK) for m in self.maps]


@dataclass
class MapCheck:
    index: int
    abs_a: float
    abs_b: float
    total: float
    fixed_point: complex

    @property
    def ok(self) -> bool:
        return self.total < 1


@dataclass
class ValidationReport:
    checks: list[MapCheck]

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def offending(self) -> list[int]:
        return [c.index for c in self.checks if not c.ok]

    def summary(self) -> str:
        if self.passed:
            return "all maps send the closed unit disk into the open unit disk"
        parts = [f"map {c.index}: |a|+|b| = {c.total:.6g} >= 1" for c in self.checks if not c.ok]
        return "; ".join(parts)


def validate_ifs(ifs: ConformalIFS) -> ValidationReport:
    checks = []
    for i, m in enumerate(ifs.maps):
        checks.append(MapCheck(i, abs(m.a), abs(m.b), abs(m.a) + abs(m.b), fixed_point(m)))
    return ValidationReport(checks)


def require_valid(ifs: ConformalIFS) -> None:
    report = validate_ifs(ifs)
    if not report.passed:
        raise IFSError(report.summary())


@dataclass
class PointCloud:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)


def attractor_chaos_game(ifs: ConformalIFS, n_points: int, burn_in: int = 64,
                         seed: int = 0, streams: int = 64) -> PointCloud:
    """Random-iteration approximation of the attractor.

    Runs ``streams`` independent Philox streams from z0 = 0 in lockstep and
    concatenates them, so the output only depends on (ifs, n_points, burn_in,
    seed, streams).
    """
    if n_points < 1:
        raise IFSError("n_points must be >= 1")
    require_valid(ifs)
    streams = max(1, min(streams, n_points))
    per = -(-n_points // streams)
    rng = np.random.Generator(np.random.Philox(seed))
    a, b = ifs.a, ifs.b
    z = np.zeros(streams, dtype=complex)
    idx = rng.integers(0, len(ifs), size=(burn_in + per, streams))
    for k in range(burn_in):
        z = a[idx[k]] * z + b[idx[k]]
    out = np.empty((per, streams), dtype=complex)
    for k in range(per):
        j = idx[burn_in + k]
        z = a[j] * z + b[j]
        out[k] = z
    pts = out.T.reshape(-1)[:n_points]
    meta = {"seed": seed, "n_points": n_points, "burn_in": burn_in, "streams": streams,
            "generator": "philox"}
    return PointCloud(pts, meta)


@dataclass
class DiskCover:
    depth: int
    centers: np.ndarray
    radii: np.ndarray

    @property
    def disks(self) -> list[Disk]:
        return [Disk(c, r) for c, r in zip(self.centers, self.radii)]

    def contains(self, z, inflate: float = 0.0) -> np.ndarray:
        """Whether each point lies in the union of the (inflated) disks."""
        z = np.asarray(z)
        tree = cKDTree(np.column_stack([self.centers.real, self.centers.imag]))
        rmax = float(self.radii.max()) + inflate
        pts = np.column_stack([z.real, z.imag])
        hits = tree.query_ball_point(pts, rmax)
        inside = np.zeros(len(z), dtype=bool)
        for n, cand in enumerate(hits):
            if cand:
                c = np.asarray(cand)
                inside[n] = bool(np.any(np.abs(z[n] - self.centers[c]) <= self.radii[c] + inflate))
        return inside


def _check_cap(k: int, depth: int, cap: int) -> None:
    if depth * math.log(max(k, 1)) > math.log(cap) + 1e-12:
        raise CapExceeded(f"{k}^{depth} words exceed the cap of {cap}; use a lower depth")


def _word_coefficients(a: np.ndarray, b: np.ndarray, depth: int):
    """Coefficients of phi_{i1} o ... o phi_{iN} for all words, lexicographic."""
    A = np.ones(1, dtype=complex)
    B = np.zeros(1, dtype=complex)
    for _ in range(depth):
        # prepend-in-order: word w + (i,) -> (phi_w o phi_i), lexicographic in w then i
        A, B = (A[:, None] * a[None, :]).reshape(-1), (A[:, None] * b[None, :] + B[:, None]).reshape(-1)
    return A, B


def attractor_disk_cover(ifs: ConformalIFS, depth: int, cap: int = 1 << 20,
                         base: Disk = UNIT_DISK) -> DiskCover:
    """The disks phi_w(base) over all words of length `depth`."""
    require_valid(ifs)
    _check_cap(len(ifs), depth, cap)
    A, B = _word_coefficients(ifs.a, ifs.b, depth)
    return DiskCover(depth, A * base.center + B, np.abs(A) * base.radius)


def invariant_disk(ifs: ConformalIFS) -> Disk:
    """A disk D with phi_i(D) inside D for every i, centred at the mean fixed point.

    |phi_i(c) - c| + |a_i| R <= R holds for R = max |phi_i(c) - c| / (1 - |a_i|).
    """
    c = complex(ifs.fixed_points.mean())
    R = max(abs(m(c) - c) / (1 - m.scale) for m in ifs.maps)
    return Disk(c, max(R, 1e-15))


def attractor_membership(ifs: ConformalIFS, z, depth: int, tol: float = 0.0,
                         cap: int = 1 << 20) -> np.ndarray:
    """Whether points lie within `tol` of the depth-n cover by images of the
    invariant disk; this set shrinks to the attractor as depth grows."""
    cover = attractor_disk_cover(ifs, depth, cap, base=invariant_disk(ifs))
    return cover.contains(np.asarray(z, complex).reshape(-1), inflate=tol)


def iterate_system(ifs: ConformalIFS, N: int, cap: int = WORD_CAP,
                   dedupe: bool = False) -> ConformalIFS:
    """The IFS of all length-N compositions, in lexicographic word order."""
    if N < 1:
        raise IFSError("N must be >= 1")
    _check_cap(len(ifs), N, cap)
    A, B = _word_coefficients(ifs.a, ifs.b, N)
    maps = [AffineContraction(x, y) for x, y in zip(A, B)]
    if dedupe:
        seen, kept = set(), []
        for m in maps:
            key = (round(m.a.real, 14), round(m.a.imag, 14), round(m.b.real, 14), round(m.b.imag, 14))
            if key not in seen:
                seen.add(key)
                kept.append(m)
        maps = kept
    return ConformalIFS(tuple(maps), f"{ifs.label}^{N}")


def word_index(word, k: int) -> int:
    idx = 0
    for letter in word:
        idx = idx * k + letter
    return idx


@dataclass
class SeparationPlan:
    N: int
    iterated: ConformalIFS
    f1_index: int
    f2_index: int
    delta: float
    r: float
    d_lower: float
    T: float
    min_verified_distance: float = float("nan")
    partner: np.ndarray | None = None  # per psi_j: 0 -> f1, 1 -> f2

    @property
    def m(self) -> int:
        return len(self.iterated)

    @property
    def f_indices(self) -> tuple[int, int]:
        return self.f1_index, self.f2_index


def _separation_distances(iterated: ConformalIFS, i1: int, i2: int) -> np.ndarray:
    A, B = np.abs(iterated.a), iterated.b
    d1 = np.abs(B - B[i1]) - A - A[i1]
    d2 = np.abs(B - B[i2]) - A - A[i2]
    return np.column_stack([d1, d2])


def build_separation_plan(ifs: ConformalIFS, delta: float = DEFAULT_DELTA,
                          cap: int = WORD_CAP) -> SeparationPlan:
    """Pass to X^N so two maps f1, f2 separate every other word map.

    N starts at the least value with s_max^N < delta r and is increased until
    the exhaustive disk-distance check clears the bound (1/2 - 2 delta) r.
    """
    require_valid(ifs)
    if not 0 < delta < 0.01:
        raise IFSError(f"delta must lie in (0, 1/100), got {delta}")
    w = ifs.fixed_points
    k = len(ifs)
    diff = np.abs(w[:, None] - w[None, :])
    r = float(diff.max())
    if k < 2 or r <= 1e-12:
        raise IFSError("all fixed points coincide; need two maps with distinct fixed points")
    p, q = np.unravel_index(int(np.argmax(diff)), diff.shape)
    p, q = int(min(p, q)), int(max(p, q))
    s = ifs.s_max
    N = max(1, math.floor(math.log(delta * r) / math.log(s)) + 1)
    while s ** N >= delta * r:
        N += 1
    d_lower = (0.5 - 2 * delta) * r
    while True:
        if k ** N > cap:
            min_delta = s ** (math.log(cap) / math.log(k)) / r if k > 1 else float("nan")
            raise CapExceeded(
                f"{k}^{N} words exceed the cap of {cap}; smallest admissible delta is about {min_delta:.4g}"
            )
        it = iterate_system(ifs, N, cap=cap)
        i1 = word_index([p] * N, k)
        i2 = word_index([q] * N, k)
        dist = _separation_distances(it, i1, i2)
        best = dist.max(axis=1)
        if best.min() >= d_lower:
            break
        N += 1
    T = float(np.abs(it.fixed_points).max())
    return SeparationPlan(N, it, i1, i2, delta, r, d_lower, T,
                          min_verified_distance=float(best.min()),
                          partner=dist.argmax(axis=1))


def hausdorff_distance(A, B) -> float:
    """Symmetric Hausdorff distance between two finite planar point sets."""
    a = np.asarray(getattr(A, "points", A)).reshape(-1)
    b = np.asarray(getattr(B, "points", B)).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise IFSError("Hausdorff distance needs non-empty sets")
    pa = np.column_stack([a.real, a.imag])
    pb = np.column_stack([b.real, b.imag])
    dab = cKDTree(pb).query(pa)[0].max()
    dba = cKDTree(pa).query(pb)[0].max()
    return float(max(dab, dba))


# IFS definition files -----------------------------------------------------

_MAP_FIELDS = {"a_re", "a_im", "b_re", "b_im"}
_TOP_FIELDS = {"label", "maps"}


def ifs_from_dict(data: dict) -> ConformalIFS:
    if not isinstance(data, dict):
        raise IFSError("IFS definition must be an object")
    unknown = set(data) - _TOP_FIELDS
    if unknown:
        raise IFSError(f"unknown IFS field(s): {sorted(unknown)}")
    if "maps" not in data or not isinstance(data["maps"], list):
        raise IFSError("IFS definition needs a 'maps' list")
    maps = []
    for n, entry in enumerate(data["maps"]):
        if not isinstance(entry, dict):
            raise IFSError(f"maps[{n}] must be an object")
        bad = set(entry) - _MAP_FIELDS
        if bad:
            raise IFSError(f"maps[{n}]: unknown field(s) {sorted(bad)}")
        vals = {}
        for key in _MAP_FIELDS:
            v = entry.get(key, 0.0)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise IFSError(f"maps[{n}].{key} must be a number")
            vals[key] = float(v)
        try:
            maps.append(AffineContraction(complex(vals["a_re"], vals["a_im"]),
                                          complex(vals["b_re"], vals["b_im"])))
        except ValueError as exc:
            raise IFSError(f"maps[{n}]: {exc}") from None
    return ConformalIFS(tuple(maps), str(data.get("label", "")))


def ifs_to_dict(ifs: ConformalIFS) -> dict:
    return {
        "label": ifs.label,
        "maps": [{"a_re": m.a.real, "a_im": m.a.imag, "b_re": m.b.real, "b_im": m.b.imag}
                 for m in ifs.maps],
    }


def load_ifs(path) -> ConformalIFS:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IFSError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return ifs_from_dict(data)


def all_words(k: int, n: int):
    return itertools.product(range(k), repeat=n)
