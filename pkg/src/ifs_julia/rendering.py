"""Pixel grids, binary masks and their PGM (P5) serialisation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PixelGrid:
    """Square window [center +- half_width]^2 sampled at pixel centres.

    Row 0 is the top row (largest imaginary part).
    """

    resolution: int
    center: complex = 0j
    half_width: float = 1.1

    @property
    def pixel_size(self) -> float:
        return 2 * self.half_width / self.resolution

    def coords(self) -> np.ndarray:
        n = self.resolution
        off = (np.arange(n) + 0.5) * self.pixel_size - self.half_width
        x = self.center.real + off
        y = self.center.imag - off
        return x[None, :] + 1j * y[:, None]

    def contains_unit_disk(self) -> bool:
        return (abs(self.center.real) + 1 <= self.half_width
                and abs(self.center.imag) + 1 <= self.half_width)

    def to_pixel(self, z) -> np.ndarray:
        """Fractional (col, row) coordinates of points."""
        z = np.asarray(z)
        col = (z.real - self.center.real + self.half_width) / self.pixel_size - 0.5
        row = (self.center.imag + self.half_width - z.imag) / self.pixel_size - 0.5
        return np.column_stack([col, row])


@dataclass
class GridMask:
    grid: PixelGrid
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def points(self) -> np.ndarray:
        return self.grid.coords()[self.mask]

    def to_pgm_bytes(self) -> bytes:
        n = self.grid.resolution
        header = f"P5\n{n} {n}\n255\n".encode("ascii")
        return header + np.where(self.mask, 255, 0).astype(np.uint8).tobytes()

    def write_pgm(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_pgm_bytes())
        return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def rasterize_points(grid: PixelGrid, points) -> GridMask:
    pix = np.floor(grid.to_pixel(points) + 0.5).astype(np.int64)
    n = grid.resolution
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < n) & (pix[:, 1] >= 0) & (pix[:, 1] < n)
    mask = np.zeros((n, n), dtype=bool)
    mask[pix[ok, 1], pix[ok, 0]] = True
    return GridMask(grid, mask)


def hausdorff_pixels(mask: GridMask, cloud) -> float:
    """Symmetric Hausdorff distance, in pixel widths, between mask pixel
    centres and a point cloud."""
    a = mask.points()
    b = np.asarray(getattr(cloud, "points", cloud)).reshape(-1)
    if a.size == 0 or b.size == 0:
        return math.inf
    pa = np.column_stack([a.real, a.imag])
    pb = np.column_stack([b.real, b.imag])
    d = max(cKDTree(pb).query(pa)[0].max(), cKDTree(pa).query(pb)[0].max())
    return float(d / mask.grid.pixel_size)


def distance_to_cloud_pixels(grid: PixelGrid, z, cloud) -> np.ndarray:
    b = np.asarray(getattr(cloud, "points", cloud)).reshape(-1)
    tree = cKDTree(np.column_stack([b.real, b.imag]))
    z = np.asarray(z).reshape(-1)
    return tree.query(np.column_stack([z.real, z.imag]))[0] / grid.pixel_size


def track_pixel_disks(grid: PixelGrid, branch_a: np.ndarray, branch_b: np.ndarray,
                      max_steps: int, state_cap: int = 64) -> tuple[np.ndarray, dict]:
    """Pixel-scale boundedness under inverse branches.

    Each pixel's circumscribed disk is pushed through every inverse branch
    z -> (z - b)/a whose domain disk (centre b, radius |a|) it meets; affine
    branches map disks to disks exactly.  A pixel is marked once a branch
    blows its disk up to unit size, i.e. once the pixel scale is resolved
    while the orbit is still inside the branch domains.
    """
    a = np.asarray(branch_a, complex)
    b = np.asarray(branch_b, complex)
    ra = np.abs(a)
    tree = cKDTree(np.column_stack([b.real, b.imag]))
    rmax = float(ra.max())
    n = grid.resolution
    z = grid.coords().reshape(-1)
    pix = np.arange(z.size)
    rad = np.full(z.size, grid.pixel_size / math.sqrt(2))
    marked = np.zeros(z.size, dtype=bool)
    peak_states = z.size
    for _ in range(max_steps):
        if z.size == 0:
            break
        near = tree.query_ball_point(np.column_stack([z.real, z.imag]), rad + rmax)
        counts = np.fromiter((len(c) for c in near), dtype=np.int64, count=len(near))
        if counts.sum() == 0:
            z = z[:0]
            break
        src = np.repeat(np.arange(z.size), counts)
        br = np.fromiter((j for c in near for j in c), dtype=np.int64, count=int(counts.sum()))
        hit = np.abs(z[src] - b[br]) <= rad[src] + ra[br]
        src, br = src[hit], br[hit]
        new_rad = rad[src] / ra[br]
        done = new_rad >= 1.0
        marked[pix[src[done]]] = True
        keep = ~done & ~marked[pix[src]]
        src, br, new_rad = src[keep], br[keep], new_rad[keep]
        new_z = (z[src] - b[br]) / a[br]
        new_pix = pix[src]
        if new_pix.size:
            # cap the number of live states per pixel
            order = np.argsort(new_pix, kind="stable")
            new_pix, new_z, new_rad = new_pix[order], new_z[order], new_rad[order]
            first = np.searchsorted(new_pix, new_pix, side="left")
            rank = np.arange(new_pix.size) - first
            sel = rank < state_cap
            new_pix, new_z, new_rad = new_pix[sel], new_z[sel], new_rad[sel]
        pix, z, rad = new_pix, new_z, new_rad
        peak_states = max(peak_states, z.size)
    info = {"peak_states": int(peak_states), "unresolved_states": int(z.size)}
    return marked.reshape(n, n), info


def write_metrics(path, metrics: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(metrics, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)!r}")
