"""Centerline paths, arc-length radius profiles, and stenosis candidates.

A unit-width skeleton is decomposed into maximal junction-free branches;
junction pixels (degree >= 3) are replicated as endpoints of every branch
they touch. Radius profiles sample the Euclidean distance field along a
branch, optionally smoothed, with first and second derivatives taken by
central finite differences on the (non-uniform) arc-length grid.

Candidates are profile indices that are both abnormally narrow
(r < mean - k*std) and locally sharp (second derivative above a
threshold); nearby candidates are suppressed, keeping the locally
smallest radius. This stage is deliberately high-recall: downstream
filtering is the navigation agent's job.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, _frozen
from .topology import DistanceField

SIGMA_FLOOR = 1e-6

_NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)  # fixed scan order keeps traversal deterministic


@dataclass(frozen=True, eq=False)
class CenterlinePath:
    """Ordered 8-adjacent pixel chain with cumulative arc length."""

    points: np.ndarray  # (n, 2) int64, columns (x, y)
    arc: np.ndarray  # (n,) float64, arc[0] == 0, strictly increasing

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        arc = np.asarray(self.arc, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("path needs at least 2 (x, y) points")
        if arc.shape != (pts.shape[0],) or not np.all(np.diff(arc) > 0):
            raise ValueError("arc length must be strictly increasing per point")
        steps = np.abs(np.diff(pts, axis=0))
        if steps.max() > 1:
            raise ValueError("consecutive path points must be 8-adjacent")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "arc", _frozen(arc))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class RadiusProfile:
    """Radius samples along one path, with derivatives and Z-scores."""

    path: CenterlinePath
    r: np.ndarray
    grad: np.ndarray
    curv: np.ndarray
    mean_r: float
    std_r: float
    z: np.ndarray

    def __post_init__(self):
        for name in ("r", "grad", "curv", "z"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (len(self.path),):
                raise ValueError(f"{name} must match the path length")
            object.__setattr__(self, name, _frozen(arr))

    def __len__(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class CandidateSet:
    """Surviving candidate indices: (path_id, index, (x, y)) triples."""

    candidates: tuple[tuple[int, int, tuple[int, int]], ...]
    k: float
    theta_curv: float


def _path_from_points(points: list[tuple[int, int]]) -> CenterlinePath:
    pts = np.array(points, dtype=np.int64)
    steps = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1).astype(np.float64))
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    return CenterlinePath(points=pts, arc=arc)


def extract_paths(skeleton: BinaryMask) -> list[CenterlinePath]:
    """Decompose a skeleton into maximal junction-free branches.

    Every skeleton pixel of degree >= 1 is covered by some branch; degree-0
    (isolated) pixels cannot form a 2-point path and are dropped. Closed
    loops without junctions are returned with the start pixel repeated at
    the end.
    """
    bits = skeleton.bits
    coords = [(int(y), int(x)) for y, x in np.argwhere(bits)]
    if not coords:
        return []
    pixel_set = set(coords)

    def neighbors(p):
        r, c = p
        return [
            (r + dr, c + dc)
            for dr, dc in _NEIGHBOR_OFFSETS
            if (r + dr, c + dc) in pixel_set
        ]

    degree = {p: len(neighbors(p)) for p in coords}
    nodes = [p for p in coords if degree[p] != 2]
    used_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    paths: list[CenterlinePath] = []

    def walk(start, first):
        chain = [start, first]
        used_steps.add((start, first))
        used_steps.add((first, start))
        prev, cur = start, first
        while degree[cur] == 2 and cur != start:  # cur == start closes a cycle
            nxt = [q for q in neighbors(cur) if q != prev]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            used_steps.add((prev, cur))
            used_steps.add((cur, prev))
            chain.append(cur)
        return chain

    for node in nodes:
        for nb in neighbors(node):
            if (node, nb) in used_steps:
                continue
            chain = walk(node, nb)
            paths.append(_path_from_points([(c, r) for r, c in chain]))

    # leftover degree-2 pixels belong to pure cycles
    covered = {pt for p in paths for pt in map(tuple, p.points[:, ::-1])}
    for p in coords:
        if degree[p] == 2 and p not in covered:
            start = p
            nb = neighbors(start)[0]
            chain = walk(start, nb)
            if chain[-1] != start and start in neighbors(chain[-1]):
                chain.append(start)
            paths.append(_path_from_points([(c, r) for r, c in chain]))
            covered.update(chain)
    return paths


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values.astype(np.float64)
    n = len(values)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(values, dtype=np.float64)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def build_profile(
    path: CenterlinePath, field: DistanceField, smooth_w: int = 5
) -> RadiusProfile:
    """Radius profile of one path over a distance field.

    ``smooth_w`` is an odd moving-average window (1 disables smoothing);
    EDT values on a unit-width skeleton are integer-quantized, so second
    differences need the smoothing to be meaningful.
    """
    if len(path) < 3:
        raise ValueError("path shorter than the derivative stencil (need >= 3)")
    if smooth_w < 1 or smooth_w % 2 == 0:
        raise ValueError("smooth_w must be odd and >= 1")
    xs = path.points[:, 0]
    ys = path.points[:, 1]
    raw = field.values[ys, xs]
    if np.any(raw <= 0.0):
        raise ValueError("path leaves the foreground of the distance field")
    r = _moving_average(raw, smooth_w)
    s = path.arc
    n = len(path)
    grad = np.empty(n)
    curv = np.empty(n)
    grad[1:-1] = (r[2:] - r[:-2]) / (s[2:] - s[:-2])
    grad[0] = (r[1] - r[0]) / (s[1] - s[0])
    grad[-1] = (r[-1] - r[-2]) / (s[-1] - s[-2])
    h1 = s[1:-1] - s[:-2]
    h2 = s[2:] - s[1:-1]
    curv[1:-1] = 2.0 * (r[:-2] * h2 - r[1:-1] * (h1 + h2) + r[2:] * h1) / (
        h1 * h2 * (h1 + h2)
    )
    curv[0] = curv[1]
    curv[-1] = curv[-2]
    mean_r = float(r.mean())
    std_r = max(float(r.std()), SIGMA_FLOOR)
    z = (r - mean_r) / std_r
    return RadiusProfile(
        path=path, r=r, grad=grad, curv=curv, mean_r=mean_r, std_r=std_r, z=z
    )


def generate_candidates(
    profile: RadiusProfile,
    k: float = 1.5,
    theta_curv: float = 0.0,
    suppression_radius: int = 10,
    path_id: int = 0,
) -> CandidateSet:
    """Indices satisfying the narrowing predicate, locally deduplicated.

    All indices with r < mean - k*std and curvature above ``theta_curv``
    qualify; within ``suppression_radius`` samples only the index with the
    smallest radius survives (ties to the lower index).
    """
    hits = np.flatnonzero(
        (profile.r < profile.mean_r - k * profile.std_r)
        & (profile.curv > theta_curv)
    )
    order = hits[np.lexsort((hits, profile.r[hits]))]
    kept: list[int] = []
    for idx in order:
        if all(abs(int(idx) - j) > suppression_radius for j in kept):
            kept.append(int(idx))
    kept.sort()
    cands = tuple(
        (path_id, i, (int(profile.path.points[i, 0]), int(profile.path.points[i, 1])))
        for i in kept
    )
    return CandidateSet(candidates=cands, k=k, theta_curv=theta_curv)


def export_profile_csv(profile: RadiusProfile, fh) -> None:
    """Write columns s, x, y, r, grad, curv, z for external inspection."""
    writer = csv.writer(fh)
    writer.writerow(["s", "x", "y", "r", "grad", "curv", "z"])
    for i in range(len(profile)):
        writer.writerow(
            [
                f"{profile.path.arc[i]:.6f}",
                int(profile.path.points[i, 0]),
                int(profile.path.points[i, 1]),
                f"{profile.r[i]:.6f}",
                f"{profile.grad[i]:.6f}",
                f"{profile.curv[i]:.6f}",
                f"{profile.z[i]:.6f}",
            ]
        )
