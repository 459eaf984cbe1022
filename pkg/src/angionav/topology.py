"""Exact discrete-topology kernels for binary masks.

Connectivity convention: foreground uses 8-adjacency, background uses
4-adjacency (the standard complementary pair). ``connected_components``
accepts either adjacency explicitly; everything else assumes the
convention above.

All kernels here are exact, not approximations: the distance transform is
the true Euclidean distance (two-pass dimensional decomposition over
integer squared distances), and component counts are exact. That is what
lets the test suite pin them against brute-force oracles bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, _frozen


@dataclass(frozen=True, eq=False)
class LabeledComponents:
    """Per-pixel component ids (0 = background) plus the component count.

    ``count`` is the zeroth Betti number of the foreground under the
    connectivity it was computed with. Labels are assigned in row-major
    order of first appearance, so labeling is deterministic.
    """

    labels: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int32)))


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-pixel Euclidean distance from foreground to nearest background.

    Background pixels hold 0. The frame border acts as background: an
    all-foreground mask gets distances to a virtual one-pixel ring outside
    the image.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))


# --- connected components ----------------------------------------------------

def _row_runs(bits: np.ndarray):
    """Per row, maximal foreground runs as (row, start_col, end_col_exclusive)."""
    h, _ = bits.shape
    padded = np.zeros((h, bits.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = bits
    diff = np.diff(padded, axis=1)
    runs = []
    row_spans = []
    for r in range(h):
        starts = np.flatnonzero(diff[r] == 1)
        ends = np.flatnonzero(diff[r] == -1)
        first = len(runs)
        for c0, c1 in zip(starts, ends):
            runs.append((r, int(c0), int(c1)))
        row_spans.append((first, len(runs)))
    return runs, row_spans


def connected_components(mask: BinaryMask, connectivity: int = 8) -> LabeledComponents:
    """Label foreground components under 4- or 8-adjacency.

    Implemented as union-find over row runs (two-pass), which keeps it
    structurally independent of the flood-fill oracle used in tests.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    bits = mask.bits
    runs, row_spans = _row_runs(bits)
    n = len(runs)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    reach = 0 if connectivity == 4 else 1
    for r in range(1, bits.shape[0]):
        a0, a1 = row_spans[r - 1]
        b0, b1 = row_spans[r]
        i, j = a0, b0
        while i < a1 and j < b1:
            _, ac0, ac1 = runs[i]
            _, bc0, bc1 = runs[j]
            # interval overlap, widened by one column for 8-adjacency
            if ac0 < bc1 + reach and bc0 < ac1 + reach:
                union(i, j)
            if ac1 < bc1:
                i += 1
            else:
                j += 1

    labels = np.zeros(bits.shape, dtype=np.int32)
    root_label: dict[int, int] = {}
    for idx, (r, c0, c1) in enumerate(runs):
        root = find(idx)
        label = root_label.setdefault(root, len(root_label) + 1)
        labels[r, c0:c1] = label
    return LabeledComponents(labels=labels, count=len(root_label))


def betti0(mask: BinaryMask, connectivity: int = 8) -> int:
    return connected_components(mask, connectivity).count


# --- skeletonization ---------------------------------------------------------

_ZS_ORDER = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)  # P2..P9, clockwise from north


def _zs_deletable(img: np.ndarray, r: int, c: int, sub: int) -> bool:
    """Thinning conditions for pixel (r, c) of a padded uint8 image."""
    if img[r, c] == 0:
        return False
    nb = [img[r + dr, c + dc] for dr, dc in _ZS_ORDER]
    b = sum(nb)
    if not (2 <= b <= 6):
        return False
    a = sum(1 for k in range(8) if nb[k] == 0 and nb[(k + 1) % 8] == 1)
    if a != 1:
        return False
    p2, _, p4, _, p6, _, p8, _ = nb
    if sub == 0:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


_YOKOI_ORDER = (
    (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1),
)  # x0..x7 = E, NE, N, NW, W, SW, S, SE (counterclockwise)


def _yokoi8(img: np.ndarray, r: int, c: int) -> int:
    """Yokoi connectivity number for 8-connected foreground at (r, c)."""
    x = [img[r + dr, c + dc] for dr, dc in _YOKOI_ORDER]
    total = 0
    for k in (0, 2, 4, 6):
        xk = 1 - x[k]
        total += xk - xk * (1 - x[(k + 1) % 8]) * (1 - x[(k + 2) % 8])
    return total


def _corner_deletable(img: np.ndarray, r: int, c: int) -> bool:
    """Non-endpoint simple pixel: safe to drop without changing topology."""
    if img[r, c] == 0:
        return False
    b = sum(img[r + dr, c + dc] for dr, dc in _ZS_ORDER)
    return b >= 2 and _yokoi8(img, r, c) == 1


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Thin a mask to a unit-width skeleton with Zhang-Suen subiterations.

    Candidate pixels are flagged from a snapshot of each subiteration, then
    deleted one at a time in row-major order with the conditions re-checked
    against the live image. Sequential deletion removes only simple pixels,
    so the zeroth Betti number is preserved exactly (the classic parallel
    variant can annihilate 2x2 blocks).

    Zhang-Suen leaves staircase corners (8-simple pixels with transition
    count 2) that would read as spurious junctions downstream, so a cleanup
    sweep removes simple non-endpoint pixels until the whole procedure is a
    fixed point. The result is always a subset of the input.
    """
    h, w = mask.bits.shape
    img = np.zeros((h + 2, w + 2), dtype=np.uint8)
    img[1:-1, 1:-1] = mask.bits

    def zs_passes() -> bool:
        any_deleted = False
        changed = True
        while changed:
            changed = False
            for sub in (0, 1):
                core = img[1:-1, 1:-1]
                p2 = img[:-2, 1:-1]
                p3 = img[:-2, 2:]
                p4 = img[1:-1, 2:]
                p5 = img[2:, 2:]
                p6 = img[2:, 1:-1]
                p7 = img[2:, :-2]
                p8 = img[1:-1, :-2]
                p9 = img[:-2, :-2]
                seq = (p2, p3, p4, p5, p6, p7, p8, p9)
                b = sum(s.astype(np.int16) for s in seq)
                a = sum(
                    ((seq[k] == 0) & (seq[(k + 1) % 8] == 1)).astype(np.int16)
                    for k in range(8)
                )
                if sub == 0:
                    side = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
                else:
                    side = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
                flagged = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & side
                for r, c in np.argwhere(flagged):
                    if _zs_deletable(img, r + 1, c + 1, sub):
                        img[r + 1, c + 1] = 0
                        changed = True
                        any_deleted = True
        return any_deleted

    def cleanup_pass() -> bool:
        deleted = False
        for r, c in np.argwhere(img[1:-1, 1:-1] == 1):
            if _corner_deletable(img, r + 1, c + 1):
                img[r + 1, c + 1] = 0
                deleted = True
        return deleted

    while True:
        zs_passes()
        if not cleanup_pass():
            break
    return BinaryMask(img[1:-1, 1:-1].astype(bool))


# --- Euclidean distance transform ---------------------------------------------

def _exact_sedt(sources: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True source pixel.

    Two-pass dimensional decomposition: vertical nearest-source distances
    per column, then a per-row minimization of (dx^2 + g^2) over all
    columns. All arithmetic is on integers, so results are exact.
    """
    h, w = sources.shape
    big = h + w + 3
    g = np.where(sources, 0, big).astype(np.int64)
    for r in range(1, h):
        np.minimum(g[r], g[r - 1] + 1, out=g[r])
    for r in range(h - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1, out=g[r])
    cols = np.arange(w, dtype=np.int64)
    dx2 = (cols[:, None] - cols[None, :]) ** 2  # [c, c'] -> (c - c')^2
    g2 = g.astype(np.int64) ** 2
    out = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        out[r] = (dx2 + g2[r][None, :]).min(axis=1)
    return out


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact EDT of the foreground; the frame border counts as background."""
    h, w = mask.bits.shape
    sources = np.ones((h + 2, w + 2), dtype=bool)
    sources[1:-1, 1:-1] = ~mask.bits
    d2 = _exact_sedt(sources)[1:-1, 1:-1]
    values = np.sqrt(d2.astype(np.float64))
    values[~mask.bits] = 0.0
    return DistanceField(values=values)


def distance_to_set(points: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance of every pixel to the nearest True pixel.

    No virtual border here: an empty source set yields +inf everywhere.
    Used for boundary tolerances and morphological dilation.
    """
    points = np.asarray(points, dtype=bool)
    if not points.any():
        return np.full(points.shape, np.inf)
    return np.sqrt(_exact_sedt(points).astype(np.float64))


# --- boundary ------------------------------------------------------------------

def boundary_pixels(mask: BinaryMask) -> set[tuple[int, int]]:
    """Foreground pixels with a background 4-neighbor or on the frame edge.

    Returned as a set of (x, y) coordinates.
    """
    return {(int(x), int(y)) for y, x in np.argwhere(boundary_mask(mask))}


def boundary_mask(mask: BinaryMask) -> np.ndarray:
    bits = mask.bits
    padded = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return bits & ~interior
