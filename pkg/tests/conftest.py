import hashlib
import pathlib

import numpy as np
import pytest

from angionav.raster import BinaryMask


def stamp_disk(grid: np.ndarray, x: float, y: float, r: float) -> None:
    h, w = grid.shape
    x0, x1 = max(int(np.floor(x - r)), 0), min(int(np.ceil(x + r)) + 1, w)
    y0, y1 = max(int(np.floor(y - r)), 0), min(int(np.ceil(y + r)) + 1, h)
    yy = np.arange(y0, y1, dtype=float)[:, None]
    xx = np.arange(x0, x1, dtype=float)[None, :]
    grid[y0:y1, x0:x1] |= (xx - x) ** 2 + (yy - y) ** 2 <= r * r


def straight_tube(length: int, radius: float, h: int = 24, pad: int = 6) -> BinaryMask:
    """Horizontal tube of the given centerline length and radius."""
    w = length + 2 * pad
    grid = np.zeros((h, w), dtype=bool)
    cy = h // 2
    for x in range(pad, pad + length):
        stamp_disk(grid, x, cy, radius)
    return BinaryMask(grid)


def wiggly_tube(rng: np.random.Generator, h: int = 64, w: int = 64) -> BinaryMask:
    """Random-walk tube; the generic skeletonization stress fixture."""
    grid = np.zeros((h, w), dtype=bool)
    x = rng.uniform(10, w - 10)
    y = rng.uniform(10, h - 10)
    ang = rng.uniform(0, 2 * np.pi)
    r = rng.uniform(1.5, 4.0)
    for _ in range(int(rng.integers(20, 50))):
        ang += rng.normal(0, 0.15)
        x = float(np.clip(x + np.cos(ang), 5, w - 5))
        y = float(np.clip(y + np.sin(ang), 5, h - 5))
        stamp_disk(grid, x, y, r)
    return BinaryMask(grid)


def flood_fill_count(bits: np.ndarray, connectivity: int) -> int:
    """Independent BFS component-count oracle."""
    offs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        offs += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    seen = np.zeros_like(bits, dtype=bool)
    h, w = bits.shape
    count = 0
    for r in range(h):
        for c in range(w):
            if bits[r, c] and not seen[r, c]:
                count += 1
                stack = [(r, c)]
                seen[r, c] = True
                while stack:
                    a, b = stack.pop()
                    for dr, dc in offs:
                        nr, nc = a + dr, b + dc
                        if 0 <= nr < h and 0 <= nc < w and bits[nr, nc] and not seen[nr, nc]:
                            seen[nr, nc] = True
                            stack.append((nr, nc))
    return count


def brute_force_edt(bits: np.ndarray) -> np.ndarray:
    """All-pairs EDT oracle, virtual border ring included as background."""
    h, w = bits.shape
    ys, xs = np.nonzero(~bits)
    ring = (
        [(-1, c) for c in range(-1, w + 1)]
        + [(h, c) for c in range(-1, w + 1)]
        + [(r, -1) for r in range(h)]
        + [(r, w) for r in range(h)]
    )
    ry = np.concatenate([ys, np.array([p[0] for p in ring])])
    rx = np.concatenate([xs, np.array([p[1] for p in ring])])
    out = np.zeros((h, w))
    fy, fx = np.nonzero(bits)
    if fy.size:
        d2 = (fy[:, None] - ry[None, :]) ** 2 + (fx[:, None] - rx[None, :]) ** 2
        out[fy, fx] = np.sqrt(d2.min(axis=1))
    return out


def tree_hash(root) -> str:
    h = hashlib.sha256()
    for p in sorted(pathlib.Path(root).rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def small_cases():
    """Shared quick synthetic cases for training-stage tests."""
    from angionav.synth_angio import SynthConfig, generate_case

    cfg = SynthConfig(canvas=96, radius_root=4.5, depth=2, n_stenoses=1,
                      n_crossings=0, n_decoys=0)
    return cfg, [generate_case(cfg, 100 + i) for i in range(10)]
