"""Procedural generator of desk-scale angiogram-like cases.

A case is a branching tube tree drawn by random walks with tapering,
slightly wiggly radii; stenoses are stamped as smooth Gaussian radius dips
of configured severity, so ground-truth geometry is known analytically.
Crossings are extra short tubes laid over a branch: they read as a second
vessel in the image but belong to the (single-component) ground-truth
mask. Bifurcations are recorded wherever a child branch spawns.

Degradation operators turn a clean mask into a plausible "losing" mask
for preference mining: fragmentation cuts (which strictly raise the
component count), over-dilation, and spurious disconnected blobs.

All randomness is drawn from a counter-based stream keyed by the case
seed, so generation is bit-identical per (config, seed).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import (
    BinaryMask,
    GrayImage,
    load_image,
    load_mask,
    store_image,
    store_mask,
)
from .seeding import substream
from .topology import betti0, distance_to_set, distance_transform, skeletonize
from .vessel_geometry import build_profile, extract_paths, generate_candidates


class GenerationError(RuntimeError):
    """Raised when a case cannot be generated under the given config."""


class DegradeError(RuntimeError):
    """Raised when a degradation cannot be applied to the given mask."""


@dataclass(frozen=True)
class SynthConfig:
    canvas: int = 192
    depth: int = 3  # levels of branching below the trunk
    branch_count: int = 2  # children spawned per branch while depth remains
    radius_root: float = 5.5
    radius_decay: float = 0.72  # child radius relative to parent at spawn
    taper: float = 0.22  # fractional radius loss along one branch
    wiggle: float = 0.05  # relative sinusoidal radius modulation
    trunk_frac: float = 0.75  # trunk length as a fraction of the canvas
    n_stenoses: int = 2
    severity_min: float = 0.5
    severity_max: float = 0.7
    stenosis_width: float = 3.5  # Gaussian dip sigma, in arc-length px
    n_decoys: int = 2  # mild narrowings far from true stenoses (best effort)
    decoy_severity: float = 0.3
    n_crossings: int = 1
    contrast: float = 0.5
    noise: float = 0.04


@dataclass(frozen=True)
class Stenosis:
    x: float
    y: float
    severity: float
    baseline_radius: float


@dataclass(frozen=True)
class Artifact:
    kind: str  # "bifurcation" or "crossing"
    x: float
    y: float


@dataclass(frozen=True)
class SyntheticCase:
    image: GrayImage
    gt_mask: BinaryMask
    stenoses: tuple[Stenosis, ...]
    artifacts: tuple[Artifact, ...]
    seed: int


@dataclass(frozen=True)
class DegradeSpec:
    mode: str  # none | fragment | over_dilate | spurious_blob
    seed: int = 0
    gap_px: int = 2
    n_cuts: int = 1
    dilate_px: float = 1.0
    n_blobs: int = 1

    def __post_init__(self):
        if self.mode not in ("none", "fragment", "over_dilate", "spurious_blob"):
            raise ValueError(f"unknown degrade mode {self.mode!r}")
        if self.gap_px < 1 or self.n_cuts < 1 or self.n_blobs < 1:
            raise ValueError("gap_px, n_cuts and n_blobs must be >= 1")


@dataclass
class _Tube:
    points: np.ndarray  # (n, 2) float, columns (x, y), unit step
    radii: np.ndarray  # (n,)
    depth: int


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _walk(rng, start, heading, n_steps, canvas, margin):
    pts = np.empty((n_steps, 2), dtype=np.float64)
    x, y = float(start[0]), float(start[1])
    center = canvas / 2.0
    for i in range(n_steps):
        pts[i] = (x, y)
        heading += rng.normal(0.0, 0.06)
        nx = x + math.cos(heading)
        ny = y + math.sin(heading)
        if not (margin <= nx <= canvas - margin and margin <= ny <= canvas - margin):
            target = math.atan2(center - y, center - x)
            heading += 0.5 * _wrap_angle(target - heading)
            nx = x + math.cos(heading)
            ny = y + math.sin(heading)
        if not (1.0 <= nx <= canvas - 1.0 and 1.0 <= ny <= canvas - 1.0):
            raise GenerationError("walk escaped the canvas; canvas too small")
        x, y = nx, ny
    return pts


def _branch_radii(rng, n, r0, r1, wiggle):
    u = np.linspace(0.0, 1.0, n)
    base = r0 - (r0 - r1) * u ** 0.7  # convex decline: positive curvature
    freq = rng.uniform(0.7, 1.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return base * (1.0 + wiggle * np.sin(2.0 * math.pi * (freq * u + phase)))


def _tube_heading(points: np.ndarray, i: int) -> float:
    j0 = max(i - 2, 0)
    j1 = min(i + 2, len(points) - 1)
    dx, dy = points[j1] - points[j0]
    return math.atan2(dy, dx)


def _grow_tree(rng, config: SynthConfig):
    canvas = config.canvas
    margin = config.radius_root + 3.0
    trunk_len = int(config.trunk_frac * canvas)
    start = (
        rng.uniform(margin, margin + 0.15 * canvas),
        rng.uniform(0.25 * canvas, 0.75 * canvas),
    )
    heading = rng.uniform(-0.5, 0.5)
    trunk_pts = _walk(rng, start, heading, trunk_len, canvas, margin)
    trunk = _Tube(
        points=trunk_pts,
        radii=_branch_radii(
            rng, trunk_len, config.radius_root,
            config.radius_root * (1.0 - config.taper), config.wiggle,
        ),
        depth=0,
    )
    tubes = [trunk]
    bifurcations: list[tuple[float, float]] = []
    frontier = [trunk]
    for level in range(1, config.depth + 1):
        next_frontier = []
        for parent in frontier:
            n = len(parent.points)
            fracs = np.sort(rng.uniform(0.25, 0.8, size=config.branch_count))
            for frac in fracs:
                i = int(frac * (n - 1))
                r0 = float(parent.radii[i]) * config.radius_decay * rng.uniform(0.9, 1.1)
                length = int(n * rng.uniform(0.5, 0.72))
                if r0 < 1.6 or length < 14:
                    continue
                side = 1.0 if rng.random() < 0.5 else -1.0
                child_heading = _tube_heading(parent.points, i) + side * rng.uniform(0.4, 0.95)
                pts = _walk(rng, parent.points[i], child_heading, length, canvas, margin)
                child = _Tube(
                    points=pts,
                    radii=_branch_radii(rng, length, r0, r0 * (1.0 - config.taper), config.wiggle),
                    depth=level,
                )
                tubes.append(child)
                next_frontier.append(child)
                bifurcations.append((float(parent.points[i, 0]), float(parent.points[i, 1])))
        frontier = next_frontier
    return tubes, bifurcations


def _apply_dip(tube: _Tube, i: int, severity: float, width: float) -> None:
    s_axis = np.arange(len(tube.points), dtype=np.float64)
    dip = 1.0 - severity * np.exp(-((s_axis - i) ** 2) / (2.0 * width * width))
    tube.radii = tube.radii * dip


def _place_stenoses(rng, tubes, config: SynthConfig, junctions):
    sites = []
    for ti, tube in enumerate(tubes):
        n = len(tube.points)
        lo, hi = int(0.22 * n), int(0.84 * n)
        for i in range(lo, hi):
            if tube.radii[i] >= 3.9:
                sites.append((ti, i))
    if len(sites) < config.n_stenoses:
        raise GenerationError("tree has too few eligible stenosis sites")
    jxy = np.array(junctions, dtype=np.float64) if junctions else np.empty((0, 2))
    chosen: list[tuple[int, int]] = []
    # spacing constraints relax stepwise before giving up entirely
    for sep, jdist in ((30.0, 18.0), (24.0, 15.0), (18.0, 11.0), (14.0, 9.0)):
        chosen = []
        order = rng.permutation(len(sites))
        for si in order:
            if len(chosen) == config.n_stenoses:
                break
            ti, i = sites[si]
            p = tubes[ti].points[i]
            if jxy.size and np.min(np.hypot(jxy[:, 0] - p[0], jxy[:, 1] - p[1])) < jdist:
                continue
            if any(
                math.hypot(tubes[tj].points[j, 0] - p[0], tubes[tj].points[j, 1] - p[1]) < sep
                for tj, j in chosen
            ):
                continue
            chosen.append((ti, i))
        if len(chosen) == config.n_stenoses:
            break
    if len(chosen) < config.n_stenoses:
        raise GenerationError("could not place all stenoses with spacing constraints")
    stenoses: list[Stenosis] = []
    for ti, i in chosen:
        p = tubes[ti].points[i]
        severity = float(rng.uniform(config.severity_min, config.severity_max))
        width = float(rng.uniform(0.8, 1.2)) * config.stenosis_width
        baseline = float(tubes[ti].radii[i])
        # keep the rendered minimum above the 1px stamping floor, or the
        # distance transform cannot resolve the dip depth
        severity = min(severity, 1.0 - 1.7 / baseline)
        _apply_dip(tubes[ti], i, severity, width)
        stenoses.append(
            Stenosis(x=float(p[0]), y=float(p[1]), severity=severity, baseline_radius=baseline)
        )
    return stenoses


def _place_decoys(rng, tubes, config: SynthConfig, junctions, stenoses) -> None:
    """Mild narrowings far from true stenoses: false-positive bait.

    Best effort; a decoy that cannot be placed with its exclusion margins
    is silently skipped. Decoys are legitimate geometry (natural tapering
    zones), so they are not recorded on the case.
    """
    if config.n_decoys <= 0:
        return
    sites = []
    for ti, tube in enumerate(tubes):
        n = len(tube.points)
        for i in range(int(0.25 * n), int(0.85 * n)):
            if tube.radii[i] >= 2.2:
                sites.append((ti, i))
    jxy = np.array(junctions, dtype=np.float64) if junctions else np.empty((0, 2))
    placed: list[tuple[float, float]] = []
    order = rng.permutation(len(sites))
    for si in order:
        if len(placed) == config.n_decoys:
            break
        ti, i = sites[si]
        p = tubes[ti].points[i]
        # > tau_loc away from every true stenosis, so a Confirm here is a
        # genuine false positive under the detection tolerance
        if any(math.hypot(s.x - p[0], s.y - p[1]) < 80.0 for s in stenoses):
            continue
        if any(math.hypot(qx - p[0], qy - p[1]) < 30.0 for qx, qy in placed):
            continue
        if jxy.size and np.min(np.hypot(jxy[:, 0] - p[0], jxy[:, 1] - p[1])) < 10.0:
            continue
        severity = config.decoy_severity * float(rng.uniform(0.8, 1.2))
        width = float(rng.uniform(0.9, 1.3)) * config.stenosis_width
        _apply_dip(tubes[ti], i, severity, width)
        placed.append((float(p[0]), float(p[1])))


def _place_crossings(rng, tubes, config: SynthConfig, stenoses):
    crossings: list[Artifact] = []
    extra: list[_Tube] = []
    canvas = config.canvas
    hosts = [t for t in tubes if len(t.points) >= 40]
    for _ in range(config.n_crossings):
        done = False
        for _attempt in range(120):
            # stenosis exclusion shrinks as retries accumulate
            excl = 25.0 if _attempt < 60 else (18.0 if _attempt < 90 else 12.0)
            host = hosts[int(rng.integers(len(hosts)))]
            n = len(host.points)
            i = int(rng.uniform(0.2, 0.8) * n)
            cx, cy = host.points[i]
            if any(math.hypot(s.x - cx, s.y - cy) < excl for s in stenoses):
                continue
            if any(math.hypot(a.x - cx, a.y - cy) < excl for a in crossings):
                continue
            ang = _tube_heading(host.points, i) + (
                1.0 if rng.random() < 0.5 else -1.0
            ) * rng.uniform(1.2, math.pi / 2)
            half = rng.uniform(14, 22)
            radius = float(np.clip(host.radii[i] * rng.uniform(0.55, 0.75), 1.3, None))
            ts = np.arange(-half, half + 1.0)
            pts = np.stack(
                [cx + ts * math.cos(ang), cy + ts * math.sin(ang)], axis=1
            )
            keep = (
                (pts[:, 0] >= radius + 1.5)
                & (pts[:, 0] <= canvas - radius - 1.5)
                & (pts[:, 1] >= radius + 1.5)
                & (pts[:, 1] <= canvas - radius - 1.5)
            )
            pts = pts[keep]
            if len(pts) < 12:
                continue
            extra.append(
                _Tube(points=pts, radii=np.full(len(pts), radius), depth=-1)
            )
            crossings.append(Artifact(kind="crossing", x=float(cx), y=float(cy)))
            done = True
            break
        if not done:
            raise GenerationError("could not place a crossing artifact")
    return crossings, extra


def _stamp_tubes(tubes, canvas: int) -> np.ndarray:
    grid = np.zeros((canvas, canvas), dtype=bool)
    for tube in tubes:
        for (x, y), r in zip(tube.points, tube.radii):
            rr = max(float(r), 1.0)
            x0 = max(int(math.floor(x - rr)), 0)
            x1 = min(int(math.ceil(x + rr)) + 1, canvas)
            y0 = max(int(math.floor(y - rr)), 0)
            y1 = min(int(math.ceil(y + rr)) + 1, canvas)
            if x0 >= x1 or y0 >= y1:
                raise GenerationError("tube sample fell outside the canvas")
            yy = np.arange(y0, y1, dtype=np.float64)[:, None]
            xx = np.arange(x0, x1, dtype=np.float64)[None, :]
            grid[y0:y1, x0:x1] |= (xx - x) ** 2 + (yy - y) ** 2 <= rr * rr
    return grid


def _box_blur3(values: np.ndarray) -> np.ndarray:
    padded = np.pad(values, 1, mode="edge")
    out = np.zeros_like(values)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            out += padded[dr : dr + values.shape[0], dc : dc + values.shape[1]]
    return out / 9.0


def _generate_attempt(config: SynthConfig, seed: int, attempt: int) -> SyntheticCase:
    rng = substream(seed, "synth-case", attempt)
    tubes, bif_points = _grow_tree(rng, config)
    stenoses = _place_stenoses(rng, tubes, config, bif_points)
    _place_decoys(rng, tubes, config, bif_points, stenoses)
    crossings, crossing_tubes = _place_crossings(rng, tubes, config, stenoses)
    mask_bits = _stamp_tubes(tubes + crossing_tubes, config.canvas)
    gt_mask = BinaryMask(mask_bits)
    if betti0(gt_mask) != 1:
        raise GenerationError("generated mask is not a single connected component")

    base = rng.uniform(0.70, 0.82)
    gx = rng.uniform(-0.12, 0.12)
    gy = rng.uniform(-0.12, 0.12)
    contrast = config.contrast * rng.uniform(0.9, 1.1)
    h = w = config.canvas
    xs = (np.arange(w) / w - 0.5)[None, :]
    ys = (np.arange(h) / h - 0.5)[:, None]
    img = base + gx * xs + gy * ys
    img = img - contrast * _box_blur3(mask_bits.astype(np.float64))
    img = img + rng.uniform(-config.noise, config.noise, size=(h, w))
    image = GrayImage(np.clip(img, 0.0, 1.0))

    artifacts = tuple(
        Artifact(kind="bifurcation", x=bx, y=by) for bx, by in bif_points
    ) + tuple(crossings)
    return SyntheticCase(
        image=image,
        gt_mask=gt_mask,
        stenoses=tuple(stenoses),
        artifacts=artifacts,
        seed=int(seed),
    )


def _case_is_valid(case: SyntheticCase) -> bool:
    """Planted stenoses must be measurable and geometrically recoverable.

    Checks the severity band (EDT-measured severity within 0.15 of the
    configured value) and that the candidate generator fires within 10 px
    of every centroid. Random walks occasionally overlap a sibling tube
    onto a stenosis or fragment its branch at a junction; such degenerate
    layouts are rejected and regenerated from the next attempt substream.
    """
    field = distance_transform(case.gt_mask)
    for s in case.stenoses:
        r_meas = field.values[int(round(s.y)), int(round(s.x))]
        if r_meas <= 0.0:
            return False
        if abs((1.0 - r_meas / s.baseline_radius) - s.severity) > 0.15:
            return False
    paths = extract_paths(skeletonize(case.gt_mask))
    pixels = []
    for pid, path in enumerate(paths):
        if len(path) < 3:
            continue
        profile = build_profile(path, field)
        pixels.extend(
            xy for _, _, xy in generate_candidates(profile, path_id=pid).candidates
        )
    for s in case.stenoses:
        if not any(math.hypot(x - s.x, y - s.y) <= 10.0 for x, y in pixels):
            return False
    return True


def generate_case(config: SynthConfig, seed: int) -> SyntheticCase:
    """Deterministically generate one valid synthetic case for (config, seed)."""
    if config.canvas < max(64, int(10 * config.radius_root)):
        raise GenerationError(
            f"canvas {config.canvas} too small for root radius {config.radius_root}"
        )
    last_error = None
    for attempt in range(32):
        try:
            case = _generate_attempt(config, seed, attempt)
        except GenerationError as exc:
            last_error = exc
            continue
        if _case_is_valid(case):
            return case
    if last_error is not None:
        raise GenerationError(f"no valid case in 32 attempts: {last_error}")
    raise GenerationError("no valid case in 32 attempts (validation kept failing)")


# --- degradation -------------------------------------------------------------

def _cut_slab(bits: np.ndarray, center, tangent, gap: float, half_width: float):
    out = bits.copy()
    cx, cy = center
    tx, ty = tangent
    nx_, ny_ = -ty, tx
    reach = gap / 2.0 + half_width + 2.0
    x0 = max(int(cx - reach), 0)
    x1 = min(int(cx + reach) + 2, bits.shape[1])
    y0 = max(int(cy - reach), 0)
    y1 = min(int(cy + reach) + 2, bits.shape[0])
    yy = np.arange(y0, y1, dtype=np.float64)[:, None]
    xx = np.arange(x0, x1, dtype=np.float64)[None, :]
    along = (xx - cx) * tx + (yy - cy) * ty
    across = (xx - cx) * nx_ + (yy - cy) * ny_
    slab = (np.abs(along) <= gap / 2.0) & (np.abs(across) <= half_width)
    out[y0:y1, x0:x1] &= ~slab
    return out


def degrade(mask: BinaryMask, spec: DegradeSpec) -> BinaryMask:
    """Apply one degradation mode; deterministic per spec.seed."""
    if not mask.bits.any():
        raise DegradeError("cannot degrade an empty mask")
    if spec.mode == "none":
        return BinaryMask(mask.bits)
    rng = substream(spec.seed, "degrade", spec.mode)
    if spec.mode == "fragment":
        return _degrade_fragment(mask, spec, rng)
    if spec.mode == "over_dilate":
        dist = distance_to_set(mask.bits)
        return BinaryMask(mask.bits | (dist <= spec.dilate_px))
    return _degrade_blobs(mask, spec, rng)


def _degrade_fragment(mask: BinaryMask, spec: DegradeSpec, rng) -> BinaryMask:
    skel = skeletonize(mask)
    paths = extract_paths(skel)
    field = distance_transform(mask)
    margin = max(5, spec.gap_px + 3)
    sites = []
    for pid, path in enumerate(paths):
        n = len(path)
        for i in range(margin, n - margin):
            sites.append((pid, i))
    if not sites:
        raise DegradeError("mask too small to cut")
    cur = mask.bits.copy()
    b0 = betti0(mask)
    cuts = 0
    for si in rng.permutation(len(sites)):
        pid, i = sites[si]
        path = paths[pid]
        p = path.points[i].astype(np.float64)
        span = path.points[min(i + 3, len(path) - 1)] - path.points[max(i - 3, 0)]
        norm = math.hypot(float(span[0]), float(span[1]))
        if norm == 0.0:
            continue
        tangent = (float(span[0]) / norm, float(span[1]) / norm)
        half_width = float(field.values[path.points[i, 1], path.points[i, 0]]) + 2.5
        trial = _cut_slab(cur, (float(p[0]), float(p[1])), tangent, spec.gap_px, half_width)
        nb0 = betti0(BinaryMask(trial))
        if nb0 > b0:
            cur = trial
            b0 = nb0
            cuts += 1
            if cuts == spec.n_cuts:
                return BinaryMask(cur)
    raise DegradeError(f"only made {cuts} of {spec.n_cuts} separating cuts")


def _degrade_blobs(mask: BinaryMask, spec: DegradeSpec, rng) -> BinaryMask:
    cur = mask.bits.copy()
    h, w = cur.shape
    for _ in range(spec.n_blobs):
        dist = distance_to_set(cur)
        placed = False
        for _attempt in range(200):
            x = rng.uniform(4.0, w - 4.0)
            y = rng.uniform(4.0, h - 4.0)
            rr = rng.uniform(1.6, 2.6)
            if dist[int(y), int(x)] > rr + 2.5:
                yy = np.arange(h, dtype=np.float64)[:, None]
                xx = np.arange(w, dtype=np.float64)[None, :]
                cur |= (xx - x) ** 2 + (yy - y) ** 2 <= rr * rr
                placed = True
                break
        if not placed:
            raise DegradeError("no room for a disconnected blob")
    return BinaryMask(cur)


# --- case bundles on disk -----------------------------------------------------

def save_case(case: SyntheticCase, directory, config: SynthConfig) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    store_image(case.image, d / "image.pgm")
    store_mask(case.gt_mask, d / "mask.pgm")
    payload = {
        "seed": case.seed,
        "stenoses": [dataclasses.asdict(s) for s in case.stenoses],
        "artifacts": [dataclasses.asdict(a) for a in case.artifacts],
        "config": dataclasses.asdict(config),
    }
    with open(d / "case.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_case(directory) -> SyntheticCase:
    d = Path(directory)
    with open(d / "case.json") as fh:
        payload = json.load(fh)
    return SyntheticCase(
        image=load_image(d / "image.pgm"),
        gt_mask=load_mask(d / "mask.pgm"),
        stenoses=tuple(Stenosis(**s) for s in payload["stenoses"]),
        artifacts=tuple(Artifact(**a) for a in payload["artifacts"]),
        seed=int(payload["seed"]),
    )
