"""Stenosis-localization MDP over one radius profile.

An episode inspects one candidate: the agent sits at a profile index,
sees a fixed-width window of normalized radii and radius gradients plus
the local Z-score and curvature, and either shifts along the centerline
(Left/Right, clamped at the profile ends, step cost -1) or terminates
with a diagnostic decision. Rewards for terminal actions depend on the
pixel distance to the nearest true centroid versus the localization
tolerance (inclusive):

    Confirm within tolerance   +50   true positive
    Confirm outside            -10   false positive
    Reject outside             +10   correct rejection
    Reject within tolerance    -50   false negative

``step`` itself is a pure function of (spec, index, action); the episode
runner enforces the step budget and rewrites the final outcome to
"timeout" when the budget runs out mid-navigation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .tiny_nn import MlpParams, categorical_sample, forward
from .vessel_geometry import SIGMA_FLOOR, RadiusProfile

ACTIONS = ("left", "right", "confirm", "reject")
A_LEFT, A_RIGHT, A_CONFIRM, A_REJECT = range(4)

R_TP = 50.0
R_FP = -10.0
R_TN = 10.0
R_FN = -50.0
R_STEP = -1.0


@dataclass(frozen=True)
class EpisodeSpec:
    profile: RadiusProfile
    start_index: int
    centroids: tuple[tuple[float, float], ...]  # true stenosis centers, px
    tau_loc: float = 75.0
    delta_p: int = 3
    max_steps: int = 50
    window: int = 3

    def __post_init__(self):
        if not (0 <= self.start_index < len(self.profile)):
            raise ValueError("start index outside the profile")
        if self.tau_loc <= 0 or self.delta_p < 1 or self.max_steps < 1:
            raise ValueError("bad episode parameters")


@dataclass(frozen=True)
class StepResult:
    next_index: int
    state: np.ndarray | None  # None once the episode is done
    reward: float
    done: bool
    outcome: str  # tp | fp | tn | fn | move | timeout


def state_dim(window: int) -> int:
    return 2 * (2 * window + 1) + 2


def build_state(profile: RadiusProfile, t: int, window: int = 3) -> np.ndarray:
    """Observation vector [r window | grad window | Z | curvature].

    Windows replicate the edge samples beyond the profile ends; the radius
    window is normalized by the profile mean.
    """
    idx = np.clip(np.arange(t - window, t + window + 1), 0, len(profile) - 1)
    r_win = profile.r[idx] / max(profile.mean_r, SIGMA_FLOOR)
    g_win = profile.grad[idx]
    return np.concatenate([r_win, g_win, [profile.z[t], profile.curv[t]]])


def _distance_to_truth(spec: EpisodeSpec, t: int) -> float:
    x, y = spec.profile.path.points[t]
    if not spec.centroids:
        return math.inf
    return min(math.hypot(x - gx, y - gy) for gx, gy in spec.centroids)


def step(spec: EpisodeSpec, t: int, action: int) -> StepResult:
    """One transition; depends only on (spec, t, action)."""
    if action in (A_LEFT, A_RIGHT):
        move = -spec.delta_p if action == A_LEFT else spec.delta_p
        t2 = int(np.clip(t + move, 0, len(spec.profile) - 1))
        return StepResult(
            next_index=t2,
            state=build_state(spec.profile, t2, spec.window),
            reward=R_STEP,
            done=False,
            outcome="move",
        )
    if action == A_CONFIRM:
        hit = _distance_to_truth(spec, t) <= spec.tau_loc
        return StepResult(t, None, R_TP if hit else R_FP, True, "tp" if hit else "fp")
    if action == A_REJECT:
        miss = _distance_to_truth(spec, t) > spec.tau_loc
        return StepResult(t, None, R_TN if miss else R_FN, True, "tn" if miss else "fn")
    raise ValueError(f"unknown action code {action}")


@dataclass(frozen=True)
class EpisodeResult:
    trajectory: tuple[tuple[np.ndarray, int, float], ...]  # (state, action, reward)
    outcome: str
    total_reward: float
    final_index: int


def run_episode(
    spec: EpisodeSpec,
    policy: MlpParams,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
) -> EpisodeResult:
    """Roll one episode; sampled from the categorical head unless greedy."""
    if policy.layer_sizes[0] != state_dim(spec.window):
        raise ValueError(
            f"policy input {policy.layer_sizes[0]} != state dim {state_dim(spec.window)}"
        )
    if not greedy and rng is None:
        raise ValueError("sampling episodes need an rng")
    t = spec.start_index
    steps = []
    for step_count in range(spec.max_steps):
        state = build_state(spec.profile, t, spec.window)
        logits, _ = forward(policy, state)
        action = int(np.argmax(logits)) if greedy else categorical_sample(logits, rng)
        result = step(spec, t, action)
        steps.append((state, action, result.reward))
        if result.done:
            return EpisodeResult(
                trajectory=tuple(steps),
                outcome=result.outcome,
                total_reward=sum(s[2] for s in steps),
                final_index=result.next_index,
            )
        t = result.next_index
    return EpisodeResult(
        trajectory=tuple(steps),
        outcome="timeout",
        total_reward=sum(s[2] for s in steps),
        final_index=t,
    )


def episode_trace_jsonl(spec: EpisodeSpec, result: EpisodeResult) -> str:
    """One JSON line per step, for the detect --trace flag and debugging."""
    lines = []
    for i, (state, action, reward) in enumerate(result.trajectory):
        lines.append(
            json.dumps(
                {
                    "step": i,
                    "action": ACTIONS[action],
                    "reward": reward,
                    "state": [round(float(v), 6) for v in state],
                },
                sort_keys=True,
            )
        )
    lines.append(
        json.dumps(
            {
                "outcome": result.outcome,
                "total_reward": result.total_reward,
                "final_index": result.final_index,
                "start_index": spec.start_index,
            },
            sort_keys=True,
        )
    )
    return "\n".join(lines) + "\n"
