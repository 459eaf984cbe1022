"""PPO with a clipped surrogate, GAE, entropy bonus, and a value head.

The policy and value networks are separate MLPs trained by Adam with
manual gradients. Rollouts concatenate whole episodes (one candidate per
episode) with done flags, so the advantage recursion never bootstraps
across episode boundaries; the terminal bootstrap value is 0.

``evaluate_agent`` runs the greedy policy over every candidate of every
case and reports lesion detection metrics next to the confirm-all
baseline (every geometric candidate emitted as a detection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeding import derive_int, substream
from .seg_metrics import detection_metrics
from .steno_env import (
    A_CONFIRM,
    EpisodeSpec,
    build_state,
    run_episode,
    state_dim,
    step,
)
from .synth_angio import SyntheticCase
from .tiny_nn import (
    MlpParams,
    NumericsError,
    adam_step,
    backward,
    categorical_sample,
    forward,
    init_adam,
    init_mlp,
    log_softmax,
)
from .topology import distance_transform, skeletonize
from .vessel_geometry import build_profile, extract_paths, generate_candidates


@dataclass(frozen=True)
class PipelineConfig:
    """Mask-to-candidates and episode parameters shared by train and detect."""

    window: int = 3  # half-width 3 keeps the state 16-dimensional
    delta_p: int = 3
    tau_loc: float = 75.0
    max_steps: int = 50
    k: float = 1.5
    theta_curv: float = 0.0
    smooth_w: int = 5
    suppression_radius: int = 10


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    clip: float = 0.2
    entropy_coef: float = 0.01
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    steps: int = 50_000  # desk default; the reference setting is 200,000
    rollout_steps: int = 2048
    minibatch: int = 256
    epochs: int = 4
    policy_hidden: tuple[int, ...] = (256, 128, 64)
    value_hidden: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if min(self.entropy_coef, self.gae_lambda, self.value_coef) < 0:
            raise ValueError("coefficients must be non-negative")


@dataclass
class RolloutBatch:
    states: np.ndarray  # (n, d)
    actions: np.ndarray  # (n,) int
    logp_old: np.ndarray  # (n,)
    rewards: np.ndarray  # (n,)
    values: np.ndarray  # (n,)
    dones: np.ndarray  # (n,) bool
    advantages: np.ndarray
    returns: np.ndarray
    episode_rewards: list[float]

    def __len__(self) -> int:
        return len(self.actions)


def prepare_case(case: SyntheticCase, pipe: PipelineConfig) -> list[EpisodeSpec]:
    """mask -> thinning -> EDT -> profiles -> candidates -> episode specs."""
    field = distance_transform(case.gt_mask)
    paths = extract_paths(skeletonize(case.gt_mask))
    centroids = tuple((s.x, s.y) for s in case.stenoses)
    specs: list[EpisodeSpec] = []
    raw: list[tuple[float, tuple[int, int], object, int]] = []
    for pid, path in enumerate(paths):
        if len(path) < 3:
            continue
        profile = build_profile(path, field, smooth_w=pipe.smooth_w)
        cands = generate_candidates(
            profile,
            k=pipe.k,
            theta_curv=pipe.theta_curv,
            suppression_radius=pipe.suppression_radius,
            path_id=pid,
        )
        for _, idx, xy in cands.candidates:
            raw.append((float(profile.r[idx]), xy, profile, idx))
    # skeleton junctions can split one narrowing across two paths; keep only
    # the narrowest candidate among pixel-near duplicates
    raw.sort(key=lambda item: (item[0], item[1]))
    kept: list[tuple[float, tuple[int, int], object, int]] = []
    for r, xy, profile, idx in raw:
        if all(math.hypot(xy[0] - k[1][0], xy[1] - k[1][1]) > 12.0 for k in kept):
            kept.append((r, xy, profile, idx))
    kept.sort(key=lambda item: item[1])
    for _r, _xy, profile, idx in kept:
        specs.append(
            EpisodeSpec(
                profile=profile,
                start_index=idx,
                centroids=centroids,
                tau_loc=pipe.tau_loc,
                delta_p=pipe.delta_p,
                max_steps=pipe.max_steps,
                window=pipe.window,
            )
        )
    return specs


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimates and returns; bootstrap 0 at dones."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must be aligned")
    n = len(rewards)
    advantages = np.zeros(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        next_value = 0.0 if (dones[t] or t == n - 1) else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        carry = delta + gamma * lam * (0.0 if dones[t] else carry)
        advantages[t] = carry
    return advantages, advantages + values


def collect_rollout(pools, policy: MlpParams, value_net: MlpParams,
                    cfg: PpoConfig, pipe: PipelineConfig, rng) -> RolloutBatch:
    """Gather at least cfg.rollout_steps transitions of whole episodes."""
    states, actions, logps, rewards, values, dones = [], [], [], [], [], []
    episode_rewards = []
    nonempty = [p for p in pools if p]
    while len(states) < cfg.rollout_steps:
        specs = nonempty[int(rng.integers(len(nonempty)))]
        for spec in specs:
            t = spec.start_index
            ep_reward = 0.0
            for k in range(spec.max_steps):
                s = build_state(spec.profile, t, spec.window)
                logits, _ = forward(policy, s)
                logp = log_softmax(logits)
                a = categorical_sample(logits, rng)
                v = float(forward(value_net, s)[0][0])
                res = step(spec, t, a)
                timeout = (not res.done) and k == spec.max_steps - 1
                states.append(s)
                actions.append(a)
                logps.append(float(logp[a]))
                rewards.append(res.reward)
                values.append(v)
                dones.append(res.done or timeout)
                ep_reward += res.reward
                if res.done or timeout:
                    break
                t = res.next_index
            episode_rewards.append(ep_reward)
        if not states:
            raise ValueError("candidate pools produced no transitions")
    adv, ret = compute_gae(rewards, values, dones, cfg.gamma, cfg.gae_lambda)
    return RolloutBatch(
        states=np.asarray(states),
        actions=np.asarray(actions, dtype=np.int64),
        logp_old=np.asarray(logps),
        rewards=np.asarray(rewards),
        values=np.asarray(values),
        dones=np.asarray(dones, dtype=bool),
        advantages=adv,
        returns=ret,
        episode_rewards=episode_rewards,
    )


def surrogate_loss_and_grads(policy: MlpParams, states, actions, logp_old,
                             advantages, clip: float):
    """Negative clipped surrogate (to minimize) and its exact gradients."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    logp_old = np.asarray(logp_old, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    n = len(actions)
    logits, cache = forward(policy, states)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    lp_a = logp[np.arange(n), actions]
    ratio = np.exp(lp_a - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    surr = np.minimum(unclipped, clipped)
    loss = -float(surr.mean())
    # the clipped branch is constant in theta wherever it is selected alone
    active = unclipped <= clipped
    dlp_a = np.where(active, ratio * advantages, 0.0) * (-1.0 / n)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    dlogits = dlp_a[:, None] * (onehot - probs)
    grads = backward(policy, cache, dlogits)
    clip_fraction = float(((ratio < 1.0 - clip) | (ratio > 1.0 + clip)).mean())
    return loss, grads, clip_fraction


def _entropy_and_grad(logits: np.ndarray):
    logp = log_softmax(logits)
    probs = np.exp(logp)
    h_rows = -(probs * logp).sum(axis=1)
    dlogits_per_row = -probs * (logp + h_rows[:, None])
    return h_rows, dlogits_per_row


def ppo_update(policy: MlpParams, value_net: MlpParams, batch: RolloutBatch,
               cfg: PpoConfig, adam_policy, adam_value, rng) -> dict:
    """Shuffled-minibatch clipped-surrogate updates; returns stats."""
    n = len(batch)
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    clip_fractions = []
    entropies = []
    policy_losses = []
    value_losses = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = order[start : start + cfg.minibatch]
            states = batch.states[mb]
            m = len(mb)
            loss, (gw, gb), clip_frac = surrogate_loss_and_grads(
                policy, states, batch.actions[mb], batch.logp_old[mb],
                adv[mb], cfg.clip,
            )
            logits, cache = forward(policy, states)
            h_rows, dh = _entropy_and_grad(logits)
            entropy = float(h_rows.mean())
            ent_gw, ent_gb = backward(policy, cache, -cfg.entropy_coef * dh / m)
            for a, b in zip(gw, ent_gw):
                a += b
            for a, b in zip(gb, ent_gb):
                a += b
            total = loss - cfg.entropy_coef * entropy
            if not math.isfinite(total):
                raise NumericsError("policy loss diverged")
            adam_step(policy, (gw, gb), adam_policy)

            v_out, v_cache = forward(value_net, states)
            v = v_out[:, 0]
            err = v - batch.returns[mb]
            value_loss = cfg.value_coef * float((err * err).mean())
            if not math.isfinite(value_loss):
                raise NumericsError("value loss diverged")
            dv = (cfg.value_coef * 2.0 * err / m)[:, None]
            adam_step(value_net, backward(value_net, v_cache, dv), adam_value)

            clip_fractions.append(clip_frac)
            entropies.append(entropy)
            policy_losses.append(loss)
            value_losses.append(value_loss)
    return {
        "clip_fraction_first": clip_fractions[0],
        "clip_fraction": float(np.mean(clip_fractions)),
        "entropy": float(np.mean(entropies)),
        "policy_loss": float(np.mean(policy_losses)),
        "value_loss": float(np.mean(value_losses)),
    }


def train_agent(cases, cfg: PpoConfig, pipe: PipelineConfig):
    """Train the navigation policy on the cases' candidate episodes.

    Returns (policy, value_net, curve) where curve rows are
    (iteration, mean episode reward, clip fraction, entropy).
    """
    dim = state_dim(pipe.window)
    policy = init_mlp((dim, *cfg.policy_hidden, 4), seed=derive_int(cfg.seed, "policy-init"))
    value_net = init_mlp((dim, *cfg.value_hidden, 1), seed=derive_int(cfg.seed, "value-init"))
    pools = [prepare_case(case, pipe) for case in cases]
    if sum(len(p) for p in pools) == 0:
        raise ValueError("no candidates in any training case")
    if cfg.steps <= 0:
        return policy, value_net, []
    adam_policy = init_adam(policy, lr=cfg.lr)
    adam_value = init_adam(value_net, lr=cfg.lr)
    rng_roll = substream(cfg.seed, "rollout")
    rng_update = substream(cfg.seed, "update")
    curve = []
    steps_done = 0
    iteration = 0
    while steps_done < cfg.steps:
        batch = collect_rollout(pools, policy, value_net, cfg, pipe, rng_roll)
        steps_done += len(batch)
        stats = ppo_update(policy, value_net, batch, cfg, adam_policy, adam_value, rng_update)
        iteration += 1
        curve.append(
            (
                iteration,
                float(np.mean(batch.episode_rewards)),
                stats["clip_fraction"],
                stats["entropy"],
            )
        )
    return policy, value_net, curve


def _aggregate(per_case, tau_det: float, n_images: int) -> dict:
    tp = fp = fn = 0
    for dets, gts in per_case:
        out = detection_metrics(dets, gts, tau_det=tau_det, n_images=1)["outcome"]
        tp += out.tp_det
        fp += out.fp_det
        fn += out.fn_det
    tpr = 1.0 if tp + fn == 0 else tp / (tp + fn)
    ppv = 1.0 if tp + fp == 0 else tp / (tp + fp)
    f1 = 0.0 if ppv + tpr == 0 else 2 * ppv * tpr / (ppv + tpr)
    return {
        "tpr": tpr,
        "ppv": ppv,
        "f1": f1,
        "fppi": fp / n_images,
        "tp": tp,
        "fp": fp,
        "fn": fn,
    }


def evaluate_agent(policy: MlpParams, cases, pipe: PipelineConfig,
                   tau_det: float = 75.0) -> dict:
    """Greedy evaluation plus the confirm-all geometric baseline."""
    agent_cases = []
    baseline_cases = []
    detections = []
    for case in cases:
        specs = prepare_case(case, pipe)
        gts = [(s.x, s.y) for s in case.stenoses]
        agent_dets = []
        case_rows = []
        for spec in specs:
            result = run_episode(spec, policy, greedy=True)
            x, y = spec.profile.path.points[result.final_index]
            confirmed = result.trajectory[-1][1] == A_CONFIRM
            if confirmed:
                agent_dets.append((float(x), float(y)))
            case_rows.append(
                {
                    "start_index": spec.start_index,
                    "x": float(x),
                    "y": float(y),
                    "action": "confirm" if confirmed else result.outcome,
                    "outcome": result.outcome,
                    "steps": len(result.trajectory),
                }
            )
        base_dets = [
            (float(spec.profile.path.points[spec.start_index][0]),
             float(spec.profile.path.points[spec.start_index][1]))
            for spec in specs
        ]
        agent_cases.append((agent_dets, gts))
        baseline_cases.append((base_dets, gts))
        detections.append(case_rows)
    n = max(len(cases), 1)
    return {
        "agent": _aggregate(agent_cases, tau_det, n),
        "baseline": _aggregate(baseline_cases, tau_det, n),
        "n_images": len(cases),
        "per_case": detections,
    }
