"""Three-stage training for the toy per-pixel segmentation policy.

The policy maps a flattened intensity patch around each pixel to one
logit; the mask distribution is independent per-pixel Bernoulli, so the
mask log-likelihood is an exact sum of per-pixel terms and every loss
here is gradient-checkable against finite differences.

Stage 1 minimizes soft Dice loss on (image, mask) pairs. Stage 2 mines
preference pairs (high pixel overlap, broken connectivity) and minimizes
the preference loss

    -log sigmoid(beta * [(l_th(y_w) - l_ref(y_w)) - (l_th(y_l) - l_ref(y_l))])

against a frozen reference copy of the stage-1 weights. Stage 3 re-fits
only the cases whose Dice falls below a threshold, with soft Dice plus a
weighted pixel-wise cross entropy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, GrayImage
from .seg_metrics import pixel_metrics
from .synth_angio import DegradeError, DegradeSpec, SyntheticCase, degrade
from .tiny_nn import (
    AdamState,
    MlpParams,
    NumericsError,
    adam_step,
    backward,
    clone_params,
    forward,
    init_adam,
    init_mlp,
    sigmoid,
    softplus,
)
from .topology import betti0

log = logging.getLogger(__name__)


@dataclass
class PixelPolicy:
    patch_radius: int
    net: MlpParams


@dataclass(frozen=True)
class Stage1Config:
    lr: float = 3e-3
    epochs: int = 40


@dataclass(frozen=True)
class Stage2Config:
    lr: float = 1e-6  # scaled for a foundation model; desk configs override
    beta: float = 0.1
    epochs: int = 10


@dataclass(frozen=True)
class Stage3Config:
    lam: float = 0.5
    tau_hard: float = 0.75
    lr: float = 1e-3
    epochs: int = 20


@dataclass(frozen=True)
class PreferencePair:
    case_index: int
    image: GrayImage
    y_w: BinaryMask
    y_l: BinaryMask
    dice_l: float
    b0_w: int
    b0_l: int

    def __post_init__(self):
        if self.dice_l <= 0.8:
            raise ValueError("losing mask must overlap the winner (dice > 0.8)")
        if self.b0_l <= self.b0_w:
            raise ValueError("losing mask must have more components than the winner")
        if self.b0_w != 1:
            raise ValueError("winning mask must be a single component")


def new_pixel_policy(patch_radius: int = 2, hidden=(32,), seed: int = 0) -> PixelPolicy:
    d = (2 * patch_radius + 1) ** 2
    return PixelPolicy(
        patch_radius=patch_radius, net=init_mlp((d, *hidden, 1), seed=seed)
    )


def patch_features(image: GrayImage, patch_radius: int) -> np.ndarray:
    """Per-pixel flattened intensity patches, edge-replicated, centered."""
    k = 2 * patch_radius + 1
    padded = np.pad(image.values, patch_radius, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return windows.reshape(image.height * image.width, k * k) - 0.5


def policy_logits(policy: PixelPolicy, image: GrayImage):
    """Per-pixel logit map (h, w) plus the forward cache for training."""
    feats = patch_features(image, policy.patch_radius)
    logits, cache = forward(policy.net, feats)
    return logits[:, 0].reshape(image.values.shape), cache


def predict_probs(policy: PixelPolicy, image: GrayImage) -> np.ndarray:
    return sigmoid(policy_logits(policy, image)[0])


def predict_mask(policy: PixelPolicy, image: GrayImage, threshold: float = 0.5) -> BinaryMask:
    return BinaryMask(predict_probs(policy, image) >= threshold)


def mask_log_likelihood(policy: PixelPolicy, image: GrayImage, mask: BinaryMask) -> float:
    """Sum of per-pixel Bernoulli log-probs; finite for any logits."""
    if mask.bits.shape != image.values.shape:
        raise ValueError("mask and image shapes differ")
    z = policy_logits(policy, image)[0].ravel()
    y = mask.bits.ravel().astype(np.float64)
    # y*z - softplus(z) == y*log(sigmoid) + (1-y)*log(1-sigmoid), stably
    return float((y * z - softplus(z)).sum())


def _soft_dice_and_grad(probs: np.ndarray, target: np.ndarray):
    """Soft Dice loss and its gradient wrt the probabilities."""
    inter = float((probs * target).sum())
    total = float(probs.sum() + target.sum())
    if total == 0.0:
        return 0.0, np.zeros_like(probs)
    loss = 1.0 - 2.0 * inter / total
    grad = -2.0 * (target * total - inter) / (total * total)
    return loss, grad


def soft_dice_loss(policy: PixelPolicy, image: GrayImage, mask: BinaryMask) -> float:
    probs = predict_probs(policy, image).ravel()
    return _soft_dice_and_grad(probs, mask.bits.ravel().astype(np.float64))[0]


def stage1_train(policy: PixelPolicy, cases, cfg: Stage1Config) -> PixelPolicy:
    """Minimize soft Dice over the cases; returns a new policy."""
    if not cases:
        raise ValueError("stage 1 needs at least one case")
    out = PixelPolicy(policy.patch_radius, clone_params(policy.net))
    adam = init_adam(out.net, lr=cfg.lr)
    for _epoch in range(cfg.epochs):
        for case in cases:
            logits, cache = policy_logits(out, case.image)
            probs = sigmoid(logits).ravel()
            target = case.gt_mask.bits.ravel().astype(np.float64)
            loss, dprob = _soft_dice_and_grad(probs, target)
            if not math.isfinite(loss):
                raise NumericsError("stage 1 loss diverged")
            dlogits = (dprob * probs * (1.0 - probs))[:, None]
            adam_step(out.net, backward(out.net, cache, dlogits), adam)
    return out


def mine_pairs(policy: PixelPolicy, cases, dice_min: float = 0.8,
               seed: int = 0, synth_per_case: int = 1) -> list[PreferencePair]:
    """Preference pairs: mined from the policy, plus synthetic fragmentations.

    A policy prediction becomes the losing mask when it overlaps the ground
    truth well but has extra connected components. Synthetic fragmentations
    of the ground truth guarantee the pair set is never empty on data the
    policy already segments cleanly.
    """
    pairs: list[PreferencePair] = []
    for idx, case in enumerate(cases):
        gt = case.gt_mask
        b0_gt = betti0(gt)
        pred = predict_mask(policy, case.image)
        dice = pixel_metrics(pred, gt)["dice"]
        b0_pred = betti0(pred)
        if dice > dice_min and b0_pred > b0_gt:
            pairs.append(
                PreferencePair(
                    case_index=idx, image=case.image, y_w=gt, y_l=pred,
                    dice_l=dice, b0_w=b0_gt, b0_l=b0_pred,
                )
            )
        for j in range(synth_per_case):
            spec = DegradeSpec(
                mode="fragment", gap_px=2, n_cuts=1,
                seed=seed * 1_000_003 + idx * 31 + j,
            )
            try:
                broken = degrade(gt, spec)
            except DegradeError:
                continue
            dice_l = pixel_metrics(broken, gt)["dice"]
            b0_l = betti0(broken)
            if dice_l > dice_min and b0_l > b0_gt:
                pairs.append(
                    PreferencePair(
                        case_index=idx, image=case.image, y_w=gt, y_l=broken,
                        dice_l=dice_l, b0_w=b0_gt, b0_l=b0_l,
                    )
                )
    return pairs


def dpo_loss(policy: PixelPolicy, policy_ref: PixelPolicy, pair: PreferencePair,
             beta: float = 0.1):
    """Preference loss and its gradient wrt the trainable policy.

    Both mask likelihoods share one forward pass, so the gradient reduces
    to a term supported only on pixels where the two masks disagree.
    """
    z, cache = policy_logits(policy, pair.image)
    z = z.ravel()
    yw = pair.y_w.bits.ravel().astype(np.float64)
    yl = pair.y_l.bits.ravel().astype(np.float64)
    sp = softplus(z)
    ll_w = float((yw * z - sp).sum())
    ll_l = float((yl * z - sp).sum())
    zr = policy_logits(policy_ref, pair.image)[0].ravel()
    spr = softplus(zr)
    ref_w = float((yw * zr - spr).sum())
    ref_l = float((yl * zr - spr).sum())
    u = beta * ((ll_w - ref_w) - (ll_l - ref_l))
    loss = float(softplus(-u))
    dloss_du = -sigmoid(-u)
    dlogits = (dloss_du * beta * (yw - yl))[:, None]
    grads = backward(policy.net, cache, dlogits)
    return loss, grads


def preference_margin(policy: PixelPolicy, pair: PreferencePair) -> float:
    """log-likelihood gap between the winning and losing masks."""
    z = policy_logits(policy, pair.image)[0].ravel()
    yw = pair.y_w.bits.ravel().astype(np.float64)
    yl = pair.y_l.bits.ravel().astype(np.float64)
    return float(((yw - yl) * z).sum())


def stage2_train(policy: PixelPolicy, policy_ref: PixelPolicy, pairs,
                 cfg: Stage2Config) -> PixelPolicy:
    """Preference optimization against the frozen reference policy.

    Gradients are applied per pair, in pair order, for determinism.
    """
    out = PixelPolicy(policy.patch_radius, clone_params(policy.net))
    if not pairs:
        log.info("stage 2: no preference pairs, leaving policy unchanged")
        return out
    adam = init_adam(out.net, lr=cfg.lr)
    for _epoch in range(cfg.epochs):
        for pair in pairs:
            loss, grads = dpo_loss(out, policy_ref, pair, beta=cfg.beta)
            if not math.isfinite(loss):
                raise NumericsError("stage 2 loss diverged")
            adam_step(out.net, grads, adam)
    return out


def bce_loss(policy: PixelPolicy, image: GrayImage, mask: BinaryMask) -> float:
    """Summed pixel-wise binary cross entropy (the mask's negative log-lik)."""
    return -mask_log_likelihood(policy, image, mask)


def stage3_hsft(policy: PixelPolicy, cases, cfg: Stage3Config):
    """Fine-tune on the hard subset only; returns (policy, report).

    Hard cases are those whose prediction Dice falls below ``tau_hard``.
    The loss is soft Dice plus ``lam`` times the summed cross entropy,
    normalized by pixel count so the two terms share a scale.
    """
    dices = [
        pixel_metrics(predict_mask(policy, case.image), case.gt_mask)["dice"]
        for case in cases
    ]
    hard = [i for i, d in enumerate(dices) if d < cfg.tau_hard]
    report = {
        "hard_fraction": len(hard) / len(cases) if cases else 0.0,
        "hard_count": len(hard),
        "case_count": len(cases),
    }
    out = PixelPolicy(policy.patch_radius, clone_params(policy.net))
    if not hard:
        log.info("stage 3: no cases below tau=%.2f, nothing to do", cfg.tau_hard)
        return out, report
    adam = init_adam(out.net, lr=cfg.lr)
    for _epoch in range(cfg.epochs):
        for i in hard:
            case = cases[i]
            logits, cache = policy_logits(out, case.image)
            z = logits.ravel()
            probs = sigmoid(z)
            target = case.gt_mask.bits.ravel().astype(np.float64)
            dice_loss, dprob = _soft_dice_and_grad(probs, target)
            n = z.size
            bce = float((softplus(z) - target * z).sum())
            loss = dice_loss + cfg.lam * bce / n
            if not math.isfinite(loss):
                raise NumericsError("stage 3 loss diverged")
            dlogits = dprob * probs * (1.0 - probs) + cfg.lam * (probs - target) / n
            adam_step(out.net, backward(out.net, cache, dlogits[:, None]), adam)
    return out, report
