"""The complete training objective and its analytic gradients.

Bidirectional supervised contrastive loss over in-batch pairs, soft-target
distillation against an averaged teacher ensemble, auxiliary cluster
classification on both encoders, and the weighted combination of all four
terms.  `loss_and_gradients` backpropagates the total through the cosine
normalization, the temperature softmax, and the classification heads.

Convention throughout: similarity matrices have audio items on rows and
captions on columns, matched pairs on the diagonal.  Cross-entropies are
mean-reduced over a batch's distributions, so loss magnitudes do not scale
with batch size.  Loss values are computed in the log-softmax domain
(exact; no probability clamp), which is what makes the analytic gradients
match finite differences to full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (Axis, ProbabilityMatrix, as_matrix,
                   log_softmax_with_temperature, softmax_with_temperature)
from .encoders import ModelParams, classify
from .errors import ConfigError, ContractError, DataError


@dataclass(frozen=True)
class LossConfig:
    """Temperature and loss weights."""

    tau: float = 0.05
    lambda1: float = 1.0       # distillation weight
    lambda2: float = 0.05      # classification weight

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values and their weighted total."""

    l_sup: float
    l_dist: float
    l_cls_audio: float
    l_cls_text: float
    total: float


@dataclass(frozen=True)
class TeacherTargets:
    """Soft correspondence targets from an averaged teacher ensemble."""

    p_hat_audio: ProbabilityMatrix     # distributions over audios (columns)
    p_hat_text: ProbabilityMatrix      # distributions over captions (rows)
    m: int = 1                         # number of teachers averaged

    def __post_init__(self):
        if self.p_hat_audio.axis is not Axis.COLUMNS:
            raise ContractError("p_hat_audio must normalize over columns")
        if self.p_hat_text.axis is not Axis.ROWS:
            raise ContractError("p_hat_text must normalize over rows")
        if self.p_hat_audio.shape != self.p_hat_text.shape:
            raise ContractError("teacher target shapes disagree")
        if self.m < 1:
            raise ContractError(f"teacher count must be >= 1, got {self.m}")

    @property
    def shape(self):
        return self.p_hat_audio.shape


@dataclass(frozen=True)
class PairBatch:
    """Matched audio/text feature rows for one training batch."""

    audio_features: np.ndarray      # (n, d_audio)
    text_features: np.ndarray       # (n, d_text)

    def __post_init__(self):
        a = as_matrix(self.audio_features, "audio features")
        t = as_matrix(self.text_features, "text features")
        if a.shape[0] != t.shape[0]:
            raise ContractError(
                f"batch rows disagree: {a.shape[0]} audio vs {t.shape[0]} text")
        object.__setattr__(self, "audio_features", a)
        object.__setattr__(self, "text_features", t)

    def __len__(self):
        return self.audio_features.shape[0]


@dataclass(frozen=True)
class BatchLabels:
    """Per-item cluster labels for the two classification heads."""

    audio: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.audio, dtype=np.int64)
        t = np.asarray(self.text, dtype=np.int64)
        if a.ndim != 1 or t.ndim != 1 or a.shape != t.shape:
            raise ContractError("label arrays must be 1-D and equal length")
        object.__setattr__(self, "audio", a)
        object.__setattr__(self, "text", t)


def _mean_ce_from_logits(target_probs, scaled_logits, axis):
    """Mean cross-entropy of soft targets against softmax(scaled_logits)."""
    logq = scaled_logits - scaled_logits.max(axis=axis.np_axis, keepdims=True)
    logq = logq - np.log(np.exp(logq).sum(axis=axis.np_axis, keepdims=True))
    n_dist = target_probs.shape[0] if axis is Axis.ROWS else target_probs.shape[1]
    return float(-(target_probs * logq).sum() / n_dist)


def supervised_contrastive_loss(sim, cfg):
    """Bidirectional cross-entropy pulling diagonal pairs together.

    Both retrieval directions are scored: captions given each audio (row
    softmax) and audios given each caption (column softmax), against
    one-hot diagonal targets.
    """
    s = as_matrix(sim, "similarity matrix")
    n, m = s.shape
    if n != m:
        raise ContractError(
            f"supervised loss needs a square matrix, got {s.shape}")
    eye = np.eye(n)
    z = s / cfg.tau
    return (_mean_ce_from_logits(eye, z, Axis.COLUMNS)
            + _mean_ce_from_logits(eye, z, Axis.ROWS))


def ensemble_average(similarities):
    """Elementwise mean of teacher similarity matrices.

    Each element is summed with correct rounding (math.fsum), so the
    result is exactly invariant to the order the teachers are listed in;
    a single teacher comes back unchanged.
    """
    if len(similarities) == 0:
        raise ContractError("need at least one similarity matrix")
    mats = [as_matrix(s, f"similarity {i}") for i, s in enumerate(similarities)]
    shape = mats[0].shape
    for i, mat in enumerate(mats[1:], start=1):
        if mat.shape != shape:
            raise ContractError(
                f"similarity {i} has shape {mat.shape}, expected {shape}")
    if len(mats) == 1:
        return mats[0].copy()
    stacked = np.stack(mats).reshape(len(mats), -1)
    sums = np.array([math.fsum(stacked[:, j])
                     for j in range(stacked.shape[1])])
    return (sums / len(mats)).reshape(shape)


def teacher_soft_targets(avg_sim, cfg, m=1):
    """Temperature-softmax the averaged teacher similarities, both directions."""
    s = as_matrix(avg_sim, "averaged similarity")
    return TeacherTargets(
        p_hat_audio=softmax_with_temperature(s, cfg.tau, Axis.COLUMNS),
        p_hat_text=softmax_with_temperature(s, cfg.tau, Axis.ROWS),
        m=m)


def targets_from_teacher_sims(similarities, cfg):
    """Average a list of teacher similarity matrices and soften them."""
    return teacher_soft_targets(ensemble_average(similarities), cfg,
                                m=len(similarities))


def distillation_loss(targets, sim, cfg):
    """Cross-entropy of the teacher soft targets against the student."""
    s = as_matrix(sim, "similarity matrix")
    if s.shape != targets.shape:
        raise ContractError(
            f"student shape {s.shape} != teacher target shape {targets.shape}")
    z = s / cfg.tau
    return (_mean_ce_from_logits(targets.p_hat_audio.values, z, Axis.COLUMNS)
            + _mean_ce_from_logits(targets.p_hat_text.values, z, Axis.ROWS))


def classification_loss(logits, labels):
    """Mean softmax cross-entropy of cluster logits against integer labels."""
    z = as_matrix(logits, "logits")
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1 or lab.shape[0] != z.shape[0]:
        raise ContractError(
            f"need one label per row: {lab.shape} labels for {z.shape} logits")
    k = z.shape[1]
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        bad = lab[(lab < 0) | (lab >= k)][0]
        raise DataError(f"label {bad} outside [0, {k})")
    logq = log_softmax_with_temperature(z, 1.0, Axis.ROWS)
    return float(-logq[np.arange(z.shape[0]), lab].mean())


def combined_loss(l_sup, l_dist, l_cls_audio, l_cls_text, cfg):
    """Weighted total: l_sup + lambda1*l_dist + lambda2*(cls_a + cls_c)."""
    parts = {"l_sup": l_sup, "l_dist": l_dist,
             "l_cls_audio": l_cls_audio, "l_cls_text": l_cls_text}
    for name, value in parts.items():
        if value < 0:
            raise ContractError(f"{name} must be nonnegative, got {value}")
    total = (l_sup + cfg.lambda1 * l_dist
             + cfg.lambda2 * (l_cls_audio + l_cls_text))
    return LossBreakdown(l_sup=float(l_sup), l_dist=float(l_dist),
                         l_cls_audio=float(l_cls_audio),
                         l_cls_text=float(l_cls_text), total=float(total))


def _forward_embeddings(params, batch):
    """Raw and unit-normalized embeddings plus the cosine similarity."""
    enc_a, enc_c = params.audio_encoder, params.text_encoder
    if batch.audio_features.shape[1] != enc_a.d_in:
        raise ContractError(
            f"audio feature width {batch.audio_features.shape[1]} does not "
            f"match encoder input {enc_a.d_in}")
    if batch.text_features.shape[1] != enc_c.d_in:
        raise ContractError(
            f"text feature width {batch.text_features.shape[1]} does not "
            f"match encoder input {enc_c.d_in}")
    raw_a = batch.audio_features @ enc_a.weight.T + enc_a.bias
    raw_c = batch.text_features @ enc_c.weight.T + enc_c.bias
    norm_a = np.linalg.norm(raw_a, axis=1, keepdims=True)
    norm_c = np.linalg.norm(raw_c, axis=1, keepdims=True)
    if np.any(norm_a == 0.0) or np.any(norm_c == 0.0):
        raise DataError("an embedding collapsed to zero norm")
    unit_a = raw_a / norm_a
    unit_c = raw_c / norm_c
    return raw_a, raw_c, norm_a, norm_c, unit_a, unit_c, unit_a @ unit_c.T


def student_similarity(params, batch):
    """Similarity matrix of one model on a batch (no gradients)."""
    return _forward_embeddings(params, batch)[-1]


def _softmax_2d(z, axis):
    shifted = z - z.max(axis=axis.np_axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis.np_axis, keepdims=True)


def _unit_norm_backward(grad_unit, unit, norm):
    # d/d(raw) of f(raw/||raw||): project out the radial component.
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norm


def _head_forward_backward(head, raw_emb, labels, n):
    """Loss, parameter grads, and embedding grad for one head (unweighted)."""
    pre = raw_emb @ head.w1.T + head.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ head.w2.T + head.b2
    loss = classification_loss(logits, labels)
    probs = _softmax_2d(logits, Axis.ROWS)
    probs[np.arange(n), labels] -= 1.0
    d_logits = probs / n
    d_w2 = d_logits.T @ hidden
    d_b2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ head.w2
    d_pre = d_hidden * (pre > 0.0)
    d_w1 = d_pre.T @ raw_emb
    d_b1 = d_pre.sum(axis=0)
    d_emb = d_pre @ head.w1
    grads = {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}
    return loss, grads, d_emb


def loss_and_gradients(params, batch, cfg, targets=None, labels=None):
    """Total loss and its exact gradient for every parameter.

    The distillation path runs iff cfg.lambda1 > 0 (teacher `targets`
    required then, and rejected otherwise); likewise the classification
    path with cfg.lambda2 and `labels`.  Teacher targets are constants:
    no gradient flows into them.
    """
    distill = cfg.lambda1 > 0
    cluster = cfg.lambda2 > 0
    if distill and targets is None:
        raise ConfigError("lambda1 > 0 requires teacher targets")
    if not distill and targets is not None:
        raise ConfigError("teacher targets supplied but lambda1 == 0")
    if cluster and labels is None:
        raise ConfigError("lambda2 > 0 requires cluster labels")
    if not cluster and labels is not None:
        raise ConfigError("cluster labels supplied but lambda2 == 0")
    if cluster and not params.has_heads:
        raise ConfigError("lambda2 > 0 requires classification heads")

    n = len(batch)
    raw_a, raw_c, norm_a, norm_c, unit_a, unit_c, sim = _forward_embeddings(
        params, batch)
    z = sim / cfg.tau
    eye = np.eye(n)

    q_rows = _softmax_2d(z, Axis.ROWS)        # captions given each audio
    q_cols = _softmax_2d(z, Axis.COLUMNS)     # audios given each caption
    l_sup = (_mean_ce_from_logits(eye, z, Axis.COLUMNS)
             + _mean_ce_from_logits(eye, z, Axis.ROWS))
    grad_sim = (q_rows - eye) + (q_cols - eye)

    l_dist = 0.0
    if distill:
        if targets.shape != sim.shape:
            raise ContractError(
                f"teacher target shape {targets.shape} does not match "
                f"batch similarity {sim.shape}")
        p_hat_a = targets.p_hat_audio.values
        p_hat_c = targets.p_hat_text.values
        l_dist = (_mean_ce_from_logits(p_hat_a, z, Axis.COLUMNS)
                  + _mean_ce_from_logits(p_hat_c, z, Axis.ROWS))
        grad_sim = grad_sim + cfg.lambda1 * ((q_rows - p_hat_c)
                                             + (q_cols - p_hat_a))
    grad_sim = grad_sim / (n * cfg.tau)

    # Back through sim = unit_a @ unit_c.T, then the normalization.
    grad_unit_a = grad_sim @ unit_c
    grad_unit_c = grad_sim.T @ unit_a
    grad_raw_a = _unit_norm_backward(grad_unit_a, unit_a, norm_a)
    grad_raw_c = _unit_norm_backward(grad_unit_c, unit_c, norm_c)

    l_cls_a = l_cls_c = 0.0
    grads = {}
    if cluster:
        lab_a = np.asarray(labels.audio, dtype=np.int64)
        lab_c = np.asarray(labels.text, dtype=np.int64)
        if lab_a.shape[0] != n:
            raise ContractError(
                f"{lab_a.shape[0]} labels for a batch of {n}")
        k = params.n_clusters
        for lab in (lab_a, lab_c):
            if lab.min() < 0 or lab.max() >= k:
                raise DataError(f"cluster label outside [0, {k})")
        l_cls_a, head_grads_a, d_emb_a = _head_forward_backward(
            params.audio_head, raw_a, lab_a, n)
        l_cls_c, head_grads_c, d_emb_c = _head_forward_backward(
            params.text_head, raw_c, lab_c, n)
        grad_raw_a = grad_raw_a + cfg.lambda2 * d_emb_a
        grad_raw_c = grad_raw_c + cfg.lambda2 * d_emb_c
        for prefix, head_grads in (("audio_head", head_grads_a),
                                   ("text_head", head_grads_c)):
            for name, g in head_grads.items():
                grads[f"{prefix}.{name}"] = cfg.lambda2 * g

    grads["audio_encoder.weight"] = grad_raw_a.T @ batch.audio_features
    grads["audio_encoder.bias"] = grad_raw_a.sum(axis=0)
    grads["text_encoder.weight"] = grad_raw_c.T @ batch.text_features
    grads["text_encoder.bias"] = grad_raw_c.sum(axis=0)

    if params.has_heads and not cluster:
        # Heads exist but the path is off this step: zero gradients keep
        # the optimizer state shapes aligned.
        for prefix, head in (("audio_head", params.audio_head),
                             ("text_head", params.text_head)):
            grads[f"{prefix}.w1"] = np.zeros_like(head.w1)
            grads[f"{prefix}.b1"] = np.zeros_like(head.b1)
            grads[f"{prefix}.w2"] = np.zeros_like(head.w2)
            grads[f"{prefix}.b2"] = np.zeros_like(head.b2)

    breakdown = combined_loss(l_sup, l_dist, l_cls_a, l_cls_c, cfg)
    ordered = {name: grads[name] for name in params.named_tensors()}
    return breakdown, ordered


def total_loss(params, batch, cfg, targets=None, labels=None):
    """Scalar total loss only; shares every check with loss_and_gradients."""
    return loss_and_gradients(params, batch, cfg, targets, labels)[0].total
