"""Three-stage training loop: optimizer, schedule, batching, augmentation.

The optimizer is AdamW with decoupled weight decay operating on flat
name-to-array dicts, so the same step function serves encoders and heads
alike.  The learning-rate schedule is a linear warmup into a cosine decay
between a peak and a floor.  Batch order, caption word edits, and pair
mixing all draw from explicitly seeded generators, which makes every
stage bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_matrix
from .errors import ConfigError, ContractError, DataError
from .losses import (BatchLabels, LossConfig, PairBatch, loss_and_gradients,
                     student_similarity, targets_from_teacher_sims)

STAGES = ("pretrain", "finetune", "refinetune")
_MIX_STREAM = 104729      # distinguishes the mixing rng from batch shuffles


@dataclass
class OptimizerState:
    """AdamW moment estimates, step counter, and update hyperparameters."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.step < 0:
            raise ContractError("step must be >= 0")


def init_optimizer(tensors, weight_decay=0.0):
    """Zeroed moments shaped like the given name-to-array dict."""
    return OptimizerState(
        m={name: np.zeros_like(t) for name, t in tensors.items()},
        v={name: np.zeros_like(t) for name, t in tensors.items()},
        step=0, weight_decay=weight_decay)


def adamw_step(state, tensors, grads, lr):
    """One decoupled-weight-decay Adam update; returns new tensors.

    Decay is applied directly to the parameter, scaled by lr but not by
    the adaptive moments.  Bias vectors decay too; at desk scale the
    distinction is not worth a carve-out.
    """
    if set(tensors) != set(grads):
        raise ContractError("gradient keys do not match parameter keys")
    if lr < 0:
        raise ConfigError(f"learning rate must be nonnegative, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, theta in tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ContractError(
                f"gradient for {name} has shape {g.shape}, "
                f"parameter has {theta.shape}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = (state.beta2 * state.v[name]
                         + (1.0 - state.beta2) * g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = (theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
                     - lr * state.weight_decay * theta)
    return out


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup then cosine decay from peak_lr down to floor_lr."""

    peak_lr: float
    floor_lr: float
    total_steps: int
    warmup_steps: int

    def __post_init__(self):
        if self.peak_lr < 0:
            raise ConfigError(
                f"peak_lr must be nonnegative, got {self.peak_lr}")
        if not 0 <= self.floor_lr <= self.peak_lr:
            raise ConfigError("need 0 <= floor_lr <= peak_lr")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError("need 0 <= warmup_steps < total_steps")


def lr_at_step(schedule, step):
    """Learning rate at a given step, 0-indexed over [0, total_steps].

    Warmup rises linearly from zero and hits peak_lr exactly at step
    warmup_steps; the cosine then lands exactly on floor_lr at
    total_steps.  Step total_steps itself is legal to query so the final
    value is observable.  The cosine is evaluated as a convex blend
    peak*w + floor*(1-w) so both endpoints are exact in floating point.
    """
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(
            f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.warmup_steps > 0 and step < schedule.warmup_steps:
        return schedule.peak_lr * (step / schedule.warmup_steps)
    span = schedule.total_steps - schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / span
    w = 0.5 * (1.0 + np.cos(np.pi * progress))
    return float(schedule.peak_lr * w + schedule.floor_lr * (1.0 - w))


@dataclass(frozen=True)
class AugmentationConfig:
    """Caption word edits and synthetic pair mixing.

    word_edit_probability gates whether a caption gets one word edited;
    synonym_table maps a word to its replacement candidates; mix_count
    synthetic averaged pairs are appended to the stage's training set.
    """

    word_edit_probability: float = 0.8
    synonym_table: dict = field(default_factory=dict)
    mix_count: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.word_edit_probability <= 1.0:
            raise ConfigError("word_edit_probability must be in [0, 1]")
        if self.mix_count < 0:
            raise ConfigError("mix_count must be >= 0")
        table = {str(w): tuple(str(s) for s in alts)
                 for w, alts in dict(self.synonym_table).items()}
        object.__setattr__(self, "synonym_table", table)


def augment_caption(tokens, cfg, rng):
    """Maybe delete or synonym-replace exactly one word.

    With probability word_edit_probability one uniformly chosen word is
    edited, a fair coin picking deletion or replacement; replacement is
    skipped when the chosen word has no synonym entry, and deletion is
    skipped when it would empty the caption.  Draw order is fixed (gate,
    word index, coin, synonym index) so a shared generator stays aligned
    across captions.
    """
    words = list(tokens)
    if not words:
        raise DataError("cannot augment an empty caption")
    gate = rng.uniform()
    if gate >= cfg.word_edit_probability:
        return words
    idx = int(rng.integers(0, len(words)))
    delete = int(rng.integers(0, 2)) == 0
    if delete:
        if len(words) > 1:
            del words[idx]
        return words
    options = cfg.synonym_table.get(words[idx], ())
    if not options:
        return words
    words[idx] = options[int(rng.integers(0, len(options)))]
    return words


@dataclass(frozen=True)
class AudioCaptionPair:
    """One audio clip with one caption, as features plus text."""

    audio: np.ndarray
    text: np.ndarray
    caption: str = ""
    synthetic: bool = False


def mix_pairs(pair_a, pair_b, rng=None):
    """Average two pairs into a synthetic example, captions joined by 'and'.

    The mixing weights are fixed at 0.5/0.5; rng is accepted for
    interface stability but unused.
    """
    a = np.asarray(pair_a.audio, dtype=np.float64)
    b = np.asarray(pair_b.audio, dtype=np.float64)
    ta = np.asarray(pair_a.text, dtype=np.float64)
    tb = np.asarray(pair_b.text, dtype=np.float64)
    if a.shape != b.shape or ta.shape != tb.shape:
        raise ContractError("mixed pairs must share feature shapes")
    return AudioCaptionPair(
        audio=0.5 * a + 0.5 * b,
        text=0.5 * ta + 0.5 * tb,
        caption=f"{pair_a.caption} and {pair_b.caption}",
        synthetic=True)


@dataclass(frozen=True)
class PairedDataset:
    """Aligned audio/text feature matrices with optional item ids."""

    audio_features: np.ndarray
    text_features: np.ndarray
    audio_ids: tuple = ()
    caption_ids: tuple = ()

    def __post_init__(self):
        a = as_matrix(self.audio_features, "audio features")
        t = as_matrix(self.text_features, "text features")
        if a.shape[0] != t.shape[0]:
            raise ContractError(
                f"{a.shape[0]} audio rows vs {t.shape[0]} caption rows")
        object.__setattr__(self, "audio_features", a)
        object.__setattr__(self, "text_features", t)
        object.__setattr__(self, "audio_ids", tuple(self.audio_ids))
        object.__setattr__(self, "caption_ids", tuple(self.caption_ids))
        for name, ids in (("audio", self.audio_ids),
                          ("caption", self.caption_ids)):
            if ids and len(ids) != a.shape[0]:
                raise ContractError(
                    f"{len(ids)} {name} ids for {a.shape[0]} rows")

    def __len__(self):
        return self.audio_features.shape[0]


def expand_with_mixes(dataset, mix_count, rng_seed):
    """Append mix_count synthetic averaged pairs drawn from the dataset."""
    if mix_count == 0:
        return dataset
    n = len(dataset)
    if n < 2:
        raise ContractError("mixing needs at least 2 items")
    rng = np.random.default_rng([rng_seed, _MIX_STREAM])
    extra_a = np.empty((mix_count, dataset.audio_features.shape[1]))
    extra_t = np.empty((mix_count, dataset.text_features.shape[1]))
    for j in range(mix_count):
        i1, i2 = rng.choice(n, size=2, replace=False)
        extra_a[j] = 0.5 * (dataset.audio_features[i1]
                            + dataset.audio_features[i2])
        extra_t[j] = 0.5 * (dataset.text_features[i1]
                            + dataset.text_features[i2])
    mix_ids = tuple(f"mix{j:04d}" for j in range(mix_count))
    return PairedDataset(
        audio_features=np.vstack([dataset.audio_features, extra_a]),
        text_features=np.vstack([dataset.text_features, extra_t]),
        audio_ids=dataset.audio_ids + mix_ids if dataset.audio_ids else (),
        caption_ids=(dataset.caption_ids + mix_ids
                     if dataset.caption_ids else ()))


def make_batches(dataset, batch_size, seed, epoch):
    """Shuffled index batches for one epoch; a short final batch is dropped.

    `dataset` may be anything with a length, or a plain item count.  The
    shuffle generator is seeded from (seed, epoch) so epochs differ but
    reruns do not.
    """
    n_items = dataset if isinstance(dataset, int) else len(dataset)
    if batch_size < 2:
        raise ConfigError(
            f"contrastive batches need >= 2 items, got {batch_size}")
    if n_items < batch_size:
        raise ContractError(
            f"dataset of {n_items} cannot fill a batch of {batch_size}")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n_items)
    n_full = n_items // batch_size
    return [order[i * batch_size:(i + 1) * batch_size]
            for i in range(n_full)]


@dataclass(frozen=True)
class StageConfig:
    """One training stage: which loss paths run and for how long.

    Stage roles: pretrain is contrastive-only, finetune adds teacher
    distillation and augmentation, refinetune adds the cluster heads.
    The flags are validated against the stage name so a misconfigured
    run fails immediately instead of training the wrong objective.
    """

    name: str
    epochs: int = 20
    batch_size: int = 16
    use_augmentation: bool = False
    use_distillation: bool = False
    use_clusters: bool = False

    def __post_init__(self):
        if self.name not in STAGES:
            raise ConfigError(
                f"unknown stage {self.name!r}, expected one of {STAGES}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.name == "pretrain" and self.use_distillation:
            raise ConfigError("pretrain must not use distillation")
        if self.use_clusters and self.name != "refinetune":
            raise ConfigError("cluster heads only run in refinetune")
        if self.use_clusters and self.use_augmentation:
            # Synthetic averaged rows carry no curated cluster label.
            raise ConfigError("augmentation cannot run in the cluster stage")


@dataclass(frozen=True)
class StepRecord:
    """One optimizer step's diagnostics."""

    step: int
    epoch: int
    lr: float
    l_sup: float
    l_dist: float
    l_cls_audio: float
    l_cls_text: float
    total: float


def _effective_loss_config(stage, base):
    lam1 = base.lambda1 if stage.use_distillation else 0.0
    lam2 = base.lambda2 if stage.use_clusters else 0.0
    return LossConfig(tau=base.tau, lambda1=lam1, lambda2=lam2)


def run_stage(stage, params, dataset, teachers=None, pseudo_labels=None, *,
              loss_cfg=None, peak_lr=2e-5, floor_lr=1e-7,
              warmup_fraction=0.1, weight_decay=0.01, augmentation=None,
              seed=0):
    """Train one stage to completion; returns (params, records).

    `teachers` is a sequence of frozen ModelParams whose averaged
    similarities provide distillation targets (required iff the stage
    distills).  `pseudo_labels` is an int array aligned with the dataset
    rows (required iff the stage uses cluster heads; the row's label
    serves both modalities since rows are matched pairs).  `augmentation`
    configures synthetic pair mixing (accepted iff the stage's
    augmentation flag is on; word edits operate on caption text and have
    no feature-space effect here).
    """
    base = loss_cfg if loss_cfg is not None else LossConfig()
    cfg = _effective_loss_config(stage, base)
    if stage.use_distillation and not teachers:
        raise ConfigError(f"stage {stage.name} needs teacher models")
    if teachers and not stage.use_distillation:
        raise ConfigError(f"stage {stage.name} does not accept teachers")
    if stage.use_clusters:
        if pseudo_labels is None:
            raise ConfigError(f"stage {stage.name} needs pseudo labels")
        if not params.has_heads:
            raise ConfigError("refinetune requires classification heads")
    elif pseudo_labels is not None:
        raise ConfigError(f"stage {stage.name} does not accept labels")
    if augmentation is not None and not stage.use_augmentation:
        raise ConfigError(
            f"stage {stage.name} has augmentation off but a config was "
            f"given")

    labels_all = None
    if pseudo_labels is not None:
        labels_all = np.asarray(pseudo_labels, dtype=np.int64)
        if labels_all.shape != (len(dataset),):
            raise ContractError(
                f"{labels_all.shape} labels for {len(dataset)} items")

    if stage.use_augmentation:
        aug = augmentation if augmentation is not None else \
            AugmentationConfig()
        dataset = expand_with_mixes(dataset, aug.mix_count, aug.rng_seed)

    if stage.epochs == 0:
        return params, []

    steps_per_epoch = len(dataset) // stage.batch_size
    if steps_per_epoch == 0:
        raise ContractError(
            f"dataset of {len(dataset)} cannot fill a batch of "
            f"{stage.batch_size}")
    total_steps = steps_per_epoch * stage.epochs
    warmup = min(total_steps - 1, round(warmup_fraction * total_steps))
    schedule = ScheduleConfig(peak_lr=peak_lr, floor_lr=floor_lr,
                              total_steps=total_steps, warmup_steps=warmup)

    tensors = params.named_tensors()
    state = init_optimizer(tensors, weight_decay=weight_decay)
    records = []
    step = 0
    for epoch in range(stage.epochs):
        for batch_idx in make_batches(len(dataset), stage.batch_size,
                                      seed, epoch):
            batch = PairBatch(
                audio_features=dataset.audio_features[batch_idx],
                text_features=dataset.text_features[batch_idx])

            targets = None
            if stage.use_distillation:
                sims = [student_similarity(t, batch) for t in teachers]
                targets = targets_from_teacher_sims(sims, cfg)

            labels = None
            if stage.use_clusters:
                lab = labels_all[batch_idx]
                labels = BatchLabels(audio=lab, text=lab)

            lr = lr_at_step(schedule, step)
            breakdown, grads = loss_and_gradients(
                params, batch, cfg, targets=targets, labels=labels)
            tensors = adamw_step(state, tensors, grads, lr)
            params = params.with_tensors(tensors)
            records.append(StepRecord(
                step=step, epoch=epoch, lr=lr, l_sup=breakdown.l_sup,
                l_dist=breakdown.l_dist, l_cls_audio=breakdown.l_cls_audio,
                l_cls_text=breakdown.l_cls_text, total=breakdown.total))
            step += 1
    return params, records
