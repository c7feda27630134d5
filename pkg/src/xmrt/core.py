"""Dense-matrix primitives the rest of the engine builds on.

Cosine similarity between embedding batches, temperature softmax, and
cross-entropy over probability matrices.  Everything is float64 and pure:
no function here mutates its inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ContractError, DataError

# Floor applied to probabilities inside log() in the probability-space
# cross-entropy; tau=0.05 routinely produces values below double rounding.
LOG_EPS = 1e-12


class Axis(enum.Enum):
    """Which slices of a matrix form probability distributions."""

    ROWS = "rows"          # each row sums to 1
    COLUMNS = "columns"    # each column sums to 1

    @property
    def np_axis(self):
        return 1 if self is Axis.ROWS else 0


def as_matrix(values, name="matrix"):
    """Coerce to a finite 2-D float64 array; raise DataError otherwise."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class VectorBatch:
    """A batch of feature or embedding vectors with optional item ids."""

    values: np.ndarray                       # (n, width) float64
    ids: Optional[tuple] = None              # per-row item ids

    def __post_init__(self):
        arr = as_matrix(self.values, "batch values")
        object.__setattr__(self, "values", arr)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != arr.shape[0]:
                raise ContractError(
                    f"got {len(ids)} ids for {arr.shape[0]} rows")
            object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def id_of(self, row):
        if self.ids is not None:
            return self.ids[row]
        return f"row {row}"


def _coerce_batch(batch, name):
    if isinstance(batch, VectorBatch):
        return batch
    return VectorBatch(as_matrix(batch, name))


@dataclass(frozen=True)
class ProbabilityMatrix:
    """A matrix whose rows or columns are probability distributions."""

    values: np.ndarray
    axis: Axis

    def __post_init__(self):
        arr = as_matrix(self.values, "probability matrix")
        object.__setattr__(self, "values", arr)
        if not isinstance(self.axis, Axis):
            raise ContractError(f"axis must be an Axis, got {self.axis!r}")
        if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
            raise DataError("probability entries must lie in [0, 1]")
        sums = arr.sum(axis=self.axis.np_axis)
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise DataError(
                f"distributions along {self.axis.value} must sum to 1 "
                f"(worst deviation {np.max(np.abs(sums - 1.0)):.3e})")

    @property
    def shape(self):
        return self.values.shape

    def n_distributions(self):
        return self.shape[0] if self.axis is Axis.ROWS else self.shape[1]


def cosine_similarity_matrix(audio_emb, text_emb):
    """Pairwise cosine similarities, audio rows by caption columns.

    Entry (i, j) is the dot product of the i-th audio embedding and the
    j-th text embedding after unit-normalizing both.  Raises DataError
    naming the offending item if any row has zero norm.
    """
    a = _coerce_batch(audio_emb, "audio embeddings")
    c = _coerce_batch(text_emb, "text embeddings")
    if a.width != c.width:
        raise ContractError(
            f"embedding widths differ: audio {a.width} vs text {c.width}")
    for batch, label in ((a, "audio"), (c, "text")):
        norms = np.linalg.norm(batch.values, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DataError(
                f"{label} item {batch.id_of(zero[0])!r} has a zero-norm "
                "embedding; cosine similarity is undefined")
    a_hat = a.values / np.linalg.norm(a.values, axis=1, keepdims=True)
    c_hat = c.values / np.linalg.norm(c.values, axis=1, keepdims=True)
    return np.clip(a_hat @ c_hat.T, -1.0, 1.0)


def softmax_with_temperature(logits, tau, axis):
    """Temperature softmax along the chosen axis, max-shifted for stability."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    z = as_matrix(logits, "logits") / tau
    np_axis = axis.np_axis
    z = z - z.max(axis=np_axis, keepdims=True)
    e = np.exp(z)
    return ProbabilityMatrix(e / e.sum(axis=np_axis, keepdims=True), axis)


def log_softmax_with_temperature(logits, tau, axis):
    """Log of the temperature softmax, computed without underflow."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    z = as_matrix(logits, "logits") / tau
    np_axis = axis.np_axis
    z = z - z.max(axis=np_axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=np_axis, keepdims=True))


def cross_entropy(targets, predictions):
    """Mean cross-entropy between matched probability matrices.

    Averages -sum(p * log q) over the distributions (rows or columns per
    the shared axis).  Natural logarithm; predictions are floored at
    LOG_EPS so a zero never reaches log().
    """
    if not isinstance(targets, ProbabilityMatrix) or not isinstance(
            predictions, ProbabilityMatrix):
        raise ContractError("cross_entropy expects two ProbabilityMatrix")
    if targets.shape != predictions.shape:
        raise ContractError(
            f"shape mismatch: targets {targets.shape} vs "
            f"predictions {predictions.shape}")
    if targets.axis is not predictions.axis:
        raise ContractError(
            f"axis mismatch: targets {targets.axis.value} vs "
            f"predictions {predictions.axis.value}")
    q = np.clip(predictions.values, LOG_EPS, 1.0)
    total = -(targets.values * np.log(q)).sum()
    return float(total / targets.n_distributions())
