"""The five-step preparation chain plus the sliding-window baseline.

Full-sequence mode: z-score standardization fitted on training data,
per-timestep capped RUL labels, random end trimming, and length-bucketed
padded batches. Windowed mode reproduces the fixed-window segmentation
(with its zero-padding pathology) that the full-sequence path replaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .dataset import EngineTrajectory, FEATURE_NAMES, N_FEATURES, N_SETTINGS
from .errors import ValidationError

R_MAX = 125
EPSILON_CONST = 1e-8
TRIM_MIN = 10
TRIM_MAX = 75
TRIM_FLOOR = 30


@dataclass
class NormStats:
    """Per-feature standardization statistics fitted on training data.

    `retained_mask` flags non-constant raw features; `include_settings`
    additionally drops the three operational-setting columns from the
    transform output without touching the constant-feature bookkeeping.
    """

    means: np.ndarray  # [24]
    stds: np.ndarray  # [24]
    retained_mask: np.ndarray  # [24] bool
    epsilon_const: float = EPSILON_CONST
    include_settings: bool = True
    kind: str = "zscore"

    @property
    def active_mask(self) -> np.ndarray:
        mask = self.retained_mask.copy()
        if not self.include_settings:
            mask[:N_SETTINGS] = False
        return mask

    @property
    def n_features(self) -> int:
        return int(self.active_mask.sum())

    @property
    def feature_names(self) -> list[str]:
        return [n for n, keep in zip(FEATURE_NAMES, self.active_mask) if keep]

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "kind": self.kind,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "retained_mask": [bool(b) for b in self.retained_mask],
            "epsilon_const": self.epsilon_const,
            "include_settings": self.include_settings,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValidationError(f"unsupported NormStats version {doc.get('version')!r}")
        return cls(
            means=np.array(doc["means"], dtype=np.float64),
            stds=np.array(doc["stds"], dtype=np.float64),
            retained_mask=np.array(doc["retained_mask"], dtype=bool),
            epsilon_const=float(doc["epsilon_const"]),
            include_settings=bool(doc.get("include_settings", True)),
            kind=str(doc.get("kind", "zscore")),
        )


def fit_normalizer(
    trajectories: list[EngineTrajectory],
    include_settings: bool = True,
    epsilon_const: float = EPSILON_CONST,
    kind: str = "zscore",
) -> NormStats:
    """Fit per-feature statistics over the concatenation of all frames.

    Standard deviations use the population (divide-by-N) convention.
    Features with std below `epsilon_const` are flagged excluded. With
    kind="minmax" the stored stats are minima and ranges instead, used by
    the windowed baseline for scale-to-[0,1] comparison runs.
    """
    if not trajectories:
        raise ValidationError("fit_normalizer needs at least one trajectory")
    stacked = np.vstack([t.features for t in trajectories])
    if kind == "zscore":
        means = stacked.mean(axis=0)
        stds = stacked.std(axis=0)
        spread = stds
    elif kind == "minmax":
        mins = stacked.min(axis=0)
        ranges = stacked.max(axis=0) - mins
        means, stds, spread = mins, ranges, ranges
    else:
        raise ValidationError(f"unknown normalization kind {kind!r}")
    retained = spread >= epsilon_const
    return NormStats(
        means=means,
        stds=stds,
        retained_mask=retained,
        epsilon_const=epsilon_const,
        include_settings=include_settings,
        kind=kind,
    )


def apply_normalizer(stats: NormStats, trajectory: EngineTrajectory) -> np.ndarray:
    """Transform one trajectory to a [T, F] matrix of retained features."""
    mask = stats.active_mask
    if not mask.any():
        raise ValidationError("normalizer retains no features")
    x = trajectory.features[:, mask]
    return (x - stats.means[mask]) / stats.stds[mask]


@dataclass
class LabeledSequence:
    """Standardized features paired with per-timestep capped RUL labels."""

    unit_id: int
    features: np.ndarray  # [T, F]
    labels: np.ndarray  # [T]
    original_length: int

    @property
    def length(self) -> int:
        return len(self.labels)


def label_rul(total_length: int, r_max: int = R_MAX) -> np.ndarray:
    """Per-timestep capped RUL for a run-to-failure series of T cycles.

    y_t = min(r_max, T - t) for t = 1..T, so the final observed cycle is
    labeled 0 and early life saturates at the cap.
    """
    if total_length < 1:
        raise ValidationError(f"total_length must be >= 1, got {total_length}")
    if r_max < 1:
        raise ValidationError(f"r_max must be >= 1, got {r_max}")
    t = np.arange(1, total_length + 1)
    return np.minimum(float(r_max), (total_length - t).astype(np.float64))


def make_labeled_sequence(
    trajectory: EngineTrajectory, stats: NormStats, r_max: int = R_MAX
) -> LabeledSequence:
    return LabeledSequence(
        unit_id=trajectory.unit_id,
        features=apply_normalizer(stats, trajectory),
        labels=label_rul(trajectory.length, r_max),
        original_length=trajectory.length,
    )


def trim_random_end(seq: LabeledSequence, rng: np.random.Generator) -> LabeledSequence:
    """Drop a uniform-random number of trailing timesteps, keeping >= 30.

    The trim length r is drawn from [10, min(75, T - 30)]. Sequences too
    short to admit r >= 10 (T < 40) are returned unchanged. Labels are cut
    in lockstep, so the new final label is min(R_max, T - new_length).
    """
    t = seq.length
    if t != seq.original_length:
        raise ValidationError(f"unit {seq.unit_id}: sequence was already trimmed")
    if t < TRIM_FLOOR + TRIM_MIN:
        return seq
    hi = min(TRIM_MAX, t - TRIM_FLOOR)
    r = int(rng.integers(TRIM_MIN, hi + 1))
    return LabeledSequence(
        unit_id=seq.unit_id,
        features=seq.features[: t - r],
        labels=seq.labels[: t - r],
        original_length=seq.original_length,
    )


@dataclass
class Window:
    """One fixed-length sub-sequence labeled at its final timestep."""

    unit_id: int
    features: np.ndarray  # [window, F]
    label: float


def window_segment(seq: LabeledSequence, window: int, stride: int = 1) -> list[Window]:
    """Cut a sequence into overlapping fixed-length windows (baseline mode).

    Sequences shorter than `window` produce a single window left-padded
    with zeros, reproducing the edge-padding artifact of the segmentation
    approach this pipeline replaces.
    """
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    t, f = seq.features.shape
    if t < window:
        padded = np.zeros((window, f))
        padded[window - t :] = seq.features
        return [Window(unit_id=seq.unit_id, features=padded, label=float(seq.labels[-1]))]
    out = []
    for start in range(0, t - window + 1, stride):
        end = start + window
        out.append(
            Window(
                unit_id=seq.unit_id,
                features=seq.features[start:end],
                label=float(seq.labels[end - 1]),
            )
        )
    return out


@dataclass
class PaddedBatch:
    """Right-padded batch tensors with a validity mask.

    `mask[b, t]` is True exactly where timestep t is real input for sample
    b; padded positions hold zeros everywhere. `loss_mask` marks the
    positions that receive supervision: identical to `mask` in
    full-sequence mode, final-position-only in windowed mode.
    """

    features: np.ndarray  # [B, F, L]
    labels: np.ndarray  # [B, L]
    mask: np.ndarray  # [B, L] bool
    lengths: np.ndarray  # [B] int
    unit_ids: np.ndarray  # [B] int
    loss_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.loss_mask is None:
            self.loss_mask = self.mask

    @property
    def size(self) -> int:
        return self.features.shape[0]


def _batch_from_sequences(seqs: list[LabeledSequence]) -> PaddedBatch:
    b = len(seqs)
    f = seqs[0].features.shape[1]
    lengths = np.array([s.length for s in seqs], dtype=np.int64)
    l_max = int(lengths.max())
    features = np.zeros((b, f, l_max))
    labels = np.zeros((b, l_max))
    mask = np.zeros((b, l_max), dtype=bool)
    for i, s in enumerate(seqs):
        features[i, :, : s.length] = s.features.T
        labels[i, : s.length] = s.labels
        mask[i, : s.length] = True
    return PaddedBatch(
        features=features,
        labels=labels,
        mask=mask,
        lengths=lengths,
        unit_ids=np.array([s.unit_id for s in seqs], dtype=np.int64),
    )


def build_batches(
    seqs: list[LabeledSequence],
    batch_size: int = 8,
    rng: np.random.Generator | None = None,
) -> list[PaddedBatch]:
    """Group sequences into length-bucketed padded batches.

    With an rng, sequences are shuffled before bucketing and the batch
    order is shuffled after, so epochs differ while padding stays small.
    Without one the grouping is deterministic (evaluation order).
    """
    if not seqs:
        raise ValidationError("build_batches needs at least one sequence")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(seqs))
    if rng is not None:
        order = rng.permutation(len(seqs))
    # Stable sort keeps the shuffle as the tie-breaker within equal lengths.
    order = order[np.argsort([seqs[i].length for i in order], kind="stable")]
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        chunk_order = rng.permutation(len(chunks))
        chunks = [chunks[i] for i in chunk_order]
    return [_batch_from_sequences([seqs[i] for i in chunk]) for chunk in chunks]


def build_window_batches(
    windows: list[Window],
    batch_size: int = 8,
    rng: np.random.Generator | None = None,
) -> list[PaddedBatch]:
    """Batch fixed-length windows; supervision lands on the last position only.

    The validity mask is all-true: zero left-padding inside short windows
    is fed to the network as if it were real signal, which is exactly the
    artifact the windowed baseline is meant to exhibit.
    """
    if not windows:
        raise ValidationError("build_window_batches needs at least one window")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(windows))
    if rng is not None:
        order = rng.permutation(len(windows))
    batches = []
    for i in range(0, len(order), batch_size):
        chunk = [windows[j] for j in order[i : i + batch_size]]
        b = len(chunk)
        window = chunk[0].features.shape[0]
        f = chunk[0].features.shape[1]
        features = np.zeros((b, f, window))
        labels = np.zeros((b, window))
        for k, w in enumerate(chunk):
            features[k] = w.features.T
            labels[k, window - 1] = w.label
        mask = np.ones((b, window), dtype=bool)
        loss_mask = np.zeros((b, window), dtype=bool)
        loss_mask[:, window - 1] = True
        batches.append(
            PaddedBatch(
                features=features,
                labels=labels,
                mask=mask,
                lengths=np.full(b, window, dtype=np.int64),
                unit_ids=np.array([w.unit_id for w in chunk], dtype=np.int64),
                loss_mask=loss_mask,
            )
        )
    return batches
