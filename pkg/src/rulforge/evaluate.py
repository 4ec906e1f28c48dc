"""RMSE and the asymmetric scoring function, plus the test-set protocol.

Test evaluation feeds each truncated test trajectory through the model
and reads the prediction at the last observed cycle, clamped to the label
range [0, 125]. Late predictions are penalized more steeply than early
ones by the exponential score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetBundle, EngineTrajectory
from .errors import ParseError, ValidationError
from .model import TcnModel
from .preprocess import (
    LabeledSequence,
    NormStats,
    R_MAX,
    apply_normalizer,
    build_batches,
    build_window_batches,
    window_segment,
)

SCORE_VARIANTS = ("paper", "offset_minus_one")


def rmse(preds: np.ndarray, truths: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise ValidationError(f"shape mismatch {preds.shape} vs {truths.shape}")
    if preds.size == 0:
        raise ValidationError("rmse needs at least one sample")
    d = preds - truths
    return float(np.sqrt(np.mean(d * d)))


def nasa_score(preds: np.ndarray, truths: np.ndarray, variant: str = "paper") -> float:
    """Asymmetric exponential score, summed over engines.

    d = prediction - truth. Early predictions (d < 0) cost exp(-d/13),
    late ones exp(d/10). The "paper" variant sums the exponentials as
    printed; "offset_minus_one" subtracts 1 per engine so a perfect
    prediction contributes 0.
    """
    if variant not in SCORE_VARIANTS:
        raise ValidationError(f"unknown score variant {variant!r}, expected {SCORE_VARIANTS}")
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise ValidationError(f"shape mismatch {preds.shape} vs {truths.shape}")
    if preds.size == 0:
        raise ValidationError("score needs at least one sample")
    d = preds - truths
    terms = np.where(d < 0, np.exp(-d / 13.0), np.exp(d / 10.0))
    if variant == "offset_minus_one":
        terms = terms - 1.0
    return float(terms.sum())


@dataclass
class MetricsReport:
    subset_id: str
    rmse: float
    score: float
    score_variant: str
    cap_truth: bool
    n_engines: int
    per_engine: list[dict]

    def to_dict(self) -> dict:
        return {
            "subset": self.subset_id,
            "rmse": self.rmse,
            "nasa_score": self.score,
            "score_variant": self.score_variant,
            "cap_truth": self.cap_truth,
            "n_engines": self.n_engines,
            "per_engine": self.per_engine,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _last_window(seq: LabeledSequence, window: int) -> LabeledSequence:
    """The final `window` cycles, left-padded with zeros when too short."""
    t, f = seq.features.shape
    if t >= window:
        feats = seq.features[t - window :]
    else:
        feats = np.zeros((window, f))
        feats[window - t :] = seq.features
    return LabeledSequence(
        unit_id=seq.unit_id,
        features=feats,
        labels=np.zeros(window),
        original_length=window,
    )


def predict_final(
    model: TcnModel,
    sequences: list[LabeledSequence],
    mode: str = "full_sequence",
    window: int = 31,
    batch_size: int = 8,
) -> dict[int, float]:
    """Predicted RUL at each sequence's last observed cycle, clamped to [0, 125]."""
    if mode == "windowed":
        sequences = [_last_window(s, window) for s in sequences]
    preds: dict[int, float] = {}
    for batch in build_batches(sequences, batch_size, rng=None):
        out = model.forward(batch.features, batch.mask, training=False)
        for i, unit in enumerate(batch.unit_ids):
            last = int(batch.lengths[i]) - 1
            preds[int(unit)] = float(np.clip(out[i, last], 0.0, float(R_MAX)))
    return preds


def evaluate_test(
    model: TcnModel,
    bundle: DatasetBundle,
    stats: NormStats,
    cap_truth: bool = True,
    score_variant: str = "paper",
    mode: str = "full_sequence",
    window: int = 31,
    batch_size: int = 8,
) -> MetricsReport:
    """Score the model on a bundle's test split against its true RUL values."""
    sequences = [
        LabeledSequence(
            unit_id=t.unit_id,
            features=apply_normalizer(stats, t),
            labels=np.zeros(t.length),
            original_length=t.length,
        )
        for t in bundle.test
    ]
    pred_by_unit = predict_final(model, sequences, mode, window, batch_size)
    records = []
    preds = []
    truths = []
    for traj, true_rul in zip(bundle.test, bundle.test_rul):
        truth = float(min(true_rul, R_MAX)) if cap_truth else float(true_rul)
        pred = pred_by_unit[traj.unit_id]
        preds.append(pred)
        truths.append(truth)
        records.append(
            {
                "unit_id": traj.unit_id,
                "predicted": pred,
                "actual": truth,
                "d": pred - truth,
            }
        )
    records.sort(key=lambda r: r["unit_id"])
    preds = np.array(preds)
    truths = np.array(truths)
    return MetricsReport(
        subset_id=bundle.subset_id,
        rmse=rmse(preds, truths),
        score=nasa_score(preds, truths, score_variant),
        score_variant=score_variant,
        cap_truth=cap_truth,
        n_engines=len(records),
        per_engine=records,
    )


@dataclass
class CurveRecord:
    """Per-cycle predicted and actual RUL for one engine."""

    unit_id: int
    cycles: np.ndarray  # [T] int
    predicted: np.ndarray  # [T]
    actual: np.ndarray  # [T]


def predict_curve(
    model: TcnModel,
    trajectory: EngineTrajectory,
    stats: NormStats,
    final_rul: int = 0,
    mode: str = "full_sequence",
    window: int = 31,
    batch_size: int = 8,
) -> CurveRecord:
    """Predict RUL at every observed cycle of one engine.

    `final_rul` is the engine's remaining life after its last observed
    cycle (0 for run-to-failure trajectories), so the actual curve is
    min(125, T_observed + final_rul - t).
    """
    feats = apply_normalizer(stats, trajectory)
    t_obs = trajectory.length
    actual = np.minimum(float(R_MAX), (t_obs + final_rul - trajectory.cycles).astype(np.float64))
    if mode == "windowed":
        seq = LabeledSequence(
            unit_id=trajectory.unit_id,
            features=feats,
            labels=np.zeros(t_obs),
            original_length=t_obs,
        )
        prefixes = [
            _last_window(
                LabeledSequence(
                    unit_id=t_end,
                    features=seq.features[:t_end],
                    labels=np.zeros(t_end),
                    original_length=t_end,
                ),
                window,
            )
            for t_end in range(1, t_obs + 1)
        ]
        by_end = {}
        for batch in build_batches(prefixes, batch_size, rng=None):
            out = model.forward(batch.features, batch.mask, training=False)
            for i, t_end in enumerate(batch.unit_ids):
                by_end[int(t_end)] = float(out[i, int(batch.lengths[i]) - 1])
        predicted = np.array([by_end[t_end] for t_end in range(1, t_obs + 1)])
    else:
        # contiguous buffer keeps einsum accumulation order batch-identical
        features = np.ascontiguousarray(feats.T)[None, :, :]
        mask = np.ones((1, t_obs), dtype=bool)
        predicted = model.forward(features, mask, training=False)[0]
    predicted = np.clip(predicted, 0.0, float(R_MAX))
    return CurveRecord(
        unit_id=trajectory.unit_id,
        cycles=trajectory.cycles.copy(),
        predicted=predicted,
        actual=actual,
    )


def write_curve_csv(path: str | Path, record: CurveRecord) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("cycle,predicted,actual\n")
        for c, p, a in zip(record.cycles, record.predicted, record.actual):
            f.write(f"{int(c)},{p:.17g},{a:.17g}\n")


def read_curve_csv(path: str | Path, unit_id: int = 0) -> CurveRecord:
    cycles = []
    predicted = []
    actual = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "cycle,predicted,actual":
            raise ParseError(f"{path}: unexpected header {header!r}", line=1)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{path}: expected 3 fields, got {len(parts)}", line=lineno)
            try:
                cycles.append(int(parts[0]))
                predicted.append(float(parts[1]))
                actual.append(float(parts[2]))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from exc
    return CurveRecord(
        unit_id=unit_id,
        cycles=np.array(cycles, dtype=np.int64),
        predicted=np.array(predicted),
        actual=np.array(actual),
    )
