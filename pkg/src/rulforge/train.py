"""Training loop, optimizers, early stopping, and checkpoint files.

One rng seeded from TrainConfig.seed drives everything stochastic in a
fixed order (validation split, end trimming, batch shuffling, dropout),
so a seed pins the whole run.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigMismatchError,
    CorruptionError,
    DivergenceError,
    ValidationError,
)
from .model import Param, TcnConfig, TcnModel
from .preprocess import (
    LabeledSequence,
    PaddedBatch,
    build_batches,
    build_window_batches,
    trim_random_end,
    window_segment,
)
from .tensorcore import masked_mse_loss

CHECKPOINT_MAGIC = b"RULFCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 0.01
    max_epochs: int = 1000
    patience: int = 40
    seed: int = 0
    val_fraction: float = 0.1
    optimizer: str = "adam"
    grad_clip: float | None = None
    retrim_each_epoch: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValidationError(f"grad_clip must be > 0, got {self.grad_clip}")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "optimizer": self.optimizer,
            "grad_clip": self.grad_clip,
            "retrim_each_epoch": self.retrim_each_epoch,
        }


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    train_losses: list[float]
    val_losses: list[float]
    stopped_early: bool

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "stopped_early": self.stopped_early,
        }


class Sgd:
    def __init__(self, params: dict[str, Param], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params.values():
            p.value -= self.lr * p.grad


class Adam:
    def __init__(
        self,
        params: dict[str, Param],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(cfg: TrainConfig, params: dict[str, Param]):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate)
    return Sgd(params, cfg.learning_rate)


def clip_global_norm(params: dict[str, Param], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            p.grad *= scale
    return norm


def split_train_val(
    seqs: list[LabeledSequence], val_fraction: float, rng: np.random.Generator
) -> tuple[list[LabeledSequence], list[LabeledSequence]]:
    """Hold out whole engines for validation, at least one on each side."""
    n = len(seqs)
    if n < 2:
        raise ValidationError(f"need at least 2 engines to split, got {n}")
    n_val = int(round(n * val_fraction))
    n_val = max(1, min(n_val, n - 1))
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [seqs[i] for i in range(n) if i not in val_idx]
    val = [seqs[i] for i in range(n) if i in val_idx]
    return train, val


def _epoch_batches(
    mode: str,
    pristine: list[LabeledSequence],
    trimmed: list[LabeledSequence] | None,
    windows: list,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[PaddedBatch]:
    if mode == "windowed":
        return build_window_batches(windows, cfg.batch_size, rng)
    return build_batches(trimmed, cfg.batch_size, rng)


def _eval_loss(model: TcnModel, batches: list[PaddedBatch]) -> float:
    total_se = 0.0
    total_n = 0
    for batch in batches:
        preds = model.forward(batch.features, batch.mask, training=False)
        n = int(batch.loss_mask.sum())
        loss, _ = masked_mse_loss(preds, batch.labels, batch.loss_mask)
        total_se += loss * n
        total_n += n
    return total_se / total_n


def _snapshot(model: TcnModel) -> dict[str, np.ndarray]:
    snap = {name: p.value.copy() for name, p in model.named_params().items()}
    for name, arr in model.named_state().items():
        snap[name] = arr.copy()
    return snap


def _restore(model: TcnModel, snap: dict[str, np.ndarray]) -> None:
    for name, p in model.named_params().items():
        p.value[...] = snap[name]
    for name, arr in model.named_state().items():
        arr[...] = snap[name]


def train(
    model: TcnModel,
    sequences: list[LabeledSequence],
    cfg: TrainConfig,
    mode: str = "full_sequence",
    window: int = 31,
    log_path: str | Path | None = None,
) -> TrainReport:
    """Fit the model with early stopping on a held-out engine split.

    Stops after `patience` consecutive epochs without a validation
    improvement and restores the best epoch's parameters (batchnorm
    running stats included) before returning. Non-finite losses raise
    DivergenceError.
    """
    cfg.validate()
    if mode not in ("full_sequence", "windowed"):
        raise ValidationError(f"unknown training mode {mode!r}")
    rng = np.random.default_rng(cfg.seed)
    train_seqs, val_seqs = split_train_val(sequences, cfg.val_fraction, rng)

    trimmed: list[LabeledSequence] | None = None
    windows: list = []
    if mode == "full_sequence":
        trimmed = [trim_random_end(s, rng) for s in train_seqs]
        val_batches = build_batches(val_seqs, cfg.batch_size, None)
    else:
        for s in train_seqs:
            windows.extend(window_segment(s, window))
        val_windows = []
        for s in val_seqs:
            val_windows.extend(window_segment(s, window))
        val_batches = build_window_batches(val_windows, cfg.batch_size, None)

    optimizer = make_optimizer(cfg, model.named_params())
    best_val = np.inf
    best_epoch = 0
    best_snap = _snapshot(model)
    bad_epochs = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    stopped_early = False

    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        if log_file is not None:
            log_file.write("epoch,train_loss,val_loss,seconds\n")
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            if mode == "full_sequence" and cfg.retrim_each_epoch:
                trimmed = [trim_random_end(s, rng) for s in train_seqs]
            batches = _epoch_batches(mode, train_seqs, trimmed, windows, cfg, rng)
            total_se = 0.0
            total_n = 0
            for b_idx, batch in enumerate(batches):
                preds = model.forward(batch.features, batch.mask, training=True, rng=rng)
                loss, grad = masked_mse_loss(preds, batch.labels, batch.loss_mask)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, b_idx)
                model.zero_grad()
                model.backward(grad)
                if cfg.grad_clip is not None:
                    clip_global_norm(model.named_params(), cfg.grad_clip)
                optimizer.step()
                n = int(batch.loss_mask.sum())
                total_se += loss * n
                total_n += n
            train_loss = total_se / total_n
            val_loss = _eval_loss(model, val_batches)
            if not np.isfinite(val_loss):
                raise DivergenceError(epoch, -1)
            train_losses.append(train_loss)
            val_losses.append(val_loss)
            if log_file is not None:
                seconds = time.perf_counter() - t0
                log_file.write(f"{epoch},{train_loss:.17g},{val_loss:.17g},{seconds:.3f}\n")
                log_file.flush()
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_snap = _snapshot(model)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    stopped_early = True
                    break
    finally:
        if log_file is not None:
            log_file.close()

    _restore(model, best_snap)
    return TrainReport(
        epochs_run=len(train_losses),
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
        train_losses=train_losses,
        val_losses=val_losses,
        stopped_early=stopped_early,
    )


def save_checkpoint(path: str | Path, model: TcnModel, meta: dict | None = None) -> None:
    """Write parameters and batchnorm running stats to one binary file.

    Layout: 8-byte magic, little-endian u64 header length, JSON header
    (format version, model config, caller metadata, tensor directory with
    per-tensor sha256), then the concatenated little-endian float64
    payload.
    """
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in model.named_params().items():
        tensors.append((name, p.value))
    for name, arr in model.named_state().items():
        tensors.append((name, arr))
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(data),
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        )
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for chunk in chunks:
            f.write(chunk)


def load_checkpoint(
    path: str | Path, expected_config: TcnConfig | None = None
) -> tuple[TcnModel, dict]:
    """Rebuild a model from a checkpoint file, verifying every checksum.

    Raises CorruptionError for a bad magic, version, truncation, or
    checksum mismatch, and ConfigMismatchError when expected_config
    disagrees with the stored one.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptionError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    if pos + header_len > len(raw):
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header ({exc})") from exc
    pos += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CorruptionError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    config = TcnConfig.from_dict(header["config"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise ConfigMismatchError(
            f"{path}: checkpoint config {config.to_dict()} does not match "
            f"expected {expected_config.to_dict()}"
        )
    payload = raw[pos:]
    loaded: dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CorruptionError(f"{path}: truncated payload at tensor {entry['name']!r}")
        blob = payload[start : start + nbytes]
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise CorruptionError(f"{path}: checksum mismatch for tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        loaded[entry["name"]] = arr
    model = TcnModel(config, np.random.default_rng(0))
    params = model.named_params()
    state = model.named_state()
    expected_names = set(params) | set(state)
    if expected_names != set(loaded):
        missing = expected_names - set(loaded)
        extra = set(loaded) - expected_names
        raise CorruptionError(f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, p in params.items():
        if p.value.shape != loaded[name].shape:
            raise CorruptionError(f"{path}: shape mismatch for {name!r}")
        p.value[...] = loaded[name]
    for name, arr in state.items():
        if arr.shape != loaded[name].shape:
            raise CorruptionError(f"{path}: shape mismatch for {name!r}")
        arr[...] = loaded[name]
    return model, header.get("meta", {})
