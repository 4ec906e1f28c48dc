"""Command line entry point: inspect, train, eval, ablate, plot, synth.

Exit codes: 0 success, 2 bad input (files, arguments, config), 3 artifact
integrity failures (checkpoints, stored data), 1 internal errors
including training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    EXPECTED_COUNTS,
    FEATURE_NAMES,
    SUBSET_IDS,
    SynthConfig,
    generate_synthetic,
    load_subset,
    write_subset,
)
from .errors import (
    ConfigMismatchError,
    CorruptionError,
    IntegrityError,
    NotFoundError,
    ParseError,
    RulforgeError,
    ValidationError,
)
from .evaluate import (
    SCORE_VARIANTS,
    evaluate_test,
    predict_curve,
    read_curve_csv,
    write_curve_csv,
)
from .model import PRESETS, TcnConfig, build_model, count_parameters, preset_config
from .preprocess import (
    NormStats,
    fit_normalizer,
    make_labeled_sequence,
    window_segment,
)
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

DATA_ENV = "RULFORGE_DATA"
MODES = ("full_sequence", "windowed")


@dataclass
class RunConfig:
    """Everything a training run needs, loadable from a JSON file."""

    subset: str = "FD001"
    data_root: str | None = None
    preprocessing_mode: str = "full_sequence"
    window: int = 31
    normalization: str = "zscore"
    include_settings: bool = True
    preset: str = "paper-4block"
    model: dict | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/latest"
    n_runs: int = 1
    score_variant: str = "paper"
    cap_truth: bool = True

    def validate(self) -> None:
        if self.subset not in SUBSET_IDS:
            raise ValidationError(f"subset: expected one of {sorted(SUBSET_IDS)}, got {self.subset!r}")
        if self.preprocessing_mode not in MODES:
            raise ValidationError(
                f"preprocessing_mode: expected one of {MODES}, got {self.preprocessing_mode!r}"
            )
        if self.window < 1:
            raise ValidationError(f"window: must be >= 1, got {self.window}")
        if self.normalization not in ("zscore", "minmax"):
            raise ValidationError(f"normalization: expected zscore or minmax, got {self.normalization!r}")
        if self.normalization == "minmax" and self.preprocessing_mode != "windowed":
            raise ValidationError("normalization: minmax is only supported in windowed mode")
        if self.model is None and self.preset not in PRESETS:
            raise ValidationError(f"preset: expected one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.n_runs < 1:
            raise ValidationError(f"n_runs: must be >= 1, got {self.n_runs}")
        if self.score_variant not in SCORE_VARIANTS:
            raise ValidationError(
                f"score_variant: expected one of {SCORE_VARIANTS}, got {self.score_variant!r}"
            )
        try:
            self.train.validate()
        except ValidationError as exc:
            raise ValidationError(f"train.{exc}") from exc


_RUN_KEYS = {
    "subset",
    "data_root",
    "preprocessing_mode",
    "window",
    "normalization",
    "include_settings",
    "preset",
    "model",
    "train",
    "output_dir",
    "n_runs",
    "score_variant",
    "cap_truth",
}
_TRAIN_KEYS = {
    "batch_size",
    "learning_rate",
    "max_epochs",
    "patience",
    "seed",
    "val_fraction",
    "optimizer",
    "grad_clip",
    "retrim_each_epoch",
}


def _coerce(doc: dict, key: str, kind, path: str, default):
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if kind is int and isinstance(value, bool):
            raise ValueError("expected an integer")
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}{key}: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config: expected a JSON object")
    unknown = set(doc) - _RUN_KEYS
    if unknown:
        raise ValidationError(f"unknown config key {sorted(unknown)[0]!r}")
    train_doc = doc.get("train") or {}
    if not isinstance(train_doc, dict):
        raise ValidationError("train: expected a JSON object")
    unknown = set(train_doc) - _TRAIN_KEYS
    if unknown:
        raise ValidationError(f"unknown config key 'train.{sorted(unknown)[0]}'")
    default = TrainConfig()
    tcfg = TrainConfig(
        batch_size=_coerce(train_doc, "batch_size", int, "train.", default.batch_size),
        learning_rate=_coerce(train_doc, "learning_rate", float, "train.", default.learning_rate),
        max_epochs=_coerce(train_doc, "max_epochs", int, "train.", default.max_epochs),
        patience=_coerce(train_doc, "patience", int, "train.", default.patience),
        seed=_coerce(train_doc, "seed", int, "train.", default.seed),
        val_fraction=_coerce(train_doc, "val_fraction", float, "train.", default.val_fraction),
        optimizer=_coerce(train_doc, "optimizer", str, "train.", default.optimizer),
        grad_clip=_coerce(train_doc, "grad_clip", float, "train.", None),
        retrim_each_epoch=_coerce(
            train_doc, "retrim_each_epoch", bool, "train.", default.retrim_each_epoch
        ),
    )
    model_doc = doc.get("model")
    if model_doc is not None and not isinstance(model_doc, dict):
        raise ValidationError("model: expected a JSON object")
    base = RunConfig()
    cfg = RunConfig(
        subset=_coerce(doc, "subset", str, "", base.subset),
        data_root=_coerce(doc, "data_root", str, "", None),
        preprocessing_mode=_coerce(doc, "preprocessing_mode", str, "", base.preprocessing_mode),
        window=_coerce(doc, "window", int, "", base.window),
        normalization=_coerce(doc, "normalization", str, "", base.normalization),
        include_settings=_coerce(doc, "include_settings", bool, "", base.include_settings),
        preset=_coerce(doc, "preset", str, "", base.preset),
        model=model_doc,
        train=tcfg,
        output_dir=_coerce(doc, "output_dir", str, "", base.output_dir),
        n_runs=_coerce(doc, "n_runs", int, "", base.n_runs),
        score_variant=_coerce(doc, "score_variant", str, "", base.score_variant),
        cap_truth=_coerce(doc, "cap_truth", bool, "", base.cap_truth),
    )
    return cfg


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise NotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})", line=exc.lineno) from exc
        cfg = run_config_from_dict(doc)
    else:
        cfg = RunConfig()
    if getattr(args, "subset", None):
        cfg.subset = args.subset
    if getattr(args, "data_root", None):
        cfg.data_root = args.data_root
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        cfg.n_runs = args.runs
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    if getattr(args, "mode", None):
        cfg.preprocessing_mode = args.mode
    if getattr(args, "window", None) is not None:
        cfg.window = args.window
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, max_epochs=args.epochs)
    if getattr(args, "patience", None) is not None:
        cfg.train = replace(cfg.train, patience=args.patience)
    cfg.validate()
    return cfg


def _resolve_data_root(explicit: str | None) -> Path:
    root = explicit or os.environ.get(DATA_ENV)
    if not root:
        raise ValidationError(
            f"no data root given: pass --data-root or set the {DATA_ENV} environment variable"
        )
    return Path(root)


def _model_config(cfg: RunConfig, in_features: int) -> TcnConfig:
    if cfg.model is not None:
        doc = dict(cfg.model)
        doc["in_features"] = in_features
        return TcnConfig.from_dict(doc)
    return preset_config(cfg.preset, in_features)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sample_sd(values: list[float]) -> float | None:
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1))


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    root = _resolve_data_root(cfg.data_root)
    bundle = load_subset(root, cfg.subset)
    for warning in bundle.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    stats = fit_normalizer(bundle.train, cfg.include_settings, kind=cfg.normalization)
    sequences = [make_labeled_sequence(t, stats) for t in bundle.train]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(cfg.n_runs):
        run_dir = out / f"run{i}"
        run_dir.mkdir(parents=True, exist_ok=True)
        seed_i = cfg.train.seed + i
        model_cfg = _model_config(cfg, stats.n_features)
        model = build_model(model_cfg, np.random.default_rng(seed_i))
        tcfg = replace(cfg.train, seed=seed_i)
        report = train(
            model,
            sequences,
            tcfg,
            mode=cfg.preprocessing_mode,
            window=cfg.window,
            log_path=run_dir / "epochs.csv",
        )
        meta = {
            "subset": cfg.subset,
            "preprocessing_mode": cfg.preprocessing_mode,
            "window": cfg.window,
            "normalization": cfg.normalization,
            "include_settings": cfg.include_settings,
            "score_variant": cfg.score_variant,
            "cap_truth": cfg.cap_truth,
            "seed": seed_i,
            "train": tcfg.to_dict(),
        }
        save_checkpoint(run_dir / "checkpoint.rulf", model, meta)
        (run_dir / "norm_stats.json").write_text(stats.to_json() + "\n", encoding="utf-8")
        _write_json(run_dir / "train_report.json", report.to_dict())
        metrics = evaluate_test(
            model,
            bundle,
            stats,
            cap_truth=cfg.cap_truth,
            score_variant=cfg.score_variant,
            mode=cfg.preprocessing_mode,
            window=cfg.window,
            batch_size=cfg.train.batch_size,
        )
        _write_json(run_dir / "metrics.json", metrics.to_dict())
        from .figures import plot_loss_curves

        plot_loss_curves(report.train_losses, report.val_losses, run_dir / "loss_curve.svg")
        rows.append(
            {
                "run": i,
                "seed": seed_i,
                "rmse": metrics.rmse,
                "nasa_score": metrics.score,
                "best_epoch": report.best_epoch,
                "epochs_run": report.epochs_run,
            }
        )
        print(
            f"run{i} (seed {seed_i}): rmse={metrics.rmse:.3f} score={metrics.score:.2f} "
            f"best_epoch={report.best_epoch} epochs={report.epochs_run}"
        )
    rmses = [r["rmse"] for r in rows]
    scores = [r["nasa_score"] for r in rows]
    aggregate = {
        "subset": cfg.subset,
        "preprocessing_mode": cfg.preprocessing_mode,
        "n_runs": cfg.n_runs,
        "rmse": {"mean": float(np.mean(rmses)), "sd": _sample_sd(rmses)},
        "nasa_score": {"mean": float(np.mean(scores)), "sd": _sample_sd(scores)},
        "per_run": rows,
    }
    _write_json(out / "aggregate.json", aggregate)
    print(
        f"{cfg.subset} [{cfg.preprocessing_mode}] over {cfg.n_runs} run(s): "
        f"rmse={aggregate['rmse']['mean']:.3f} score={aggregate['nasa_score']['mean']:.2f}"
    )
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise NotFoundError(f"checkpoint not found: {ckpt_path}")
    model, meta = load_checkpoint(ckpt_path)
    stats_path = Path(args.stats) if args.stats else ckpt_path.parent / "norm_stats.json"
    if not stats_path.exists():
        raise NotFoundError(f"normalization stats not found: {stats_path}")
    stats = NormStats.from_json(stats_path.read_text(encoding="utf-8"))
    if stats.n_features != model.config.in_features:
        raise ConfigMismatchError(
            f"stats provide {stats.n_features} features but the model expects "
            f"{model.config.in_features}"
        )
    subset = args.subset or meta.get("subset")
    if not subset:
        raise ValidationError("no subset: pass --subset (checkpoint has no stored subset)")
    root = _resolve_data_root(args.data_root)
    bundle = load_subset(root, subset)
    for warning in bundle.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    mode = meta.get("preprocessing_mode", "full_sequence")
    window = int(meta.get("window", 31))
    variant = args.score_variant or meta.get("score_variant", "paper")
    cap_truth = meta.get("cap_truth", True) if args.cap_truth is None else args.cap_truth
    metrics = evaluate_test(
        model, bundle, stats, cap_truth=cap_truth, score_variant=variant, mode=mode, window=window
    )
    out = Path(args.out) if args.out else ckpt_path.parent
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics.to_dict())
    print(
        f"{subset} [{mode}]: rmse={metrics.rmse:.3f} score={metrics.score:.2f} "
        f"(n={metrics.n_engines}, variant={variant})"
    )
    if args.curve_units:
        units = _parse_units(args.curve_units)
        by_unit = {t.unit_id: (t, r) for t, r in zip(bundle.test, bundle.test_rul)}
        records = []
        curves_dir = out / "curves"
        curves_dir.mkdir(parents=True, exist_ok=True)
        for unit in units:
            if unit not in by_unit:
                raise ValidationError(f"unit {unit} is not in the {subset} test set")
            traj, final_rul = by_unit[unit]
            rec = predict_curve(model, traj, stats, final_rul, mode=mode, window=window)
            write_curve_csv(curves_dir / f"unit_{unit}.csv", rec)
            records.append(rec)
        from .figures import plot_curves

        plot_curves(records, out / "curves.svg")
        print(f"wrote {len(records)} curve(s) to {curves_dir} and {out / 'curves.svg'}")
    return 0


def _parse_units(text: str) -> list[int]:
    units = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            units.append(int(part))
        except ValueError as exc:
            raise ValidationError(f"--curve-units: {part!r} is not an integer") from exc
    if not units:
        raise ValidationError("--curve-units: no unit ids given")
    return units


def cmd_ablate(args) -> int:
    root = _resolve_data_root(args.data_root)
    bundle = load_subset(root, args.subset)
    for warning in bundle.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    stats = fit_normalizer(bundle.train, include_settings=True, kind="zscore")
    sequences = [make_labeled_sequence(t, stats) for t in bundle.train]
    window = args.window
    n_windows = sum(len(window_segment(s, window)) for s in sequences)
    tcfg = TrainConfig(
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arms = [
        ("full_sequence", "full_sequence", len(sequences)),
        (f"windowed({window})", "windowed", n_windows),
    ]
    rows = []
    for label, mode, n_samples in arms:
        model_cfg = preset_config(args.preset, stats.n_features)
        model = build_model(model_cfg, np.random.default_rng(args.seed))
        report = train(model, sequences, tcfg, mode=mode, window=window)
        metrics = evaluate_test(bundle=bundle, model=model, stats=stats, mode=mode, window=window)
        rows.append(
            {
                "label": label,
                "mode": mode,
                "normalization": "zscore",
                "n_train_samples": n_samples,
                "rmse": metrics.rmse,
                "score": metrics.score,
                "best_epoch": report.best_epoch,
                "epochs_run": report.epochs_run,
            }
        )
        print(
            f"{label}: n_train_samples={n_samples} rmse={metrics.rmse:.3f} "
            f"score={metrics.score:.2f} best_epoch={report.best_epoch}"
        )
    _write_json(
        out / "ablation.json",
        {"subset": args.subset, "preset": args.preset, "budget": tcfg.to_dict(), "rows": rows},
    )
    with open(out / "ablation.csv", "w", encoding="utf-8") as f:
        f.write("label,mode,normalization,n_train_samples,rmse,score,best_epoch,epochs_run\n")
        for r in rows:
            f.write(
                f"{r['label']},{r['mode']},{r['normalization']},{r['n_train_samples']},"
                f"{r['rmse']:.17g},{r['score']:.17g},{r['best_epoch']},{r['epochs_run']}\n"
            )
    from .figures import plot_ablation

    plot_ablation(rows, out / "ablation.svg")
    print(f"wrote {out / 'ablation.csv'}, {out / 'ablation.json'}, {out / 'ablation.svg'}")
    return 0


def cmd_plot(args) -> int:
    records = []
    for path in args.curves:
        p = Path(path)
        if not p.exists():
            raise NotFoundError(f"curve file not found: {p}")
        match = re.search(r"(\d+)", p.stem)
        unit_id = int(match.group(1)) if match else len(records) + 1
        records.append(read_curve_csv(p, unit_id=unit_id))
    from .figures import plot_curves

    plot_curves(records, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_train=args.n_train,
        n_test=args.n_test,
        min_len=args.min_len,
        max_len=args.max_len,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    bundle = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_subset(bundle, out)
    lengths = [t.length for t in bundle.train]
    print(
        f"wrote SYNTH to {out}: {len(bundle.train)} train / {len(bundle.test)} test engines, "
        f"train lengths {min(lengths)}..{max(lengths)}"
    )
    return 0


def cmd_inspect(args) -> int:
    root = _resolve_data_root(args.data_root)
    bundle = load_subset(root, args.subset)
    print(f"subset {bundle.subset_id} at {root}")
    expected = EXPECTED_COUNTS.get(bundle.subset_id)
    suffix = ""
    if expected:
        suffix = f" (expected {expected[0]}/{expected[1]})"
    print(f"engines: {len(bundle.train)} train / {len(bundle.test)} test{suffix}")
    for warning in bundle.warnings:
        print(f"warning: {warning}")
    for name, trajs in (("train", bundle.train), ("test", bundle.test)):
        lengths = np.array([t.length for t in trajs])
        print(
            f"{name} lengths: min={lengths.min()} median={int(np.median(lengths))} "
            f"mean={lengths.mean():.1f} max={lengths.max()}"
        )
    rul = np.array(bundle.test_rul)
    print(f"test RUL: min={rul.min()} mean={rul.mean():.1f} max={rul.max()}")
    stats = fit_normalizer(bundle.train, include_settings=True)
    constant = [name for name, keep in zip(FEATURE_NAMES, stats.retained_mask) if not keep]
    if constant:
        print(f"constant features (excluded by normalization): {', '.join(constant)}")
    else:
        print("constant features: none")
    print(f"normalized feature count: {stats.n_features}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulforge",
        description="Train and evaluate dense per-cycle RUL predictors on turbofan data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_inspect = sub.add_parser("inspect", help="summarize a data subset")
    p_inspect.add_argument("--subset", required=True, choices=sorted(SUBSET_IDS))
    p_inspect.add_argument("--data-root", default=None)
    p_inspect.set_defaults(func=cmd_inspect)

    p_train = sub.add_parser("train", help="fit a model and evaluate it")
    p_train.add_argument("--config", default=None, help="JSON run config file")
    p_train.add_argument("--subset", default=None, choices=sorted(SUBSET_IDS))
    p_train.add_argument("--data-root", default=None)
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--runs", type=int, default=None, help="number of seeds to train")
    p_train.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p_train.add_argument("--mode", default=None, choices=MODES)
    p_train.add_argument("--window", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None, help="override max_epochs")
    p_train.add_argument("--patience", type=int, default=None, help="override patience")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a stored checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--stats", default=None, help="norm stats JSON (default: sibling file)")
    p_eval.add_argument("--subset", default=None, choices=sorted(SUBSET_IDS))
    p_eval.add_argument("--data-root", default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--score-variant", default=None, choices=list(SCORE_VARIANTS))
    p_eval.add_argument("--cap-truth", dest="cap_truth", action="store_true", default=None)
    p_eval.add_argument("--no-cap-truth", dest="cap_truth", action="store_false")
    p_eval.add_argument("--curve-units", default=None, help="comma-separated test unit ids")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="compare full-sequence vs windowed pipelines")
    p_ablate.add_argument("--subset", required=True, choices=sorted(SUBSET_IDS))
    p_ablate.add_argument("--data-root", default=None)
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--seed", type=int, default=0)
    p_ablate.add_argument("--preset", default="tiny", choices=sorted(PRESETS))
    p_ablate.add_argument("--window", type=int, default=31)
    p_ablate.add_argument("--epochs", type=int, default=100)
    p_ablate.add_argument("--patience", type=int, default=10)
    p_ablate.set_defaults(func=cmd_ablate)

    p_plot = sub.add_parser("plot", help="render curve CSVs to an SVG")
    p_plot.add_argument("curves", nargs="+", help="curve CSV files")
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)

    p_synth = sub.add_parser("synth", help="generate the synthetic twin dataset")
    p_synth.add_argument("--out", required=True, help="directory to write data files into")
    p_synth.add_argument("--n-train", type=int, default=60)
    p_synth.add_argument("--n-test", type=int, default=20)
    p_synth.add_argument("--min-len", type=int, default=150)
    p_synth.add_argument("--max-len", type=int, default=320)
    p_synth.add_argument("--noise-std", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, NotFoundError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorruptionError, IntegrityError, ConfigMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RulforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
