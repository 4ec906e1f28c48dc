"""Turbofan run-to-failure data: text-format ingestion and a synthetic twin.

Data files are plain text with 26 whitespace-separated numeric columns per
row: unit id, cycle, three operational settings, and 21 sensor readings.
RUL files hold one non-negative integer per line, aligned with the test
units by order. The synthetic generator emits the same schema so the rest
of the pipeline can be exercised without the real download.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import (
    IntegrityError,
    MalformedRowError,
    NotFoundError,
    ParseError,
    ValidationError,
)

N_SETTINGS = 3
N_SENSORS = 21
N_FEATURES = N_SETTINGS + N_SENSORS
N_COLUMNS = 2 + N_FEATURES

SUBSET_IDS = ("FD001", "FD002", "FD003", "FD004", "SYNTH")

# (train engines, test engines) for the published subsets.
EXPECTED_COUNTS = {
    "FD001": (100, 100),
    "FD002": (260, 259),
    "FD003": (100, 100),
    "FD004": (249, 248),
}

FEATURE_NAMES = [f"setting_{i}" for i in range(1, N_SETTINGS + 1)] + [
    f"sensor_{i}" for i in range(1, N_SENSORS + 1)
]


@dataclass
class EngineTrajectory:
    """One engine's multivariate time series, cycles indexed 1..T."""

    unit_id: int
    cycles: np.ndarray  # [T] int
    settings: np.ndarray  # [T, 3] float
    sensors: np.ndarray  # [T, 21] float

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        self.settings = np.asarray(self.settings, dtype=np.float64)
        self.sensors = np.asarray(self.sensors, dtype=np.float64)
        if self.unit_id < 1:
            raise ValidationError(f"unit_id must be positive, got {self.unit_id}")
        t = len(self.cycles)
        if t < 1:
            raise ValidationError(f"unit {self.unit_id}: trajectory is empty")
        if self.settings.shape != (t, N_SETTINGS):
            raise ValidationError(
                f"unit {self.unit_id}: settings shape {self.settings.shape}, expected ({t}, {N_SETTINGS})"
            )
        if self.sensors.shape != (t, N_SENSORS):
            raise ValidationError(
                f"unit {self.unit_id}: sensors shape {self.sensors.shape}, expected ({t}, {N_SENSORS})"
            )
        if not np.array_equal(self.cycles, np.arange(1, t + 1)):
            raise IntegrityError(
                f"unit {self.unit_id}: cycle indices must run 1..{t} without gaps"
            )

    @property
    def length(self) -> int:
        return len(self.cycles)

    @property
    def features(self) -> np.ndarray:
        """[T, 24] settings and sensors side by side."""
        return np.hstack([self.settings, self.sensors])


@dataclass
class DatasetBundle:
    """A subset's train/test trajectories plus the test ground-truth RULs."""

    subset_id: str
    train: list[EngineTrajectory]
    test: list[EngineTrajectory]
    test_rul: list[int]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.test_rul) != len(self.test):
            raise IntegrityError(
                f"{self.subset_id}: {len(self.test_rul)} RUL values for {len(self.test)} test units"
            )


@dataclass
class SynthConfig:
    """Knobs for the synthetic generator; deterministic given seed."""

    n_train: int = 60
    n_test: int = 20
    min_len: int = 150
    max_len: int = 320
    noise_std: float = 0.05
    n_informative_sensors: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ValidationError("n_train and n_test must be positive")
        if self.min_len > self.max_len:
            raise ValidationError(f"min_len {self.min_len} > max_len {self.max_len}")
        if self.min_len < 40:
            raise ValidationError(f"min_len must be >= 40, got {self.min_len}")
        if self.noise_std < 0:
            raise ValidationError(f"noise_std must be non-negative, got {self.noise_std}")
        if not 1 <= self.n_informative_sensors <= N_SENSORS:
            raise ValidationError(
                f"n_informative_sensors must be in [1, {N_SENSORS}], got {self.n_informative_sensors}"
            )
        if self.seed < 0:
            raise ValidationError("seed must be unsigned")


def _iter_lines(stream: IO[str] | str | Iterable[str]) -> Iterable[str]:
    if isinstance(stream, str):
        return stream.splitlines()
    return stream


def parse_trajectory_file(stream: IO[str] | str | Iterable[str]) -> list[EngineTrajectory]:
    """Parse a 26-column trajectory file into per-unit trajectories.

    Rows for a unit must be contiguous and cycle-ordered starting at 1.
    Blank lines and trailing whitespace are tolerated.
    """
    rows_unit: list[int] = []
    rows_cycle: list[int] = []
    rows_feat: list[list[float]] = []
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise MalformedRowError(
                f"expected {N_COLUMNS} fields, got {len(tokens)}", line=lineno
            )
        values = []
        for col, tok in enumerate(tokens, start=1):
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"non-numeric value {tok!r}", line=lineno, column=col) from None
        for col in (1, 2):
            if not values[col - 1].is_integer():
                raise ParseError(
                    f"expected an integer, got {values[col - 1]!r}", line=lineno, column=col
                )
        rows_unit.append(int(values[0]))
        rows_cycle.append(int(values[1]))
        rows_feat.append(values[2:])

    trajectories: list[EngineTrajectory] = []
    seen: set[int] = set()
    i = 0
    n = len(rows_unit)
    while i < n:
        unit = rows_unit[i]
        if unit in seen:
            raise IntegrityError(f"unit {unit} appears in non-contiguous row blocks")
        seen.add(unit)
        j = i
        while j < n and rows_unit[j] == unit:
            j += 1
        cycles = np.array(rows_cycle[i:j], dtype=np.int64)
        feats = np.array(rows_feat[i:j], dtype=np.float64)
        if not np.array_equal(cycles, np.arange(1, len(cycles) + 1)):
            raise IntegrityError(
                f"unit {unit}: cycle indices must run 1..{len(cycles)} without gaps"
            )
        trajectories.append(
            EngineTrajectory(
                unit_id=unit,
                cycles=cycles,
                settings=feats[:, :N_SETTINGS],
                sensors=feats[:, N_SETTINGS:],
            )
        )
        i = j
    return trajectories


def parse_rul_file(stream: IO[str] | str | Iterable[str]) -> list[int]:
    """Parse a RUL file: one non-negative integer per non-empty line."""
    out: list[int] = []
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 1:
            raise ParseError(f"expected one value, got {len(tokens)}", line=lineno)
        try:
            value = int(tokens[0])
        except ValueError:
            raise ParseError(f"non-integer RUL {tokens[0]!r}", line=lineno) from None
        if value < 0:
            raise ParseError(f"negative RUL {value}", line=lineno)
        out.append(value)
    return out


def subset_file_names(subset_id: str) -> tuple[str, str, str]:
    return (f"train_{subset_id}.txt", f"test_{subset_id}.txt", f"RUL_{subset_id}.txt")


def load_subset(root_path: str | Path, subset_id: str) -> DatasetBundle:
    """Load train/test/RUL files for a subset from a directory.

    Engine counts are checked against the published table for FD001-FD004;
    a mismatch is recorded as a warning on the bundle, not an error, since
    user-filtered files are legitimate.
    """
    if subset_id not in SUBSET_IDS:
        raise ValidationError(f"unknown subset {subset_id!r}, expected one of {SUBSET_IDS}")
    root = Path(root_path)
    train_name, test_name, rul_name = subset_file_names(subset_id)
    paths = [root / train_name, root / test_name, root / rul_name]
    for p in paths:
        if not p.is_file():
            raise NotFoundError(f"missing data file: {p}")
    with open(paths[0]) as f:
        train = parse_trajectory_file(f)
    with open(paths[1]) as f:
        test = parse_trajectory_file(f)
    with open(paths[2]) as f:
        test_rul = parse_rul_file(f)

    warnings: list[str] = []
    expected = EXPECTED_COUNTS.get(subset_id)
    if expected is not None:
        if len(train) != expected[0]:
            warnings.append(
                f"{subset_id}: expected {expected[0]} train units, found {len(train)}"
            )
        if len(test) != expected[1]:
            warnings.append(
                f"{subset_id}: expected {expected[1]} test units, found {len(test)}"
            )
    return DatasetBundle(
        subset_id=subset_id, train=train, test=test, test_rul=test_rul, warnings=warnings
    )


def write_trajectory_file(trajectories: list[EngineTrajectory], stream: IO[str]) -> None:
    """Write trajectories in the 26-column text format, full float precision."""
    for traj in trajectories:
        feats = traj.features
        for t in range(traj.length):
            row = [str(traj.unit_id), str(int(traj.cycles[t]))]
            row.extend(str(float(v)) for v in feats[t])
            stream.write(" ".join(row) + "\n")


def write_rul_file(values: list[int], stream: IO[str]) -> None:
    for v in values:
        stream.write(f"{int(v)}\n")


def write_subset(bundle: DatasetBundle, root_path: str | Path) -> list[Path]:
    """Write a bundle to disk in the standard three-file layout."""
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    train_name, test_name, rul_name = subset_file_names(bundle.subset_id)
    paths = [root / train_name, root / test_name, root / rul_name]
    with open(paths[0], "w") as f:
        write_trajectory_file(bundle.train, f)
    with open(paths[1], "w") as f:
        write_trajectory_file(bundle.test, f)
    with open(paths[2], "w") as f:
        write_rul_file(bundle.test_rul, f)
    return paths


def _degradation_level(total_life: int, r_max: int = 125) -> np.ndarray:
    # Capped remaining life scaled to [0, 1]: flat early plateau, then a ramp to 0.
    t = np.arange(1, total_life + 1)
    return np.minimum(r_max, total_life - t) / float(r_max)


class _SensorModel:
    """Per-bundle sensor parameterization shared by train and test engines."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.base = rng.uniform(-2.0, 2.0, size=N_SENSORS)
        n_inf = cfg.n_informative_sensors
        self.amp = rng.uniform(0.8, 2.0, size=n_inf) * rng.choice([-1.0, 1.0], size=n_inf)
        # Remaining sensors alternate between pure noise and exact constants so
        # the constant-feature exclusion path always has work to do.
        self.noise_sensors = [j for k, j in enumerate(range(n_inf, N_SENSORS)) if k % 2 == 0]
        self.const_sensors = [j for k, j in enumerate(range(n_inf, N_SENSORS)) if k % 2 == 1]
        self.setting_base = rng.uniform(-1.0, 1.0, size=N_SETTINGS)

    def make_run_to_failure(self, unit_id: int, total_life: int, rng: np.random.Generator) -> EngineTrajectory:
        cfg = self.cfg
        level = _degradation_level(total_life)
        sensors = np.empty((total_life, N_SENSORS))
        for j in range(cfg.n_informative_sensors):
            sensors[:, j] = self.base[j] + self.amp[j] * level + rng.normal(0.0, cfg.noise_std, total_life)
        for j in self.noise_sensors:
            sensors[:, j] = self.base[j] + rng.normal(0.0, cfg.noise_std, total_life)
        for j in self.const_sensors:
            sensors[:, j] = self.base[j]
        settings = np.empty((total_life, N_SETTINGS))
        settings[:, 0] = self.setting_base[0] + rng.normal(0.0, 0.01, total_life)
        settings[:, 1] = self.setting_base[1] + rng.normal(0.0, 0.01, total_life)
        settings[:, 2] = self.setting_base[2]  # constant, like the single-condition subsets
        return EngineTrajectory(
            unit_id=unit_id,
            cycles=np.arange(1, total_life + 1),
            settings=settings,
            sensors=sensors,
        )


def generate_synthetic(cfg: SynthConfig) -> DatasetBundle:
    """Generate a deterministic bundle with the real-data schema.

    Train trajectories run to failure. Test trajectories are run-to-failure
    series truncated at a random cycle; the withheld tail length is the
    recorded true RUL.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    model = _SensorModel(cfg, rng)

    train = []
    for unit in range(1, cfg.n_train + 1):
        total_life = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        train.append(model.make_run_to_failure(unit, total_life, rng))

    test = []
    test_rul: list[int] = []
    for unit in range(1, cfg.n_test + 1):
        total_life = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        full = model.make_run_to_failure(unit, total_life, rng)
        tail = int(rng.integers(5, min(125, total_life - 30) + 1))
        observed = total_life - tail
        test.append(
            EngineTrajectory(
                unit_id=unit,
                cycles=full.cycles[:observed],
                settings=full.settings[:observed],
                sensors=full.sensors[:observed],
            )
        )
        test_rul.append(tail)

    return DatasetBundle(subset_id="SYNTH", train=train, test=test, test_rul=test_rul)
