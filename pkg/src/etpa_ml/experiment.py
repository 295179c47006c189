"""Replicate-and-aggregate harness for the classification-efficiency table.

Each table cell fixes a wavelength band, a grid step, and an entanglement
time.  One dataset is generated per cell; every replicate redraws the
train/validation/test split and the initial network weights from its own
seeded generator, trains, and scores the test subset.  Replicates are
independent, so they may run in a thread pool; results are always ordered
by replicate index and are identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import atomic_write_text
from .dataset import LevelBand, generate_dataset, split_dataset, split_matrices
from .neuralnet import (DEFAULT_HIDDEN_WIDTH, N_CLASSES, TrainConfig,
                        evaluate_model, init_params, scg_train)
from .physics import PhotonSource

DEFAULT_BANDS = ((835.0, 845.0), (830.0, 850.0), (825.0, 855.0), (820.0, 860.0))
DEFAULT_STEPS = (1.0, 0.5, 0.1)
DEFAULT_ENTANGLEMENT_TIMES = (63.0, 7.16)
DEFAULT_CENTRAL_WAVELENGTH = 810.0
DEFAULT_BASE_SEED = 7

TABLE_CSV_HEADER = "band_low,band_high,step_nm,te_fs,mean_pct,std_pct,n_replicates"
REPLICATES_CSV_HEADER = "band_low,band_high,step_nm,te_fs,replicate,efficiency_pct"

# Child-seed streams; the replicate index is spent between them.
_SPLIT_STREAM = 101
_INIT_STREAM = 202


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that identifies one table cell and its replication plan.

    With fixed_split=True every replicate reuses the replicate-0 split and
    only the initial weights vary.
    """

    band: LevelBand
    entanglement_time: float
    replicates: int = 100
    per_class: int = 500
    base_seed: int = DEFAULT_BASE_SEED
    central_wavelength: float = DEFAULT_CENTRAL_WAVELENGTH
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    train: TrainConfig = field(default_factory=TrainConfig)
    fixed_split: bool = False

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ValueError("replicates must be at least 2")
        if self.per_class < 1:
            raise ValueError("per_class must be at least 1")
        if not (self.entanglement_time > 0
                and math.isfinite(self.entanglement_time)):
            raise ValueError("entanglement_time must be positive and finite")
        if not (self.central_wavelength > 0
                and math.isfinite(self.central_wavelength)):
            raise ValueError("central_wavelength must be positive and finite")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")

    @property
    def source(self) -> PhotonSource:
        return PhotonSource(lambda_s0=self.central_wavelength,
                            lambda_i0=self.central_wavelength,
                            entanglement_time=self.entanglement_time)


def _replicate_efficiency(base_dataset, config: ExperimentConfig,
                          replicate: int) -> float:
    split_index = 0 if config.fixed_split else replicate
    split_rng = np.random.default_rng(
        [config.base_seed, split_index, _SPLIT_STREAM])
    assignment = split_dataset(base_dataset, rng=split_rng)
    matrices = split_matrices(replace(base_dataset,
                                      split_assignment=assignment,
                                      scaling=None))
    init_rng = np.random.default_rng([config.base_seed, replicate, _INIT_STREAM])
    params = init_params(config.hidden_width, base_dataset.n_features,
                         N_CLASSES, init_rng)
    trained, _ = scg_train(params, matrices.train_x, matrices.train_t,
                           matrices.val_x, matrices.val_t, config.train)
    accuracy, _ = evaluate_model(trained, matrices.test_x,
                                 matrices.test_classes)
    return 100.0 * accuracy


def run_replicates(config: ExperimentConfig, threads: int = 1) -> np.ndarray:
    """Test-set efficiencies (percent) for every replicate, ordered by index.

    A failing replicate aborts the whole run; nothing is silently dropped.
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    base_dataset = generate_dataset(config.band, config.source,
                                    config.per_class, seed=config.base_seed)
    indices = range(config.replicates)
    if threads == 1:
        efficiencies = [_replicate_efficiency(base_dataset, config, r)
                        for r in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            efficiencies = list(pool.map(
                lambda r: _replicate_efficiency(base_dataset, config, r),
                indices))
    return np.array(efficiencies)


def summarize_stats(efficiencies: np.ndarray) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator), both in percent."""
    efficiencies = np.asarray(efficiencies, dtype=float)
    if efficiencies.ndim != 1 or efficiencies.size < 2:
        raise ValueError("need at least two efficiencies to summarize")
    return float(efficiencies.mean()), float(efficiencies.std(ddof=1))


@dataclass(frozen=True)
class TableRow:
    """One table cell: its configuration, summary statistics, and raw runs."""

    band: LevelBand
    entanglement_time: float
    mean_pct: float
    std_pct: float
    efficiencies: tuple[float, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.efficiencies, dtype=float)
        if values.size < 2:
            raise ValueError("a table row needs at least two replicates")
        if np.any(values < 0) or np.any(values > 100):
            raise ValueError("efficiencies must lie in [0, 100]")
        mean, std = summarize_stats(values)
        if abs(mean - self.mean_pct) > 1e-9 or abs(std - self.std_pct) > 1e-9:
            raise ValueError("summary statistics disagree with the stored runs")

    @property
    def band_width(self) -> float:
        return self.band.width

    @property
    def n_replicates(self) -> int:
        return len(self.efficiencies)


def reproduce_table(replicates: int = 100, per_class: int = 500,
                    base_seed: int = DEFAULT_BASE_SEED,
                    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS,
                    steps: tuple[float, ...] = DEFAULT_STEPS,
                    entanglement_times: tuple[float, ...] = DEFAULT_ENTANGLEMENT_TIMES,
                    central_wavelength: float = DEFAULT_CENTRAL_WAVELENGTH,
                    train: TrainConfig | None = None,
                    threads: int = 1, fixed_split: bool = False,
                    progress=None) -> list[TableRow]:
    """Run every (band, step, entanglement time) cell and summarize it.

    Any cell failure aborts the sweep with the offending cell named.  The
    optional progress callback receives each finished TableRow.
    """
    if train is None:
        train = TrainConfig()
    rows = []
    for low, high in bands:
        for step in steps:
            for te in entanglement_times:
                config = ExperimentConfig(
                    band=LevelBand(low, high, step), entanglement_time=te,
                    replicates=replicates, per_class=per_class,
                    base_seed=base_seed, central_wavelength=central_wavelength,
                    train=train, fixed_split=fixed_split)
                try:
                    efficiencies = run_replicates(config, threads=threads)
                except Exception as exc:
                    raise RuntimeError(
                        f"table cell band ({low:g}, {high:g}) nm, "
                        f"step {step:g} nm, T_e {te:g} fs failed: {exc}"
                    ) from exc
                mean, std = summarize_stats(efficiencies)
                row = TableRow(band=config.band, entanglement_time=te,
                               mean_pct=mean, std_pct=std,
                               efficiencies=tuple(float(e)
                                                  for e in efficiencies))
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def write_table_csv(rows: list[TableRow], path: str) -> None:
    lines = [TABLE_CSV_HEADER]
    for row in rows:
        band = row.band
        lines.append(f"{band.low:g},{band.high:g},{band.step:g},"
                     f"{row.entanglement_time:g},{row.mean_pct:.4f},"
                     f"{row.std_pct:.4f},{row.n_replicates}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_replicates_csv(rows: list[TableRow], path: str) -> None:
    lines = [REPLICATES_CSV_HEADER]
    for row in rows:
        band = row.band
        for index, efficiency in enumerate(row.efficiencies):
            lines.append(f"{band.low:g},{band.high:g},{band.step:g},"
                         f"{row.entanglement_time:g},{index},{efficiency:.4f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def render_table_text(rows: list[TableRow]) -> str:
    """Aligned human-readable table, one line per cell."""
    header = (f"{'band (nm)':>14} {'width':>6} {'step':>6} {'T_e (fs)':>9} "
              f"{'mean %':>8} {'std %':>7} {'n':>4}")
    lines = [header, "-" * len(header)]
    for row in rows:
        band = row.band
        label = f"{band.low:g}-{band.high:g}"
        lines.append(f"{label:>14} {band.width:>6g} {band.step:>6g} "
                     f"{row.entanglement_time:>9g} {row.mean_pct:>8.2f} "
                     f"{row.std_pct:>7.2f} {row.n_replicates:>4}")
    return "\n".join(lines)
