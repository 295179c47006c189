"""Labeled signal datasets for level-count classification.

Hypothetical molecular systems are sampled from a uniform wavelength grid,
their delay signals synthesized, and the results packaged with one-hot
labels, a 70/15/15 split, and per-feature scaling parameters.  Feature
values keep the arbitrary-units amplitude of the synthesized signal; the
overall signal strength grows with the number of levels and carries class
information, so it is deliberately not normalized away per record.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from ._util import atomic_write_text
from .physics import MolecularSystem, PhotonSource, signal_trace

SPLIT_TAGS = ("train", "validation", "test")

DEFAULT_WINDOW = (-100.0, 100.0)
DEFAULT_N_SAMPLES = 500

_GRID_ALIGN_TOL = 1e-9
_MIN_SPLIT_SIZE = 20


class DatasetIOError(ValueError):
    pass


class MalformedFileError(DatasetIOError):
    """File cannot be parsed as a dataset."""


class FeatureCountMismatchError(DatasetIOError):
    """Row width disagrees with the declared feature count."""


class UnknownClassLabelError(DatasetIOError):
    """Class column contains a value outside 1..4."""


@dataclass(frozen=True)
class LevelBand:
    """Uniform grid of allowed intermediate-level wavelengths, endpoints included."""

    low: float
    high: float
    step: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.low) and math.isfinite(self.high)
                and math.isfinite(self.step)):
            raise ValueError("band bounds and step must be finite")
        if not self.low < self.high:
            raise ValueError(f"band low {self.low} must be below high {self.high}")
        if self.step <= 0:
            raise ValueError("band step must be positive")
        intervals = (self.high - self.low) / self.step
        if abs(intervals - round(intervals)) > _GRID_ALIGN_TOL:
            raise ValueError(
                f"grid misaligned: ({self.high} - {self.low}) / {self.step} "
                f"= {intervals} is not an integer")

    @property
    def n_points(self) -> int:
        return round((self.high - self.low) / self.step) + 1

    @property
    def width(self) -> float:
        return self.high - self.low


def level_grid(band: LevelBand) -> np.ndarray:
    """All wavelengths of the band, low to high inclusive."""
    return np.linspace(band.low, band.high, band.n_points)


def sample_system(band: LevelBand, k: int, rng: np.random.Generator,
                  random_dipoles: bool = False) -> MolecularSystem:
    """Draw k distinct grid wavelengths; dipole products are 1 unless randomized."""
    grid = level_grid(band)
    if k > grid.size:
        raise ValueError(f"cannot draw {k} distinct levels from a {grid.size}-point grid")
    chosen = np.sort(grid[rng.choice(grid.size, size=k, replace=False)])
    if random_dipoles:
        dipoles = tuple(rng.uniform(0.5, 1.0, size=k))
    else:
        dipoles = (1.0,) * k
    return MolecularSystem(level_wavelengths=tuple(chosen), dipole_products=dipoles)


@dataclass(frozen=True)
class LabeledSignal:
    """One signal trace with its level-count class (1..4)."""

    features: np.ndarray
    class_index: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", features)
        if features.ndim != 1:
            raise ValueError("features must be a 1-D array")
        if not np.all(np.isfinite(features)) or np.any(features < 0):
            raise ValueError("features must be finite and non-negative")
        if self.class_index not in (1, 2, 3, 4):
            raise UnknownClassLabelError(f"class_index must be 1..4, got {self.class_index}")


@dataclass(frozen=True)
class ScalingParams:
    """Per-feature training-set minima and maxima for the [-1, 1] affine map."""

    feature_min: np.ndarray
    feature_max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.feature_min, dtype=float)
        hi = np.asarray(self.feature_max, dtype=float)
        object.__setattr__(self, "feature_min", lo)
        object.__setattr__(self, "feature_max", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("scaling bounds must be 1-D arrays of equal length")
        if np.any(hi < lo):
            raise ValueError("feature_max must be >= feature_min")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, classes, split assignment, and scaling parameters."""

    features: np.ndarray
    classes: np.ndarray
    generator_config: dict
    split_assignment: np.ndarray | None = None
    scaling: ScalingParams | None = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        classes = np.asarray(self.classes, dtype=int)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "classes", classes)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if classes.shape != (features.shape[0],):
            raise ValueError("classes length must match the record count")
        if not np.all(np.isfinite(features)) or np.any(features < 0):
            raise ValueError("features must be finite and non-negative")
        if classes.size and (classes.min() < 1 or classes.max() > 4):
            raise UnknownClassLabelError("class labels must lie in 1..4")
        if self.split_assignment is not None:
            tags = np.asarray(self.split_assignment)
            object.__setattr__(self, "split_assignment", tags)
            if tags.shape != (features.shape[0],):
                raise ValueError("split assignment length must match the record count")
            if not set(np.unique(tags)) <= set(SPLIT_TAGS):
                raise ValueError(f"split tags must be among {SPLIT_TAGS}")

    @property
    def n_records(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset_indices(self, tag: str) -> np.ndarray:
        if self.split_assignment is None:
            raise ValueError("dataset has no split assignment")
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown subset {tag!r}")
        return np.flatnonzero(self.split_assignment == tag)


def generate_dataset(band: LevelBand, source: PhotonSource, per_class: int,
                     n_samples: int = DEFAULT_N_SAMPLES,
                     window: tuple[float, float] = DEFAULT_WINDOW,
                     seed: int = 0, random_dipoles: bool = False,
                     noise_sigma: float = 0.0) -> Dataset:
    """Synthesize per_class signals for each level count k in 1..4.

    Every record draws its system from an independent generator seeded by
    (seed, k, record index), so generation order cannot change the result
    and duplicate systems across records are possible by design.  Traces
    keep their arbitrary-units amplitude (see module docstring).  With
    noise_sigma > 0, Gaussian noise of that fraction of the record's peak
    is added and clipped at zero.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    features = np.empty((4 * per_class, n_samples), dtype=float)
    classes = np.empty(4 * per_class, dtype=int)
    row = 0
    for k in (1, 2, 3, 4):
        for index in range(per_class):
            rng = np.random.default_rng([seed, k, index])
            system = sample_system(band, k, rng, random_dipoles=random_dipoles)
            trace = signal_trace(system, source, window, n_samples, normalize=False)
            values = trace.values
            if noise_sigma > 0:
                noise = rng.normal(0.0, noise_sigma * values.max(), size=values.shape)
                values = np.clip(values + noise, 0.0, None)
            features[row] = values
            classes[row] = k
            row += 1
    config = {
        "band_low": band.low, "band_high": band.high, "band_step": band.step,
        "lambda_s0": source.lambda_s0, "lambda_i0": source.lambda_i0,
        "entanglement_time": source.entanglement_time,
        "interaction_area": source.interaction_area,
        "per_class": per_class, "n_samples": n_samples,
        "window": [window[0], window[1]], "seed": seed,
        "random_dipoles": random_dipoles, "noise_sigma": noise_sigma,
    }
    return Dataset(features=features, classes=classes, generator_config=config)


def one_hot_encode(class_index: int) -> np.ndarray:
    """Map class 1..4 to the corresponding unit basis 4-vector."""
    if class_index not in (1, 2, 3, 4):
        raise UnknownClassLabelError(f"class_index must be 1..4, got {class_index}")
    encoded = np.zeros(4)
    encoded[class_index - 1] = 1.0
    return encoded


def one_hot_matrix(classes: np.ndarray) -> np.ndarray:
    classes = np.asarray(classes, dtype=int)
    targets = np.zeros((classes.size, 4))
    targets[np.arange(classes.size), classes - 1] = 1.0
    return targets


def split_dataset(dataset: Dataset, ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Assign records to train/validation/test by a uniform random permutation.

    Sizes are floor(r_train*n), floor(r_val*n), and the remainder; no
    stratification by class is applied.
    """
    if abs(sum(ratios) - 1.0) > 1e-12:
        raise ValueError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    n = dataset.n_records
    if n < _MIN_SPLIT_SIZE:
        raise ValueError(f"refusing to split fewer than {_MIN_SPLIT_SIZE} records")
    if rng is None:
        rng = np.random.default_rng()
    permutation = rng.permutation(n)
    n_train = int(ratios[0] * n)
    n_val = int(ratios[1] * n)
    assignment = np.empty(n, dtype=object)
    assignment[permutation[:n_train]] = "train"
    assignment[permutation[n_train:n_train + n_val]] = "validation"
    assignment[permutation[n_train + n_val:]] = "test"
    return assignment.astype(str)


def scale_features(dataset: Dataset) -> tuple[np.ndarray, ScalingParams]:
    """Affinely map every feature to [-1, 1] using training-subset bounds.

    Validation and test rows are mapped with the same parameters and may
    exceed [-1, 1].  A feature constant on the training subset maps to 0.
    """
    train_rows = dataset.features[dataset.subset_indices("train")]
    if train_rows.shape[0] == 0:
        raise ValueError("training subset is empty")
    params = ScalingParams(feature_min=train_rows.min(axis=0),
                           feature_max=train_rows.max(axis=0))
    return apply_scaling(dataset.features, params), params


def apply_scaling(features: np.ndarray, params: ScalingParams) -> np.ndarray:
    span = params.feature_max - params.feature_min
    safe = np.where(span > 0, span, 1.0)
    scaled = -1.0 + 2.0 * (features - params.feature_min) / safe
    return np.where(span > 0, scaled, 0.0)


def undo_scaling(scaled: np.ndarray, params: ScalingParams) -> np.ndarray:
    span = params.feature_max - params.feature_min
    return params.feature_min + (scaled + 1.0) * span / 2.0


@dataclass(frozen=True)
class SplitMatrices:
    """Scaled feature matrices and one-hot targets for the three subsets."""

    train_x: np.ndarray
    train_t: np.ndarray
    val_x: np.ndarray
    val_t: np.ndarray
    test_x: np.ndarray
    test_t: np.ndarray
    train_classes: np.ndarray
    val_classes: np.ndarray
    test_classes: np.ndarray


def split_matrices(dataset: Dataset) -> SplitMatrices:
    """Scale the dataset and assemble per-subset matrices and targets."""
    scaled, _ = scale_features(dataset)
    parts = {}
    for tag in SPLIT_TAGS:
        idx = dataset.subset_indices(tag)
        parts[tag] = (scaled[idx], one_hot_matrix(dataset.classes[idx]),
                      dataset.classes[idx])
    return SplitMatrices(
        train_x=parts["train"][0], train_t=parts["train"][1],
        val_x=parts["validation"][0], val_t=parts["validation"][1],
        test_x=parts["test"][0], test_t=parts["test"][1],
        train_classes=parts["train"][2], val_classes=parts["validation"][2],
        test_classes=parts["test"][2])


def _metadata_path(path: str) -> str:
    return path + ".meta.json"


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write features as CSV and everything else to a JSON sidecar.

    The CSV has header f000..f499 (matching the feature count) plus a
    class column; the sidecar holds the generator config, split
    assignment, and scaling so a load reproduces the dataset exactly.
    """
    n_features = dataset.n_features
    header = ",".join(f"f{i:03d}" for i in range(n_features)) + ",class"
    buffer = io.StringIO()
    table = np.column_stack([dataset.features, dataset.classes.astype(float)])
    np.savetxt(buffer, table, delimiter=",",
               fmt=["%.17g"] * n_features + ["%d"])
    atomic_write_text(path, header + "\n" + buffer.getvalue())
    meta = {
        "generator_config": dataset.generator_config,
        "n_features": n_features,
        "split_assignment": (None if dataset.split_assignment is None
                             else dataset.split_assignment.tolist()),
        "scaling": (None if dataset.scaling is None else {
            "feature_min": dataset.scaling.feature_min.tolist(),
            "feature_max": dataset.scaling.feature_max.tolist(),
        }),
    }
    atomic_write_text(_metadata_path(path), json.dumps(meta, indent=2) + "\n")


def load_dataset(path: str) -> Dataset:
    """Read a dataset written by save_dataset."""
    try:
        with open(path) as handle:
            header = handle.readline().rstrip("\n")
            body = handle.read()
    except OSError as exc:
        raise MalformedFileError(f"cannot read dataset file: {exc}") from exc
    columns = header.split(",")
    if len(columns) < 2 or columns[-1] != "class" or columns[0] != "f000":
        raise MalformedFileError(f"unexpected header {header[:80]!r}")
    n_features = len(columns) - 1
    rows = []
    classes = []
    for line_number, line in enumerate(body.splitlines(), start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_features + 1:
            raise FeatureCountMismatchError(
                f"line {line_number}: expected {n_features + 1} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells[:-1]])
            label = float(cells[-1])
        except ValueError as exc:
            raise MalformedFileError(f"line {line_number}: {exc}") from exc
        if label not in (1.0, 2.0, 3.0, 4.0):
            raise UnknownClassLabelError(f"line {line_number}: class {cells[-1]!r}")
        classes.append(int(label))
    meta_path = _metadata_path(path)
    try:
        with open(meta_path) as handle:
            meta = json.load(handle)
    except OSError as exc:
        raise MalformedFileError(f"missing dataset metadata {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"bad dataset metadata: {exc}") from exc
    if meta.get("n_features") != n_features:
        raise FeatureCountMismatchError(
            f"metadata declares {meta.get('n_features')} features, file has {n_features}")
    scaling = None
    if meta.get("scaling") is not None:
        scaling = ScalingParams(
            feature_min=np.asarray(meta["scaling"]["feature_min"], dtype=float),
            feature_max=np.asarray(meta["scaling"]["feature_max"], dtype=float))
    assignment = meta.get("split_assignment")
    return Dataset(
        features=np.asarray(rows, dtype=float),
        classes=np.asarray(classes, dtype=int),
        generator_config=meta.get("generator_config", {}),
        split_assignment=None if assignment is None else np.asarray(assignment, dtype=str),
        scaling=scaling)


def with_split(dataset: Dataset, rng: np.random.Generator,
               ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> Dataset:
    """Return a copy with a fresh split assignment and matching scaling."""
    assignment = split_dataset(dataset, ratios=ratios, rng=rng)
    dataset = replace(dataset, split_assignment=assignment, scaling=None)
    _, params = scale_features(dataset)
    return replace(dataset, scaling=params)
