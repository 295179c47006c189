"""Feed-forward classifier trained with scaled conjugate gradients.

A single sigmoid hidden layer feeds a softmax output over the four level
counts; the cross-entropy loss is minimized full-batch with a scaled
conjugate gradient optimizer (conjugate search directions, curvature from
a perturbed-gradient quotient, Levenberg-Marquardt scaling instead of a
line search).  Validation loss is monitored every epoch and training stops
once it fails to improve for a configured number of consecutive epochs;
the parameters returned are those of the best validation epoch.

The default epoch budget and patience are deliberately short.  Training
much longer pushes the borderline band configurations into an overfit
regime that no longer matches the reference efficiencies, while a patience
shorter than the optimizer's occasional long plateaus strands runs at
chance-level accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._util import atomic_write_text

DEFAULT_HIDDEN_WIDTH = 5
N_CLASSES = 4

GRADIENT_FLOOR = 1e-12
LOG_CLIP = 1e-12

_MODEL_MAGIC = "etpa-ml-model v1"

STOP_VALIDATION_STALL = "validation_stall"
STOP_MAX_EPOCHS = "max_epochs"
STOP_GRADIENT_VANISHED = "gradient_vanished"


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases of the two-layer classifier.

    Arrays are validated for finiteness and mutually consistent shapes;
    the flat-vector layout is hidden weights (row-major), hidden biases,
    output weights (row-major), output biases.
    """

    hidden_weights: np.ndarray
    hidden_biases: np.ndarray
    output_weights: np.ndarray
    output_biases: np.ndarray

    def __post_init__(self) -> None:
        hw = np.asarray(self.hidden_weights, dtype=float)
        hb = np.asarray(self.hidden_biases, dtype=float)
        ow = np.asarray(self.output_weights, dtype=float)
        ob = np.asarray(self.output_biases, dtype=float)
        if hw.ndim != 2 or ow.ndim != 2 or hb.ndim != 1 or ob.ndim != 1:
            raise ValueError("weights must be matrices and biases vectors")
        hidden = hw.shape[0]
        if hb.shape[0] != hidden or ow.shape[1] != hidden:
            raise ValueError("hidden-layer shapes are inconsistent")
        if ob.shape[0] != ow.shape[0]:
            raise ValueError("output-layer shapes are inconsistent")
        if hidden < 1 or hw.shape[1] < 1 or ow.shape[0] < 1:
            raise ValueError("all layer dimensions must be at least 1")
        for arr in (hw, hb, ow, ob):
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")
        object.__setattr__(self, "hidden_weights", hw)
        object.__setattr__(self, "hidden_biases", hb)
        object.__setattr__(self, "output_weights", ow)
        object.__setattr__(self, "output_biases", ob)

    @property
    def hidden_width(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.output_weights.shape[0]

    @property
    def n_parameters(self) -> int:
        return (self.hidden_weights.size + self.hidden_biases.size
                + self.output_weights.size + self.output_biases.size)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.hidden_weights.ravel(),
            self.hidden_biases,
            self.output_weights.ravel(),
            self.output_biases,
        ])

    @classmethod
    def from_vector(cls, vector: np.ndarray, hidden_width: int,
                    input_dim: int, output_dim: int) -> "MlpParams":
        vector = np.asarray(vector, dtype=float)
        expected = hidden_width * input_dim + hidden_width \
            + output_dim * hidden_width + output_dim
        if vector.shape != (expected,):
            raise ValueError(
                f"expected a flat vector of {expected} parameters, "
                f"got shape {vector.shape}")
        a = hidden_width * input_dim
        b = a + hidden_width
        c = b + output_dim * hidden_width
        return cls(
            hidden_weights=vector[:a].reshape(hidden_width, input_dim),
            hidden_biases=vector[a:b],
            output_weights=vector[b:c].reshape(output_dim, hidden_width),
            output_biases=vector[c:],
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    The epoch budget and patience defaults were chosen empirically; see
    the module docstring for why short training is load-bearing here.
    """

    max_epochs: int = 150
    validation_fail_limit: int = 40
    scg_sigma: float = 5e-5
    scg_lambda_init: float = 5e-7
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.validation_fail_limit < 1:
            raise ValueError("validation_fail_limit must be at least 1")
        if not (self.scg_sigma > 0 and math.isfinite(self.scg_sigma)):
            raise ValueError("scg_sigma must be positive and finite")
        if not (self.scg_lambda_init > 0 and math.isfinite(self.scg_lambda_init)):
            raise ValueError("scg_lambda_init must be positive and finite")
        if self.seed is not None and self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class TrainReport:
    """What happened during one training run."""

    epochs_run: int
    training_losses: np.ndarray
    validation_losses: np.ndarray
    stop_reason: str
    best_epoch: int

    def __post_init__(self) -> None:
        tr = np.asarray(self.training_losses, dtype=float)
        va = np.asarray(self.validation_losses, dtype=float)
        if tr.shape != (self.epochs_run,) or va.shape != (self.epochs_run,):
            raise ValueError("loss curves must have one entry per epoch run")
        if self.stop_reason not in (STOP_VALIDATION_STALL, STOP_MAX_EPOCHS,
                                    STOP_GRADIENT_VANISHED):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")
        if not 0 <= self.best_epoch <= self.epochs_run:
            raise ValueError("best_epoch must lie within the epochs run")
        object.__setattr__(self, "training_losses", tr)
        object.__setattr__(self, "validation_losses", va)


def init_params(hidden_width: int = DEFAULT_HIDDEN_WIDTH, input_dim: int = 500,
                output_dim: int = N_CLASSES,
                rng: np.random.Generator | None = None) -> MlpParams:
    """Draw weights uniformly within +-1/sqrt(fan_in); biases start at zero."""
    if hidden_width < 1 or input_dim < 1 or output_dim < 1:
        raise ValueError("all layer dimensions must be at least 1")
    if rng is None:
        rng = np.random.default_rng()
    hidden_bound = 1.0 / math.sqrt(input_dim)
    output_bound = 1.0 / math.sqrt(hidden_width)
    return MlpParams(
        hidden_weights=rng.uniform(-hidden_bound, hidden_bound,
                                   (hidden_width, input_dim)),
        hidden_biases=np.zeros(hidden_width),
        output_weights=rng.uniform(-output_bound, output_bound,
                                   (output_dim, hidden_width)),
        output_biases=np.zeros(output_dim),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Evaluated piecewise so the exponential argument is never positive.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    exp_z = np.exp(z[~pos])
    out[~pos] = exp_z / (1.0 + exp_z)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    exp_z = np.exp(shifted)
    return exp_z / exp_z.sum(axis=-1, keepdims=True)


def _forward_batch(params: MlpParams,
                   features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = _sigmoid(features @ params.hidden_weights.T + params.hidden_biases)
    probs = _softmax(hidden @ params.output_weights.T + params.output_biases)
    return probs, hidden


def forward(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of them."""
    features = np.asarray(features, dtype=float)
    single = features.ndim == 1
    batch = features[np.newaxis, :] if single else features
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ValueError(
            f"features must have {params.input_dim} columns")
    if not np.all(np.isfinite(batch)):
        raise ValueError("features must be finite")
    probs, _ = _forward_batch(params, batch)
    return probs[0] if single else probs


def loss_and_gradient(params: MlpParams, features: np.ndarray,
                      one_hot_targets: np.ndarray) -> tuple[float, MlpParams]:
    """Mean cross-entropy and its full-batch gradient.

    The gradient comes back as an MlpParams holding the partial derivative
    for every weight and bias.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(one_hot_targets, dtype=float)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a nonempty batch")
    if targets.shape != (features.shape[0], params.output_dim):
        raise ValueError("targets must be one-hot rows matching the batch")
    row_sums = targets.sum(axis=1)
    if not (np.all((targets == 0) | (targets == 1)) and np.all(row_sums == 1)):
        raise ValueError("targets must be valid one-hot rows")

    n = features.shape[0]
    probs, hidden = _forward_batch(params, features)
    loss = float(-(targets * np.log(probs + LOG_CLIP)).sum() / n)

    d_output = (probs - targets) / n
    grad_output_w = d_output.T @ hidden
    grad_output_b = d_output.sum(axis=0)
    d_hidden = (d_output @ params.output_weights) * hidden * (1.0 - hidden)
    grad_hidden_w = d_hidden.T @ features
    grad_hidden_b = d_hidden.sum(axis=0)
    gradient = MlpParams(hidden_weights=grad_hidden_w,
                         hidden_biases=grad_hidden_b,
                         output_weights=grad_output_w,
                         output_biases=grad_output_b)
    return loss, gradient


def _loss_extended(w: np.ndarray, features: np.ndarray, targets: np.ndarray,
                   hidden_width: int, input_dim: int, output_dim: int):
    """Cross-entropy evaluated in extended precision.

    Used only for finite differencing: the difference of two loss values
    cancels to ~1e-11 in double precision, which would swamp coordinates
    whose true gradient is that small.
    """
    a = hidden_width * input_dim
    b = a + hidden_width
    c = b + output_dim * hidden_width
    hw = w[:a].reshape(hidden_width, input_dim)
    hb = w[a:b]
    ow = w[b:c].reshape(output_dim, hidden_width)
    ob = w[c:]
    z1 = features @ hw.T + hb
    hidden = np.empty_like(z1)
    pos = z1 >= 0
    hidden[pos] = 1.0 / (1.0 + np.exp(-z1[pos]))
    exp_z = np.exp(z1[~pos])
    hidden[~pos] = exp_z / (1.0 + exp_z)
    z2 = hidden @ ow.T + ob
    shifted = z2 - z2.max(axis=1, keepdims=True)
    exp_shift = np.exp(shifted)
    probs = exp_shift / exp_shift.sum(axis=1, keepdims=True)
    return -(targets * np.log(probs + LOG_CLIP)).sum() / features.shape[0]


def finite_diff_check(params: MlpParams, features: np.ndarray,
                      one_hot_targets: np.ndarray, h: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients."""
    if not h > 0:
        raise ValueError("h must be positive")
    _, gradient = loss_and_gradient(params, features, one_hot_targets)
    analytic = gradient.to_vector()
    w0 = params.to_vector().astype(np.longdouble)
    features_ext = np.asarray(features, dtype=np.longdouble)
    targets_ext = np.asarray(one_hot_targets, dtype=np.longdouble)
    dims = (params.hidden_width, params.input_dim, params.output_dim)
    h_ext = np.longdouble(h)

    worst = 0.0
    for i in range(w0.size):
        step = np.zeros_like(w0)
        step[i] = h_ext
        numeric = float((_loss_extended(w0 + step, features_ext, targets_ext, *dims)
                         - _loss_extended(w0 - step, features_ext, targets_ext, *dims))
                        / (2.0 * h_ext))
        rel = abs(numeric - analytic[i]) / (abs(numeric) + abs(analytic[i]) + 1e-12)
        worst = max(worst, rel)
    return worst


def scg_minimize(objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
                 w0: np.ndarray, config: TrainConfig,
                 validation_loss: Callable[[np.ndarray], float],
                 ) -> tuple[np.ndarray, TrainReport]:
    """Scaled-conjugate-gradient descent on a flat parameter vector.

    `objective` maps parameters to (loss, gradient).  One epoch is one
    candidate step; a step is accepted only when it does not increase the
    objective.  `validation_loss` is evaluated on the current parameters
    after every epoch and drives early stopping.  Returns the parameters
    with the lowest recorded validation loss.

    Curvature along the search direction is re-estimated after every
    accepted step; while steps keep getting rejected the estimate is
    instead inflated in place by the growing Levenberg-Marquardt term, so
    the step length shrinks geometrically until a step is accepted.
    """
    w = np.asarray(w0, dtype=float).copy()
    restart_period = w.size
    loss_current, grad = objective(w)
    residual = -grad

    lam = config.scg_lambda_init
    lam_bar = 0.0
    success = True
    delta = 1.0
    p = residual.copy()
    p_norm2 = float(p @ p)
    mu = float(p @ residual)

    training_curve: list[float] = []
    validation_curve: list[float] = []
    best_val = math.inf
    best_w = w.copy()
    best_epoch = 0
    fail_streak = 0
    stop_reason = STOP_MAX_EPOCHS
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        if float(np.linalg.norm(residual)) < GRADIENT_FLOOR:
            stop_reason = STOP_GRADIENT_VANISHED
            break
        if success:
            p_norm2 = float(p @ p)
            mu = float(p @ residual)
            if mu <= 0.0:
                p = residual.copy()
                p_norm2 = float(p @ p)
                mu = float(p @ residual)
            sigma = config.scg_sigma / math.sqrt(p_norm2)
            _, grad_probe = objective(w + sigma * p)
            delta = float(p @ (grad_probe - grad)) / sigma

        # Levenberg-Marquardt scaling; delta accumulates across rejections.
        delta = delta + (lam - lam_bar) * p_norm2
        if delta <= 0.0:
            lam_bar = 2.0 * (lam - delta / p_norm2)
            delta = -delta + lam * p_norm2
            lam = lam_bar

        alpha = mu / delta
        loss_candidate, _ = objective(w + alpha * p)
        comparison = 2.0 * delta * (loss_current - loss_candidate) / mu**2
        if not math.isfinite(comparison):
            comparison = -1.0

        if comparison >= 0.0:
            w = w + alpha * p
            loss_current, grad = objective(w)
            residual_new = -grad
            lam_bar = 0.0
            success = True
            if epoch % restart_period == 0:
                p = residual_new.copy()
            else:
                beta = float(residual_new @ residual_new
                             - residual_new @ residual) / mu
                p = residual_new + beta * p
            residual = residual_new
            if comparison >= 0.75:
                lam = 0.25 * lam
        else:
            lam_bar = lam
            success = False
        if comparison < 0.25:
            lam = lam + delta * (1.0 - comparison) / p_norm2

        epochs_run = epoch
        training_curve.append(loss_current)
        val = float(validation_loss(w))
        validation_curve.append(val)
        if val < best_val:
            best_val = val
            best_w = w.copy()
            best_epoch = epoch
            fail_streak = 0
        else:
            fail_streak += 1
            if fail_streak >= config.validation_fail_limit:
                stop_reason = STOP_VALIDATION_STALL
                break

    report = TrainReport(epochs_run=epochs_run,
                         training_losses=np.array(training_curve),
                         validation_losses=np.array(validation_curve),
                         stop_reason=stop_reason,
                         best_epoch=best_epoch)
    return best_w, report


def scg_train(params: MlpParams, train_x: np.ndarray, train_t: np.ndarray,
              val_x: np.ndarray, val_t: np.ndarray,
              config: TrainConfig) -> tuple[MlpParams, TrainReport]:
    """Train the classifier on the train split, early-stopping on validation."""
    if train_x.shape[0] < 1 or val_x.shape[0] < 1:
        raise ValueError("train and validation subsets must be nonempty")
    dims = (params.hidden_width, params.input_dim, params.output_dim)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        candidate = MlpParams.from_vector(w, *dims)
        loss, gradient = loss_and_gradient(candidate, train_x, train_t)
        return loss, gradient.to_vector()

    def validation_loss(w: np.ndarray) -> float:
        candidate = MlpParams.from_vector(w, *dims)
        loss, _ = loss_and_gradient(candidate, val_x, val_t)
        return loss

    best_w, report = scg_minimize(objective, params.to_vector(), config,
                                  validation_loss)
    return MlpParams.from_vector(best_w, *dims), report


def predict_classes(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Predicted class labels 1..4; probability ties go to the lowest label."""
    probs = forward(params, np.atleast_2d(np.asarray(features, dtype=float)))
    return np.argmax(probs, axis=1) + 1


def evaluate_model(params: MlpParams, features: np.ndarray,
                   classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Accuracy and a confusion matrix (row = true class, column = predicted)."""
    classes = np.asarray(classes, dtype=int)
    if classes.ndim != 1 or classes.shape[0] < 1:
        raise ValueError("subset must be nonempty")
    predicted = predict_classes(params, features)
    n_classes = params.output_dim
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    for true_label, pred_label in zip(classes, predicted):
        confusion[true_label - 1, pred_label - 1] += 1
    accuracy = float(np.trace(confusion)) / classes.shape[0]
    return accuracy, confusion


def save_model(params: MlpParams, path: str,
               metadata: dict[str, str] | None = None) -> None:
    """Write a model as structured text: dimensions, metadata, flat weights."""
    lines = [_MODEL_MAGIC,
             f"hidden_width {params.hidden_width}",
             f"input_dim {params.input_dim}",
             f"output_dim {params.output_dim}"]
    for key, value in (metadata or {}).items():
        key = str(key)
        if " " in key or not key:
            raise ValueError("metadata keys must be nonempty and space-free")
        lines.append(f"meta {key} {value}")
    vector = params.to_vector()
    lines.append(f"weights {vector.size}")
    lines.extend(format(value, ".17g") for value in vector)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path: str) -> tuple[MlpParams, dict[str, str]]:
    """Read a model written by save_model; returns (params, metadata)."""
    with open(path) as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a recognized model file")
    dims: dict[str, int] = {}
    metadata: dict[str, str] = {}
    index = 1
    n_weights = None
    for index in range(1, len(lines)):
        line = lines[index]
        if line.startswith("weights "):
            n_weights = int(line.split(" ", 1)[1])
            break
        key, _, value = line.partition(" ")
        if key == "meta":
            meta_key, _, meta_value = value.partition(" ")
            metadata[meta_key] = meta_value
        elif key in ("hidden_width", "input_dim", "output_dim"):
            dims[key] = int(value)
        else:
            raise ValueError(f"{path}: unexpected line {index + 1}: {line!r}")
    if n_weights is None:
        raise ValueError(f"{path}: missing weights section")
    missing = {"hidden_width", "input_dim", "output_dim"} - dims.keys()
    if missing:
        raise ValueError(f"{path}: missing dimensions {sorted(missing)}")
    values = lines[index + 1:]
    if len(values) != n_weights:
        raise ValueError(
            f"{path}: expected {n_weights} weight lines, found {len(values)}")
    vector = np.array([float(v) for v in values])
    params = MlpParams.from_vector(vector, dims["hidden_width"],
                                   dims["input_dim"], dims["output_dim"])
    return params, metadata
