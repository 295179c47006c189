import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etpa_ml.dataset import one_hot_matrix, split_matrices
from etpa_ml.neuralnet import (STOP_GRADIENT_VANISHED, MlpParams, TrainConfig,
                               TrainReport, evaluate_model, finite_diff_check,
                               forward, init_params, load_model,
                               loss_and_gradient, predict_classes, save_model,
                               scg_minimize, scg_train)


def _zero_params(hidden=5, inputs=8, outputs=4):
    return MlpParams(hidden_weights=np.zeros((hidden, inputs)),
                     hidden_biases=np.zeros(hidden),
                     output_weights=np.zeros((outputs, hidden)),
                     output_biases=np.zeros(outputs))


def _random_batch(rng, n=20, inputs=500):
    params = init_params(5, inputs, 4, rng)
    features = rng.uniform(-1.0, 1.0, (n, inputs))
    targets = one_hot_matrix(rng.integers(1, 5, n))
    return params, features, targets


# ------------------------------------------------------------------ parameters

def test_params_reject_inconsistent_shapes():
    with pytest.raises(ValueError):
        MlpParams(hidden_weights=np.zeros((5, 8)), hidden_biases=np.zeros(4),
                  output_weights=np.zeros((4, 5)), output_biases=np.zeros(4))
    with pytest.raises(ValueError):
        MlpParams(hidden_weights=np.zeros((5, 8)), hidden_biases=np.zeros(5),
                  output_weights=np.zeros((4, 6)), output_biases=np.zeros(4))
    with pytest.raises(ValueError):
        MlpParams(hidden_weights=np.full((5, 8), np.inf),
                  hidden_biases=np.zeros(5),
                  output_weights=np.zeros((4, 5)), output_biases=np.zeros(4))


@settings(deadline=None, max_examples=25)
@given(hidden=st.integers(1, 6), inputs=st.integers(1, 9),
       outputs=st.integers(1, 5), seed=st.integers(0, 2 ** 31 - 1))
def test_vector_round_trip(hidden, inputs, outputs, seed):
    params = init_params(hidden, inputs, outputs, np.random.default_rng(seed))
    vector = params.to_vector()
    assert vector.size == params.n_parameters
    rebuilt = MlpParams.from_vector(vector, hidden, inputs, outputs)
    assert np.array_equal(rebuilt.to_vector(), vector)
    with pytest.raises(ValueError):
        MlpParams.from_vector(vector[:-1], hidden, inputs, outputs)


def test_init_params_bounds_and_determinism():
    a = init_params(5, 500, 4, np.random.default_rng(6))
    b = init_params(5, 500, 4, np.random.default_rng(6))
    assert np.array_equal(a.to_vector(), b.to_vector())
    assert np.all(np.abs(a.hidden_weights) <= 1.0 / math.sqrt(500))
    assert np.all(np.abs(a.output_weights) <= 1.0 / math.sqrt(5))
    assert np.all(a.hidden_biases == 0.0) and np.all(a.output_biases == 0.0)


# --------------------------------------------------------------------- forward

def test_forward_rows_are_probability_vectors():
    rng = np.random.default_rng(0)
    params, features, _ = _random_batch(rng)
    probs = forward(params, features)
    assert probs.shape == (20, 4)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs > 0.0)
    single = forward(params, features[3])
    assert np.array_equal(single, probs[3])


def test_zero_network_predicts_uniformly():
    probs = forward(_zero_params(), np.ones(8))
    assert np.array_equal(probs, np.full(4, 0.25))
    # argmax ties resolve to the lowest class label
    assert predict_classes(_zero_params(), np.ones((3, 8))).tolist() == [1, 1, 1]


def test_forward_output_is_shift_invariant():
    rng = np.random.default_rng(1)
    params, features, _ = _random_batch(rng, n=6, inputs=12)
    shifted = MlpParams(hidden_weights=params.hidden_weights,
                        hidden_biases=params.hidden_biases,
                        output_weights=params.output_weights,
                        output_biases=params.output_biases + 37.5)
    assert np.allclose(forward(params, features), forward(shifted, features),
                       atol=1e-12)


def test_forward_validates_input():
    params = _zero_params()
    with pytest.raises(ValueError):
        forward(params, np.ones(9))
    with pytest.raises(ValueError):
        forward(params, np.full(8, np.nan))


def test_forward_is_stable_at_extreme_activations():
    params = MlpParams(hidden_weights=np.full((5, 8), 300.0),
                       hidden_biases=np.zeros(5),
                       output_weights=np.full((4, 5), -300.0),
                       output_biases=np.zeros(4))
    probs = forward(params, np.full(8, 100.0))
    assert np.all(np.isfinite(probs))
    assert math.isclose(float(probs.sum()), 1.0, rel_tol=1e-12)


# ------------------------------------------------------------ loss and gradient

def test_uniform_prediction_loss_is_log_four():
    features = np.random.default_rng(2).uniform(-1, 1, (10, 8))
    targets = one_hot_matrix(np.tile([1, 2], 5))
    loss, gradient = loss_and_gradient(_zero_params(), features, targets)
    assert math.isclose(loss, math.log(4.0), rel_tol=1e-9)
    assert gradient.to_vector().shape == _zero_params().to_vector().shape


def test_loss_rejects_invalid_targets():
    params = _zero_params()
    features = np.ones((4, 8))
    bad_rows = np.full((4, 4), 0.25)
    with pytest.raises(ValueError):
        loss_and_gradient(params, features, bad_rows)
    two_hot = one_hot_matrix(np.array([1, 2, 3, 4]))
    two_hot[0, 1] = 1.0
    with pytest.raises(ValueError):
        loss_and_gradient(params, features, two_hot)
    with pytest.raises(ValueError):
        loss_and_gradient(params, features, one_hot_matrix(np.array([1, 2])))


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(3):
        params, features, targets = _random_batch(rng)
        assert finite_diff_check(params, features, targets, 1e-5) < 1e-5


def test_finite_difference_error_grows_with_step_size():
    rng = np.random.default_rng(13)
    params, features, targets = _random_batch(rng, n=10, inputs=30)
    coarse = finite_diff_check(params, features, targets, 1e-2)
    fine = finite_diff_check(params, features, targets, 1e-5)
    assert fine < coarse
    with pytest.raises(ValueError):
        finite_diff_check(params, features, targets, 0.0)


# ------------------------------------------------------------------- optimizer

def test_quadratic_objective_converges_in_dimension_steps():
    curvatures = np.array([1.0, 0.5, 2.0])

    def objective(w):
        return 0.5 * float(w @ (curvatures * w)), curvatures * w

    def validation_loss(w):
        return objective(w)[0]

    config = TrainConfig(max_epochs=4, validation_fail_limit=10,
                         scg_lambda_init=1e-10)
    best, report = scg_minimize(objective, np.array([1.0, -2.0, 1.5]),
                                config, validation_loss)
    assert objective(best)[0] < 1e-8
    assert report.epochs_run <= 4


def test_zero_gradient_start_stops_immediately():
    def objective(w):
        return 1.0, np.zeros_like(w)

    best, report = scg_minimize(objective, np.array([0.3, 0.7]),
                                TrainConfig(), lambda w: 1.0)
    assert report.stop_reason == STOP_GRADIENT_VANISHED
    assert report.epochs_run == 0
    assert np.array_equal(best, np.array([0.3, 0.7]))


def test_training_is_deterministic_and_monotone(small_dataset):
    matrices = split_matrices(small_dataset)
    config = TrainConfig(max_epochs=40, validation_fail_limit=15)
    runs = []
    for _ in range(2):
        params = init_params(5, 500, 4, np.random.default_rng(3))
        trained, report = scg_train(params, matrices.train_x, matrices.train_t,
                                    matrices.val_x, matrices.val_t, config)
        runs.append((trained, report))
    first, second = runs
    assert np.array_equal(first[0].to_vector(), second[0].to_vector())
    assert np.array_equal(first[1].training_losses, second[1].training_losses)
    # accepted steps never increase the training loss
    assert np.all(np.diff(first[1].training_losses) <= 1e-15)


def test_returned_params_hit_the_best_validation_epoch(small_dataset):
    matrices = split_matrices(small_dataset)
    params = init_params(5, 500, 4, np.random.default_rng(3))
    trained, report = scg_train(params, matrices.train_x, matrices.train_t,
                                matrices.val_x, matrices.val_t,
                                TrainConfig(max_epochs=40,
                                            validation_fail_limit=15))
    val_loss, _ = loss_and_gradient(trained, matrices.val_x, matrices.val_t)
    assert abs(val_loss - report.validation_losses.min()) < 1e-12
    assert report.best_epoch == int(np.argmin(report.validation_losses)) + 1


def test_trained_classifier_beats_chance_on_easy_data(small_dataset):
    matrices = split_matrices(small_dataset)
    params = init_params(5, 500, 4, np.random.default_rng(3))
    trained, _ = scg_train(params, matrices.train_x, matrices.train_t,
                           matrices.val_x, matrices.val_t, TrainConfig())
    accuracy, confusion = evaluate_model(trained, matrices.test_x,
                                         matrices.test_classes)
    assert accuracy >= 0.8
    assert confusion.sum() == matrices.test_x.shape[0]
    assert np.trace(confusion) == round(accuracy * matrices.test_x.shape[0])


def test_train_config_and_report_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(validation_fail_limit=0)
    with pytest.raises(ValueError):
        TrainConfig(scg_sigma=-1e-5)
    with pytest.raises(ValueError):
        TrainConfig(scg_lambda_init=0.0)
    with pytest.raises(ValueError):
        TrainReport(epochs_run=2, training_losses=np.ones(3),
                    validation_losses=np.ones(2), stop_reason="max_epochs",
                    best_epoch=1)
    with pytest.raises(ValueError):
        TrainReport(epochs_run=2, training_losses=np.ones(2),
                    validation_losses=np.ones(2), stop_reason="gave_up",
                    best_epoch=1)
    with pytest.raises(ValueError):
        TrainReport(epochs_run=2, training_losses=np.ones(2),
                    validation_losses=np.ones(2), stop_reason="max_epochs",
                    best_epoch=3)


def test_scg_train_rejects_empty_subsets():
    params = _zero_params()
    with pytest.raises(ValueError):
        scg_train(params, np.empty((0, 8)), np.empty((0, 4)),
                  np.ones((2, 8)), one_hot_matrix(np.array([1, 2])),
                  TrainConfig())


# ------------------------------------------------------------------ model files

def test_model_save_load_round_trip(tmp_path):
    params = init_params(5, 500, 4, np.random.default_rng(10))
    path = str(tmp_path / "model.txt")
    save_model(params, path, metadata={"stop_reason": "max_epochs",
                                       "epochs_run": "40"})
    loaded, metadata = load_model(path)
    assert np.array_equal(loaded.to_vector(), params.to_vector())
    assert metadata == {"stop_reason": "max_epochs", "epochs_run": "40"}


def test_model_file_validation(tmp_path):
    params = init_params(2, 3, 4, np.random.default_rng(0))
    path = tmp_path / "model.txt"
    with pytest.raises(ValueError):
        save_model(params, str(path), metadata={"bad key": "x"})
    save_model(params, str(path))
    text = path.read_text()
    (tmp_path / "junk.txt").write_text("something else\n")
    with pytest.raises(ValueError):
        load_model(str(tmp_path / "junk.txt"))
    truncated = "\n".join(text.splitlines()[:-2]) + "\n"
    (tmp_path / "short.txt").write_text(truncated)
    with pytest.raises(ValueError):
        load_model(str(tmp_path / "short.txt"))
