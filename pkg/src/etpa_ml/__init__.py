"""Entangled two-photon-absorption delay signals and level-count classification.

The package synthesizes delay-scan absorption signals for model molecular
systems driven by time-frequency-entangled photon pairs, builds labeled
datasets from them, trains a small feed-forward classifier that counts the
intermediate levels, and reproduces the classification-efficiency table
over wavelength bands, grid steps, and entanglement times.
"""

from .dataset import (Dataset, LabeledSignal, LevelBand, generate_dataset,
                      load_dataset, sample_system, save_dataset,
                      split_dataset, split_matrices)
from .experiment import (ExperimentConfig, TableRow, reproduce_table,
                         run_replicates, summarize_stats)
from .neuralnet import (MlpParams, TrainConfig, TrainReport, evaluate_model,
                        finite_diff_check, forward, init_params,
                        load_model, save_model, scg_train)
from .physics import (MolecularSystem, PhotonSource, SignalTrace,
                      entanglement_time_from_crystal, etpa_probability,
                      fwhm_bandwidth, oracle_trace, resonance_term,
                      signal_trace)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ExperimentConfig", "LabeledSignal", "LevelBand", "MlpParams",
    "MolecularSystem", "PhotonSource", "SignalTrace", "TableRow",
    "TrainConfig", "TrainReport", "entanglement_time_from_crystal",
    "etpa_probability", "evaluate_model", "finite_diff_check", "forward",
    "fwhm_bandwidth", "generate_dataset", "init_params", "load_dataset",
    "load_model", "oracle_trace", "reproduce_table", "resonance_term",
    "run_replicates", "sample_system", "save_dataset", "save_model",
    "scg_train", "signal_trace", "split_dataset", "split_matrices",
    "summarize_stats", "__version__",
]
