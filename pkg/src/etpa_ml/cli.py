"""Command-line entry point.

Subcommands: synth (one delay trace), gen-data (labeled dataset), train,
eval, table (full efficiency sweep), check (self-verification suites).
Options resolve as built-in defaults, overridden by a JSON config file
(--config), overridden by explicit flags.  Exit status is 0 on success,
1 on validation errors (bad flags, bad values, malformed inputs), 2 on
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from ._util import atomic_write_text
from .dataset import (LevelBand, apply_scaling, generate_dataset,
                      load_dataset, save_dataset, split_matrices, with_split)
from .experiment import (DEFAULT_BASE_SEED, DEFAULT_CENTRAL_WAVELENGTH,
                         DEFAULT_ENTANGLEMENT_TIMES, TrainConfig,
                         render_table_text, reproduce_table,
                         write_replicates_csv, write_table_csv)
from .neuralnet import (evaluate_model, finite_diff_check, init_params,
                        load_model, save_model, scg_train)
from .physics import (MolecularSystem, PhotonSource, oracle_trace,
                      signal_trace)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_SEED_HELP = "base seed for every random draw this command makes"


class CliError(Exception):
    """Invalid invocation or input; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through CliError
    # instead so unknown flags count as validation errors.
    def error(self, message):
        raise CliError(message)


def _comma_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(","))
    except ValueError:
        raise CliError(f"{flag}: expected comma-separated numbers, got {text!r}")
    if not values:
        raise CliError(f"{flag}: needs at least one value")
    return values


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise CliError(f"--config: cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(f"--config: {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError(f"--config: {path} must hold a JSON object")
    return data


def _resolve(args: argparse.Namespace, options: dict) -> dict:
    """Merge defaults, config-file values, and explicit flags.

    Flags parse with default None so an absent flag falls back to the
    config file, then to the built-in default.  Config keys must match
    flag names (dashes or underscores) and carry the right type.
    """
    config = _load_config_file(args.config)
    resolved = {}
    for key, opt in options.items():
        value = getattr(args, key)
        if value is None:
            for candidate in (key, key.replace("_", "-")):
                if candidate in config:
                    value = _coerce(config[candidate], opt, candidate)
                    break
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise CliError(f"--{key.replace('_', '-')} is required")
        resolved[key] = value
    known = {k for key in options for k in (key, key.replace("_", "-"))}
    unknown = set(config) - known
    if unknown:
        raise CliError(f"--config: unknown keys {sorted(unknown)}")
    return resolved


def _coerce(value, opt: _Opt, key: str):
    if opt.kind == "flag":
        if not isinstance(value, bool):
            raise CliError(f"--config: {key} must be true or false")
        return value
    if opt.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CliError(f"--config: {key} must be a number")
        return float(value)
    if opt.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise CliError(f"--config: {key} must be an integer")
        return value
    if not isinstance(value, str):
        raise CliError(f"--config: {key} must be a string")
    return value


class _Opt:
    """How one option parses: value kind, built-in default, requiredness."""

    def __init__(self, kind: str, default=None, required: bool = False):
        if kind not in ("flag", "int", "float", "str"):
            raise ValueError(f"unknown option kind {kind!r}")
        self.kind = kind
        self.default = default
        self.required = required


def _opt_of(value) -> _Opt:
    if isinstance(value, _Opt):
        return value
    if isinstance(value, bool):
        return _Opt("flag", value)
    if isinstance(value, int):
        return _Opt("int", value)
    if isinstance(value, float):
        return _Opt("float", value)
    return _Opt("str", value)


_FLOAT = _Opt("float", required=True)
_STR = _Opt("str", required=True)
_OPT_FLOAT = _Opt("float")
_OPT_STR = _Opt("str")
_FLAG = _Opt("flag", False)


def _figure_path(out_path: str) -> str:
    return os.path.splitext(out_path)[0] + ".png"


def _format_sig12(value: float) -> str:
    # decimal notation, >= 12 significant digits, never an exponent
    if value == 0.0:
        return "0.000000000000"
    magnitude = math.floor(math.log10(abs(value)))
    decimals = max(0, 12 - 1 - magnitude)
    return f"{value:.{decimals}f}"


def _cmd_synth(resolved: dict) -> int:
    levels = _comma_floats(resolved["levels"], "--levels")
    if resolved["dipoles"] is not None:
        dipoles = _comma_floats(resolved["dipoles"], "--dipoles")
        if len(dipoles) != len(levels):
            raise CliError("--dipoles: needs one value per level")
    else:
        dipoles = tuple(1.0 for _ in levels)
    out = resolved["out"]
    system = MolecularSystem(level_wavelengths=levels, dipole_products=dipoles)
    source = PhotonSource(lambda_s0=resolved["lambda0_nm"],
                          lambda_i0=resolved["lambda0_nm"],
                          entanglement_time=resolved["te_fs"])
    window = (-resolved["window_fs"], resolved["window_fs"])
    trace = signal_trace(system, source, window, resolved["samples"])
    lines = ["tau_fs,p_norm"]
    for tau, value in zip(trace.tau_grid, trace.values):
        lines.append(f"{_format_sig12(tau)},{_format_sig12(value)}")
    atomic_write_text(out, "\n".join(lines) + "\n")
    print(f"wrote {trace.tau_grid.size}-point trace to {out}")
    if not resolved["no_figure"]:
        from .plotting import save_trace_figure
        label = ", ".join(f"{level:g}" for level in levels)
        figure_path = _figure_path(out)
        save_trace_figure(trace, figure_path,
                          title=f"levels {label} nm, "
                                f"T_e {resolved['te_fs']:g} fs")
        print(f"wrote figure to {figure_path}")
    return EXIT_OK


def _cmd_gen_data(resolved: dict) -> int:
    band = LevelBand(resolved["band_low"],
                     resolved["band_high"],
                     resolved["step"])
    out = resolved["out"]
    source = PhotonSource(lambda_s0=resolved["lambda0_nm"],
                          lambda_i0=resolved["lambda0_nm"],
                          entanglement_time=resolved["te_fs"])
    dataset = generate_dataset(band, source, resolved["per_class"],
                               n_samples=resolved["samples"],
                               seed=resolved["seed"],
                               random_dipoles=resolved["random_dipoles"],
                               noise_sigma=resolved["noise_sigma"])
    dataset = with_split(dataset,
                         np.random.default_rng([resolved["seed"], 0, 101]))
    save_dataset(dataset, out)
    print(f"wrote {dataset.n_records} records "
          f"({resolved['per_class']} per class) to {out}")
    return EXIT_OK


def _cmd_train(resolved: dict) -> int:
    data_path = resolved["data"]
    out = resolved["out"]
    dataset = load_dataset(data_path)
    if dataset.split_assignment is None:
        raise CliError("--data: dataset has no train/validation/test split")
    matrices = split_matrices(dataset)
    config = TrainConfig(max_epochs=resolved["max_epochs"],
                         validation_fail_limit=resolved["patience"],
                         scg_sigma=resolved["scg_sigma"],
                         scg_lambda_init=resolved["scg_lambda"],
                         seed=resolved["seed"])
    rng = np.random.default_rng(resolved["seed"])
    params = init_params(resolved["hidden"], dataset.n_features, 4, rng)
    trained, report = scg_train(params, matrices.train_x, matrices.train_t,
                                matrices.val_x, matrices.val_t, config)
    accuracy, _ = evaluate_model(trained, matrices.test_x,
                                 matrices.test_classes)
    save_model(trained, out, metadata={
        "epochs_run": str(report.epochs_run),
        "stop_reason": report.stop_reason,
        "best_epoch": str(report.best_epoch),
        "test_accuracy": f"{accuracy:.6f}",
        "source_data": os.path.basename(data_path),
    })
    print(f"trained {report.epochs_run} epochs, stopped on "
          f"{report.stop_reason}, best epoch {report.best_epoch}")
    print(f"test accuracy {100 * accuracy:.2f}%, model written to {out}")
    return EXIT_OK


def _cmd_eval(resolved: dict) -> int:
    params, metadata = load_model(resolved["model"])
    dataset = load_dataset(resolved["data"])
    subset = resolved["subset"]
    if subset not in ("train", "validation", "test"):
        raise CliError("--subset: must be train, validation, or test")
    if dataset.split_assignment is None:
        raise CliError("--data: dataset has no train/validation/test split")
    if dataset.scaling is None:
        raise CliError("--data: dataset carries no scaling parameters")
    indices = dataset.subset_indices(subset)
    features = apply_scaling(dataset.features[indices], dataset.scaling)
    classes = dataset.classes[indices]
    accuracy, confusion = evaluate_model(params, features, classes)
    print(f"{subset} accuracy: {100 * accuracy:.2f}% "
          f"({int(round(accuracy * len(classes)))}/{len(classes)})")
    print("confusion (row = true class 1..4, column = predicted):")
    for row in confusion:
        print("  " + " ".join(f"{entry:5d}" for entry in row))
    if "epochs_run" in metadata:
        print(f"model metadata: {metadata}")
    return EXIT_OK


def _cmd_table(resolved: dict) -> int:
    out = resolved["out"]
    te_filter = resolved["te_fs"]
    if te_filter is None:
        te_values = DEFAULT_ENTANGLEMENT_TIMES
    else:
        te_values = (te_filter,)
    train = TrainConfig(max_epochs=resolved["max_epochs"],
                        validation_fail_limit=resolved["patience"])
    rows = reproduce_table(
        replicates=resolved["replicates"], per_class=resolved["per_class"],
        base_seed=resolved["seed"], entanglement_times=te_values,
        central_wavelength=resolved["lambda0_nm"], train=train,
        threads=resolved["threads"], fixed_split=resolved["fixed_split"],
        progress=lambda row: print(
            f"  cell band {row.band.low:g}-{row.band.high:g} nm, "
            f"step {row.band.step:g} nm, T_e {row.entanglement_time:g} fs: "
            f"{row.mean_pct:.2f} +- {row.std_pct:.2f} %", flush=True))
    write_table_csv(rows, out)
    print(render_table_text(rows))
    print(f"wrote {len(rows)} rows to {out}")
    if resolved["dump_replicates"]:
        replicates_path = os.path.splitext(out)[0] + "_replicates.csv"
        write_replicates_csv(rows, replicates_path)
        print(f"wrote per-replicate efficiencies to {replicates_path}")
    if not resolved["no_figure"]:
        from .plotting import save_table_figure
        figure_path = _figure_path(out)
        save_table_figure(rows, figure_path)
        print(f"wrote figure to {figure_path}")
    return EXIT_OK


def _cmd_check(resolved: dict) -> int:
    rng = np.random.default_rng(resolved["seed"])
    source = PhotonSource(lambda_s0=810.0, lambda_i0=810.0,
                          entanglement_time=63.0)
    failures = 0

    for index in range(10):
        n_levels = int(rng.integers(1, 5))
        levels = tuple(np.sort(rng.uniform(835.0, 845.0, n_levels)))
        system = MolecularSystem(level_wavelengths=levels,
                                 dipole_products=(1.0,) * n_levels)
        closed = signal_trace(system, source, (-100.0, 100.0), 500)
        quadrature = oracle_trace(system, source,
                                  np.linspace(-100.0, 100.0, 500))
        difference = float(np.max(np.abs(closed.values - quadrature.values)))
        ok = difference < 1e-3
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} closed-form vs quadrature "
              f"[system {index}, k={n_levels}]: max abs diff {difference:.2e}")

    for index in range(10):
        params = init_params(5, 500, 4, rng)
        features = rng.uniform(-1.0, 1.0, (20, 500))
        classes = rng.integers(1, 5, 20)
        targets = np.zeros((20, 4))
        targets[np.arange(20), classes - 1] = 1.0
        error = finite_diff_check(params, features, targets, 1e-5)
        ok = error < 1e-5
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} gradient vs finite differences "
              f"[point {index}]: max rel err {error:.2e}")

    if failures:
        print(f"{failures} check(s) failed")
        return EXIT_RUNTIME
    print("all checks passed")
    return EXIT_OK


_PHYSICS_DEFAULTS = {
    "te_fs": 63.0,
    "lambda0_nm": DEFAULT_CENTRAL_WAVELENGTH,
    "samples": 500,
}

_TRAIN_DEFAULTS = {
    "hidden": 5,
    "max_epochs": TrainConfig().max_epochs,
    "patience": TrainConfig().validation_fail_limit,
    "scg_sigma": TrainConfig().scg_sigma,
    "scg_lambda": TrainConfig().scg_lambda_init,
}

_SUBCOMMANDS = {
    "synth": (_cmd_synth, {
        **_PHYSICS_DEFAULTS,
        "levels": _STR,
        "dipoles": _OPT_STR,
        "window_fs": 100.0,
        "out": _STR,
        "seed": DEFAULT_BASE_SEED,
        "no_figure": _FLAG,
    }),
    "gen-data": (_cmd_gen_data, {
        **_PHYSICS_DEFAULTS,
        "band_low": _FLOAT,
        "band_high": _FLOAT,
        "step": _FLOAT,
        "per_class": 500,
        "random_dipoles": _FLAG,
        "noise_sigma": 0.0,
        "seed": DEFAULT_BASE_SEED,
        "out": _STR,
    }),
    "train": (_cmd_train, {
        **_TRAIN_DEFAULTS,
        "data": _STR,
        "out": _STR,
        "seed": DEFAULT_BASE_SEED,
    }),
    "eval": (_cmd_eval, {
        "model": _STR,
        "data": _STR,
        "subset": "test",
        "seed": DEFAULT_BASE_SEED,
    }),
    "table": (_cmd_table, {
        "te_fs": _OPT_FLOAT,
        "lambda0_nm": DEFAULT_CENTRAL_WAVELENGTH,
        "replicates": 100,
        "per_class": 500,
        "max_epochs": TrainConfig().max_epochs,
        "patience": TrainConfig().validation_fail_limit,
        "seed": DEFAULT_BASE_SEED,
        "threads": os.cpu_count() or 1,
        "out": "table.csv",
        "dump_replicates": _FLAG,
        "fixed_split": _FLAG,
        "no_figure": _FLAG,
    }),
    "check": (_cmd_check, {
        "seed": DEFAULT_BASE_SEED,
    }),
}

_HELP = {
    "levels": "comma-separated intermediate-level wavelengths (nm)",
    "dipoles": "comma-separated dipole products, one per level (default 1)",
    "te_fs": "entanglement time (fs)",
    "lambda0_nm": "central wavelength of both photons (nm)",
    "samples": "number of delay grid points",
    "window_fs": "half-width W of the delay window [-W, W] (fs)",
    "out": "output file path",
    "seed": _SEED_HELP,
    "no_figure": "skip writing the companion PNG figure",
    "band_low": "lowest allowed level wavelength (nm)",
    "band_high": "highest allowed level wavelength (nm)",
    "step": "level grid step (nm); must divide the band width evenly",
    "per_class": "number of records per class",
    "random_dipoles": "draw dipole products uniformly from [0.5, 1]",
    "noise_sigma": "Gaussian noise level as a fraction of each record's peak",
    "data": "dataset CSV path (side metadata file must sit next to it)",
    "hidden": "hidden-layer width",
    "max_epochs": "training epoch budget",
    "patience": "consecutive non-improving validation epochs before stopping",
    "scg_sigma": "perturbation scale for the curvature estimate",
    "scg_lambda": "initial Levenberg-Marquardt damping",
    "model": "model file path",
    "subset": "which split to score: train, validation, or test",
    "replicates": "independent trainings per table cell",
    "threads": "worker threads for replicate runs",
    "dump_replicates": "also write per-replicate efficiencies",
    "fixed_split": "reuse the replicate-0 split for all replicates",
}


for _name, (_, _options) in _SUBCOMMANDS.items():
    for _key in list(_options):
        _options[_key] = _opt_of(_options[_key])


def _build_parser() -> _Parser:
    parser = _Parser(prog="etpa-ml",
                     description=sys.modules[__package__].__doc__)
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, (_, options) in _SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=None)
        sub.add_argument("--config", default=None,
                         help="JSON file of option values; flags win")
        for key, opt in options.items():
            flag = "--" + key.replace("_", "-")
            help_text = _HELP.get(key, "")
            if opt.kind == "flag":
                sub.add_argument(flag, dest=key, action="store_const",
                                 const=True, default=None, help=help_text)
            else:
                kinds = {"int": int, "float": float, "str": str}
                sub.add_argument(flag, dest=key, type=kinds[opt.kind],
                                 default=None, help=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise CliError("a subcommand is required (see --help)")
        command, options = _SUBCOMMANDS[args.subcommand]
        resolved = _resolve(args, options)
        return command(resolved)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
