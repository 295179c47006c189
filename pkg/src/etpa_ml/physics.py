"""Closed-form entangled two-photon-absorption (eTPA) delay signals.

The absorption probability of a photon pair by a molecular system with a
small number of intermediate levels is an analytic function of the
inter-photon delay tau.  This module evaluates that closed form, provides
an independent brute-force quadrature of the underlying time-ordered
amplitude for cross-validation, and offers small helpers relating the
entanglement time to photon bandwidth and crystal parameters.

Units: wavelengths in nm, times in fs, angular frequencies and energies in
rad/fs with hbar = 1.  Probabilities are in arbitrary units; the constant
prefactor of the full rate expression is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

C_NM_PER_FS = 299.792458
"""Speed of light in nm/fs."""

SERIES_THRESHOLD = 1e-6
"""|x*T| below which resonance_term switches to its series expansion."""

MIN_POINTS_PER_PERIOD = 50
"""Coarsest quadrature sampling accepted by oracle_trace."""

_DEFAULT_POINTS_PER_PERIOD = 256


class DegenerateTraceError(ValueError):
    """Raised when an operation cannot proceed on an identically zero trace."""


class ResolutionError(ValueError):
    """Raised when a quadrature step is too coarse for the fastest oscillation."""


def angular_frequency(wavelength_nm: float) -> float:
    """Convert a wavelength in nm to an angular frequency in rad/fs."""
    return 2.0 * math.pi * C_NM_PER_FS / wavelength_nm


@dataclass(frozen=True)
class PhotonSource:
    """Photon-pair source parameters.

    The two-photon resonance condition pins the final-state energy to
    ``omega_s0 + omega_i0``; it is derived, never supplied.  The
    interaction area only enters the dropped prefactor and is retained
    for completeness.
    """

    lambda_s0: float
    lambda_i0: float
    entanglement_time: float
    interaction_area: float = 10.0

    def __post_init__(self) -> None:
        for name in ("lambda_s0", "lambda_i0", "entanglement_time", "interaction_area"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def omega_s0(self) -> float:
        return angular_frequency(self.lambda_s0)

    @property
    def omega_i0(self) -> float:
        return angular_frequency(self.lambda_i0)

    @property
    def final_state_energy(self) -> float:
        return self.omega_s0 + self.omega_i0


@dataclass(frozen=True)
class MolecularSystem:
    """A hypothetical molecule: 1..4 intermediate levels with dipole weights.

    The ground-state energy is zero by convention; each level wavelength
    maps to an energy ``2*pi*c/lambda_j``.
    """

    level_wavelengths: tuple[float, ...]
    dipole_products: tuple[float, ...]

    def __post_init__(self) -> None:
        levels = tuple(float(w) for w in self.level_wavelengths)
        dipoles = tuple(float(d) for d in self.dipole_products)
        object.__setattr__(self, "level_wavelengths", levels)
        object.__setattr__(self, "dipole_products", dipoles)
        if not 1 <= len(levels) <= 4:
            raise ValueError(f"expected 1..4 intermediate levels, got {len(levels)}")
        if len(dipoles) != len(levels):
            raise ValueError("level_wavelengths and dipole_products lengths differ")
        if any(not math.isfinite(w) or w <= 0 for w in levels):
            raise ValueError("level wavelengths must be positive and finite")
        if len(set(levels)) != len(levels):
            raise ValueError("level wavelengths must be distinct")
        if any(not math.isfinite(d) for d in dipoles):
            raise ValueError("dipole products must be finite")

    @property
    def level_count(self) -> int:
        return len(self.level_wavelengths)

    @property
    def level_energies(self) -> np.ndarray:
        return 2.0 * math.pi * C_NM_PER_FS / np.asarray(self.level_wavelengths)


@dataclass(frozen=True)
class SignalTrace:
    """A delay scan: uniform tau grid with non-negative signal values."""

    tau_grid: np.ndarray
    values: np.ndarray
    normalized: bool
    degenerate: bool = False

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau_grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", values)
        if tau.ndim != 1 or tau.size < 2:
            raise ValueError("tau_grid must be a 1-D array of at least two points")
        if values.shape != tau.shape:
            raise ValueError("values and tau_grid lengths differ")
        steps = np.diff(tau)
        if not np.all(steps > 0):
            raise ValueError("tau_grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("tau_grid must be uniformly spaced")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("trace values must be finite and non-negative")
        if self.normalized and not self.degenerate:
            peak = values.max()
            if abs(peak - 1.0) > 1e-12:
                raise ValueError(f"normalized trace must peak at 1, got {peak}")


def resonance_term(x: float, T: float) -> complex:
    """Evaluate (1 - exp(-i*x*T)) / x, continuously through x -> 0.

    For |x*T| below SERIES_THRESHOLD the truncated series
    i*T + x*T^2/2 - i*x^2*T^3/6 is used; elsewhere the direct formula is
    evaluated through half-angle identities, which avoid the cancellation
    in 1 - cos(x*T) for small arguments.
    """
    if not (math.isfinite(x) and math.isfinite(T)):
        raise ValueError("resonance_term requires finite x and T")
    theta = x * T
    if abs(theta) < SERIES_THRESHOLD:
        return complex(x * T * T / 2.0, T - x * x * T * T * T / 6.0)
    half = 0.5 * theta
    s = math.sin(half)
    # 1 - e^{-i theta} = 2 sin^2(theta/2) + 2 i sin(theta/2) cos(theta/2)
    return complex(2.0 * s * s / x, 2.0 * s * math.cos(half) / x)


def _resonance_term_grid(x: float, T: np.ndarray) -> np.ndarray:
    """Vectorized resonance_term for a fixed detuning over an array of durations."""
    T = np.asarray(T, dtype=float)
    theta = x * T
    small = np.abs(theta) < SERIES_THRESHOLD
    out = np.empty(T.shape, dtype=complex)
    if np.any(small):
        Ts = T[small]
        out[small] = x * Ts * Ts / 2.0 + 1j * (Ts - x * x * Ts * Ts * Ts / 6.0)
    if np.any(~small):
        half = 0.5 * theta[~small]
        s = np.sin(half)
        out[~small] = (2.0 * s * s + 2j * s * np.cos(half)) / x
    return out


def _amplitude_grid(system: MolecularSystem, source: PhotonSource,
                    tau: np.ndarray) -> np.ndarray:
    """Two-photon transition amplitude summed over levels, per tau point."""
    te2 = 2.0 * source.entanglement_time
    amp = np.zeros(tau.shape, dtype=complex)
    for energy, dipole in zip(system.level_energies, system.dipole_products):
        amp += dipole * (_resonance_term_grid(energy - source.omega_i0, te2 - tau)
                         + _resonance_term_grid(energy - source.omega_s0, te2 + tau))
    return amp


def etpa_probability(system: MolecularSystem, source: PhotonSource,
                     tau: float) -> float:
    """Absorption probability at a single delay, arbitrary units."""
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    amp = _amplitude_grid(system, source, np.asarray([float(tau)]))[0]
    scale = source.omega_i0 * source.omega_s0 / source.entanglement_time
    return scale * (amp.real * amp.real + amp.imag * amp.imag)


def signal_trace(system: MolecularSystem, source: PhotonSource,
                 tau_window: tuple[float, float] = (-100.0, 100.0),
                 n_samples: int = 500, normalize: bool = True) -> SignalTrace:
    """Evaluate the closed form on a uniform delay grid.

    With ``normalize`` the trace is divided by its peak; an identically
    zero trace (possible only when every dipole product vanishes) is
    returned as all zeros with the degenerate flag set.
    """
    start, end = float(tau_window[0]), float(tau_window[1])
    if not (math.isfinite(start) and math.isfinite(end) and start < end):
        raise ValueError("tau_window must be a finite (start, end) with start < end")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    tau = np.linspace(start, end, n_samples)
    amp = _amplitude_grid(system, source, tau)
    scale = source.omega_i0 * source.omega_s0 / source.entanglement_time
    values = scale * (amp.real * amp.real + amp.imag * amp.imag)
    degenerate = False
    if normalize:
        peak = values.max()
        if peak == 0.0:
            degenerate = True
        else:
            values = values / peak
    return SignalTrace(tau_grid=tau, values=values, normalized=normalize,
                       degenerate=degenerate)


def oracle_trace(system: MolecularSystem, source: PhotonSource,
                 tau_grid: np.ndarray, quadrature_step: float | None = None) -> SignalTrace:
    """Brute-force the delay scan from the time-ordered amplitude.

    The second-order transition amplitude is an integral over the two
    photon interaction times t1 <= t2.  For a pair whose arrival-time
    difference is uniform on a window of half-width 2*T_e shifted by tau,
    the double integral collapses to one-dimensional integrals of
    exp(-i*detuning*u) over u = t2 - t1 >= 0, one per level and photon
    ordering, with window limits clipped at zero:

        idler first:  u in (max(0, -2*T_e - tau), max(0, 2*T_e - tau))
        signal first: u in (max(0,  tau - 2*T_e), max(0, tau + 2*T_e))

    Each segment is integrated with the trapezoid rule on a grid fine
    enough to resolve the fastest detuning oscillation.  Shares no code
    with etpa_probability; used to cross-validate it.
    """
    tau = np.asarray(tau_grid, dtype=float)
    detunings_i = system.level_energies - source.omega_i0
    detunings_s = system.level_energies - source.omega_s0
    fastest = max(np.abs(detunings_i).max(), np.abs(detunings_s).max())
    te2 = 2.0 * source.entanglement_time
    span = te2 + np.abs(tau).max() + te2
    if fastest > 0.0:
        period = 2.0 * math.pi / fastest
        max_step = period / MIN_POINTS_PER_PERIOD
        default_step = period / _DEFAULT_POINTS_PER_PERIOD
    else:
        max_step = math.inf
        default_step = span / 4096.0
    step = default_step if quadrature_step is None else float(quadrature_step)
    if step <= 0.0 or not math.isfinite(step):
        raise ValueError("quadrature_step must be positive and finite")
    if step > max_step:
        raise ResolutionError(
            f"quadrature step {step:.3g} fs cannot resolve the fastest "
            f"oscillation period {2.0 * math.pi / fastest:.3g} fs; "
            f"need step <= {max_step:.3g} fs")

    def segment(detuning: float, lo: float, hi: float) -> complex:
        if hi <= lo:
            return 0.0 + 0.0j
        n = max(int(math.ceil((hi - lo) / step)) + 1, 9)
        u = np.linspace(lo, hi, n)
        integrand = np.exp(-1j * detuning * u)
        return complex(np.trapezoid(integrand, u))

    values = np.empty(tau.shape, dtype=float)
    for idx, t in enumerate(tau):
        amp = 0.0 + 0.0j
        for j, dipole in enumerate(system.dipole_products):
            amp += dipole * (segment(detunings_i[j], max(0.0, -te2 - t), max(0.0, te2 - t))
                             + segment(detunings_s[j], max(0.0, t - te2), max(0.0, t + te2)))
        values[idx] = amp.real * amp.real + amp.imag * amp.imag
    peak = values.max()
    degenerate = peak == 0.0
    if not degenerate:
        values = values / peak
    return SignalTrace(tau_grid=tau, values=values, normalized=True,
                       degenerate=degenerate)


def fwhm_bandwidth(entanglement_time: float, center_wavelength: float) -> float:
    """Photon-pair bandwidth in nm: FWHM of sinc^2(T_e * detuning).

    The half-maximum point of sinc^2 is located numerically; the angular
    width 2*x_half/T_e is converted to wavelength units at the center.
    """
    if entanglement_time <= 0 or center_wavelength <= 0:
        raise ValueError("entanglement_time and center_wavelength must be positive")
    x_half = _sinc_sq_half_point()
    delta_omega = 2.0 * x_half / entanglement_time
    return center_wavelength ** 2 * delta_omega / (2.0 * math.pi * C_NM_PER_FS)


def _sinc_sq_half_point() -> float:
    """Root of sin(x)^2/x^2 = 1/2 on (1, 2), by bisection."""

    def g(x: float) -> float:
        s = math.sin(x) / x
        return s * s - 0.5

    lo, hi = 1.0, 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def entanglement_time_from_crystal(n_s: float, n_i: float, length: float) -> float:
    """T_e from inverse group velocities and crystal length: |N_s - N_i| * L / 4.

    The sign of N_s - N_i only reflects which photon lags; the magnitude
    is what sets the correlation time, so the absolute value is returned.
    """
    return abs((n_s - n_i) * length) / 4.0
