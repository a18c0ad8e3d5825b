"""Voltage pulse construction: ramp shapes, waveform sampling, hardware filter.

The five-step sequence is driven by a trapezoid-like voltage pulse whose
edges are half-cosine ("soft") ramps, optionally augmented with a
first-harmonic correction that cancels the leading non-adiabatic error of
the sweep. Correction coefficients are found by direct numerical
minimization of the end-of-edge leakage, not analytically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .errors import ConfigurationError, DomainError
from .model import TuningModel

TWO_PI = 2.0 * math.pi

# Time-alignment tolerance for the equal-edge-duration invariant (relative).
_EDGE_TOL = 1e-9

RAMP_KINDS = ("soft", "corrected", "ideal")

# Minimum waveform samples per period of the highest correction harmonic.
MIN_SAMPLES_PER_HARMONIC = 50

# Coefficient search box for the correction optimizer.
CORRECTION_BOUND = 1.0

# Above this end-of-edge infidelity the optimizer result carries a warning.
STAGNATION_INFIDELITY = 0.2


@dataclass(frozen=True)
class RampSpec:
    """Timing, voltage levels and shape coefficients of one pulse.

    Time layout: leading edge on [t0, ts], wait plateau on [ts, tf],
    trailing edge on [tf, tr]; both edges last equally long. u_initial is
    held before t0, u_final during the plateau, u_readout after tr.

    c, d are the first-harmonic correction coefficients of the leading edge;
    c_trail, d_trail the independent pair of the trailing edge. kind 'soft'
    ignores all four, 'ideal' marks an edge treated as an exact identity in
    the sequence simulation (no waveform exists for it).
    """

    t0: float
    ts: float
    tf: float
    tr: float
    u_initial: float
    u_final: float
    u_readout: float
    c: float = 0.0
    d: float = 0.0
    c_trail: float = 0.0
    d_trail: float = 0.0
    kind: str = "soft"

    def __post_init__(self):
        if self.kind not in RAMP_KINDS:
            raise ConfigurationError(f"ramp kind must be one of {RAMP_KINDS}, got {self.kind!r}")
        if not (self.t0 < self.ts <= self.tf < self.tr):
            raise ConfigurationError("ramp times must satisfy t0 < ts <= tf < tr")
        lead, trail = self.ts - self.t0, self.tr - self.tf
        if abs(lead - trail) > _EDGE_TOL * max(lead, trail):
            raise ConfigurationError("leading and trailing edges must last equally long")
        if self.u_final == self.u_initial:
            raise ConfigurationError("u_final must differ from u_initial")
        if self.u_final == self.u_readout:
            raise ConfigurationError("u_final must differ from u_readout")

    @property
    def edge_duration(self) -> float:
        return self.ts - self.t0

    @property
    def wait_duration(self) -> float:
        return self.tf - self.ts

    @property
    def delta_u(self) -> float:
        return self.u_final - self.u_initial

    @property
    def delta_u_bar(self) -> float:
        return self.u_final - self.u_readout

    def with_wait(self, t_w: float) -> "RampSpec":
        """Same pulse with the plateau stretched to wait time t_w >= 0."""
        if t_w < 0.0:
            raise DomainError("wait time must be non-negative")
        tf = self.ts + t_w
        return replace(self, tf=tf, tr=tf + self.edge_duration)


def edge_duration_for_prior(prior: float) -> float:
    """Edge duration from the sweep-time rule, seconds.

    The conventionally quoted sweep time is half an exchange period,
    ts = pi/prior; the edge spans twice that, so its soft half-cosine
    component sits at prior/(4*pi) Hz and the correction harmonic at twice
    that, both well inside a 100 kHz line bandwidth for ~40 kHz splittings.
    """
    if prior <= 0.0:
        raise DomainError("prior splitting must be positive")
    return TWO_PI / prior


def _lead_phase(spec: RampSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < spec.t0 - _EDGE_TOL) or np.any(t > spec.ts + _EDGE_TOL):
        raise DomainError("time outside the leading edge [t0, ts]")
    return np.clip((t - spec.t0) / spec.edge_duration, 0.0, 1.0)


def soft_ramp(spec: RampSpec, t):
    """Soft leading-edge shape g(t) = (1 - cos(pi (t-t0)/(ts-t0))) / 2."""
    x = _lead_phase(spec, t)
    g = 0.5 * (1.0 - np.cos(math.pi * x))
    return float(g) if np.isscalar(t) else g


def corrected_ramp(spec: RampSpec, t):
    """Leading edge with the first-harmonic correction added.

    g(t) = g_soft(t) + c (1 - cos(2 pi x)) + d sin(2 pi x), x = (t-t0)/(ts-t0).
    Both correction terms vanish at the endpoints, so the plateau levels are
    unchanged for any (c, d).
    """
    x = _lead_phase(spec, t)
    g = (
        0.5 * (1.0 - np.cos(math.pi * x))
        + spec.c * (1.0 - np.cos(TWO_PI * x))
        + spec.d * np.sin(TWO_PI * x)
    )
    return float(g) if np.isscalar(t) else g


def trailing_edge(spec: RampSpec, t):
    """Trailing-edge shape g(t) on [tf, tr], rising 0 -> 1 as U drops to u_readout.

    The soft part mirrors the leading edge in time (g = 1 - g_lead at the
    mirrored instant t0 + tr - t), which by plateau continuity gives g(tf)=0
    and g(tr)=1; the independent correction pair (c_trail, d_trail) again
    vanishes at both ends.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < spec.tf - _EDGE_TOL) or np.any(t > spec.tr + _EDGE_TOL):
        raise DomainError("time outside the trailing edge [tf, tr]")
    x = np.clip((t - spec.tf) / (spec.tr - spec.tf), 0.0, 1.0)
    g = (
        0.5 * (1.0 - np.cos(math.pi * x))
        + spec.c_trail * (1.0 - np.cos(TWO_PI * x))
        + spec.d_trail * np.sin(TWO_PI * x)
    )
    return float(g) if np.isscalar(t) else g


@dataclass
class PulseWaveform:
    """Uniformly sampled voltage and detuning of one pulse segment."""

    time: np.ndarray
    voltage: np.ndarray
    detuning: np.ndarray
    sample_period: float

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.detuning = np.asarray(self.detuning, dtype=float)
        n = len(self.time)
        if n < 3 or len(self.voltage) != n or len(self.detuning) != n:
            raise ConfigurationError("waveform arrays must share a length of at least 3")
        steps = np.diff(self.time)
        if np.any(np.abs(steps - self.sample_period) > 1e-9 * self.sample_period):
            raise ConfigurationError("waveform must be uniformly sampled")

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "voltage_V", "detuning_rad_s"])
            for t, u, dl in zip(self.time, self.voltage, self.detuning):
                writer.writerow([f"{t:.12g}", f"{u:.12g}", f"{dl:.12g}"])


def _edge_samples(spec: RampSpec, edge: str, n_steps: int):
    """Times and shape values of one edge at 2*n_steps+1 uniform samples."""
    if spec.kind == "ideal":
        raise ConfigurationError("an ideal edge has no waveform")
    if n_steps < 1:
        raise ConfigurationError("need at least one integration step per edge")
    n_samples = 2 * n_steps + 1
    # The correction harmonic completes one cycle per edge, so >= 50 samples
    # per edge keeps the sample rate at 50x that harmonic.
    if n_samples - 1 < MIN_SAMPLES_PER_HARMONIC:
        raise ConfigurationError("waveform sample rate below 50x the correction harmonic")
    if edge == "leading":
        t = np.linspace(spec.t0, spec.ts, n_samples)
        g = corrected_ramp(spec, t) if spec.kind == "corrected" else soft_ramp(spec, t)
        u = spec.u_initial + spec.delta_u * g
        # Trig at the endpoints is analytically exact; remove rounding so the
        # plateau-match invariant holds bit-for-bit.
        u[0], u[-1] = spec.u_initial, spec.u_final
    elif edge == "trailing":
        t = np.linspace(spec.tf, spec.tr, n_samples)
        g = trailing_edge(spec, t) if spec.kind == "corrected" else trailing_edge(
            replace(spec, c_trail=0.0, d_trail=0.0), t
        )
        u = spec.u_final - spec.delta_u_bar * g
        u[0], u[-1] = spec.u_final, spec.u_readout
    else:
        raise ConfigurationError(f"edge must be 'leading' or 'trailing', got {edge!r}")
    return t, u


def build_edge_waveform(spec: RampSpec, tuning: TuningModel, edge: str, n_steps: int) -> PulseWaveform:
    """Sample one edge at 2*n_steps+1 points (integration midpoints included).

    The voltage follows the ramp shape; the detuning is the tuning model
    evaluated along it.
    """
    t, u = _edge_samples(spec, edge, n_steps)
    detuning = tuning.detuning(u)
    return PulseWaveform(t, u, detuning, sample_period=float(t[1] - t[0]))


def plan_edge_steps(
    spec: RampSpec, tuning: TuningModel, omega0: float, steps_per_period: int = 800
) -> int:
    """Integration step count giving >= steps_per_period per shortest period.

    The shortest dynamical period is 2*pi over the largest instantaneous
    generalized precession rate sqrt(Delta^2 + omega0^2). Correction
    harmonics can push the voltage outside the endpoint interval, so the
    probe samples the actual shaped edges, with a small margin absorbing
    the probe's own discretization.
    """
    delta_sq_max = 0.0
    for edge in ("leading", "trailing"):
        probe = build_edge_waveform(spec, tuning, edge, 128)
        delta_sq_max = max(delta_sq_max, float(np.max(probe.detuning**2)))
    w_max = math.sqrt(delta_sq_max + omega0**2)
    t_min = TWO_PI / w_max
    n = int(math.ceil(1.05 * spec.edge_duration / t_min * steps_per_period))
    return max(n, MIN_SAMPLES_PER_HARMONIC)


def build_sequence_waveform(
    spec: RampSpec, tuning: TuningModel, sample_period: float, margin: float = 0.0
) -> PulseWaveform:
    """Full pulse U(t) including plateaus, for inspection and export."""
    if sample_period <= 0.0:
        raise ConfigurationError("sample period must be positive")
    t = np.arange(spec.t0 - margin, spec.tr + margin + 0.5 * sample_period, sample_period)
    shaped = spec if spec.kind == "corrected" else replace(
        spec, c=0.0, d=0.0, c_trail=0.0, d_trail=0.0, kind="soft"
    )
    u = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti <= spec.t0:
            u[i] = spec.u_initial
        elif ti < spec.ts:
            g = corrected_ramp(shaped, ti) if spec.kind == "corrected" else soft_ramp(shaped, ti)
            u[i] = spec.u_initial + spec.delta_u * g
        elif ti <= spec.tf:
            u[i] = spec.u_final
        elif ti < spec.tr:
            u[i] = spec.u_final - spec.delta_u_bar * trailing_edge(shaped, ti)
        else:
            u[i] = spec.u_readout
    return PulseWaveform(t, u, tuning.detuning(u), sample_period=sample_period)


@dataclass(frozen=True)
class FilterModel:
    """First-order low-pass line model applied to the programmed voltage.

    passband_gain_db is the flat insertion loss, corner_hz the -3 dB point
    (relative to the passband). Off by default in every scenario.
    """

    passband_gain_db: float = -0.4
    corner_hz: float = 1.0e5

    def __post_init__(self):
        if self.corner_hz <= 0.0:
            raise ConfigurationError("filter corner frequency must be positive")

    @property
    def passband_gain(self) -> float:
        return 10.0 ** (self.passband_gain_db / 20.0)

    def magnitude(self, frequency_hz: float) -> float:
        """Analog amplitude response at a frequency (includes passband loss)."""
        return self.passband_gain / math.hypot(1.0, frequency_hz / self.corner_hz)


def filter_signal(values, sample_period: float, filt: FilterModel) -> np.ndarray:
    """Run one signal through the first-order low pass, time domain.

    The filter starts in steady state with the first sample, so a constant
    input maps to gain*input exactly from sample 0. Linear by construction.
    """
    x = np.asarray(values, dtype=float)
    alpha = 1.0 - math.exp(-TWO_PI * filt.corner_hz * sample_period)
    g = filt.passband_gain
    zi = np.array([(1.0 - alpha) * g * x[0]])
    y, _ = lfilter([alpha * g], [1.0, -(1.0 - alpha)], x, zi=zi)
    return y


def apply_bandwidth_filter(
    waveform: PulseWaveform, filt: FilterModel, tuning: TuningModel | None = None
) -> PulseWaveform:
    """Filter the voltage channel; recompute or filter the detuning channel.

    With a tuning model the detuning is re-derived from the filtered voltage
    (the physical picture); without one, the detuning array is filtered
    directly, which keeps the operation exactly linear per channel.
    """
    voltage = filter_signal(waveform.voltage, waveform.sample_period, filt)
    if tuning is not None:
        detuning = tuning.detuning(voltage)
    else:
        detuning = filter_signal(waveform.detuning, waveform.sample_period, filt)
    return PulseWaveform(waveform.time, voltage, detuning, waveform.sample_period)


@dataclass(frozen=True)
class CorrectionResult:
    """Output of the correction-coefficient search for one edge."""

    c: float
    d: float
    infidelity: float
    soft_infidelity: float
    warning: str | None = None


def edge_infidelity(
    system,
    spec: RampSpec,
    tuning: TuningModel,
    edge: str,
    steps_per_period: int = 800,
) -> float:
    """Leakage 1 - |<target|U_edge|start>|^2 of one edge, damping off.

    Start and target are both the in-plane mode: a perfect edge acts as an
    identity on the mode basis (up to phases), which is what preserves the
    sensing superposition at the crossing.
    """
    from . import dynamics

    n_steps = plan_edge_steps(spec, tuning, system.omega0_true, steps_per_period)
    waveform = build_edge_waveform(spec, tuning, edge, n_steps)
    lossless = replace(system, gamma=0.0)
    kmat = dynamics.edge_propagator(waveform, lossless)
    amp_ip = kmat[1, 1]  # start (0,1), project back on (0,1)
    return float(1.0 - abs(amp_ip) ** 2)


def optimize_correction(
    system,
    spec: RampSpec,
    tuning: TuningModel,
    edge: str,
    grid_points: int = 5,
    steps_per_period: int = 200,
) -> CorrectionResult:
    """Find first-harmonic coefficients minimizing end-of-edge leakage.

    Coarse grid over the box |c|, |d| <= 1 seeds a Nelder-Mead refinement;
    the soft ramp (0, 0) is always among the candidates, so the optimized
    edge never does worse than the soft one. Results above infidelity 0.2
    carry a warning (value still returned).

    The objective is evaluated against the splitting stored in `system`:
    pass the current prior-based parameters, not the hidden truth, to mimic
    calibrating against one's best knowledge.
    """
    from . import dynamics

    base = replace(spec, kind="corrected")
    lossless = replace(system, gamma=0.0)

    def infidelity(cd) -> float:
        c, d = cd
        if abs(c) > CORRECTION_BOUND or abs(d) > CORRECTION_BOUND:
            return 1.0 + (abs(c) + abs(d))
        if edge == "leading":
            trial = replace(base, c=c, d=d)
        else:
            trial = replace(base, c_trail=c, d_trail=d)
        # step count re-planned per candidate: large harmonics raise the
        # peak detuning and with it the integration-rate floor
        n_steps = plan_edge_steps(trial, tuning, system.omega0_true, steps_per_period)
        waveform = build_edge_waveform(trial, tuning, edge, n_steps)
        kmat = dynamics.edge_propagator(waveform, lossless)
        return float(1.0 - abs(kmat[1, 1]) ** 2)

    grid = np.linspace(-CORRECTION_BOUND, CORRECTION_BOUND, grid_points)
    if 0.0 not in grid:
        grid = np.sort(np.append(grid, 0.0))
    soft_inf = infidelity((0.0, 0.0))
    best_cd, best_val = (0.0, 0.0), soft_inf
    for c in grid:
        for d in grid:
            val = infidelity((c, d))
            if val < best_val:
                best_cd, best_val = (float(c), float(d)), val

    result = minimize(
        infidelity,
        np.array(best_cd),
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 600},
    )
    if result.fun <= best_val:
        best_cd, best_val = (float(result.x[0]), float(result.x[1])), float(result.fun)

    warning = None
    if best_val > STAGNATION_INFIDELITY:
        warning = (
            f"correction search stagnated at infidelity {best_val:.3g}; "
            "edge remains strongly non-adiabatic"
        )
    return CorrectionResult(
        c=best_cd[0],
        d=best_cd[1],
        infidelity=best_val,
        soft_infidelity=soft_inf,
        warning=warning,
    )
