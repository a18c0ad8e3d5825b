"""Five-step interference sequence and trace acquisition.

One sequence: (i) initialize the in-plane mode far from the crossing,
(ii) sweep the voltage to the crossing (leading edge), (iii) wait t_w while
the normal modes beat, (iv) sweep back out (trailing edge), (v) read the
in-plane envelope out of a ringdown and extrapolate the damping away. A
trace samples the return probability on a uniform t_w grid spanning a fixed
number of expected fringes of the prior splitting.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dynamics, pulse
from .dynamics import ModeState, SystemParams
from .errors import (
    ConfigurationError,
    DomainError,
    ReadoutError,
    TraceError,
    UndefinedVisibilityError,
)
from .model import TuningModel
from .pulse import CorrectionResult, FilterModel, RampSpec

TWO_PI = 2.0 * math.pi

# A trace with more than this fraction of grid points unreadable is rejected.
MAX_MISSING_FRACTION = 0.2

# Fraction of points entering each robust extremum of the visibility.
VISIBILITY_TAIL_FRACTION = 0.05


@dataclass(frozen=True)
class RamseyConfig:
    """Everything needed to acquire one trace.

    The ramp is a zero-wait template; each grid point stretches its plateau
    to that point's wait time. `prior` (rad/s) fixes both the grid span
    2*pi*fringes/prior and the sample spacing.
    """

    fringes: int
    samples_per_fringe: int
    prior: float
    ramp: RampSpec
    system: SystemParams
    tuning: TuningModel
    steps_per_period: int = 800
    ringdown_duration: float | None = None
    ringdown_samples: int = dynamics.DEFAULT_RINGDOWN_SAMPLES
    bandwidth_filter: FilterModel | None = None

    def __post_init__(self):
        if self.fringes < 2:
            raise ConfigurationError("need at least 2 expected fringes")
        if self.samples_per_fringe < 2:
            raise ConfigurationError("need at least 2 samples per fringe")
        if self.prior <= 0.0:
            raise ConfigurationError("prior splitting must be positive")

    def wait_grid(self) -> np.ndarray:
        """Uniform t_w grid on [0, 2*pi*fringes/prior], fringes*spf+1 points."""
        t_max = TWO_PI * self.fringes / self.prior
        return np.linspace(0.0, t_max, self.fringes * self.samples_per_fringe + 1)

    @property
    def sample_period(self) -> float:
        return TWO_PI / (self.prior * self.samples_per_fringe)


@dataclass
class RamseyTrace:
    """Acquired return-probability trace with per-repeat detail."""

    t_w: np.ndarray
    p_return: np.ndarray
    p_std: np.ndarray
    per_repeat: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_w = np.asarray(self.t_w, dtype=float)
        self.p_return = np.asarray(self.p_return, dtype=float)
        self.p_std = np.asarray(self.p_std, dtype=float)

    def __len__(self):
        return len(self.t_w)

    @property
    def sample_period(self) -> float:
        return float(self.t_w[1] - self.t_w[0])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_w_s", "p_return", "p_std"])
            for t, p, s in zip(self.t_w, self.p_return, self.p_std):
                writer.writerow([f"{t:.12g}", f"{p:.12g}", f"{s:.12g}"])

    def write_sidecar(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata, sort_keys=True, indent=2))


def _edge_propagators(config: RamseyConfig):
    """(K_lead, K_trail, edge_time). Identity pair for ideal edges."""
    if config.ramp.kind == "ideal":
        eye = np.eye(2, dtype=complex)
        return eye, eye, 0.0
    n_steps = pulse.plan_edge_steps(
        config.ramp, config.tuning, config.system.omega0_true, config.steps_per_period
    )
    template = config.ramp.with_wait(0.0)
    kmats = []
    for edge in ("leading", "trailing"):
        waveform = pulse.build_edge_waveform(template, config.tuning, edge, n_steps)
        if config.bandwidth_filter is not None:
            waveform = pulse.apply_bandwidth_filter(
                waveform, config.bandwidth_filter, config.tuning
            )
        kmats.append(dynamics.edge_propagator(waveform, config.system))
    return kmats[0], kmats[1], config.ramp.edge_duration


def _measure_points(config: RamseyConfig, t_w_values: np.ndarray, seed: int) -> np.ndarray:
    """Raw extrapolated envelopes, shape (n_points, repeats); NaN = lost readout.

    Every (point, repeat) pair draws from its own seed stream, so points are
    independent and the acquisition order cannot change any value.
    """
    k_lead, k_trail, edge_time = _edge_propagators(config)
    params = config.system
    a_cross = k_lead @ ModeState.in_plane().vector()
    out = np.full((len(t_w_values), params.repeats), np.nan)
    for i, t_w in enumerate(t_w_values):
        start_time = 2.0 * edge_time + t_w
        for r in range(params.repeats):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(i, r))
            )
            chi = params.omega0_true * t_w
            if math.isfinite(params.dephasing_time) and t_w > 0.0:
                chi += rng.normal(0.0, math.sqrt(2.0 * t_w / params.dephasing_time))
            damp = math.exp(-0.5 * params.gamma * t_w)
            cos, sin = math.cos(0.5 * chi), math.sin(0.5 * chi)
            mid = damp * np.array(
                [
                    cos * a_cross[0] - 1.0j * sin * a_cross[1],
                    cos * a_cross[1] - 1.0j * sin * a_cross[0],
                ]
            )
            a_fin = k_trail @ mid
            envelope = min(abs(a_fin[1]) ** 2, 1.0)
            try:
                record = dynamics.simulate_ringdown(
                    envelope,
                    params,
                    duration=config.ringdown_duration,
                    rng=rng,
                    start_time=start_time,
                    n_samples=config.ringdown_samples,
                )
            except ReadoutError:
                continue
            out[i, r] = record.fitted_amplitude
    return out


def acquire_trace(config: RamseyConfig, seed: int) -> RamseyTrace:
    """Measure the full wait-time grid, normalize, and assemble a trace.

    The t_w = 0 point of the same seed batch serves as the normalization
    reference; probabilities are clipped to [0, 1] with the clip count
    recorded in the metadata rather than silently applied. Points whose
    repeats are all lost become gaps; more than 20% gaps raise TraceError.
    """
    grid = config.wait_grid()
    raw = _measure_points(config, grid, seed)
    reference = float(np.nanmean(raw[0])) if np.any(np.isfinite(raw[0])) else math.nan
    if not math.isfinite(reference) or reference <= 0.0:
        raise TraceError("t_w = 0 reference point unreadable; cannot normalize")
    prob = raw / reference
    clipped = int(np.sum(prob[np.isfinite(prob)] > 1.0) + np.sum(prob[np.isfinite(prob)] < 0.0))
    prob = np.clip(prob, 0.0, 1.0)
    finite = np.isfinite(prob)
    counts = finite.sum(axis=1)
    point_missing = counts == 0
    if np.mean(point_missing) > MAX_MISSING_FRACTION:
        raise TraceError(
            f"{int(point_missing.sum())} of {len(grid)} points missing "
            f"(> {MAX_MISSING_FRACTION:.0%})"
        )
    filled = np.where(finite, prob, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_mean = filled.sum(axis=1) / counts
        dev = np.where(finite, prob - p_mean[:, None], 0.0)
        p_std = np.sqrt((dev**2).sum(axis=1) / np.maximum(counts - 1, 1))
    p_mean[point_missing] = np.nan
    p_std[point_missing] = np.nan
    metadata = {
        "fringes": config.fringes,
        "samples_per_fringe": config.samples_per_fringe,
        "prior_rad_s": config.prior,
        "ramp_kind": config.ramp.kind,
        "correction": [config.ramp.c, config.ramp.d, config.ramp.c_trail, config.ramp.d_trail],
        "repeats": config.system.repeats,
        "seed": int(seed),
        "reference": reference,
        "clipped_values": clipped,
        "missing_points": int(point_missing.sum()),
    }
    return RamseyTrace(grid, p_mean, p_std, per_repeat=prob, metadata=metadata)


def run_sequence(config: RamseyConfig, t_w: float, seed: int) -> float:
    """Return probability of one wait time, repeats-averaged and normalized.

    Shares the seed-batch convention with acquire_trace: index 0 of the
    batch is the t_w = 0 reference, index 1 the requested point.
    """
    if t_w < 0.0:
        raise DomainError("wait time must be non-negative")
    points = np.array([0.0, t_w])
    raw = _measure_points(config, points, seed)
    reference = float(np.nanmean(raw[0]))
    if not math.isfinite(reference) or reference <= 0.0:
        raise TraceError("t_w = 0 reference point unreadable; cannot normalize")
    value = float(np.nanmean(raw[1]))
    if not math.isfinite(value):
        raise ReadoutError("requested point unreadable in every repeat")
    return float(np.clip(value / reference, 0.0, 1.0))


def visibility(trace: RamseyTrace) -> float:
    """Robust fringe visibility (P_max - P_min) / (P_max + P_min).

    Extrema are means of the top and bottom 5% of finite points, which
    tolerates single-point outliers. A trace whose range does not exceed
    three times its mean per-point std is considered flat.
    """
    p = trace.p_return[np.isfinite(trace.p_return)]
    if len(p) < 4:
        raise UndefinedVisibilityError("too few readable points for a visibility")
    std = trace.p_std[np.isfinite(trace.p_return)]
    k = max(1, int(round(VISIBILITY_TAIL_FRACTION * len(p))))
    ordered = np.sort(p)
    p_min = float(ordered[:k].mean())
    p_max = float(ordered[-k:].mean())
    mean_std = float(np.nanmean(std)) if len(std) else 0.0
    if (p_max - p_min) <= 3.0 * mean_std:
        raise UndefinedVisibilityError(
            f"trace range {p_max - p_min:.3g} within noise (3x mean std {3 * mean_std:.3g})"
        )
    return (p_max - p_min) / (p_max + p_min)


@dataclass(frozen=True)
class SequenceDesign:
    """Scenario geometry from which per-prior configurations are derived.

    Holds what an experimenter controls (voltages, ramp family, grid
    density) plus the hidden truth of the simulated system. Edge durations
    follow the sweep-time rule edge_cycles * 2*pi/prior and therefore change
    whenever the prior is updated, as do re-optimized correction
    coefficients.
    """

    tuning: TuningModel
    u_initial: float
    u_readout: float
    omega0_true: float
    gamma: float = 0.0
    dephasing_time: float = math.inf
    noise_std: float = 0.0
    repeats: int = 30
    kind: str = "corrected"
    fringes: int = 4
    samples_per_fringe: int = 10
    edge_cycles: float = 1.0
    steps_per_period: int = 800
    optimizer_steps_per_period: int = 200
    ringdown_duration: float | None = None
    ringdown_samples: int = dynamics.DEFAULT_RINGDOWN_SAMPLES
    bandwidth_filter: FilterModel | None = None

    def __post_init__(self):
        if self.kind not in pulse.RAMP_KINDS:
            raise ConfigurationError(f"ramp kind must be one of {pulse.RAMP_KINDS}")
        if self.edge_cycles <= 0.0:
            raise ConfigurationError("edge_cycles must be positive")

    def delta0(self) -> float:
        return float(self.tuning.detuning(self.u_initial))

    def system(self) -> SystemParams:
        return SystemParams(
            omega0_true=self.omega0_true,
            delta0=self.delta0(),
            gamma=self.gamma,
            dephasing_time=self.dephasing_time,
            noise_std=self.noise_std,
            repeats=self.repeats,
        )

    def assumed_system(self, prior: float) -> SystemParams:
        """The system as the experimenter models it: splitting = prior."""
        return replace(self.system(), omega0_true=prior)

    def ramp_for(
        self,
        prior: float,
        lead: CorrectionResult | None = None,
        trail: CorrectionResult | None = None,
    ) -> RampSpec:
        """Zero-wait pulse template for the given prior splitting."""
        edge = self.edge_cycles * pulse.edge_duration_for_prior(prior)
        u_final = self.tuning.crossing_voltage(near=self.u_initial)
        return RampSpec(
            t0=0.0,
            ts=edge,
            tf=edge,
            tr=2.0 * edge,
            u_initial=self.u_initial,
            u_final=u_final,
            u_readout=self.u_readout,
            c=lead.c if lead else 0.0,
            d=lead.d if lead else 0.0,
            c_trail=trail.c if trail else 0.0,
            d_trail=trail.d if trail else 0.0,
            kind=self.kind,
        )

    def optimize_edges(self, prior: float) -> tuple[CorrectionResult, CorrectionResult]:
        """Correction pairs for both edges, tuned against the prior-based model."""
        template = self.ramp_for(prior)
        assumed = self.assumed_system(prior)
        lead = pulse.optimize_correction(
            assumed, template, self.tuning, "leading",
            steps_per_period=self.optimizer_steps_per_period,
        )
        trail = pulse.optimize_correction(
            assumed, template, self.tuning, "trailing",
            steps_per_period=self.optimizer_steps_per_period,
        )
        return lead, trail

    def config_for(
        self,
        prior: float,
        fringes: int | None = None,
        optimize: bool | None = None,
    ) -> RamseyConfig:
        """Acquisition config for one prior; re-optimizes corrected edges."""
        lead = trail = None
        if optimize is None:
            optimize = self.kind == "corrected"
        if optimize and self.kind == "corrected":
            lead, trail = self.optimize_edges(prior)
        return RamseyConfig(
            fringes=self.fringes if fringes is None else fringes,
            samples_per_fringe=self.samples_per_fringe,
            prior=prior,
            ramp=self.ramp_for(prior, lead, trail),
            system=self.system(),
            tuning=self.tuning,
            steps_per_period=self.steps_per_period,
            ringdown_duration=self.ringdown_duration,
            ringdown_samples=self.ringdown_samples,
            bandwidth_filter=self.bandwidth_filter,
        )
