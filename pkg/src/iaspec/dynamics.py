"""Two-level dynamics of the coupled mode pair near its avoided crossing.

The complex mode amplitudes a = (a_oop, a_ip) obey

    i da/dt = [H(t) - i (gamma/2) I] a,
    H(t) = Delta(t)/2 sigma_z + Omega0/2 sigma_x,

with Delta(t) the instantaneous bare-mode detuning along the voltage pulse
and Omega0 the (true) minimal splitting. Edges are integrated with
fixed-step classical 4th-order Runge-Kutta; the wait at the crossing and the
ringdown readout have closed forms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, ReadoutError
from .pulse import PulseWaveform

TWO_PI = 2.0 * math.pi

# Hard floor on integration steps per shortest dynamical period.
MIN_STEPS_PER_PERIOD = 200

# Initialization must be strongly detuned for the mode basis to be (nearly)
# the energy basis; the sequence contract requires at least this ratio.
MIN_DETUNING_RATIO = 10.0

# Readout samples below 3 sigma of the measurement noise are excluded from
# the ringdown fit.
NOISE_FLOOR_SIGMAS = 3.0

DEFAULT_RINGDOWN_SAMPLES = 50


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of one simulated system.

    Parameters
    ----------
    omega0_true : float
        True minimal splitting (rad/s); the estimation target.
    delta0 : float
        Initialization detuning (rad/s); must be >= 10x the splitting.
    gamma : float
        Mode energy decay rate (1/s); amplitudes damp at gamma/2.
    dephasing_time : float
        Coherence time T_d (s) of the splitting during the wait;
        math.inf switches dephasing off.
    noise_std : float
        Std of the readout signal noise per ringdown sample.
    repeats : int
        Monte-Carlo repetitions per trace point.
    """

    omega0_true: float
    delta0: float
    gamma: float = 0.0
    dephasing_time: float = math.inf
    noise_std: float = 0.0
    repeats: int = 30

    def __post_init__(self):
        if self.omega0_true <= 0.0:
            raise DomainError("splitting must be positive")
        if self.delta0 < MIN_DETUNING_RATIO * self.omega0_true:
            raise DomainError(
                "initialization detuning too small: "
                f"delta0/omega0 = {self.delta0 / self.omega0_true:.3g} < {MIN_DETUNING_RATIO:g}"
            )
        if self.gamma < 0.0:
            raise DomainError("energy decay rate must be non-negative")
        if not self.dephasing_time > 0.0:
            raise DomainError("dephasing time must be positive (math.inf allowed)")
        if self.noise_std < 0.0:
            raise DomainError("noise std must be non-negative")
        if self.repeats < 1:
            raise DomainError("repeats must be at least 1")


@dataclass
class ModeState:
    """Complex amplitude pair (out-of-plane, in-plane); norm <= 1."""

    a_oop: complex
    a_ip: complex

    def __post_init__(self):
        if self.norm() > 1.0 + 1e-9:
            raise DomainError(f"state norm {self.norm():.12g} exceeds 1")

    @classmethod
    def in_plane(cls) -> "ModeState":
        return cls(0.0 + 0.0j, 1.0 + 0.0j)

    @classmethod
    def out_of_plane(cls) -> "ModeState":
        return cls(1.0 + 0.0j, 0.0 + 0.0j)

    def vector(self) -> np.ndarray:
        return np.array([self.a_oop, self.a_ip], dtype=complex)

    def norm(self) -> float:
        return math.sqrt(abs(self.a_oop) ** 2 + abs(self.a_ip) ** 2)

    @property
    def population_oop(self) -> float:
        return abs(self.a_oop) ** 2

    @property
    def population_ip(self) -> float:
        return abs(self.a_ip) ** 2


def _drift_matrices(delta, omega0: float, gamma: float) -> np.ndarray:
    """Stack of A(t) = -i H(t) - (gamma/2) I for each detuning sample."""
    delta = np.asarray(delta, dtype=float)
    n = delta.shape[0]
    a = np.empty((n, 2, 2), dtype=complex)
    a[:, 0, 0] = -0.5j * delta - 0.5 * gamma
    a[:, 1, 1] = +0.5j * delta - 0.5 * gamma
    a[:, 0, 1] = -0.5j * omega0
    a[:, 1, 0] = -0.5j * omega0
    return a


def _validate_step(waveform: PulseWaveform, params: SystemParams) -> float:
    dt = 2.0 * waveform.sample_period
    w_max = math.sqrt(float(np.max(waveform.detuning**2)) + params.omega0_true**2)
    shortest_period = TWO_PI / w_max
    if dt > shortest_period / MIN_STEPS_PER_PERIOD * (1.0 + 1e-12):
        raise ConfigurationError(
            f"integration step {dt:.3g} s exceeds 1/{MIN_STEPS_PER_PERIOD} of the "
            f"shortest dynamical period {shortest_period:.3g} s"
        )
    if len(waveform.time) % 2 == 0:
        raise ConfigurationError("waveform needs an odd sample count (step midpoints)")
    return dt


def _step_propagators(waveform: PulseWaveform, params: SystemParams) -> np.ndarray:
    """Per-step RK4 propagators R_k over pairs of waveform samples.

    For the linear system da/dt = A(t) a the classical RK4 update is itself
    a matrix polynomial in A evaluated at the step start, midpoint and end,
    so applying R_k to the state is bit-for-bit the RK4 state update.
    """
    dt = _validate_step(waveform, params)
    a_all = _drift_matrices(waveform.detuning, params.omega0_true, params.gamma)
    a0 = a_all[0:-1:2]
    am = a_all[1::2]
    a1 = a_all[2::2]
    eye = np.eye(2, dtype=complex)
    m1 = a0
    m2 = am @ (eye + (0.5 * dt) * m1)
    m3 = am @ (eye + (0.5 * dt) * m2)
    m4 = a1 @ (eye + dt * m3)
    return eye + (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)


def edge_propagator(waveform: PulseWaveform, params: SystemParams) -> np.ndarray:
    """Total propagator of one edge: ordered product of the RK4 steps.

    The product is reduced pairwise (later times multiply from the left),
    which costs O(log n) matmul passes over the step stack.
    """
    steps = _step_propagators(waveform, params)
    while steps.shape[0] > 1:
        n = steps.shape[0]
        if n % 2 == 1:
            tail = steps[-1]
            merged = steps[1:-1:2] @ steps[0:-1:2]
            steps = np.concatenate([merged, tail[None, :, :]], axis=0)
        else:
            steps = steps[1::2] @ steps[0::2]
    return steps[0]


def evolve(state: ModeState, waveform: PulseWaveform, params: SystemParams) -> ModeState:
    """Propagate a state through one sampled edge (fixed-step RK4).

    Raises ConfigurationError before integrating if the waveform sampling
    violates the steps-per-period floor.
    """
    a = edge_propagator(waveform, params) @ state.vector()
    return ModeState(complex(a[0]), complex(a[1]))


@dataclass
class TrajectoryRecord:
    """Sampled populations and coherence along one edge integration."""

    time: np.ndarray
    population_oop: np.ndarray
    population_ip: np.ndarray
    coherence_re: np.ndarray
    coherence_im: np.ndarray
    final_state: ModeState = field(repr=False, default=None)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "p_oop", "p_ip", "coherence_re", "coherence_im"])
            rows = zip(
                self.time,
                self.population_oop,
                self.population_ip,
                self.coherence_re,
                self.coherence_im,
            )
            for t, po, pi_, cr, ci in rows:
                writer.writerow([f"{t:.12g}", f"{po:.12g}", f"{pi_:.12g}", f"{cr:.12g}", f"{ci:.12g}"])


def evolve_trajectory(
    state: ModeState, waveform: PulseWaveform, params: SystemParams, stride: int = 1
) -> TrajectoryRecord:
    """Plain sequential RK4 loop recording every `stride`-th step.

    Slower than `evolve` but independent of the batched propagator
    construction; used for debugging dumps and as a cross-check.
    """
    dt = _validate_step(waveform, params)
    delta = waveform.detuning
    gamma = params.gamma
    omega0 = params.omega0_true

    def deriv(idx, vec):
        d = delta[idx]
        return np.array(
            [
                (-0.5j * d - 0.5 * gamma) * vec[0] - 0.5j * omega0 * vec[1],
                (+0.5j * d - 0.5 * gamma) * vec[1] - 0.5j * omega0 * vec[0],
            ]
        )

    a = state.vector()
    n_steps = (len(waveform.time) - 1) // 2
    times = [waveform.time[0]]
    samples = [a.copy()]
    for k in range(n_steps):
        i0 = 2 * k
        k1 = deriv(i0, a)
        k2 = deriv(i0 + 1, a + 0.5 * dt * k1)
        k3 = deriv(i0 + 1, a + 0.5 * dt * k2)
        k4 = deriv(i0 + 2, a + dt * k3)
        a = a + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (k + 1) % stride == 0 or k == n_steps - 1:
            times.append(waveform.time[i0 + 2])
            samples.append(a.copy())
    arr = np.array(samples)
    coherence = arr[:, 0] * np.conj(arr[:, 1])
    return TrajectoryRecord(
        time=np.array(times),
        population_oop=np.abs(arr[:, 0]) ** 2,
        population_ip=np.abs(arr[:, 1]) ** 2,
        coherence_re=coherence.real,
        coherence_im=coherence.imag,
        final_state=ModeState(complex(arr[-1, 0]), complex(arr[-1, 1])),
    )


def free_evolution(
    state: ModeState, t_w: float, params: SystemParams, rng: np.random.Generator | None = None
) -> ModeState:
    """Wait at the crossing (Delta = 0) for t_w seconds.

    The exchange rotation around the normal-mode axis has the closed form
    exp(-i chi/2 sigma_x) with chi = omega0 t_w; amplitudes damp by
    exp(-gamma t_w / 2). Dephasing between the normal modes is modeled as a
    Gaussian random phase kick on chi with variance 2 t_w / T_d per shot,
    whose ensemble average reproduces the exp(-t_w/T_d) coherence decay.
    Deterministic callers (rng None) get the kick-free rotation.
    """
    if t_w < 0.0:
        raise DomainError("wait time must be non-negative")
    chi = params.omega0_true * t_w
    if rng is not None and math.isfinite(params.dephasing_time):
        chi += rng.normal(0.0, math.sqrt(2.0 * t_w / params.dephasing_time))
    damp = math.exp(-0.5 * params.gamma * t_w)
    cos, sin = math.cos(0.5 * chi), math.sin(0.5 * chi)
    a_oop = damp * (cos * state.a_oop - 1.0j * sin * state.a_ip)
    a_ip = damp * (cos * state.a_ip - 1.0j * sin * state.a_oop)
    return ModeState(a_oop, a_ip)


@dataclass
class RingdownRecord:
    """One readout: sampled decay envelope plus its exponential fit.

    `signal` is the demodulated energy-proportional envelope, which decays
    with time constant 1/gamma; `fitted_amplitude` is the fit extrapolated
    back to the protocol origin t = 0, compensating the damping accumulated
    during the whole sequence.
    """

    time: np.ndarray
    signal: np.ndarray
    fitted_amplitude: float
    fitted_tau: float
    n_used: int
    start_time: float

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "signal"])
            for t, s in zip(self.time, self.signal):
                writer.writerow([f"{t:.12g}", f"{s:.12g}"])


def simulate_ringdown(
    amplitude: float,
    params: SystemParams,
    duration: float | None = None,
    rng: np.random.Generator | None = None,
    start_time: float = 0.0,
    n_samples: int = DEFAULT_RINGDOWN_SAMPLES,
) -> RingdownRecord:
    """Simulate and fit one ringdown readout.

    Generates amplitude * exp(-t/tau) with tau = 1/gamma starting at
    `start_time` on the protocol clock, adds Gaussian noise of std
    params.noise_std per sample, excludes samples below the noise floor
    (3 sigma), least-squares fits the log envelope and extrapolates to the
    protocol origin.

    Raises
    ------
    ReadoutError
        Fewer than two noisy samples survive above the noise floor.
    """
    if amplitude < 0.0 or amplitude > 1.0 + 1e-9:
        raise DomainError("readout amplitude must lie in [0, 1]")
    if start_time < 0.0:
        raise DomainError("start time must be non-negative")
    if n_samples < 4:
        raise DomainError("need at least 4 ringdown samples")
    tau = 1.0 / params.gamma if params.gamma > 0.0 else math.inf
    if duration is None:
        duration = tau if math.isfinite(tau) else 1e-3
    if duration <= 0.0:
        raise DomainError("ringdown duration must be positive")

    t_local = np.linspace(0.0, duration, n_samples)
    decay = np.exp(-t_local / tau) if math.isfinite(tau) else np.ones_like(t_local)
    signal = amplitude * decay
    sigma = params.noise_std
    if sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        signal = signal + rng.normal(0.0, sigma, size=signal.shape)

    t_protocol = start_time + t_local
    floor = NOISE_FLOOR_SIGMAS * sigma
    mask = signal > floor
    if np.count_nonzero(mask) < 2:
        if sigma == 0.0:
            # Exact noiseless model: the fit is analytic (covers amplitude 0).
            boost = math.exp(start_time / tau) if math.isfinite(tau) else 1.0
            return RingdownRecord(
                time=t_protocol,
                signal=signal,
                fitted_amplitude=amplitude * boost,
                fitted_tau=tau,
                n_used=n_samples,
                start_time=start_time,
            )
        raise ReadoutError(
            f"ringdown lost below the noise floor ({np.count_nonzero(mask)} usable samples)"
        )

    t_fit = t_protocol[mask]
    y_fit = np.log(signal[mask])
    t_mean = t_fit.mean()
    y_mean = y_fit.mean()
    denom = float(np.sum((t_fit - t_mean) ** 2))
    if denom == 0.0:
        raise ReadoutError("ringdown samples degenerate in time")
    slope = float(np.sum((t_fit - t_mean) * (y_fit - y_mean))) / denom
    intercept = y_mean - slope * t_mean
    fitted_tau = -1.0 / slope if slope < 0.0 else math.inf
    return RingdownRecord(
        time=t_protocol,
        signal=signal,
        fitted_amplitude=float(math.exp(intercept)),
        fitted_tau=fitted_tau,
        n_used=int(np.count_nonzero(mask)),
        start_time=start_time,
    )
