"""Two-mode propagation, free evolution, dephasing, and ringdown readout."""
import math

import numpy as np
import pytest
from scipy.integrate import simpson

import iaspec as ia

from conftest import TWO_PI

OMEGA0 = TWO_PI * 42650.0
PARAMS = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0)


def const_waveform(delta: float, duration: float, n_steps: int) -> ia.PulseWaveform:
    t = np.linspace(0.0, duration, 2 * n_steps + 1)
    d = np.full_like(t, delta)
    return ia.PulseWaveform(t, np.zeros_like(t), d, sample_period=float(t[1] - t[0]))


def shaped_waveform(n_steps: int = 3000, duration: float = 30e-6):
    t = np.linspace(0.0, duration, 2 * n_steps + 1)
    x = t / t[-1]
    delta = 10 * OMEGA0 * (1 - x) ** 2 * np.cos(3 * x) + 0.5 * OMEGA0 * np.sin(7 * x)
    return ia.PulseWaveform(t, np.zeros_like(t), delta,
                            sample_period=float(t[1] - t[0]))


def test_system_params_validation():
    with pytest.raises(ia.DomainError):
        ia.SystemParams(omega0_true=0.0, delta0=1.0)
    with pytest.raises(ia.DomainError, match="initialization detuning too small"):
        ia.SystemParams(omega0_true=OMEGA0, delta0=5 * OMEGA0)
    with pytest.raises(ia.DomainError):
        ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=-1.0)
    with pytest.raises(ia.DomainError):
        ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, dephasing_time=0.0)
    with pytest.raises(ia.DomainError):
        ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, noise_std=-0.1)
    with pytest.raises(ia.DomainError):
        ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, repeats=0)


def test_mode_state_rejects_unnormalized_amplitudes():
    with pytest.raises(ia.DomainError, match="norm"):
        ia.ModeState(1.2 + 0j, 0.9 + 0j)
    assert ia.ModeState.in_plane().population_ip == 1.0
    assert ia.ModeState.out_of_plane().population_oop == 1.0


def test_detuned_exchange_follows_the_closed_form():
    # Constant detuning: population transfer is sinusoidal at the
    # generalized frequency with visibility (splitting/generalized)^2.
    delta = 3.0 * OMEGA0
    w_gen = math.hypot(delta, OMEGA0)
    duration = 3 * TWO_PI / w_gen
    wf = const_waveform(delta, duration, 1200)
    record = ia.evolve_trajectory(ia.ModeState.in_plane(), wf, PARAMS)
    visibility = OMEGA0**2 / w_gen**2
    expected = visibility * np.sin(0.5 * w_gen * record.time) ** 2
    assert np.max(np.abs(record.population_oop - expected)) < 1e-9


def test_resonant_full_and_half_period_exchange():
    full = ia.evolve(ia.ModeState.in_plane(),
                     const_waveform(0.0, TWO_PI / OMEGA0, 400), PARAMS)
    assert full.population_ip == pytest.approx(1.0, abs=1e-9)
    assert full.population_oop < 1e-9
    half = ia.evolve(ia.ModeState.in_plane(),
                     const_waveform(0.0, math.pi / OMEGA0, 200), PARAMS)
    assert half.population_oop == pytest.approx(1.0, abs=1e-9)


def test_integrator_is_fourth_order():
    delta = 3.0 * OMEGA0
    w_gen = math.hypot(delta, OMEGA0)
    duration = 3 * TWO_PI / w_gen
    c, s = math.cos(0.5 * w_gen * duration), math.sin(0.5 * w_gen * duration)
    u = np.array([
        [c - 1j * s * delta / w_gen, -1j * s * OMEGA0 / w_gen],
        [-1j * s * OMEGA0 / w_gen, c + 1j * s * delta / w_gen],
    ])
    exact = u @ np.array([0.0, 1.0], dtype=complex)
    errors = []
    for n in (600, 1200):
        final = ia.evolve(ia.ModeState.in_plane(), const_waveform(delta, duration, n),
                          PARAMS)
        errors.append(np.linalg.norm(final.vector() - exact))
    assert 10.0 < errors[0] / errors[1] < 22.0


def test_time_reversal_with_conjugation_returns_the_start():
    wf = shaped_waveform()
    wf_rev = ia.PulseWaveform(wf.time, wf.voltage, wf.detuning[::-1].copy(),
                              sample_period=wf.sample_period)
    psi0 = ia.ModeState.in_plane()
    mid = ia.evolve(psi0, wf, PARAMS)
    mid_conj = ia.ModeState(mid.a_oop.conjugate(), mid.a_ip.conjugate())
    back = ia.evolve(mid_conj, wf_rev, PARAMS)
    assert np.linalg.norm(back.vector() - np.conj(psi0.vector())) < 1e-8


def test_undamped_evolution_preserves_the_norm():
    final = ia.evolve(ia.ModeState.in_plane(), shaped_waveform(), PARAMS)
    assert abs(final.norm() - 1.0) < 1e-9


def test_damped_norm_decreases_monotonically():
    damped = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=800.0)
    record = ia.evolve_trajectory(ia.ModeState.in_plane(), shaped_waveform(), damped)
    norms = np.sqrt(record.population_oop + record.population_ip)
    assert np.all(np.diff(norms) <= 1e-10)


def test_diagonal_phase_accumulates_the_detuning_integral():
    # With a negligible splitting the in-plane amplitude only picks up
    # the phase (1/2) * integral of the detuning.
    tiny = ia.SystemParams(omega0_true=1e-4, delta0=1e-2)
    t = np.linspace(0.0, 30e-6, 2 * 3000 + 1)
    x = t / t[-1]
    delta = 2 * OMEGA0 * (0.5 + 0.4 * np.sin(5 * x))
    wf = ia.PulseWaveform(t, np.zeros_like(t), delta, sample_period=float(t[1] - t[0]))
    final = ia.evolve(ia.ModeState.in_plane(), wf, tiny)
    expected_phase = 0.5 * simpson(delta, x=t)
    dphi = (np.angle(final.a_ip) - expected_phase + math.pi) % TWO_PI - math.pi
    assert abs(dphi) < 1e-9
    assert abs(final.population_ip - 1.0) < 1e-9


def test_trajectory_final_state_matches_direct_evolution():
    wf = shaped_waveform()
    direct = ia.evolve(ia.ModeState.in_plane(), wf, PARAMS).vector()
    tracked = ia.evolve_trajectory(ia.ModeState.in_plane(), wf, PARAMS)
    assert np.linalg.norm(tracked.final_state.vector() - direct) < 1e-12


def test_free_evolution_exchange_periods():
    full = ia.free_evolution(ia.ModeState.in_plane(), TWO_PI / OMEGA0, PARAMS)
    overlap = abs(np.vdot(ia.ModeState.in_plane().vector(), full.vector()))
    assert overlap == pytest.approx(1.0, abs=1e-12)
    half = ia.free_evolution(ia.ModeState.in_plane(), math.pi / OMEGA0, PARAMS)
    assert half.population_oop == pytest.approx(1.0, abs=1e-12)


def test_dephasing_envelope_decays_at_the_stated_rate():
    t_d = 50e-6
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0,
                             dephasing_time=t_d)
    waits = np.array([1, 2, 3, 4]) * TWO_PI / OMEGA0
    envelope = []
    for k, t_w in enumerate(waits):
        rng = np.random.default_rng(1000 + k)
        values = [
            ia.free_evolution(ia.ModeState.in_plane(), float(t_w), params, rng=rng)
            .population_oop
            for _ in range(3000)
        ]
        envelope.append(1.0 - 2.0 * float(np.mean(values)))
    slope = np.polyfit(waits, np.log(envelope), 1)[0]
    fitted_t_d = -1.0 / slope
    assert abs(fitted_t_d - t_d) / t_d < 0.15


def test_noiseless_ringdown_recovers_amplitude_and_tau():
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=500.0)
    record = ia.simulate_ringdown(0.8, params)
    assert record.fitted_amplitude == pytest.approx(0.8, rel=1e-9)
    assert record.fitted_tau == pytest.approx(1.0 / 500.0, rel=1e-9)


def test_ringdown_extrapolates_back_to_the_start_time():
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=500.0)
    for start in (0.0, 1e-3, 3e-3):
        amplitude_at_readout = 0.9 * math.exp(-start * 500.0)
        record = ia.simulate_ringdown(amplitude_at_readout, params, start_time=start)
        assert record.fitted_amplitude == pytest.approx(0.9, rel=1e-6)


def test_noisy_ringdown_statistics():
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=500.0,
                             noise_std=0.01)
    values = [
        ia.simulate_ringdown(0.8, params, rng=np.random.default_rng(500 + r))
        .fitted_amplitude
        for r in range(30)
    ]
    assert float(np.mean(values)) == pytest.approx(0.8, abs=0.01)
    assert 0.0 < float(np.std(values)) < 0.02


def test_ringdown_raises_when_signal_is_buried():
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=500.0,
                             noise_std=0.2)
    with pytest.raises(ia.ReadoutError):
        ia.simulate_ringdown(0.001, params, rng=np.random.default_rng(0))


def test_ringdown_input_validation():
    params = ia.SystemParams(omega0_true=OMEGA0, delta0=20 * OMEGA0, gamma=500.0)
    with pytest.raises(ia.DomainError):
        ia.simulate_ringdown(1.5, params)
    with pytest.raises(ia.DomainError):
        ia.simulate_ringdown(0.5, params, start_time=-1.0)
    with pytest.raises(ia.DomainError):
        ia.simulate_ringdown(0.5, params, n_samples=3)
    with pytest.raises(ia.DomainError):
        ia.simulate_ringdown(0.5, params, duration=0.0)


def test_waveform_step_size_is_validated():
    t = np.linspace(0.0, 1e-2, 21)
    coarse = ia.PulseWaveform(t, np.zeros_like(t), np.full_like(t, 30 * OMEGA0),
                              sample_period=float(t[1] - t[0]))
    with pytest.raises(ia.ConfigurationError, match="integration step"):
        ia.evolve(ia.ModeState.in_plane(), coarse, PARAMS)


def test_waveform_needs_odd_sample_count():
    t = np.linspace(0.0, 1e-5, 400)
    wf = ia.PulseWaveform(t, np.zeros_like(t), np.zeros_like(t),
                          sample_period=float(t[1] - t[0]))
    with pytest.raises(ia.ConfigurationError, match="odd sample count"):
        ia.evolve(ia.ModeState.in_plane(), wf, PARAMS)
