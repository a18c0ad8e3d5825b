"""Ramp shapes, waveform assembly, edge corrections, and the line filter."""
import math

import numpy as np
import pytest

import iaspec as ia

from conftest import PRIOR, TRUTH, TWO_PI, make_design


@pytest.fixture(scope="module")
def soft_design(tuning):
    return make_design(tuning, kind="soft")


@pytest.fixture(scope="module")
def soft_ramp_spec(soft_design):
    return soft_design.ramp_for(PRIOR)


def test_ramp_spec_rejects_bad_time_order():
    with pytest.raises(ia.ConfigurationError, match="t0 < ts <= tf < tr"):
        ia.RampSpec(t0=0.0, ts=-1e-6, tf=1e-5, tr=2e-5,
                    u_initial=-11.5, u_final=-8.0, u_readout=-11.2)
    with pytest.raises(ia.ConfigurationError, match="t0 < ts <= tf < tr"):
        ia.RampSpec(t0=0.0, ts=1e-5, tf=5e-6, tr=2e-5,
                    u_initial=-11.5, u_final=-8.0, u_readout=-11.2)


def test_ramp_spec_requires_equal_edges():
    with pytest.raises(ia.ConfigurationError, match="equally long"):
        ia.RampSpec(t0=0.0, ts=1e-5, tf=2e-5, tr=2.5e-5,
                    u_initial=-11.5, u_final=-8.0, u_readout=-11.2)


def test_edge_duration_is_one_prior_period():
    assert ia.edge_duration_for_prior(PRIOR) == pytest.approx(
        TWO_PI / PRIOR, rel=1e-14
    )


def test_soft_edge_hits_endpoints_and_is_monotone(soft_ramp_spec):
    spec = soft_ramp_spec
    t = np.linspace(spec.t0, spec.ts, 501)
    g = ia.soft_ramp(spec, t)  # normalized shape: 0 at the start, 1 at the end
    assert g[0] == pytest.approx(0.0, abs=1e-12)
    assert g[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(g) >= -1e-12)


def test_corrected_ramp_reduces_to_soft_at_zero_coefficients(soft_ramp_spec):
    spec = soft_ramp_spec
    zero = ia.RampSpec(t0=spec.t0, ts=spec.ts, tf=spec.tf, tr=spec.tr,
                       u_initial=spec.u_initial, u_final=spec.u_final,
                       u_readout=spec.u_readout, kind="corrected")
    t = np.linspace(spec.t0, spec.ts, 301)
    assert np.max(np.abs(ia.corrected_ramp(zero, t) - ia.soft_ramp(zero, t))) == 0.0


def test_corrected_edges_pin_endpoints_for_any_coefficients(soft_ramp_spec):
    spec = soft_ramp_spec
    fancy = ia.RampSpec(t0=spec.t0, ts=spec.ts, tf=spec.tf, tr=spec.tr,
                        u_initial=spec.u_initial, u_final=spec.u_final,
                        u_readout=spec.u_readout,
                        c=0.37, d=-0.61, c_trail=0.2, d_trail=0.9, kind="corrected")
    # The harmonic corrections vanish at both ends, so the shape always
    # runs exactly 0 -> 1 whatever the coefficients.
    assert ia.corrected_ramp(fancy, fancy.t0) == pytest.approx(0.0, abs=1e-12)
    assert ia.corrected_ramp(fancy, fancy.ts) == pytest.approx(1.0, abs=1e-12)
    assert float(ia.trailing_edge(fancy, fancy.tf)) == pytest.approx(0.0, abs=1e-12)
    assert float(ia.trailing_edge(fancy, fancy.tr)) == pytest.approx(1.0, abs=1e-12)


def test_edge_waveform_snaps_endpoint_voltages(soft_ramp_spec, tuning):
    wf = ia.build_edge_waveform(soft_ramp_spec, tuning, "leading", 100)
    assert wf.voltage[0] == soft_ramp_spec.u_initial
    assert wf.voltage[-1] == soft_ramp_spec.u_final
    assert len(wf.time) == 201  # odd sample count for midpoint stepping


def test_ideal_edge_has_no_waveform(soft_ramp_spec, tuning):
    ideal = ia.RampSpec(t0=soft_ramp_spec.t0, ts=soft_ramp_spec.ts,
                        tf=soft_ramp_spec.tf, tr=soft_ramp_spec.tr,
                        u_initial=-11.5, u_final=soft_ramp_spec.u_final,
                        u_readout=-11.2, kind="ideal")
    with pytest.raises(ia.ConfigurationError, match="ideal edge has no waveform"):
        ia.build_edge_waveform(ideal, tuning, "leading", 100)


def test_sequence_waveform_structure(soft_ramp_spec, tuning):
    spec = soft_ramp_spec.with_wait(2.0e-5)
    sample_period = spec.edge_duration / 2000.0
    wf = ia.build_sequence_waveform(
        spec, tuning, sample_period=sample_period, margin=0.25 * spec.edge_duration
    )
    assert wf.voltage[0] == spec.u_initial
    assert wf.voltage[-1] == spec.u_readout
    mid = 0.5 * (spec.ts + spec.tf)
    i_mid = int(np.argmin(np.abs(wf.time - mid)))
    assert wf.voltage[i_mid] == spec.u_final  # plateau at the crossing voltage
    assert len(wf.time) % 2 == 1


def test_plan_edge_steps_resolves_fastest_scale(soft_ramp_spec, tuning):
    # Soft edges stay inside the endpoint interval, so the fastest precession
    # rate hypot(detuning, splitting) occurs at one of the plateau voltages.
    spec = soft_ramp_spec
    d_max = max(
        abs(tuning.detuning(u)) for u in (spec.u_initial, spec.u_final, spec.u_readout)
    )
    t_min = TWO_PI / math.hypot(d_max, TRUTH)
    expected = max(50, math.ceil(1.05 * spec.edge_duration / t_min * 800))
    assert ia.plan_edge_steps(spec, tuning, TRUTH) == expected
    assert ia.plan_edge_steps(spec, tuning, TRUTH, steps_per_period=1) == 50


def test_planned_steps_satisfy_the_integrator(soft_ramp_spec, tuning):
    params = ia.SystemParams(omega0_true=TRUTH, delta0=20 * TRUTH)
    n = ia.plan_edge_steps(soft_ramp_spec, tuning, TRUTH, steps_per_period=200)
    wf = ia.build_edge_waveform(soft_ramp_spec, tuning, "leading", n)
    propagator = ia.edge_propagator(wf, params)
    dev = np.max(np.abs(propagator @ propagator.conj().T - np.eye(2)))
    assert dev < 1e-9  # unitary when undamped


def test_filter_dc_gain_and_corner():
    filt = ia.FilterModel()
    assert 20.0 * math.log10(filt.magnitude(0.0)) == pytest.approx(-0.4, abs=1e-12)
    assert filt.magnitude(filt.corner_hz) / filt.passband_gain == pytest.approx(
        1.0 / math.sqrt(2.0), rel=1e-12
    )


def test_filter_passes_sequence_fundamental():
    # The slowest spectral content of a one-period edge sits well inside
    # the passband of the reference line filter.
    filt = ia.FilterModel(passband_gain_db=0.0, corner_hz=100e3)
    fundamental_hz = 0.5 / ia.edge_duration_for_prior(PRIOR)
    droop_db = 20.0 * math.log10(filt.magnitude(fundamental_hz) / filt.magnitude(0.0))
    assert -0.2 < droop_db < 0.0


def test_filter_signal_is_linear():
    filt = ia.FilterModel()
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    y = rng.normal(size=400)
    dt = 1e-7
    combined = ia.filter_signal(2.0 * x + 3.0 * y, dt, filt)
    separate = 2.0 * ia.filter_signal(x, dt, filt) + 3.0 * ia.filter_signal(y, dt, filt)
    assert np.max(np.abs(combined - separate)) < 1e-12


def test_filter_constant_reaches_dc_gain():
    filt = ia.FilterModel()
    out = ia.filter_signal(np.full(64, 0.7), 1e-7, filt)
    assert np.max(np.abs(out - 0.7 * filt.passband_gain)) == 0.0


def test_filter_rejects_nonpositive_corner():
    with pytest.raises(ia.ConfigurationError, match="corner frequency"):
        ia.FilterModel(passband_gain_db=-0.4, corner_hz=0.0)


def test_optimized_corrections_beat_the_soft_edge(calibrated_design, corrections):
    lead, trail = corrections
    assert lead.warning is None
    assert trail.warning is None
    assert lead.infidelity < 0.02 < lead.soft_infidelity
    assert trail.infidelity < 0.02 < trail.soft_infidelity
    assert abs(lead.c) <= 1.0 and abs(lead.d) <= 1.0
    assert abs(trail.c) <= 1.0 and abs(trail.d) <= 1.0


def test_corrected_edge_infidelity_lower_at_true_system(
    calibrated_design, tuning, corrections
):
    lead, trail = corrections
    true_system = calibrated_design.system()
    ramp_corr = calibrated_design.ramp_for(PRIOR, lead, trail)
    ramp_soft = ia.RampSpec(
        t0=ramp_corr.t0, ts=ramp_corr.ts, tf=ramp_corr.tf, tr=ramp_corr.tr,
        u_initial=ramp_corr.u_initial, u_final=ramp_corr.u_final,
        u_readout=ramp_corr.u_readout, kind="soft",
    )
    for edge in ("leading", "trailing"):
        corrected = ia.edge_infidelity(true_system, ramp_corr, tuning, edge)
        soft = ia.edge_infidelity(true_system, ramp_soft, tuning, edge)
        assert corrected < soft


def test_waveform_csv_header(soft_ramp_spec, tuning, tmp_path):
    wf = ia.build_edge_waveform(soft_ramp_spec, tuning, "leading", 100)
    path = tmp_path / "edge.csv"
    wf.to_csv(path)
    assert path.read_text().splitlines()[0] == "time_s,voltage_V,detuning_rad_s"
