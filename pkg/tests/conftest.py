"""Shared fixtures: the reference tuning law and measurement designs.

All numbers are angular frequencies (rad/s) unless a name says Hz. The
reference configuration places the avoided crossing at -8 V, initializes
at -11.5 V, and reads out at -11.2 V; the true splitting (42.65 kHz) sits
about 3% above the spectroscopic prior (41.3 kHz).
"""
import math

import pytest

import iaspec as ia

TWO_PI = 2.0 * math.pi
SEED = 20260814

TRUTH_HZ = 42650.0
PRIOR_HZ = 41300.0
TRUTH = TWO_PI * TRUTH_HZ
PRIOR = TWO_PI * PRIOR_HZ

U_INITIAL = -11.5
U_READOUT = -11.2


def make_tuning(splitting_hz: float = PRIOR_HZ) -> ia.TuningModel:
    return ia.TuningModel(
        oop=ia.ModeTuning(TWO_PI * 7045520.0, TWO_PI * 3660.0),
        ip=ia.ModeTuning(TWO_PI * 7514000.0, TWO_PI * -3660.0),
        splitting=TWO_PI * splitting_hz,
    )


def make_design(tuning: ia.TuningModel, **overrides) -> ia.SequenceDesign:
    kwargs = dict(
        tuning=tuning,
        u_initial=U_INITIAL,
        u_readout=U_READOUT,
        omega0_true=TRUTH,
        kind="ideal",
        repeats=1,
    )
    kwargs.update(overrides)
    return ia.SequenceDesign(**kwargs)


@pytest.fixture(scope="session")
def tuning() -> ia.TuningModel:
    return make_tuning()


@pytest.fixture(scope="session")
def ideal_design(tuning) -> ia.SequenceDesign:
    """Noiseless instantaneous-ramp design: traces follow the closed form."""
    return make_design(tuning)


@pytest.fixture(scope="session")
def calibrated_design(tuning) -> ia.SequenceDesign:
    """Realistic design: damping, per-shot readout noise, corrected ramps."""
    return make_design(
        tuning, gamma=150.0, noise_std=0.025, repeats=30, kind="corrected"
    )


@pytest.fixture(scope="session")
def corrections(calibrated_design):
    """Optimized (leading, trailing) edge corrections at the prior."""
    return calibrated_design.optimize_edges(PRIOR)
