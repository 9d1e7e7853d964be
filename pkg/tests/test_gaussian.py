import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sqcorr.gaussian import (
    GaussianState,
    LocalOscillator,
    LossChannel,
    LossMode,
    apply_loss_to_variance,
    rotated_variance,
    theoretical_covariance,
)

from oracles import quadrature_variance_by_sampling

SQ = GaussianState(0.5, 2.0)
phases = st.floats(-20, 20, allow_nan=False)
variances = st.floats(0.05, 20.0)
transmissions = st.floats(0.0, 1.0)


@st.composite
def states(draw):
    vx = draw(variances)
    vy = draw(st.floats(1.0 / vx, 50.0))
    return GaussianState(vx, max(vy, 1.0 / vx))


@pytest.mark.parametrize("phase, expected", [(0.0, 0.5), (math.pi / 2, 2.0), (math.pi / 4, 1.25)])
def test_rotated_variance_examples(phase, expected):
    assert rotated_variance(SQ, phase) == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_rotated_variance_matches_sampling():
    rng = np.random.default_rng(7)
    n = 400_000
    for phase in (0.3, 1.1, 2.5):
        v = quadrature_variance_by_sampling(0.5, 2.0, phase, n, rng)
        expected = rotated_variance(SQ, phase)
        assert abs(v - expected) < 5 * math.sqrt(2 / (n - 1)) * expected


@given(states(), phases)
def test_rotated_variance_bounded_and_pi_periodic(state, phase):
    v = rotated_variance(state, phase)
    lo, hi = min(state.vx, state.vy), max(state.vx, state.vy)
    assert lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12)
    assert rotated_variance(state, phase + math.pi) == pytest.approx(v, rel=1e-9)


@pytest.mark.parametrize("v, t, expected", [(0.5, 0.5, 0.75), (1.0, 0.37, 1.0), (2.0, 0.25, 1.25)])
def test_apply_loss_examples(v, t, expected):
    assert apply_loss_to_variance(v, t) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("t", [-0.1, 1.0001, math.nan])
def test_apply_loss_rejects_bad_transmission(t):
    with pytest.raises(ValueError):
        apply_loss_to_variance(0.5, t)


@given(variances, transmissions)
def test_apply_loss_keeps_side_of_vacuum(v, t):
    out = apply_loss_to_variance(v, t)
    if v >= 1:
        assert out >= 1 - 1e-12
    else:
        assert out <= 1 + 1e-12
    assert abs(out - 1) <= abs(v - 1) + 1e-12
    assert apply_loss_to_variance(v, 1.0) == v


@given(variances, variances, transmissions)
def test_apply_loss_is_affine(a, b, t):
    mid = apply_loss_to_variance((a + b) / 2, t)
    assert mid == pytest.approx((apply_loss_to_variance(a, t) + apply_loss_to_variance(b, t)) / 2, rel=1e-12)


LO = LocalOscillator(amplitude_sq=100.0, phase=0.0, v_lo=1.0)


@pytest.mark.parametrize(
    "t, mode, expected",
    [
        (1.0, LossMode.BOTH, 50.0),
        (0.5, LossMode.BOTH, 12.5),
        (0.5, LossMode.LO_ONLY, 25.0),
        # a^2 [1 - (0.5*0.5 + 0.5)] = 100 * 0.25
        (0.5, LossMode.SIGNAL_ONLY, 25.0),
    ],
)
def test_theoretical_covariance_examples(t, mode, expected):
    assert theoretical_covariance(SQ, LO, LossChannel(t, mode)) == pytest.approx(expected, rel=1e-14)


def test_identity_channel_reduces_all_modes():
    for mode in LossMode:
        assert theoretical_covariance(SQ, LO, LossChannel(1.0, mode)) == pytest.approx(50.0)


@given(states(), phases, st.floats(0.01, 1e4), st.floats(0.01, 1.0), st.sampled_from([LossMode.BOTH, LossMode.LO_ONLY]))
def test_sign_set_invariant_under_power_and_transmission(state, phase, a2, t, mode):
    v = rotated_variance(state, phase)
    c = theoretical_covariance(state, LocalOscillator(a2, phase), LossChannel(t, mode))
    if abs(v - 1) > 1e-9:
        assert (c > 0) == (v < 1)
        assert (c < 0) == (v > 1)


def test_coherent_gives_zero_covariance():
    assert theoretical_covariance(GaussianState.vacuum(), LO, LossChannel(0.3, LossMode.BOTH)) == 0.0


def test_state_validation():
    with pytest.raises(ValueError):
        GaussianState(0.5, 1.5)
    with pytest.raises(ValueError):
        GaussianState(0.0, 2.0)
    assert GaussianState.vacuum().is_pure
    s = GaussianState.squeezed(3.0103, purity=0.5)
    assert s.vx == pytest.approx(0.5, rel=1e-4)
    assert s.purity == pytest.approx(0.5)


def test_loss_channel_validation():
    with pytest.raises(ValueError):
        LossChannel(1.5)
    assert LossChannel(0.4, "lo_only").mode is LossMode.LO_ONLY
    with pytest.raises(ValueError):
        LossMode.parse("sideways")
    with pytest.raises(ValueError):
        LocalOscillator(amplitude_sq=-1.0)
