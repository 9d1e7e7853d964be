import math
from dataclasses import replace

import numpy as np
import pytest

from sqcorr.detection import (
    CHUNK_SIZE,
    DetectorModel,
    DigitizerConfig,
    Preset,
    SampleRecord,
    Scenario,
    detected_variance,
    expected_moments,
    preset_scenario,
    simulate_record,
)
from sqcorr.estimators import compute_stats
from sqcorr.gaussian import GaussianState, LocalOscillator, LossChannel, LossMode, theoretical_covariance

from oracles import se_covariance, se_variance


def scenario(vx=1.0, vy=1.0, phase=0.0, a2=100.0, en=(0.0, 0.0), n=10**6, seed=42, **kw):
    return Scenario(
        state=GaussianState(vx, vy),
        lo=LocalOscillator(a2, phase),
        det1=DetectorModel(kw.pop("eff1", 1.0), en[0]),
        det2=DetectorModel(kw.pop("eff2", 1.0), en[1]),
        digitizer=DigitizerConfig(n_samples=n, seed=seed, ac_coupled=kw.pop("ac", True)),
        **kw,
    )


def test_no_light_no_noise_is_exactly_zero():
    for ac in (True, False):
        rec = simulate_record(scenario(vx=0.5, vy=2.0, a2=0.0, n=1000, ac=ac))
        assert not rec.ch1.any() and not rec.ch2.any()


def test_vacuum_difference_variance():
    # Var(i1 - i2) = 4 a^2 <dX_phi^2> with vacuum input
    rec = simulate_record(scenario(a2=100.0, n=10**6, seed=42))
    st = compute_stats(rec)
    assert abs(st.var_diff - 400.0) < 5 * se_variance(400.0, st.n)


def test_covariance_independent_of_en():
    sc = scenario(vx=0.5, vy=2.0, en=(10.0, 10.0), n=10**6, seed=42)
    st = compute_stats(simulate_record(sc))
    em = expected_moments(sc)
    assert em.cov == 50.0
    assert abs(st.cov - 50.0) < 5 * se_covariance(em.var1, em.var2, em.cov, st.n)
    assert abs(st.var_diff - em.var_diff) < 5 * se_variance(em.var_diff, st.n)


def test_expected_moments_agree_with_theory_and_eq2():
    sc = scenario(vx=0.5, vy=2.0, phase=0.4, en=(3.0, 7.0))
    sc = replace(sc, loss=LossChannel(0.6, LossMode.BOTH))
    em = expected_moments(sc)
    assert em.cov == pytest.approx(theoretical_covariance(sc.state, sc.lo, sc.loss))
    a2 = 0.6 * 100.0
    v = 0.6 * (0.5 * math.cos(0.4) ** 2 + 2.0 * math.sin(0.4) ** 2) + 0.4
    assert em.var_diff == pytest.approx(4 * a2 * v + 10.0)


@pytest.mark.parametrize("eff", [0.98, 0.7])
def test_efficiency_acts_as_loss(eff):
    sc = scenario(vx=0.5, vy=2.0, eff1=eff, eff2=eff, en=(5.0, 5.0), n=10**6, seed=3)
    st = compute_stats(simulate_record(sc))
    em = expected_moments(sc)
    assert em.cov == pytest.approx(eff * eff * 100 * 0.5)
    # vacuum-normalised difference variance equals the lossy quadrature variance
    assert (em.var_diff - 10.0) / (4 * eff * 100) == pytest.approx(eff * 0.5 + 1 - eff)
    assert detected_variance(sc) == pytest.approx(eff * 0.5 + 1 - eff)
    for name, var in (("var1", em.var1), ("var2", em.var2), ("var_diff", em.var_diff)):
        assert abs(getattr(st, name) - var) < 5 * se_variance(var, st.n)
    assert abs(st.cov - em.cov) < 5 * se_covariance(em.var1, em.var2, em.cov, st.n)


def test_dc_offset_only_when_dc_coupled():
    sc = scenario(a2=100.0, n=200_000, ac=False, eff1=0.9, eff2=0.8)
    st = compute_stats(simulate_record(sc))
    assert abs(st.mean1 - 45.0) < 5 * math.sqrt(st.var1 / st.n)
    assert abs(st.mean2 - 40.0) < 5 * math.sqrt(st.var2 / st.n)
    ac = compute_stats(simulate_record(replace(sc, digitizer=replace(sc.digitizer, ac_coupled=True))))
    # same streams, so only the constant offsets differ
    assert ac.cov == pytest.approx(st.cov, rel=1e-9)
    assert ac.var_diff == pytest.approx(st.var_diff, rel=1e-9)


def test_determinism_across_workers():
    sc = scenario(vx=0.5, vy=2.0, en=(1.0, 2.0), n=5 * CHUNK_SIZE + 123, seed=99)
    a = simulate_record(sc, workers=1)
    b = simulate_record(sc, workers=1)
    c = simulate_record(sc, workers=8)
    assert a == b == c
    assert a.ch1.tobytes() == c.ch1.tobytes()
    d = simulate_record(sc.with_seed(100))
    assert not np.array_equal(a.ch1, d.ch1)


def test_prefix_stable_when_n_grows():
    sc = scenario(n=CHUNK_SIZE + 10, seed=5)
    short = simulate_record(sc)
    long = simulate_record(sc.with_samples(3 * CHUNK_SIZE))
    assert np.array_equal(short.ch1, long.ch1[: short.n])


def test_electronic_noise_uncorrelated():
    sc = scenario(a2=0.0, en=(4.0, 9.0), n=10**6, seed=11)
    st = compute_stats(simulate_record(sc))
    assert abs(st.cov) < 5 * se_covariance(4.0, 9.0, 0.0, st.n)
    assert abs(st.var1 - 4.0) < 5 * se_variance(4.0, st.n)
    assert abs(st.var2 - 9.0) < 5 * se_variance(9.0, st.n)


def test_channel_symmetry():
    base = scenario(vx=0.5, vy=2.0, phase=0.7, en=(25.0, 25.0), n=10**6, seed=1)
    swapped = replace(base, det1=base.det2, det2=base.det1).with_seed(2)
    a = simulate_record(base)
    b = simulate_record(swapped)
    for f in (lambda r: r.ch1 + r.ch2, lambda r: r.ch1 - r.ch2):
        va = f(a).var(ddof=1)
        vb = f(b).var(ddof=1)
        se = math.hypot(se_variance(va, a.n), se_variance(vb, b.n))
        assert abs(va - vb) < 5 * se


def test_presets():
    opa = preset_scenario("OPA")
    kerr = preset_scenario(Preset.KERR)
    assert opa.digitizer.sample_rate == 2e6
    assert opa.digitizer.bandwidth == 150e3
    assert opa.loss.mode is LossMode.LO_ONLY
    assert opa.det1.efficiency == 1.0
    assert opa.state.vx * opa.state.vy == pytest.approx(1.05)
    assert kerr.digitizer.sample_rate == 2e7
    assert kerr.digitizer.bandwidth == 3e6
    assert kerr.loss.mode is LossMode.BOTH
    assert kerr.det1.efficiency == kerr.det2.efficiency == 0.98
    assert kerr.state.vy > 5 / kerr.state.vx
    with pytest.raises(ValueError):
        preset_scenario("homebrew")
    with pytest.raises(ValueError):
        replace(opa, loss=LossChannel(1.0, LossMode.BOTH))


def test_validation():
    with pytest.raises(ValueError):
        DigitizerConfig(n_samples=1)
    with pytest.raises(ValueError):
        DigitizerConfig(seed=-1)
    with pytest.raises(ValueError):
        DetectorModel(efficiency=0.0)
    with pytest.raises(ValueError):
        DetectorModel(en_variance=-1.0)
    with pytest.raises(ValueError):
        SampleRecord(np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        SampleRecord(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        SampleRecord(np.array([0.0, np.inf]), np.zeros(2))


def test_record_is_immutable():
    rec = simulate_record(scenario(n=10))
    with pytest.raises(ValueError):
        rec.ch1[0] = 1.0
