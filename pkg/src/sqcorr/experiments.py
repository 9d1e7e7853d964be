"""Sweep runners: LO phase, transmission and LO power scans, SNL calibration."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .detection import (
    Scenario,
    detected_variance,
    expected_moments,
    nominal_snl_slope,
    simulate_record,
)
from .estimators import (
    EstimationError,
    MeasurementStats,
    ScalingFit,
    SnlCalibration,
    calibrate_snl,
    compute_stats,
    fit_scaling_exponent,
    squeezing_covariance,
    squeezing_homodyne,
)
from .gaussian import LossChannel, attenuated_inputs

WITNESS_SIGMA = 5.0
DEFAULT_PHASES = tuple(2 * math.pi * k / 64 for k in range(64))
DEFAULT_TRANSMISSIONS = tuple(float(t) for t in np.geomspace(0.05, 1.0, 8))


class Swept(str, enum.Enum):
    LO_PHASE = "phase"
    TRANSMISSION = "attenuation"
    LO_POWER = "power"

    @classmethod
    def parse(cls, text: str) -> "Swept":
        key = text.strip().lower()
        key = {"lophase": "phase", "transmission": "attenuation", "lopower": "power"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sweep {text!r}; expected phase, attenuation or power") from None

    @property
    def column(self) -> str:
        return {"phase": "phase_rad", "attenuation": "transmission", "power": "lo_power"}[self.value]


def derive_seed(master: int, *keys: int) -> int:
    """Independent 64-bit seed for a (point, repetition, ...) key."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    swept: Swept
    values: tuple
    seeds_per_point: int = 1
    samples_per_run: int | None = None
    master_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "swept", self.swept if isinstance(self.swept, Swept) else Swept.parse(self.swept))
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep needs at least one value")
        if self.swept is Swept.TRANSMISSION and any(not 0 < v <= 1 for v in vals):
            raise ValueError("swept transmissions must lie in (0, 1]")
        if self.swept is Swept.LO_POWER and any(v < 0 for v in vals):
            raise ValueError("swept LO powers must be >= 0")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("swept values must be finite")
        object.__setattr__(self, "values", vals)
        if self.seeds_per_point < 1:
            raise ValueError("seeds_per_point must be >= 1")
        if self.samples_per_run is not None and self.samples_per_run < 2:
            raise ValueError("samples_per_run must be >= 2")

    @property
    def n_samples(self) -> int:
        return int(self.samples_per_run or self.base.digitizer.n_samples)

    @property
    def seed(self) -> int:
        return int(self.base.digitizer.seed if self.master_seed is None else self.master_seed)

    def scenario_at(self, value: float) -> Scenario:
        if self.swept is Swept.LO_PHASE:
            return self.base.with_phase(value)
        if self.swept is Swept.TRANSMISSION:
            return self.base.with_transmission(value)
        return self.base.with_lo_power(value)


@dataclass(frozen=True)
class SweepRow:
    value: float
    cov: float
    cov_se: float
    var_diff: float
    var_diff_se: float
    s_cov: float
    s_cov_se: float
    s_hd: float
    s_hd_se: float
    lo_power: float
    cov_expected: float
    s_true: float
    s_hd_expected: float

    @property
    def witness(self) -> str:
        """Sign of the covariance at the WITNESS_SIGMA level."""
        if self.cov > WITNESS_SIGMA * self.cov_se:
            return "squeezed"
        if self.cov < -WITNESS_SIGMA * self.cov_se:
            return "antisqueezed"
        return "indeterminate"


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    snl: SnlCalibration
    fit: ScalingFit | None = None
    fit_error: str | None = None

    @property
    def master_seed(self) -> int:
        return self.spec.seed

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def nominal_calibration(sc: Scenario) -> SnlCalibration:
    """Exact calibration for the scenario's detectors (no measurement noise)."""
    return SnlCalibration(
        slope=nominal_snl_slope(sc),
        en_total=sc.det1.en_variance + sc.det2.en_variance,
    )


def _run_point(spec: SweepSpec, index: int, snl: SnlCalibration) -> SweepRow:
    value = spec.values[index]
    sc = spec.scenario_at(value).with_samples(spec.n_samples)
    lo_power = attenuated_inputs(sc.state, sc.lo, sc.loss).amplitude_sq
    R = spec.seeds_per_point
    acc = np.zeros((R, 4))
    for r in range(R):
        rec = simulate_record(sc.with_seed(derive_seed(spec.seed, index, r)))
        st = compute_stats(rec)
        acc[r] = (st.cov, st.se_cov, st.var_diff, st.se_var_diff)
    cov, var_diff = acc[:, 0].mean(), acc[:, 2].mean()
    # independent repetitions: se of the mean is the rms se over sqrt(R)
    cov_se = math.sqrt((acc[:, 1] ** 2).mean() / R)
    var_diff_se = math.sqrt((acc[:, 3] ** 2).mean() / R)
    # both estimators are linear in their statistic, so estimating from the
    # seed-averaged value equals averaging estimates, and the calibration
    # uncertainty (common to all seeds) is not divided down
    if lo_power > 0:
        e_cov = squeezing_covariance(cov, snl, lo_power, cov_se)
        e_hd = squeezing_homodyne(var_diff, snl, lo_power, var_diff_se)
        s = (e_cov.s, e_cov.se, e_hd.s, e_hd.se)
    else:
        s = (math.nan,) * 4
    em = expected_moments(sc)
    s_true = detected_variance(sc)
    s_hd_expected = em.var_diff / snl.snl_at(lo_power) if lo_power > 0 else math.nan
    return SweepRow(
        value=value,
        cov=float(cov),
        cov_se=cov_se,
        var_diff=float(var_diff),
        var_diff_se=var_diff_se,
        s_cov=s[0],
        s_cov_se=s[1],
        s_hd=s[2],
        s_hd_se=s[3],
        lo_power=float(lo_power),
        cov_expected=float(em.cov),
        s_true=float(s_true),
        s_hd_expected=float(s_hd_expected),
    )


def run_sweep(spec: SweepSpec, snl: SnlCalibration | None = None, workers: int = 1) -> SweepResult:
    """Simulate and estimate every swept point; rows follow spec.values order."""
    snl = snl or nominal_calibration(spec.base)
    idx = range(len(spec.values))
    if workers <= 1:
        rows = [_run_point(spec, i, snl) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda i: _run_point(spec, i, snl), idx))
    return SweepResult(spec, rows, snl)


def _require(spec: SweepSpec, swept: Swept):
    if spec.swept is not swept:
        raise ValueError(f"expected a {swept.value} sweep, got {spec.swept.value}")


def run_phase_sweep(spec: SweepSpec, snl: SnlCalibration | None = None, workers: int = 1) -> SweepResult:
    _require(spec, Swept.LO_PHASE)
    return run_sweep(spec, snl, workers)


def run_attenuation_sweep(spec: SweepSpec, snl: SnlCalibration | None = None, workers: int = 1) -> SweepResult:
    """Transmission sweep plus the fitted power law of the covariance.

    The fit is refused (fit=None, fit_error set) when any covariance is
    compatible with zero at the witness level or the signs are mixed.
    """
    _require(spec, Swept.TRANSMISSION)
    res = run_sweep(spec, snl, workers)
    cov = res.column("cov")
    se = res.column("cov_se")
    if np.any(np.abs(cov) <= WITNESS_SIGMA * se):
        res.fit_error = "covariance compatible with zero at one or more transmissions"
    elif len(res.rows) < 3:
        res.fit_error = "need at least 3 transmissions"
    else:
        try:
            w = (cov / se) ** 2  # 1 / var(log|cov|)
            res.fit = fit_scaling_exponent(zip(res.column("value"), cov), weights=w)
        except EstimationError as exc:
            res.fit_error = str(exc)
    return res


@dataclass
class ComparisonReport:
    """Homodyne vs covariance estimates along an LO transmission/power scan."""

    sweep: SweepResult
    en_total: float
    hd_bias_predicted: np.ndarray = field(repr=False)

    @property
    def rows(self):
        return self.sweep.rows

    def cov_deviation_sigma(self) -> np.ndarray:
        r = self.sweep
        return (r.column("s_cov") - r.column("s_true")) / r.column("s_cov_se")

    def hd_bias(self) -> np.ndarray:
        r = self.sweep
        return r.column("s_hd") - r.column("s_true")


def run_comparison(spec: SweepSpec, snl: SnlCalibration, workers: int = 1) -> ComparisonReport:
    if spec.swept is Swept.LO_PHASE:
        raise ValueError("comparison sweeps LO transmission or LO power, not phase")
    res = run_sweep(spec, snl, workers)
    en_total = spec.base.det1.en_variance + spec.base.det2.en_variance
    bias = np.array([en_total / snl.snl_at(r.lo_power) if r.lo_power > 0 else math.nan for r in res.rows])
    return ComparisonReport(res, en_total, bias)


def measure_electronic_noise(scenario: Scenario, n_samples: int | None = None, seed: int | None = None,
                             workers: int = 1) -> MeasurementStats:
    """Zero-light run: signal and LO both blocked."""
    sc = scenario.dark()
    if n_samples is not None:
        sc = sc.with_samples(n_samples)
    if seed is not None:
        sc = sc.with_seed(seed)
    return compute_stats(simulate_record(sc, workers=workers))


def snl_calibration_campaign(scenario: Scenario, powers, n_samples: int | None = None,
                             seed: int | None = None, workers: int = 1,
                             high_fraction: float = 0.5) -> SnlCalibration:
    """Shot-noise calibration from vacuum-input runs at several LO powers.

    The EN level is taken from a separate dark run and only the top
    `high_fraction` of the (ascending) power list enters the fit.
    """
    powers = [float(p) for p in powers]
    if len(powers) < 2:
        raise ValueError("calibration campaign needs at least 2 LO powers")
    if any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValueError("calibration powers must be strictly ascending")
    if powers[0] <= 0:
        raise ValueError("calibration powers must be positive")
    master = int(scenario.digitizer.seed if seed is None else seed)
    base = replace(scenario.blocked_signal(), loss=LossChannel(1.0, scenario.loss.mode))
    if n_samples is not None:
        base = base.with_samples(n_samples)

    dark = measure_electronic_noise(base, seed=derive_seed(master, 1, 0), workers=workers)
    en_total = max(dark.var_diff, 0.0)

    first = min(int(len(powers) * (1 - high_fraction)), len(powers) - 1)
    used = powers[first:]
    points, point_se = [], []
    for i, p in enumerate(used):
        sc = base.with_lo_power(p).with_seed(derive_seed(master, 2, first + i))
        st = compute_stats(simulate_record(sc, workers=workers))
        points.append((p, st.var_diff))
        point_se.append(math.hypot(st.se_var_diff, dark.se_var_diff))
    return calibrate_snl(points, en_total, point_se=point_se)
