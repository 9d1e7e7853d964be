"""Two-channel statistics and the squeezing estimators built on them."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detection import CHUNK_SIZE, SampleRecord


class EstimationError(ValueError):
    pass


# --------------------------------------------------------------------------
# moment accumulation


@dataclass
class MomentAccumulator:
    """Mergeable central-moment sums for (ch1, ch2, ch1 - ch2).

    Blocks are reduced with a two-pass scheme and combined with the pairwise
    update of Chan, Golub and LeVeque, so the result does not depend on how
    the data were partitioned beyond rounding.
    """

    n: int = 0
    mean1: float = 0.0
    mean2: float = 0.0
    mean_d: float = 0.0
    m2_1: float = 0.0
    m2_2: float = 0.0
    m2_d: float = 0.0
    c12: float = 0.0

    @classmethod
    def from_block(cls, x, y) -> "MomentAccumulator":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise EstimationError("channels must be 1-D and of equal length")
        n = x.size
        if n == 0:
            return cls()
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise EstimationError("non-finite samples")
        mx = x.mean()
        my = y.mean()
        dx = x - mx
        dy = y - my
        # residual mean of the centred block restores most of the lost bits
        cx = dx.mean()
        cy = dy.mean()
        mx += cx
        my += cy
        dx -= cx
        dy -= cy
        dd = dx - dy
        return cls(
            n=n,
            mean1=float(mx),
            mean2=float(my),
            mean_d=float(mx - my),
            m2_1=float(dx @ dx),
            m2_2=float(dy @ dy),
            m2_d=float(dd @ dd),
            c12=float(dx @ dy),
        )

    def update(self, x, y) -> "MomentAccumulator":
        self.merge(MomentAccumulator.from_block(x, y))
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.__dict__.update(other.__dict__)
            return self
        na, nb = self.n, other.n
        n = na + nb
        f = na * nb / n
        d1 = other.mean1 - self.mean1
        d2 = other.mean2 - self.mean2
        dd = other.mean_d - self.mean_d
        self.m2_1 += other.m2_1 + d1 * d1 * f
        self.m2_2 += other.m2_2 + d2 * d2 * f
        self.m2_d += other.m2_d + dd * dd * f
        self.c12 += other.c12 + d1 * d2 * f
        self.mean1 += d1 * nb / n
        self.mean2 += d2 * nb / n
        self.mean_d += dd * nb / n
        self.n = n
        return self

    def stats(self) -> "MeasurementStats":
        n = self.n
        if n < 2:
            raise EstimationError(f"need at least 2 samples, have {n}")
        k = n - 1
        var1 = self.m2_1 / k
        var2 = self.m2_2 / k
        cov = self.c12 / k
        var_diff = self.m2_d / k
        return MeasurementStats(
            n=n,
            mean1=self.mean1,
            mean2=self.mean2,
            var1=var1,
            var2=var2,
            var_diff=var_diff,
            cov=cov,
            se_cov=math.sqrt((var1 * var2 + cov * cov) / k),
            se_var_diff=math.sqrt(2.0 / k) * var_diff,
        )


@dataclass(frozen=True)
class MeasurementStats:
    n: int
    mean1: float
    mean2: float
    var1: float
    var2: float
    var_diff: float
    cov: float
    se_cov: float
    se_var_diff: float

    @property
    def correlation(self) -> float:
        return self.cov / math.sqrt(self.var1 * self.var2)

    def identity_residual(self) -> float:
        """Relative mismatch of var_diff against var1 + var2 - 2 cov."""
        scale = self.var1 + self.var2
        if scale == 0:
            return abs(self.var_diff)
        return abs(self.var_diff - (self.var1 + self.var2 - 2 * self.cov)) / scale


def compute_stats(record, chunk_size: int = CHUNK_SIZE) -> MeasurementStats:
    """Unbiased means, variances and covariance of a two-channel record.

    Accepts a SampleRecord or a ``(ch1, ch2)`` pair of arrays.
    """
    if isinstance(record, SampleRecord):
        x, y = record.ch1, record.ch2
    else:
        x, y = (np.asarray(c, dtype=np.float64) for c in record)
    if x.shape != y.shape:
        raise EstimationError("channels differ in length")
    if x.size < 2:
        raise EstimationError("record too short: need at least 2 samples")
    acc = MomentAccumulator()
    for lo in range(0, x.size, chunk_size):
        acc.update(x[lo:lo + chunk_size], y[lo:lo + chunk_size])
    return acc.stats()


def coincidence_moment(stats: MeasurementStats) -> float:
    """Normally ordered coincidence moment <:i1 i2:> = cov + <i1><i2>."""
    return stats.cov + stats.mean1 * stats.mean2


# --------------------------------------------------------------------------
# shot-noise calibration


@dataclass(frozen=True)
class SnlCalibration:
    """Shot-noise level per unit LO power, fitted through the origin.

    `slope_se` propagates per-point standard errors when they are known and
    is 0 otherwise. `intercept` is the free-intercept fit kept for the
    diagnostic warning only.
    """

    slope: float
    en_total: float = 0.0
    fit_residual: float = 0.0
    power_points: tuple = ()
    slope_se: float = 0.0
    intercept: float = 0.0

    def __post_init__(self):
        if not self.slope > 0:
            raise EstimationError(f"calibration slope must be positive, got {self.slope}")
        if not self.en_total >= 0:
            raise EstimationError(f"en_total must be >= 0, got {self.en_total}")
        object.__setattr__(
            self, "power_points", tuple((float(p), float(v)) for p, v in self.power_points)
        )

    def snl_at(self, power: float) -> float:
        return self.slope * power


def calibrate_snl(points, en_total: float, point_se=None) -> SnlCalibration:
    """Fit V_SNL = slope * power to EN-subtracted difference variances.

    `points` is a sequence of (lo_power, var_diff). A single point is enough
    since the line is pinned at the origin.
    """
    pts = [(float(p), float(v)) for p, v in points]
    if not pts:
        raise EstimationError("calibration needs at least one (power, variance) point")
    if en_total < 0:
        raise EstimationError("en_total must be >= 0")
    P = np.array([p for p, _ in pts])
    V = np.array([v for _, v in pts]) - en_total
    if np.any(P <= 0):
        raise EstimationError("calibration powers must be positive")
    high = P >= np.median(P)
    if np.any(V[high] < 0):
        bad = P[high][V[high] < 0]
        raise EstimationError(
            f"EN-corrected variance is negative at power {bad[0]:g}; en_total looks miscalibrated"
        )
    pp = P @ P
    slope = float(P @ V / pp)
    if not slope > 0:
        raise EstimationError(f"fitted SNL slope is not positive ({slope:g})")
    resid = V - slope * P
    fit_residual = float(math.sqrt(np.mean(resid * resid)))
    slope_se = 0.0
    if point_se is not None:
        se = np.asarray(point_se, dtype=np.float64)
        slope_se = float(math.sqrt(np.sum(P * P * se * se)) / pp)

    intercept = 0.0
    if len(set(P.tolist())) >= 2:
        b, a = np.polyfit(P, V, 1)
        intercept = float(a)
        # tolerance: a few per-point errors, or 1% of the smallest point
        tol = 5 * float(np.max(point_se)) if point_se is not None else 0.01 * float(np.min(np.abs(V)))
        if abs(intercept) > tol:
            warnings.warn(
                f"SNL fit has a nonzero intercept ({intercept:g}); shot noise may not be linear "
                "in LO power or en_total is off",
                RuntimeWarning,
                stacklevel=2,
            )
    return SnlCalibration(
        slope=slope,
        en_total=float(en_total),
        fit_residual=fit_residual,
        power_points=tuple(pts),
        slope_se=slope_se,
        intercept=intercept,
    )


# --------------------------------------------------------------------------
# squeezing estimators


class Method(str, enum.Enum):
    HOMODYNE_DIFF = "hd"
    COVARIANCE = "cov"
    LO_FREE = "lofree"


@dataclass(frozen=True)
class SqueezingEstimate:
    s: float
    se: float
    method: Method
    s_db: float = field(init=False)

    def __post_init__(self):
        s_db = 10.0 * math.log10(self.s) if self.s > 0 else math.nan
        object.__setattr__(self, "s_db", s_db)

    @property
    def is_squeezed(self) -> bool:
        return self.s < 1.0

    @property
    def se_db(self) -> float:
        if self.s <= 0:
            return math.nan
        return 10.0 / math.log(10.0) * self.se / self.s


def _snl_value(snl: SnlCalibration, lo_power: float) -> float:
    if not lo_power > 0:
        raise EstimationError(f"lo_power must be positive, got {lo_power}")
    v = snl.snl_at(lo_power)
    if not v > 0:
        raise EstimationError("shot-noise level must be positive")
    return v


def squeezing_homodyne(var_diff: float, snl: SnlCalibration, lo_power: float,
                       se_var_diff: float = 0.0) -> SqueezingEstimate:
    """Difference-current variance over the shot-noise level.

    No electronic-noise subtraction is done: when var_diff contains EN the
    estimate is biased upward by en_total / snl_at(lo_power).
    """
    v = _snl_value(snl, lo_power)
    s = var_diff / v
    rel_slope = snl.slope_se / snl.slope
    se = math.hypot(se_var_diff / v, s * rel_slope)
    return SqueezingEstimate(s, se, Method.HOMODYNE_DIFF)


def squeezing_homodyne_en_corrected(var_diff: float, snl: SnlCalibration, lo_power: float,
                                    se_var_diff: float = 0.0) -> SqueezingEstimate:
    """Homodyne estimate with the calibrated EN variance subtracted first."""
    return squeezing_homodyne(var_diff - snl.en_total, snl, lo_power, se_var_diff)


def squeezing_covariance(cov: float, snl: SnlCalibration, lo_power: float,
                         se_cov: float = 0.0) -> SqueezingEstimate:
    """S = 1 - 4 cov / V_SNL; insensitive to uncorrelated electronic noise."""
    v = _snl_value(snl, lo_power)
    r = 4.0 * cov / v
    rel_slope = snl.slope_se / snl.slope
    se = math.hypot(4.0 * se_cov / v, r * rel_slope)
    return SqueezingEstimate(1.0 - r, se, Method.COVARIANCE)


def squeezing_lo_free(cov: float, snl_equivalent: float, se_cov: float = 0.0) -> SqueezingEstimate:
    """S = 4 cov / V_SNL - 1 for a beam split directly onto two detectors."""
    if not snl_equivalent > 0:
        raise EstimationError(f"snl_equivalent must be positive, got {snl_equivalent}")
    s = 4.0 * cov / snl_equivalent - 1.0
    return SqueezingEstimate(s, 4.0 * se_cov / snl_equivalent, Method.LO_FREE)


def squeezing_direct_split(cov: float, snl_equivalent: float, se_cov: float = 0.0) -> SqueezingEstimate:
    """S = 1 + 4 cov / V_SNL for a beam split directly onto two detectors.

    This is the photocurrent model with the roles of the two inputs
    exchanged: the bright beam plays the LO and vacuum enters the open port,
    so cov = a^2 (V - 1) and sub-shot-noise beams give negative covariance.
    """
    if not snl_equivalent > 0:
        raise EstimationError(f"snl_equivalent must be positive, got {snl_equivalent}")
    s = 1.0 + 4.0 * cov / snl_equivalent
    return SqueezingEstimate(s, 4.0 * se_cov / snl_equivalent, Method.LO_FREE)


# --------------------------------------------------------------------------
# power-law scaling


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    amplitude: float
    residual: float
    exponent_se: float


def fit_scaling_exponent(points, weights=None) -> ScalingFit:
    """Least-squares fit of log|cov| = log|c| + p log T.

    The returned amplitude carries the common sign of the covariances.
    `weights` are optional inverse variances of log|cov|.
    """
    pts = [(float(t), float(c)) for t, c in points]
    if len(pts) < 3:
        raise EstimationError("scaling fit needs at least 3 points")
    T = np.array([t for t, _ in pts])
    C = np.array([c for _, c in pts])
    if np.any(T <= 0):
        raise EstimationError("transmissions must be positive")
    if np.any(C == 0) or not (np.all(C > 0) or np.all(C < 0)):
        raise EstimationError("covariances must be nonzero and share one sign")
    sign = 1.0 if C[0] > 0 else -1.0
    x = np.log(T)
    y = np.log(np.abs(C))
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    sw = w.sum()
    xm = (w @ x) / sw
    ym = (w @ y) / sw
    sxx = w @ ((x - xm) ** 2)
    if sxx == 0:
        raise EstimationError("scaling fit needs at least two distinct transmissions")
    p = float(w @ ((x - xm) * (y - ym)) / sxx)
    logc = ym - p * xm
    r = y - (logc + p * x)
    dof = len(pts) - 2
    residual = float(math.sqrt((w @ (r * r)) / sw))
    if weights is None:
        p_se = math.sqrt((r @ r) / dof / sxx) if dof > 0 else math.nan
    else:
        p_se = math.sqrt(1.0 / sxx)
    return ScalingFit(p, sign * math.exp(logc), residual, float(p_se))
