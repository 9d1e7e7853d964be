"""Quadrature statistics of the signal and local-oscillator modes.

Variances are in shot-noise units: the vacuum quadrature variance is 1.
The signal state is kept in its principal-axis frame (no X-Y cross
correlation); the orientation of the squeezing ellipse relative to the
detector is carried entirely by the LO phase.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class LossMode(str, enum.Enum):
    """Which optical inputs a loss channel acts on."""

    SIGNAL_ONLY = "signal_only"
    LO_ONLY = "lo_only"
    BOTH = "both"

    @classmethod
    def parse(cls, text: str) -> "LossMode":
        key = text.strip().lower().replace("-", "_")
        aliases = {"signalonly": "signal_only", "loonly": "lo_only"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown loss mode {text!r}; expected one of "
                + ", ".join(m.value for m in cls)
            ) from None


@dataclass(frozen=True)
class GaussianState:
    """Signal mode with amplitude (vx) and phase (vy) quadrature variances."""

    vx: float = 1.0
    vy: float = 1.0

    def __post_init__(self):
        if not (self.vx > 0 and self.vy > 0):
            raise ValueError(f"quadrature variances must be positive, got ({self.vx}, {self.vy})")
        # small slack so that e.g. (0.1, 10.0) survives rounding
        if self.vx * self.vy < 1.0 - 1e-12:
            raise ValueError(
                f"vx*vy = {self.vx * self.vy:g} violates the uncertainty bound vx*vy >= 1"
            )

    @classmethod
    def vacuum(cls) -> "GaussianState":
        return cls(1.0, 1.0)

    @classmethod
    def squeezed(cls, squeezing_db: float, purity: float = 1.0) -> "GaussianState":
        """Squeezed state with `squeezing_db` of noise reduction in X.

        `purity` = 1/(vx*vy); values below 1 inflate the antisqueezed quadrature.
        """
        if not 0 < purity <= 1:
            raise ValueError("purity must lie in (0, 1]")
        vx = 10.0 ** (-squeezing_db / 10.0)
        return cls(vx, 1.0 / (vx * purity))

    @property
    def purity(self) -> float:
        return 1.0 / (self.vx * self.vy)

    @property
    def is_pure(self) -> bool:
        return math.isclose(self.vx * self.vy, 1.0, rel_tol=1e-12)


@dataclass(frozen=True)
class LocalOscillator:
    """Mean intensity ``amplitude_sq`` (alpha_LO^2), phase and amplitude-noise variance."""

    amplitude_sq: float = 100.0
    phase: float = 0.0
    v_lo: float = 1.0

    def __post_init__(self):
        if not self.amplitude_sq >= 0:
            raise ValueError(f"amplitude_sq must be >= 0, got {self.amplitude_sq}")
        if not self.v_lo >= 0:
            raise ValueError(f"v_lo must be >= 0, got {self.v_lo}")
        if not math.isfinite(self.phase):
            raise ValueError("LO phase must be finite")


@dataclass(frozen=True)
class LossChannel:
    transmission: float = 1.0
    mode: LossMode = LossMode.BOTH

    def __post_init__(self):
        _check_transmission(self.transmission)
        if not isinstance(self.mode, LossMode):
            object.__setattr__(self, "mode", LossMode.parse(str(self.mode)))

    @property
    def attenuates_signal(self) -> bool:
        return self.mode in (LossMode.SIGNAL_ONLY, LossMode.BOTH)

    @property
    def attenuates_lo(self) -> bool:
        return self.mode in (LossMode.LO_ONLY, LossMode.BOTH)

    @property
    def is_identity(self) -> bool:
        return self.transmission == 1.0


def _check_transmission(t):
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"transmission must lie in [0, 1], got {t}")


def rotated_variance(state: GaussianState, phase: float) -> float:
    """Variance of X_phi = cos(phi) X + sin(phi) Y."""
    c = math.cos(phase)
    s = math.sin(phase)
    return c * c * state.vx + s * s * state.vy


def apply_loss_to_variance(v: float, transmission: float) -> float:
    """Beamsplitter loss: mixes in vacuum with weight 1 - T."""
    _check_transmission(transmission)
    if not v > 0:
        raise ValueError(f"variance must be positive, got {v}")
    return transmission * v + (1.0 - transmission)


@dataclass(frozen=True)
class OpticalInputs:
    """Signal/LO statistics at the homodyne beamsplitter after the loss channel."""

    amplitude_sq: float
    v_lo: float
    v_signal: float


def attenuated_inputs(state: GaussianState, lo: LocalOscillator, loss: LossChannel) -> OpticalInputs:
    t = loss.transmission
    v_sig = rotated_variance(state, lo.phase)
    amp = lo.amplitude_sq
    v_lo = lo.v_lo
    if loss.attenuates_signal:
        v_sig = apply_loss_to_variance(v_sig, t)
    if loss.attenuates_lo:
        amp = t * amp
        # v_lo = 0 is allowed for an idealised LO; loss still admixes vacuum
        v_lo = t * v_lo + (1.0 - t)
    else:
        _check_transmission(t)
    return OpticalInputs(amp, v_lo, v_sig)


def theoretical_covariance(state: GaussianState, lo: LocalOscillator, loss: LossChannel | None = None) -> float:
    """Expected cov(i1, i2) for unit-efficiency detectors.

    With a shot-noise-limited LO this is T^2 a^2 (1 - V_phi) for joint loss,
    T a^2 (1 - V_phi) for LO-only loss and a^2 (1 - (T V_phi + 1 - T)) for
    signal-only loss. An LO with excess noise is attenuated like any other beam.
    """
    if loss is None:
        loss = LossChannel()
    inp = attenuated_inputs(state, lo, loss)
    return inp.amplitude_sq * (inp.v_lo - inp.v_signal)
