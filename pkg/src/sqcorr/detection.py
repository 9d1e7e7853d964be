"""Two-detector photocurrent simulation.

Each sample follows the linearised photocurrent model

    i_1,2 = 1/2 a^2 + a (x_LO +/- x_phi) + e_1,2

with the loss channel applied to the optical inputs first and each
detector's quantum efficiency acting as an extra beamsplitter loss on its
own input (which admits an independent vacuum term per detector).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gaussian import (
    GaussianState,
    LocalOscillator,
    LossChannel,
    LossMode,
    apply_loss_to_variance,
    attenuated_inputs,
)

# Chunk boundaries are fixed so a record never depends on the worker count.
CHUNK_SIZE = 1 << 16
_N_STREAMS = 6  # LO, signal, vacuum at det1, vacuum at det2, EN det1, EN det2
MAX_SEED = 2**64 - 1


class Preset(str, enum.Enum):
    OPA = "opa"
    KERR = "kerr"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, text: str) -> "Preset":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown preset {text!r}; expected opa, kerr or custom") from None


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    en_variance: float = 0.0
    label: str = ""

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"detector efficiency must lie in (0, 1], got {self.efficiency}")
        if not self.en_variance >= 0.0:
            raise ValueError(f"en_variance must be >= 0, got {self.en_variance}")


@dataclass(frozen=True)
class DigitizerConfig:
    sample_rate: float = 2e6
    bandwidth: float = 150e3
    n_samples: int = 1_000_000
    seed: int = 0
    ac_coupled: bool = True

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ValueError(f"n_samples must be an integer >= 2, got {self.n_samples}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 <= int(self.seed) <= MAX_SEED or int(self.seed) != self.seed:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


_PRESET_LOSS = {Preset.OPA: LossMode.LO_ONLY, Preset.KERR: LossMode.BOTH}


@dataclass(frozen=True)
class Scenario:
    state: GaussianState = field(default_factory=GaussianState)
    lo: LocalOscillator = field(default_factory=LocalOscillator)
    loss: LossChannel = field(default_factory=LossChannel)
    det1: DetectorModel = field(default_factory=lambda: DetectorModel(label="D1"))
    det2: DetectorModel = field(default_factory=lambda: DetectorModel(label="D2"))
    digitizer: DigitizerConfig = field(default_factory=DigitizerConfig)
    preset_name: Preset = Preset.CUSTOM

    def __post_init__(self):
        want = _PRESET_LOSS.get(self.preset_name)
        if want is not None and self.loss.mode is not want:
            raise ValueError(
                f"preset {self.preset_name.value} requires loss mode {want.value}, "
                f"got {self.loss.mode.value}"
            )

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, digitizer=replace(self.digitizer, seed=int(seed)))

    def with_samples(self, n: int) -> "Scenario":
        return replace(self, digitizer=replace(self.digitizer, n_samples=int(n)))

    def with_phase(self, phase: float) -> "Scenario":
        return replace(self, lo=replace(self.lo, phase=float(phase)))

    def with_lo_power(self, amplitude_sq: float) -> "Scenario":
        return replace(self, lo=replace(self.lo, amplitude_sq=float(amplitude_sq)))

    def with_transmission(self, t: float) -> "Scenario":
        return replace(self, loss=replace(self.loss, transmission=float(t)))

    def with_en(self, en1: float, en2: float | None = None) -> "Scenario":
        en2 = en1 if en2 is None else en2
        return replace(
            self,
            det1=replace(self.det1, en_variance=float(en1)),
            det2=replace(self.det2, en_variance=float(en2)),
        )

    def blocked_signal(self) -> "Scenario":
        """Signal input replaced by vacuum (shot-noise reference)."""
        return replace(self, state=GaussianState.vacuum())

    def dark(self) -> "Scenario":
        """All optical inputs blocked: only electronic noise remains."""
        return replace(self.blocked_signal(), lo=replace(self.lo, amplitude_sq=0.0))


def preset_scenario(name, **overrides) -> Scenario:
    """Scenario mirroring one of the two measurement setups.

    Squeezing levels are editable defaults, not measured values:
    OPA uses a nearly pure -3 dB state, Kerr a -4 dB state with a strongly
    inflated antisqueezed quadrature.
    """
    preset = name if isinstance(name, Preset) else Preset.parse(str(name))
    if preset is Preset.OPA:
        sc = Scenario(
            state=GaussianState(0.5, 2.1),
            lo=LocalOscillator(amplitude_sq=100.0),
            loss=LossChannel(1.0, LossMode.LO_ONLY),
            det1=DetectorModel(1.0, 20.0, "D1"),
            det2=DetectorModel(1.0, 20.0, "D2"),
            digitizer=DigitizerConfig(sample_rate=2e6, bandwidth=150e3),
            preset_name=Preset.OPA,
        )
    elif preset is Preset.KERR:
        sc = Scenario(
            state=GaussianState(0.4, 20.0),
            lo=LocalOscillator(amplitude_sq=100.0),
            loss=LossChannel(1.0, LossMode.BOTH),
            det1=DetectorModel(0.98, 20.0, "D1"),
            det2=DetectorModel(0.98, 20.0, "D2"),
            digitizer=DigitizerConfig(sample_rate=2e7, bandwidth=3e6),
            preset_name=Preset.KERR,
        )
    else:
        raise ValueError("preset_scenario expects opa or kerr")
    return replace(sc, **overrides) if overrides else sc


def direct_split_scenario(beam_variance: float, power: float, en_variance: float = 0.0,
                          n_samples: int = 1_000_000, seed: int = 0) -> Scenario:
    """A beam split 50/50 onto two detectors with no LO.

    The beam itself takes the LO slot (mean intensity `power`, amplitude
    noise `beam_variance`) and the open beamsplitter port sees vacuum.
    """
    return Scenario(
        state=GaussianState.vacuum(),
        lo=LocalOscillator(amplitude_sq=power, phase=0.0, v_lo=beam_variance),
        loss=LossChannel(1.0, LossMode.BOTH),
        det1=DetectorModel(1.0, en_variance, "D1"),
        det2=DetectorModel(1.0, en_variance, "D2"),
        digitizer=DigitizerConfig(n_samples=n_samples, seed=seed),
    )


@dataclass(frozen=True)
class ExpectedMoments:
    mean1: float
    mean2: float
    var1: float
    var2: float
    cov: float
    var_diff: float


def expected_moments(sc: Scenario) -> ExpectedMoments:
    """Exact first and second moments of the simulated photocurrents."""
    inp = attenuated_inputs(sc.state, sc.lo, sc.loss)
    a2, vl, vs = inp.amplitude_sq, inp.v_lo, inp.v_signal
    e1, e2 = sc.det1.efficiency, sc.det2.efficiency
    n1, n2 = sc.det1.en_variance, sc.det2.en_variance
    # the efficiency-vacuum term has variance 2 a^2 eta (1 - eta)
    var1 = e1 * e1 * a2 * (vl + vs) + 2 * a2 * e1 * (1 - e1) + n1
    var2 = e2 * e2 * a2 * (vl + vs) + 2 * a2 * e2 * (1 - e2) + n2
    cov = e1 * e2 * a2 * (vl - vs)
    if sc.digitizer.ac_coupled:
        m1 = m2 = 0.0
    else:
        m1, m2 = 0.5 * e1 * a2, 0.5 * e2 * a2
    return ExpectedMoments(m1, m2, var1, var2, cov, var1 + var2 - 2 * cov)


def effective_efficiency(sc: Scenario) -> float:
    e1, e2 = sc.det1.efficiency, sc.det2.efficiency
    return 2 * e1 * e2 / (e1 + e2)


def detected_variance(sc: Scenario) -> float:
    """Quadrature variance the estimators should report for this scenario.

    This is the rotated signal variance after the loss channel and after the
    (harmonic-mean) detector efficiency, i.e. what a perfect measurement
    normalised to the shot-noise level of the same detectors would find.
    """
    inp = attenuated_inputs(sc.state, sc.lo, sc.loss)
    return apply_loss_to_variance(inp.v_signal, effective_efficiency(sc))


def nominal_snl_slope(sc: Scenario) -> float:
    """Difference-current variance per unit LO power with vacuum input."""
    return 2.0 * (sc.det1.efficiency + sc.det2.efficiency)


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """Two synchronised photocurrent channels.

    `scenario` is None for records that were read from disk without a
    reconstructable scenario (external data).
    """

    ch1: np.ndarray
    ch2: np.ndarray
    scenario: Scenario | None = None
    seed_used: int | None = None
    ac_coupled: bool = True

    def __post_init__(self):
        ch1 = np.ascontiguousarray(self.ch1, dtype=np.float64)
        ch2 = np.ascontiguousarray(self.ch2, dtype=np.float64)
        if ch1.ndim != 1 or ch1.shape != ch2.shape:
            raise ValueError("channels must be 1-D arrays of equal length")
        if ch1.size < 2:
            raise ValueError("a record needs at least 2 samples")
        if not (np.isfinite(ch1).all() and np.isfinite(ch2).all()):
            raise ValueError("record contains non-finite samples")
        ch1.flags.writeable = False
        ch2.flags.writeable = False
        object.__setattr__(self, "ch1", ch1)
        object.__setattr__(self, "ch2", ch2)

    @property
    def n(self) -> int:
        return self.ch1.size

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.ac_coupled == other.ac_coupled
            and np.array_equal(self.ch1.view(np.uint64), other.ch1.view(np.uint64))
            and np.array_equal(self.ch2.view(np.uint64), other.ch2.view(np.uint64))
        )

    __hash__ = None


def _chunk_generators(seed: int, chunk: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed, spawn_key=(chunk,))
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(_N_STREAMS)]


class _Kernel:
    """Per-sample coefficients; fills one chunk of both channels."""

    def __init__(self, sc: Scenario):
        inp = attenuated_inputs(sc.state, sc.lo, sc.loss)
        a = math.sqrt(inp.amplitude_sq)
        e1, e2 = sc.det1.efficiency, sc.det2.efficiency
        self.seed = int(sc.digitizer.seed)
        self.sd_lo = a * math.sqrt(inp.v_lo)
        self.sd_sig = a * math.sqrt(inp.v_signal)
        self.eff = (e1, e2)
        self.sd_vac = (a * math.sqrt(2 * e1 * (1 - e1)), a * math.sqrt(2 * e2 * (1 - e2)))
        self.sd_el = (math.sqrt(sc.det1.en_variance), math.sqrt(sc.det2.en_variance))
        if sc.digitizer.ac_coupled:
            self.dc = (0.0, 0.0)
        else:
            self.dc = (0.5 * e1 * inp.amplitude_sq, 0.5 * e2 * inp.amplitude_sq)

    def fill(self, chunk: int, out1: np.ndarray, out2: np.ndarray) -> None:
        m = out1.size
        g_lo, g_sig, g_v1, g_v2, g_e1, g_e2 = _chunk_generators(self.seed, chunk)
        e1, e2 = self.eff
        out1.fill(0.0)
        out2.fill(0.0)
        if self.sd_lo > 0:
            x = g_lo.standard_normal(m)
            x *= self.sd_lo
            out1 += e1 * x
            out2 += e2 * x
        if self.sd_sig > 0:
            x = g_sig.standard_normal(m)
            x *= self.sd_sig
            out1 += e1 * x
            out2 -= e2 * x
        for out, g_vac, sd_vac, g_el, sd_el, dc in (
            (out1, g_v1, self.sd_vac[0], g_e1, self.sd_el[0], self.dc[0]),
            (out2, g_v2, self.sd_vac[1], g_e2, self.sd_el[1], self.dc[1]),
        ):
            if sd_vac > 0:
                out += sd_vac * g_vac.standard_normal(m)
            if sd_el > 0:
                out += sd_el * g_el.standard_normal(m)
            if dc:
                out += dc


def simulate_record(scenario: Scenario, workers: int = 1) -> SampleRecord:
    """Draw a two-channel record for `scenario`.

    The output is bit-identical for a given scenario and seed whatever the
    value of `workers`: every chunk of CHUNK_SIZE samples draws from its own
    streams derived from (seed, chunk index).
    """
    n = int(scenario.digitizer.n_samples)
    if n < 2:
        raise ValueError("n_samples must be >= 2")
    kernel = _Kernel(scenario)
    ch1 = np.empty(n)
    ch2 = np.empty(n)
    starts = range(0, n, CHUNK_SIZE)

    def job(k):
        lo = k * CHUNK_SIZE
        hi = min(lo + CHUNK_SIZE, n)
        kernel.fill(k, ch1[lo:hi], ch2[lo:hi])

    if workers <= 1:
        for k in range(len(starts)):
            job(k)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(len(starts))))
    return SampleRecord(
        ch1,
        ch2,
        scenario=scenario,
        seed_used=int(scenario.digitizer.seed),
        ac_coupled=scenario.digitizer.ac_coupled,
    )
