"""File formats: binary records with a text sidecar, config files,
calibration files and CSV result tables."""

from __future__ import annotations

import csv
import io
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .detection import (
    DetectorModel,
    DigitizerConfig,
    Preset,
    SampleRecord,
    Scenario,
    preset_scenario,
)
from .estimators import SnlCalibration
from .gaussian import GaussianState, LocalOscillator, LossChannel, LossMode

MAGIC = b"SQC1"
FORMAT_VERSION = 1
# magic, version (u16), n_samples (u64), flags (u16): 16 bytes in total
_HEADER = struct.Struct("<4sHQH")
HEADER_SIZE = _HEADER.size
FLAG_AC_COUPLED = 1
_PAIR = np.dtype("<f8")


class ConfigError(ValueError):
    """Bad configuration; `key` names the offending entry when known."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class RecordFormatError(ValueError):
    pass


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# key=value text


def parse_key_values(text: str, source: str = "<text>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(None, f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(None, f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def render_key_values(items, header=()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [f"{k}={v}" for k, v in items]
    return "\n".join(lines) + "\n"


def fmt_float(x: float) -> str:
    """Shortest round-tripping text for a float (locale independent)."""
    return repr(float(x))


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# scenario <-> flat config


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text):
    v = int(str(text), 0)
    return v


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _positive(v):
    if not v > 0:
        raise ValueError("must be > 0")


def _nonneg(v):
    if not v >= 0:
        raise ValueError("must be >= 0")


def _unit_interval(v):
    if not 0 <= v <= 1:
        raise ValueError("must lie in [0, 1]")


def _efficiency(v):
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")


def _n_samples(v):
    if v < 2:
        raise ValueError("must be >= 2")


def _seed(v):
    if not 0 <= v <= 2**64 - 1:
        raise ValueError("must be an unsigned 64-bit integer")


# key -> (parser, validator, renderer)
CONFIG_KEYS = {
    "preset": (Preset.parse, None, lambda p: p.value),
    "state.vx": (_float, _positive, fmt_float),
    "state.vy": (_float, _positive, fmt_float),
    "lo.amplitude_sq": (_float, _nonneg, fmt_float),
    "lo.phase_rad": (_float, None, fmt_float),
    "lo.v_lo": (_float, _nonneg, fmt_float),
    "loss.transmission": (_float, _unit_interval, fmt_float),
    "loss.mode": (LossMode.parse, None, lambda m: m.value),
    "det1.efficiency": (_float, _efficiency, fmt_float),
    "det1.en_variance": (_float, _nonneg, fmt_float),
    "det1.label": (str, None, str),
    "det2.efficiency": (_float, _efficiency, fmt_float),
    "det2.en_variance": (_float, _nonneg, fmt_float),
    "det2.label": (str, None, str),
    "digitizer.sample_rate": (_float, _positive, fmt_float),
    "digitizer.bandwidth": (_float, _positive, fmt_float),
    "digitizer.n_samples": (_int, _n_samples, str),
    "digitizer.seed": (_int, _seed, str),
    "digitizer.ac_coupled": (_bool, None, lambda b: "true" if b else "false"),
}


def scenario_to_items(sc: Scenario) -> list:
    vals = {
        "preset": sc.preset_name,
        "state.vx": sc.state.vx,
        "state.vy": sc.state.vy,
        "lo.amplitude_sq": sc.lo.amplitude_sq,
        "lo.phase_rad": sc.lo.phase,
        "lo.v_lo": sc.lo.v_lo,
        "loss.transmission": sc.loss.transmission,
        "loss.mode": sc.loss.mode,
        "det1.efficiency": sc.det1.efficiency,
        "det1.en_variance": sc.det1.en_variance,
        "det1.label": sc.det1.label,
        "det2.efficiency": sc.det2.efficiency,
        "det2.en_variance": sc.det2.en_variance,
        "det2.label": sc.det2.label,
        "digitizer.sample_rate": sc.digitizer.sample_rate,
        "digitizer.bandwidth": sc.digitizer.bandwidth,
        "digitizer.n_samples": sc.digitizer.n_samples,
        "digitizer.seed": sc.digitizer.seed,
        "digitizer.ac_coupled": sc.digitizer.ac_coupled,
    }
    return [(k, CONFIG_KEYS[k][2](vals[k])) for k in CONFIG_KEYS]


def _parse_entries(entries: dict) -> dict:
    parsed = {}
    for key, text in entries.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        parser, check, _ = CONFIG_KEYS[key]
        try:
            v = parser(text)
            if check is not None:
                check(v)
        except ValueError as exc:
            raise ConfigError(key, f"invalid value {text!r} ({exc})") from None
        parsed[key] = v
    return parsed


def build_scenario(entries: dict, overrides: dict | None = None) -> Scenario:
    """Scenario from config entries; overrides win, preset applied first."""
    merged = dict(entries)
    merged.update(overrides or {})
    p = _parse_entries(merged)
    preset = p.get("preset", Preset.CUSTOM)
    base = Scenario() if preset is Preset.CUSTOM else preset_scenario(preset)

    def get(key, default):
        return p.get(key, default)

    mode = get("loss.mode", base.loss.mode)
    if preset is not Preset.CUSTOM and mode is not base.loss.mode:
        # an explicit loss mode override takes the scenario out of the preset
        preset = Preset.CUSTOM
    try:
        state = GaussianState(get("state.vx", base.state.vx), get("state.vy", base.state.vy))
    except ValueError as exc:
        raise ConfigError("state.vx/state.vy", str(exc)) from None
    lo = LocalOscillator(
        get("lo.amplitude_sq", base.lo.amplitude_sq),
        get("lo.phase_rad", base.lo.phase),
        get("lo.v_lo", base.lo.v_lo),
    )
    loss = LossChannel(get("loss.transmission", base.loss.transmission), mode)
    dets = []
    for name, d in (("det1", base.det1), ("det2", base.det2)):
        dets.append(DetectorModel(
            get(f"{name}.efficiency", d.efficiency),
            get(f"{name}.en_variance", d.en_variance),
            get(f"{name}.label", d.label),
        ))
    dg = base.digitizer
    digitizer = DigitizerConfig(
        sample_rate=get("digitizer.sample_rate", dg.sample_rate),
        bandwidth=get("digitizer.bandwidth", dg.bandwidth),
        n_samples=get("digitizer.n_samples", dg.n_samples),
        seed=get("digitizer.seed", dg.seed),
        ac_coupled=get("digitizer.ac_coupled", dg.ac_coupled),
    )
    return Scenario(state, lo, loss, dets[0], dets[1], digitizer, preset)


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    entries = parse_key_values(text, str(path))
    _parse_entries(entries)  # reject unknown keys early
    return entries


def write_config(path, sc: Scenario) -> None:
    atomic_write(path, render_key_values(scenario_to_items(sc)).encode("utf-8"))


# --------------------------------------------------------------------------
# binary records


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def encode_record(rec: SampleRecord) -> bytes:
    flags = FLAG_AC_COUPLED if rec.ac_coupled else 0
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, rec.n, flags)
    payload = np.empty((rec.n, 2), dtype=_PAIR)
    payload[:, 0] = rec.ch1
    payload[:, 1] = rec.ch2
    return header + payload.tobytes()


def decode_record(data: bytes) -> tuple:
    """Return (ch1, ch2, ac_coupled) from raw record bytes."""
    if len(data) < HEADER_SIZE:
        raise RecordFormatError(f"record is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header")
    magic, version, n, flags = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RecordFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise RecordFormatError(f"unsupported format version {version}")
    expected = HEADER_SIZE + 16 * n
    if len(data) != expected:
        raise RecordFormatError(f"record length {len(data)} != {expected} for n_samples={n}")
    if n < 2:
        raise RecordFormatError(f"record holds {n} samples; at least 2 required")
    pairs = np.frombuffer(data, dtype=_PAIR, offset=HEADER_SIZE).reshape(n, 2)
    ch1 = pairs[:, 0].astype(np.float64)
    ch2 = pairs[:, 1].astype(np.float64)
    if not (np.isfinite(ch1).all() and np.isfinite(ch2).all()):
        raise RecordFormatError("record contains non-finite samples")
    return ch1, ch2, bool(flags & FLAG_AC_COUPLED)


def sidecar_items(rec: SampleRecord) -> list:
    items = [
        ("format", "SQC1"),
        ("format_version", str(FORMAT_VERSION)),
        ("n_samples", str(rec.n)),
        ("ac_coupled", "true" if rec.ac_coupled else "false"),
        ("seed", "external" if rec.seed_used is None else str(rec.seed_used)),
    ]
    if rec.scenario is None:
        items.append(("source", "external"))
        return items
    items.append(("source", "simulated"))
    items += [(f"scenario.{k}", v) for k, v in scenario_to_items(rec.scenario)]
    # acquisition timebase in seconds; wall-clock only when pinned
    items.append(("time.start_s", "0.0"))
    items.append(("time.stop_s", fmt_float(rec.n / rec.scenario.digitizer.sample_rate)))
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        items.append(("time.created_unix", str(int(epoch))))
    return items


def write_record(path, rec: SampleRecord, extra_meta=()) -> int:
    """Write record and sidecar atomically; returns the record size in bytes."""
    data = encode_record(rec)
    atomic_write(path, data)
    meta = sidecar_items(rec) + list(extra_meta)
    atomic_write(sidecar_path(path), render_key_values(meta).encode("utf-8"))
    return len(data)


def read_sidecar(path) -> dict:
    p = sidecar_path(path)
    if not p.exists():
        return {}
    return parse_key_values(p.read_text(encoding="utf-8"), str(p))


def read_record(path) -> SampleRecord:
    data = Path(path).read_bytes()
    ch1, ch2, ac = decode_record(data)
    meta = read_sidecar(path)
    scenario = None
    seed = None
    if meta.get("source") == "simulated":
        entries = {k[len("scenario."):]: v for k, v in meta.items() if k.startswith("scenario.")}
        try:
            scenario = build_scenario(entries)
        except ConfigError as exc:
            raise RecordFormatError(f"sidecar scenario is invalid: {exc}") from None
        if scenario.digitizer.n_samples != ch1.size:
            raise RecordFormatError("sidecar n_samples does not match the record")
    if meta.get("seed", "external") != "external":
        seed = int(meta["seed"])
    return SampleRecord(ch1, ch2, scenario=scenario, seed_used=seed, ac_coupled=ac)


# --------------------------------------------------------------------------
# calibration files

_CAL_FORMAT = "sqcorr-snl-1"


def calibration_items(cal: SnlCalibration) -> list:
    return [
        ("format", _CAL_FORMAT),
        ("slope", fmt_float(cal.slope)),
        ("slope_se", fmt_float(cal.slope_se)),
        ("en_total", fmt_float(cal.en_total)),
        ("fit_residual", fmt_float(cal.fit_residual)),
        ("intercept", fmt_float(cal.intercept)),
        ("powers", ",".join(fmt_float(p) for p, _ in cal.power_points)),
        ("variances", ",".join(fmt_float(v) for _, v in cal.power_points)),
    ]


def write_calibration(path, cal: SnlCalibration) -> None:
    atomic_write(path, render_key_values(calibration_items(cal)).encode("utf-8"))


def read_calibration(path) -> SnlCalibration:
    kv = parse_key_values(Path(path).read_text(encoding="utf-8"), str(path))
    if kv.get("format") != _CAL_FORMAT:
        raise RecordFormatError(f"{path}: not a calibration file (format={kv.get('format')!r})")
    try:
        powers = [float(x) for x in kv.get("powers", "").split(",") if x]
        variances = [float(x) for x in kv.get("variances", "").split(",") if x]
        if len(powers) != len(variances):
            raise ValueError("powers and variances differ in length")
        return SnlCalibration(
            slope=float(kv["slope"]),
            en_total=float(kv.get("en_total", "0")),
            fit_residual=float(kv.get("fit_residual", "0")),
            power_points=tuple(zip(powers, variances)),
            slope_se=float(kv.get("slope_se", "0")),
            intercept=float(kv.get("intercept", "0")),
        )
    except (KeyError, ValueError) as exc:
        raise RecordFormatError(f"{path}: malformed calibration ({exc})") from None


# --------------------------------------------------------------------------
# result tables

TABLE_COLUMNS = (
    "cov", "cov_se", "var_diff", "var_diff_se", "s_cov", "s_cov_se", "s_hd", "s_hd_se",
    "lo_power", "cov_expected", "s_true", "s_hd_expected",
)


def sweep_provenance(result) -> list:
    spec = result.spec
    lines = [
        f"sweep={spec.swept.value}",
        f"master_seed={spec.seed}",
        f"seeds_per_point={spec.seeds_per_point}",
        f"samples_per_run={spec.n_samples}",
        f"snl.slope={fmt17(result.snl.slope)}",
        f"snl.en_total={fmt17(result.snl.en_total)}",
    ]
    lines += [f"scenario.{k}={v}" for k, v in scenario_to_items(spec.base)
              if k not in ("digitizer.seed", "digitizer.n_samples")]
    return lines


def sweep_footer(result) -> list:
    if result.spec.swept.value != "attenuation":
        return []
    if result.fit is None:
        return [f"fitted_exponent=refused ({result.fit_error})"]
    f = result.fit
    return [
        f"fitted_exponent={f.exponent:.2f}±{f.exponent_se:.2g}",
        f"fitted_exponent_full={fmt17(f.exponent)}",
        f"fitted_exponent_se={fmt17(f.exponent_se)}",
        f"fitted_amplitude={fmt17(f.amplitude)}",
    ]


def sweep_to_csv(result) -> str:
    buf = io.StringIO(newline="")
    for line in sweep_provenance(result):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((result.spec.swept.column,) + TABLE_COLUMNS + ("witness",))
    for r in result.rows:
        w.writerow([fmt17(r.value)] + [fmt17(getattr(r, c)) for c in TABLE_COLUMNS] + [r.witness])
    for line in sweep_footer(result):
        buf.write(f"# {line}\n")
    return buf.getvalue()


def sweep_to_xy(result) -> str:
    """Whitespace-separated columns for gnuplot or similar tools."""
    cols = ("cov", "cov_se", "s_cov", "s_cov_se", "s_hd", "s_hd_se")
    lines = ["# " + " ".join((result.spec.swept.column,) + cols)]
    for r in result.rows:
        lines.append(" ".join(fmt17(v) for v in (r.value,) + tuple(getattr(r, c) for c in cols)))
    return "\n".join(lines) + "\n"


def read_table(path) -> list:
    """Rows of a result table as dicts (comment lines skipped)."""
    text = Path(path).read_text(encoding="utf-8")
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(body))


def companion_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".dat") if path.suffix != ".dat" else path.with_name(path.name + ".xy")


def write_sweep(path, result) -> None:
    atomic_write(path, sweep_to_csv(result).encode("utf-8"))
    atomic_write(companion_path(path), sweep_to_xy(result).encode("utf-8"))
