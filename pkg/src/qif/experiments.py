"""Sweep configuration, orchestration and result export.

A sweep is described by one JSON document (see :class:`SweepConfig`) and
produces a :class:`ResultTable`. Work is split into fixed-size chunks that
are independent of the number of threads, and every noise trace is drawn
from its own ``(seed, trial)`` stream, so the same config and seed always
give byte-identical CSV output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import OptimizeWarning, curve_fit

from . import __version__
from .cpmg import build_cpmg, simulate_sequence, toggling_function
from .dynamics import Kick, StepConfig, propagate_batch, simulate_batch
from .filters import Center, FilterSpec, ImpulseResponse, design, design_lowpass, modulate_bandpass
from .invariant import ControlFields, aux_from_impulse, fields_from_aux, MODES
from .noise import NoiseModel, synthesize
from .response import SignalSpec, deficit_spectrum, magnus_predict, phase_law

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "NumericalError",
    "ReadoutModel",
    "ResultTable",
    "SweepConfig",
    "run_sweep",
    "duration_decay",
    "amplitude_robustness",
    "export_waveform",
    "emit_plot",
    "fit_stretched_exponential",
]

EXPERIMENTS = ("freq_response", "phase_sweep", "amplitude_sweep", "filter_center_map",
               "cpmg_map", "amplitude_robustness", "duration_decay", "dual_band")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NumericalError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""


# ---------------------------------------------------------------------------
# readout and tables

@dataclass(frozen=True)
class ReadoutModel:
    """Two-preparation contrast readout.

    Counts are the affine map ``S(z) = dark + (bright - dark)(1 + z)/2``.
    Each point is read twice, after preparing ``|0>`` (giving ``S(z)``) and
    ``|1>`` (giving ``S(-z)``, since the evolution is unitary), and the
    contrast is their difference over their mean. When ``bright == -dark``
    the mean vanishes identically; the contrast is then the difference over
    ``bright - dark``, which is ``z`` itself. Disabled models return ``z``.
    """

    bright_level: float = 1.0
    dark_level: float = -1.0
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not self.bright_level > self.dark_level:
            raise ConfigError("readout", "bright_level must exceed dark_level")

    def counts(self, sz):
        sz = np.asarray(sz, dtype=float)
        return self.dark_level + (self.bright_level - self.dark_level) * 0.5 * (1.0 + sz)

    def contrast(self, sz):
        sz = np.asarray(sz, dtype=float)
        if not self.enabled:
            return sz
        s1, s2 = self.counts(sz), self.counts(-sz)
        if self.bright_level + self.dark_level == 0.0:
            return (s1 - s2) / (self.bright_level - self.dark_level)
        return (s1 - s2) / (0.5 * (s1 + s2))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


@dataclass(eq=False)
class ResultTable:
    """Named, equal-length columns plus a metadata dictionary."""

    columns: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lens = {len(v) for v in self.columns.values()}
        if len(lens) > 1:
            raise ValueError(f"columns have unequal lengths {sorted(lens)}")
        self.columns = {k: np.asarray(v) for k, v in self.columns.items()}

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}={json.dumps(self.metadata[k], sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        cols = [self.columns[k] for k in self.names]
        for i in range(self.n_rows):
            w.writerow([_fmt(c[i].item() if hasattr(c[i], "item") else c[i]) for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        def conv(v):
            return v.item() if hasattr(v, "item") else v
        doc = {"metadata": self.metadata,
               "columns": {k: [conv(x) for x in v] for k, v in self.columns.items()}}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                meta[k] = json.loads(v)
            elif line:
                body.append(line)
        rows = list(csv.reader(body))
        if not rows:
            raise ValueError("empty table")
        head, data = rows[0], rows[1:]
        cols = {}
        for j, name in enumerate(head):
            vals = [r[j] for r in data]
            try:
                cols[name] = np.array([int(v) for v in vals], dtype=int)
            except ValueError:
                cols[name] = np.array([float(v) for v in vals])
        return cls(cols, meta)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        return cls({k: np.asarray(v) for k, v in doc["columns"].items()}, doc.get("metadata", {}))


# ---------------------------------------------------------------------------
# configuration

def _axis(name: str, spec, integer: bool = False) -> np.ndarray:
    if isinstance(spec, dict):
        try:
            start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"axes.{name}", "range needs numeric start, stop and step") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"axes.{name}", "need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = np.round(start + step * np.arange(n), 12)
    else:
        try:
            vals = np.asarray(spec, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"axes.{name}", "must be a list of numbers or a range") from None
    if vals.ndim != 1 or vals.size == 0:
        raise ConfigError(f"axes.{name}", "axis is empty")
    if not np.all(np.isfinite(vals)):
        raise ConfigError(f"axes.{name}", "axis values must be finite")
    if integer:
        if np.any(vals != np.round(vals)) or np.any(vals < 1):
            raise ConfigError(f"axes.{name}", "values must be positive integers")
        return vals.astype(int)
    return vals


_DEFAULT_AXES = {
    "freq_response": {"frequency_mhz": {"start": 0.0, "stop": 4.0, "step": 0.01}},
    "dual_band": {"frequency_mhz": {"start": 0.0, "stop": 4.0, "step": 0.01}},
    "phase_sweep": {"phase_rad": list(np.linspace(0, 2 * np.pi, 24, endpoint=False))},
    "amplitude_sweep": {"amplitude": {"start": 0.0, "stop": 3.0, "step": 0.05}},
    "filter_center_map": {"center_mhz": {"start": 0.5, "stop": 3.0, "step": 0.25},
                          "frequency_mhz": {"start": 0.0, "stop": 4.0, "step": 0.01}},
    "cpmg_map": {"n_pulses": [1, 2, 4, 8, 16],
                 "frequency_mhz": {"start": 0.0, "stop": 4.0, "step": 0.01}},
    "amplitude_robustness": {"scale": {"start": 0.5, "stop": 1.5, "step": 0.05}},
    "duration_decay": {"duration_us": [4, 6, 8, 12, 16, 24, 32, 48, 64]},
}

_REQUIRED_AXES = {
    "freq_response": ("frequency_mhz",), "dual_band": ("frequency_mhz",),
    "phase_sweep": ("phase_rad",), "amplitude_sweep": ("amplitude",),
    "filter_center_map": ("center_mhz", "frequency_mhz"),
    "cpmg_map": ("n_pulses", "frequency_mhz"), "amplitude_robustness": ("scale",),
    "duration_decay": ("duration_us",),
}

_OPTIONAL_AXES = {"phase_sweep": ("frequency_mhz",)}

_TOP_KEYS = {"experiment", "seed", "filter", "aux_mode", "peak", "signal", "axes", "noise",
             "trials", "step", "readout", "cpmg", "decay", "chunk", "output"}


def _filter_from(d, experiment: str) -> FilterSpec:
    d = dict(d or {})
    if "f0_mhz" in d:
        f0 = d.pop("f0_mhz")
        phase = d.pop("phase_rad", 0.0)
        f0s = f0 if isinstance(f0, (list, tuple)) else [f0]
        d["centers"] = [{"f0_mhz": f, "phase_rad": phase, "weight": 1.0} for f in f0s]
    if "centers" not in d:
        d["centers"] = ([{"f0_mhz": 1.5}, {"f0_mhz": 2.5}] if experiment == "dual_band"
                        else [{"f0_mhz": 1.35}])
    try:
        return FilterSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("filter", str(exc)) from None


@dataclass(frozen=True, eq=False)
class SweepConfig:
    """Validated sweep description. Build with :meth:`from_dict`."""

    experiment: str
    seed: int
    filter: FilterSpec
    axes: dict
    aux_mode: str = "exact_arcsin"
    peak: float = 0.9
    signal: dict = field(default_factory=dict)
    noise: NoiseModel | None = None
    trials: int = 1
    step: StepConfig = StepConfig()
    readout: ReadoutModel = ReadoutModel()
    cpmg: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    chunk: int = 64
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "SweepConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        exp = d.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {exp!r}")
        s = seed if seed is not None else d.get("seed")
        if s is None:
            raise ConfigError("seed", "a seed is required (config 'seed' or --seed)")
        if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or not 0 <= s < 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        filt = _filter_from(d.get("filter"), exp)
        mode = d.get("aux_mode", "exact_arcsin")
        if mode not in MODES:
            raise ConfigError("aux_mode", f"must be one of {MODES}")
        peak = d.get("peak", 0.9)
        if not isinstance(peak, (int, float)) or not 0 < peak < 1:
            raise ConfigError("peak", "must lie in (0, 1)")
        raw_axes = dict(_DEFAULT_AXES[exp])
        given = d.get("axes") or {}
        if not isinstance(given, dict):
            raise ConfigError("axes", "must be an object")
        allowed = _REQUIRED_AXES[exp] + _OPTIONAL_AXES.get(exp, ())
        for k in given:
            if k not in allowed:
                raise ConfigError(f"axes.{k}", f"not an axis of {exp} (expected {allowed})")
        raw_axes.update(given)
        axes = {k: _axis(k, v, integer=(k == "n_pulses")) for k, v in raw_axes.items()}
        for k in ("frequency_mhz", "center_mhz", "duration_us"):
            if k in axes and np.any(axes[k] < 0 if k == "frequency_mhz" else axes[k] <= 0):
                raise ConfigError(f"axes.{k}", "values out of range")
        sig = dict(d.get("signal") or {})
        bad = set(sig) - {"waveform", "amplitude", "phase_rad", "frequency_mhz"}
        if bad:
            raise ConfigError(f"signal.{sorted(bad)[0]}", "unknown signal key")
        if sig.get("waveform", "cosine") not in ("cosine", "sine"):
            raise ConfigError("signal.waveform", "must be 'cosine' or 'sine'")
        amp = sig.get("amplitude", 0.05)
        if not isinstance(amp, (int, float)) or amp < 0:
            raise ConfigError("signal.amplitude", "must be a non-negative number")
        noise = None
        if d.get("noise") is not None:
            nd = dict(d["noise"])
            nd.setdefault("seed", int(s))
            try:
                noise = NoiseModel.from_dict(nd)
            except (TypeError, ValueError) as exc:
                raise ConfigError("noise", str(exc)) from None
        trials = d.get("trials", 1)
        if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
            raise ConfigError("trials", "must be a positive integer")
        st = dict(d.get("step") or {})
        try:
            step = StepConfig(dt=float(st.get("dt_us", 1e-3)), sampling=st.get("sampling", "midpoint"))
        except (TypeError, ValueError) as exc:
            raise ConfigError("step", str(exc)) from None
        rd = dict(d.get("readout") or {})
        readout = ReadoutModel(float(rd.get("bright_level", 1.0)), float(rd.get("dark_level", -1.0)),
                               bool(rd.get("enabled", False)))
        cp = dict(d.get("cpmg") or {})
        n_p = cp.get("n_pulses", [32] if exp == "amplitude_robustness" else [8, 16])
        n_p = [n_p] if isinstance(n_p, int) else list(n_p)
        if not n_p or any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in n_p):
            raise ConfigError("cpmg.n_pulses", "must be positive integers")
        width = cp.get("width_us", 0.02 if exp == "amplitude_robustness" else 0.0)
        if not isinstance(width, (int, float)) or width < 0:
            raise ConfigError("cpmg.width_us", "must be >= 0")
        scale = cp.get("scale", 1.0)
        if not isinstance(scale, (int, float)) or scale <= 0:
            raise ConfigError("cpmg.scale", "must be positive")
        cpmg = {"n_pulses": n_p, "width_us": float(width), "scale": float(scale)}
        dc = dict(d.get("decay") or {})
        decay = {"f0_scaling": dc.get("f0_scaling", "fixed"),
                 "bandwidth": dc.get("bandwidth", "fractional"),
                 "t1_us": dc.get("t1_us"),
                 "include_free": bool(dc.get("include_free", True))}
        if decay["f0_scaling"] not in ("fixed", "inverse"):
            raise ConfigError("decay.f0_scaling", "must be 'fixed' or 'inverse'")
        if decay["bandwidth"] not in ("fractional", "absolute"):
            raise ConfigError("decay.bandwidth", "must be 'fractional' or 'absolute'")
        if decay["t1_us"] is not None and not (isinstance(decay["t1_us"], (int, float))
                                               and decay["t1_us"] > 0):
            raise ConfigError("decay.t1_us", "must be positive")
        chunk = d.get("chunk", 64)
        if isinstance(chunk, bool) or not isinstance(chunk, int) or chunk < 1:
            raise ConfigError("chunk", "must be a positive integer")
        cfg = cls(exp, int(s), filt, axes, mode, float(peak), {
            "waveform": sig.get("waveform", "sine" if exp == "phase_sweep" else "cosine"),
            "amplitude": float(amp),
            "phase_rad": float(sig.get("phase_rad", 0.0)),
            "frequency_mhz": sig.get("frequency_mhz"),
        }, noise, trials, step, readout, cpmg, decay, chunk, dict(d))
        return cfg

    @classmethod
    def from_json(cls, text: str, seed: int | None = None) -> "SweepConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"not valid JSON ({exc})") from None
        return cls.from_dict(d, seed)

    def to_dict(self) -> dict:
        """Canonical, fully resolved form (used for the config hash)."""
        return {
            "experiment": self.experiment, "seed": self.seed,
            "filter": self.filter.to_dict(), "aux_mode": self.aux_mode, "peak": self.peak,
            "signal": self.signal,
            "axes": {k: [v.item() for v in a] for k, a in self.axes.items()},
            "noise": None if self.noise is None else self.noise.to_dict(),
            "trials": self.trials,
            "step": {"dt_us": self.step.dt, "sampling": self.step.sampling},
            "readout": {"bright_level": self.readout.bright_level,
                        "dark_level": self.readout.dark_level, "enabled": self.readout.enabled},
            "cpmg": self.cpmg, "decay": self.decay, "chunk": self.chunk,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def duration(self) -> float:
        return self.filter.duration


# ---------------------------------------------------------------------------
# shared machinery

def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _qif(spec: FilterSpec, mode: str, peak: float, dt: float):
    try:
        h = design(spec, peak)
        aux = aux_from_impulse(h, mode, dt=dt)
        fields = fields_from_aux(aux)
    except ArithmeticError as exc:
        raise NumericalError(str(exc)) from exc
    return h, aux, fields


def _steps(duration: float, step: StepConfig):
    n = int(round(duration / step.dt))
    if n < 1 or abs(n * step.dt - duration) > 1e-9 * max(1.0, duration):
        raise ConfigError("step.dt_us", f"must divide the protocol duration {duration} us")
    j = np.arange(n)
    t = (j + 0.5) * (duration / n) if step.sampling == "midpoint" else j * (duration / n)
    return n, t


def _noise_block(cfg: SweepConfig, duration: float, n: int) -> np.ndarray | None:
    if cfg.noise is None or cfg.noise.rms_amplitude == 0:
        return None
    dt = duration / n
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            block = np.stack([synthesize(cfg.noise, duration, dt, k).values
                              for k in range(cfg.trials)])
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from None
    if not np.all(np.isfinite(block)):
        raise NumericalError("noise synthesis overflowed")
    return block


def _ensemble(rows: np.ndarray, noise: np.ndarray | None, run: Callable, chunk: int,
              threads: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of the final ``sz`` for each z-perturbation row.

    ``rows`` has shape ``(R, n)``; every row is combined with every noise
    trace. Work is cut into fixed chunks of ``(row, trial)`` pairs.
    """
    r = rows.shape[0]
    k = 1 if noise is None else noise.shape[0]
    total = r * k
    starts = list(range(0, total, chunk))

    def work(s):
        idx = np.arange(s, min(total, s + chunk))
        z = rows[idx // k]
        if noise is not None:
            z = z + noise[idx % k]
        return run(z)[:, 2]

    sz = np.concatenate(_pmap(work, starts, threads)).reshape(r, k)
    if not np.all(np.isfinite(sz)):
        raise NumericalError("simulation produced non-finite expectations")
    mean = sz.mean(axis=1)
    sem = sz.std(axis=1, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(r)
    return mean, sem


def _probe(cfg: SweepConfig, freqs, t, duration, amplitude: float | None = None) -> np.ndarray:
    amp = cfg.signal["amplitude"] if amplitude is None else amplitude
    arg = 2 * np.pi * np.asarray(freqs, float)[:, None] * (t - 0.5 * duration)[None, :] \
        + cfg.signal["phase_rad"]
    return amp * (np.cos(arg) if cfg.signal["waveform"] == "cosine" else np.sin(arg))


def _meta(cfg: SweepConfig, **extra) -> dict:
    m = {"experiment": cfg.experiment, "seed": cfg.seed, "config_hash": cfg.config_hash(),
         "code_version": __version__}
    m.update(extra)
    return m


def _qif_runner(fields: ControlFields, step: StepConfig, scale: float = 1.0):
    return lambda z: simulate_batch(fields, z, step, scale=scale)


# ---------------------------------------------------------------------------
# experiments

def _freq_response(cfg: SweepConfig, threads: int) -> ResultTable:
    freqs = cfg.axes["frequency_mhz"]
    h, aux, fields = _qif(cfg.filter, cfg.aux_mode, cfg.peak, cfg.step.dt)
    n, t = _steps(cfg.duration, cfg.step)
    rows = _probe(cfg, freqs, t, cfg.duration)
    noise = _noise_block(cfg, cfg.duration, n)
    sz, sem = _ensemble(rows, noise, _qif_runner(fields, cfg.step), cfg.chunk, threads)
    pred = deficit_spectrum(aux, freqs, cfg.signal["amplitude"], cfg.signal["waveform"],
                            cfg.signal["phase_rad"])
    mag = np.array([magnus_predict(aux, SignalSpec(cfg.signal["waveform"], f, cfg.signal["phase_rad"],
                                                   cfg.signal["amplitude"])).sz for f in freqs])
    cols = {"frequency_mhz": freqs, "sz": sz, "sz_sem": sem,
            "contrast": cfg.readout.contrast(sz), "deficit": 1.0 - sz,
            "predicted_deficit": pred, "magnus_sz": mag}
    return ResultTable(cols, _meta(cfg, kernel_warnings=list(h.warnings)))


def _phase_kernel(spec: FilterSpec, phase: float, peak: float):
    c = spec.centers[0]
    s = FilterSpec(kind="bandpass", centers=(Center(c.f0, phase, c.weight),), cutoff=spec.cutoff,
                   duration=spec.duration, taps=spec.taps, sample_rate=spec.sample_rate,
                   window=spec.window)
    theta = design_lowpass(s)
    mod = modulate_bandpass(theta, c.f0, phase)
    k = peak / mod.peak
    return s, ImpulseResponse(theta.samples * k, theta.duration)


def _phase_sweep(cfg: SweepConfig, threads: int) -> ResultTable:
    if cfg.filter.kind != "bandpass":
        raise ConfigError("filter", "phase_sweep needs a single-band filter")
    phases = cfg.axes["phase_rad"]
    f0 = cfg.filter.centers[0].f0
    freqs = cfg.axes.get("frequency_mhz")
    fr = np.array([f0]) if freqs is None else freqs
    n, t = _steps(cfg.duration, cfg.step)
    noise = _noise_block(cfg, cfg.duration, n)
    out = {k: [] for k in ("phase_rad", "frequency_mhz", "sz", "sz_sem", "deficit",
                           "predicted_deficit", "phase_law")}
    amp = cfg.signal["amplitude"]
    for ph in phases:
        spec, env = _phase_kernel(cfg.filter, float(ph), cfg.peak)
        _, aux, fields = _qif(spec, cfg.aux_mode, cfg.peak, cfg.step.dt)
        rows = _probe(cfg, fr, t, cfg.duration)
        sz, sem = _ensemble(rows, noise, _qif_runner(fields, cfg.step), cfg.chunk, threads)
        pred = deficit_spectrum(aux, fr, amp, cfg.signal["waveform"], cfg.signal["phase_rad"])
        if cfg.signal["waveform"] == "sine" and cfg.signal["phase_rad"] == 0.0 and f0 > 0:
            law = float(0.5 * phase_law(env, f0, [ph], SignalSpec("sine", f0, 0.0, amp))[0])
        else:
            law = float("nan")
        out["phase_rad"] += [float(ph)] * fr.size
        out["frequency_mhz"] += list(fr)
        out["sz"] += list(sz)
        out["sz_sem"] += list(sem)
        out["deficit"] += list(1.0 - sz)
        out["predicted_deficit"] += list(pred)
        out["phase_law"] += [law if f == f0 else float("nan") for f in fr]
    cols = {k: np.asarray(v) for k, v in out.items()}
    cols["contrast"] = cfg.readout.contrast(cols["sz"])
    order = ["phase_rad", "frequency_mhz", "sz", "sz_sem", "contrast", "deficit",
             "predicted_deficit", "phase_law"]
    return ResultTable({k: cols[k] for k in order}, _meta(cfg))


def _amplitude_sweep(cfg: SweepConfig, threads: int) -> ResultTable:
    amps = cfg.axes["amplitude"]
    f = cfg.signal["frequency_mhz"]
    f = cfg.filter.centers[0].f0 if f is None else float(f)
    h, aux, fields = _qif(cfg.filter, cfg.aux_mode, cfg.peak, cfg.step.dt)
    n, t = _steps(cfg.duration, cfg.step)
    shape = _probe(cfg, [f], t, cfg.duration, amplitude=1.0)[0]
    rows = amps[:, None] * shape[None, :]
    noise = _noise_block(cfg, cfg.duration, n)
    sz, sem = _ensemble(rows, noise, _qif_runner(fields, cfg.step), cfg.chunk, threads)
    sig = [SignalSpec(cfg.signal["waveform"], f, cfg.signal["phase_rad"], float(a)) for a in amps]
    pred = np.array([deficit_spectrum(aux, [f], float(a), cfg.signal["waveform"],
                                      cfg.signal["phase_rad"])[0] for a in amps])
    mag = np.array([magnus_predict(aux, s).sz for s in sig])
    cols = {"amplitude": amps, "sz": sz, "sz_sem": sem, "contrast": cfg.readout.contrast(sz),
            "deficit": 1.0 - sz, "predicted_deficit": pred, "magnus_sz": mag}
    return ResultTable(cols, _meta(cfg, probe_frequency_mhz=f))


def _center_map(cfg: SweepConfig, threads: int) -> ResultTable:
    centers, freqs = cfg.axes["center_mhz"], cfg.axes["frequency_mhz"]
    n, t = _steps(cfg.duration, cfg.step)
    noise = _noise_block(cfg, cfg.duration, n)
    rows = _probe(cfg, freqs, t, cfg.duration)
    out = {k: [] for k in ("center_mhz", "frequency_mhz", "sz", "sz_sem", "predicted_deficit")}
    for c in centers:
        spec = FilterSpec(kind="bandpass", centers=(Center(float(c)),), cutoff=cfg.filter.cutoff,
                          duration=cfg.filter.duration, taps=cfg.filter.taps,
                          sample_rate=cfg.filter.sample_rate, window=cfg.filter.window)
        _, aux, fields = _qif(spec, cfg.aux_mode, cfg.peak, cfg.step.dt)
        sz, sem = _ensemble(rows, noise, _qif_runner(fields, cfg.step), cfg.chunk, threads)
        out["center_mhz"] += [float(c)] * freqs.size
        out["frequency_mhz"] += list(freqs)
        out["sz"] += list(sz)
        out["sz_sem"] += list(sem)
        out["predicted_deficit"] += list(deficit_spectrum(aux, freqs, cfg.signal["amplitude"],
                                                          cfg.signal["waveform"],
                                                          cfg.signal["phase_rad"]))
    sz = np.asarray(out["sz"])
    cols = {"center_mhz": np.asarray(out["center_mhz"]),
            "frequency_mhz": np.asarray(out["frequency_mhz"]),
            "sz": sz, "sz_sem": np.asarray(out["sz_sem"]), "contrast": cfg.readout.contrast(sz),
            "deficit": 1.0 - sz, "predicted_deficit": np.asarray(out["predicted_deficit"])}
    return ResultTable(cols, _meta(cfg))


def _cpmg_map(cfg: SweepConfig, threads: int) -> ResultTable:
    ns, freqs = cfg.axes["n_pulses"], cfg.axes["frequency_mhz"]
    dur = cfg.duration
    n, t = _steps(dur, cfg.step)
    noise = _noise_block(cfg, dur, n)
    rows = _probe(cfg, freqs, t, dur)
    amp = cfg.signal["amplitude"]
    out = {k: [] for k in ("n_pulses", "frequency_mhz", "sz", "sz_sem", "predicted_deficit")}
    for npulse in ns:
        try:
            seq = build_cpmg(int(npulse), dur, cfg.cpmg["width_us"], cfg.cpmg["scale"])
        except ValueError as exc:
            raise ConfigError("cpmg", str(exc)) from None
        sz, sem = _ensemble(rows, noise, lambda z, s=seq: simulate_sequence(s, z, dur / n),
                            cfg.chunk, threads)
        y = toggling_function(seq, t)
        phi = rows @ y * (dur / n)
        out["n_pulses"] += [int(npulse)] * freqs.size
        out["frequency_mhz"] += list(freqs)
        out["sz"] += list(sz)
        out["sz_sem"] += list(sem)
        out["predicted_deficit"] += list(1.0 - np.cos(phi))
    sz = np.asarray(out["sz"])
    cols = {"n_pulses": np.asarray(out["n_pulses"], dtype=int),
            "frequency_mhz": np.asarray(out["frequency_mhz"]),
            "sz": sz, "sz_sem": np.asarray(out["sz_sem"]), "contrast": cfg.readout.contrast(sz),
            "deficit": 1.0 - sz, "predicted_deficit": np.asarray(out["predicted_deficit"])}
    return ResultTable(cols, _meta(cfg, signal_amplitude=amp))


def amplitude_robustness(cfg: SweepConfig, threads: int = 1) -> ResultTable:
    """Final ``sz`` versus drive-amplitude scale for QIF and a CPMG train.

    QIF fields are multiplied by ``s``; every CPMG rotation (pulses and the
    framing pi/2 turns) is multiplied by ``s``. No probe signal is applied.
    """
    scales = cfg.axes["scale"]
    dur = cfg.duration
    n, t = _steps(dur, cfg.step)
    noise = _noise_block(cfg, dur, n)
    _, _, fields = _qif(cfg.filter, cfg.aux_mode, cfg.peak, cfg.step.dt)
    zero = np.zeros((1, n))
    npulse = cfg.cpmg["n_pulses"][0]
    q_sz, q_se, c_sz, c_se = [], [], [], []
    for s in scales:
        m, e = _ensemble(zero, noise, _qif_runner(fields, cfg.step, float(s)), cfg.chunk, threads)
        q_sz.append(m[0])
        q_se.append(e[0])
        try:
            seq = build_cpmg(npulse, dur, cfg.cpmg["width_us"], float(s))
        except ValueError as exc:
            raise ConfigError("cpmg", str(exc)) from None
        m, e = _ensemble(zero, noise, lambda z, q=seq: simulate_sequence(q, z, dur / n),
                         cfg.chunk, threads)
        c_sz.append(m[0])
        c_se.append(e[0])
    q, c = np.asarray(q_sz), np.asarray(c_sz)
    cols = {"scale": scales, "qif_sz": q, "qif_sem": np.asarray(q_se),
            "qif_contrast": cfg.readout.contrast(q), "cpmg_sz": c, "cpmg_sem": np.asarray(c_se),
            "cpmg_contrast": cfg.readout.contrast(c)}
    return ResultTable(cols, _meta(cfg, cpmg_pulses=npulse, cpmg_width_us=cfg.cpmg["width_us"]))


def fit_stretched_exponential(t, y) -> tuple[float, float]:
    """Fit ``y = exp(-(t/T)^p)`` and return ``(T, p)``; ``T`` is the 1/e time.

    The exponent is bounded to ``[0.5, 4]``. Returns ``(nan, nan)`` if the
    fit does not converge.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    below = np.where(y < np.exp(-1))[0]
    t0 = t[below[0]] if below.size else 10 * t[-1]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            p, _ = curve_fit(lambda x, T, k: np.exp(-(x / T) ** k), t, y, p0=(t0, 2.0),
                             bounds=([1e-6, 0.5], [1e9, 4.0]), maxfev=20000)
    except (RuntimeError, ValueError):
        return float("nan"), float("nan")
    return float(p[0]), float(p[1])


def _decay_spec(cfg: SweepConfig, duration: float) -> FilterSpec:
    ref = cfg.filter.duration
    c = cfg.filter.centers[0]
    f0 = c.f0 * ref / duration if cfg.decay["f0_scaling"] == "inverse" else c.f0
    cut = cfg.filter.cutoff * ref / duration if cfg.decay["bandwidth"] == "fractional" \
        else cfg.filter.cutoff
    return FilterSpec.make(f0, phase=c.phase, cutoff=cut, duration=duration,
                           sample_rate=cfg.filter.sample_rate, window=cfg.filter.window)


def duration_decay(cfg: SweepConfig, threads: int = 1) -> ResultTable:
    """Coherence versus total duration for QIF, CPMG trains and free evolution.

    For each duration the filter is redesigned (centre fixed or scaled as
    ``1/t_f``; bandwidth absolute or a fixed fraction), the CPMG spacing is
    rescaled, and every protocol sees the same noise traces. Free evolution
    is a Ramsey sequence closed by the inverse pi/2 turn. Fitted 1/e times
    of a stretched exponential are stored in the metadata.
    """
    durs = cfg.axes["duration_us"]
    ns = cfg.cpmg["n_pulses"]
    names = ["qif"] + [f"cpmg{n}" for n in ns] + (["free"] if cfg.decay["include_free"] else [])
    res = {k: ([], []) for k in names}
    for dur in durs:
        dur = float(dur)
        n, t = _steps(dur, cfg.step)
        noise = _noise_block(cfg, dur, n)
        zero = np.zeros((1, n))
        try:
            spec = _decay_spec(cfg, dur)
        except ValueError as exc:
            raise ConfigError("decay", str(exc)) from None
        _, _, fields = _qif(spec, cfg.aux_mode, cfg.peak, cfg.step.dt)
        runners = {"qif": _qif_runner(fields, cfg.step)}
        for npulse in ns:
            try:
                seq = build_cpmg(npulse, dur, cfg.cpmg["width_us"], cfg.cpmg["scale"])
            except ValueError as exc:
                raise ConfigError("cpmg", str(exc)) from None
            runners[f"cpmg{npulse}"] = lambda z, q=seq, d=dur / n: simulate_sequence(q, z, d)
        if "free" in names:
            kicks = (Kick(0.0, 0.5 * np.pi), Kick(dur, -0.5 * np.pi))
            runners["free"] = lambda z, d=dur / n, k=kicks: propagate_batch(0.0, 0.0, z, d, k)
        for name in names:
            m, e = _ensemble(zero, noise, runners[name], cfg.chunk, threads)
            res[name][0].append(m[0])
            res[name][1].append(e[0])
    cols = {"duration_us": durs}
    env = np.ones(len(durs))
    if cfg.decay["t1_us"] is not None:
        env = np.exp(-np.asarray(durs, float) / cfg.decay["t1_us"])
        cols["t1_envelope"] = env
    meta = {}
    for name in names:
        y = np.asarray(res[name][0]) * env
        cols[f"{name}_sz"] = y
        cols[f"{name}_sem"] = np.asarray(res[name][1]) * env
        T, p = fit_stretched_exponential(durs, y)
        meta[f"decay_time_us_{name}"] = T
        meta[f"stretch_{name}"] = p
    return ResultTable(cols, _meta(cfg, **meta))


_RUNNERS = {
    "freq_response": _freq_response,
    "dual_band": _freq_response,
    "phase_sweep": _phase_sweep,
    "amplitude_sweep": _amplitude_sweep,
    "filter_center_map": _center_map,
    "cpmg_map": _cpmg_map,
    "amplitude_robustness": amplitude_robustness,
    "duration_decay": duration_decay,
}


def run_sweep(cfg: SweepConfig, threads: int = 1) -> ResultTable:
    """Run the experiment named in ``cfg`` and return its table."""
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    table = _RUNNERS[cfg.experiment](cfg, threads)
    for name in table.names:
        col = table[name]
        if name.endswith("sz") and not np.all(np.isfinite(col)):
            raise NumericalError(f"non-finite values in column {name}")
    return table


# ---------------------------------------------------------------------------
# waveform export

WAVEFORM_STEPS_NS = (4, 8, 16, 32)


def export_waveform(fields: ControlFields, dt_out: int = 4, max_samples: int = 65536) -> str:
    """Render ``eps(t)`` as a fixed-step waveform file.

    Samples are taken at bin midpoints from the monotone-cubic interpolant.
    When the sample count exceeds ``max_samples`` the step is coarsened to
    16 ns and then 32 ns, and the header records the change.

    Raises
    ------
    ConfigError
        For an unsupported step, a duration that is not a whole number of
        steps, or a waveform still too long at 32 ns.
    """
    if dt_out not in WAVEFORM_STEPS_NS:
        raise ConfigError("dt_ns", f"must be one of {WAVEFORM_STEPS_NS}")
    if max_samples < 1:
        raise ConfigError("max_samples", "must be positive")
    dur_ns = fields.duration * 1000.0
    ladder = [dt_out] + [s for s in (16, 32) if s > dt_out]
    chosen = None
    for step in ladder:
        count = dur_ns / step
        if abs(count - round(count)) > 1e-6:
            raise ConfigError("dt_ns", f"{step} ns does not divide the duration {dur_ns:g} ns")
        if round(count) <= max_samples:
            chosen, n = step, int(round(count))
            break
    if chosen is None:
        raise ConfigError("max_samples", f"{int(round(dur_ns / 32))} samples at 32 ns exceed "
                                         f"the limit of {max_samples}")
    t = (np.arange(n) + 0.5) * chosen * 1e-3 + fields.grid[0]
    vals = PchipInterpolator(fields.grid, fields.epsilon)(t)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite waveform samples")
    lines = ["# qif-waveform v1", f"# dt_ns={chosen}", f"# n_samples={n}", "# units=rad_per_us"]
    if chosen != dt_out:
        lines.append(f"# decimated_from_dt_ns={dt_out}")
    lines += ["%.9g" % v for v in vals]
    return "\n".join(lines) + "\n"


def read_waveform(text: str) -> tuple[dict, np.ndarray]:
    head, vals = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            head[k] = v
        elif line:
            vals.append(float(line))
    return head, np.asarray(vals)


# ---------------------------------------------------------------------------
# plots

def emit_plot(table: ResultTable, kind: str = "line", path: str | os.PathLike | None = None,
              x: str | None = None, y: Sequence[str] | None = None, z: str | None = None) -> str:
    """Write an SVG rendering of ``table`` and return its text.

    ``line`` plots ``y`` columns against ``x`` (default: first column against
    the measured and predicted curves); ``heatmap`` needs two axis columns
    forming a full grid and colours them by ``z`` (default ``deficit``).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if table.n_rows == 0:
        raise ValueError("cannot plot an empty table")
    if kind not in ("line", "heatmap"):
        raise ValueError("kind must be 'line' or 'heatmap'")
    names = table.names
    if x is None:
        x = "frequency_mhz" if kind == "heatmap" and "frequency_mhz" in names else names[0]
    if x not in table.columns:
        raise ValueError(f"no column {x!r}")
    matplotlib.rcParams["svg.hashsalt"] = "qif"
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "line":
        if y is None:
            y = [c for c in ("deficit", "predicted_deficit") if c in names] or \
                [c for c in names if c.endswith("sz") and c != x]
        for c in y:
            if c not in table.columns:
                raise ValueError(f"no column {c!r}")
            style = "--" if c.startswith("predicted") or c.startswith("magnus") else "-"
            ax.plot(table[x], table[c], style, label=c)
        ax.set_xlabel(x)
        ax.legend()
    else:
        y = (y[0] if y else None) or next((c for c in ("center_mhz", "phase_rad", "n_pulses")
                                            if c in names and c != x), None)
        z = z or "deficit"
        for c in (y, z):
            if c is None or c not in table.columns:
                raise ValueError("heatmap needs two axis columns and a value column")
        xs, ys = np.unique(table[x]), np.unique(table[y])
        if xs.size * ys.size != table.n_rows:
            raise ValueError("table is not a full grid over the two axes")
        grid = np.full((ys.size, xs.size), np.nan)
        grid[np.searchsorted(ys, table[y]), np.searchsorted(xs, table[x])] = table[z]
        mesh = ax.pcolormesh(xs, ys, grid, shading="nearest")
        fig.colorbar(mesh, ax=ax, label=z)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
