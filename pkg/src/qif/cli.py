"""Command-line entry point (``qif``).

Exit status is 0 on success, 2 for invalid configuration or arguments and
3 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cpmg import build_cpmg, cpmg_filter_response
from .dynamics import StepConfig, simulate_protocol
from .experiments import (EXPERIMENTS, ConfigError, NumericalError, ResultTable, SweepConfig,
                          _filter_from, _qif, emit_plot, export_waveform, run_sweep)
from .filters import transfer_function
from .noise import NoiseModel, synthesize
from .response import SignalSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path} ({exc.strerror})") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError("config", "must be a JSON object")
    return d


def _emit(text: str, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _table(cols: dict, meta: dict, fmt: str) -> str:
    t = ResultTable(cols, meta)
    return t.to_json() if fmt == "json" else t.to_csv()


def _filter_spec(d: dict, args):
    f = dict(d.get("filter") or {})
    if args.f0 is not None:
        f["f0_mhz"] = args.f0
        f.pop("centers", None)
    if args.cutoff is not None:
        f["cutoff_mhz"] = args.cutoff
    if args.duration is not None:
        f["duration_us"] = args.duration
        f.pop("taps", None)
    return _filter_from(f, d.get("experiment", "freq_response"))


def _peak(d: dict) -> float:
    peak = d.get("peak", 0.9)
    if not isinstance(peak, (int, float)) or not 0 < peak < 1:
        raise ConfigError("peak", "must lie in (0, 1)")
    return float(peak)


def _dt(d: dict) -> float:
    dt = (d.get("step") or {}).get("dt_us", 1e-3)
    if not isinstance(dt, (int, float)) or dt <= 0:
        raise ConfigError("step.dt_us", "must be positive")
    return float(dt)


def cmd_design(args, d):
    spec = _filter_spec(d, args)
    h, _, _ = _qif(spec, d.get("aux_mode", "exact_arcsin"), _peak(d), _dt(d))
    meta = {"filter": spec.to_dict(), "peak": float(h.peak), "code_version": __version__}
    if args.spectrum:
        f = np.round(np.arange(0.0, 4.0 + 1e-9, 0.01), 12)
        tf = transfer_function(h, f)
        cols = {"frequency_mhz": f, "magnitude": tf.magnitude}
    else:
        cols = {"t_us": h.grid, "h": h.samples}
    return _table(cols, meta, args.format)


def cmd_fields(args, d):
    spec = _filter_spec(d, args)
    mode = d.get("aux_mode", "exact_arcsin")
    _, aux, f = _qif(spec, mode, _peak(d), _dt(d))
    cols = {"t_us": f.grid, "epsilon_rad_per_us": f.epsilon, "delta_rad_per_us": f.delta,
            "alpha": aux.alpha, "beta": aux.beta}
    return _table(cols, {"filter": spec.to_dict(), "aux_mode": mode,
                         "code_version": __version__}, args.format)


def cmd_simulate(args, d):
    spec = _filter_spec(d, args)
    dt = _dt(d)
    sig = dict(d.get("signal") or {})
    amp = sig.get("amplitude", 0.0) if args.amplitude is None else args.amplitude
    freq = sig.get("frequency_mhz", spec.centers[0].f0) if args.frequency is None else args.frequency
    try:
        signal = SignalSpec(sig.get("waveform", "cosine"), float(freq),
                            float(sig.get("phase_rad", 0.0)), float(amp))
    except ValueError as exc:
        raise ConfigError("signal", str(exc)) from None
    noise = None
    if d.get("noise"):
        nd = dict(d["noise"])
        nd.setdefault("seed", args.seed if args.seed is not None else d.get("seed", 0))
        try:
            model = NoiseModel.from_dict(nd)
            noise = synthesize(model, spec.duration, dt, trial=0)
        except ValueError as exc:
            raise ConfigError("noise", str(exc)) from None
    _, _, fields = _qif(spec, d.get("aux_mode", "exact_arcsin"), _peak(d), dt)
    res = simulate_protocol(fields, signal, noise, StepConfig(dt=dt, trajectory_store=args.trajectory))
    if not np.all(np.isfinite(res.expectations)):
        raise NumericalError("non-finite final state")
    if args.trajectory:
        traj = res.trajectory
        return _table({"t_us": res.times, "sx": traj[:, 0], "sy": traj[:, 1], "sz": traj[:, 2]},
                      {"code_version": __version__}, args.format)
    sx, sy, sz = res.expectations
    return _table({"sx": [sx], "sy": [sy], "sz": [sz], "fidelity": [res.fidelity()]},
                  {"filter": spec.to_dict(), "signal_amplitude": float(amp),
                   "signal_frequency_mhz": float(freq), "code_version": __version__}, args.format)


def cmd_sweep(args, d):
    d = dict(d)
    if d.get("experiment") not in (None, args.experiment):
        raise ConfigError("experiment", f"config is for {d['experiment']!r}, "
                                        f"command asked for {args.experiment!r}")
    d["experiment"] = args.experiment
    cfg = SweepConfig.from_dict(d, seed=args.seed)
    table = run_sweep(cfg, threads=args.threads)
    return table.to_json() if args.format == "json" else table.to_csv()


def cmd_cpmg(args, d):
    cp = dict(d.get("cpmg") or {})
    n = args.n_pulses if args.n_pulses is not None else cp.get("n_pulses", 4)
    if isinstance(n, list):
        n = n[0]
    dur = args.duration if args.duration is not None else (d.get("filter") or {}).get("duration_us", 4.0)
    width = args.width if args.width is not None else cp.get("width_us", 0.0)
    try:
        seq = build_cpmg(int(n), float(dur), float(width), float(cp.get("scale", 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError("cpmg", str(exc)) from None
    f = np.round(np.arange(0.0, args.f_max + 1e-9, args.f_step), 12)
    try:
        tf = cpmg_filter_response(seq, f, args.probe, _dt(d))
    except ValueError as exc:
        raise ConfigError("cpmg", str(exc)) from None
    cols = {"frequency_mhz": f, "response_cos": tf.values.real, "response_sin": -tf.values.imag,
            "magnitude": tf.magnitude, "reference_magnitude": np.abs(tf.reference)}
    return _table(cols, {"sequence": seq.to_dict(), "code_version": __version__}, args.format)


def cmd_export(args, d):
    spec = _filter_spec(d, args)
    _, _, fields = _qif(spec, d.get("aux_mode", "exact_arcsin"), _peak(d), _dt(d))
    return export_waveform(fields, args.dt_ns, args.max_samples)


def cmd_plot(args, d):
    if args.input is None:
        raise ConfigError("input", "plot needs --input TABLE.csv")
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise ConfigError("input", f"cannot read {args.input} ({exc.strerror})") from None
    try:
        table = ResultTable.from_json(text) if text.lstrip().startswith("{") else ResultTable.from_csv(text)
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError("input", f"not a result table ({exc})") from None
    y = args.y.split(",") if args.y else None
    try:
        return emit_plot(table, args.kind, None, x=args.x, y=y, z=args.z)
    except ValueError as exc:
        raise ConfigError("plot", str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    filt = argparse.ArgumentParser(add_help=False)
    filt.add_argument("--f0", type=float, help="pass-band centre in MHz")
    filt.add_argument("--cutoff", type=float, help="envelope cutoff in MHz")
    filt.add_argument("--duration", type=float, help="protocol length in us")

    p = _Parser(prog="qif", description="Invariant-based quantum filter toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("design", parents=[common, filt], help="filter impulse response")
    s.add_argument("--spectrum", action="store_true", help="emit |H(f)| instead of h(t)")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("fields", parents=[common, filt], help="control fields eps(t), Delta(t)")
    s.set_defaults(func=cmd_fields)

    s = sub.add_parser("simulate", parents=[common, filt], help="single protocol run")
    s.add_argument("--amplitude", type=float, help="probe amplitude in rad/us")
    s.add_argument("--frequency", type=float, help="probe frequency in MHz")
    s.add_argument("--trajectory", action="store_true", help="emit the Bloch trajectory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="run a configured experiment")
    s.add_argument("experiment", choices=EXPERIMENTS)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("cpmg", parents=[common], help="CPMG weak-probe filter response")
    s.add_argument("--n-pulses", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--width", type=float, help="pulse width in us")
    s.add_argument("--probe", type=float, default=0.01, help="probe amplitude in rad/us")
    s.add_argument("--f-max", type=float, default=4.0)
    s.add_argument("--f-step", type=float, default=0.01)
    s.set_defaults(func=cmd_cpmg)

    s = sub.add_parser("export-waveform", parents=[common, filt], help="AWG waveform file")
    s.add_argument("--dt-ns", type=int, default=4, choices=(4, 8, 16, 32))
    s.add_argument("--max-samples", type=int, default=65536)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("plot", parents=[common], help="SVG plot of a result table")
    s.add_argument("--input", help="table produced by sweep (csv or json)")
    s.add_argument("--kind", choices=("line", "heatmap"), default="line")
    s.add_argument("--x")
    s.add_argument("--y", help="comma-separated columns (heatmap: the row axis)")
    s.add_argument("--z")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        d = _load_config(args.config)
        text = args.func(args, d)
        _emit(text, args.out)
    except ConfigError as exc:
        print(f"qif: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, FloatingPointError) as exc:
        print(f"qif: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError) as exc:
        print(f"qif: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
