"""Command-line front end.

    nvvector levels   [--config C] [--out T] [--plot]
    nvvector spectrum [--config C] [--seed N] [--out T] [--plot]
    nvvector rabi     [--config C] [--seed N] [--out T] [--plot]
    nvvector ratio    [--config C] [--seed N] [--out T] [--plot]
    nvvector invert   MEASUREMENTS [--model equations|coherent] [--json]
    nvvector plan     TARGET_MHZ [--json]
    nvvector sensitivity --delta-B-uT X --n N --T-s T
    nvvector fit      TABLE [--json]

Exit codes: 0 success, 2 config error, 3 computation error, 4 fit non-convergence.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, tables
from .config import ConfigError, RunConfig, load, load_measurements
from .fitting import FitError, fit_damped_cosine, fit_gaussian_peaks, fit_lorentzian_ratio
from .inversion import RabiMeasurementSet, field_uncertainty, invert_field, sensitivity
from .protocol import OutOfBandError, single_frequency_protocol
from .signal_synth import (
    ODMRSpectrum, RabiTrace, eta_ratio_curve, odmr_spectrum, rabi_frequency, rabi_trace,
)
from .spin_core import HALF_PI, Label, StaticField, find_transition, solve, transitions
from .tables import TabularSeries

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_FIT = 0, 2, 3, 4
_PAIRS = {"0-": (Label.ZERO, Label.MINUS), "0+": (Label.ZERO, Label.PLUS), "-+": (Label.MINUS, Label.PLUS)}


class FitStageError(RuntimeError):
    """Synthesis succeeded but the fit did not; carries the finished series."""

    def __init__(self, message, series):
        super().__init__(message)
        self.series = series


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _metadata(command, cfg: RunConfig, units: dict) -> dict:
    return {"command": command, "artifact_version": __version__, "seed": cfg.seed,
            "units": units, "config": cfg.resolved}


def _fit_record(res) -> dict:
    rec = {"params": res.params, "stderr": res.stderr, "converged": bool(res.converged),
           "iterations": int(res.iterations), "residual_norm": float(res.residual_norm)}
    if res.message:
        rec["message"] = res.message
    if res.extra:
        rec["extra"] = _jsonable(res.extra)
    return rec


def _run_fit(series, fitter):
    """Attach a fit to ``series``; raise FitStageError if it fails or does not converge."""
    try:
        res = fitter()
    except (FitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        series.metadata["fit_error"] = f"{type(err).__name__}: {err}"
        raise FitStageError(str(err), series) from err
    series.metadata["fit"] = _fit_record(res)
    if not res.converged:
        series.metadata["fit_error"] = f"not converged: {res.message}"
        raise FitStageError(res.message, series)
    return res


# ---------------------------------------------------------------- commands

def cmd_levels(cfg: RunConfig) -> TabularSeries:
    """The three levels versus static-field polar angle at fixed B."""
    rows = []
    for deg in cfg.theta_grid_deg:
        theta = HALF_PI if deg == 90.0 else math.radians(deg)
        sys_ = solve(StaticField(cfg.field.B, theta), cfg.consts)
        rows.append([deg, *np.sort(sys_.levels)])
    rows = np.array(rows)
    gap = rows[:, 3] - rows[:, 2]
    meta = _metadata("levels", cfg, {"theta_deg": "deg", "E_low_MHz": "MHz", "E_mid_MHz": "MHz",
                                     "E_high_MHz": "MHz"})
    meta["min_gap_theta_deg"] = float(rows[int(np.argmin(gap)), 0])
    meta["min_gap_MHz"] = float(gap.min())
    return TabularSeries(["theta_deg", "E_low_MHz", "E_mid_MHz", "E_high_MHz"], rows, meta)


def cmd_spectrum(cfg: RunConfig, fit: bool | None = None) -> TabularSeries:
    sys_ = solve(cfg.field, cfg.consts)
    freq = np.array(cfg.freq_grid)
    spec = odmr_spectrum(sys_, cfg.ac, cfg.lineshape, freq)
    signal = spec.signal
    noise = cfg.resolved["spectrum"]["noise_sigma"]
    if noise:
        signal = signal + np.random.default_rng(cfg.seed).normal(0.0, noise, signal.shape)
    meta = _metadata("spectrum", cfg, {"freq_MHz": "MHz", "signal_rel": "fluorescence / off-resonance"})
    names = [t.name for t in transitions(sys_)]
    meta["centers_MHz"] = dict(zip(names, spec.centers))
    meta["depths_rel"] = dict(zip(names, spec.depths))
    visible = [(c, d) for c, d in zip(spec.centers, spec.depths) if freq[0] <= c <= freq[-1]]
    meta["dominant_dip_MHz"] = float(max(visible, key=lambda p: p[1])[0]) if visible else None
    series = TabularSeries(["freq_MHz", "signal_rel"], np.column_stack([freq, signal]), meta)
    if fit if fit is not None else cfg.resolved["spectrum"]["fit"]:
        floor = 1e-3 * cfg.lineshape.contrast_scale
        centers = [c for c, d in visible if d > floor]
        if not centers:
            meta["fit_skipped"] = "no dips within the frequency grid"
        else:
            noisy = ODMRSpectrum(freq, signal, spec.centers, spec.depths)
            _run_fit(series, lambda: fit_gaussian_peaks(noisy, len(centers), centers,
                                                        init_fwhm=cfg.lineshape.fwhm))
    return series


def _rabi_rate(cfg: RunConfig, label: str) -> float:
    tr = find_transition(transitions(solve(cfg.field, cfg.consts)), *_PAIRS[label])
    return rabi_frequency(tr, cfg.ac, cfg.consts)


def cmd_rabi(cfg: RunConfig, fit: bool | None = None) -> TabularSeries:
    r = cfg.resolved["rabi"]
    R = _rabi_rate(cfg, r["transition"])
    tr = rabi_trace(R, r["T_R_us"], r["a"], r["c"], cfg.time_grid, r["noise_sigma"],
                    cfg.seed if r["noise_sigma"] else None)
    meta = _metadata("rabi", cfg, {"time_us": "us", "signal_rel": "normalized fluorescence"})
    meta["transition"] = r["transition"]
    meta["rabi_frequency_MHz"] = R
    series = TabularSeries(["time_us", "signal_rel"], np.column_stack([tr.times, tr.signal]), meta)
    if fit if fit is not None else r["fit"]:
        if R == 0.0:
            meta["fit_skipped"] = "transition is not driven"
        else:
            _run_fit(series, lambda: fit_damped_cosine(tr))
    return series


def cmd_ratio(cfg: RunConfig, fit: bool | None = None) -> TabularSeries:
    sys_ = solve(StaticField(cfg.field.B, HALF_PI), cfg.consts)
    etas = cfg.eta_grid_deg
    curve = eta_ratio_curve(sys_, cfg.ac, [math.radians(e) for e in etas], cfg.lineshape)
    ratio = np.array([v for _, v in curve])
    frac = cfg.resolved["ratio"]["noise_frac"]
    if frac:
        rng = np.random.default_rng(cfg.seed)
        noisy = ratio * (1.0 + frac * rng.standard_normal(ratio.shape))
        ratio = np.where(ratio >= 1e6, ratio, noisy)
    meta = _metadata("ratio", cfg, {"eta_deg": "deg", "ratio_rel": "depth(0-) / depth(0+)"})
    series = TabularSeries(["eta_deg", "ratio_rel"], np.column_stack([etas, ratio]), meta)
    if fit if fit is not None else cfg.resolved["ratio"]["fit"]:
        _run_fit(series, lambda: fit_lorentzian_ratio(list(zip(etas, ratio))))
    return series


def cmd_fit(series: TabularSeries) -> dict:
    """Refit a table written by spectrum, rabi or ratio."""
    kind = series.metadata.get("command")
    if kind == "spectrum":
        freq, y = series.column("freq_MHz"), series.column("signal_rel")
        lw = series.metadata["config"]["lineshape"]
        centers = [c for n, c in series.metadata["centers_MHz"].items()
                   if freq[0] <= c <= freq[-1] and series.metadata["depths_rel"][n] > 1e-3 * lw["contrast_scale"]]
        res = fit_gaussian_peaks(ODMRSpectrum(freq, y), len(centers), centers, init_fwhm=lw["fwhm_MHz"])
    elif kind == "rabi":
        t, y = series.column("time_us"), series.column("signal_rel")
        res = fit_damped_cosine(RabiTrace(t, y, math.nan, math.nan, math.nan, math.nan))
    elif kind == "ratio":
        res = fit_lorentzian_ratio(list(zip(series.column("eta_deg"), series.column("ratio_rel"))))
    else:
        raise ConfigError(f"command: cannot fit a table produced by {kind!r}")
    return _fit_record(res)


def cmd_invert(meas: dict, model="equations", uncertainty="montecarlo", n_samples=10000,
               seed=0, workers=1) -> dict:
    theta = HALF_PI if meas["theta_deg"] == 90.0 else math.radians(meas["theta_deg"])
    m = RabiMeasurementSet(
        meas["R_0plus_MHz"], meas["R_0minus_MHz"], meas["R_minusplus_MHz"], meas["ratio_rel"],
        StaticField(meas["B_mT"], theta), meas["sigma_0plus_MHz"], meas["sigma_0minus_MHz"],
        meas["sigma_minusplus_MHz"], meas["sigma_ratio_rel"])
    rec = invert_field(m, model=model, uncertainty=uncertainty, n_samples=n_samples,
                       seed=seed, workers=workers)
    return {"command": "invert", "artifact_version": __version__, "seed": seed,
            "input": meas, "model": model, "uncertainty": uncertainty, "n_samples": n_samples,
            "result": rec.as_dict()}


def cmd_plan(target: float) -> dict:
    return _jsonable(single_frequency_protocol(target).as_dict())


# ---------------------------------------------------------------- output

def _emit_table(series, args, plot_spec):
    text = tables.dumps(series)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    elif not args.json:
        sys.stdout.write(text)
    if args.json:
        sys.stdout.write(json.dumps(_jsonable(series.metadata), sort_keys=True) + "\n")
    if args.plot:
        from .plotting import PlotUnavailable, plot_series
        target = Path(args.out).with_suffix(".svg") if args.out else Path(f"{series.metadata['command']}.svg")
        try:
            plot_series(series, *plot_spec, path=target, title=series.metadata["command"])
        except PlotUnavailable as err:
            print(f"warning: {err}; no plot written", file=sys.stderr)


def _emit_doc(doc, args, human):
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.json:
        sys.stdout.write(text)
    else:
        sys.stdout.write(human)


def _fmt_pm(v, s, unit):
    return f"{v:.4f} +/- {s:.4f} {unit}" if not math.isnan(s) else f"{v:.4f} {unit}"


def _invert_text(doc):
    r = doc["result"]
    lines = [f"model: {doc['model']}",
             f"B_MW = {_fmt_pm(r['B_MW_G'], r['sigma_B_MW_G'], 'G')}",
             f"B_RF = {_fmt_pm(r['B_RF_G'], r['sigma_B_RF_G'], 'G')}",
             f"zeta = {_fmt_pm(r['zeta_deg'], r['sigma_zeta_deg'], 'deg')}",
             f"eta  = {_fmt_pm(r['eta_deg'], r['sigma_eta_deg'], 'deg')}",
             f"angles: {r['quadrant_note']}; consistent: {r['consistent']}"]
    lines += [f"note: {n}" for n in r["notes"]]
    return "\n".join(lines) + "\n"


def _plan_text(doc):
    lines = [f"target {doc['target_freq_MHz']} MHz ({doc['branch']})"]
    for i, s in enumerate(doc["steps"], 1):
        lines.append(f"{i}. B = {s['B_mT']:.3f} mT {s['orientation']}, static azimuth {s['static_azimuth']}, "
                     f"drive {s['transition']} at {s['drive_freq_MHz']:.3f} MHz -> {s['quantity']}")
    lines += [f"warning: {w}" for w in doc["warnings"]]
    lines.append(json.dumps(doc, sort_keys=True))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output file (table or JSON document)")
    common.add_argument("--plot", action="store_true", help="also write an SVG plot")
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")

    p = argparse.ArgumentParser(prog="nvvector", description="Single-orientation NV vector AC magnetometry")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("levels", parents=[common], help="levels versus static-field angle")
    for name in ("spectrum", "rabi", "ratio"):
        s = sub.add_parser(name, parents=[common], help=f"synthesize a {name} series")
        s.add_argument("--no-fit", action="store_true")
    s = sub.add_parser("invert", parents=[common], help="reconstruct the AC field vector")
    s.add_argument("measurements")
    s.add_argument("--model", choices=("equations", "coherent"), default="equations")
    s.add_argument("--uncertainty", choices=("montecarlo", "linear", "none"), default="montecarlo")
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("plan", parents=[common], help="single-frequency measurement plan")
    s.add_argument("target_MHz", type=float)
    s = sub.add_parser("sensitivity", parents=[common], help="field sensitivity delta_B sqrt(n T)")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--delta-B-uT", type=float)
    g.add_argument("--delta-R-MHz", type=float, help="Rabi-frequency uncertainty; needs --dipole")
    s.add_argument("--dipole", type=float, default=1.0)
    s.add_argument("--n", type=float, default=1.0)
    s.add_argument("--T-s", type=float, default=1.0)
    s = sub.add_parser("fit", parents=[common], help="refit a table written by spectrum, rabi or ratio")
    s.add_argument("table")
    return p


def _config(args) -> RunConfig:
    return RunConfig.from_resolved(load(args.config), args.seed)


_PLOTS = {
    "levels": ("theta_deg", ["E_low_MHz", "E_mid_MHz", "E_high_MHz"]),
    "spectrum": ("freq_MHz", ["signal_rel"]),
    "rabi": ("time_us", ["signal_rel"]),
    "ratio": ("eta_deg", ["ratio_rel"]),
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        if cmd in _PLOTS:
            cfg = _config(args)
            fn = {"levels": cmd_levels, "spectrum": cmd_spectrum, "rabi": cmd_rabi, "ratio": cmd_ratio}[cmd]
            try:
                series = fn(cfg) if cmd == "levels" else fn(cfg, fit=False if args.no_fit else None)
            except FitStageError as err:
                _emit_table(err.series, args, _PLOTS[cmd])
                print(f"fit failed: {err}", file=sys.stderr)
                return EXIT_FIT
            _emit_table(series, args, _PLOTS[cmd])
        elif cmd == "invert":
            meas = load_measurements(args.measurements)
            seed = args.seed if args.seed is not None else 0
            doc = cmd_invert(meas, args.model, args.uncertainty, args.samples, seed, args.workers)
            _emit_doc(doc, args, _invert_text(doc))
        elif cmd == "plan":
            doc = cmd_plan(args.target_MHz)
            _emit_doc(doc, args, _plan_text(doc))
        elif cmd == "sensitivity":
            dB = args.delta_B_uT if args.delta_B_uT is not None else field_uncertainty(args.delta_R_MHz, args.dipole)
            value = sensitivity(dB, args.n, args.T_s)
            doc = {"command": "sensitivity", "delta_B_uT": dB, "n": args.n, "T_s": args.T_s,
                   "sensitivity_uT_per_sqrtHz": value}
            _emit_doc(doc, args, f"{value!r} uT/sqrt(Hz)\n")
        elif cmd == "fit":
            try:
                series = tables.read(args.table)
            except (OSError, ValueError) as err:
                raise ConfigError(f"table: {err}") from err
            try:
                doc = cmd_fit(series)
            except (FitError, ValueError, ArithmeticError) as err:
                if isinstance(err, ConfigError):
                    raise
                print(f"fit failed: {err}", file=sys.stderr)
                return EXIT_FIT
            _emit_doc(doc, args, json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")
            if not doc["converged"]:
                return EXIT_FIT
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfBandError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
