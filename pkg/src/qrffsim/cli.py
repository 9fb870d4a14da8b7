"""Command-line entry point.

Subcommands reproduce the main experiments: ``generate`` writes bit files,
``analyze`` reports bias/correlation/entropy with a compliance verdict,
``battery`` runs the randomness test battery over split strings,
``calibrate`` nulls the bias by threshold bisection, ``sweep`` and
``array`` drive parameter sweeps and spatial maps with CSV output.

Exit codes: 0 on pass verdicts, 1 on statistical failure, 2 on
usage/config/IO errors.  Progress goes to stderr; machine-readable results
go to files under the output directory.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import EntropyBudget, QrffParams, analytic_bias, analytic_lag_coefficient, entropy_compliance
from .arraysim import (
    Array, ArrayConfig, PixelVariation, build_array, serialize_readout,
    simulate_array, spatial_map, sweep as array_sweep, SPATIAL_METRICS,
)
from .bitio import config_digest, read_bit_file, write_bit_file
from .config import ENV_OUT, ENV_SEED, load_config, simulation_record, validate_config
from .errors import ConfigError, NoBracketError, QrffError
from .estimators import estimate_autocorr, estimate_bias, estimate_entropy
from .eventsim import (
    BitStream, DetectorParams, QrffSimConfig, calibrate_threshold, simulate_qrff,
)
from .rng import SimSeed
from .stattests import run_battery

EXIT_PASS = 0
EXIT_STAT_FAIL = 1
EXIT_USAGE = 2

_OVERRIDE_DESTS = {
    "lambda_d": ("source", "lambda_d"),
    "f_bg": ("qrff", "f_bg"),
    "eta": ("qrff", "eta"),
    "t_r": ("qrff", "t_r"),
    "t_f": ("qrff", "t_f"),
    "i_led": ("array", "i_led"),
    "v_op": ("array", "v_op"),
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--format", choices=("packed", "ascii"), help="bit file format")
    p.add_argument("--threads", type=int, help="worker threads for array jobs")
    p.add_argument("--n-bits", type=int, help="bits to generate/simulate")
    p.add_argument("--lambda-d", type=float, help="ideal source detection rate, cps")
    p.add_argument("--f-bg", type=float, help="bit generation clock, Hz")
    p.add_argument("--eta", type=float, help="normalized sampling threshold")
    p.add_argument("--t-r", type=float, help="rise time, s")
    p.add_argument("--t-f", type=float, help="fall time, s")
    p.add_argument("--i-led", type=float, help="LED current, mA")
    p.add_argument("--v-op", type=float, help="operating voltage, V")


def _load(args, experiment: str, extra: dict | None = None) -> dict:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg["experiment"] != experiment:
            raise ConfigError(
                f"config declares experiment {cfg['experiment']!r}, "
                f"command is {experiment!r}")
    else:
        base = {"experiment": experiment}
        if extra:
            base.update(extra)
        cfg = validate_config(base)
        from .config import apply_env_overrides
        cfg = apply_env_overrides(cfg)
    for name, (section, key) in _OVERRIDE_DESTS.items():
        val = getattr(args, name, None)
        if val is not None:
            cfg.setdefault(section, {})
            cfg[section][key] = val
            if section == "source":
                cfg.pop("detector", None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = str(args.out)
    if args.format is not None:
        cfg["format"] = args.format
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    if getattr(args, "n_bits", None) is not None:
        cfg["n_bits"] = args.n_bits
    return cfg


def _outdir(cfg: dict) -> Path:
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sim_config(cfg: dict, n_bits: int | None = None) -> QrffSimConfig:
    q = cfg["qrff"]
    kw = dict(f_bg=q["f_bg"], eta=q["eta"], t_r=q["t_r"], t_f=q["t_f"],
              phase=q.get("phase", 0.0), warmup=q.get("warmup"),
              n_bits=n_bits if n_bits is not None else cfg["n_bits"])
    if "source" in cfg:
        kw["lambda_d"] = cfg["source"]["lambda_d"]
    else:
        kw["detector"] = DetectorParams(**cfg["detector"])
    return QrffSimConfig(**kw)


def _array_config(cfg: dict) -> ArrayConfig:
    return ArrayConfig(**cfg["array"])


def _variation(cfg: dict) -> PixelVariation:
    return PixelVariation(**cfg.get("variation", {}))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")


# ---------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    cfg = _load(args, "generate")
    out = _outdir(cfg)
    seed = SimSeed(cfg["seed"])
    fmt = cfg["format"]

    if "array" in cfg:
        return _generate_array(cfg, out, seed, fmt)

    sim = _sim_config(cfg)
    t0 = time.perf_counter()
    stream = simulate_qrff(sim, seed)
    elapsed = time.perf_counter() - t0
    stream.provenance["config"] = simulation_record(cfg)
    suffix = "qrfb" if fmt == "packed" else "txt"
    path = out / f"bits.{suffix}"
    write_bit_file(path, stream, fmt)
    _write_json(out / "provenance.json", stream.provenance)
    rate = stream.n_bits / elapsed if elapsed > 0 else float("inf")
    _log(f"generated {stream.n_bits} bits -> {path}")
    _log(f"realized lambda_d = {stream.provenance['realized_lambda_d']:.6g} cps, "
         f"throughput = {rate:.3g} bits/s")
    return EXIT_PASS


def _generate_array(cfg: dict, out: Path, seed: SimSeed, fmt: str) -> int:
    arr = build_array(_array_config(cfg), _variation(cfg), seed)
    res = simulate_array(arr, cfg["n_bits"], seed, threads=cfg.get("threads", 1))
    ratio = arr.config.serializer_ratio
    channels = serialize_readout(res.streams, ratio)
    for c, ch in enumerate(channels):
        stream = BitStream.from_bits(ch, arr.config.f_bg,
                                     {"channel": c, "config": simulation_record(cfg)})
        suffix = "qrfb" if fmt == "packed" else "txt"
        write_bit_file(out / f"channel_{c:02d}.{suffix}", stream, fmt)
    _write_json(out / "provenance.json", {
        "config": simulation_record(cfg),
        "n_channels": len(channels),
        "pixels_per_channel": ratio,
        "n_bits_per_pixel": cfg["n_bits"],
    })
    _log(f"generated {len(channels)} channels x {channels[0].size} bits -> {out}")
    return EXIT_PASS


# ----------------------------------------------------------------- analyze

def cmd_analyze(args) -> int:
    extra = {"analyze": {"input": str(args.input)}} if args.input else None
    cfg = _load(args, "analyze", extra)
    if args.input:
        cfg.setdefault("analyze", {})["input"] = str(args.input)
    section = cfg["analyze"]
    out = _outdir(cfg)
    stream, header = read_bit_file(section["input"])
    max_lag = section.get("max_lag", 3)
    budget = EntropyBudget(**section.get("budget", {}))

    bias = estimate_bias(stream)
    corr = estimate_autocorr(stream, max_lag)
    entropy = estimate_entropy(stream)
    verdict = entropy_compliance(bias.b_hat, [c.a_hat for c in corr], budget)

    report = {
        "input": str(section["input"]),
        "n_bits": stream.n_bits,
        "bias": {"b_hat": bias.b_hat, "sigma": bias.sigma, "n": bias.n},
        "autocorr": [
            {"lag": c.lag, "a_hat": c.a_hat, "sigma": c.sigma} for c in corr
        ],
        "entropy": entropy,
        "compliance": {
            "bias_ok": verdict.bias_ok,
            "corr_ok": verdict.corr_ok,
            "entropy_ok": verdict.entropy_ok,
            "passed": verdict.passed,
        },
    }
    _write_json(out / "analysis.json", report)

    print(f"{'quantity':<14}{'value':>14}{'sigma':>12}")
    print("-" * 40)
    print(f"{'bias':<14}{bias.b_hat:>14.6g}{bias.sigma:>12.3g}")
    for c in corr:
        print(f"{f'a{c.lag}':<14}{c.a_hat:>14.6g}{c.sigma:>12.3g}")
    print(f"{'entropy':<14}{entropy:>14.8g}{'':>12}")
    print("-" * 40)
    print(f"compliance: {'PASS' if verdict.passed else 'FAIL'}")
    return EXIT_PASS if verdict.passed else EXIT_STAT_FAIL


# ----------------------------------------------------------------- battery

def cmd_battery(args) -> int:
    extra = None
    if args.inputs:
        extra = {"battery": {"inputs": [str(p) for p in args.inputs],
                             "split_bits": args.split_bits or 100_000}}
    cfg = _load(args, "battery", extra)
    section = cfg["battery"]
    if args.inputs:
        section["inputs"] = [str(p) for p in args.inputs]
    if args.alpha is not None:
        section["alpha"] = args.alpha
    if args.split_bits is not None:
        section["split_bits"] = args.split_bits
    out = _outdir(cfg)

    pieces = []
    for path in section["inputs"]:
        stream, _ = read_bit_file(path)
        pieces.append(stream.bits())
    bits = np.concatenate(pieces) if len(pieces) > 1 else pieces[0]
    split = section["split_bits"]
    n_strings = bits.size // split
    if n_strings < 1:
        raise ConfigError(
            f"insufficient data: {bits.size} bits cannot fill one "
            f"{split}-bit string")
    strings = [bits[i * split:(i + 1) * split] for i in range(n_strings)]
    _log(f"running battery: {n_strings} strings x {split} bits, "
         f"alpha = {section['alpha']}")
    report = run_battery(
        strings, alpha=section["alpha"], tests=section.get("tests"),
        block_len=section.get("block_len", 128),
        m_serial=section.get("m_serial"), m_apen=section.get("m_apen"))
    _write_json(out / "battery.json", report.to_dict())
    table = report.to_table()
    (out / "battery.txt").write_text(table + "\n")
    print(table)
    return EXIT_PASS if report.passed else EXIT_STAT_FAIL


# --------------------------------------------------------------- calibrate

def cmd_calibrate(args) -> int:
    cfg = _load(args, "calibrate")
    section = cfg.get("calibrate") or validate_config(
        {"experiment": "calibrate", "qrff": cfg["qrff"],
         "source": cfg.get("source", {"lambda_d": 1.0}),
         "calibrate": {}})["calibrate"]
    out = _outdir(cfg)
    base = _sim_config(cfg, n_bits=section["n_max"])
    seed = SimSeed(cfg["seed"])
    try:
        result = calibrate_threshold(
            base, section["target_sigma"], seed,
            n_start=section["n_start"], n_max=section["n_max"],
            max_iter=section["max_iter"])
    except NoBracketError as exc:
        _log(f"calibration failed: {exc}")
        return EXIT_STAT_FAIL
    trace_rows = [
        {"eta": s.eta, "bias": s.bias, "sigma": s.sigma, "n_bits": s.n_bits}
        for s in result.steps
    ]
    _write_json(out / "calibration.json", {
        "eta_hat": result.eta_hat,
        "converged": result.converged,
        "target_sigma": result.target_sigma,
        "iterations": result.iterations,
        "trace": trace_rows,
    })
    print(f"eta_hat = {result.eta_hat:.6f} "
          f"({'converged' if result.converged else 'not converged'} "
          f"in {result.iterations} evaluations)")
    return EXIT_PASS if result.converged else EXIT_STAT_FAIL


# ------------------------------------------------------------------- sweep

_QRFF_SWEEP_PARAMS = ("eta", "lambda_d", "f_bg", "t_r", "t_f")


def _qrff_sweep(cfg: dict, out: Path, seed: SimSeed) -> int:
    section = cfg["sweep"]
    param = section["parameter"]
    if param not in _QRFF_SWEEP_PARAMS:
        raise ConfigError(
            f"sweep.parameter: qrff sweeps support {_QRFF_SWEEP_PARAMS}")
    rows = []
    for k, val in enumerate(section["values"]):
        sim = _sim_config(cfg, n_bits=section["n_bits"])
        if param == "lambda_d":
            if sim.lambda_d is None:
                raise ConfigError("lambda_d sweep requires a 'source' section")
            sim = replace(sim, lambda_d=float(val))
        else:
            sim = replace(sim, **{param: float(val)})
        stream = simulate_qrff(sim, SimSeed(seed.seed, k))
        bias = estimate_bias(stream)
        a1 = estimate_autocorr(stream, 1)[0]
        lam = stream.provenance["realized_lambda_d"]
        p = QrffParams(lam, sim.f_bg, sim.t_r, sim.t_f, sim.eta)
        rows.append((float(val), bias.b_hat, bias.sigma, a1.a_hat, a1.sigma,
                     analytic_bias(p), analytic_lag_coefficient(p, 1)))
    lines = [f"{param},bias,bias_sigma,a1,a1_sigma,analytic_bias,analytic_a1"]
    for r in rows:
        lines.append(",".join(repr(v) for v in r))
    csv_path = out / "sweep.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    _log(f"wrote {csv_path}")
    if section.get("plot"):
        _plot_qrff_sweep(rows, param, out)
    return EXIT_PASS


def _plot_qrff_sweep(rows, param: str, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vals = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(vals, [r[1] for r in rows], yerr=[3 * r[2] for r in rows],
                fmt="o", label="simulated")
    ax.plot(vals, [r[5] for r in rows], "-", label="model")
    ax.set_xlabel(param)
    ax.set_ylabel("bias")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "sweep.png", dpi=150)
    plt.close(fig)


def cmd_sweep(args) -> int:
    cfg = _load(args, "sweep")
    out = _outdir(cfg)
    seed = SimSeed(cfg["seed"])
    section = cfg["sweep"]
    if section["kind"] == "qrff":
        return _qrff_sweep(cfg, out, seed)
    report = array_sweep(
        _array_config(cfg), _variation(cfg), section["parameter"],
        section["values"], section["n_bits"], seed,
        threads=cfg.get("threads", 1))
    csv_path = out / "sweep.csv"
    csv_path.write_text(report.to_csv())
    _log(f"wrote {csv_path}")
    if section.get("plot"):
        _plot_array_sweep(report, out)
    return EXIT_PASS


def _plot_array_sweep(report, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vals = [r.value for r in report.rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(vals, [r.mean_bias for r in report.rows], "o-", label="mean")
    axes[0].plot(vals, [r.rms_bias for r in report.rows], "s--", label="rms")
    axes[0].set_xlabel(report.parameter)
    axes[0].set_ylabel("bias")
    axes[0].legend()
    axes[1].plot(vals, [r.mean_a1 for r in report.rows], "o-", label="mean")
    axes[1].plot(vals, [r.rms_a1 for r in report.rows], "s--", label="rms")
    axes[1].set_xlabel(report.parameter)
    axes[1].set_ylabel("a1")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(out / "sweep.png", dpi=150)
    plt.close(fig)


# ------------------------------------------------------------------- array

def cmd_array(args) -> int:
    cfg = _load(args, "array")
    out = _outdir(cfg)
    seed = SimSeed(cfg["seed"])
    run = cfg.get("array_run") or validate_config(
        {"experiment": "array", "array": cfg["array"], "array_run": {}})["array_run"]
    arr = build_array(_array_config(cfg), _variation(cfg), seed)
    _log(f"simulating {arr.n_pixels} pixels x {run['n_bits']} bits "
         f"(mode={run['mode']})")
    res = simulate_array(arr, run["n_bits"], seed,
                         threads=cfg.get("threads", 1), mode=run["mode"])
    summary = {"n_pixels": arr.n_pixels, "mode": run["mode"], "maps": {}}
    metrics = run["metrics"] if run["mode"] == "bits" else ["count_rate", "dcr"]
    for metric in metrics:
        if metric not in SPATIAL_METRICS:
            raise ConfigError(f"array_run.metrics: unknown metric {metric!r}")
        m = spatial_map(res, metric)
        path = out / f"map_{metric}.csv"
        path.write_text(m.to_csv())
        summary["maps"][metric] = {"max_abs": m.max_abs, "rms": m.rms,
                                   "csv": str(path)}
        _log(f"{metric}: max|.| = {m.max_abs:.4g}, rms = {m.rms:.4g}")
        if run.get("plot"):
            _plot_map(m, out / f"map_{metric}.png")
    if run["mode"] == "bits" and run.get("dump_channels"):
        channels = serialize_readout(res.streams, arr.config.serializer_ratio)
        for c, ch in enumerate(channels):
            stream = BitStream.from_bits(ch, arr.config.f_bg, {"channel": c})
            write_bit_file(out / f"channel_{c:02d}.qrfb", stream, "packed")
        summary["n_channels"] = len(channels)
    _write_json(out / "array.json", summary)
    return EXIT_PASS


def _plot_map(m, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(m.values, aspect="auto", origin="lower")
    fig.colorbar(im, ax=ax, label=m.metric)
    ax.set_xlabel("col")
    ax.set_ylabel("row")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qrffsim",
        description="Event-level simulator and statistics for flip-flop "
                    "quantum random bit generators")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate and write a bit file")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="bias/correlation/entropy report")
    _add_common(p)
    p.add_argument("input", nargs="?", type=Path, help="bit file to analyze")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("battery", help="randomness test battery")
    _add_common(p)
    p.add_argument("inputs", nargs="*", type=Path, help="bit files")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--split-bits", type=int, help="bits per string")
    p.set_defaults(func=cmd_battery)

    p = sub.add_parser("calibrate", help="null the bias by threshold search")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="parameter sweep with CSV/plot output")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("array", help="array simulation with spatial maps")
    _add_common(p)
    p.set_defaults(func=cmd_array)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except QrffError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
