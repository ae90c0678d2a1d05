"""Command-line pipelines: optimize, scan, sensitivity, fit, export-waveform, ground-state.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Artifacts are deterministic for a given configuration; wall-clock data
goes to ``*.meta.json`` sidecars only.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import protocol as proto
from .config import ConfigError, ExperimentConfig, load_config
from .fitting import fit_scaling
from .lattice import band_energies, ground_bloch_state, measure_populations
from .optimizer import InterferometerBuilder, TargetState, percent_error
from .sensing import acceleration_scan, run_with_signal, sensitivity_vs_interrogation

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_meta(path: Path, **fields) -> None:
    fields.setdefault("written_at", time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    _write(path, json.dumps(fields, indent=2, sort_keys=True) + "\n")


def _table(header_lines, columns, rows) -> str:
    out = [f"# {line}" for line in header_lines]
    out.append("\t".join(columns))
    for row in rows:
        out.append("\t".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(out) + "\n"


def _load_protocol(path) -> proto.ShakingProtocol:
    try:
        return proto.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read protocol {path}: {exc}") from exc
    except proto.ProtocolFormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _outdir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.output_dir or cfg.output_dir)


def cmd_optimize(args, cfg: ExperimentConfig) -> int:
    if args.n < 1:
        raise UsageError("-n must be >= 1")
    out = _outdir(args, cfg)
    started = time.time()
    builder = InterferometerBuilder(cfg.lattice, cfg.optimizer)
    protocol = builder.protocol(args.n)
    records = builder.records_for(args.n)
    lattice = cfg.lattice
    bias = cfg.optimizer.bias_acceleration

    final = run_with_signal(protocol, bias, lattice)
    ground_target = TargetState.ground(lattice.n_measure)
    ground_pops = measure_populations(ground_bloch_state(lattice), lattice.n_measure)
    summary = {
        "config_hash": cfg.hash(),
        "n": args.n,
        "interrogation_time": protocol.duration,
        "bias_acceleration": bias,
        "split_error": records[0].best_error,
        "stage_errors": [r.best_error for r in records],
        "stage_converged": [r.converged for r in records],
        "recombination_error": percent_error(final, ground_target),
        "recombination_error_vs_ground_bloch": percent_error(final, ground_pops),
        "final_populations": final.populations.tolist(),
        "converged": bool(protocol.meta.get("converged", False)),
        "evaluations": sum(len(r.evaluations) for r in records),
    }
    tag = f"n{args.n}"
    _write(out / f"protocol_{tag}.json", proto.dumps(protocol, config_hash=cfg.hash()))
    with open(out / f"optimize_{tag}.log.jsonl", "w") as fh:
        for record in records:
            record.write_log(fh)
    _write(out / f"summary_{tag}.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_meta(out / f"optimize_{tag}.meta.json", elapsed_seconds=time.time() - started,
                evaluation_wall_times=[[e.wall_time for e in r.evaluations] for r in records])
    print(f"n={args.n} T_I={protocol.duration * 1e3:.1f} ms split E={summary['split_error']:.3f}% "
          f"recombination E={summary['recombination_error']:.3f}%")
    if not summary["converged"]:
        raise NumericalFailure("optimization did not reach the stop error in every stage; "
                               "partial artifacts written")
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad acceleration grid {text!r}") from exc
    if not values:
        raise UsageError("acceleration grid is empty")
    return values


def cmd_scan(args, cfg: ExperimentConfig) -> int:
    protocol = _load_protocol(args.protocol)
    if args.grid is not None:
        grid = _parse_grid(args.grid)
    else:
        center = protocol.bias_acceleration if args.around is None else args.around
        grid = [center + a for a in cfg.sensing.scan]
    rows = acceleration_scan(protocol, grid, cfg.lattice)
    N = cfg.lattice.n_measure
    columns = ["accel"] + [f"P{n:+d}" for n in range(-N, N + 1)] + ["leak", "ground_error", "status"]
    body = []
    for row in rows:
        if row.distribution is None:
            body.append([row.accel] + [math.nan] * (2 * N + 3) + [row.error.replace("\t", " ")])
        else:
            body.append([row.accel, *row.distribution.populations, row.distribution.leak,
                         row.ground_error, "ok"])
    out = Path(args.out) if args.out else _outdir(args, cfg) / "scan.tsv"
    _write(out, _table([f"config_hash {cfg.hash()}", f"protocol {Path(args.protocol).name}",
                        f"bias_acceleration {_fmt(protocol.bias_acceleration)}",
                        "units accel m/s^2, populations relative, ground_error percent"],
                       columns, body))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK if all(r.error is None for r in rows) else EXIT_NUMERICAL


def _fit_payload(fit, cfg: ExperimentConfig) -> str:
    doc = fit.to_dict()
    doc["config_hash"] = cfg.hash()
    doc["seed"] = cfg.seed
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_sensitivity(args, cfg: ExperimentConfig) -> int:
    if len(args.protocols) < 3:
        raise UsageError("sensitivity needs at least 3 protocols for a scaling fit")
    protocols = [_load_protocol(p) for p in args.protocols]
    noise = None if args.noiseless else cfg.sensing.noise
    rows = sensitivity_vs_interrogation(protocols, noise=noise, lattice=cfg.lattice,
                                        delta_a=cfg.sensing.delta_a, n_atoms=cfg.sensing.n_atoms,
                                        repetitions=cfg.sensing.repetitions)
    out = _outdir(args, cfg)
    body = [[r.interrogation_time, r.accel, r.delta_a, r.stderr, r.fisher,
             "infinite" if r.infinite else "ok"] for r in rows]
    _write(out / "sensitivity.tsv",
           _table([f"config_hash {cfg.hash()}", f"noise {'off' if noise is None else 'on'}",
                   "units T_I s, delta_a m/s^2, fisher (m/s^2)^-2"],
                  ["T_I", "accel", "delta_a", "stderr", "fisher", "status"], body))
    finite = [r for r in rows if not r.infinite]
    c_mode = cfg.fit.c_mode if args.c_mode is None else _c_mode(args.c_mode)
    try:
        fit = fit_scaling([r.interrogation_time for r in finite], [r.delta_a for r in finite], c_mode)
    except ValueError as exc:
        raise NumericalFailure(f"scaling fit impossible: {exc}") from exc
    _write(out / "fit.json", _fit_payload(fit, cfg))
    print(f"b = {fit.b:.3f} +/- {fit.b_err:.3f}, c = {fit.c:.4g}")
    return EXIT_OK if fit.converged else EXIT_NUMERICAL


def _c_mode(text):
    if text == "free":
        return "free"
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError("--c-mode must be 'free' or a number") from exc


def read_table(path):
    """Columns of a delimited table written by this tool, keyed by header name."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise UsageError(f"{path}: empty table")
    header = lines[0].split("\t")
    cols = {h: [] for h in header}
    for ln in lines[1:]:
        for h, v in zip(header, ln.split("\t")):
            cols[h].append(v)
    return cols


def cmd_fit(args, cfg: ExperimentConfig) -> int:
    cols = read_table(args.table)
    if "T_I" not in cols or "delta_a" not in cols:
        raise UsageError(f"{args.table}: needs T_I and delta_a columns")
    try:
        pairs = [(float(t), float(d)) for t, d in zip(cols["T_I"], cols["delta_a"])]
    except ValueError as exc:
        raise UsageError(f"{args.table}: {exc}") from exc
    pairs = [p for p in pairs if math.isfinite(p[1])]
    c_mode = cfg.fit.c_mode if args.c_mode is None else _c_mode(args.c_mode)
    try:
        fit = fit_scaling([p[0] for p in pairs], [p[1] for p in pairs], c_mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else _outdir(args, cfg) / "fit.json"
    _write(out, _fit_payload(fit, cfg))
    print(f"b = {fit.b:.3f} +/- {fit.b_err:.3f}, c = {fit.c:.4g}")
    return EXIT_OK if fit.converged else EXIT_NUMERICAL


def cmd_export_waveform(args, cfg: ExperimentConfig) -> int:
    protocol = _load_protocol(args.protocol)
    s = cfg.sensing
    rate = args.sample_rate or s.sample_rate
    try:
        t, phase = proto.sample(protocol, rate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    volts_per_rad = 1.0 / (s.eom_rad_per_volt * s.amplifier_gain)
    volts = phase * volts_per_rad
    peak = int(np.argmax(np.abs(volts))) if volts.size else 0
    if volts.size and abs(volts[peak]) > s.awg_range:
        raise NumericalFailure(
            f"AWG voltage {volts[peak]:.4f} V at sample {peak} (t = {t[peak]:.9g} s) "
            f"exceeds the {s.awg_range} V range")
    header = [f"config_hash {cfg.hash()}", f"protocol {Path(args.protocol).name}",
              f"eom_rad_per_volt {_fmt(s.eom_rad_per_volt)}",
              f"amplifier_gain {_fmt(s.amplifier_gain)}",
              f"sample_rate {_fmt(rate)}",
              "awg_voltage = phase / (eom_rad_per_volt * amplifier_gain)"]
    lines = [f"# {h}" for h in header] + ["time_s,phase_rad,awg_volts"]
    lines += [f"{ti:.15g},{_fmt(ph)},{_fmt(v)}" for ti, ph, v in zip(t, phase, volts)]
    out = Path(args.out) if args.out else _outdir(args, cfg) / "waveform.csv"
    _write(out, "\n".join(lines) + "\n")
    print(f"wrote {t.size} samples to {out}")
    return EXIT_OK


def cmd_ground_state(args, cfg: ExperimentConfig) -> int:
    lat = cfg.lattice
    state = ground_bloch_state(lat)
    dist = measure_populations(state, lat.n_measure)
    bands = band_energies(lat, 0.0, 3)
    report = {
        "recoil_frequency_hz": lat.recoil_frequency,
        "depth_er": lat.depth,
        "band_gap_01_hz": (bands[1] - bands[0]) * lat.recoil_frequency,
        "band_gap_02_hz": (bands[2] - bands[0]) * lat.recoil_frequency,
        "populations": dist.populations.tolist(),
        "leak": dist.leak,
        "error_vs_ground_target": percent_error(dist, TargetState.ground(lat.n_measure)),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shakenlattice", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="experiment configuration (JSON)")
    parser.add_argument("--output-dir", help="override the configured output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="optimize an interferometer with 2n segments")
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("scan", help="final populations versus applied acceleration")
    p.add_argument("--protocol", required=True)
    p.add_argument("--grid", help="comma-separated accelerations (m/s^2)")
    p.add_argument("--around", type=float, help="center of the configured scan offsets")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("sensitivity", help="delta_a versus interrogation time, with fit")
    p.add_argument("protocols", nargs="+")
    p.add_argument("--noiseless", action="store_true", help="ignore the configured noise model")
    p.add_argument("--c-mode")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("fit", help="fit a*T^-b + c to a sensitivity table")
    p.add_argument("--table", required=True)
    p.add_argument("--c-mode")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("export-waveform", help="write AWG samples for a protocol")
    p.add_argument("--protocol", required=True)
    p.add_argument("--sample-rate", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_waveform)

    p = sub.add_parser("ground-state", help="print ground Bloch state diagnostics")
    p.set_defaults(func=cmd_ground_state)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
