"""Command-line front end.

Subcommands:

    tran    <netlist> --tstop T [--reltol R] --out out.csv
    wavelet <netlist> --tstop T --tol TOL [--window W] [--order M] --out out.csv
    compare <netlist> --tstop T --tol TOL [--ref-reltol R] --report report.csv
    sweep   <netlist> --tstop T --tols 1e-2,1e-3,... --stats stats.csv

Time and tolerance arguments accept engineering suffixes ("5u", "30n").
Exit codes: 0 success, 1 parse/elaboration/usage error, 2 solver failure.
Reported cpu_seconds wrap only the solve calls, never parsing or file I/O.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import galerkin, report, transient
from .mna import MnaSystem, SolverError, dc_operating_point
from .netlist import ElaborationError, NetlistError, elaborate, parse, parse_number

__all__ = ["run_cli", "main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except NetlistError as exc:
        raise _UsageError(str(exc)) from None


def _tolerance_list(text: str) -> list[float]:
    try:
        values = [parse_number(part) for part in text.split(",") if part.strip()]
    except NetlistError as exc:
        raise _UsageError(f"malformed tolerance list: {exc}") from None
    if not values or any(v <= 0.0 for v in values):
        raise _UsageError(f"malformed tolerance list {text!r}")
    return values


def build_parser() -> _Parser:
    parser = _Parser(prog="wavesim", description="Spline-wavelet circuit simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    tran = sub.add_parser("tran", help="classical adaptive transient analysis")
    tran.add_argument("netlist")
    tran.add_argument("--tstop", type=_number, default=None)
    tran.add_argument("--reltol", type=_number, default=1e-4)
    tran.add_argument("--out", required=True)

    wav = sub.add_parser("wavelet", help="adaptive spline-wavelet analysis")
    wav.add_argument("netlist")
    wav.add_argument("--tstop", type=_number, default=None)
    wav.add_argument("--tol", type=_number, default=None)
    wav.add_argument("--window", type=_number, default=None)
    wav.add_argument("--order", type=int, default=4)
    wav.add_argument("--samples", type=int, default=1000)
    wav.add_argument("--out", required=True)

    cmp_ = sub.add_parser("compare", help="run both solvers and report max errors")
    cmp_.add_argument("netlist")
    cmp_.add_argument("--tstop", type=_number, default=None)
    cmp_.add_argument("--tol", type=_number, default=None)
    cmp_.add_argument("--ref-reltol", type=_number, default=1e-6)
    cmp_.add_argument("--window", type=_number, default=None)
    cmp_.add_argument("--order", type=int, default=4)
    cmp_.add_argument("--report", required=True)
    cmp_.add_argument("--wavelet-out", default=None)
    cmp_.add_argument("--tran-out", default=None)

    swp = sub.add_parser("sweep", help="error-versus-cost table over tolerances")
    swp.add_argument("netlist")
    swp.add_argument("--tstop", type=_number, default=None)
    swp.add_argument("--tols", type=_tolerance_list, required=True)
    swp.add_argument("--ref-reltol", type=_number, default=1e-8)
    swp.add_argument("--window", type=_number, default=None)
    swp.add_argument("--order", type=int, default=4)
    swp.add_argument("--stats", required=True)
    return parser


def _load_circuit(path: str):
    with open(path, "r") as handle:
        text = handle.read()
    circuit = elaborate(parse(text))
    for warning in circuit.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return circuit


def _resolve_tstop(args, circuit) -> float:
    if args.tstop is not None:
        return args.tstop
    if circuit.tran is not None:
        return circuit.tran.tstop
    if circuit.wavelet is not None:
        return circuit.wavelet.tstop
    raise _UsageError("no --tstop given and the netlist has no .tran/.wavelet directive")


def _resolve_tol(args, circuit) -> float:
    if args.tol is not None:
        return args.tol
    if circuit.wavelet is not None:
        return circuit.wavelet.tol
    raise _UsageError("no --tol given and the netlist has no .wavelet directive")


def _wavelet_config(circuit, tol, tstop, args) -> galerkin.WaveletConfig:
    window = args.window
    if window is None and circuit.wavelet is not None:
        window = circuit.wavelet.window
    return galerkin.WaveletConfig(tol=tol, order=args.order, window=window)


def _tran_config(circuit, tstop, reltol) -> transient.TranConfig:
    dt_init = None
    if circuit.tran is not None:
        dt_init = min(circuit.tran.tstep, tstop / 50.0)
    return transient.TranConfig(tstop=tstop, dt_init=dt_init, reltol=reltol)


def _run_tran(system, circuit, tstop, reltol):
    x0 = dc_operating_point(system).x0
    cfg = _tran_config(circuit, tstop, reltol)
    begin = time.perf_counter()
    result = transient.solve_transient(system, x0, cfg)
    return result, time.perf_counter() - begin


def _run_wavelet(system, circuit, tstop, cfg):
    begin = time.perf_counter()
    result = galerkin.solve(system, cfg, tstop)
    return result, time.perf_counter() - begin


def _cmd_tran(args) -> int:
    circuit = _load_circuit(args.netlist)
    system = MnaSystem(circuit)
    tstop = _resolve_tstop(args, circuit)
    result, _ = _run_tran(system, circuit, tstop, args.reltol)
    indices = circuit.print_indices()
    report.write_solution_csv(
        args.out, circuit.print_labels(), result.grid, result.states[:, indices]
    )
    return 0


def _cmd_wavelet(args) -> int:
    circuit = _load_circuit(args.netlist)
    system = MnaSystem(circuit)
    tstop = _resolve_tstop(args, circuit)
    tol = _resolve_tol(args, circuit)
    cfg = _wavelet_config(circuit, tol, tstop, args)
    result, _ = _run_wavelet(system, circuit, tstop, cfg)
    times = report.wavelet_sample_times(result, tstop, args.samples)
    indices = circuit.print_indices()
    values = result.eval_many(times)[:, indices]
    report.write_solution_csv(args.out, circuit.print_labels(), times, values)
    return 0


def _cmd_compare(args) -> int:
    circuit = _load_circuit(args.netlist)
    system = MnaSystem(circuit)
    tstop = _resolve_tstop(args, circuit)
    tol = _resolve_tol(args, circuit)
    cfg = _wavelet_config(circuit, tol, tstop, args)

    tran_result, tran_seconds = _run_tran(system, circuit, tstop, args.ref_reltol)
    wavelet_result, wavelet_seconds = _run_wavelet(system, circuit, tstop, cfg)

    indices = circuit.print_indices()
    labels = circuit.print_labels()
    errors = report.max_abs_diff(wavelet_result, tran_result, indices)
    summary = report.CompareReport(
        labels=tuple(labels),
        max_abs_error=tuple(float(e) for e in errors),
        wavelet_grid_size=wavelet_result.grid_size,
        tran_grid_size=int(tran_result.grid.size),
        wavelet_seconds=wavelet_seconds,
        tran_seconds=tran_seconds,
        wavelet_tol=tol,
        tran_reltol=args.ref_reltol,
    )
    report.write_compare_report(args.report, summary)

    stem = args.report[:-4] if args.report.endswith(".csv") else args.report
    wavelet_out = args.wavelet_out or f"{stem}_wavelet.csv"
    tran_out = args.tran_out or f"{stem}_tran.csv"
    # The wavelet solution is written on the transient grid so the reported
    # error can be recomputed exactly from the two solution files.
    wavelet_values = wavelet_result.eval_many(tran_result.grid)[:, indices]
    report.write_solution_csv(wavelet_out, labels, tran_result.grid, wavelet_values)
    report.write_solution_csv(
        tran_out, labels, tran_result.grid, tran_result.states[:, indices]
    )
    for label, error in zip(labels, errors):
        print(f"{label}: max_abs_error = {error:.6e}")
    return 0


def _cmd_sweep(args) -> int:
    circuit = _load_circuit(args.netlist)
    system = MnaSystem(circuit)
    tstop = _resolve_tstop(args, circuit)
    tols = sorted(set(args.tols), reverse=True)
    indices = circuit.print_indices()

    reference, _ = _run_tran(system, circuit, tstop, args.ref_reltol)

    rows = []
    for tol in tols:
        result, seconds = _run_tran(system, circuit, tstop, tol)
        error = _max_error_against_reference(result, reference, indices)
        rows.append(("tran", tol, seconds, int(result.grid.size), error))
    for tol in tols:
        cfg = _wavelet_config(circuit, tol, tstop, args)
        result, seconds = _run_wavelet(system, circuit, tstop, cfg)
        errors = report.max_abs_diff(result, reference, indices)
        rows.append(("wavelet", tol, seconds, result.grid_size, float(errors.max())))
    report.write_stats_csv(args.stats, rows)
    return 0


def _max_error_against_reference(result, reference, indices) -> float:
    worst = 0.0
    for t, state in zip(reference.grid, reference.states):
        approx = result.sample(float(min(t, result.grid[-1])))
        worst = max(worst, float(np.max(np.abs(approx[indices] - state[indices]))))
    return worst


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    handlers = {
        "tran": _cmd_tran,
        "wavelet": _cmd_wavelet,
        "compare": _cmd_compare,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NetlistError, ElaborationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
