"""``gridjac`` command-line front end.

Results go to stdout, diagnostics to stderr.  Commands that write an output
directory also leave a single ``manifest.json`` in it.

Exit codes: 0 ok, 2 bad input (parse, range, connectivity, empty bank),
3 power flow did not converge, 4 numerical failure, 5 insufficient data,
6 no TLS solution, 7 topology identification failed.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConnectivityError, InsufficientData, NoTLSSolution, NonConvergence,
                     NumericalError, ParseError, RangeError, RootSelectionError, SingularJacobian,
                     TIFailure)
from .estimation import SnapshotSeries, build_deltas, compare_to_benchmark, estimate
from .grid import load_network
from .powerflow import PowerFlowSpec, newton_raphson_solve
from .spectral import ar1_theoretical_density, mp_density
from .synth import ScenarioConfig, synthesize
from .topology import InputSeries, ModelBank, TIConfig, match_model

EXIT_OK, EXIT_INPUT, EXIT_NONCONV, EXIT_NUMERIC = 0, 2, 3, 4
EXIT_DATA, EXIT_TLS, EXIT_TI = 5, 6, 7

MANIFEST = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)   # path -> sha256
    seed: int | None = None
    version: str = __version__
    wall_time: float = 0.0

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        for stale in out_dir.glob("*manifest*.json"):
            stale.unlink()
        path = out_dir / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n", encoding="utf-8")
        return path


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _err(msg: str):
    print(f"gridjac: {msg}", file=sys.stderr)


def _csv_matrix(a) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(a), delimiter=",", fmt="%.17g")
    return buf.getvalue()


def _node_table(ids, data) -> str:
    """One row per node: ``bus,s1,...,sT``."""
    head = "bus," + ",".join(str(k + 1) for k in range(data.shape[1]))
    rows = [f"{i}," + ",".join(f"{v:.17g}" for v in row) for i, row in zip(ids, data)]
    return head + "\n" + "\n".join(rows) + "\n"


def read_node_table(path):
    """Inverse of the node-row CSV layout; returns ``(bus ids, data)``."""
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), str(path)) from None
    return raw[:, 0].astype(int), raw[:, 1:]


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), str(path)) from None


def _parse_window(text):
    if text is None:
        return None
    if ":" in text:
        start, length = text.split(":")
        return int(start), int(length)
    return text


# --- commands ----------------------------------------------------------------
# each returns None (stdout only) or (out_dir, input hashes, seed, extra config)

def cmd_powerflow(args):
    grid = load_network(args.case)
    spec = PowerFlowSpec.from_grid(grid, tol=args.tol, max_iter=args.max_iter)
    state, its = newton_raphson_solve(grid, spec)
    lines = ["bus,v,theta"] + [f"{b.id},{v:.12g},{t:.12g}"
                               for b, v, t in zip(grid.buses, state.v, state.theta)]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    _err(f"converged in {its} iterations")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "state.csv").write_text(text, encoding="utf-8")
        return out, {args.case: sha256(args.case)}, None, {}
    return None


def cmd_estimate(args):
    series = SnapshotSeries.from_csv(Path(args.snapshots).read_text(encoding="utf-8"))
    d = build_deltas(series)
    j, flags = estimate(d, args.method, scale=not args.no_scale)
    inputs = {args.snapshots: sha256(args.snapshots)}
    report = {"method": args.method, "k": d.k, "t": d.t, "flags": list(flags)}
    rep = None
    if args.benchmark:
        bench = _read_matrix(args.benchmark)
        rep = compare_to_benchmark(j, bench, args.method, flags)
        report = rep.to_dict() | {"t": d.t}
        inputs[args.benchmark] = sha256(args.benchmark)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "jacobian.csv").write_text(_csv_matrix(j.entries), encoding="utf-8")
    if rep is not None:
        (out / "error.csv").write_text(rep.err_csv(), encoding="utf-8")
    text = json.dumps(report, indent=2)
    (out / "report.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return out, inputs, None, {}


def cmd_ti(args):
    bank = ModelBank.from_dir(args.bank) if Path(args.bank).is_dir() else None
    if bank is None:
        raise FileNotFoundError(f"bank directory {args.bank} not found")
    ids, z_ob = read_node_table(args.obs)
    src = Path(args.inputs) if args.inputs else Path(args.obs).parent
    pid, p = read_node_table(src / "p.csv")
    qid, q = read_node_table(src / "q.csv")
    for label, grid in bank.models:
        want = [b.id for b in grid.buses]
        if list(ids) != want or list(pid) != want or list(qid) != want:
            raise RangeError(f"bus ids in the data do not match model {label}")
    cfg = TIConfig(p=args.p, b=args.b, bins=args.bins, window=_parse_window(args.window))
    report = match_model(z_ob, bank, InputSeries(p.T, q.T), cfg)
    print(report.winner)
    for r in report.results:
        _err(f"{r.label}: distance {r.distance:.6g}, b {r.b:.4f}")
    inputs = {args.obs: sha256(args.obs), str(src / "p.csv"): sha256(src / "p.csv"),
              str(src / "q.csv"): sha256(src / "q.csv")}
    inputs |= {str(f): sha256(f) for f in sorted(Path(args.bank).glob("*.json"))}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        for r in report.results:
            if r.empirical is not None:
                (out / f"density_{r.label}_empirical.csv").write_text(r.empirical.to_csv(), encoding="utf-8")
                (out / f"density_{r.label}_ar1.csv").write_text(r.theoretical.to_csv(), encoding="utf-8")
        return out, inputs, None, {}
    return None


def cmd_density(args):
    grid = None
    if args.grid:
        lo, hi, n = args.grid.split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
    if args.kind == "mp":
        rho = mp_density(args.c, grid=grid)
    else:
        rho = ar1_theoretical_density(args.b, args.c, grid=grid)
    sys.stdout.write(rho.to_csv())
    _err(f"mass {rho.mass:.6f} on [{rho.support[0]:.6g}, {rho.support[-1]:.6g}]")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"density_{args.kind}.csv").write_text(rho.to_csv(), encoding="utf-8")
        return out, {}, None, {}
    return None


def cmd_synth(args):
    text = Path(args.scenario).read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{args.scenario}:{exc.lineno}:{exc.colno}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    config = ScenarioConfig.from_dict(raw)
    bank = ModelBank.from_dir(args.bank)
    sc = synthesize(config, bank)
    ids = [b.id for b in bank[config.grid_a].buses]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "z_ob.csv").write_text(_node_table(ids, sc.z_ob), encoding="utf-8")
    (out / "p.csv").write_text(_node_table(ids, sc.inputs.p.T), encoding="utf-8")
    (out / "q.csv").write_text(_node_table(ids, sc.inputs.q.T), encoding="utf-8")
    (out / "truth.csv").write_text("sample,model\n" + "".join(
        f"{k + 1},{lab}\n" for k, lab in enumerate(sc.truth)), encoding="utf-8")
    print(json.dumps({"out": str(out), "nodes": len(ids), "samples": config.n_samples}))
    inputs = {args.scenario: sha256(args.scenario)}
    inputs |= {str(f): sha256(f) for f in sorted(Path(args.bank).glob("*.json"))}
    return out, inputs, config.seed, {"scenario": sc.manifest()}


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridjac", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("powerflow", help="solve AC power flow for a case file")
    s.add_argument("case")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(func=cmd_powerflow)

    s = sub.add_parser("estimate", help="estimate the Jacobian from a snapshot CSV")
    s.add_argument("snapshots")
    s.add_argument("--method", choices=("ols", "tls"), default="ols")
    s.add_argument("--benchmark", help="K x K CSV of the reference Jacobian")
    s.add_argument("--no-scale", action="store_true", help="TLS without RMS balancing")
    s.add_argument("--out", default="estimate_out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("ti", help="identify the topology against a model bank")
    s.add_argument("obs", help="node-row CSV of observed |V|")
    s.add_argument("bank", help="directory of candidate case files")
    s.add_argument("--inputs", help="directory holding p.csv and q.csv (default: next to obs)")
    s.add_argument("--p", type=int, default=0, help="number of factors removed")
    s.add_argument("--b", type=float, default=None, help="fixed AR coefficient")
    s.add_argument("--bins", type=int, default=100)
    s.add_argument("--window", help="T1..T5 or START:LENGTH (1-based)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ti)

    s = sub.add_parser("density", help="tabulate a limiting spectral density")
    s.add_argument("--kind", choices=("mp", "ar1"), required=True)
    s.add_argument("--c", type=float, required=True)
    s.add_argument("--b", type=float, default=0.0)
    s.add_argument("--grid", help="LO:HI:N evaluation grid")
    s.add_argument("--out")
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("synth", help="generate a synthetic observation scenario")
    s.add_argument("scenario", help="scenario JSON (an empty object gives the defaults)")
    s.add_argument("bank")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    return ap


def _exit_code(exc: BaseException) -> int:
    table = [
        (NonConvergence, EXIT_NONCONV),
        (InsufficientData, EXIT_DATA),
        (NoTLSSolution, EXIT_TLS),
        (TIFailure, EXIT_TI),
        ((SingularJacobian, NumericalError, RootSelectionError, np.linalg.LinAlgError), EXIT_NUMERIC),
        ((ParseError, RangeError, ConnectivityError, ValueError, LookupError, OSError), EXIT_INPUT),
    ]
    for kinds, code in table:
        if isinstance(exc, kinds):
            return code
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        written = args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        where = getattr(exc, "location", None)
        _err(f"{type(exc).__name__}: {exc}" + (f" (at {where})" if where and str(where) not in str(exc) else ""))
        return code
    if written:
        out, inputs, seed, extra = written
        config = {k: v for k, v in vars(args).items() if k != "func"} | extra
        RunManifest(args.command, config, inputs, seed,
                    wall_time=time.perf_counter() - t0).write(Path(out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
