"""Command-line runner: ``ellnet {solve|perturb-sweep|netgrow|certify} --config PATH``.

Exit codes: 0 success, 1 a checked invariant failed, 2 invalid configuration
or violated precondition, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, InvariantViolation, NotDifferentiableError, NumericalError
from .exprgraph import C_REC, export_json
from .io import SCHEMA_VERSION, write_csv, write_json
from .spectral import eigenpairs_rows

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _require(checks) -> None:
    failed = [c for c in checks if not c.passed]
    if failed:
        raise InvariantViolation("; ".join(f"{c.name}: {c.detail}" for c in failed))


def _problem_summary(p: pipeline.Problem) -> dict:
    cfg = p.config
    spec = cfg.perturbation
    return {
        "dim": cfg.dim, "n": cfg.n, "h": p.h, "k": cfg.k, "T": cfg.T, "seed": cfg.seed,
        "coefficients": cfg.coefficients.preset,
        "perturbation": {"eps_A": spec.eps_A, "eps_c": spec.eps_c, "shape": spec.shape},
        "eigenvalues": [float(v) for v in p.eig.eigenvalues],
        "perturbed_eigenvalues": [float(v) for v in p.eigt.eigenvalues],
    }


def _write_descent(out: Path, result: pipeline.SolveResult) -> None:
    write_csv(out / "trace.csv", ("t", "error", "ratio", "objective"), result.trace.rows())
    write_csv(out / "eigenpairs.csv", ("index", "eigenvalue", "residual"), eigenpairs_rows(result.problem.eig))
    write_csv(out / "eigenpairs_perturbed.csv", ("index", "eigenvalue", "residual"),
              eigenpairs_rows(result.problem.eigt))


def cmd_solve(cfg, out: Path) -> int:
    result = pipeline.solve(cfg)
    _write_descent(out, result)
    write_json(out / "bound_report.json", {
        "schema_version": SCHEMA_VERSION,
        "problem": _problem_summary(result.problem),
        "initialization": {"bound": result.initialization.bound, "solution_norm": result.initialization.solution_norm},
        "budget": result.report.to_dict(),
        "checks": [c.to_dict() for c in result.checks],
    })
    _require(result.checks)
    return EXIT_OK


def cmd_perturb_sweep(cfg, out: Path) -> int:
    records = pipeline.sweep(cfg)
    write_json(out / "sweep.json", {
        "schema_version": SCHEMA_VERSION,
        "grid": {"dim": cfg.dim, "n": cfg.n},
        "k": cfg.k,
        "records": [r.to_dict() for r in records],
    })
    failed = [r for r in records if r.status == "fail"]
    if failed:
        raise InvariantViolation(", ".join(sorted({f"{r.lemma} ({r.shape}, eps={r.epsilon:g})" for r in failed})))
    return EXIT_OK


def _counts_rows(rows):
    return [(r.t, r.N_t, r.nodes_t, r.bound_t) for r in rows]


def cmd_netgrow(cfg, out: Path) -> int:
    result = pipeline.netgrow(cfg)
    write_csv(out / "counts.csv", ("t", "N_t", "nodes_t", "bound_t"), _counts_rows(result.rows))
    write_json(out / "graph.json", export_json(result.growth.iterates[-1]))
    bad = [r for r in result.rows if not r.passed]
    if bad:
        raise InvariantViolation(f"recurrence: N_{bad[0].t} = {bad[0].N_t} exceeds {bad[0].bound_t} with c_rec = {C_REC}")
    return EXIT_OK


def cmd_certify(cfg, out: Path) -> int:
    result = pipeline.certify(cfg)
    solved = result.solve
    _write_descent(out, solved)
    write_csv(out / "counts.csv", ("t", "N_t", "nodes_t", "bound_t"),
              _counts_rows(pipeline.growth_rows(result.growth)))
    write_csv(out / "residuals.csv", ("t", "measured", "max_discrepancy", "grid_residual", "cap"),
              [(r.t, r.measured, r.max_discrepancy, r.grid_residual, r.cap) for r in result.residuals.records])
    counts = result.growth.counts
    write_json(out / "certificate.json", {
        "schema_version": SCHEMA_VERSION,
        "status": result.report.status,
        "problem": _problem_summary(solved.problem),
        "budget": result.report.to_dict(),
        "network": {
            "N_0": counts.N0, "N_A": counts.N_A, "N_c": counts.N_c, "N_f": counts.N_f,
            "N_T": counts.N_t[-1], "nodes_T": counts.nodes_t[-1], "depth_T": result.growth.iterates[-1].depth,
            "activations": sorted(result.growth.iterates[-1].activations),
        },
        "max_discrepancy": result.max_discrepancy,
        "residuals": [
            {"t": r.t, "measured": r.measured, "max_discrepancy": r.max_discrepancy,
             "grid_residual": r.grid_residual, "cap": r.cap, "asserted": r.asserted}
            for r in result.residuals.records
        ],
        "checks": [c.to_dict() for c in result.checks],
    })
    _require(result.checks)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "perturb-sweep": cmd_perturb_sweep,
    "netgrow": cmd_netgrow,
    "certify": cmd_certify,
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ellnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment JSON file")
        cmd.add_argument("--out", help="output directory (overrides the config)")
        cmd.add_argument("--seed", type=_seed, help="random seed (overrides the config)")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    # Lazy import keeps argument errors fast.
    from .config import load_config

    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, NotDifferentiableError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())
