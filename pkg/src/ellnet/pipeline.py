"""End-to-end runs behind the command-line subcommands.

Each run returns plain dataclasses; writing artifacts and mapping failures to
exit codes is left to :mod:`ellnet.cli`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .descent import (C_SLACK, SPAN_TOLERANCE, BoundReport, BudgetInputs, ConvergenceTrace, DescentConfig,
                      InitializationBound, error_budget, gd_run, initialization_bound)
from .errors import GapConditionError
from .exprgraph import (C_REC, ExprGraph, NetworkGrowth, ResidualInputs, ResidualTrace, constant, evaluate_on_grid,
                        from_sympy, grow_network, residual_trace)
from .fields import Field
from .grid import GridFunction, norm_l2, sample
from .operator import DiscreteOperator, assemble, growth_constant
from .perturb import LemmaRecord, SweepSettings, approximation_errors, perturb_operator, run_sweep
from .spectral import EigenDecomposition, eigensolve

# Derivative order up to which the source approximation errors are measured.
APPROXIMATION_ORDER = 4
OBJECTIVE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Check:
    """A named invariant evaluated during a run."""

    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True, eq=False)
class Problem:
    """Operators, spectra and projected sources shared by every run."""

    config: ExperimentConfig
    L: DiscreteOperator
    Lt: DiscreteOperator
    eig: EigenDecomposition
    eigt: EigenDecomposition
    delta: float
    gamma: float
    f: Field
    f_nn: Field
    f_grid: GridFunction
    f_spn: GridFunction
    ft_spn: GridFunction

    @property
    def h(self) -> float:
        return self.L.grid.h

    @property
    def slack(self) -> float:
        return C_SLACK * self.h**2


def setup(cfg: ExperimentConfig) -> Problem:
    """Assemble both operators, solve for ``k + 1`` eigenpairs and check the gap condition."""
    grid = cfg.grid
    base = cfg.coefficient_field()
    L = assemble(base, grid)
    Lt = perturb_operator(base, cfg.perturbation, grid, reference=L)
    eig = eigensolve(L, cfg.k + 1, seed=cfg.seed)
    eigt = eig if Lt.matrix is L.matrix else eigensolve(Lt, cfg.k + 1, seed=cfg.seed)
    delta = Lt.perturbation.delta
    gamma = eig.gap(cfg.k)
    if not gamma > delta:
        raise GapConditionError(
            f"gap condition gamma > delta fails: gamma = {gamma:.6g}, delta = {delta:.6g} at k = {cfg.k}")
    f = cfg.source_field()
    f_grid = sample(f, grid)
    return Problem(cfg, L, Lt, eig, eigt, delta, gamma, f, cfg.network_source_field(), f_grid,
                   eig.projector(cfg.k)(f_grid), eigt.projector(cfg.k)(f_grid))


def _budget_inputs(p: Problem, trace: ConvergenceTrace, u_star: GridFunction, measured: float,
                   eps: tuple[float, float]) -> BudgetInputs:
    cfg = p.config
    C = max(growth_constant(p.L.coefficients).C, growth_constant(p.Lt.coefficients).C)
    R = max(norm_l2(u_star), norm_l2(trace.reference))
    lam, lamt = p.eig.eigenvalues, p.eigt.eigenvalues
    return BudgetInputs(
        delta=p.delta, gamma=p.gamma, eps_spn=eps[0], eps_nn=eps[1], R=R, eta=trace.eta, rho=trace.rho, T=cfg.T,
        C=C, lambda_1=float(lam[0]), lambda_k=float(lam[cfg.k - 1]), lambda_tilde_k=float(lamt[cfg.k - 1]),
        f_norm=norm_l2(p.f_grid), u_star_norm=norm_l2(u_star), measured=measured, slack=p.slack,
    )


def descent_checks(trace: ConvergenceTrace) -> list[Check]:
    """Contraction, span preservation and objective monotonicity of a descent trace."""
    worst_ratio, worst_span, worst_rise = 0.0, 0.0, 0.0
    prev = trace.records[0]
    for rec, u in zip(trace.records[1:], trace.iterates[1:]):
        worst_ratio = max(worst_ratio, rec.ratio)
        worst_span = max(worst_span, rec.span_residual / max(1.0, norm_l2(u)))
        worst_rise = max(worst_rise, rec.objective - prev.objective)
        prev = rec
    rise_tol = OBJECTIVE_TOLERANCE * max(1.0, abs(trace.records[0].objective), abs(trace.records[-1].objective))
    return [
        Check("contraction", worst_ratio <= trace.rho + 1e-9,
              f"max ratio {worst_ratio:.17g} vs rho {trace.rho:.17g}"),
        Check("span_preservation", worst_span <= SPAN_TOLERANCE,
              f"max relative out-of-span residual {worst_span:.3e}"),
        Check("objective_monotone", worst_rise <= rise_tol, f"max objective increase {worst_rise:.3e}"),
    ]


def budget_check(report: BoundReport) -> Check:
    passed = not (report.asserted and report.status == "fail")
    return Check("error_budget", passed,
                 f"status {report.status}: measured {report.measured:.6g} vs budget {report.budget:.6g}"
                 f" + slack {report.slack:.3g}")


@dataclass(frozen=True, eq=False)
class SolveResult:
    problem: Problem
    trace: ConvergenceTrace
    u_star: GridFunction
    initialization: InitializationBound
    report: BoundReport
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def solve(cfg: ExperimentConfig) -> SolveResult:
    """Descent on ``L~`` with ``f~_spn``; the grid iterate ``u_T`` enters the budget."""
    p = setup(cfg)
    trace = gd_run(p.Lt, p.ft_spn, p.eigt, DescentConfig(cfg.k, cfg.T))
    u_star = GridFunction(p.L.grid, p.L.solve(p.f_grid.values))
    init = initialization_bound(p.L, p.f_grid, float(p.eig.eigenvalues[0]))
    eps = approximation_errors(p.f, p.f_spn, p.f_nn, APPROXIMATION_ORDER)
    report = error_budget(_budget_inputs(p, trace, u_star, norm_l2(u_star - trace.final), eps))
    checks = (*descent_checks(trace), budget_check(report))
    return SolveResult(p, trace, u_star, init, report, checks)


def coefficient_graphs(op: DiscreteOperator) -> tuple[tuple[tuple[ExprGraph, ...], ...], ExprGraph]:
    d = op.grid.dim
    coeff = op.coefficients
    A = tuple(tuple(from_sympy(coeff.a[i][j].expr, d) for j in range(d)) for i in range(d))
    return A, from_sympy(coeff.c.expr, d)


def network(cfg: ExperimentConfig, Lt: DiscreteOperator, eta: float) -> NetworkGrowth:
    """Grow ``u^_0 = 0, ..., u^_T`` for the perturbed coefficients and ``f_nn``."""
    A, c = coefficient_graphs(Lt)
    f_nn = from_sympy(cfg.network_source_field().expr, cfg.dim)
    return grow_network(constant(0.0, cfg.dim), A, c, f_nn, eta, cfg.T)


@dataclass(frozen=True)
class GrowthRow:
    t: int
    N_t: int
    nodes_t: int
    bound_t: int

    @property
    def passed(self) -> bool:
        return self.N_t <= self.bound_t


@dataclass(frozen=True, eq=False)
class NetgrowResult:
    growth: NetworkGrowth
    eta: float
    rows: tuple[GrowthRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def growth_rows(growth: NetworkGrowth) -> tuple[GrowthRow, ...]:
    """``bound_t = c_rec (d^2 (N_A + N_{t-1}) + N_{t-1} + N_f + N_c)``; ``bound_0 = N_0``."""
    counts = growth.counts
    rows = [GrowthRow(0, counts.N_t[0], counts.nodes_t[0], counts.N0)]
    for t in range(1, len(counts.N_t)):
        bound = math.floor(C_REC * counts.recurrence_base(t - 1))
        rows.append(GrowthRow(t, counts.N_t[t], counts.nodes_t[t], bound))
    return tuple(rows)


def netgrow(cfg: ExperimentConfig) -> NetgrowResult:
    """Network growth for the configured problem; the step size comes from the spectrum of ``L~``."""
    grid = cfg.grid
    base = cfg.coefficient_field()
    L = assemble(base, grid)
    Lt = perturb_operator(base, cfg.perturbation, grid, reference=L)
    lam = eigensolve(Lt, cfg.k, seed=cfg.seed).eigenvalues
    eta = 2.0 / (lam[0] + lam[cfg.k - 1])
    growth = network(cfg, Lt, eta)
    return NetgrowResult(growth, eta, growth_rows(growth))


@dataclass(frozen=True, eq=False)
class CertifyResult:
    solve: SolveResult
    growth: NetworkGrowth
    residuals: ResidualTrace
    report: BoundReport
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_discrepancy(self) -> float:
        return max(r.max_discrepancy for r in self.residuals.records)


def certify(cfg: ExperimentConfig) -> CertifyResult:
    """Solve, grow the network, compare it with the grid iterates and evaluate the budget on ``u^_T``."""
    solved = solve(cfg)
    p = solved.problem
    trace = solved.trace
    growth = network(cfg, p.Lt, trace.eta)
    eps = approximation_errors(p.f, p.f_spn, p.f_nn, APPROXIMATION_ORDER)
    network_final = evaluate_on_grid(growth.iterates[-1], p.L.grid)
    inputs = _budget_inputs(p, trace, solved.u_star, norm_l2(solved.u_star - network_final), eps)
    report = error_budget(inputs)
    residuals = residual_trace(ResidualInputs(
        operator=p.Lt, ft_spn=p.ft_spn, f_nn=from_sympy(p.f_nn.expr, cfg.dim), grid_iterates=trace.iterates,
        graph_iterates=growth.iterates, eta=trace.eta, C=inputs.C, delta=p.delta, gamma=p.gamma,
        eps_spn=eps[0], eps_nn=eps[1], lambda_k=inputs.lambda_k, slack=p.slack,
    ), cfg.T)
    worst = max((r for r in residuals.records if not r.passed), key=lambda r: r.t, default=None)
    checks = (
        *solved.checks[:-1],
        Check("residual_trace", residuals.passed,
              "all steps within cap" if worst is None else f"step {worst.t}: {worst.measured:.6g} > {worst.cap:.6g}"),
        Check("recurrence", all(r.passed for r in growth_rows(growth)), f"c_rec = {C_REC}"),
        budget_check(report),
    )
    return CertifyResult(solved, growth, residuals, report, checks)


def sweep(cfg: ExperimentConfig) -> list[LemmaRecord]:
    settings = SweepSettings(
        base=cfg.coefficient_field(), grid=cfg.grid, k=cfg.k, f=cfg.source_field(), f_nn=cfg.network_source_field(),
        shapes=tuple(cfg.sweep.shapes), epsilons=tuple(float(e) for e in cfg.sweep.epsilons),
        trials=cfg.sweep.trials, seed=cfg.seed,
    )
    return run_sweep(settings)


def discrepancy_profile(result: CertifyResult) -> np.ndarray:
    return np.array([r.max_discrepancy for r in result.residuals.records])
