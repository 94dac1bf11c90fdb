"""Coefficient perturbations and numerical checks of the perturbation bounds.

A perturbed operator ``L~ = -div(A~ grad u) + c~ u`` differs from ``L`` by
coefficient fields of sup-norm ``eps_A`` and ``eps_c``. The relative level
``delta = max(eps_A/m, eps_c/zeta)`` controls the distance between the
inverses, eigenvalues, spectral projectors and projected sources of the two
operators. Every check returns a :class:`LemmaRecord` with both sides of the
inequality and a status in ``{"pass", "fail", "inapplicable"}``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as la
import sympy as sp

from .descent import C_SLACK, misalignment_bound
from .errors import ConfigError, GapConditionError, PerturbationFloorError, SolverError
from .fields import Field, coordinates, _closed_lattice
from .grid import Grid, GridFunction, inner_product, max_derivative_norm, norm_l2, sample
from .operator import CoefficientField, DiscreteOperator, _mesh_points, assemble, growth_constant
from .spectral import DENSE_LIMIT, EigenDecomposition, SpectralProjector, eigensolve, projector_distance

SHAPES = ("shift", "scaling", "bump")
RELATIVE_TOLERANCE = 1e-9
INVERSE_FORM_TOLERANCE = 1e-8
# Hypotheses of the eigenvalue-power and peeling bounds.
POWER_HYPOTHESIS = 1.0 / 20.0
PEELING_HYPOTHESIS = 1.0 / 10.0


@dataclass(frozen=True)
class PerturbationSpec:
    """Requested sup-norm distances and the shape of the perturbation.

    ``shift``   A~ = A + eps_A I,                 c~ = c + eps_c
    ``scaling`` A~ = (1 + eps_A/M) A,             c~ = (1 + eps_c/max c) c
    ``bump``    A~ = A + eps_A b I,               c~ = c + eps_c b
    with ``b = prod_i sin(pi x_i)^2`` normalised to maximum one over the
    points where the assembly samples coefficients.
    """

    eps_A: float = 0.0
    eps_c: float = 0.0
    shape: str = "shift"

    def __post_init__(self):
        for name in ("eps_A", "eps_c"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {value!r}")
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown perturbation shape {self.shape!r}; choose from {list(SHAPES)}")

    @property
    def is_zero(self) -> bool:
        return self.eps_A == 0 and self.eps_c == 0


@dataclass(frozen=True)
class RealizedPerturbation:
    """Perturbation attached to an assembled ``L~``.

    ``realized_A`` and ``realized_c`` are the measured maxima of ``|A~ - A|``
    (spectral norm) and ``|c~ - c|`` over the assembly points and the dense
    lattice; they equal the requested values up to rounding.
    """

    spec: PerturbationSpec
    m: float
    zeta: float
    delta: float
    realized_A: float
    realized_c: float


def perturbation_delta(eps_A: float, eps_c: float, m: float, zeta: float) -> float:
    """``delta = max(eps_A/m, eps_c/zeta)``; the second term is zero when ``eps_c = 0``."""
    if not m > 0:
        raise PerturbationFloorError(f"ellipticity constant m = {m} must be positive")
    if eps_A < 0 or eps_c < 0:
        raise ConfigError("perturbation sizes must be non-negative")
    c_term = 0.0
    if eps_c > 0:
        if not zeta > 0:
            raise PerturbationFloorError(f"eps_c = {eps_c} > 0 requires zeta > 0, got zeta = {zeta}")
        c_term = eps_c / zeta
    return max(eps_A / m, c_term)


def _assembly_points(grid: Grid) -> np.ndarray:
    nodes = grid.axis_coordinates()
    faces = (np.arange(grid.n + 1) + 0.5) * grid.h
    blocks = [grid.nodes, _mesh_points([faces] * grid.dim)]
    for i in range(grid.dim):
        blocks.append(_mesh_points([faces if ax == i else nodes for ax in range(grid.dim)]))
    return np.vstack(blocks)


def bump_field(grid: Grid) -> Field:
    """``prod_i sin(pi x_i)^2`` scaled so its maximum over the assembly points is one."""
    xs = coordinates(grid.dim)
    raw = Field(sp.Mul(*[sp.sin(sp.pi * x) ** 2 for x in xs]), grid.dim)
    peak = float(np.max(raw(_assembly_points(grid))))
    return Field(raw.expr / sp.Float(peak), grid.dim)


def perturbed_coefficients(base: CoefficientField, spec: PerturbationSpec, grid: Grid) -> CoefficientField:
    """Coefficient fields ``(A~, c~)`` for the given perturbation."""
    d = base.dim
    if spec.is_zero:
        return base
    eps_A, eps_c = sp.Float(spec.eps_A), sp.Float(spec.eps_c)
    a = [[base.a[i][j].expr for j in range(d)] for i in range(d)]
    c = base.c.expr
    if spec.shape == "shift":
        if spec.eps_A:
            a = [[a[i][j] + (eps_A if i == j else 0) for j in range(d)] for i in range(d)]
        if spec.eps_c:
            c = c + eps_c
    elif spec.shape == "scaling":
        _, M, _ = base.ellipticity_bounds()
        if spec.eps_A:
            factor = 1 + sp.Float(spec.eps_A / M)
            a = [[factor * a[i][j] for j in range(d)] for i in range(d)]
        if spec.eps_c:
            c_max = base.c.sup_norm()
            if c_max > 0:
                c = (1 + sp.Float(spec.eps_c / c_max)) * c
    else:
        bump = bump_field(grid).expr
        if spec.eps_A:
            a = [[a[i][j] + (eps_A * bump if i == j else 0) for j in range(d)] for i in range(d)]
        if spec.eps_c:
            c = c + eps_c * bump
    return CoefficientField.from_exprs(a, c, d, f"{base.name}+{spec.shape}")


def _realized_distances(base: CoefficientField, perturbed: CoefficientField, grid: Grid) -> tuple[float, float]:
    pts = np.vstack([_closed_lattice(grid.dim), _assembly_points(grid)])
    diff = perturbed.matrix_at(pts) - base.matrix_at(pts)
    eps_A = float(np.max(np.abs(np.linalg.eigvalsh(diff)))) if diff.size else 0.0
    eps_c = float(np.max(np.abs(perturbed.c(pts) - base.c(pts))))
    return eps_A, eps_c


def perturb_operator(base: CoefficientField, spec: PerturbationSpec, grid: Grid,
                     reference: DiscreteOperator | None = None) -> DiscreteOperator:
    """Assemble ``L~`` and attach the realized perturbation with ``delta``.

    ``m`` and ``zeta`` are taken from the unperturbed operator (``reference``
    when given, otherwise assembled here).
    """
    L = reference if reference is not None else assemble(base, grid)
    m, _, zeta = L.ellipticity
    if not m - spec.eps_A > 0:
        raise PerturbationFloorError(f"m - eps_A = {m - spec.eps_A:.6g} must be positive")
    if spec.eps_c > 0 and not zeta - spec.eps_c > 0:
        raise PerturbationFloorError(f"zeta - eps_c = {zeta - spec.eps_c:.6g} must be positive")
    delta = perturbation_delta(spec.eps_A, spec.eps_c, m, zeta)
    coeff = perturbed_coefficients(base, spec, grid)
    Lt = L if coeff is base else assemble(coeff, grid)
    realized = _realized_distances(base, coeff, grid) if coeff is not base else (0.0, 0.0)
    info = RealizedPerturbation(spec, m, zeta, delta, *realized)
    return DiscreteOperator(grid, Lt.matrix, coeff, Lt.ellipticity, info)


@dataclass(frozen=True)
class LemmaRecord:
    """One checked inequality ``lhs <= rhs``; ``slack = rhs - lhs`` (None when inapplicable)."""

    lemma: str
    lhs: float | None
    rhs: float | None
    slack: float | None
    status: str
    n: int | None = None
    shape: str | None = None
    epsilon: float | None = None
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def tagged(self, shape: str, epsilon: float) -> "LemmaRecord":
        return LemmaRecord(self.lemma, self.lhs, self.rhs, self.slack, self.status, self.n, shape, epsilon, self.note)

    def to_dict(self) -> dict:
        return asdict(self)


def _judge(lemma: str, lhs: float, rhs: float, abs_slack: float = 0.0, n: int | None = None,
           note: str = "") -> LemmaRecord:
    lhs, rhs = float(lhs), float(rhs)
    ok = lhs <= rhs * (1 + RELATIVE_TOLERANCE) + abs_slack
    return LemmaRecord(lemma, lhs, rhs, rhs - lhs, "pass" if ok else "fail", n, note=note)


def _inapplicable(lemma: str, reason: str, lhs: float | None = None, n: int | None = None) -> LemmaRecord:
    return LemmaRecord(lemma, lhs, None, None, "inapplicable", n, note=reason)


def _random_vectors(grid: Grid, trials: int, seed: int) -> np.ndarray:
    """Columns of white noise and of random smooth low-mode combinations."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.size, trials - trials // 2))
    modes = np.arange(1, 9)
    smooth = np.zeros((grid.size, trials // 2))
    for col in range(trials // 2):
        weights = rng.standard_normal((len(modes),) * grid.dim)
        values = np.zeros(grid.shape)
        for index in np.ndindex(weights.shape):
            profile = np.ones(grid.shape)
            for axis, m in enumerate(index):
                shape = [1] * grid.dim
                shape[axis] = grid.n
                profile = profile * np.sin(modes[m] * np.pi * grid.axis_coordinates()).reshape(shape)
            values += weights[index] * profile
        smooth[:, col] = values.ravel()
    return np.hstack([noise, smooth])


def relative_form_bound(L: DiscreteOperator, Lt: DiscreteOperator, delta: float, trials: int = 200,
                        seed: int = 0) -> LemmaRecord:
    """``max_u <(L~ - L) u, u> / <L u, u> <= delta`` over random ``u``."""
    if trials < 2:
        raise ConfigError("at least two trials are required")
    U = _random_vectors(L.grid, trials, seed)
    denom = np.einsum("ij,ij->j", U, L.matrix @ U)
    if not np.all(denom > 0):
        raise SolverError("<L u, u> is not positive: the assembled operator is not positive definite")
    numer = np.einsum("ij,ij->j", U, (Lt.matrix - L.matrix) @ U)
    return _judge("relative_form", float(np.max(numer / denom)), delta)


def relative_inverse_form_bound(L: DiscreteOperator, Lt: DiscreteOperator, delta: float, trials: int = 200,
                                seed: int = 0) -> LemmaRecord:
    """``max_u <(L^{-1} L~ - I) u, u> / ||u||^2 <= delta`` with ``L^{-1}`` applied by sparse solves."""
    U = _random_vectors(L.grid, trials, seed + 1)
    image = L.solve((Lt.matrix - L.matrix) @ U)
    ratios = np.einsum("ij,ij->j", U, image) / np.einsum("ij,ij->j", U, U)
    lhs = float(np.max(ratios))
    ok = lhs <= delta * (1 + INVERSE_FORM_TOLERANCE)
    return LemmaRecord("relative_inverse_form", lhs, float(delta), float(delta - lhs), "pass" if ok else "fail")


def weyl_check(eig: EigenDecomposition, eigt: EigenDecomposition, delta: float) -> LemmaRecord:
    """``max_i |1/lambda_i - 1/lambda~_i| <= delta`` over the computed pairs."""
    if eig.grid != eigt.grid or eig.count != eigt.count:
        raise ConfigError("decompositions must share grid and count")
    lhs = float(np.max(np.abs(1.0 / eig.eigenvalues - 1.0 / eigt.eigenvalues)))
    return _judge("weyl", lhs, delta)


def _power_norm(apply_sym, size: int, seed: int, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue magnitude of a symmetric operator by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = apply_sym(v)
        value = float(np.linalg.norm(w))
        if value == 0.0:
            return 0.0
        v = w / value
        if abs(value - estimate) <= tol * value:
            return value
        estimate = value
    raise SolverError(f"power iteration stalled at {estimate:.6g}")


def inverse_difference_norm(L: DiscreteOperator, Lt: DiscreteOperator, seed: int = 0) -> float:
    """``||L^{-1} - L~^{-1}||`` by power iteration on the symmetric solve difference."""
    if L.matrix is Lt.matrix or (L.matrix != Lt.matrix).nnz == 0:
        return 0.0
    return _power_norm(lambda v: L.solve(v) - Lt.solve(v), L.grid.size, seed)


def inverse_difference_check(L: DiscreteOperator, Lt: DiscreteOperator, delta: float, seed: int = 0) -> LemmaRecord:
    return _judge("inverse_difference", inverse_difference_norm(L, Lt, seed), delta)


def davis_kahan_check(P: SpectralProjector, Pt: SpectralProjector, delta: float, gamma: float) -> LemmaRecord:
    """``||P_k - P~_k|| <= delta/(gamma - delta)``."""
    distance = projector_distance(P, Pt)
    if not gamma > delta:
        return _inapplicable("davis_kahan", f"gamma = {gamma:.6g} <= delta = {delta:.6g}", distance)
    return _judge("davis_kahan", distance, delta / (gamma - delta))


def source_projection_distance(f: GridFunction, P: SpectralProjector, Pt: SpectralProjector, delta: float,
                               gamma: float) -> LemmaRecord:
    """``||P f - P~ f|| <= ||f|| delta/(gamma - delta)``."""
    distance = norm_l2(P(f) - Pt(f))
    if not gamma > delta:
        return _inapplicable("source_projection", f"gamma = {gamma:.6g} <= delta = {delta:.6g}", distance)
    return _judge("source_projection", distance, norm_l2(f) * delta / (gamma - delta))


def eigen_power_check(eig: EigenDecomposition, eigt: EigenDecomposition, delta: float, n: int, k: int) -> LemmaRecord:
    """``lambda~_i^n <= (1 + 2 n delta lambda_k) lambda_i^n`` for ``i <= k``.

    The left side is reported as the largest ratio ``lambda~_i^n / lambda_i^n``.
    """
    if not 1 <= k <= min(eig.count, eigt.count):
        raise ConfigError(f"k = {k} exceeds the computed pairs")
    lam_k = float(eig.eigenvalues[k - 1])
    ratio = float(np.max((eigt.eigenvalues[:k] / eig.eigenvalues[:k]) ** n))
    if n * delta * lam_k > POWER_HYPOTHESIS:
        return _inapplicable("eigen_power", f"n delta lambda_k = {n * delta * lam_k:.6g} > 1/20", ratio, n)
    return _judge("eigen_power", ratio, 1 + 2 * n * delta * lam_k, n=n)


def _dense_or_operator(op: DiscreteOperator):
    return op.matrix.toarray() if op.grid.size <= DENSE_LIMIT else None


def peeling_norm(L: DiscreteOperator, Lt: DiscreteOperator, n: int) -> float:
    """``||L^{-n} L~^n||`` in the discrete L2 norm.

    Written as ``I + Y`` with ``Y = L^{-n} sum_j L~^j E L^{n-1-j}`` and
    ``E = L~ - L`` so the small part is never formed by cancellation. The norm
    is ``sqrt(1 + lambda_max(Y + Y^T + Y^T Y))``.
    """
    if n < 1:
        raise ConfigError("peeling bound needs n >= 1")
    size = L.grid.size
    if size > DENSE_LIMIT:
        raise ConfigError(f"peeling norm is evaluated densely; grid size {size} exceeds {DENSE_LIMIT}")
    E = (Lt.matrix - L.matrix).toarray()
    if not np.any(E):
        return 1.0
    A, At = L.matrix.toarray(), Lt.matrix.toarray()
    total = np.zeros((size, size))
    for j in range(n):
        total += np.linalg.matrix_power(At, j) @ E @ np.linalg.matrix_power(A, n - 1 - j)
    factor = la.cho_factor(A)
    Y = total
    for _ in range(n):
        Y = la.cho_solve(factor, Y)
    Z = Y + Y.T + Y.T @ Y
    top = float(la.eigvalsh(0.5 * (Z + Z.T), subset_by_index=[size - 1, size - 1])[0])
    return math.sqrt(max(0.0, 1.0 + top))


def peeling_check(L: DiscreteOperator, Lt: DiscreteOperator, delta: float, n: int) -> LemmaRecord:
    """``||L^{-n} L~^n|| <= 1 + 2 n delta`` when ``n delta <= 1/10``."""
    lhs = peeling_norm(L, Lt, n)
    if n * delta > PEELING_HYPOTHESIS:
        return _inapplicable("peeling", f"n delta = {n * delta:.6g} > 1/10", lhs, n)
    return _judge("peeling", lhs, 1 + 2 * n * delta, n=n)


@dataclass(frozen=True)
class ApplicationConstants:
    """Scalars entering the bounds on ``||L~^n (f_nn - f_spn)||``.

    ``eps_spn`` and ``eps_nn`` are maxima over ``|alpha| <= n + 2``.
    """

    C: float
    eps_spn: float
    eps_nn: float
    delta: float
    gamma: float
    lambda_k: float
    lambda_tilde_k: float
    f_norm: float


def _rounding_floor(op: DiscreteOperator, n: int, scale: float) -> float:
    """Size of rounding noise in ``L~^n g``: machine epsilon times ``||L~||_inf^n ||g||`` with margin."""
    if n == 0:
        return 0.0
    row_sum = float(abs(op.matrix).sum(axis=1).max())
    return 16 * n * np.finfo(float).eps * row_sum**n * scale


def ltilde_application_bound(Lt: DiscreteOperator, f_nn: GridFunction, f_spn: GridFunction,
                             ft_spn: GridFunction, n: int, constants: ApplicationConstants) -> tuple[LemmaRecord, ...]:
    """Bounds on powers of ``L~`` applied to source residuals.

    part 1: ``||L~^n (f_nn - f_spn)|| <= (n!)^2 C^n (eps_spn + eps_nn)``
    part 2: ``||L~^n (f_nn - f~_spn)|| <= part-1 bound + 4 (1 + delta/(gamma - delta)) lambda_k^n ||f||``
    part 2 (sharp): the last term replaced by :func:`misalignment_bound`, which vanishes with delta.
    The discrete sides get an absolute slack ``C_SLACK h^2`` plus a rounding floor.
    """
    if int(n) != n or not 0 <= n <= 3:
        raise ConfigError(f"application bounds are checked for 0 <= n <= 3, got {n}")
    x = constants
    h2 = C_SLACK * Lt.grid.h**2

    def power(g: GridFunction) -> np.ndarray:
        values = g.values
        for _ in range(n):
            values = Lt.matrix @ values
        return values

    scale = np.sqrt(Lt.grid.cell_volume)
    first = f_nn - f_spn
    second = f_nn - ft_spn
    lhs1 = scale * float(np.linalg.norm(power(first)))
    lhs2 = scale * float(np.linalg.norm(power(second)))
    base = math.factorial(n) ** 2 * x.C**n * (x.eps_spn + x.eps_nn)
    records = [_judge("ltilde_application_1", lhs1, base, h2 + _rounding_floor(Lt, n, norm_l2(first)), n)]
    if not x.gamma > x.delta:
        reason = f"gamma = {x.gamma:.6g} <= delta = {x.delta:.6g}"
        records += [_inapplicable("ltilde_application_2", reason, lhs2, n),
                    _inapplicable("ltilde_application_2_sharp", reason, lhs2, n)]
        return tuple(records)
    slack2 = h2 + _rounding_floor(Lt, n, norm_l2(second))
    displayed = 4 * (1 + x.delta / (x.gamma - x.delta)) * x.lambda_k**n * x.f_norm
    sharp = misalignment_bound(n, x.delta, x.gamma, x.lambda_k, x.lambda_tilde_k, x.f_norm)
    records.append(_judge("ltilde_application_2", lhs2, base + displayed, slack2, n))
    records.append(_judge("ltilde_application_2_sharp", lhs2, base + sharp, slack2, n))
    return tuple(records)


def approximation_errors(f: Field, f_spn: GridFunction, f_nn: Field, max_order: int) -> tuple[float, float]:
    """``(eps_spn, eps_nn)`` up to derivative order ``max_order``.

    ``eps_spn`` uses finite differences of ``f - f_spn`` on the grid (``f_spn``
    is only known there); ``eps_nn`` is exact for the closed-form ``f - f_nn``.
    """
    residual = sample(f, f_spn.grid) - f_spn
    eps_spn = max_derivative_norm(residual, max_order)
    eps_nn = (f - f_nn).max_derivative_norm(max_order)
    return float(eps_spn), float(eps_nn)


@dataclass(frozen=True)
class PerturbationReport:
    delta: float
    gamma: float
    records: tuple[LemmaRecord, ...]

    @property
    def failures(self) -> list[LemmaRecord]:
        return [r for r in self.records if r.status == "fail"]


def lemma_suite(L: DiscreteOperator, Lt: DiscreteOperator, eig: EigenDecomposition, eigt: EigenDecomposition,
                k: int, f: Field, f_nn: Field, *, trials: int = 200, seed: int = 0,
                max_power: int = 3) -> PerturbationReport:
    """Run every perturbation check for one pair of operators."""
    info = Lt.perturbation
    if not isinstance(info, RealizedPerturbation):
        raise ConfigError("the perturbed operator must come from perturb_operator")
    delta = info.delta
    gamma = eig.gap(k)
    P, Pt = eig.projector(k), eigt.projector(k)
    f_grid = sample(f, L.grid)
    f_spn, ft_spn = P(f_grid), Pt(f_grid)
    records = [
        relative_form_bound(L, Lt, delta, trials, seed),
        relative_inverse_form_bound(L, Lt, delta, trials, seed),
        weyl_check(eig, eigt, delta),
        inverse_difference_check(L, Lt, delta, seed),
        davis_kahan_check(P, Pt, delta, gamma),
        source_projection_distance(f_grid, P, Pt, delta, gamma),
    ]
    records += [eigen_power_check(eig, eigt, delta, n, k) for n in range(1, max_power + 1)]
    records += [peeling_check(L, Lt, delta, n) for n in range(1, max_power + 1)]
    C = max(growth_constant(L.coefficients).C, growth_constant(Lt.coefficients).C)
    f_nn_grid = sample(f_nn, L.grid)
    for n in range(0, max_power + 1):
        eps_spn, eps_nn = approximation_errors(f, f_spn, f_nn, n + 2)
        constants = ApplicationConstants(C, eps_spn, eps_nn, delta, gamma, float(eig.eigenvalues[k - 1]),
                                         float(eigt.eigenvalues[k - 1]), norm_l2(f_grid))
        records += ltilde_application_bound(Lt, f_nn_grid, f_spn, ft_spn, n, constants)
    return PerturbationReport(delta, gamma, tuple(records))


@dataclass(frozen=True)
class SweepSettings:
    """Base problem and parameter grid of a perturbation sweep."""

    base: CoefficientField
    grid: Grid
    k: int
    f: Field
    f_nn: Field
    shapes: tuple[str, ...] = SHAPES
    epsilons: tuple[float, ...] = (0.0, 1e-5, 1e-4, 1e-3)
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        for eps in self.epsilons:
            PerturbationSpec(eps, eps, "shift")
        for shape in self.shapes:
            PerturbationSpec(0.0, 0.0, shape)
        if not self.epsilons or not self.shapes:
            raise ConfigError("a sweep needs at least one shape and one epsilon")


def run_sweep(settings: SweepSettings) -> list[LemmaRecord]:
    """All lemma checks over ``shapes x epsilons`` with ``eps_A = eps_c = eps``."""
    s = settings
    L = assemble(s.base, s.grid)
    eig = eigensolve(L, s.k + 1, seed=s.seed)
    if not eig.eigenvalues[s.k] > eig.eigenvalues[s.k - 1]:
        raise GapConditionError(f"no spectral gap after eigenvalue {s.k}")
    records = []
    for shape in s.shapes:
        for eps in s.epsilons:
            eps_c = eps if L.ellipticity[2] > 0 else 0.0
            Lt = perturb_operator(s.base, PerturbationSpec(eps, eps_c, shape), s.grid, reference=L)
            eigt = eig if Lt.matrix is L.matrix else eigensolve(Lt, s.k + 1, seed=s.seed)
            report = lemma_suite(L, Lt, eig, eigt, s.k, s.f, s.f_nn, trials=s.trials, seed=s.seed)
            records += [r.tagged(shape, eps) for r in report.records]
    return records
