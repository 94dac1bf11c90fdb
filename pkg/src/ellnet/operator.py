"""Divergence-form elliptic operators ``L u = -div(A grad u) + c u``.

The Dirichlet operator is assembled with a flux (midpoint) stencil so the
matrix is exactly symmetric. The expanded, non-divergence form
``-sum a_ij d_ij u - sum_j (sum_i d_i a_ij) d_j u + c u`` is used only for the
derived operators, the operator chain rule and the order-n norm bounds,
where it acts on closed-form functions sampled on a lattice that extends
past the boundary (no boundary condition is imposed there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse
import sympy as sp
from scipy.sparse.linalg import splu

from .errors import AssemblyError, ConfigError, GridMismatchError
from .fields import Field, coordinates, multi_indices, unit_index, _closed_lattice
from .grid import Grid, GridFunction, norm_l2, partial, stencil_derivative

# Multiplicative tolerance applied to analytic right-hand sides.
ANALYTIC_TOLERANCE = 1e-6


def _number(value) -> sp.Expr:
    value = float(value)
    return sp.Integer(int(value)) if value.is_integer() else sp.Float(value)


@dataclass(frozen=True)
class CoefficientField:
    """Closed-form coefficients ``A(x)`` (symmetric) and ``c(x)``."""

    a: tuple[tuple[Field, ...], ...]
    c: Field
    name: str = "custom"

    def __post_init__(self):
        d = self.c.dim
        if len(self.a) != d or any(len(row) != d for row in self.a):
            raise ConfigError(f"coefficient matrix must be {d}x{d}")
        for i in range(d):
            for j in range(i + 1, d):
                if sp.simplify(self.a[i][j].expr - self.a[j][i].expr) != 0:
                    raise ConfigError(f"coefficient matrix is not symmetric at ({i}, {j})")

    @property
    def dim(self) -> int:
        return self.c.dim

    @classmethod
    def from_exprs(cls, a, c, dim: int, name: str = "custom") -> "CoefficientField":
        rows = tuple(tuple(Field(sp.sympify(a[i][j]), dim) for j in range(dim)) for i in range(dim))
        return cls(rows, Field(sp.sympify(c), dim), name)

    @cached_property
    def has_mixed_terms(self) -> bool:
        return any(not self.a[i][j].is_zero for i in range(self.dim) for j in range(self.dim) if i != j)

    def matrix_at(self, points: np.ndarray) -> np.ndarray:
        """``A(x)`` at each point, shape ``(m, d, d)``."""
        pts = np.atleast_2d(points)
        d = self.dim
        out = np.empty((pts.shape[0], d, d))
        for i in range(d):
            for j in range(i, d):
                out[:, i, j] = out[:, j, i] = self.a[i][j](pts)
        return out

    def ellipticity_bounds(self, points: np.ndarray | None = None) -> tuple[float, float, float]:
        """``(m, M, zeta)`` over the dense closed lattice and optional extra points."""
        pts = _closed_lattice(self.dim)
        if points is not None:
            pts = np.vstack([pts, points])
        eig = np.linalg.eigvalsh(self.matrix_at(pts))
        return float(eig[:, 0].min()), float(eig[:, -1].max()), float(self.c(pts).min())

    @cached_property
    def derivative_sups(self) -> dict:
        """Sup-norms ``||d^alpha a_ij||`` for ``|alpha| <= 3`` and ``||d^alpha c||`` for ``|alpha| <= 2``."""
        table = {}
        for i in range(self.dim):
            for j in range(self.dim):
                for alpha in multi_indices(self.dim, 3):
                    table[("a", i, j, alpha)] = self.a[i][j].derivative(alpha).sup_norm()
        for alpha in multi_indices(self.dim, 2):
            table[("c", alpha)] = self.c.derivative(alpha).sup_norm()
        return table


def coefficient_preset(name: str, dim: int, **params) -> CoefficientField:
    """Named coefficient families.

    ``constant``      A = a I (or a full matrix ``a``), c = c
    ``affine``        a_ii = a0 + a1 x_i, c = c0 + c1 sum_i x_i
    ``quadratic``     a_ii = a0 + a1 x_i^2, c = c0 + c1 sum_i x_i^2
    ``trigonometric`` a_ii = a0 + a1 prod_j sin(pi x_j), c = c0 + c1 prod_j cos(pi x_j)^2
    """
    xs = coordinates(dim)
    zero = sp.Integer(0)
    allowed = {
        "constant": {"a", "c"},
        "affine": {"a0", "a1", "c0", "c1"},
        "quadratic": {"a0", "a1", "c0", "c1"},
        "trigonometric": {"a0", "a1", "c0", "c1"},
    }
    if name not in allowed:
        raise ConfigError(f"unknown coefficient preset {name!r}; choose from {sorted(allowed)}")
    unknown = set(params) - allowed[name]
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)} for preset {name!r}")

    if name == "constant":
        a = params.get("a", 1.0)
        if np.ndim(a) == 0:
            a = [[a if i == j else 0.0 for j in range(dim)] for i in range(dim)]
        a = np.asarray(a, dtype=float)
        if a.shape != (dim, dim):
            raise ConfigError(f"constant coefficient matrix must be {dim}x{dim}")
        rows = [[_number(a[i, j]) for j in range(dim)] for i in range(dim)]
        return CoefficientField.from_exprs(rows, _number(params.get("c", 0.0)), dim, name)

    a0 = _number(params.get("a0", 1.0))
    a1 = _number(params.get("a1", 0.5))
    c0 = _number(params.get("c0", 0.0))
    c1 = _number(params.get("c1", 0.0))
    if name == "affine":
        diag = [a0 + a1 * x for x in xs]
        c = c0 + c1 * sum(xs)
    elif name == "quadratic":
        diag = [a0 + a1 * x**2 for x in xs]
        c = c0 + c1 * sum(x**2 for x in xs)
    else:
        bump = sp.Mul(*[sp.sin(sp.pi * x) for x in xs])
        diag = [a0 + a1 * bump for _ in xs]
        c = c0 + c1 * sp.Mul(*[sp.cos(sp.pi * x) ** 2 for x in xs])
    rows = [[diag[i] if i == j else zero for j in range(dim)] for i in range(dim)]
    return CoefficientField.from_exprs(rows, c, dim, name)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Assembled Dirichlet operator on a grid.

    ``ellipticity`` holds ``(m, M, zeta)`` measured over the dense lattice
    and every point where the assembly sampled the coefficients.
    """

    grid: Grid
    matrix: sparse.csr_matrix
    coefficients: CoefficientField
    ellipticity: tuple[float, float, float]
    perturbation: object | None = field(default=None, compare=False)

    @cached_property
    def _factor(self):
        return splu(self.matrix.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``L^{-1}`` by a direct sparse solve."""
        return self._factor.solve(np.asarray(rhs, dtype=float))

    def quadratic_form(self, u: GridFunction) -> float:
        return float(self.grid.cell_volume * u.values @ (self.matrix @ u.values))


def _difference_1d(n: int, h: float) -> sparse.csr_matrix:
    """Forward differences on the ``n+1`` faces of a 1D interior grid."""
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    vals = np.concatenate([np.ones(n), -np.ones(n)]) / h
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _average_1d(n: int) -> sparse.csr_matrix:
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    return sparse.csr_matrix((np.full(2 * n, 0.5), (rows, cols)), shape=(n + 1, n))


def _kron_all(factors) -> sparse.csr_matrix:
    out = factors[0]
    for f in factors[1:]:
        out = sparse.kron(out, f, format="csr")
    return sparse.csr_matrix(out)


def _mesh_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _check_elliptic(coeff: CoefficientField, points: np.ndarray, describe) -> None:
    eig = np.linalg.eigvalsh(coeff.matrix_at(points))[:, 0]
    bad = np.flatnonzero(~(eig > 0))
    if bad.size:
        raise AssemblyError(
            f"coefficient matrix is not positive definite at {describe(int(bad[0]))} "
            f"(smallest eigenvalue {eig[bad[0]]:.6g})"
        )


def assemble(coeff: CoefficientField, grid: Grid) -> DiscreteOperator:
    """Assemble the symmetric flux-form matrix of ``-div(A grad u) + c u``."""
    if coeff.dim != grid.dim:
        raise GridMismatchError(f"coefficients of dimension {coeff.dim} on {grid}")
    d, n, h = grid.dim, grid.n, grid.h
    nodes_1d = grid.axis_coordinates()
    faces_1d = (np.arange(n + 1) + 0.5) * h
    eye = sparse.identity(n, format="csr")
    diff, avg = _difference_1d(n, h), _average_1d(n)

    _check_elliptic(coeff, grid.nodes, grid.node_label)
    c_nodes = coeff.c(grid.nodes)
    negative = np.flatnonzero(~(c_nodes >= 0))
    if negative.size:
        raise AssemblyError(f"zeroth-order coefficient is negative at {grid.node_label(int(negative[0]))}")

    sampled = [grid.nodes]
    matrix = sparse.diags(c_nodes, format="csr")
    for i in range(d):
        points = _mesh_points([faces_1d if ax == i else nodes_1d for ax in range(d)])
        _check_elliptic(coeff, points, lambda p, pts=points: f"face point x={tuple(np.round(pts[p], 6))}")
        sampled.append(points)
        grad = _kron_all([diff if ax == i else eye for ax in range(d)])
        weights = sparse.diags(coeff.a[i][i](points))
        matrix = matrix + grad.T @ weights @ grad

    if coeff.has_mixed_terms:
        cells = _mesh_points([faces_1d] * d)
        _check_elliptic(coeff, cells, lambda p: f"cell centre x={tuple(np.round(cells[p], 6))}")
        sampled.append(cells)
        cell_grad = [_kron_all([diff if ax == i else avg for ax in range(d)]) for i in range(d)]
        for i in range(d):
            for j in range(i + 1, d):
                if coeff.a[i][j].is_zero:
                    continue
                mixed = cell_grad[i].T @ sparse.diags(coeff.a[i][j](cells)) @ cell_grad[j]
                matrix = matrix + mixed + mixed.T

    # Averaging with the transpose makes mirrored entries bitwise identical.
    matrix = sparse.csr_matrix(0.5 * (matrix + matrix.T))
    matrix.sum_duplicates()
    matrix.sort_indices()
    bounds = coeff.ellipticity_bounds(np.vstack(sampled))
    if not bounds[0] > 0:
        raise AssemblyError(f"ellipticity constant m = {bounds[0]:.6g} is not positive")
    return DiscreteOperator(grid, matrix, coeff, bounds)


def _same_grid(op: DiscreteOperator, u: GridFunction) -> None:
    if u.grid != op.grid:
        raise GridMismatchError(f"operator on {op.grid} applied to function on {u.grid}")


def apply(op: DiscreteOperator, u: GridFunction) -> GridFunction:
    """Discrete ``L u``."""
    _same_grid(op, u)
    return GridFunction(op.grid, op.matrix @ u.values)


def apply_power(op: DiscreteOperator, u: GridFunction, n: int) -> GridFunction:
    """``L^n u`` by repeated sparse products."""
    if int(n) != n or n < 0:
        raise ConfigError(f"operator power must be a non-negative integer, got {n}")
    _same_grid(op, u)
    values = u.values
    for _ in range(int(n)):
        values = op.matrix @ values
    return GridFunction(op.grid, values)


class _Lattice:
    """Grid nodes ``i h`` for ``-ghosts <= i <= n + 1 + ghosts``.

    Stencils fill missing neighbours with NaN, so any value that depends on
    data outside the lattice is flagged instead of silently wrong.
    """

    def __init__(self, grid: Grid, ghosts: int):
        self.grid = grid
        self.ghosts = ghosts
        self.coords = np.arange(-ghosts, grid.n + 2 + ghosts) * grid.h
        self._cache: dict = {}

    def sample(self, f: Field) -> np.ndarray:
        key = f.expr
        if key not in self._cache:
            self._cache[key] = f.on_mesh([self.coords] * self.grid.dim)
        return self._cache[key]

    def diff(self, array: np.ndarray, alpha) -> np.ndarray:
        for axis, order in enumerate(alpha):
            array = stencil_derivative(array, axis, order, self.grid.h, fill=np.nan)
        return array

    def interior(self, array: np.ndarray) -> np.ndarray:
        window = slice(self.ghosts + 1, self.ghosts + 1 + self.grid.n)
        out = array[(window,) * self.grid.dim].ravel()
        if not np.all(np.isfinite(out)):
            raise AssemblyError("lattice too narrow for the requested stencil depth")
        return out

    def norm(self, array: np.ndarray) -> float:
        return float(np.sqrt(self.grid.cell_volume) * np.linalg.norm(self.interior(array)))


def _expanded_action(coeff: CoefficientField, array: np.ndarray, lattice: _Lattice, alpha=None):
    """Expanded-form operator, or its coefficient-differentiated version ``L_alpha``."""
    d = coeff.dim
    base = tuple(alpha) if alpha is not None else (0,) * d
    out = np.zeros_like(array)
    for i in range(d):
        for j in range(d):
            a = coeff.a[i][j].derivative(base)
            if not a.is_zero:
                out = out - lattice.sample(a) * lattice.diff(array, unit_index(d, i, j))
    for j in range(d):
        drift = sum((coeff.a[i][j].derivative(tuple(b + e for b, e in zip(base, unit_index(d, i)))) for i in range(d)),
                    Field(sp.Integer(0), d))
        if not drift.is_zero:
            out = out - lattice.sample(drift) * lattice.diff(array, unit_index(d, j))
    c = coeff.c.derivative(base)
    if not c.is_zero:
        out = out + lattice.sample(c) * array
    return out


@dataclass(frozen=True)
class DerivedOperator:
    """Action of ``L_k`` (one axis) or ``L_kl`` (two axes).

    ``L_alpha u = -sum (d^alpha a_ij) d_ij u - sum_j (sum_i d^alpha d_i a_ij) d_j u + (d^alpha c) u``.
    """

    coefficients: CoefficientField
    axes: tuple[int, ...]
    grid: Grid

    @property
    def alpha(self) -> tuple[int, ...]:
        return unit_index(self.grid.dim, *self.axes)

    def __call__(self, u: GridFunction) -> GridFunction:
        if u.grid != self.grid:
            raise GridMismatchError(f"derived operator on {self.grid} applied to function on {u.grid}")
        d, base = self.grid.dim, self.alpha
        nodes = self.grid.nodes
        out = np.zeros(self.grid.size)
        for i in range(d):
            for j in range(d):
                a = self.coefficients.a[i][j].derivative(base)
                if not a.is_zero:
                    out -= a(nodes) * partial(u, unit_index(d, i, j)).values
        for j in range(d):
            drift = sum(self.coefficients.a[i][j].derivative(tuple(b + e for b, e in zip(base, unit_index(d, i)))).expr
                        for i in range(d))
            if drift != 0:
                out -= Field(drift, d)(nodes) * partial(u, unit_index(d, j)).values
        c = self.coefficients.c.derivative(base)
        if not c.is_zero:
            out += c(nodes) * u.values
        return GridFunction(self.grid, out)

    def on_lattice(self, array: np.ndarray, lattice: _Lattice) -> np.ndarray:
        return _expanded_action(self.coefficients, array, lattice, self.alpha)


def derived_operator(coeff: CoefficientField, axes, grid: Grid) -> DerivedOperator:
    """Build ``L_k`` or ``L_kl`` for the given axis indices."""
    axes = tuple(int(a) for a in np.atleast_1d(axes))
    if not 1 <= len(axes) <= 2 or any(not 0 <= a < grid.dim for a in axes):
        raise ConfigError(f"axes {axes} out of range for dimension {grid.dim}")
    return DerivedOperator(coeff, axes, grid)


def _as_field(u, dim: int) -> Field:
    if isinstance(u, Field):
        if u.dim != dim:
            raise GridMismatchError(f"field of dimension {u.dim} used with dimension {dim}")
        return u
    raise TypeError("a closed-form Field is required: the check evaluates it beyond the boundary")


def chain_rule_residual(op: DiscreteOperator, u: Field, n: int, k: int) -> float:
    """Relative residual of the operator chain rule.

    ``||d_k L^n u - [sum_i L^{n-i} L_k L^{i-1} u + L^n d_k u]|| / ||d_k L^n u||``
    evaluated on interior nodes with every operator in expanded form.
    """
    if n not in (1, 2, 3):
        raise ConfigError(f"chain rule checked for n in {{1, 2, 3}}, got {n}")
    grid, coeff = op.grid, op.coefficients
    if not 0 <= k < grid.dim:
        raise ConfigError(f"axis {k} out of range")
    u = _as_field(u, grid.dim)
    if u.is_zero:
        return 0.0
    lattice = _Lattice(grid, ghosts=n + 3)
    e_k = unit_index(grid.dim, k)
    lk = derived_operator(coeff, (k,), grid)

    def power(array, times):
        for _ in range(times):
            array = _expanded_action(coeff, array, lattice)
        return array

    powers = [lattice.sample(u)]
    for _ in range(n):
        powers.append(_expanded_action(coeff, powers[-1], lattice))
    lhs = lattice.diff(powers[n], e_k)
    rhs = power(lattice.diff(powers[0], e_k), n)
    for i in range(1, n + 1):
        rhs = rhs + power(lk.on_lattice(powers[i - 1], lattice), n - i)
    numerator = lattice.norm(lhs - rhs)
    denominator = lattice.norm(lhs)
    if denominator == 0.0:
        return 0.0 if numerator == 0.0 else math.inf
    return numerator / denominator


@dataclass(frozen=True)
class GrowthConstant:
    C: float
    dim: int


def growth_constant(coeff: CoefficientField, dim: int | None = None) -> GrowthConstant:
    """``C = (2 d^2 + 1) max{max ||d^alpha a_ij||, max ||d^alpha c||}``."""
    dim = coeff.dim if dim is None else dim
    table = coeff.derivative_sups
    expected = dim * dim * len(multi_indices(dim, 3)) + len(multi_indices(dim, 2))
    if len(table) != expected:
        raise ConfigError("derivative sup-norm table is incomplete")
    return GrowthConstant((2 * dim * dim + 1) * max(table.values()), dim)


@dataclass(frozen=True)
class OrderBoundCheck:
    """One inequality of the order-n bounds: ``lhs <= rhs``."""

    name: str
    n: int
    lhs: float
    rhs: float
    passed: bool


@dataclass(frozen=True)
class OrderBoundRecord:
    n: int
    C: float
    checks: tuple[OrderBoundCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def lhs(self) -> float:
        return self.checks[0].lhs

    @property
    def rhs(self) -> float:
        return self.checks[0].rhs


def check_order_bounds(op: DiscreteOperator, u: Field, n: int) -> OrderBoundRecord:
    """Check the order-n growth bounds for a closed-form ``u``.

    ``||L^n u|| <= (n!)^2 C^n max_{|alpha|<=n+2} ||d^alpha u||``,
    ``||d_k L^n u|| <= (n+1)(n!)^2 C^n max_{|alpha|<=n+2} ||d^alpha u||`` and
    ``||d_kl L^n u|| <= ((n+1)!)^2 C^n max_{|alpha|<=n+3} ||d^alpha u||``.
    Left sides are discrete, right sides analytic.
    """
    if int(n) != n or not 0 <= n <= 3:
        raise ConfigError(f"order bounds are checked for 0 <= n <= 3, got {n}")
    grid = op.grid
    d = grid.dim
    u = _as_field(u, d)
    C = growth_constant(op.coefficients).C
    lattice = _Lattice(grid, ghosts=n + 4)
    array = lattice.sample(u)
    for _ in range(n):
        array = _expanded_action(op.coefficients, array, lattice)
    lhs = lattice.norm(array)
    grad = max(lattice.norm(lattice.diff(array, unit_index(d, k))) for k in range(d))
    hess = max(lattice.norm(lattice.diff(array, unit_index(d, k, l))) for k in range(d) for l in range(d))
    low = u.max_derivative_norm(n + 2)
    high = max(low, max((u.derivative(a).l2_norm() for a in multi_indices(d, n + 3, n + 3)), default=0.0))
    scale = math.factorial(n) ** 2 * C**n
    sides = [
        ("power", lhs, scale * low),
        ("gradient", grad, (n + 1) * scale * low),
        ("hessian", hess, math.factorial(n + 1) ** 2 * C**n * high),
    ]
    checks = tuple(
        OrderBoundCheck(name, n, float(left), float(right), bool(left <= right * (1 + ANALYTIC_TOLERANCE)))
        for name, left, right in sides
    )
    return OrderBoundRecord(n, C, checks)
