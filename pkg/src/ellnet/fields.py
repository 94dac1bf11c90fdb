"""Closed-form scalar fields on the unit box.

Fields are thin wrappers around sympy expressions in the coordinates
``x1, ..., xd``. They provide vectorised evaluation, exact partial
derivatives, sup-norms on a dense closed lattice and L2 norms by
tensor Gauss-Legendre quadrature.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import sympy as sp

# Points per axis of the closed lattice used for sup-norms. Every lattice
# contains 0, 1/2 and 1 so the extrema of the preset fields are hit exactly.
SUP_LATTICE = {1: 1001, 2: 101, 3: 41}
# Gauss-Legendre points per axis used for L2 norms of closed-form fields.
QUADRATURE_POINTS = {1: 64, 2: 40, 3: 20}


@lru_cache(maxsize=None)
def coordinates(dim: int) -> tuple[sp.Symbol, ...]:
    """Return the coordinate symbols ``x1..xd``."""
    return tuple(sp.Symbol(f"x{i + 1}", real=True) for i in range(dim))


def multi_indices(dim: int, max_order: int, min_order: int = 0):
    """All multi-indices of the given dimension with order in a range."""
    out = []
    for order in range(min_order, max_order + 1):
        for combo in itertools.combinations_with_replacement(range(dim), order):
            alpha = [0] * dim
            for axis in combo:
                alpha[axis] += 1
            out.append(tuple(alpha))
    return out


def unit_index(dim: int, *axes: int) -> tuple[int, ...]:
    """Multi-index with one unit per listed axis (``e_k`` or ``e_k + e_l``)."""
    alpha = [0] * dim
    for axis in axes:
        alpha[axis] += 1
    return tuple(alpha)


@lru_cache(maxsize=None)
def _closed_lattice(dim: int) -> np.ndarray:
    ticks = np.linspace(0.0, 1.0, SUP_LATTICE[dim])
    mesh = np.meshgrid(*([ticks] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@lru_cache(maxsize=None)
def _quadrature(dim: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_POINTS[dim])
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    mesh = np.meshgrid(*([nodes] * dim), indexing="ij")
    wmesh = np.meshgrid(*([weights] * dim), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    return points, w


@dataclass(frozen=True)
class Field:
    """A closed-form scalar field ``R^d -> R``.

    Parameters
    ----------
    expr : sympy expression in the symbols returned by :func:`coordinates`.
    dim : spatial dimension.
    """

    expr: sp.Expr
    dim: int

    def __post_init__(self):
        expr = sp.sympify(self.expr)
        extra = expr.free_symbols - set(coordinates(self.dim))
        if extra:
            raise ValueError(f"field depends on unknown symbols {sorted(map(str, extra))}")
        object.__setattr__(self, "expr", expr)

    @classmethod
    def constant(cls, value: float, dim: int) -> "Field":
        return cls(sp.Float(value) if not float(value).is_integer() else sp.Integer(int(value)), dim)

    @cached_property
    def _func(self):
        return sp.lambdify(coordinates(self.dim), self.expr, modules="numpy")

    @property
    def is_zero(self) -> bool:
        return self.expr == 0

    @property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols

    def __call__(self, points) -> np.ndarray:
        """Evaluate at an array of points with shape ``(m, d)`` (or ``(d,)``)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} columns, got {pts.shape[1]}")
        value = self._func(*pts.T)
        out = np.broadcast_to(np.asarray(value, dtype=float), (pts.shape[0],)).copy()
        return out[0] if single else out

    def on_mesh(self, axes: list[np.ndarray]) -> np.ndarray:
        """Evaluate on the tensor mesh spanned by per-axis coordinate arrays."""
        mesh = np.meshgrid(*axes, indexing="ij")
        value = self._func(*mesh)
        return np.broadcast_to(np.asarray(value, dtype=float), mesh[0].shape).copy()

    def derivative(self, alpha: tuple[int, ...]) -> "Field":
        """Exact partial derivative ``d^alpha``."""
        return _derivative(self, tuple(int(a) for a in alpha))

    def sup_norm(self) -> float:
        """Max of ``|field|`` over a dense closed lattice of the unit box."""
        if self.is_constant:
            return abs(float(self.expr))
        return float(np.max(np.abs(self(_closed_lattice(self.dim)))))

    def l2_norm(self) -> float:
        """L2 norm over the unit box by tensor Gauss-Legendre quadrature."""
        points, weights = _quadrature(self.dim)
        return float(np.sqrt(np.sum(weights * self(points) ** 2)))

    def max_derivative_norm(self, max_order: int) -> float:
        """``max_{|alpha| <= max_order} ||d^alpha field||_L2``."""
        return max(self.derivative(a).l2_norm() for a in multi_indices(self.dim, max_order))

    def __add__(self, other):
        other = other.expr if isinstance(other, Field) else other
        return Field(self.expr + other, self.dim)

    __radd__ = __add__

    def __mul__(self, other):
        other = other.expr if isinstance(other, Field) else other
        return Field(self.expr * other, self.dim)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = other.expr if isinstance(other, Field) else other
        return Field(self.expr - other, self.dim)

    def __neg__(self):
        return Field(-self.expr, self.dim)


@lru_cache(maxsize=4096)
def _derivative(field: Field, alpha: tuple[int, ...]) -> Field:
    if len(alpha) != field.dim:
        raise ValueError(f"multi-index {alpha} does not match dimension {field.dim}")
    expr = field.expr
    for sym, order in zip(coordinates(field.dim), alpha):
        if order:
            expr = sp.diff(expr, sym, order)
    return Field(expr, field.dim)


def sine_mode(mode: tuple[int, ...]) -> Field:
    """Product ``prod_i sin(m_i pi x_i)``."""
    xs = coordinates(len(mode))
    return Field(sp.Mul(*[sp.sin(m * sp.pi * x) for m, x in zip(mode, xs)]), len(mode))
