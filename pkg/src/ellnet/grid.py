"""Uniform interior grids on the unit box and functions sampled on them.

Functions live on the ``n^d`` interior nodes ``x = (i_1 h, ..., i_d h)`` with
``1 <= i_j <= n`` and ``h = 1/(n+1)``. Nodes are ordered C-style with the
first axis slowest. Boundary values are implicitly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import GridMismatchError, SamplingError, UnsupportedOrderError
from .fields import Field, multi_indices

MultiIndex = tuple[int, ...]
MAX_DERIVATIVE_ORDER = 4

# Central second-order stencils, offsets -2..2, before dividing by h^order.
_STENCILS = {
    1: np.array([0.0, -0.5, 0.0, 0.5, 0.0]),
    2: np.array([0.0, 1.0, -2.0, 1.0, 0.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``n`` interior points per axis on ``(0, 1)^dim``."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridMismatchError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 3:
            raise GridMismatchError(f"points per axis must be an integer >= 3, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis_coordinates(self) -> np.ndarray:
        return np.arange(1, self.n + 1) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        """Interior node coordinates, shape ``(size, dim)``."""
        mesh = np.meshgrid(*([self.axis_coordinates()] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def node_label(self, flat_index: int) -> str:
        idx = np.unravel_index(flat_index, self.shape)
        coords = ", ".join(f"{(i + 1) * self.h:.6g}" for i in idx)
        return f"node {tuple(int(i) + 1 for i in idx)} at x=({coords})"


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values on the interior nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.grid.size:
            raise GridMismatchError(
                f"expected {self.grid.size} values for {self.grid}, got {values.shape[0]}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.size))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def _check(self, other: "GridFunction") -> None:
        if not isinstance(other, GridFunction):
            raise TypeError(f"expected GridFunction, got {type(other).__name__}")
        if other.grid != self.grid:
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values / float(scalar))

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.grid, -self.values)


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Discrete L2 inner product ``h^d sum_i u_i v_i``."""
    u._check(v)
    return float(u.grid.cell_volume * np.dot(u.values, v.values))


def norm_l2(u: GridFunction) -> float:
    """Discrete L2 norm."""
    return float(np.sqrt(u.grid.cell_volume) * np.linalg.norm(u.values))


def check_multi_index(alpha: MultiIndex, dim: int) -> MultiIndex:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dim or any(a < 0 for a in alpha):
        raise UnsupportedOrderError(f"multi-index {alpha} is invalid for dimension {dim}")
    if sum(alpha) > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(
            f"derivative order {sum(alpha)} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
        )
    return alpha


def stencil_derivative(array: np.ndarray, axis: int, order: int, h: float, fill: float = 0.0) -> np.ndarray:
    """Apply the central stencil of ``order`` along ``axis``.

    Values outside the array are taken to be ``fill``: zero reproduces the
    Dirichlet extension, NaN marks results that depend on missing data.
    """
    if order == 0:
        return array
    weights = _STENCILS[order]
    pad = [(0, 0)] * array.ndim
    pad[axis] = (2, 2)
    padded = np.pad(array, pad, constant_values=fill)
    length = array.shape[axis]
    out = np.zeros_like(array, dtype=float)
    for offset, weight in zip(range(-2, 3), weights):
        if weight == 0.0:
            continue
        window = [slice(None)] * array.ndim
        window[axis] = slice(2 + offset, 2 + offset + length)
        out = out + weight * padded[tuple(window)]
    return out / h**order


def partial(u: GridFunction, alpha: MultiIndex) -> GridFunction:
    """Finite-difference ``d^alpha u`` with the zero extension beyond the boundary."""
    alpha = check_multi_index(alpha, u.grid.dim)
    array = u.as_array()
    for axis, order in enumerate(alpha):
        array = stencil_derivative(array, axis, order, u.grid.h)
    return GridFunction(u.grid, array)


ScalarSource = Union[Field, Callable[[np.ndarray], np.ndarray], float, int]


def sample(expr: ScalarSource, grid: Grid) -> GridFunction:
    """Evaluate a closed-form field (or callable on ``(m, d)`` points) at interior nodes."""
    if isinstance(expr, Field) and expr.dim != grid.dim:
        raise GridMismatchError(f"field of dimension {expr.dim} sampled on {grid}")
    # Non-finite values are reported below, naming the node.
    with np.errstate(all="ignore"):
        if isinstance(expr, (int, float, np.floating)):
            values = np.full(grid.size, float(expr))
        elif isinstance(expr, Field):
            values = expr(grid.nodes)
        else:
            values = np.asarray(expr(grid.nodes), dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise SamplingError(f"non-finite value at {grid.node_label(int(bad[0]))}")
    return GridFunction(grid, values)


def composed_derivative(u: GridFunction, alpha: MultiIndex) -> GridFunction:
    """``d^alpha u`` for any order, composing stencils of order at most four per axis.

    Used only for norm estimates of smooth residuals; :func:`partial` remains
    the bounded-order public derivative.
    """
    array = u.as_array()
    for axis, order in enumerate(alpha):
        while order > 0:
            step = min(order, MAX_DERIVATIVE_ORDER)
            array = stencil_derivative(array, axis, step, u.grid.h)
            order -= step
    return GridFunction(u.grid, array)


def max_derivative_norm(u: GridFunction, max_order: int) -> float:
    """``max_{|alpha| <= max_order} ||d^alpha u||`` with finite-difference derivatives."""
    return max(norm_l2(composed_derivative(u, alpha)) for alpha in multi_indices(u.grid.dim, max_order))
