"""Leading eigenpairs, spectral projectors and subspace distances.

Eigenfunctions are orthonormal in the discrete L2 inner product
``h^d sum u_i v_i``. Because that weight is a scalar, they are the Euclidean
eigenvectors of the (symmetric) matrix rescaled by ``h^{-d/2}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import ConfigError, GridMismatchError, SolverError
from .grid import Grid, GridFunction, inner_product, norm_l2
from .operator import DiscreteOperator

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000
RESIDUAL_TOLERANCE = 1e-8
ORTHONORMALITY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Smallest eigenpairs of a discrete operator.

    Attributes
    ----------
    eigenvalues : ascending array of length ``count``.
    vectors : array ``(size, count)``; column ``i`` holds ``phi_{i+1}``.
    residuals : ``||L phi_i - lambda_i phi_i||`` in the discrete L2 norm.
    method : ``"dense"`` or ``"lanczos"``.
    """

    grid: Grid
    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    method: str

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def eigenfunction(self, i: int) -> GridFunction:
        """``phi_{i+1}`` (zero-based index)."""
        return GridFunction(self.grid, self.vectors[:, i])

    def projector(self, k: int) -> "SpectralProjector":
        return SpectralProjector(self, k)

    def gap(self, k: int) -> float:
        """Inverse spectral gap ``1/lambda_k - 1/lambda_{k+1}``."""
        if k + 1 > self.count:
            raise ConfigError(f"gap at k={k} needs {k + 1} eigenpairs, have {self.count}")
        return float(1.0 / self.eigenvalues[k - 1] - 1.0 / self.eigenvalues[k])

    def is_degenerate(self, i: int, rtol: float = 1e-8) -> bool:
        """Whether eigenvalue ``i`` (zero-based) has a numerically equal neighbour."""
        lam = self.eigenvalues
        close = lambda j: 0 <= j < self.count and abs(lam[j] - lam[i]) <= rtol * abs(lam[i])
        return close(i - 1) or close(i + 1)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive (first one on ties)."""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _dense_pairs(op: DiscreteOperator, count: int):
    values, vectors = la.eigh(op.matrix.toarray(), subset_by_index=[0, count - 1], driver="evr")
    return values, vectors


def _orthonormalize(block: np.ndarray, basis: np.ndarray | None, drop_tol: float = 1e-10) -> np.ndarray:
    """Orthonormalise ``block`` against ``basis`` (twice) and drop dependent columns."""
    for _ in range(2):
        if basis is not None and basis.shape[1]:
            block = block - basis @ (basis.T @ block)
    if block.shape[1] == 0:
        return block
    # Column pivoting moves dependent columns to the end, so dropping them
    # cannot remove part of an independent column from the span.
    q, r, _ = la.qr(block, mode="economic", pivoting=True)
    keep = np.abs(np.diag(r)) > drop_tol * max(1.0, np.abs(r).max(initial=0.0))
    return q[:, keep]


def _lanczos_pairs(op: DiscreteOperator, count: int, seed: int, block_size: int | None = None,
                   max_dim: int | None = None, tol: float = 1e-11):
    """Block Lanczos with full reorthogonalisation on ``L^{-1}``.

    The largest eigenvalues of ``L^{-1}`` are the reciprocals of the wanted
    smallest eigenvalues of ``L`` and are well separated, so convergence is
    fast. Inverse applications use the cached sparse factorisation.
    """
    size = op.grid.size
    block_size = block_size or min(size, 8)
    max_dim = min(size, max_dim or max(30 * count, 300))
    rng = np.random.default_rng(seed)
    basis = _orthonormalize(rng.standard_normal((size, block_size)), None)
    images = np.empty((size, 0))
    current = basis
    matrix = op.matrix
    while True:
        image = op.solve(current)
        images = np.hstack([images, image])
        projected = basis.T @ images
        projected = 0.5 * (projected + projected.T)
        theta, coords = la.eigh(projected)
        order = np.argsort(theta)[::-1]
        if basis.shape[1] >= count:
            ritz = basis @ coords[:, order[:count]]
            lam = np.einsum("ij,ij->j", ritz, matrix @ ritz) / np.einsum("ij,ij->j", ritz, ritz)
            resid = np.linalg.norm(matrix @ ritz - ritz * lam, axis=0) / np.abs(lam)
            if np.all(resid <= tol) or basis.shape[1] >= max_dim:
                break
        nxt = _orthonormalize(image, basis)
        if nxt.shape[1] == 0:
            break
        basis = np.hstack([basis, nxt])
        current = nxt
    # Final Rayleigh-Ritz with L itself on the converged subspace.
    space = _orthonormalize(ritz, None)
    small = space.T @ (matrix @ space)
    values, coords = la.eigh(0.5 * (small + small.T))
    return values[:count], space @ coords[:, :count]


def eigensolve(op: DiscreteOperator, count: int, *, method: str = "auto", seed: int = 0) -> EigenDecomposition:
    """Smallest ``count`` eigenpairs of ``op`` in the discrete L2 inner product."""
    grid = op.grid
    if int(count) != count or not 1 <= count <= grid.size:
        raise ConfigError(f"eigenpair count must be in [1, {grid.size}], got {count}")
    if method == "auto":
        method = "dense" if grid.size <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        values, vectors = _dense_pairs(op, count)
    elif method == "lanczos":
        values, vectors = _lanczos_pairs(op, count, seed)
    else:
        raise ConfigError(f"unknown eigensolver method {method!r}")

    vectors = _fix_signs(vectors / np.linalg.norm(vectors, axis=0)) / np.sqrt(grid.cell_volume)
    residuals = np.sqrt(grid.cell_volume) * np.linalg.norm(op.matrix @ vectors - vectors * values, axis=0)
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(vectors)):
        raise SolverError("eigensolver returned non-finite values")
    if not np.all(values > 0) or np.any(np.diff(values) < 0):
        raise SolverError(f"eigenvalues not positive and ascending: {values[:5]}")
    failed = np.flatnonzero(residuals > RESIDUAL_TOLERANCE * values)
    if failed.size:
        report = ", ".join(f"i={i + 1}: residual {residuals[i]:.3e} vs {RESIDUAL_TOLERANCE * values[i]:.3e}"
                           for i in failed)
        raise SolverError(f"{method} eigensolver did not converge ({report})")
    gram = grid.cell_volume * vectors.T @ vectors
    if np.max(np.abs(gram - np.eye(count))) > ORTHONORMALITY_TOLERANCE:
        raise SolverError("eigenfunctions are not orthonormal to 1e-10")
    logger.debug("eigensolve(%s): lambda_1=%.6g, lambda_%d=%.6g", method, values[0], count, values[-1])
    return EigenDecomposition(grid, np.asarray(values, dtype=float), vectors, residuals, method)


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    """Orthogonal projector onto the span of the first ``k`` eigenfunctions."""

    decomposition: EigenDecomposition
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.decomposition.count:
            raise ConfigError(f"projector rank {self.k} exceeds the {self.decomposition.count} computed pairs")

    @property
    def grid(self) -> Grid:
        return self.decomposition.grid

    @property
    def basis(self) -> np.ndarray:
        return self.decomposition.vectors[:, : self.k]

    def coefficients(self, g: GridFunction) -> np.ndarray:
        """``<g, phi_i>`` for ``i <= k``."""
        if g.grid != self.grid:
            raise GridMismatchError(f"projector on {self.grid} applied to function on {g.grid}")
        return self.grid.cell_volume * (self.basis.T @ g.values)

    def __call__(self, g: GridFunction) -> GridFunction:
        return GridFunction(self.grid, self.basis @ self.coefficients(g))


def project(P: SpectralProjector, g: GridFunction) -> GridFunction:
    """``P_k g = sum_i <g, phi_i> phi_i``."""
    return P(g)


def projector_distance(P: SpectralProjector, Q: SpectralProjector, *, tol: float = 1e-10,
                       max_iter: int = 200_000, seed: int = 0) -> float:
    """Operator norm ``||P - Q||`` in the discrete L2 inner product.

    Power iteration on ``(P - Q)^T (P - Q)``. The range of ``P - Q`` lies in
    the span of both bases, so the iteration runs in coordinates of an
    orthonormal basis of that span.
    """
    if P.grid != Q.grid or P.k != Q.k:
        raise GridMismatchError("projectors must share grid and rank")
    scale = np.sqrt(P.grid.cell_volume)
    a, b = P.basis * scale, Q.basis * scale
    span = _orthonormalize(np.hstack([a, b]), None, drop_tol=1e-14)
    ca, cb = span.T @ a, span.T @ b
    diff = ca @ ca.T - cb @ cb.T
    if not np.any(diff):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(span.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = diff @ v
        new = float(w @ w)
        w = diff @ w
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return float(np.sqrt(new))
        v = w / norm
        if abs(new - estimate) <= tol * new:
            return float(np.sqrt(new))
        estimate = new
    raise SolverError(f"projector distance power iteration stalled at {np.sqrt(estimate):.6g}")


def rayleigh(op: DiscreteOperator, v: GridFunction) -> float:
    """``<L v, v> / ||v||^2``."""
    denom = inner_product(v, v)
    if denom == 0.0:
        raise ConfigError("Rayleigh quotient of the zero vector is undefined")
    return op.quadratic_form(v) / denom


def eigenpairs_rows(decomposition: EigenDecomposition) -> list[tuple[int, float, float]]:
    """Rows ``(index, eigenvalue, residual)`` with one-based indices."""
    return [(i + 1, float(lam), float(res))
            for i, (lam, res) in enumerate(zip(decomposition.eigenvalues, decomposition.residuals))]
