"""Sparse assembly and direct solution of the linearized MNA system.

The MNA matrices here are unsymmetric and indefinite, so the solve uses
LU with partial pivoting and a fill-reducing column ordering.  Assembly
sums duplicate triplets; the triplet-to-CSC scatter is cached so
iterations that keep the same sparsity pattern only pay for a value
update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .stamping import StampSet

SOLVE_TOL = 1e-10
_REFINE_STEPS = 3


class SingularSystemError(RuntimeError):
    """The linearized system has no usable factorization."""


@dataclass
class SparseSystem:
    n: int
    matrix: sp.csc_matrix
    rhs: np.ndarray


def assemble(stamps: list[StampSet], n: int) -> SparseSystem:
    """Sum triplet/rhs contributions into a compressed-column system."""
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs = np.zeros(n)
    for st in stamps:
        rows += st.rows
        cols += st.cols
        vals += st.vals
        for r, v in zip(st.rhs_rows, st.rhs_vals):
            rhs[r] += v
    if rows:
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        v = np.asarray(vals, dtype=float)
        if r.max(initial=0) >= n or c.max(initial=0) >= n or r.min(initial=0) < 0:
            raise IndexError("triplet index outside system")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite triplet value")
        m = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsc()
        m.sum_duplicates()
    else:
        m = sp.csc_matrix((n, n))
    return SparseSystem(n=n, matrix=m, rhs=rhs)


class AssemblyPlan:
    """Caches the triplet-to-CSC mapping for a fixed sparsity pattern.

    The pattern only changes when the continuation toggles shunt
    relaxation or a PV/PQ switch alters a constraint row, so most NR
    iterations reuse the symbolic structure and just scatter values.
    """

    def __init__(self):
        self._key = None
        self._order = None
        self._shape = None
        self._template = None

    def assemble(self, stamps: list[StampSet], n: int) -> SparseSystem:
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        rhs = np.zeros(n)
        for st in stamps:
            rows += st.rows
            cols += st.cols
            vals += st.vals
            for r, v in zip(st.rhs_rows, st.rhs_vals):
                rhs[r] += v
        if not rows:
            return SparseSystem(n=n, matrix=sp.csc_matrix((n, n)), rhs=rhs)
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        v = np.asarray(vals, dtype=float)
        if r.max() >= n or c.max() >= n or r.min() < 0 or c.min() < 0:
            raise IndexError("triplet index outside system")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite triplet value")
        key = (n, r.tobytes(), c.tobytes())
        if self._key != key:
            order = np.lexsort((r, c))
            rs, cs = r[order], c[order]
            template = sp.csc_matrix((np.ones(len(order)), (rs, cs)), shape=(n, n))
            template.sum_duplicates()
            # map each sorted triplet to its slot in the deduplicated data array
            boundary = np.ones(len(order), dtype=bool)
            boundary[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
            slot = np.cumsum(boundary) - 1
            self._key = key
            self._order = (order, slot, template.data.shape[0])
            self._template = template
        order, slot, nnz = self._order
        data = np.zeros(nnz)
        np.add.at(data, slot, v[order])
        m = self._template.copy()
        m.data = data
        return SparseSystem(n=n, matrix=m, rhs=rhs)


def factor_solve(system: SparseSystem) -> np.ndarray:
    """LU solve with iterative refinement to a 1e-10 relative residual.

    Raises SingularSystemError when the factorization fails or the
    refined residual cannot meet the bound (signals that limiting or
    continuation must escalate upstream).
    """
    m, b = system.matrix, system.rhs
    if m.shape[0] == 0:
        return np.zeros(0)
    try:
        lu = spla.splu(m.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite solution")
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    for _ in range(_REFINE_STEPS):
        resid = m @ x - b
        if float(np.abs(resid).max(initial=0.0)) / scale <= SOLVE_TOL:
            return x
        dx = lu.solve(resid)
        if not np.all(np.isfinite(dx)):
            raise SingularSystemError("iterative refinement diverged")
        x = x - dx
    resid = float(np.abs(m @ x - b).max(initial=0.0)) / scale
    if resid > SOLVE_TOL:
        raise SingularSystemError(f"residual {resid:.2e} above {SOLVE_TOL:.0e} after refinement")
    return x


def dump_matrix_market(system: SparseSystem, path) -> None:
    """Write the assembled matrix in MatrixMarket coordinate form (debug aid)."""
    from scipy.io import mmwrite

    mmwrite(str(path), system.matrix)
