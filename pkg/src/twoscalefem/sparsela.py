"""Sparse symmetric storage, LDL^T factorization and preconditioned CG.

The factorization is delegated to SuperLU in symmetric mode with a
minimum-degree ordering; the unit-lower factor, diagonal and symmetric
permutation are extracted so that perm applied to A reproduces L*D*L^T.
Flop counters are integers derived from the factor sparsity, identical
across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = ["SparseSym", "Factor", "CgReport", "SingularMatrixError", "factorize", "solve", "pcg"]


class SingularMatrixError(RuntimeError):
    """Raised when a pivot falls below tolerance; carries the offending dof."""

    def __init__(self, dof: int, pivot: float):
        self.dof = dof
        self.pivot = pivot
        super().__init__(f"singular pivot {pivot:.3e} at dof {dof}")


class SparseSym:
    """Symmetric sparse matrix accumulated in triplet form (lower triangle kept).

    Entries may be added in any order and with duplicates; ``finalize``
    coalesces them.  Only the lower triangle is stored; ``to_csc`` mirrors it.
    """

    def __init__(self, n: int):
        self.n = n
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._mat: sp.csc_matrix | None = None

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        keep = rows >= cols  # lower triangle
        self._rows.append(rows[keep])
        self._cols.append(cols[keep])
        self._vals.append(vals[keep])
        self._mat = None

    def add_dense(self, idx, block):
        idx = np.asarray(idx, dtype=np.int64)
        block = np.asarray(block, dtype=np.float64)
        r = np.repeat(idx, len(idx))
        c = np.tile(idx, len(idx))
        self.add(r, c, block.ravel())

    def finalize(self) -> sp.csc_matrix:
        if self._mat is None:
            if self._rows:
                r = np.concatenate(self._rows)
                c = np.concatenate(self._cols)
                v = np.concatenate(self._vals)
            else:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            low = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsc()
            low.sum_duplicates()
            diag = sp.diags(low.diagonal())
            self._mat = (low + low.T - diag).tocsc()
        return self._mat

    def to_csc(self) -> sp.csc_matrix:
        return self.finalize()

    @classmethod
    def from_csc(cls, A) -> "SparseSym":
        A = sp.csc_matrix(A)
        obj = cls(A.shape[0])
        coo = sp.tril(A).tocoo()
        obj.add(coo.row, coo.col, coo.data)
        return obj


@dataclass
class Factor:
    """LDL^T factorization with its fill-reducing permutation and flop counters."""

    n: int
    perm: np.ndarray  # A[perm][:, perm] == L @ diag(d) @ L.T
    L: sp.csc_matrix
    d: np.ndarray
    factor_flops: int
    solve_flops: int = 0
    _lu: object = field(default=None, repr=False)
    _scale: np.ndarray = field(default=None, repr=False)
    dropped: np.ndarray = field(default=None, repr=False)  # null-pivot dofs
    _Ls: sp.csc_matrix = field(default=None, repr=False)
    _ds: np.ndarray = field(default=None, repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve(self, b)


def factorize(A, pivot_rtol: float = 1e-14, ordering: str = "mmd",
              null_pivot: str = "error") -> Factor:
    """Factorize a symmetric matrix into P A P^T = L D L^T.

    Accepts a SparseSym, a scipy sparse matrix or a dense array.  The
    fill-reducing ordering is minimum degree by default; ``ordering="natural"``
    keeps the given dof order (useful to inspect the raw elimination).  A
    pivot below pivot_rtol (in diagonally equilibrated units) raises
    SingularMatrixError naming the dof, or, with ``null_pivot="drop"``, gets
    deflated: solves then return the solution with zero component along the
    redundant directions, which is exact for consistent right-hand sides.
    """
    if isinstance(A, SparseSym):
        A = A.to_csc()
    elif not sp.issparse(A):
        A = sp.csc_matrix(np.asarray(A, dtype=np.float64))
    A = A.tocsc()
    n = A.shape[0]
    if n == 0:
        return Factor(0, np.zeros(0, int), sp.csc_matrix((0, 0)), np.zeros(0), 0)
    # symmetric diagonal equilibration: dof scales may legitimately span many
    # orders (enrichment dofs live at displacement-squared scale), and the
    # unpivoted elimination needs balanced magnitudes.  The unscaled factors
    # are recovered exactly: L = S L' S^-1, D = s^2 D'.
    diag = A.diagonal()
    s = np.sqrt(np.abs(diag))
    s[s == 0.0] = 1.0
    Dinv = sp.diags(1.0 / s)
    As = (Dinv @ A @ Dinv).tocsc()
    empty = None
    if null_pivot == "drop":
        # structurally empty rows cannot even be factorized: pin them upfront
        nnz_col = np.diff(As.indptr)
        empty = np.nonzero((np.abs(As.diagonal()) == 0.0) & (nnz_col <= 1))[0]
        if empty.size:
            As = As + sp.coo_matrix(
                (np.ones(len(empty)), (empty, empty)), shape=As.shape).tocsc()
    spec = {"mmd": "MMD_AT_PLUS_A", "natural": "NATURAL"}[ordering]
    try:
        lu = splu(
            As,
            diag_pivot_thresh=0.0,
            permc_spec=spec,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # SuperLU reports exact zeros itself
        raise SingularMatrixError(-1, 0.0) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise RuntimeError("symmetric factorization produced asymmetric pivoting")
    ds = lu.U.diagonal().copy()
    inv = np.empty(n, dtype=np.int64)
    inv[lu.perm_r] = np.arange(n)
    # scaled diagonals are +-1 (or 0): pivots must stay above rtol of that
    bad = np.nonzero(np.abs(ds) <= pivot_rtol)[0]
    dropped = None
    if bad.size and null_pivot == "error":
        k = int(bad[0])
        raise SingularMatrixError(int(lu.perm_r[k]), float(ds[k]))
    if null_pivot == "drop":
        dropped = np.zeros(n, dtype=bool)
        dropped[bad] = True
        if empty is not None and empty.size:
            dropped[inv[empty]] = True
    # A[perm][:, perm] = diag(s[perm]) L' D' L'^T diag(s[perm]) with perm = inv
    s_p = s[inv]
    L = (sp.diags(s_p) @ lu.L @ sp.diags(1.0 / s_p)).tocsc()
    d = ds * s_p * s_p
    # column-wise outer-product count: one multiply-add pair per L entry pair
    col_nnz = np.diff(L.indptr)
    factor_flops = int(np.sum(col_nnz.astype(np.int64) ** 2))
    F = Factor(n, inv, L, d, factor_flops, 0, lu, 1.0 / s, dropped)
    if dropped is not None and dropped.any():
        F._Ls = lu.L.tocsc()
        F._ds = ds
    return F


def solve(F: Factor, b: np.ndarray) -> np.ndarray:
    """Forward/backward substitution; counts 2*nnz(L) + n flops per column."""
    b = np.asarray(b, dtype=np.float64)
    if F.n == 0:
        return np.zeros_like(b)
    ncols = 1 if b.ndim == 1 else b.shape[1]
    F.solve_flops += (2 * F.L.nnz + F.n) * ncols
    sinv = F._scale
    if F._Ls is not None:
        return _solve_deflated(F, b)
    if b.ndim == 1:
        return sinv * F._lu.solve(sinv * b)
    return sinv[:, None] * F._lu.solve(sinv[:, None] * b)


def _solve_deflated(F: Factor, b: np.ndarray) -> np.ndarray:
    """Triangular solves with null-pivot components forced to zero."""
    from scipy.sparse.linalg import spsolve_triangular

    one_d = b.ndim == 1
    bb = b[:, None] if one_d else b
    c = (F._scale[:, None] * bb)[F.perm]
    y = spsolve_triangular(F._Ls, c, lower=True, unit_diagonal=True)
    dd = F._ds.copy()
    dd[F.dropped] = 1.0
    y = y / dd[:, None]
    y[F.dropped] = 0.0
    y = spsolve_triangular(F._Ls.T.tocsr(), y, lower=False, unit_diagonal=True)
    xs = np.empty_like(y)
    xs[F.perm] = y
    x = F._scale[:, None] * xs
    return x[:, 0] if one_d else x


@dataclass
class CgReport:
    iterations: int
    crit: float
    converged: bool
    loop_bodies: int = 0


def pcg(x0, apply_a, b, apply_m, eps, iter_max=1000, dot=None):
    """Preconditioned conjugate gradient with the literal stop rule.

    The stopping threshold is computed from the assembled right-hand side
    before the initial residual update (stop = (b.b) * eps^2), so a warm
    start measures progress against the full load, not the warm residual.
    ``dot`` may be supplied to evaluate scalar products across ranks; the
    three dots per iteration are the only synchronization points.

    Returns (x, CgReport); report.converged iff crit <= eps.
    """
    if dot is None:
        dot = lambda u, v: float(np.dot(u, v))
    x = np.array(x0, dtype=np.float64, copy=True)
    r = np.array(b, dtype=np.float64, copy=True)
    stop = dot(r, r) * eps * eps
    if stop == 0.0:
        return np.zeros_like(x), CgReport(0, 0.0, True, 0)
    r -= apply_a(x)
    z = apply_m(r)
    res_o = dot(r, z)
    p = z.copy()
    iters = 0
    bodies = 0
    crit2 = dot(r, r)
    alt = False
    while True:
        bodies += 1
        res_n = res_o
        sp_vec = apply_a(p)
        den = dot(p, sp_vec)
        if den == 0.0:  # exact-zero search direction: nothing left to correct
            crit2 = dot(r, r)
            alt = True
        else:
            alpha = res_n / den
            x += alpha * p
            r -= alpha * sp_vec
            crit2 = dot(r, r)
            if crit2 >= stop:
                z = apply_m(r)
                res_o = dot(r, z)
                beta = res_o / res_n
                p = z + beta * p
                iters += 1
            else:
                alt = True
        if alt or iters > iter_max:
            break
    crit = eps * np.sqrt(crit2 / stop)
    return x, CgReport(iters, float(crit), bool(crit2 < stop), bodies)
