"""Linear and eigen solvers used by every other module.

Sparse SPD systems are solved by a sparse LU factorization followed by a
few steps of iterative refinement; the residual is always checked against
the requested tolerance (plus the double-precision rounding floor) before
returning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure

DEFAULT_TOL = 1e-10
MAX_REFINE = 4
FLOOR_FACTOR = 16.0
_EPS = np.finfo(float).eps


def _column_norms(v):
    return np.linalg.norm(v, axis=0)


def _accept(r, b, absAx, tol):
    """Relative residual and whether it passes ``tol``.

    A residual evaluated in double precision cannot drop below roughly
    ``eps * | |A||x| + |b| |``. With high contrast and small ``h`` that
    floor exceeds ``tol * |b|``, so it is added to the threshold.
    """
    bn = _column_norms(b)
    scale = np.where(bn > 0, bn, 1.0)
    rn = _column_norms(r)
    floor = FLOOR_FACTOR * _EPS * _column_norms(absAx + np.abs(b))
    rel = float(np.max(rn / scale))
    ok = bool(np.all(np.isfinite(rn)) and np.all(rn <= tol * bn + floor))
    return rel, ok


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float       # relative 2-norm, worst column
    method: str


class SPDFactor:
    """Reusable factorization of a sparse SPD matrix (free DOFs only)."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        self._absA = None
        n = self.A.shape[0]
        if n == 0:
            self._lu = None
        else:
            try:
                self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SolverFailure(f"sparse factorization failed: {exc}") from exc

    def solve(self, b, tol=DEFAULT_TOL):
        """Solve ``A x = b`` for one or several right-hand sides (columns)."""
        b = np.asarray(b, dtype=float)
        if self._lu is None:
            return np.zeros_like(b), SolveReport(0, 0.0, "splu")
        if not np.any(b):
            return np.zeros_like(b), SolveReport(0, 0.0, "splu")
        scale = np.where(_column_norms(b) > 0, _column_norms(b), 1.0)
        x = self._lu.solve(b)
        it = 0
        res = np.max(_column_norms(b - self.A @ x) / scale)
        while res > tol and it < MAX_REFINE:
            x_new = x + self._lu.solve(b - self.A @ x)
            it += 1
            new = np.max(_column_norms(b - self.A @ x_new) / scale)
            if new >= res:
                break
            x, res = x_new, new
        rel, ok = _accept(b - self.A @ x, b, self.abs_matvec(x), tol)
        report = SolveReport(it, rel, "splu")
        if not ok:
            raise SolverFailure(
                f"linear solve reached relative residual {rel:.3e} > tol {tol:.1e}", report=report
            )
        return x, report

    def abs_matvec(self, x):
        if self._absA is None:
            self._absA = abs(self.A)
        return self._absA @ np.abs(x)


def solve_spd(A, b, tol=DEFAULT_TOL):
    """Solve ``A x = b`` with ``A`` SPD; returns ``(x, SolveReport)``."""
    return SPDFactor(A).solve(b, tol)


def solve_lowrank_corrected(A, Q, b, tol=DEFAULT_TOL, factor=None):
    """Solve ``(A + Q Q^T) x = b`` by the Woodbury identity on a factorized ``A``.

    ``A`` is sparse SPD on the free DOFs, ``Q`` is a dense ``n x r`` array.
    A pre-built :class:`SPDFactor` of ``A`` may be passed to amortize the
    factorization across right-hand sides.
    """
    fac = factor if factor is not None else SPDFactor(A)
    Q = np.asarray(Q, dtype=float).reshape(fac.A.shape[0], -1)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    y, _ = fac.solve(b, tol)
    if Q.shape[1] == 0 or not np.any(Q):
        return y
    Z, _ = fac.solve(Q, tol)
    cap = np.eye(Q.shape[1]) + Q.T @ Z
    x = y - Z @ sla.solve(cap, Q.T @ y, assume_a="pos")

    def op(v):
        return fac.A @ v + Q @ (Q.T @ v)

    # one refinement sweep through the same Woodbury formula
    r = b - op(x)
    if np.max(_column_norms(r) / _column_norms(b)) > tol:
        ry, _ = fac.solve(r, 1.0)
        x = x + ry - Z @ sla.solve(cap, Q.T @ ry, assume_a="pos")
        r = b - op(x)
    absQ = np.abs(Q)
    rel, ok = _accept(r, b, fac.abs_matvec(x) + absQ @ (absQ.T @ np.abs(x)), tol)
    if not ok:
        raise SolverFailure(
            f"low-rank corrected solve reached relative residual {rel:.3e} > tol {tol:.1e}",
            report=SolveReport(1, rel, "woodbury"),
        )
    return x


def generalized_eigs_smallest(A, S, l):
    """The ``l`` smallest eigenpairs of ``A phi = lam S phi`` (dense, symmetric).

    Reduction: ``S = L L^T``, ``C = L^{-1} A L^{-T}``, then a symmetric
    standard eigensolve. Eigenvectors are S-orthonormal, eigenvalues ascending.
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    n = A.shape[0]
    if not 0 < l <= n:
        raise ValueError(f"requested {l} eigenpairs of a {n}x{n} pencil")
    L, info = sla.lapack.dpotrf(S, lower=1, clean=1)
    if info > 0:
        raise SolverFailure(f"weight matrix is not positive definite (Cholesky pivot {info - 1} failed)",
                            context={"pivot": info - 1})
    if info < 0:
        raise ValueError("invalid argument passed to Cholesky factorization")
    X = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, Y = sla.eigh(C, subset_by_index=[0, l - 1])
    phi = sla.solve_triangular(L.T, Y, lower=False)
    return lam, phi
