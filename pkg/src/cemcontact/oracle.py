"""Reference solver: projected Gauss-Seidel on the fine-grid quadratic program.

Minimizes ``0.5 u'Au - b'u`` subject to ``u <= 0`` at the contact nodes,
with Dirichlet nodes eliminated. Slow, but simple enough to trust.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import free_dofs
from .errors import ConfigError, OracleNonConvergence
from .problem import ContactProblem

MAX_ORACLE_ELEMENTS = 64


@dataclass(frozen=True)
class QpInstance:
    A: sp.csr_matrix                 # SPD on the free DOFs
    b: np.ndarray
    constrained: np.ndarray          # bool per free DOF, bound u <= 0
    free: np.ndarray | None = field(default=None, repr=False)  # map to full node numbering
    n_total: int | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def expand(self, x: np.ndarray) -> np.ndarray:
        if self.free is None:
            return x
        out = np.zeros(self.n_total)
        out[self.free] = x
        return out

    def energy(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.A @ x) - self.b @ x)


def qp_from_problem(problem: ContactProblem) -> QpInstance:
    g = problem.grid
    free = free_dofs(g.n_nodes, problem.dirichlet_nodes)
    constrained = np.zeros(g.n_nodes, dtype=bool)
    constrained[problem.contact_nodes] = True
    A = sp.csr_matrix(problem.A[free][:, free])
    A.sort_indices()
    return QpInstance(A=A, b=problem.b[free].copy(), constrained=constrained[free], free=free, n_total=g.n_nodes)


@numba.njit(cache=True)
def _energy(indptr, indices, data, b, x):
    e = 0.0
    for i in range(len(b)):
        ax = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            ax += data[p] * x[indices[p]]
        e += 0.5 * x[i] * ax - b[i] * x[i]
    return e


@numba.njit(cache=True)
def _pgs(indptr, indices, data, b, cons, x, tol, max_sweeps, energies):
    n = len(b)
    track = len(energies) > 0
    change = np.inf
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(n):
            s = b[i]
            diag = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    diag = data[p]
                else:
                    s -= data[p] * x[j]
            xi = s / diag
            if cons[i] and xi > 0.0:
                xi = 0.0
            d = abs(xi - x[i])
            if d > change:
                change = d
            x[i] = xi
        if track:
            energies[sweep] = _energy(indptr, indices, data, b, x)
        if change <= tol:
            return sweep + 1, change
    return -1, change


def condense(inst: QpInstance):
    """Minimize out the unconstrained unknowns exactly.

    Returns the dense Schur-complement instance on the constrained unknowns
    and a callable that recovers the full reduced vector from its solution.
    The two QPs share their minimizer.
    """
    c = np.flatnonzero(inst.constrained)
    f = np.flatnonzero(~inst.constrained)
    A = sp.csr_matrix(inst.A)
    Acc = A[c][:, c].toarray()
    Acf = A[c][:, f]
    lu = splu(sp.csc_matrix(A[f][:, f]))
    X = lu.solve(np.ascontiguousarray(Acf.T.toarray()))      # A_ff^{-1} A_fc
    y = lu.solve(inst.b[f])
    S = Acc - Acf @ X
    S = 0.5 * (S + S.T)
    small = QpInstance(A=sp.csr_matrix(S), b=inst.b[c] - Acf @ y, constrained=np.ones(len(c), dtype=bool))

    def recover(xc):
        x = np.empty(inst.n)
        x[c] = xc
        x[f] = y - X @ xc
        return x

    return small, recover


def solve_projected_gs(inst: QpInstance, tol: float = 1e-12, max_sweeps: int = 2_000_000,
                       x0: np.ndarray | None = None, record_energy: bool = False, condensed: bool = True):
    """Run projected Gauss-Seidel until the max-norm change of a sweep is ``<= tol``.

    Returns the full fine-node vector (or the reduced vector when ``inst``
    carries no node map). With ``record_energy`` a second value holds the
    objective after every sweep. ``x0`` lives on the instance's own unknowns.

    ``condensed`` (default) sweeps over the constrained unknowns only, after
    eliminating the rest with a sparse direct solve. Plain sweeps stall on
    high-contrast media: a conductive inclusion behaves as one floating
    unknown whose error decays like ``1 - O(1/contrast)`` per sweep.
    """
    if condensed and 0 < inst.constrained.sum() < inst.n:
        small, recover = condense(inst)
        xs = None if x0 is None else np.asarray(x0, dtype=float)[inst.constrained]
        out = solve_projected_gs(small, tol, max_sweeps, xs, record_energy)
        xc, energies = out if record_energy else (out, None)
        u = inst.expand(recover(xc))
        return (u, energies) if record_energy else u
    n = inst.n
    A = inst.A
    if np.any(A.diagonal() <= 0):
        raise ConfigError("projected Gauss-Seidel needs a positive diagonal")
    x = np.zeros(n) if x0 is None else np.minimum(np.array(x0, dtype=float), np.where(inst.constrained, 0.0, np.inf))
    energies = np.empty(max_sweeps if record_energy else 0)
    sweeps, change = _pgs(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.astype(float),
                          np.asarray(inst.b, dtype=float), np.asarray(inst.constrained, dtype=np.bool_),
                          x, float(tol), int(max_sweeps), energies)
    if sweeps < 0:
        raise OracleNonConvergence(
            f"projected Gauss-Seidel did not converge in {max_sweeps} sweeps (last change {change:.3e})",
            last_change=float(change), sweeps=max_sweeps)
    u = inst.expand(x)
    if record_energy:
        return u, energies[:sweeps].copy()
    return u


def oracle_active_set(problem: ContactProblem, u: np.ndarray, rel_tol: float = 1e-8) -> np.ndarray:
    """Contact nodes with ``u = 0`` and a strictly positive multiplier.

    The multiplier comes from a solve with finite tolerance, so "positive"
    means above ``rel_tol`` times its largest magnitude.
    """
    lam = problem.b[problem.contact_nodes] - problem.A[problem.contact_nodes] @ u
    scale = max(float(np.max(np.abs(lam), initial=0.0)), np.finfo(float).tiny)
    return (u[problem.contact_nodes] == 0.0) & (lam > rel_tol * scale)


def check_oracle_size(nx_fine: int, ny_fine: int | None = None) -> None:
    ny_fine = nx_fine if ny_fine is None else ny_fine
    if max(nx_fine, ny_fine) > MAX_ORACLE_ELEMENTS:
        raise ConfigError(
            f"oracle variant is limited to {MAX_ORACLE_ELEMENTS}x{MAX_ORACLE_ELEMENTS} fine elements "
            f"(got {nx_fine}x{ny_fine}); projected Gauss-Seidel is too slow beyond that")
