"""Active-set-aware CEM multiscale basis functions and Neumann correctors.

Every local problem has the form ``(A + Q Q^T) x = rhs`` on the free nodes
of an oversampled domain, where ``Q`` collects ``S_l phi_l^j`` for all
coarse elements ``l`` inside the domain. Because ``Q Q^T`` is block
diagonal by coarse element, the system matrix is a sum of dense per-element
blocks ``A_l + S_l Phi_l Phi_l^T S_l``. The bulk builder condenses each
block onto the coarse-grid-line ("skeleton") nodes once and then solves one
small sparse skeleton system per domain. All constrained nodes (cut,
Dirichlet, active contact) are skeleton nodes, so the condensation never
depends on the active set.

:func:`build_basis_column` and :func:`global_basis_column` solve the same
problems through the Woodbury route in :mod:`numkernel` instead and serve as
independent cross-checks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import edge_load
from .auxspace import AuxiliarySpace
from .errors import SolverFailure
from .grid import GridHierarchy, OversampleDomain, cut_node_mask, oversample
from .numkernel import DEFAULT_TOL, SPDFactor, solve_lowrank_corrected
from .problem import ContactProblem


@dataclass(frozen=True)
class DofRestriction:
    """Which fine nodes are clamped to zero for active-set version ``version``.

    ``active`` is a boolean mask over ``problem.contact_nodes``.
    """

    version: int
    active: np.ndarray
    clamped: np.ndarray = field(repr=False)  # bool over all fine nodes: Gamma_D or active

    @classmethod
    def from_active(cls, problem: ContactProblem, active, version: int = 0) -> "DofRestriction":
        active = np.asarray(active, dtype=bool).copy()
        clamped = np.zeros(problem.grid.n_nodes, dtype=bool)
        clamped[problem.dirichlet_nodes] = True
        clamped[problem.contact_nodes[active]] = True
        active.setflags(write=False)
        clamped.setflags(write=False)
        return cls(version=version, active=active, clamped=clamped)

    def fixed_in(self, g: GridHierarchy, dom: OversampleDomain) -> np.ndarray:
        """Boolean over ``dom.nodes``: zero in ``V_k(K_i^m)``."""
        return cut_node_mask(g, dom) | self.clamped[dom.nodes]

    def free_nodes(self, g: GridHierarchy, dom: OversampleDomain) -> np.ndarray:
        return dom.nodes[~self.fixed_in(g, dom)]


def element_neumann_loads(problem: ContactProblem) -> dict:
    """``int_{dK_i cap Gamma_N} p v`` per coarse element, only for elements that touch Gamma_N."""
    g, edges = problem.grid, problem.boundary.edges["N"]
    if len(edges) == 0:
        return {}
    mid = 0.5 * (g.node_coords[edges[:, 0]] + g.node_coords[edges[:, 1]])
    cx = np.minimum((mid[:, 0] * g.nc).astype(int), g.nc - 1)
    cy = np.minimum((mid[:, 1] * g.nc).astype(int), g.nc - 1)
    owner = cy * g.nc + cx
    loads = {}
    for i in np.unique(owner):
        vec = edge_load(g, edges[owner == i], problem.p)
        if np.any(vec):
            loads[int(i)] = vec
    return loads


class _Condensation:
    """Per-coarse-element Schur complements onto skeleton nodes."""

    def __init__(self, g: GridHierarchy, aux: AuxiliarySpace):
        r = g.ratio
        lx, ly = np.meshgrid(np.arange(r + 1), np.arange(r + 1))
        on_edge = ((lx == 0) | (lx == r) | (ly == 0) | (ly == r)).ravel()
        self.skel = np.flatnonzero(on_edge)
        self.inner = np.flatnonzero(~on_edge)
        Sphi = aux.Sphi
        M = aux.A_loc + np.einsum("naj,nbj->nab", Sphi, Sphi)
        B, I = self.skel, self.inner
        M_BB = M[:, B][:, :, B]
        qB, qI = Sphi[:, B, :], Sphi[:, I, :]
        if len(I):
            M_II = M[:, I][:, :, I]
            M_IB = M[:, I][:, :, B]
            L = np.linalg.cholesky(M_II)
            rhs = np.concatenate([M_IB, qI], axis=2)
            sol = _batched_cho_solve(L, rhs)
            self.T = sol[:, :, :len(B)]             # M_II^{-1} M_IB
            self.W = sol[:, :, len(B):]             # M_II^{-1} q_I
            self.schur = M_BB - np.einsum("nib,nic->nbc", M_IB, self.T)
            self.qB = qB - np.einsum("nib,nij->nbj", self.T, qI)
        else:
            self.T = np.zeros((g.n_coarse, 0, len(B)))
            self.W = np.zeros((g.n_coarse, 0, aux.l))
            self.schur = M_BB
            self.qB = qB
        self.schur = 0.5 * (self.schur + np.swapaxes(self.schur, 1, 2))
        self.skel_nodes = g.coarse_nodes[:, B]     # (N, nb) global node ids
        self.inner_nodes = g.coarse_nodes[:, I]    # (N, ni)


def _batched_cho_solve(L, rhs):
    y = np.empty_like(rhs)
    for n in range(L.shape[0]):
        y[n] = sla.cho_solve((L[n], True), rhs[n])
    return y


@dataclass(frozen=True)
class MultiscaleSpace:
    """Basis matrix, Neumann corrector and bookkeeping for one active-set version."""

    version: int
    m: int
    restriction: DofRestriction
    Psi: sp.csc_matrix            # (n_nodes, n_coarse * l)
    corrector: np.ndarray         # N_k^m p summed over elements
    tags: np.ndarray              # (ncols, 2) -> (i, j)
    dirty: np.ndarray             # bool per column: rebuilt when this version was made
    dirty_correctors: tuple       # coarse elements whose corrector was rebuilt
    columns: tuple = field(repr=False)          # per column (global idx, values)
    element_correctors: dict = field(repr=False)  # i -> (global idx, values)
    K: np.ndarray = field(repr=False, default=None)  # Psi^T A Psi

    @property
    def n_rebuilt(self) -> int:
        return int(self.dirty.sum())


class CemBuilder:
    """Builds and incrementally refreshes multiscale spaces for one problem."""

    def __init__(self, problem: ContactProblem, aux: AuxiliarySpace, m: int, threads: int = 1,
                 tol: float = DEFAULT_TOL):
        self.problem = problem
        self.aux = aux
        self.m = int(m)
        self.threads = max(1, int(threads))
        self.tol = tol
        g = problem.grid
        self.grid = g
        self.domains = [oversample(g, i, self.m) for i in range(g.n_coarse)]
        self.cond = _Condensation(g, aux)
        self.neumann = element_neumann_loads(problem)
        self.tags = np.array([(i, j) for i in range(g.n_coarse) for j in range(aux.l)], dtype=int)
        # columns whose support meets coarse element e: those of every i with e in K_i^m
        touching = [[] for _ in range(g.n_coarse)]
        for dom in self.domains:
            for e in dom.coarse:
                touching[e].append(dom.i)
        l = aux.l
        self.touch_cols = [(np.asarray(sorted(t), dtype=int)[:, None] * l + np.arange(l)).ravel() for t in touching]

    # ------------------------------------------------------------------ local solves
    def _solve_domain(self, i: int, restriction: DofRestriction, want_basis: bool, want_corr: bool):
        g, cond, dom = self.grid, self.cond, self.domains[i]
        elems = dom.coarse
        gnodes = cond.skel_nodes[elems]                           # (ne, nb)
        uniq, loc = np.unique(gnodes, return_inverse=True)
        loc = loc.reshape(gnodes.shape)
        nsk = len(uniq)
        fixed = np.isin(uniq, dom.nodes[restriction.fixed_in(g, dom)])
        nb = loc.shape[1]
        rows = np.repeat(loc, nb, axis=1).ravel()
        cols = np.tile(loc, (1, nb)).ravel()
        K = sp.csr_matrix((cond.schur[elems].ravel(), (rows, cols)), shape=(nsk, nsk))
        free = np.flatnonzero(~fixed)

        rhs_list = []
        if want_basis:
            R = np.zeros((nsk, self.aux.l))
            k = np.flatnonzero(elems == i)[0]
            np.add.at(R, loc[k], cond.qB[i])
            rhs_list.append(R)
        corr_load = self.neumann.get(i) if want_corr else None
        if corr_load is not None:
            R = np.zeros((nsk, 1))
            R[:, 0] = corr_load[uniq]
            rhs_list.append(R)
        if not rhs_list:
            return None, None
        R = np.concatenate(rhs_list, axis=1)
        X = np.zeros_like(R)
        if len(free):
            Kf = K[free][:, free]
            try:
                X[free], _ = SPDFactor(Kf).solve(R[free], self.tol)
            except SolverFailure as exc:
                raise exc.annotate(i=i, m=self.m, k=restriction.version)
        # back-substitute element interiors
        XB = X[loc]                                                # (ne, nb, ncol)
        XI = -np.einsum("nib,nbc->nic", cond.T[elems], XB)
        if want_basis:
            k = np.flatnonzero(elems == i)[0]
            XI[k, :, : self.aux.l] += cond.W[i]
        idx = np.concatenate([uniq, cond.inner_nodes[elems].ravel()])
        vals = np.concatenate([X, XI.reshape(-1, X.shape[1])], axis=0)
        nz = np.any(vals != 0, axis=1)
        idx, vals = idx[nz], vals[nz]
        order = np.argsort(idx)
        idx, vals = idx[order], vals[order]
        basis = [(idx, vals[:, j].copy()) for j in range(self.aux.l)] if want_basis else None
        corr = (idx, vals[:, -1].copy()) if corr_load is not None else None
        return basis, corr

    def _run(self, elements, restriction, want_basis, want_corr):
        def task(i):
            return i, self._solve_domain(i, restriction, want_basis, want_corr)

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return dict(pool.map(task, elements))
        return dict(map(task, elements))

    # ------------------------------------------------------------------ assembly
    def _psi_matrix(self, columns) -> sp.csc_matrix:
        n = self.grid.n_nodes
        lens = np.array([len(c[0]) for c in columns])
        indptr = np.concatenate([[0], np.cumsum(lens)])
        indices = np.concatenate([c[0] for c in columns]) if len(columns) else np.zeros(0, int)
        data = np.concatenate([c[1] for c in columns]) if len(columns) else np.zeros(0)
        return sp.csc_matrix((data, indices, indptr), shape=(n, len(columns)))

    def _galerkin(self, Psi: sp.csc_matrix, cols=None) -> np.ndarray:
        """``Psi^T A Psi`` accumulated from dense coarse-element blocks.

        With ``cols`` only those columns are formed, shape ``(ncols, len(cols))``.
        """
        g, A_loc = self.grid, self.aux.A_loc
        P_rows = Psi.tocsr()
        n = Psi.shape[1]
        if cols is None:
            out = np.zeros((n, n))
        else:
            cols = np.asarray(cols, dtype=int)
            wanted = np.zeros(n, dtype=bool)
            wanted[cols] = True
            pos = np.full(n, -1)
            pos[cols] = np.arange(len(cols))
            out = np.zeros((n, len(cols)))
        for e in range(g.n_coarse):
            tc = self.touch_cols[e]
            sel = None if cols is None else wanted[tc]
            if sel is not None and not sel.any():
                continue
            P = P_rows[g.coarse_nodes[e]][:, tc].toarray()
            if sel is None:
                out[np.ix_(tc, tc)] += P.T @ (A_loc[e] @ P)
            else:
                out[np.ix_(tc, pos[tc[sel]])] += P.T @ (A_loc[e] @ P[:, sel])
        return out

    def _corrector_sum(self, element_correctors) -> np.ndarray:
        out = np.zeros(self.grid.n_nodes)
        for idx, vals in element_correctors.values():
            np.add.at(out, idx, vals)
        return out

    def build(self, active=None, version: int = 0) -> MultiscaleSpace:
        """Construct every column and corrector for the given active mask (default: none active)."""
        if active is None:
            active = np.zeros(len(self.problem.contact_nodes), dtype=bool)
        restriction = DofRestriction.from_active(self.problem, active, version)
        g, l = self.grid, self.aux.l
        res = self._run(range(g.n_coarse), restriction, True, True)
        columns = [None] * (g.n_coarse * l)
        correctors = {}
        for i, (basis, corr) in res.items():
            for j in range(l):
                columns[i * l + j] = basis[j]
            if corr is not None:
                correctors[i] = corr
        Psi = self._psi_matrix(columns)
        K = self._galerkin(Psi)
        return MultiscaleSpace(
            version=version, m=self.m, restriction=restriction, Psi=Psi,
            corrector=self._corrector_sum(correctors), tags=self.tags,
            dirty=np.ones(len(columns), dtype=bool), dirty_correctors=tuple(sorted(correctors)),
            columns=tuple(columns), element_correctors=correctors, K=0.5 * (K + K.T),
        )

    def affected_elements(self, changed_nodes) -> np.ndarray:
        """Coarse elements whose oversampled domain has a changed node among its non-cut nodes."""
        g = self.grid
        changed_nodes = np.asarray(changed_nodes, dtype=int)
        if changed_nodes.size == 0:
            return np.zeros(0, dtype=int)
        ix, iy = g.node_ij(changed_nodes)
        r, nc = g.ratio, g.nc
        hit = []
        for dom in self.domains:
            x_lo, x_hi = dom.cx0 * r, (dom.cx1 + 1) * r
            y_lo, y_hi = dom.cy0 * r, (dom.cy1 + 1) * r
            inside_x = np.where(dom.cx0 > 0, ix > x_lo, ix >= x_lo) & np.where(dom.cx1 < nc - 1, ix < x_hi, ix <= x_hi)
            inside_y = np.where(dom.cy0 > 0, iy > y_lo, iy >= y_lo) & np.where(dom.cy1 < nc - 1, iy < y_hi, iy <= y_hi)
            if np.any(inside_x & inside_y):
                hit.append(dom.i)
        return np.array(hit, dtype=int)

    def refresh(self, space: MultiscaleSpace, new_active) -> MultiscaleSpace:
        """New space for ``new_active``, rebuilding only domains that see a changed node."""
        new_active = np.asarray(new_active, dtype=bool)
        changed = self.problem.contact_nodes[new_active != space.restriction.active]
        restriction = DofRestriction.from_active(self.problem, new_active, space.version + 1)
        elems = self.affected_elements(changed)
        l = self.aux.l
        columns = list(space.columns)
        correctors = dict(space.element_correctors)
        dirty = np.zeros(len(columns), dtype=bool)
        res = self._run(elems, restriction, True, True)
        for i, (basis, corr) in res.items():
            for j in range(l):
                columns[i * l + j] = basis[j]
                dirty[i * l + j] = True
            if corr is not None:
                correctors[i] = corr
        Psi = self._psi_matrix(columns)
        K = space.K.copy()
        cols = np.flatnonzero(dirty)
        if len(cols):
            block = self._galerkin(Psi, cols)
            K[:, cols] = block
            K[cols, :] = block.T
        return MultiscaleSpace(
            version=space.version + 1, m=self.m, restriction=restriction, Psi=Psi,
            corrector=self._corrector_sum(correctors), tags=self.tags, dirty=dirty,
            dirty_correctors=tuple(sorted(i for i in res if res[i][1] is not None)),
            columns=tuple(columns), element_correctors=correctors, K=K,
        )


def refresh_for_active_set(builder: CemBuilder, space: MultiscaleSpace, new_active) -> MultiscaleSpace:
    return builder.refresh(space, new_active)


def assemble_coarse_and_solve(problem: ContactProblem, space: MultiscaleSpace):
    """Galerkin solve in the multiscale space; returns ``(w, u_ms_fine)``.

    ``w`` are the coarse coefficients and ``u_ms_fine = Psi w + N p``.
    """
    A, b = problem.A, problem.b
    K = space.K if space.K is not None else (space.Psi.T @ (A @ space.Psi)).toarray()
    rhs = space.Psi.T @ (b - A @ space.corrector)
    if not np.any(rhs):
        return np.zeros(K.shape[0]), space.corrector.copy()
    try:
        w = sla.cho_solve(sla.cho_factor(K, lower=True), rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(
            "coarse multiscale matrix is singular (active set removed all content of some basis functions)",
            context={"k": space.version},
        ) from exc
    return w, space.Psi @ w + space.corrector


# ---------------------------------------------------------------------- Woodbury route
def _domain_system(problem, aux, restriction, dom):
    g = problem.grid
    free = restriction.free_nodes(g, dom)
    Af = problem.A[free][:, free]
    pos = -np.ones(g.n_nodes, dtype=int)
    pos[free] = np.arange(len(free))
    Sphi = aux.Sphi
    Q = np.zeros((len(free), len(dom.coarse) * aux.l))
    for a, l_el in enumerate(dom.coarse):
        nodes = g.coarse_nodes[l_el]
        keep = pos[nodes] >= 0
        Q[pos[nodes[keep]], a * aux.l:(a + 1) * aux.l] = Sphi[l_el][keep]
    return free, Af, Q, pos


def build_basis_column(problem: ContactProblem, aux: AuxiliarySpace, restriction: DofRestriction,
                       i: int, j: int, m: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``psi_{i,k}^{j,m}`` as a global fine-node vector (zero outside ``K_i^m``)."""
    g = problem.grid
    dom = oversample(g, i, m)
    free, Af, Q, pos = _domain_system(problem, aux, restriction, dom)
    rhs = np.zeros(len(free))
    nodes = g.coarse_nodes[i]
    keep = pos[nodes] >= 0
    rhs[pos[nodes[keep]]] = aux.Sphi[i][keep, j]
    try:
        x = solve_lowrank_corrected(Af, Q, rhs, tol)
    except SolverFailure as exc:
        raise exc.annotate(i=i, j=j, m=m, k=restriction.version)
    out = np.zeros(g.n_nodes)
    out[free] = x
    return out


def build_corrector(problem: ContactProblem, aux: AuxiliarySpace, restriction: DofRestriction,
                    i: int, m: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``N_{i,k}^m p``; zero without a solve when ``dK_i`` misses Gamma_N or ``p`` vanishes there."""
    g = problem.grid
    load = element_neumann_loads(problem).get(i)
    if load is None:
        return np.zeros(g.n_nodes)
    dom = oversample(g, i, m)
    free, Af, Q, _ = _domain_system(problem, aux, restriction, dom)
    try:
        x = solve_lowrank_corrected(Af, Q, load[free], tol)
    except SolverFailure as exc:
        raise exc.annotate(i=i, m=m, k=restriction.version)
    out = np.zeros(g.n_nodes)
    out[free] = x
    return out


def global_basis_column(problem: ContactProblem, aux: AuxiliarySpace, restriction: DofRestriction,
                        i: int, j: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Global (non-localized) basis function, for decay studies on small meshes."""
    g = problem.grid
    if g.nx_fine > 40:
        raise ValueError("global basis functions are a small-mesh utility (nx_fine <= 40)")
    return build_basis_column(problem, aux, restriction, i, j, g.nc, tol)
