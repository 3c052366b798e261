"""Auxiliary space from local spectral problems on each coarse element.

Functions of the auxiliary space are discontinuous across coarse element
boundaries, so they are stored "broken": one local nodal vector per coarse
element, shape ``(n_coarse, nloc)`` with ``nloc = (ratio + 1)**2`` and the
local node order of :meth:`GridHierarchy.coarse_node_block`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import STIFFNESS_BLOCK, coarse_local_blocks, mass_block
from .errors import SolverFailure
from .grid import GridHierarchy
from .numkernel import generalized_eigs_smallest


@dataclass(frozen=True)
class AuxiliarySpace:
    grid: GridHierarchy
    l: int
    eigenvalues: np.ndarray   # (N, l + 1); last column is lambda^{l+1} (inf if unavailable)
    phi: np.ndarray           # (N, nloc, l), s_i-orthonormal columns
    A_loc: np.ndarray         # (N, nloc, nloc) local a_i
    S_loc: np.ndarray         # (N, nloc, nloc) local s_i

    @property
    def dim(self) -> int:
        return self.grid.n_coarse * self.l

    @property
    def Lambda_report(self) -> float:
        return float(np.min(self.eigenvalues[:, self.l]))

    @property
    def Sphi(self) -> np.ndarray:
        """``S_i phi_i^j``: the functional ``v -> s_i(phi_i^j, v)`` per element."""
        return np.einsum("nab,nbj->naj", self.S_loc, self.phi)

    def broken(self, v) -> np.ndarray:
        """Restrict a fine-node vector to every coarse element (or pass a broken array through)."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 2:
            return v
        return v[self.grid.coarse_nodes]

    def eigenvector_fine(self, i: int, j: int) -> np.ndarray:
        """``phi_i^j`` as a broken array: local vector on K_i, zero on every other element."""
        out = np.zeros((self.grid.n_coarse, self.phi.shape[1]))
        out[i] = self.phi[i, :, j]
        return out


def build_auxiliary(g: GridHierarchy, kappa, weight, l_m: int) -> AuxiliarySpace:
    """Solve ``a_i(phi, v) = lam s_i(phi, v)`` on every coarse element (pure Neumann).

    ``l_m`` pairs are retained and ``lam^{l_m + 1}`` is recorded for the
    ``Lambda`` report. ``l_m`` equal to the local dimension is allowed; the
    report value is then ``inf``.
    """
    nloc = (g.ratio + 1) ** 2
    if not 1 <= l_m <= nloc:
        raise ValueError(f"l_m={l_m} outside [1, {nloc}] for ratio {g.ratio}")
    A_loc = coarse_local_blocks(g, kappa, STIFFNESS_BLOCK)
    S_loc = coarse_local_blocks(g, weight, mass_block(g.h))
    n_pairs = min(l_m + 1, nloc)
    lam = np.full((g.n_coarse, l_m + 1), np.inf)
    phi = np.empty((g.n_coarse, nloc, l_m))
    for i in range(g.n_coarse):
        try:
            w, V = generalized_eigs_smallest(A_loc[i], S_loc[i], n_pairs)
        except SolverFailure as exc:
            raise exc.annotate(coarse_element=i)
        lam[i, :n_pairs] = w
        phi[i] = V[:, :l_m]
    return AuxiliarySpace(grid=g, l=l_m, eigenvalues=lam, phi=phi, A_loc=A_loc, S_loc=S_loc)


def pi_coefficients(aux: AuxiliarySpace, v) -> np.ndarray:
    """``s_i(phi_i^j, v)`` for every element and retained eigenvector, shape ``(N, l)``."""
    vb = aux.broken(v)
    return np.einsum("naj,na->nj", aux.Sphi, vb)


def project_pi(aux: AuxiliarySpace, v) -> np.ndarray:
    """s-orthogonal projection onto the auxiliary space, returned broken ``(N, nloc)``.

    Accepts a fine-node vector (restricted to each K_i) or a broken array.
    Eigenvectors are s-normalized, so no denominators appear.
    """
    return np.einsum("naj,nj->na", aux.phi, pi_coefficients(aux, v))


def s_local_norms_sq(aux: AuxiliarySpace, v) -> np.ndarray:
    vb = aux.broken(v)
    return np.einsum("na,nab,nb->n", vb, aux.S_loc, vb)


def a_local_norms_sq(aux: AuxiliarySpace, v) -> np.ndarray:
    vb = aux.broken(v)
    return np.einsum("na,nab,nb->n", vb, aux.A_loc, vb)
