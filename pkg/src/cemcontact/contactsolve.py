"""Primal-dual active set (semismooth Newton) iteration for the contact condition.

A state ``k`` stores the active set that produced ``u_k``. One step
classifies ``A = {lam_k + c u_k > 0}`` on the contact nodes, solves the
linear problem with ``u = 0`` on Gamma_D and ``A``, and recovers the
multiplier as the nodal residual on ``A`` (zero on the inactive set). The
iteration stops once classifying the new iterate returns the set that
produced it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import free_dofs
from .auxspace import AuxiliarySpace, build_auxiliary
from .cembasis import CemBuilder, MultiscaleSpace, assemble_coarse_and_solve
from .errors import NonTermination, SolverFailure
from .numkernel import DEFAULT_TOL, SPDFactor
from .problem import ContactProblem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContactState:
    k: int
    u: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)     # on contact nodes
    active: np.ndarray = field(repr=False)  # bool on contact nodes, the set used to compute u
    c: float
    contact_nodes: np.ndarray = field(repr=False)

    @property
    def inactive(self) -> np.ndarray:
        return ~self.active

    @property
    def u_contact(self) -> np.ndarray:
        return self.u[self.contact_nodes]

    def classify(self, c: float | None = None) -> np.ndarray:
        """Strict ``lam + c u > 0``; ties are inactive (generalized derivative with delta = 0)."""
        c = self.c if c is None else c
        return self.lam + c * self.u_contact > 0


class FineVariant:
    """Constrained fine-grid FEM solve."""

    tag = "fine"

    def __init__(self, problem: ContactProblem, tol: float = DEFAULT_TOL):
        self.problem = problem
        self.tol = tol

    def solve(self, active: np.ndarray) -> np.ndarray:
        pr = self.problem
        fixed = np.concatenate([pr.dirichlet_nodes, pr.contact_nodes[active]])
        free = free_dofs(pr.grid.n_nodes, fixed)
        u = np.zeros(pr.grid.n_nodes)
        u[free], _ = SPDFactor(pr.A[free][:, free]).solve(pr.b[free], self.tol)
        return u


class CemVariant:
    """CEM-GMsFEM solve; the multiscale space follows the active set incrementally.

    ``rebuild_log`` records, per solve, the number of basis columns rebuilt
    and the coarse elements whose columns were rebuilt.
    """

    tag = "cem"

    def __init__(self, problem: ContactProblem, l_m: int = 4, m: int = 4, aux: AuxiliarySpace | None = None,
                 threads: int = 1, incremental: bool = True, tol: float = DEFAULT_TOL):
        self.problem = problem
        self.aux = aux if aux is not None else build_auxiliary(problem.grid, problem.kappa, problem.weight, l_m)
        self.builder = CemBuilder(problem, self.aux, m, threads=threads, tol=tol)
        self.incremental = incremental
        self.space: MultiscaleSpace | None = None
        self.rebuild_log = []

    @property
    def Lambda_report(self) -> float:
        return self.aux.Lambda_report

    def space_for(self, active: np.ndarray) -> MultiscaleSpace:
        active = np.asarray(active, dtype=bool)
        if self.space is None or not self.incremental:
            version = 0 if self.space is None else self.space.version + 1
            space = self.builder.build(active, version=version)
        else:
            space = self.builder.refresh(self.space, active)
        rebuilt = np.unique(space.tags[space.dirty, 0])
        self.rebuild_log.append((space.n_rebuilt, rebuilt))
        self.space = space
        return space

    def solve(self, active: np.ndarray) -> np.ndarray:
        space = self.space_for(active)
        _, u = assemble_coarse_and_solve(self.problem, space)
        return u


def compute_multiplier(A, b, u, contact_nodes) -> np.ndarray:
    """Discrete multiplier: the nodal residual ``b - A u`` at the contact nodes."""
    contact_nodes = np.asarray(contact_nodes)
    rows = A[contact_nodes]
    return b[contact_nodes] - rows @ u


def initial_state(problem: ContactProblem, variant) -> ContactState:
    """Unconstrained start: zero Neumann data on Gamma_C, ``lam = 0``, nothing active."""
    nC = len(problem.contact_nodes)
    active = np.zeros(nC, dtype=bool)
    u = variant.solve(active)
    return ContactState(k=0, u=u, lam=np.zeros(nC), active=active, c=problem.c,
                        contact_nodes=problem.contact_nodes)


def step(state: ContactState, variant, problem: ContactProblem) -> ContactState:
    active = state.classify()
    try:
        u = variant.solve(active)
    except SolverFailure as exc:
        raise exc.annotate(iteration=state.k + 1, variant=variant.tag)
    lam = compute_multiplier(problem.A, problem.b, u, problem.contact_nodes)
    lam[~active] = 0.0
    return ContactState(k=state.k + 1, u=u, lam=lam, active=active, c=state.c,
                        contact_nodes=state.contact_nodes)


def run(problem: ContactProblem, variant, max_iter: int = 20):
    """Iterate until the active set is reproduced; returns ``(state, history)``."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    state = initial_state(problem, variant)
    history = [state]
    for _ in range(max_iter):
        state = step(state, variant, problem)
        history.append(state)
        log.info("%s k=%d |A|=%d", variant.tag, state.k, int(state.active.sum()))
        if np.array_equal(state.classify(), state.active):
            return state, history
    raise NonTermination(
        f"{variant.tag} active set iteration did not reach a fixpoint in {max_iter} steps",
        active_sets=[h.active for h in history[-3:]] + [state.classify()],
    )


def semismooth_residual(lam, u_contact, c) -> np.ndarray:
    """``F(lam) = lam - max(0, lam + c u)`` nodewise."""
    return lam - np.maximum(0.0, lam + c * u_contact)


def kkt_report(state: ContactState) -> dict:
    """Scaled violations of the complementarity conditions at the contact nodes."""
    lam, u, c = state.lam, state.u_contact, state.c
    lam_inf = float(np.max(np.abs(lam), initial=0.0))
    u_inf = float(np.max(np.abs(u), initial=0.0))
    return {
        "lam_min": float(np.min(lam, initial=0.0)),
        "u_max": float(np.max(u, initial=0.0)),
        "lam_u_max": float(np.max(lam * u, initial=0.0)),
        "F_inf": float(np.max(np.abs(semismooth_residual(lam, u, c)), initial=0.0)),
        "lam_inf": lam_inf,
        "u_inf": u_inf,
    }


def kkt_satisfied(state: ContactState, eps: float = 1e-9) -> bool:
    r = kkt_report(state)
    return (
        r["lam_min"] >= -eps * r["lam_inf"]
        and r["u_max"] <= eps * r["u_inf"]
        and r["lam_u_max"] <= eps * r["lam_inf"] * r["u_inf"]
        and r["F_inf"] <= eps * max(r["lam_inf"], state.c * r["u_inf"])
    )
