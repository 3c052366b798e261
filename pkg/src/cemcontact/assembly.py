"""Bilinear Q1 finite element operators on the structured fine mesh.

Coefficients are piecewise constant per fine element, so the closed-form
element blocks below integrate stiffness and mass exactly. Only the load
terms use quadrature (2x2 Gauss per element, 2-point Gauss per edge).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import GridHierarchy, rect_element_nodes

# element node order: (0,0), (1,0), (1,1), (0,1)
STIFFNESS_BLOCK = np.array(
    [[4.0, -1.0, -2.0, -1.0],
     [-1.0, 4.0, -1.0, -2.0],
     [-2.0, -1.0, 4.0, -1.0],
     [-1.0, -2.0, -1.0, 4.0]]
) / 6.0

_MASS_PATTERN = np.array(
    [[4.0, 2.0, 1.0, 2.0],
     [2.0, 4.0, 2.0, 1.0],
     [1.0, 2.0, 4.0, 2.0],
     [2.0, 1.0, 2.0, 4.0]]
) / 36.0

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def mass_block(h: float) -> np.ndarray:
    return _MASS_PATTERN * h * h


def _values(field) -> np.ndarray:
    return np.asarray(getattr(field, "values", field), dtype=float).ravel()


def assemble_block(element_nodes: np.ndarray, coef: np.ndarray, block: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum ``coef[e] * block`` over elements into an ``n x n`` CSR matrix."""
    rows = np.repeat(element_nodes, 4, axis=1).ravel()
    cols = np.tile(element_nodes, (1, 4)).ravel()
    data = (coef[:, None] * block.ravel()[None, :]).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def assemble_stiffness(g: GridHierarchy, kappa) -> sp.csr_matrix:
    """Global ``a(u, v) = int kappa grad u . grad v`` with no boundary conditions."""
    return assemble_block(g.element_nodes, _values(kappa), STIFFNESS_BLOCK, g.n_nodes)


def assemble_weighted_mass(g: GridHierarchy, weight) -> sp.csr_matrix:
    """Global ``s(u, v) = int weight u v``."""
    return assemble_block(g.element_nodes, _values(weight), mass_block(g.h), g.n_nodes)


def assemble_mass(g: GridHierarchy) -> sp.csr_matrix:
    return assemble_block(g.element_nodes, np.ones(g.n_elements), mass_block(g.h), g.n_nodes)


def coarse_local_blocks(g: GridHierarchy, coef, block: np.ndarray) -> np.ndarray:
    """Dense per-coarse-element matrices, shape ``(n_coarse, nloc, nloc)``.

    Row/column order follows :meth:`GridHierarchy.coarse_node_block`. The
    scatter from fine-element blocks is written once as a sparse map and
    applied to all coarse elements at the same time.
    """
    r = g.ratio
    nloc = (r + 1) ** 2
    lmap = _local_element_nodes(r)
    rows = (lmap[:, :, None] * nloc + lmap[:, None, :]).reshape(len(lmap), 16)
    scatter = sp.csr_matrix(
        (np.tile(block.ravel(), len(lmap)), (rows.ravel(), np.repeat(np.arange(len(lmap)), 16))),
        shape=(nloc * nloc, len(lmap)),
    )
    local_coef = _values(coef)[g.coarse_elements]  # (N, r*r)
    out = (scatter @ local_coef.T).T
    return np.ascontiguousarray(out.reshape(g.n_coarse, nloc, nloc))


def _local_element_nodes(r: int) -> np.ndarray:
    return rect_element_nodes(r, r, r + 1)


def _gauss_points(g: GridHierarchy):
    """Physical 2x2 Gauss points per element and the bilinear shape values there."""
    h = g.h
    ll = g.node_coords[g.element_nodes[:, 0]]
    s, t = np.meshgrid(_GAUSS, _GAUSS)
    s, t = s.ravel(), t.ravel()
    pts = ll[:, None, :] + h * np.stack([s, t], axis=-1)[None]
    shape = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)  # (4 qp, 4 nodes)
    return pts, shape


def volume_load(g: GridHierarchy, f) -> np.ndarray:
    if f is None:
        return np.zeros(g.n_nodes)
    pts, shape = _gauss_points(g)
    fv = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    w = 0.25 * g.h * g.h
    contrib = w * fv @ shape  # (n_elem, 4)
    return np.bincount(g.element_nodes.ravel(), contrib.ravel(), minlength=g.n_nodes)


def edge_load(g: GridHierarchy, edges: np.ndarray, p) -> np.ndarray:
    """``int_e p v`` over the given boundary edges, 2-point Gauss per edge."""
    out = np.zeros(g.n_nodes)
    if p is None or len(edges) == 0:
        return out
    xa, xb = g.node_coords[edges[:, 0]], g.node_coords[edges[:, 1]]
    for t in _GAUSS:
        x = (1 - t) * xa + t * xb
        pv = np.broadcast_to(np.asarray(p(x[:, 0], x[:, 1]), dtype=float), (len(edges),))
        w = 0.5 * g.h * pv
        np.add.at(out, edges[:, 0], w * (1 - t))
        np.add.at(out, edges[:, 1], w * t)
    return out


def assemble_load(g: GridHierarchy, f, p, bd) -> np.ndarray:
    """``L(v) = int f v + int_{Gamma_N} p v`` as a nodal vector."""
    return volume_load(g, f) + edge_load(g, bd.edges["N"], p)


def restrict(v: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.asarray(v)[idx]


def extend(v_local: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[idx] = v_local
    return out


def free_dofs(n: int, fixed) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(list(fixed) if not isinstance(fixed, np.ndarray) else fixed, dtype=int)] = False
    return np.flatnonzero(mask)
