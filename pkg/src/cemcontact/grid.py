"""Nested structured quadrilateral meshes on the unit square.

Index conventions (stable, lexicographic):

* fine node ``(ix, iy)`` -> ``iy * (nx + 1) + ix``
* fine element ``(ex, ey)`` -> ``ey * nx + ex``; its nodes are listed
  counter-clockwise starting at the lower-left corner
* coarse element ``(cx, cy)`` -> ``cy * nc + cx``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

SIDES = ("bottom", "top", "left", "right")
LABELS = ("D", "N", "C")
# corner resolution: a node touching several labels takes the first one listed
PRECEDENCE = ("D", "C", "N")
OUTWARD_NORMALS = {
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
}


@dataclass(frozen=True)
class GridHierarchy:
    """Fine mesh of ``nx_fine**2`` squares nested in ``n_coarse_per_axis**2`` coarse squares."""

    nx_fine: int
    n_coarse_per_axis: int

    @property
    def ny_fine(self) -> int:
        return self.nx_fine

    @property
    def nc(self) -> int:
        return self.n_coarse_per_axis

    @property
    def ratio(self) -> int:
        return self.nx_fine // self.n_coarse_per_axis

    @property
    def h(self) -> float:
        return 1.0 / self.nx_fine

    @property
    def H(self) -> float:
        return 1.0 / self.n_coarse_per_axis

    @property
    def n_coarse(self) -> int:
        return self.n_coarse_per_axis ** 2

    @property
    def n_nodes(self) -> int:
        return (self.nx_fine + 1) ** 2

    @property
    def n_elements(self) -> int:
        return self.nx_fine ** 2

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.nx_fine + 1) + np.asarray(ix)

    def node_ij(self, n):
        n = np.asarray(n)
        return n % (self.nx_fine + 1), n // (self.nx_fine + 1)

    def coarse_ij(self, i):
        return i % self.nc, i // self.nc

    @cached_property
    def node_coords(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.nx_fine + 1)
        X, Y = np.meshgrid(t, t)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(n_elements, 4) node indices, counter-clockwise from lower-left."""
        return rect_element_nodes(self.nx_fine, self.nx_fine, self.nx_fine + 1)

    @cached_property
    def element_to_coarse(self) -> np.ndarray:
        e = np.arange(self.n_elements)
        ex, ey = e % self.nx_fine, e // self.nx_fine
        return (ey // self.ratio) * self.nc + ex // self.ratio

    def coarse_node_block(self, i: int) -> np.ndarray:
        """Global fine nodes of coarse element ``i`` in local lexicographic order."""
        cx, cy = self.coarse_ij(i)
        return self.rect_nodes(cx, cx, cy, cy)

    def coarse_element_block(self, i: int) -> np.ndarray:
        cx, cy = self.coarse_ij(i)
        return self.rect_elements(cx, cx, cy, cy)

    @cached_property
    def coarse_nodes(self) -> np.ndarray:
        """(n_coarse, (ratio+1)**2) global node indices of every coarse element."""
        return np.stack([self.coarse_node_block(i) for i in range(self.n_coarse)])

    @cached_property
    def coarse_elements(self) -> np.ndarray:
        """(n_coarse, ratio**2) fine elements of every coarse element, local lexicographic."""
        return np.stack([self.coarse_element_block(i) for i in range(self.n_coarse)])

    def rect_nodes(self, cx0, cx1, cy0, cy1) -> np.ndarray:
        r, n1 = self.ratio, self.nx_fine + 1
        ix = np.arange(cx0 * r, (cx1 + 1) * r + 1)
        iy = np.arange(cy0 * r, (cy1 + 1) * r + 1)
        return (iy[:, None] * n1 + ix[None, :]).ravel()

    def rect_elements(self, cx0, cx1, cy0, cy1) -> np.ndarray:
        r = self.ratio
        ex = np.arange(cx0 * r, (cx1 + 1) * r)
        ey = np.arange(cy0 * r, (cy1 + 1) * r)
        return (ey[:, None] * self.nx_fine + ex[None, :]).ravel()

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        ix, iy = self.node_ij(np.arange(self.n_nodes))
        n = self.nx_fine
        return np.flatnonzero((ix == 0) | (iy == 0) | (ix == n) | (iy == n))

    @cached_property
    def skeleton_mask(self) -> np.ndarray:
        """True at fine nodes lying on a coarse grid line."""
        ix, iy = self.node_ij(np.arange(self.n_nodes))
        return (ix % self.ratio == 0) | (iy % self.ratio == 0)


def rect_element_nodes(nex: int, ney: int, row_stride: int, offset: int = 0) -> np.ndarray:
    """Node indices of a structured ``nex x ney`` element block.

    ``row_stride`` is the number of nodes per row in the numbering the
    block lives in (``nex + 1`` for a standalone local numbering).
    """
    ex, ey = np.meshgrid(np.arange(nex), np.arange(ney))
    ll = offset + ey.ravel() * row_stride + ex.ravel()
    return np.column_stack([ll, ll + 1, ll + 1 + row_stride, ll + row_stride])


def build_hierarchy(nx_fine: int, n_coarse_per_axis: int) -> GridHierarchy:
    if nx_fine < 2 or n_coarse_per_axis < 2:
        raise ConfigError(
            f"grid sizes must be >= 2 (nx_fine={nx_fine}, n_coarse_per_axis={n_coarse_per_axis})"
        )
    if nx_fine % n_coarse_per_axis:
        raise ConfigError(
            f"nx_fine={nx_fine} is not divisible by n_coarse_per_axis={n_coarse_per_axis}"
        )
    return GridHierarchy(int(nx_fine), int(n_coarse_per_axis))


@dataclass(frozen=True)
class OversampleDomain:
    """Coarse element ``i`` grown by ``m`` Chebyshev layers, clipped to the square.

    The clipped neighbourhood is always a rectangle of coarse cells
    ``[cx0, cx1] x [cy0, cy1]``; node arrays hold global indices in the
    rectangle's local lexicographic order.
    """

    i: int
    m: int
    cx0: int
    cx1: int
    cy0: int
    cy1: int
    coarse: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    cut_nodes: np.ndarray = field(repr=False)
    outer_nodes: np.ndarray = field(repr=False)

    @property
    def shape(self):
        """Number of coarse cells along x and y."""
        return self.cx1 - self.cx0 + 1, self.cy1 - self.cy0 + 1


def oversample(g: GridHierarchy, i: int, m: int) -> OversampleDomain:
    if m < 0 or not 0 <= i < g.n_coarse:
        raise ConfigError(f"invalid oversampling request i={i}, m={m}")
    cx, cy = g.coarse_ij(i)
    cx0, cx1 = max(cx - m, 0), min(cx + m, g.nc - 1)
    cy0, cy1 = max(cy - m, 0), min(cy + m, g.nc - 1)
    ccx, ccy = np.meshgrid(np.arange(cx0, cx1 + 1), np.arange(cy0, cy1 + 1))
    coarse = (ccy * g.nc + ccx).ravel()
    nodes = g.rect_nodes(cx0, cx1, cy0, cy1)
    ix, iy = g.node_ij(nodes)
    r = g.ratio
    on_rect = (ix == cx0 * r) | (ix == (cx1 + 1) * r) | (iy == cy0 * r) | (iy == (cy1 + 1) * r)
    cut = _cut_mask(ix, iy, r, g.nc, cx0, cx1, cy0, cy1)
    return OversampleDomain(
        i=i, m=m, cx0=cx0, cx1=cx1, cy0=cy0, cy1=cy1,
        coarse=coarse,
        nodes=nodes,
        elements=g.rect_elements(cx0, cx1, cy0, cy1),
        cut_nodes=nodes[cut],
        outer_nodes=nodes[on_rect & ~cut],
    )


def _cut_mask(ix, iy, r, nc, cx0, cx1, cy0, cy1):
    # a rectangle side strictly inside the square is cut; its endpoints on
    # the outer boundary are cut too, so zero extension stays continuous
    cut = np.zeros(np.shape(ix), dtype=bool)
    if cx0 > 0:
        cut |= ix == cx0 * r
    if cx1 < nc - 1:
        cut |= ix == (cx1 + 1) * r
    if cy0 > 0:
        cut |= iy == cy0 * r
    if cy1 < nc - 1:
        cut |= iy == (cy1 + 1) * r
    return cut


def cut_node_mask(g: GridHierarchy, dom: OversampleDomain) -> np.ndarray:
    """Boolean over ``dom.nodes``: nodes on the interior cut of the domain boundary."""
    ix, iy = g.node_ij(dom.nodes)
    return _cut_mask(ix, iy, g.ratio, g.nc, dom.cx0, dom.cx1, dom.cy0, dom.cy1)


@dataclass(frozen=True)
class BoundaryDecomposition:
    """Disjoint split of the boundary edges into Dirichlet, Neumann and contact parts.

    ``edges[label]`` is an (n, 2) array of fine node pairs; ``edge_sides[label]``
    names the side each edge lies on. Node sets follow the D > C > N precedence.
    """

    edges: dict
    edge_sides: dict
    dirichlet_nodes: np.ndarray
    contact_nodes: np.ndarray
    neumann_nodes: np.ndarray
    node_side: dict

    def normal(self, node: int):
        return OUTWARD_NORMALS[self.node_side[int(node)]]


def _side_edges(g: GridHierarchy, side: str):
    """Node pairs and along-side midpoint coordinates of the edges of one side."""
    n = g.nx_fine
    k = np.arange(n)
    if side == "bottom":
        a, b = g.node_index(k, 0), g.node_index(k + 1, 0)
    elif side == "top":
        a, b = g.node_index(k, n), g.node_index(k + 1, n)
    elif side == "left":
        a, b = g.node_index(0, k), g.node_index(0, k + 1)
    else:
        a, b = g.node_index(n, k), g.node_index(n, k + 1)
    return np.column_stack([a, b]), (k + 0.5) / n


def _segments(side: str, value):
    """Normalise a side assignment to ``[(start, end, label), ...]``."""
    if isinstance(value, str):
        segs = [(0.0, 1.0, value)]
    else:
        try:
            segs = [(float(s), float(e), str(lab)) for s, e, lab in value]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"boundary side {side!r}: expected a label or [start, end, label] list") from exc
    for s, e, lab in segs:
        if lab not in LABELS:
            raise ConfigError(f"boundary side {side!r}: unknown label {lab!r}")
        if not 0.0 <= s < e <= 1.0:
            raise ConfigError(f"boundary side {side!r}: bad interval [{s}, {e}]")
    return segs


def decompose_boundary(g: GridHierarchy, spec: dict) -> BoundaryDecomposition:
    """Assign every boundary edge to D, N or C.

    ``spec`` maps each side name to a label (``"C"``) or to a list of
    ``[start, end, label]`` sub-intervals given as fractions of the side,
    measured in the increasing coordinate direction.
    """
    missing = set(SIDES) - set(spec)
    if missing:
        raise ConfigError(f"boundary spec lacks sides {sorted(missing)}")
    extra = set(spec) - set(SIDES)
    if extra:
        raise ConfigError(f"boundary spec has unknown sides {sorted(extra)}")

    pairs = {lab: [] for lab in LABELS}
    sides = {lab: [] for lab in LABELS}
    for side in SIDES:
        segs = _segments(side, spec[side])
        e, mid = _side_edges(g, side)
        assigned = np.zeros(len(mid), dtype=bool)
        for s, t, lab in segs:
            sel = (mid > s) & (mid < t) & ~assigned
            assigned |= sel
            pairs[lab].append(e[sel])
            sides[lab].extend([side] * int(sel.sum()))
        if not assigned.all():
            raise ConfigError(f"boundary side {side!r} is not fully covered by its segments")

    edges = {lab: np.concatenate(pairs[lab]) if pairs[lab] else np.zeros((0, 2), int) for lab in LABELS}
    for lab in LABELS:
        if len(edges[lab]) == 0:
            raise ConfigError(
                f"boundary label {lab!r} is empty: Gamma_D, Gamma_N, Gamma_C must be three nonempty disjoint parts"
            )

    node_label, node_side = {}, {}
    for lab in reversed(PRECEDENCE):  # higher precedence overwrites
        for (a, b), side in zip(edges[lab], sides[lab]):
            for v in (int(a), int(b)):
                node_label[v] = lab
                node_side[v] = side

    def nodes_with(lab):
        return np.array(sorted(v for v, l in node_label.items() if l == lab), dtype=int)

    contact = nodes_with("C")
    xy = g.node_coords[contact]
    contact = contact[np.lexsort((xy[:, 1], xy[:, 0]))]
    return BoundaryDecomposition(
        edges=edges,
        edge_sides={lab: np.array(sides[lab]) for lab in LABELS},
        dirichlet_nodes=nodes_with("D"),
        contact_nodes=contact,
        neumann_nodes=nodes_with("N"),
        node_side=node_side,
    )


DEFAULT_BOUNDARY = {"bottom": "C", "top": "D", "left": "N", "right": "N"}
