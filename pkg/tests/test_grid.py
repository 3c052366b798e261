import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cemcontact.errors import ConfigError
from cemcontact.grid import (
    DEFAULT_BOUNDARY,
    build_hierarchy,
    cut_node_mask,
    decompose_boundary,
    oversample,
)


@pytest.mark.parametrize(
    "nx, nc, ratio, N, H",
    [(400, 100, 4, 10000, 1 / 100), (4, 2, 2, 4, 1 / 2), (40, 20, 2, 400, 1 / 20)],
)
def test_hierarchy_sizes(nx, nc, ratio, N, H):
    g = build_hierarchy(nx, nc)
    assert g.ratio == ratio
    assert g.n_coarse == N
    assert g.H == pytest.approx(H)
    assert g.h == pytest.approx(1 / nx)


def test_non_divisible_sizes_name_both_values():
    with pytest.raises(ConfigError, match="10.*3"):
        build_hierarchy(10, 3)


def test_too_small():
    with pytest.raises(ConfigError):
        build_hierarchy(4, 1)


def test_nesting_map_total():
    g = build_hierarchy(12, 3)
    counts = np.bincount(g.element_to_coarse, minlength=g.n_coarse)
    assert np.all(counts == g.ratio ** 2)
    assert sorted(np.concatenate(list(g.coarse_elements))) == list(range(g.n_elements))


def test_node_indices_lexicographic():
    g = build_hierarchy(6, 2)
    assert g.node_index(0, 0) == 0
    assert g.node_index(6, 0) == 6
    assert g.node_index(0, 1) == 7
    xy = g.node_coords
    assert np.allclose(xy[g.node_index(3, 2)], [0.5, 2 / 6])


def test_element_nodes_counter_clockwise():
    g = build_hierarchy(2, 2)
    assert g.element_nodes[0].tolist() == [0, 1, 4, 3]


class TestOversample:
    def test_center_unclipped(self):
        g = build_hierarchy(10, 5)
        dom = oversample(g, 12, 2)
        assert len(dom.coarse) == 25

    def test_corner_clipped(self):
        g = build_hierarchy(10, 5)
        assert sorted(oversample(g, 0, 1).coarse.tolist()) == [0, 1, 5, 6]

    def test_identity(self):
        g = build_hierarchy(10, 5)
        for i in range(g.n_coarse):
            assert oversample(g, i, 0).coarse.tolist() == [i]

    def test_cut_nodes_for_interior_domain(self):
        g = build_hierarchy(8, 4)
        dom = oversample(g, 5, 0)  # coarse (1, 1), fully interior
        assert len(dom.cut_nodes) == 4 * g.ratio
        assert len(dom.outer_nodes) == 0

    def test_cut_includes_endpoints_on_outer_boundary(self):
        g = build_hierarchy(8, 4)
        dom = oversample(g, 0, 0)  # lower-left corner element
        cut = set(dom.cut_nodes.tolist())
        # right side x = 2h and top side y = 2h, both including their boundary endpoints
        assert g.node_index(2, 0) in cut and g.node_index(0, 2) in cut
        assert g.node_index(1, 0) not in cut
        assert np.array_equal(dom.nodes[cut_node_mask(g, dom)], dom.cut_nodes)

    def test_bad_request(self):
        g = build_hierarchy(4, 2)
        with pytest.raises(ConfigError):
            oversample(g, 4, 0)
        with pytest.raises(ConfigError):
            oversample(g, 0, -1)


@settings(max_examples=40, deadline=None)
@given(nc=st.integers(2, 6), r=st.integers(1, 3), data=st.data())
def test_oversample_node_union_and_monotonicity(nc, r, data):
    g = build_hierarchy(nc * r, nc)
    i = data.draw(st.integers(0, g.n_coarse - 1))
    m = data.draw(st.integers(0, nc))
    dom = oversample(g, i, m)
    union = np.unique(np.concatenate([g.coarse_nodes[e] for e in dom.coarse]))
    assert np.array_equal(np.sort(dom.nodes), union)
    assert len(np.unique(dom.nodes)) == len(dom.nodes)
    cx, cy = g.coarse_ij(i)
    ex, ey = g.coarse_ij(dom.coarse)
    assert np.all(np.maximum(abs(ex - cx), abs(ey - cy)) <= m)
    bigger = oversample(g, i, m + 1)
    small, large = set(dom.nodes.tolist()), set(bigger.nodes.tolist())
    assert small <= large
    if len(bigger.coarse) > len(dom.coarse):
        assert small < large


class TestBoundary:
    def test_default_on_4x4(self):
        g = build_hierarchy(4, 2)
        bd = decompose_boundary(g, DEFAULT_BOUNDARY)
        assert len(bd.edges["C"]) == 4
        assert len(bd.contact_nodes) == 5
        assert bd.contact_nodes.tolist() == [0, 1, 2, 3, 4]

    def test_corner_precedence(self):
        g = build_hierarchy(4, 2)
        bd = decompose_boundary(g, {"bottom": "N", "top": "D", "left": "C", "right": "N"})
        # top-left corner: D beats C; bottom-left corner: C beats N
        assert g.node_index(0, 4) in bd.dirichlet_nodes
        assert g.node_index(0, 0) in bd.contact_nodes
        assert g.node_index(4, 0) in bd.neumann_nodes

    def test_multi_segment_label(self):
        g = build_hierarchy(6, 3)
        bd = decompose_boundary(g, {"bottom": "C", "top": "C", "left": "D", "right": "N"})
        sides = set(bd.edge_sides["C"].tolist())
        assert sides == {"bottom", "top"}
        x = g.node_coords[bd.contact_nodes, 0]
        assert np.all(np.diff(x) >= 0)

    def test_missing_label(self):
        g = build_hierarchy(4, 2)
        with pytest.raises(ConfigError, match="nonempty"):
            decompose_boundary(g, {"bottom": "C", "top": "N", "left": "N", "right": "N"})

    def test_sub_intervals(self):
        g = build_hierarchy(8, 2)
        spec = dict(DEFAULT_BOUNDARY, bottom=[[0.0, 0.5, "C"], [0.5, 1.0, "N"]])
        bd = decompose_boundary(g, spec)
        assert len(bd.edges["C"]) == 4
        assert bd.contact_nodes.tolist() == [0, 1, 2, 3, 4]

    def test_incomplete_cover(self):
        g = build_hierarchy(8, 2)
        with pytest.raises(ConfigError, match="covered"):
            decompose_boundary(g, dict(DEFAULT_BOUNDARY, bottom=[[0.0, 0.5, "C"]]))

    def test_unknown_label_and_side(self):
        g = build_hierarchy(4, 2)
        with pytest.raises(ConfigError):
            decompose_boundary(g, dict(DEFAULT_BOUNDARY, left="X"))
        with pytest.raises(ConfigError):
            decompose_boundary(g, dict(DEFAULT_BOUNDARY, front="N"))

    @pytest.mark.parametrize("nx", [4, 6, 10])
    def test_partition_of_edges(self, nx):
        g = build_hierarchy(nx, 2)
        bd = decompose_boundary(g, DEFAULT_BOUNDARY)
        all_edges = np.concatenate([bd.edges[k] for k in "DNC"])
        assert len(all_edges) == 4 * nx
        assert len({tuple(sorted(e)) for e in all_edges.tolist()}) == 4 * nx
        nodes = [set(bd.dirichlet_nodes.tolist()), set(bd.contact_nodes.tolist()), set(bd.neumann_nodes.tolist())]
        assert not (nodes[0] & nodes[1] or nodes[0] & nodes[2] or nodes[1] & nodes[2])
        assert len(set().union(*nodes)) == 4 * nx

    def test_normals(self):
        g = build_hierarchy(4, 2)
        bd = decompose_boundary(g, DEFAULT_BOUNDARY)
        assert tuple(bd.normal(2)) == (0, -1)
