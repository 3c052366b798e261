import numpy as np
import pytest
from conftest import make_problem

from cemcontact.assembly import assemble_load
from cemcontact.auxspace import build_auxiliary, pi_coefficients
from cemcontact.cembasis import (
    CemBuilder,
    DofRestriction,
    assemble_coarse_and_solve,
    build_basis_column,
    build_corrector,
    element_neumann_loads,
    global_basis_column,
)
from cemcontact.contactsolve import FineVariant
from cemcontact.errors import SolverFailure
from cemcontact.grid import oversample
from cemcontact.metrics import energy_norm, relative_errors
from cemcontact.problem import parse_source


def _setup(nx=24, nc=6, style="B", kappa_R=1e3, neumann="1 + x", l=3, m=2, seed=0):
    pr = make_problem(nx, nc, style, kappa_R, "f1", neumann=neumann, seed=seed)
    aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, l)
    return pr, aux, CemBuilder(pr, aux, m)


def _some_active(pr):
    active = np.zeros(len(pr.contact_nodes), dtype=bool)
    active[2:7] = True
    return active


def _dense(col, n):
    out = np.zeros(n)
    out[col[0]] = col[1]
    return out


class TestColumns:
    @pytest.mark.parametrize("active_on", [False, True])
    def test_bulk_matches_woodbury(self, active_on):
        pr, aux, b = _setup()
        active = _some_active(pr) if active_on else np.zeros(len(pr.contact_nodes), bool)
        space = b.build(active)
        n = pr.grid.n_nodes
        for i, j in [(0, 0), (1, 2), (14, 1), (35, 0)]:
            ref = build_basis_column(pr, aux, space.restriction, i, j, b.m)
            got = _dense(space.columns[i * aux.l + j], n)
            assert np.linalg.norm(got - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_full_oversampling_is_global(self):
        pr, aux, _ = _setup(nx=12, nc=4)
        b = CemBuilder(pr, aux, pr.grid.nc)
        space = b.build()
        ref = global_basis_column(pr, aux, space.restriction, 5, 1)
        assert np.allclose(_dense(space.columns[5 * aux.l + 1], pr.grid.n_nodes), ref, atol=1e-12)

    def test_global_column_guard(self):
        pr, aux, b = _setup(nx=48, nc=6)
        with pytest.raises(ValueError):
            global_basis_column(pr, aux, b.build().restriction, 0, 0)

    def test_projection_concentrates_on_own_element(self):
        pr = make_problem(8, 2, "A", 1.0, "f1")
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 1)
        r = DofRestriction.from_active(pr, np.zeros(len(pr.contact_nodes), bool))
        for m in (0, 1):
            coef = pi_coefficients(aux, build_basis_column(pr, aux, r, 0, 0, m))[:, 0]
            assert coef[0] > 0
            assert np.all(np.abs(coef[1:]) <= 0.1 * coef[0])
            if m == 0:
                assert np.all(coef[1:] == 0)

    def test_decay_with_constant_coefficient(self):
        pr = make_problem(40, 10, "A", 1.0, "f1")
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 2)
        r = DofRestriction.from_active(pr, np.zeros(len(pr.contact_nodes), bool))
        glo = global_basis_column(pr, aux, r, 44, 1)
        errs = [energy_norm(pr.A, build_basis_column(pr, aux, r, 44, 1, m) - glo) for m in (1, 2, 3, 4)]
        assert all(b <= 0.5 * a for a, b in zip(errs, errs[1:]))

    def test_conformity(self):
        pr, aux, b = _setup()
        space = b.build(_some_active(pr))
        clamped = space.restriction.clamped
        Psi = space.Psi.tocsc()
        for col, (i, _) in enumerate(space.tags):
            rows = Psi.indices[Psi.indptr[col]:Psi.indptr[col + 1]]
            assert not clamped[rows].any()
            dom = oversample(pr.grid, i, b.m)
            assert np.isin(rows, dom.nodes).all()
            assert not np.isin(rows, dom.cut_nodes).any()


class TestCorrector:
    def test_zero_neumann_data(self):
        pr, _, b = _setup(neumann="0")
        space = b.build()
        assert not space.corrector.any() and space.dirty_correctors == ()

    def test_interior_element_has_no_corrector(self):
        pr, aux, b = _setup()
        r = DofRestriction.from_active(pr, np.zeros(len(pr.contact_nodes), bool))
        interior = 2 * pr.grid.nc + 2
        assert not build_corrector(pr, aux, r, interior, b.m).any()

    def test_loads_partition_boundary_integral(self):
        pr = make_problem(12, 3, "A", 1.0, "0", neumann="1")
        loads = element_neumann_loads(pr)
        total = sum(loads.values())
        ref = assemble_load(pr.grid, parse_source("0"), parse_source("1"), pr.boundary)
        assert np.array_equal(np.flatnonzero(total), np.flatnonzero(ref))
        assert np.allclose(total, ref, rtol=0, atol=1e-15)
        assert total.sum() == pytest.approx(2.0)

    def test_sum_matches_woodbury(self):
        pr, aux, b = _setup()
        active = _some_active(pr)
        space = b.build(active)
        ref = sum(build_corrector(pr, aux, space.restriction, i, b.m) for i in range(pr.grid.n_coarse))
        assert np.linalg.norm(space.corrector - ref) <= 1e-9 * np.linalg.norm(ref)


class TestGalerkin:
    def test_K_matches_sparse_product(self):
        pr, _, b = _setup()
        space = b.build(_some_active(pr))
        ref = (space.Psi.T @ pr.A @ space.Psi).toarray()
        assert np.abs(space.K - ref).max() <= 1e-10 * np.abs(ref).max()
        assert np.array_equal(space.K, space.K.T)

    def test_orthogonality_of_residual(self):
        pr, _, b = _setup()
        space = b.build(_some_active(pr))
        _, u = assemble_coarse_and_solve(pr, space)
        r = space.Psi.T @ (pr.b - pr.A @ u)
        assert np.abs(r).max() <= 1e-9 * np.abs(space.Psi.T @ pr.b).max()

    def test_full_auxiliary_space_spans_fine_space(self):
        pr = make_problem(4, 2, "random", 10, "f1", neumann="1", seed=0)
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 9)
        space = CemBuilder(pr, aux, 2).build()
        u = FineVariant(pr).solve(np.zeros(len(pr.contact_nodes), bool))
        w = np.linalg.lstsq(space.Psi.toarray(), u - space.corrector, rcond=None)[0]
        assert np.linalg.norm(space.Psi @ w + space.corrector - u) <= 1e-8 * np.linalg.norm(u)

    def test_error_decreases_with_oversampling(self):
        pr, aux, _ = _setup(nx=40, nc=10, style="A", kappa_R=1e4, l=3)
        none = np.zeros(len(pr.contact_nodes), bool)
        u = FineVariant(pr).solve(none)
        errs = []
        for m in (1, 2, 3):
            _, u_ms = assemble_coarse_and_solve(pr, CemBuilder(pr, aux, m).build(none))
            errs.append(relative_errors(u, u_ms, pr.A, pr.M)[1])
        assert errs[0] > errs[1] > errs[2]

    def test_ratio_two_rank_deficiency_reported(self):
        pr = make_problem(40, 20, "A", 1e4, "f1", seed=0)
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 4)
        space = CemBuilder(pr, aux, 4).build(np.ones(len(pr.contact_nodes), bool))
        with pytest.raises(SolverFailure, match="singular"):
            assemble_coarse_and_solve(pr, space)


class TestRefresh:
    def test_no_change_rebuilds_nothing(self):
        pr, _, b = _setup()
        space = b.build(_some_active(pr))
        again = b.refresh(space, _some_active(pr))
        assert again.n_rebuilt == 0 and again.version == 1
        assert np.array_equal(again.K, space.K)

    def test_single_node_touches_six_domains(self):
        pr = make_problem(10, 5, "A", 10, "f1", seed=0)
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 2)
        b = CemBuilder(pr, aux, 1)
        space = b.build()
        active = np.zeros(len(pr.contact_nodes), bool)
        active[np.flatnonzero(pr.contact_nodes == pr.grid.node_index(5, 0))] = True
        new = b.refresh(space, active)
        assert sorted({int(i) for i in new.tags[new.dirty][:, 0]}) == [1, 2, 3, 6, 7, 8]
        assert new.n_rebuilt == 6 * aux.l

    def test_node_on_coarse_line_skips_cut_domains(self):
        pr = make_problem(10, 5, "A", 10, "f1", seed=0)
        aux = build_auxiliary(pr.grid, pr.kappa, pr.weight, 2)
        b = CemBuilder(pr, aux, 1)
        # x = 0.4 is a coarse grid line: a cut node for the domains of columns 0 and 3
        assert sorted(b.affected_elements([pr.grid.node_index(4, 0)]).tolist()) == [1, 2, 6, 7]
        assert sorted(b.affected_elements([pr.grid.node_index(2, 0)]).tolist()) == [0, 1, 5, 6]
        assert b.affected_elements([]).size == 0

    def test_incremental_equals_full(self):
        pr, _, b = _setup()
        first = b.build()
        seq = [_some_active(pr)]
        second = seq[0].copy()
        second[3] = False
        second[10] = True
        seq.append(second)
        space = first
        for active in seq:
            space = b.refresh(space, active)
            full = b.build(active, version=space.version)
            assert abs(space.Psi - full.Psi).max() <= 1e-13
            assert np.abs(space.K - full.K).max() <= 1e-10 * np.abs(full.K).max()
            assert np.allclose(space.corrector, full.corrector, atol=1e-14)

    def test_threads_give_same_space(self):
        pr, aux, b = _setup()
        one = b.build(_some_active(pr))
        many = CemBuilder(pr, aux, b.m, threads=4).build(_some_active(pr))
        assert abs(one.Psi - many.Psi).max() == 0
