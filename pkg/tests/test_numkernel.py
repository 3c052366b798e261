import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cemcontact.errors import SolverFailure
from cemcontact.numkernel import (
    DEFAULT_TOL,
    _accept,
    SPDFactor,
    generalized_eigs_smallest,
    solve_lowrank_corrected,
    solve_spd,
)


def _random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1, cond, n)) @ Q.T


class TestSolveSpd:
    def test_identity(self, rng):
        b = rng.standard_normal(7)
        x, rep = solve_spd(sp.identity(7, format="csr"), b)
        assert np.allclose(x, b)
        assert rep.residual <= DEFAULT_TOL

    def test_1d_laplacian(self):
        A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(3, 3))
        x, _ = solve_spd(A, np.array([0.0, 1.0, 0.0]))
        assert np.allclose(x, [0.5, 1.0, 0.5])

    def test_zero_rhs(self):
        x, rep = solve_spd(sp.identity(4), np.zeros(4))
        assert np.all(x == 0) and rep.iterations == 0

    def test_against_dense_ldl(self, rng):
        A = _random_spd(rng, 50)
        b = rng.standard_normal(50)
        lu, d, perm = sla.ldl(A)
        y = sla.solve_triangular(lu[perm], b[perm], lower=True, unit_diagonal=True)
        z = y / np.diag(d)
        x_ref = np.empty(50)
        x_ref[perm] = sla.solve_triangular(lu[perm].T, z, lower=False, unit_diagonal=True)
        x, _ = solve_spd(sp.csr_matrix(A), b)
        assert np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref) <= 10 * DEFAULT_TOL * np.linalg.cond(A)

    def test_multiple_rhs(self, rng):
        A = _random_spd(rng, 20)
        B = rng.standard_normal((20, 3))
        X, _ = SPDFactor(sp.csr_matrix(A)).solve(B)
        assert np.allclose(A @ X, B)

    def test_singular_reports_failure(self):
        A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SolverFailure):
            solve_spd(A, np.array([1.0, 0.0]))

    def test_near_singular_still_accurate(self):
        A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1e-30]]))
        x, _ = solve_spd(A, np.array([1.0, 1.0]))
        assert np.allclose(x, [1.0, 1e30])


class TestAcceptance:
    def test_plain_relative_test(self):
        b = np.array([1.0, 0.0])
        assert _accept(np.array([1e-11, 0.0]), b, np.zeros(2), 1e-10)[1]
        assert not _accept(np.array([1e-9, 0.0]), b, np.zeros(2), 1e-10)[1]

    def test_rounding_floor_widens_threshold(self):
        b = np.array([1.0])
        big = np.array([1e8])  # |A||x| dominated by large cancelling terms
        r = np.array([1e-9])
        rel, ok = _accept(r, b, big, 1e-10)
        assert rel == pytest.approx(1e-9) and ok
        assert not _accept(np.array([1e-6]), b, big, 1e-10)[1]

    def test_nan_rejected(self):
        assert not _accept(np.array([np.nan]), np.array([1.0]), np.zeros(1), 1e-10)[1]

    def test_high_contrast_fine_solve(self):
        from cemcontact.assembly import assemble_stiffness
        from cemcontact.grid import build_hierarchy
        from cemcontact.medium import generate_medium

        g = build_hierarchy(80, 20)
        A = assemble_stiffness(g, generate_medium(g, "A", 1e6, seed=0))
        free = np.arange(g.nx_fine + 1, g.n_nodes)
        Af = A[free][:, free]
        b = np.ones(len(free)) * g.h ** 2
        x, rep = solve_spd(Af, b)
        backward = np.linalg.norm(b - Af @ x) / (abs(Af) @ abs(x)).max()
        assert backward < 1e-14
        assert rep.residual < 1e-6


class TestLowRank:
    def test_zero_q(self, rng):
        A = sp.csr_matrix(_random_spd(rng, 10))
        b = rng.standard_normal(10)
        assert np.allclose(solve_lowrank_corrected(A, np.zeros((10, 2)), b), solve_spd(A, b)[0])

    def test_diag_example(self):
        n = 5
        e1 = np.zeros((n, 1))
        e1[0] = 1
        x = solve_lowrank_corrected(sp.identity(n, format="csr"), e1, e1[:, 0])
        assert np.allclose(x, e1[:, 0] / 2)

    def test_random_against_dense(self, rng):
        A = _random_spd(rng, 30)
        Q = rng.standard_normal((30, 3))
        b = rng.standard_normal(30)
        x = solve_lowrank_corrected(sp.csr_matrix(A), Q, b)
        assert np.allclose(x, np.linalg.solve(A + Q @ Q.T, b), rtol=1e-8, atol=1e-12)


class TestEigen:
    def test_zero_pencil(self):
        lam, phi = generalized_eigs_smallest(np.zeros((3, 3)), np.eye(3), 2)
        assert np.allclose(lam, 0)
        assert np.allclose(phi.T @ phi, np.eye(2))

    def test_diagonal(self):
        lam, phi = generalized_eigs_smallest(np.diag([3.0, 1.0, 2.0]), np.eye(3), 2)
        assert np.allclose(lam, [1, 2])
        assert np.allclose(np.abs(phi), [[0, 0], [1, 0], [0, 1]])

    def test_not_positive_definite(self):
        S = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(SolverFailure, match="pivot 1"):
            generalized_eigs_smallest(np.eye(3), S, 1)

    def test_too_many(self):
        with pytest.raises(ValueError):
            generalized_eigs_smallest(np.eye(2), np.eye(2), 3)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 50), seed=st.integers(0, 2 ** 31), frac=st.floats(0.1, 1.0))
def test_eigs_against_full_dense(n, seed, frac):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    A = X @ X.T
    S = _random_spd(rng, n, cond=50)
    l = max(1, int(frac * n))
    lam, phi = generalized_eigs_smallest(A, S, l)
    ref_lam, ref_vec = sla.eigh(A, S)
    assert np.all(np.diff(lam) >= -1e-12)
    assert np.allclose(lam, ref_lam[:l], atol=1e-8 * max(1.0, abs(ref_lam).max()))
    assert np.abs(phi.T @ S @ phi - np.eye(l)).max() <= 1e-8
    resid = np.linalg.norm(A @ phi - S @ phi * lam, axis=0)
    assert np.all(resid <= 1e-8 * np.linalg.norm(A, "fro") * np.linalg.norm(phi, axis=0))
    # subspace check on the clusters fully inside the first l
    gap_ok = l == n or ref_lam[l] - ref_lam[l - 1] > 1e-6 * max(1.0, ref_lam[l])
    if gap_ok:
        angles = sla.subspace_angles(phi, ref_vec[:, :l])
        assert angles.max() <= 1e-6
