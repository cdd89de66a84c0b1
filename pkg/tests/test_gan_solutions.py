import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcc import gan_solutions as S
from hcc.errors import (DomainError, EmptyFeasibleSet, InvalidMetric, ZeroDenominator)
from hcc.payoffs import FDIVS

from oracles import brute_force_emd, random_metric, simplex_grid, transport_bases

LOG4 = math.log(4.0)


# -- vanilla GAN --------------------------------------------------------------

def test_gan_opt_discriminator_examples():
    D = S.gan_opt_discriminator([0.5, 0.5], [0.25, 0.75])
    assert D[0] == pytest.approx(2 / 3, abs=1e-15)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.all(S.gan_opt_discriminator(p, p) == 0.5)
    with pytest.raises(ZeroDenominator):
        S.gan_opt_discriminator([1.0, 0.0], [1.0, 0.0])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_gan_best_response_certificate(n):
    rng = np.random.default_rng(100 + n)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    D = S.gan_opt_discriminator(p, q)
    best = S.gan_value(p, q, D)
    others = rng.uniform(1e-6, 1 - 1e-6, size=(1000, n))
    assert all(S.gan_value(p, q, d) <= best + 1e-12 for d in others)


def test_gan_value_and_jsd():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    V, J = S.gan_value_and_jsd(p, p)
    assert V == pytest.approx(-LOG4, abs=1e-15) and J == pytest.approx(0.0, abs=1e-15)
    p, q = np.array([0.9, 0.1]), np.array([0.1, 0.9])
    V, J = S.gan_value_and_jsd(p, q)
    m = (p + q) / 2
    direct = 0.5 * sum(p * np.log(p / m)) + 0.5 * sum(q * np.log(q / m))
    assert J == pytest.approx(direct, abs=1e-14)
    assert V == pytest.approx(-LOG4 + 2 * direct, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
       st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_jsd_symmetric_and_nonnegative(a, b):
    p = np.array(a) / sum(a)
    q = np.array(b) / sum(b)
    assert abs(S.jsd(p, q) - S.jsd(q, p)) <= 1e-12
    assert S.jsd(p, q) >= -1e-15
    assert S.jsd(p, p) <= 1e-15


# -- f-GAN --------------------------------------------------------------------

def test_fgan_opt_discriminator_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert np.allclose(S.fgan_opt_discriminator(p, p, "KL"), 1.0, atol=1e-15)
    D = S.fgan_opt_discriminator([0.8, 0.2], [0.4, 0.6], "Pearson")
    assert D[0] == pytest.approx(2.0, abs=1e-14)
    with pytest.raises(DomainError):
        S.fgan_opt_discriminator([0.5, 0.5], [1.0, 0.0], "KL")


@pytest.mark.parametrize("name", sorted(FDIVS))
def test_fgan_best_response_matches_grid_search(name):
    fd = FDIVS[name]
    rng = np.random.default_rng(7)
    p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    D = S.fgan_opt_discriminator(p, q, name)
    grid = np.linspace(float(fd.fprime(0.01)), float(fd.fprime(100.0)), 10_000)
    for x in range(3):
        vals = p[x] * grid - q[x] * fd.fconj(grid)
        closed = p[x] * D[x] - q[x] * float(fd.fconj(D[x]))
        assert closed >= vals.max() - 1e-12
        assert abs(grid[np.argmax(vals)] - D[x]) <= 2 * (grid[1] - grid[0])


@pytest.mark.parametrize("name", sorted(FDIVS))
def test_fgan_value_equals_fdivergence(name):
    rng = np.random.default_rng(3)
    for _ in range(10):
        p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        V, Df = S.fgan_value_and_fdiv(p, q, name)
        assert Df >= 0.0
    p = rng.dirichlet(np.ones(4))
    V, Df = S.fgan_value_and_fdiv(p, p, name)
    assert abs(V) <= 1e-12 and abs(Df) <= 1e-12


def test_pearson_direct_sum():
    V, Df = S.fgan_value_and_fdiv([0.6, 0.4], [0.5, 0.5], "Pearson")
    assert Df == pytest.approx(0.04, abs=1e-15)


def test_js_member_matches_gan_value():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        V_gan, J = S.gan_value_and_jsd(p, q)
        _, Df = S.fgan_value_and_fdiv(p, q, "JS")
        assert Df == pytest.approx(2 * J, abs=1e-12)
        assert V_gan == pytest.approx(-LOG4 + Df, abs=1e-12)


# -- EMD ----------------------------------------------------------------------

def test_brute_force_oracle_basis_count():
    # K_{4,4} has 4^3 * 4^3 spanning trees
    assert len(transport_bases(4, 4)) == 4096


def test_emd_examples():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    cost, D = S.wgan_emd([1.0, 0.0], [0.0, 1.0], C)
    assert cost == pytest.approx(1.0, abs=1e-15)
    assert S.emd_dual_value([1.0, 0.0], [0.0, 1.0], D) == pytest.approx(1.0, abs=1e-15)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    cost, D = S.wgan_emd(p, p, random_metric(np.random.default_rng(0), 4))
    assert cost == pytest.approx(0.0, abs=1e-15)


def test_emd_random_instances_against_vertex_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        a, b = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        C = random_metric(rng, 4)
        cost, D = S.wgan_emd(a, b, C)
        dual = S.emd_dual_value(a, b, D)
        assert abs(cost - dual) <= 1e-12
        assert abs(cost - brute_force_emd(a, b, C)) <= 1e-6
        # potential is 1-Lipschitz for the metric
        assert np.all(np.abs(D[:, None] - D[None, :]) <= C + 1e-12)


def test_transport_plan_is_feasible():
    rng = np.random.default_rng(9)
    a, b = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(7))
    C = rng.uniform(0, 1, size=(5, 7))
    X, cost, u, v = S.solve_transport(a, b, C)
    assert np.all(X >= -1e-15)
    assert np.allclose(X.sum(1), a, atol=1e-14) and np.allclose(X.sum(0), b, atol=1e-14)
    assert cost == pytest.approx(float((X * C).sum()), abs=1e-14)
    assert np.all(u[:, None] + v[None, :] <= C + 1e-12)


def test_invalid_metric():
    with pytest.raises(InvalidMetric):
        S.wgan_emd([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [2.0, 0.0]])
    bad = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    with pytest.raises(InvalidMetric):
        S.check_metric(bad)


# -- max-min and inner minimization -------------------------------------------

def test_maxmin_constants():
    gan = S.maxmin_discriminator("GAN")
    assert gan.constant == 0.5 and gan.value == pytest.approx(-LOG4, abs=1e-15)
    assert S.maxmin_discriminator("WGAN").value == 0.0
    for name, fd in FDIVS.items():
        d = S.maxmin_discriminator("fGAN", name)
        assert d.constant == pytest.approx(float(fd.fprime(1.0)), abs=1e-15)
        assert d.value == pytest.approx(0.0, abs=1e-12)
        assert d.value_numeric == pytest.approx(d.value, abs=1e-9)
        assert d.constant_numeric == pytest.approx(d.constant, abs=1e-5)


def test_inner_min_support_sets():
    S_, _ = S.inner_min_generator([0.9, 0.5, 0.5], "GAN")
    assert S_ == [0]
    S_, _ = S.inner_min_generator([0.2, 0.9, 0.9 - 1e-12], "WGAN")
    assert S_ == [1, 2]
    S_, _ = S.inner_min_generator(np.full(4, 0.3), "GAN")
    assert S_ == [0, 1, 2, 3]
    S_, _ = S.inner_min_generator([-1.0, 2.0, 0.5], "fGAN", f_div="Pearson")
    assert S_ == [1]


@pytest.mark.parametrize("kind,f_div", [("GAN", None), ("WGAN", None), ("fGAN", "KL"),
                                        ("fGAN", "JS")])
def test_inner_min_matches_simplex_grid(kind, f_div):
    rng = np.random.default_rng(17)
    p = rng.dirichlet(np.ones(3))
    grid = simplex_grid(3, 140)
    assert len(grid) >= 10_000
    inst = S.DiscreteGanInstance(p, kind, metric=random_metric(rng, 3) if kind == "WGAN" else None,
                                 f_div=f_div)
    for _ in range(10):
        if kind == "GAN":
            D = rng.uniform(0.05, 0.95, size=3)
        elif kind == "fGAN":
            D = np.asarray(FDIVS[f_div].fprime(rng.uniform(0.2, 5.0, size=3)))
        else:
            D = rng.normal(size=3)
        _, value = S.inner_min_generator(D, kind, p, f_div)
        brute = min(S.game_value(inst, g, D) for g in grid)
        assert abs(value - brute) <= 1e-6


@pytest.mark.parametrize("n", [2, 3, 4])
def test_maxmin_certificate(n):
    rng = np.random.default_rng(40 + n)
    p = rng.dirichlet(np.ones(n))
    const = S.inner_min_generator(np.full(n, 0.5), "GAN", p)[1]
    assert const == pytest.approx(-LOG4, abs=1e-12)
    Ds = rng.uniform(0.01, 0.99, size=(100, n))
    assert all(S.inner_min_generator(D, "GAN", p)[1] <= const + 1e-12 for D in Ds)
    gens = rng.dirichlet(np.ones(n), size=1000)
    # the exact inner min lower-bounds every sampled generator
    for D in Ds[:10]:
        _, v = S.inner_min_generator(D, "GAN", p)
        assert min(S.gan_value(p, g, D) for g in gens) >= v - 1e-12


def test_minimax_grid_consistency():
    p = np.array([0.6, 0.4])
    G = simplex_grid(2, 50)
    dg = np.linspace(0.01, 0.99, 99)
    Dg = np.array(list(itertools.product(dg, dg)))
    V = (p @ np.log(Dg).T)[None, :] + G @ np.log1p(-Dg).T
    minmax = V.max(axis=1).min()
    maxmin = V.min(axis=0).max()
    assert maxmin <= minmax + 1e-12
    assert minmax - maxmin <= 2 * 0.02


# -- constrained generators -----------------------------------------------------

CONSTRAINED = S.DiscreteGanInstance(np.array([0.6, 0.4]), "GAN",
                                    constraints=(([1.0, 0.0], 0.3),), seed=0)


def test_project_simplex():
    y = np.array([0.5, 1.2, -0.3])
    x = S.project_simplex(y)
    assert x.sum() == pytest.approx(1.0) and np.all(x >= 0)
    grid = simplex_grid(3, 200)
    assert np.linalg.norm(x - y) <= np.linalg.norm(grid - y, axis=1).min() + 1e-12


def test_constrained_gan_matches_grid_oracle():
    sol = S.nonrealizable_solve(CONSTRAINED)
    g0 = np.linspace(0.0, 0.3, 3001)
    js = [S.jsd(CONSTRAINED.p_data, [x, 1 - x]) for x in g0]
    oracle = g0[int(np.argmin(js))]
    assert abs(sol.G_star[0] - oracle) <= 1e-4
    assert np.allclose(sol.D_star, [2 / 3, 0.4 / 1.1], atol=1e-6)
    assert sol.certificates["passed"]
    assert sol.certificates["max_primal_violation"] <= 1e-4
    assert sol.certificates["max_dual_violation"] <= 1e-4


def test_realizable_instance_recovers_data():
    inst = S.DiscreteGanInstance(np.array([0.2, 0.3, 0.5]), "GAN")
    assert inst.realizable
    sol = S.nonrealizable_solve(inst)
    assert np.allclose(sol.G_star, inst.p_data, atol=1e-12)
    assert np.allclose(sol.D_star, 0.5, atol=1e-12)


def test_constrained_fgan_certificates():
    inst = S.DiscreteGanInstance(np.array([0.5, 0.3, 0.2]), "fGAN",
                                 constraints=(([0.0, 0.0, 1.0], 0.1), ([1.0, 0.0, 0.0], 0.45)),
                                 f_div="Pearson", seed=1)
    assert not inst.realizable
    sol = S.nonrealizable_solve(inst)
    assert inst.feasible(sol.G_star)
    assert sol.certificates["passed"]


def test_wgan_nonrealizable_reports_potentials():
    C = np.abs(np.subtract.outer(np.arange(3.0), np.arange(3.0)))
    inst = S.DiscreteGanInstance(np.array([0.5, 0.3, 0.2]), "WGAN", metric=C,
                                 constraints=(([0.0, 0.0, 1.0], 0.05),))
    sol = S.nonrealizable_solve(inst)
    assert sol.D_star is None and sol.potentials is not None
    assert sol.G_star[2] <= 0.05 + 1e-9
    # the cheapest move takes 0.15 of mass one step to the left
    assert sol.value == pytest.approx(0.15, abs=1e-6)
    assert sol.certificates["max_primal_violation"] <= 1e-4


def test_empty_feasible_set():
    inst = S.DiscreteGanInstance(np.array([0.5, 0.5]), "GAN",
                                 constraints=(([1.0, 0.0], 0.2), ([0.0, 1.0], 0.2)))
    with pytest.raises(EmptyFeasibleSet):
        S.nonrealizable_solve(inst)


def test_instance_from_dict_round_trip():
    inst = S.DiscreteGanInstance.from_dict(
        {"kind": "GAN", "p_data": [0.6, 0.4], "constraints": [{"a": [1, 0], "b": 0.3}]})
    assert inst.constraints[0][1] == 0.3
    assert not inst.realizable
