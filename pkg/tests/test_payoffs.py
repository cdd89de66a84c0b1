import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcc import payoffs as P
from hcc.errors import DimensionMismatch, InvalidDistribution, UnknownDivergence

from oracles import fd_grad as fd

P4 = np.array([0.1, 0.2, 0.3, 0.4])


def interior_point(payoff, rng):
    """A random point strictly inside the payoff's domain guard."""
    def draw(lo, hi):
        lo = np.where(np.isfinite(lo), lo, -2.0)
        hi = np.where(np.isfinite(hi), hi, lo + 4.0)
        lo_, hi_ = lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo)
        return rng.uniform(lo_, hi_)
    return draw(*payoff.guard_f), draw(*payoff.guard_g)


PAYOFFS = {
    "bilinear": lambda: P.Bilinear(0.3, -0.2),
    "matrix": lambda: P.MatrixBilinear(P.RPS_MATRIX),
    "vanilla_gan": lambda: P.VanillaGan(P4),
    "wgan": lambda: P.WganGaussian(1.0),
    "wgan_unreg": lambda: P.WganGaussian(2.0, regularized=False),
    "fgan_KL": lambda: P.FGan(P4, "KL"),
    "fgan_reverseKL": lambda: P.FGan(P4, "reverseKL"),
    "fgan_JS": lambda: P.FGan(P4, "JS"),
    "fgan_Pearson": lambda: P.FGan(P4, "Pearson"),
    "regularized_rps": lambda: P.regularize(P.MatrixBilinear(P.RPS_MATRIX), 0.5,
                                            np.full(3, 1 / 3), np.full(3, 1 / 3)),
}


@pytest.mark.parametrize("name", sorted(PAYOFFS))
def test_payoff_gradients_match_finite_differences(name, rng):
    pay = PAYOFFS[name]()
    for _ in range(100):
        F, G = interior_point(pay, rng)
        gf, gg = pay.grad_f(F, G), pay.grad_g(F, G)
        nf = fd(lambda x: pay.value(x, G), F)
        ng = fd(lambda y: pay.value(F, y), G)
        for a, b in ((gf, nf), (gg, ng)):
            scale = max(np.abs(a).max(), 1e-3)
            assert np.abs(a - b).max() / scale <= 1e-5


@pytest.mark.parametrize("name", sorted(PAYOFFS))
def test_convex_concave_spot_check(name, rng):
    pay = PAYOFFS[name]()
    for _ in range(50):
        F1, G = interior_point(pay, rng)
        F2, _ = interior_point(pay, rng)
        _, G2 = interior_point(pay, rng)
        # midpoint convexity in F, midpoint concavity in G
        assert pay.value((F1 + F2) / 2, G) <= (pay.value(F1, G) + pay.value(F2, G)) / 2 + 1e-10
        assert pay.value(F1, (G + G2) / 2) >= (pay.value(F1, G) + pay.value(F1, G2)) / 2 - 1e-10


def test_bilinear_value_and_example():
    pay = P.Bilinear(0.5, 0.5)
    assert pay.value([0.7], [0.2]) == pytest.approx((0.7 - 0.5) * (0.2 - 0.5))
    assert pay.convexity is P.Convexity.BILINEAR


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        P.MatrixBilinear(P.RPS_MATRIX).value([0.1, 0.2], [0.3, 0.3, 0.4])


def test_distribution_checks():
    with pytest.raises(InvalidDistribution):
        P.VanillaGan([0.5, 0.6])
    with pytest.raises(InvalidDistribution):
        P.VanillaGan([1.2, -0.2])


def test_vanilla_gan_equilibrium_is_stationary():
    pay = P.VanillaGan(P4)
    F, G = pay.equilibrium()
    assert G[-1] == pytest.approx(math.log(2.0), abs=1e-15)
    assert np.abs(pay.grad_f(F, G)).max() <= 1e-15
    assert np.abs(pay.grad_g(F, G)).max() <= 1e-15


def test_vanilla_gan_domain_guard():
    pay = P.VanillaGan(P4)
    assert pay.in_domain(np.full(4, 0.25), np.r_[np.full(4, 0.5), 3.0])
    assert not pay.in_domain(np.full(4, 0.25), np.r_[0.0, np.full(3, 0.5), 3.0])


@pytest.mark.parametrize("name", sorted(P.FDIVS))
def test_fenchel_identity(name):
    div = P.FDIVS[name]
    assert float(div.f(1.0)) == pytest.approx(0.0, abs=1e-15)
    # f*(f'(u)) = u f'(u) - f(u), and (f*)' inverts f'
    for u in np.linspace(0.1, 5.0, 50):
        t = float(div.fprime(u))
        assert float(div.fconj(t)) == pytest.approx(u * t - float(div.f(u)), abs=1e-12)
        assert float(div.fconj_prime(t)) == pytest.approx(u, rel=1e-12)


def test_divergence_aliases():
    assert P.get_fdiv("jensen-shannon") is P.FDIVS["JS"]
    assert P.get_fdiv("reverse_kl") is P.FDIVS["reverseKL"]
    with pytest.raises(UnknownDivergence):
        P.get_fdiv("hellinger2")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_regularize_adds_quadratics(lam, f, g, cf, cg):
    base = P.Bilinear(0.1, -0.3)
    reg = P.regularize(base, lam, [cf], [cg])
    expect = base.value([f], [g]) + lam / 2 * (f - cf) ** 2 - lam / 2 * (g - cg) ** 2
    assert reg.value([f], [g]) == pytest.approx(expect, abs=1e-12)


def test_regularize_zero_is_identity(rng):
    base = P.MatrixBilinear(P.RPS_MATRIX)
    reg = P.regularize(base, 0.0)
    for _ in range(20):
        F, G = rng.normal(size=3), rng.normal(size=3)
        assert reg.value(F, G) == base.value(F, G)
    assert reg.convexity is P.Convexity.BILINEAR


def test_regularize_changes_convexity_class():
    reg = P.regularize(P.Bilinear(0, 0), 0.2)
    assert reg.convexity is P.Convexity.STRICTLY_CONVEX_CONCAVE
    with pytest.raises(ValueError):
        P.regularize(P.Bilinear(0, 0), -1.0)


def test_wgan_built_in_term_equals_one_sided_regularization(rng):
    plain = P.WganGaussian(1.0, regularized=False)
    built = P.WganGaussian(1.0, regularized=True)
    one_sided = P.regularize(plain, 1.0, sides="g")
    for _ in range(50):
        u, v = rng.normal(size=2)
        assert built.value([u], [v]) == pytest.approx(one_sided.value([u], [v]), abs=1e-14)
        assert built.grad_g([u], [v]) == pytest.approx(one_sided.grad_g([u], [v]), abs=1e-14)


def test_config_form_round_trip():
    for name, make in PAYOFFS.items():
        pay = make()
        again = P.payoff_from_spec(pay.to_spec())
        x = interior_point(pay, np.random.default_rng(1))
        assert again.value(*x) == pytest.approx(pay.value(*x), abs=1e-14), name


def test_named_matrix_in_config_form():
    pay = P.payoff_from_spec({"name": "matrix_bilinear", "A": "rps"})
    assert np.array_equal(pay.A, P.RPS_MATRIX)
