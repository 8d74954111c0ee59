"""Distributional oracles for the exact coordinate sampler.

Every law the sampler produces is checked against an independent closed
form: scipy's inverse-Gaussian and Levy families for the hitting time,
the classical reflected-Brownian transition function, and moment
identities for the bridge meander.  The tolerance levels are sized for
the sample counts used here; none of these are tuned to the
implementation.
"""

import numpy as np
import pytest
import scipy.stats as stats
from scipy.integrate import quad
from scipy.special import ndtr

import driftmlp.exact as exact
from driftmlp import (
    InvalidArgumentError,
    RngStream,
    UnsupportedCombinationError,
    assemble_tuple,
    normalizing_constant,
    sample_coordinate_triple,
    sample_hitting_time,
    sample_meander_at,
    sample_random_time,
    sample_rbm_marginal_from_zero,
)


def _gen(*key):
    return RngStream(2024, key).generator()


# ---------------------------------------------------------------- timing law


def test_normalizing_constant_zero_discount():
    assert np.isclose(normalizing_constant(0.0, 0.25), 1.0)
    assert np.isclose(normalizing_constant(0.0, 1.0), 2.0)


def test_normalizing_constant_matches_quadrature():
    for beta, delta in [(0.5, 0.2), (2.0, 1.3), (7.0, 0.05)]:
        want, err = quad(lambda s: np.exp(-beta * s) / np.sqrt(s), 0.0, delta)
        assert err < 1e-8
        assert np.isclose(normalizing_constant(beta, delta), want, rtol=1e-7)


def test_normalizing_constant_rejects_bad_window():
    with pytest.raises(InvalidArgumentError):
        normalizing_constant(0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        normalizing_constant(-1.0, 0.5)


def test_random_time_zero_discount_formula():
    u = np.linspace(0.0, 1.0, 11)
    s = exact.random_time_from_uniform(u, 0.1, 0.3, 0.0)
    np.testing.assert_allclose(s, 0.1 + 0.2 * u**2, rtol=1e-12)


def test_random_time_positive_discount_law():
    # density proportional to exp(-beta w)/sqrt(w) on (0, delta); the cdf
    # is erf(sqrt(beta w)) / erf(sqrt(beta delta))
    beta, t, horizon = 3.0, 0.0, 1.5
    gen = _gen(1)
    s = exact.random_time_from_uniform(gen.random(40_000), t, horizon, beta)
    assert np.all((s > t) & (s <= horizon))
    from scipy.special import erf

    def cdf(w):
        return erf(np.sqrt(beta * w)) / erf(np.sqrt(beta * (horizon - t)))

    d = stats.kstest(s - t, cdf).statistic
    assert d <= 0.012


def test_sample_random_time_scalar(chain2):
    st = RngStream(2024, (2,))
    s = sample_random_time(st, 0.05, chain2.horizon, 0.0)
    assert 0.05 < s <= chain2.horizon
    # same stream, same draw
    assert sample_random_time(st, 0.05, chain2.horizon, 0.0) == s
    with pytest.raises(InvalidArgumentError):
        sample_random_time(st, 0.2, 0.2, 0.0)


# ------------------------------------------------------------- hitting time


def test_hitting_time_is_inverse_gaussian():
    # start 1, drift -1, unit volatility: hitting law IG(mean 1, shape 1)
    gen = _gen(3)
    n = 100_000
    tau, _, _ = exact.draw_triples(
        gen, np.ones((n, 1)), np.full(n, 50.0), np.array([-1.0]), np.array([1.0])
    )
    hit = tau[:, 0][tau[:, 0] < 50.0]
    assert len(hit) == n  # at this depth every path has hit
    d = stats.kstest(hit, stats.invgauss(mu=1.0, scale=1.0).cdf).statistic
    assert d <= 0.01


def test_hitting_time_general_parameters():
    # start x, drift g, vol s: IG with mean x/|g| and shape (x/s)^2
    x, gam, sig = 0.7, -2.0, 1.3
    lam = (x / sig) ** 2
    mu = (x / abs(gam)) / lam
    gen = _gen(4)
    n = 100_000
    tau, _, _ = exact.draw_triples(
        gen, np.full((n, 1), x), np.full(n, 80.0), np.array([gam]), np.array([sig])
    )
    d = stats.kstest(tau[:, 0], stats.invgauss(mu=mu, scale=lam).cdf).statistic
    assert d <= 0.01


def test_hitting_time_driftless_is_levy():
    x, sig = 1.0, 0.8
    gen = _gen(5)
    n = 60_000
    tau, _, _ = exact.draw_triples(
        gen, np.full((n, 1), x), np.full(n, 1e12), np.array([0.0]), np.array([sig])
    )
    d = stats.kstest(tau[:, 0], stats.levy(scale=(x / sig) ** 2).cdf).statistic
    assert d <= 0.012


def test_scalar_hitting_time_validation():
    st = RngStream(2024, (6,))
    assert sample_hitting_time(st, 1.0, -1.0, 1.0) > 0.0
    with pytest.raises(InvalidArgumentError):
        sample_hitting_time(st, 0.0, -1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        sample_hitting_time(st, 1.0, 0.5, 1.0)
    with pytest.raises(InvalidArgumentError):
        sample_hitting_time(st, 1.0, -1.0, 0.0)


# ----------------------------------------------------- reflected marginal


def _reflected_cdf(z, t, x, gamma, sigma):
    """Transition function of reflected drifted Brownian motion at zero."""
    s = sigma * np.sqrt(t)
    return ndtr((z - x - gamma * t) / s) - np.exp(
        2.0 * gamma * z / sigma**2
    ) * ndtr((-z - x - gamma * t) / s)


def test_rbm_from_zero_matches_transition_function():
    t, gam, sig = 0.5, -1.0, 1.0
    gen = _gen(7)
    n = 100_000
    z = exact._rbm_zero_from_draws(
        gen.standard_normal(n), gen.random(n), t, gam, sig
    )
    assert np.all(z >= 0.0)
    d = stats.kstest(z, lambda w: _reflected_cdf(w, t, 0.0, gam, sig)).statistic
    assert d <= 0.01


def test_rbm_driftless_mean():
    # with no drift the reflected marginal is a folded normal
    t, sig = 0.7, 1.4
    gen = _gen(8)
    n = 400_000
    z = exact._rbm_zero_from_draws(gen.standard_normal(n), gen.random(n), t, 0.0, sig)
    want = sig * np.sqrt(2.0 * t / np.pi)
    assert abs(z.mean() / want - 1.0) < 0.005


def test_scalar_rbm_wrapper():
    root = RngStream(2024, (9,))
    vals = np.array(
        [sample_rbm_marginal_from_zero(root.child(i), 0.3, -1.0, 1.0) for i in range(200)]
    )
    assert np.all(vals >= 0.0)
    assert len(np.unique(vals)) == 200
    with pytest.raises(InvalidArgumentError):
        sample_rbm_marginal_from_zero(root, 0.0, -1.0, 1.0)


# ---------------------------------------------------------------- meander


def test_meander_second_moment_identity():
    # bridge-conditioned construction with x=1, sigma=1, tau=1, s=1/2 has
    # E z^2 = a^2 + 3 v = 1 with a = x/2 and v = 1/4
    gen = _gen(10)
    n = 400_000
    z = exact._meander_from_draws(
        gen.standard_normal(n), gen.random(n), 0.5, 1.0, 1.0, 1.0
    )
    assert np.all(z > 0.0)
    assert abs(np.mean(z**2) - 1.0) < 0.01


def test_meander_general_moment():
    s, tau, x, sig = 0.3, 0.8, 0.6, 1.3
    a = x * (tau - s) / tau
    v = sig**2 * s * (tau - s) / tau
    gen = _gen(11)
    n = 300_000
    z = exact._meander_from_draws(gen.standard_normal(n), gen.random(n), s, tau, x, sig)
    want = a**2 + 3.0 * v
    assert abs(np.mean(z**2) / want - 1.0) < 0.01


def test_meander_scalar_validation():
    st = RngStream(2024, (12,))
    assert sample_meander_at(st, 0.5, 1.0, 1.0, 1.0) > 0.0
    with pytest.raises(InvalidArgumentError):
        sample_meander_at(st, 1.0, 1.0, 1.0, 1.0)  # s must be interior
    with pytest.raises(InvalidArgumentError):
        sample_meander_at(st, 0.5, 1.0, 0.0, 1.0)  # start on the boundary


# ------------------------------------------------------- composite kernel


def test_triple_composition_against_transition_function():
    # the hit/no-hit composition must reproduce the reflected marginal law
    # at a fixed time, started away from the boundary
    x, dt, gam, sig = 0.8, 0.5, -1.0, 1.0
    gen = _gen(13)
    n = 100_000
    tau, z, _ = exact.draw_triples(
        gen, np.full((n, 1), x), np.full(n, dt), np.array([gam]), np.array([sig])
    )
    frac_hit = np.mean(tau[:, 0] < dt)
    assert 0.2 < frac_hit < 0.9
    d = stats.kstest(z[:, 0], lambda w: _reflected_cdf(w, dt, x, gam, sig)).statistic
    assert d <= 0.01


def test_triple_bridge_endpoint_identities():
    x, dt, gam, sig = 0.6, 0.4, -1.5, 0.9
    gen = _gen(14)
    n = 50_000
    tau, z, bw = exact.draw_triples(
        gen, np.full((n, 1), x), np.full(n, dt), np.array([gam]), np.array([sig])
    )
    tau, z, bw = tau[:, 0], z[:, 0], bw[:, 0]
    hit = tau < dt
    # a path that hits has its free endpoint pinned at the hitting time
    np.testing.assert_allclose(bw[hit], -(x + gam * tau[hit]) / sig, rtol=1e-10)
    # a path that does not hit keeps the free-path identity at dt
    np.testing.assert_allclose(
        bw[~hit], (z[~hit] - x - gam * dt) / sig, rtol=1e-9, atol=1e-12
    )


def test_triple_zero_start_column():
    gen = _gen(15)
    n = 20_000
    x = np.zeros((n, 2))
    x[:, 1] = 1.0
    tau, z, bw = exact.draw_triples(
        gen, x, np.full(n, 0.3), np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    )
    np.testing.assert_array_equal(tau[:, 0], 0.0)
    np.testing.assert_array_equal(bw[:, 0], 0.0)
    assert np.all(z[:, 0] >= 0.0)
    # the restarted coordinate still follows the reflected transition law
    d = stats.kstest(
        z[:, 0], lambda w: _reflected_cdf(w, 0.3, 0.0, -1.0, 1.0)
    ).statistic
    assert d <= 0.012


def test_draw_triples_validation():
    gen = _gen(16)
    ok = dict(
        x=np.ones((10, 1)), dts=np.full(10, 0.1), gamma=np.array([-1.0]), sigma=np.array([1.0])
    )
    exact.draw_triples(gen, **ok)
    with pytest.raises(InvalidArgumentError):
        exact.draw_triples(gen, **{**ok, "gamma": np.array([0.5])})
    with pytest.raises(InvalidArgumentError):
        exact.draw_triples(gen, **{**ok, "sigma": np.array([0.0])})
    with pytest.raises(InvalidArgumentError):
        exact.draw_triples(gen, **{**ok, "x": -np.ones((10, 1))})
    with pytest.raises(InvalidArgumentError):
        exact.draw_triples(gen, **{**ok, "dts": np.zeros(10)})


def test_kernel_twins_agree(monkeypatch):
    if exact.kernel_backend() != "numba":
        pytest.skip("compiled kernel unavailable, nothing to compare")
    gen = _gen(17)
    m, d = 40_000, 3
    x = np.abs(gen.normal(1.0, 0.8, (m, d)))
    x[::7] = 0.0
    dts = np.full(m, 0.13)
    gamma = np.array([-1.0, -0.5, 0.0])
    sigma = np.array([1.0, 0.7, 1.3])
    blocks = (
        gen.standard_normal((m, d)),
        gen.random((m, d)),
        gen.standard_normal((m, d)),
        gen.random((m, d)),
    )
    got_jit = exact.triple_batch(x, dts, gamma, sigma, *blocks)
    monkeypatch.setattr(exact, "_USE_NUMBA", False)
    assert exact.kernel_backend() == "numpy"
    got_py = exact.triple_batch(x, dts, gamma, sigma, *blocks)
    for a, b in zip(got_jit, got_py):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


# ------------------------------------------------------------ tuple layer


def test_coordinate_triple_absolute_clock():
    stream = RngStream(5, (0,))
    trip = sample_coordinate_triple(stream, 0.05, 0.12, 0.4, -1.0, 1.0)
    assert trip.tau >= 0.05
    assert trip.z_at_s >= 0.0
    zero = sample_coordinate_triple(stream.child(1), 0.05, 0.12, 0.0, -1.0, 1.0)
    assert zero.tau == 0.05
    assert zero.b_at_tau_min_s == 0.0
    assert zero.z_at_s >= 0.0
    with pytest.raises(InvalidArgumentError):
        sample_coordinate_triple(stream, 0.12, 0.05, 0.4, -1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        sample_coordinate_triple(stream, 0.0, 0.1, -0.2, -1.0, 1.0)


def test_assemble_tuple_reproduces_manual_draw(chain2, exact_ref):
    stream = RngStream(6, (0,))
    x = np.array([0.4, 0.4])
    tup = assemble_tuple(stream, chain2, exact_ref, 0.0, x)
    assert 0.0 < tup.s <= chain2.horizon
    assert tup.z_at_s.shape == (2,)
    assert tup.pushing_discounted == 0.0
    assert tup.z_at_T is None and tup.weight_at_T is None

    # replay the documented draw order on the same stream: one uniform for
    # the evaluation time, then the coordinate blocks
    gen = stream.generator()
    s = float(exact.random_time_from_uniform(gen.random(), 0.0, chain2.horizon, 0.0))
    assert s == tup.s
    _, z, bw = exact.draw_triples(
        gen, x[None, :], np.array([s]), chain2.drift_base, chain2.sigma_diag
    )
    np.testing.assert_array_equal(tup.z_at_s, z[0])
    np.testing.assert_array_equal(
        tup.weight_at_s, bw[0] / (chain2.sigma_diag * np.sqrt(s))
    )


def test_assemble_tuple_unsupported_cases(chain2, exact_ref, euler_ref):
    import driftmlp as dm

    stream = RngStream(7, (0,))
    with pytest.raises(UnsupportedCombinationError):
        assemble_tuple(stream, chain2, euler_ref, 0.0, np.zeros(2))
    with_push = dm.ProblemSpec.from_dict(
        {**chain2.to_dict(), "pushing_penalty": [0.5, 0.0]}
    )
    with pytest.raises(UnsupportedCombinationError):
        assemble_tuple(stream, with_push, exact_ref, 0.0, np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        assemble_tuple(stream, chain2, exact_ref, 0.0, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        assemble_tuple(stream, chain2, exact_ref, chain2.horizon, np.zeros(2))
