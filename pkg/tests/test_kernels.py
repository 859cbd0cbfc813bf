"""Kernel correctness: budget arithmetic, stationary laws against conjugate
and truncated-prior oracles, cache and feasibility invariants, evaluation
accounting, and the iid/Markov equivalence."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

import hierns as hn
from hierns.kernels import FeasibilityError, compute_budget
from hierns.slicing import BlockCovariance
from hierns.util import NEG_INF, stream

from conftest import live_cov_for, prior_states
from helpers import GaussChain, IIDGaussGroups, MarkovTwinGauss, TwoGroupGauss


# --- budgets ------------------------------------------------------------------


def test_budget_examples():
    assert compute_budget(-100.0, -95.0, -10.0) == -15.0
    assert compute_budget(-7.0, -7.0, -3.0) == -3.0  # zero slack: B_k = ell_k
    # cross-check the two equivalent forms
    ell = np.array([-2.0, -3.0, -5.0])
    lstar = -9.0
    b3 = compute_budget(lstar, float(ell.sum()), ell[2])
    assert b3 == pytest.approx(lstar - (ell[0] + ell[1]), abs=1e-12)
    assert b3 == -4.0


@given(
    st.floats(-1e6, 1e6),
    st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=30),
    st.integers(0, 29),
)
def test_budget_identity_property(lstar, ells, k):
    k = k % len(ells)
    S = math.fsum(ells)
    b = compute_budget(lstar, S, ells[k])
    alt = lstar - math.fsum(ells[:k] + ells[k + 1 :])
    assert b == pytest.approx(alt, abs=1e-6 * max(1.0, abs(b)))
    assert b <= ells[k] + 1e-9 * max(1.0, abs(b)) or S < lstar


# --- hyperparameter update ------------------------------------------------------


def test_psi_update_noop_without_hyperparameters():
    model = TwoGroupGauss()
    state = model.sample_prior(stream(1, 0))
    cov = live_cov_for(model)
    out, cnt = hn.psi_update(state, NEG_INF, cov, model, hn.KernelConfig(), stream(1, 1))
    np.testing.assert_array_equal(out.thetas, state.thetas)
    assert out.S == state.S
    assert cnt.psi_constraint == 0 and cnt.group_calls == 0


def test_psi_update_matches_conjugate_posterior():
    model = hn.HierGaussModel(hn.HierGaussConfig(J=6, seed=5))
    cov = live_cov_for(model)
    cfg = hn.KernelConfig(M=1)
    state = model.sample_prior(stream(2, 0))
    rng = stream(2, 1)
    draws = np.empty(30_000)
    cur = state
    for i in range(draws.size):
        cur, _ = hn.psi_update(cur, NEG_INF, cov, model, cfg, rng)
        draws[i] = cur.psi[0]
    s2 = model.cfg.sigma_theta**2
    sp2 = model.cfg.sigma_psi**2
    var = 1.0 / (1.0 / sp2 + model.cfg.J / s2)
    mean = var * (model.cfg.mu0 / sp2 + float(cur.thetas[:, 0].sum()) / s2)
    ks = stats.kstest(draws[200::3], "norm", args=(mean, math.sqrt(var)))
    assert ks.pvalue > 0.01
    cur.check_cache()


def test_psi_update_counts_full_recomputes():
    model = hn.HierGaussModel(hn.HierGaussConfig(J=7, seed=5))
    assert model.force_full_recompute_on_psi and not model.likelihood_depends_on_psi
    cov = live_cov_for(model)
    state = model.sample_prior(stream(3, 0))
    out, cnt = hn.psi_update(state, NEG_INF, cov, model, hn.KernelConfig(), stream(3, 1))
    assert cnt.psi_constraint > 0
    assert cnt.psi_group_calls == 7 * cnt.psi_constraint
    # without forcing, the psi-independent likelihood costs nothing
    model.force_full_recompute_on_psi = False
    out2, cnt2 = hn.psi_update(state, NEG_INF, cov, model, hn.KernelConfig(), stream(3, 2))
    assert cnt2.psi_group_calls == 0
    out2.check_cache()
    model.force_full_recompute_on_psi = True


# --- local sweeps: stationary laws -----------------------------------------------


def _chain_local(model, sweep_fn, lstar, n, seed, cfg=None, cov=None):
    cfg = cfg or hn.KernelConfig()
    cov = cov if cov is not None else live_cov_for(model)
    state = model.sample_prior(stream(seed, 0))
    while not state.S > lstar:
        seed += 1
        state = model.sample_prior(stream(seed, 0))
    rng = stream(seed, 1)
    out = np.empty((n, model.dims.J))
    cur = state
    for i in range(n):
        cur, _ = sweep_fn(cur, lstar, cov, model, cfg, rng)
        out[i] = cur.thetas[:, 0]
    cur.check_cache()
    return out


def test_local_sweep_unconstrained_targets_conditional_prior():
    model = IIDGaussGroups(np.array([0.7, -0.4, 1.9]))
    draws = _chain_local(model, hn.local_sweep, NEG_INF, 30_000, seed=4)
    for j in range(3):
        ks = stats.kstest(draws[200::3, j], "norm")
        assert ks.pvalue > 0.01, f"group {j}: p={ks.pvalue}"


def test_single_group_constrained_is_truncated_prior():
    # J=1: the budget equals lstar, so the sweep slice-samples the prior
    # restricted to log N(y; theta, 1) > lstar, an interval around y
    y = 0.8
    model = IIDGaussGroups(np.array([y]))
    lstar = model.group_loglike(np.array([y + 1.1]), np.empty(0), 0)
    half = 1.1
    draws = _chain_local(model, hn.local_sweep, lstar, 40_000, seed=5)
    lo, hi = y - half, y + half
    ks = stats.kstest(draws[200::3, 0], stats.truncnorm(lo, hi).cdf)
    assert ks.pvalue > 0.01


def test_markov_sweep_unconstrained_marginals_at_T5():
    model = GaussChain(np.zeros(5), beta=0.7, q=0.6, r=0.5)
    draws = _chain_local(model, hn.markov_local_sweep, NEG_INF, 40_000, seed=6)
    sd = math.sqrt(model.v0)
    for t in range(5):
        ks = stats.kstest(draws[500::4, t], "norm", args=(0.0, sd))
        assert ks.pvalue > 0.01, f"site {t}: p={ks.pvalue}"


def test_markov_sweep_constrained_matches_quadrature_marginal():
    # T=2 chain with a joint disc constraint; the theta_0 marginal of the
    # truncated chain prior is computable by 1-d quadrature
    model = GaussChain(np.array([0.6, -0.3]), beta=0.8, q=0.5, r=0.4)
    states = prior_states(model, 4000, seed=71)
    S_prior = np.array([s.S for s in states])
    lstar = float(np.median(S_prior))
    const = -0.5 * (2 * math.log(2 * math.pi) + 4 * math.log(model.r))
    c2 = (const - lstar) * 2.0 * model.r**2
    assert c2 > 0
    y0, y1 = model.y

    def p_theta1_interval(th0):
        w2 = c2 - (th0 - y0) ** 2
        if w2 <= 0:
            return 0.0
        w = math.sqrt(w2)
        mu1 = model.beta * th0
        return stats.norm.cdf((y1 + w - mu1) / model.q) - stats.norm.cdf(
            (y1 - w - mu1) / model.q
        )

    draws = _chain_local(model, hn.markov_local_sweep, lstar, 60_000, seed=7)[1000::4, 0]
    lo, hi = y0 - math.sqrt(c2), y0 + math.sqrt(c2)
    edges = np.linspace(lo, hi, 21)
    probs = np.empty(20)
    sd0 = math.sqrt(model.v0)
    for i in range(20):
        probs[i], _ = integrate.quad(
            lambda t: stats.norm.pdf(t, 0.0, sd0) * p_theta1_interval(t), edges[i], edges[i + 1]
        )
    probs /= probs.sum()
    counts, _ = np.histogram(draws, bins=edges)
    chi = stats.chisquare(counts, probs * counts.sum())
    assert chi.pvalue > 0.01, f"chi2 p={chi.pvalue}"


def test_iid_and_degenerate_markov_sweeps_trace_equal():
    y = np.array([0.5, -1.0, 0.2, 1.4])
    iid = IIDGaussGroups(y)
    twin = MarkovTwinGauss(y)
    cov = BlockCovariance(psi_block=None, local_blocks=np.array([[0.9]]), pooled=True)
    gen = stream(8, 0)
    thetas0 = gen.standard_normal((4, 1))
    ell0 = iid.all_group_loglike(thetas0, np.empty(0))

    def make_state(model):
        return hn.ParamState(
            np.empty(0),
            thetas0.copy(),
            ell0.copy(),
            float(ell0.sum()),
            model.log_local_prior(thetas0, np.empty(0)),
        )

    lstar = float(ell0.sum()) - 3.0
    s_iid = make_state(iid)
    s_twin = make_state(twin)
    cfg = hn.KernelConfig()
    for step in range(50):
        s_iid, _ = hn.local_sweep(s_iid, lstar, cov, iid, cfg, stream(9, step))
        s_twin, _ = hn.markov_local_sweep(s_twin, lstar, cov, twin, cfg, stream(9, step))
    np.testing.assert_array_equal(s_iid.thetas, s_twin.thetas)
    np.testing.assert_array_equal(s_iid.ell, s_twin.ell)


# --- composite kernels ------------------------------------------------------------


# Joint-law checks use a well-conditioned hierarchical Gaussian: with the
# benchmark's sigma_psi >> sigma_theta the psi | theta conditional is ~70x
# narrower than the marginal and any Gibbs-style chain needs O(100) sweeps
# per effective draw, which would starve a KS test. Mixing speed is not what
# these tests certify; the invariant law is.
_FAST_MIX = dict(J=3, sigma_psi=2.0, sigma_theta=10.0, seed=6)


def test_swig_replace_unconstrained_matches_joint_prior():
    model = hn.HierGaussModel(hn.HierGaussConfig(**_FAST_MIX))
    cov = live_cov_for(model)
    cfg = hn.KernelConfig(M=1)
    cur = model.sample_prior(stream(10, 0))
    rng = stream(10, 1)
    n = 30_000
    psis = np.empty(n)
    th0 = np.empty(n)
    for i in range(n):
        cur, _ = hn.swig_replace(cur, NEG_INF, cov, model, cfg, rng)
        psis[i] = cur.psi[0]
        th0[i] = cur.thetas[0, 0]
    ks_psi = stats.kstest(psis[200::3], "norm", args=(0.0, 2.0))
    assert ks_psi.pvalue > 0.01
    sd_th = math.sqrt(2.0**2 + 10.0**2)
    ks_th = stats.kstest(th0[200::3], "norm", args=(0.0, sd_th))
    assert ks_th.pvalue > 0.01


def test_nss_replace_unconstrained_matches_joint_prior():
    model = hn.HierGaussModel(hn.HierGaussConfig(**_FAST_MIX))
    cov = live_cov_for(model)
    cfg = hn.KernelConfig(M=1)
    cur = model.sample_prior(stream(11, 0))
    rng = stream(11, 1)
    n = 30_000
    psis = np.empty(n)
    th0 = np.empty(n)
    for i in range(n):
        cur, _ = hn.nss_replace(cur, NEG_INF, cov, model, cfg, rng)
        psis[i] = cur.psi[0]
        th0[i] = cur.thetas[0, 0]
    assert stats.kstest(psis[200::3], "norm", args=(0.0, 2.0)).pvalue > 0.01
    assert stats.kstest(th0[200::3], "norm", args=(0.0, math.sqrt(104.0))).pvalue > 0.01


def test_nss_1d_constrained_is_truncated_prior():
    y = 0.8
    model = IIDGaussGroups(np.array([y]))
    lstar = model.group_loglike(np.array([y + 1.1]), np.empty(0), 0)
    cov = live_cov_for(model)
    cfg = hn.KernelConfig(M=1)
    cur = model.sample_prior(stream(12, 0))
    while not cur.S > lstar:
        cur = model.sample_prior(stream(12, cur.thetas.size))
    rng = stream(12, 1)
    draws = np.empty(40_000)
    for i in range(draws.size):
        cur, _ = hn.nss_replace(cur, lstar, cov, model, cfg, rng)
        draws[i] = cur.thetas[0, 0]
    ks = stats.kstest(draws[200::3], stats.truncnorm(y - 1.1, y + 1.1).cdf)
    assert ks.pvalue > 0.01


def test_feasibility_and_cache_preserved_under_pressure():
    model = hn.HierGaussModel(hn.HierGaussConfig(J=8, seed=9))
    cov = live_cov_for(model)
    cfg = hn.KernelConfig(M=2)
    states = prior_states(model, 200, seed=13)
    S = np.array([s.S for s in states])
    for q in (0.1, 0.5, 0.9, 0.99):
        lstar = float(np.quantile(S, q))
        parents = [s for s in states if s.S > lstar][:40]
        for i, p in enumerate(parents):
            out, _ = hn.swig_replace(p, lstar, cov, model, cfg, stream(14, i), audit=True)
            assert out.S > lstar
            out.check_cache()


def test_infeasible_parent_rejected():
    model = TwoGroupGauss()
    state = model.sample_prior(stream(15, 0))
    cov = live_cov_for(model)
    with pytest.raises(FeasibilityError):
        hn.swig_replace(state, state.S, cov, model, hn.KernelConfig(), stream(15, 1))


def test_stalls_counted_never_fatal():
    model = IIDGaussGroups(np.array([0.0, 0.0]))
    state = model.sample_prior(stream(16, 0))
    cov = live_cov_for(model)
    # nearly zero slack with a tiny shrink limit forces stalls
    lstar = state.S - 1e-12
    cfg = hn.KernelConfig(M=3, max_shrink=2)
    out, cnt = hn.swig_replace(state, lstar, cov, model, cfg, stream(16, 1))
    assert out.S > lstar
    assert cnt.stalls > 0


def test_group_call_accounting_is_exact():
    model = hn.HierGaussModel(hn.HierGaussConfig(J=12, seed=10))
    cov = live_cov_for(model)
    states = prior_states(model, 64, seed=17)
    lstar = float(np.median([s.S for s in states]))
    parents = [s for s in states if s.S > lstar]
    cfg = hn.KernelConfig(M=2)
    for i, p in enumerate(parents[:20]):
        _, cnt = hn.swig_replace(p, lstar, cov, model, cfg, stream(18, i))
        assert cnt.local_group_calls == cnt.local_constraint
        assert cnt.psi_group_calls == 12 * cnt.psi_constraint
        assert cnt.local_constraint >= cfg.M * 12  # >= one eval per site visit
        _, cnt2 = hn.nss_replace(p, lstar, cov, model, cfg, stream(19, i))
        assert cnt2.nss_group_calls == 12 * cnt2.nss_constraint


def test_local_cost_per_group_independent_of_J():
    # O(1) budget checks: full-likelihood equivalents per replacement do not
    # grow with the number of groups
    eq = {}
    for J in (10, 100):
        model = hn.HierGaussModel(hn.HierGaussConfig(J=J, seed=11))
        cov = live_cov_for(model)
        states = prior_states(model, 80, seed=20)
        lstar = float(np.quantile([s.S for s in states], 0.3))
        parents = [s for s in states if s.S > lstar][:30]
        calls = 0
        for i, p in enumerate(parents):
            _, cnt = hn.swig_replace(p, lstar, cov, model, hn.KernelConfig(), stream(21, i))
            calls += cnt.group_calls
        eq[J] = calls / len(parents) / J
    assert eq[100] < 1.6 * eq[10]


def test_structure_dispatch_errors():
    chain = GaussChain(np.zeros(3))
    iid = TwoGroupGauss()
    cov_c = live_cov_for(chain)
    cov_i = live_cov_for(iid)
    sc = chain.sample_prior(stream(22, 0))
    si = iid.sample_prior(stream(22, 1))
    with pytest.raises(ValueError):
        hn.local_sweep(sc, NEG_INF, cov_c, chain, hn.KernelConfig(), stream(22, 2))
    with pytest.raises(ValueError):
        hn.markov_local_sweep(si, NEG_INF, cov_i, iid, hn.KernelConfig(), stream(22, 3))
