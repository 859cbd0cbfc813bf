"""Constrained replacement kernels over the likelihood-thresholded prior.

Three kernels map a feasible particle (total log-likelihood S > lstar) to a
new feasible particle:

  * `swig_replace`: alternating hyperparameter slice updates and a sequential
    sweep of per-group slice updates. Each local move checks the global
    constraint through a per-group budget computed in O(1) from the cached
    total, so one sweep costs O(J) group-likelihood calls.
  * the Markov variant of the sweep, for chain-structured local blocks, where
    each site's conditional prior involves at most two transition densities;
    budgets work unchanged because the likelihood stays site-local.
  * `nss_replace`: the joint-space baseline. Every constraint check evaluates
    all J group likelihoods, which is what the budget decomposition removes.

Kernels are pure given (parent, lstar, covariance snapshot, rng stream) and
report work via `KernelCounters`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, ParamState, Structure
from .slicing import BlockCovariance, _slice_1d, draw_direction
from .util import NEG_INF, BufferedRNG


@dataclass
class KernelConfig:
    """Sweep counts and slice limits.

    M is the number of Gibbs sweeps per replacement; m_psi / m_theta default
    to the block dimensions (d_psi hyperparameter steps, d_theta steps per
    local block); nss_steps defaults to M * d_total so the baseline does the
    same nominal amount of slice work per replacement. A fresh random
    direction is drawn for every slice step.
    """

    M: int = 5
    m_psi: int | None = None
    m_theta: int | None = None
    nss_steps: int | None = None
    shuffle_sweep: bool = False
    max_stepout: int = 10
    max_shrink: int = 100

    def psi_steps(self, d_psi: int) -> int:
        return self.m_psi if self.m_psi is not None else d_psi

    def theta_steps(self, d_theta: int) -> int:
        return self.m_theta if self.m_theta is not None else d_theta

    def joint_steps(self, d_total: int) -> int:
        return self.nss_steps if self.nss_steps is not None else self.M * d_total


@dataclass
class KernelCounters:
    """Work accounting. Every local constraint check is exactly one group
    call; every hyperparameter or joint-space check is J of them."""

    local_constraint: int = 0
    local_group_calls: int = 0
    psi_constraint: int = 0
    psi_group_calls: int = 0
    nss_constraint: int = 0
    nss_group_calls: int = 0
    stalls: int = 0

    @property
    def group_calls(self) -> int:
        return self.local_group_calls + self.psi_group_calls + self.nss_group_calls

    def merge(self, other: "KernelCounters") -> None:
        self.local_constraint += other.local_constraint
        self.local_group_calls += other.local_group_calls
        self.psi_constraint += other.psi_constraint
        self.psi_group_calls += other.psi_group_calls
        self.nss_constraint += other.nss_constraint
        self.nss_group_calls += other.nss_group_calls
        self.stalls += other.stalls

    def as_dict(self) -> dict:
        return {
            "local_constraint": self.local_constraint,
            "local_group_calls": self.local_group_calls,
            "psi_constraint": self.psi_constraint,
            "psi_group_calls": self.psi_group_calls,
            "nss_constraint": self.nss_constraint,
            "nss_group_calls": self.nss_group_calls,
            "stalls": self.stalls,
        }


def compute_budget(lstar: float, S: float, ell_k: float) -> float:
    """Per-group threshold equivalent to the global constraint when only
    group k moves: B_k = lstar - S + ell_k. Equals ell_k minus the global
    slack, so B_k <= ell_k with equality exactly when S = lstar."""
    return lstar - S + ell_k


class FeasibilityError(AssertionError):
    """A kernel observed or would produce an infeasible state."""


def _require_feasible(state: ParamState, lstar: float) -> None:
    if not state.S > lstar:
        raise FeasibilityError(f"infeasible parent: S={state.S} <= lstar={lstar}")


def _audit_state(model: ModelSpec, state_thetas, psi, ell, S, lstar, where: str) -> None:
    fresh = model.all_group_loglike(state_thetas, psi)
    tol = 1e-9 * max(1.0, abs(S))
    if not abs(float(fresh.sum()) - S) <= tol:
        raise AssertionError(f"cache drift in {where}: S={S} vs fresh={float(fresh.sum())}")
    if not np.allclose(fresh, ell, rtol=1e-9, atol=1e-9):
        raise AssertionError(f"ell cache drift in {where}")
    if not S > lstar:
        raise FeasibilityError(f"feasibility lost in {where}: S={S} <= lstar={lstar}")


# --- hyperparameter block update ---------------------------------------------


def _psi_update_inplace(state, lstar, cov, model, cfg, buf, cnt, audit=False):
    d_psi = model.dims.d_psi
    if d_psi == 0:
        return
    J = model.dims.J
    thetas = state.thetas
    recompute = model.likelihood_depends_on_psi or model.force_full_recompute_on_psi

    def logf(psi):
        lp = model.log_prior_hyper(psi)
        if lp == NEG_INF:
            return NEG_INF
        return lp + model.log_local_prior(thetas, psi)

    rec: list = [None]
    if recompute:

        def constraint(psi):
            cnt.psi_constraint += 1
            cnt.psi_group_calls += J
            ell = model.all_group_loglike(thetas, psi)
            if float(ell.sum()) > lstar:
                rec[0] = ell
                return True
            return False

    else:
        # Likelihood does not involve psi and recomputation is not forced:
        # S is invariant under this move, so the constraint holds trivially.
        def constraint(psi):
            cnt.psi_constraint += 1
            return True

    psi = state.psi
    committed = None
    for _ in range(cfg.psi_steps(d_psi)):
        direction = draw_direction(cov.psi_chol, buf)

        def logf_t(t, _p=psi, _d=direction):
            return logf(_p + t * _d)

        def constraint_t(t, _p=psi, _d=direction):
            return constraint(_p + t * _d)

        t1, moved = _slice_1d(
            0.0, logf_t, constraint_t, 1.0, buf, cnt, cfg.max_stepout, cfg.max_shrink
        )
        if moved:
            psi = psi + t1 * direction
            if recompute:
                committed = rec[0]

    state.psi = psi
    if committed is not None:
        # Exact O(J) refresh at the accepted point, reusing the likelihoods
        # already computed by its constraint check.
        state.ell = committed
        state.S = float(committed.sum())
    if audit:
        _audit_state(model, state.thetas, state.psi, state.ell, state.S, lstar, "psi_update")


# --- local sweeps -------------------------------------------------------------


def _local_sweep_inplace(state, lstar, cov, model, cfg, buf, cnt, audit=False):
    dims = model.dims
    J = dims.J
    psi = state.psi
    ell = state.ell
    thetas = state.thetas
    m_theta = cfg.theta_steps(dims.d_theta)
    order = buf.gen.permutation(J) if cfg.shuffle_sweep else range(J)
    S = state.S

    if dims.d_theta == 1:
        ctx = model.local_context(psi)
        gll = model.group_loglike_scalar
        clp = model.conditional_logprior_scalar
        sigma_pooled = cov.local_sigma(0) if cov.pooled else None
        for j in order:
            old = ell[j]
            B = lstar - S + old
            if audit:
                _audit_budget(B, lstar, S, ell, j)
            x = thetas[j, 0]
            sigma = sigma_pooled if sigma_pooled is not None else cov.local_sigma(j)
            holder = [old]

            def constraint(v, _j=j, _B=B, _h=holder):
                cnt.local_constraint += 1
                cnt.local_group_calls += 1
                val = gll(v, ctx, _j)
                if val > _B:
                    _h[0] = val
                    return True
                return False

            def logf(v, _j=j):
                return clp(v, ctx, _j)

            cur = old
            for _ in range(m_theta):
                x1, moved = _slice_1d(
                    x, logf, constraint, sigma, buf, cnt, cfg.max_stepout, cfg.max_shrink
                )
                if moved:
                    x = x1
                    cur = holder[0]
            if cur != old:
                thetas[j, 0] = x
                ell[j] = cur
                S += cur - old
            if audit:
                _audit_state(model, thetas, psi, ell, S, lstar, f"local_sweep j={j}")
    else:
        for j in order:
            old = float(ell[j])
            B = lstar - S + old
            if audit:
                _audit_budget(B, lstar, S, ell, j)
            x = thetas[j].copy()
            holder = [old]

            def constraint(v, _j=j, _B=B, _h=holder):
                cnt.local_constraint += 1
                cnt.local_group_calls += 1
                val = model.group_loglike(v, psi, _j)
                if val > _B:
                    _h[0] = val
                    return True
                return False

            def logf(v, _j=j):
                return model.log_conditional_prior(v, psi, _j)

            cur = old
            for _ in range(m_theta):
                x, moved, got = _directional_step(
                    x, logf, constraint, cov.local_chol(j), buf, cnt, cfg
                )
                if moved:
                    cur = holder[0]
            if cur != old:
                thetas[j] = x
                ell[j] = cur
                S += cur - old
            if audit:
                _audit_state(model, thetas, psi, ell, S, lstar, f"local_sweep j={j}")

    state.S = S


def _markov_sweep_inplace(state, lstar, cov, model, cfg, buf, cnt, audit=False):
    dims = model.dims
    T = dims.J
    psi = state.psi
    ell = state.ell
    thetas = state.thetas
    m_theta = cfg.theta_steps(dims.d_theta)
    S = state.S

    if dims.d_theta == 1:
        ctx = model.local_context(psi)
        gll = model.group_loglike_scalar
        init_s = model.initial_logpdf_scalar
        trans_s = model.transition_logpdf_scalar
        sigma_pooled = cov.local_sigma(0) if cov.pooled else None
        for t in range(T):
            old = ell[t]
            B = lstar - S + old
            if audit:
                _audit_budget(B, lstar, S, ell, t)
            x = thetas[t, 0]
            sigma = sigma_pooled if sigma_pooled is not None else cov.local_sigma(t)

            if t == 0:
                if T == 1:

                    def logf(v):
                        return init_s(v, ctx)

                else:
                    right = thetas[1, 0]

                    def logf(v, _r=right):
                        return init_s(v, ctx) + trans_s(_r, v, ctx)

            elif t == T - 1:
                left = thetas[t - 1, 0]

                def logf(v, _l=left):
                    return trans_s(v, _l, ctx)

            else:
                left = thetas[t - 1, 0]
                right = thetas[t + 1, 0]

                def logf(v, _l=left, _r=right):
                    return trans_s(v, _l, ctx) + trans_s(_r, v, ctx)

            holder = [old]

            def constraint(v, _t=t, _B=B, _h=holder):
                cnt.local_constraint += 1
                cnt.local_group_calls += 1
                val = gll(v, ctx, _t)
                if val > _B:
                    _h[0] = val
                    return True
                return False

            cur = old
            for _ in range(m_theta):
                x1, moved = _slice_1d(
                    x, logf, constraint, sigma, buf, cnt, cfg.max_stepout, cfg.max_shrink
                )
                if moved:
                    x = x1
                    cur = holder[0]
            if cur != old:
                thetas[t, 0] = x
                ell[t] = cur
                S += cur - old
            if audit:
                _audit_state(model, thetas, psi, ell, S, lstar, f"markov_sweep t={t}")
    else:
        for t in range(T):
            old = float(ell[t])
            B = lstar - S + old
            x = thetas[t].copy()
            holder = [old]

            def logf(v, _t=t):
                window = _window(thetas, v, _t, T)
                return model.log_blanket_prior(_t, window, psi)

            def constraint(v, _t=t, _B=B, _h=holder):
                cnt.local_constraint += 1
                cnt.local_group_calls += 1
                val = model.group_loglike(v, psi, _t)
                if val > _B:
                    _h[0] = val
                    return True
                return False

            cur = old
            for _ in range(m_theta):
                x, moved, _ = _directional_step(
                    x, logf, constraint, cov.local_chol(t), buf, cnt, cfg
                )
                if moved:
                    cur = holder[0]
            if cur != old:
                thetas[t] = x
                ell[t] = cur
                S += cur - old
            if audit:
                _audit_state(model, thetas, psi, ell, S, lstar, f"markov_sweep t={t}")

    state.S = S


def _window(thetas: np.ndarray, v: np.ndarray, t: int, T: int) -> tuple:
    if t == 0:
        return (v,) if T == 1 else (v, thetas[1])
    if t == T - 1:
        return (thetas[t - 1], v)
    return (thetas[t - 1], v, thetas[t + 1])


def _audit_budget(B, lstar, S, ell, j):
    alt = lstar - (float(ell.sum()) - float(ell[j]))
    tol = 1e-9 * max(1.0, abs(B))
    if not abs(B - alt) <= tol:
        raise AssertionError(f"budget identity violated at j={j}: {B} vs {alt}")


def _directional_step(x, logf_vec, constraint_vec, chol, buf, cnt, cfg):
    direction = draw_direction(chol, buf)

    def logf_t(t, _x=x, _d=direction):
        return logf_vec(_x + t * _d)

    def constraint_t(t, _x=x, _d=direction):
        return constraint_vec(_x + t * _d)

    t1, moved = _slice_1d(
        0.0, logf_t, constraint_t, 1.0, buf, cnt, cfg.max_stepout, cfg.max_shrink
    )
    if moved:
        return x + t1 * direction, True, t1
    return x, False, 0.0


# --- public kernel surface ----------------------------------------------------


def psi_update(
    state: ParamState,
    lstar: float,
    live_cov: BlockCovariance,
    model: ModelSpec,
    cfg: KernelConfig,
    rng,
    audit: bool = False,
) -> tuple[ParamState, KernelCounters]:
    """Slice-update the hyperparameter block against its full conditional.

    The target is the hyperprior times all conditional priors of the current
    local blocks, under the global likelihood constraint; caches are exactly
    refreshed at the accepted point. No-op when d_psi = 0.
    """
    _require_feasible(state, lstar)
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    cnt = KernelCounters()
    out = state.copy()
    _psi_update_inplace(out, lstar, live_cov, model, cfg, buf, cnt, audit)
    out.log_prior = model.log_prior_total(out.psi, out.thetas)
    return out, cnt


def local_sweep(
    state: ParamState,
    lstar: float,
    live_cov: BlockCovariance,
    model: ModelSpec,
    cfg: KernelConfig,
    rng,
    audit: bool = False,
) -> tuple[ParamState, KernelCounters]:
    """Sequential sweep of per-group slice updates under per-group budgets."""
    if model.structure is not Structure.IID:
        raise ValueError("local_sweep requires an iid-structured model")
    _require_feasible(state, lstar)
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    cnt = KernelCounters()
    out = state.copy()
    _local_sweep_inplace(out, lstar, live_cov, model, cfg, buf, cnt, audit)
    out.log_prior = model.log_prior_total(out.psi, out.thetas)
    return out, cnt


def markov_local_sweep(
    state: ParamState,
    lstar: float,
    live_cov: BlockCovariance,
    model: ModelSpec,
    cfg: KernelConfig,
    rng,
    audit: bool = False,
) -> tuple[ParamState, KernelCounters]:
    """Sequential site sweep for chain-structured local blocks.

    Each site's slice density is its conditional prior given the Markov
    blanket (at most two transition terms); the likelihood enters only
    through the per-site budget, exactly as in the iid sweep.
    """
    if model.structure is not Structure.MARKOV:
        raise ValueError("markov_local_sweep requires a Markov-structured model")
    _require_feasible(state, lstar)
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    cnt = KernelCounters()
    out = state.copy()
    _markov_sweep_inplace(out, lstar, live_cov, model, cfg, buf, cnt, audit)
    out.log_prior = model.log_prior_total(out.psi, out.thetas)
    return out, cnt


def swig_replace(
    parent: ParamState,
    lstar: float,
    live_cov: BlockCovariance,
    model: ModelSpec,
    cfg: KernelConfig,
    rng,
    audit: bool = False,
) -> tuple[ParamState, KernelCounters]:
    """M alternations of hyperparameter update and local sweep."""
    _require_feasible(parent, lstar)
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    cnt = KernelCounters()
    state = parent.copy()
    sweep = (
        _markov_sweep_inplace if model.structure is Structure.MARKOV else _local_sweep_inplace
    )
    for _ in range(cfg.M):
        _psi_update_inplace(state, lstar, live_cov, model, cfg, buf, cnt, audit)
        sweep(state, lstar, live_cov, model, cfg, buf, cnt, audit)
        # Exact sweep-boundary refresh of the running total (no model calls).
        state.S = float(state.ell.sum())
    state.log_prior = model.log_prior_total(state.psi, state.thetas)
    if not state.S > lstar:
        raise FeasibilityError(f"kernel produced S={state.S} <= lstar={lstar}")
    return state, cnt


def nss_replace(
    parent: ParamState,
    lstar: float,
    live_cov: BlockCovariance,
    model: ModelSpec,
    cfg: KernelConfig,
    rng,
    audit: bool = False,
) -> tuple[ParamState, KernelCounters]:
    """Joint-space baseline: hit-and-run slice moves on the full vector.

    Every constraint check recomputes all J group likelihoods; with
    M * d_total steps per replacement this is the O(J^2) cost the budget
    decomposition avoids.
    """
    _require_feasible(parent, lstar)
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    cnt = KernelCounters()
    dims = model.dims
    d_psi, J, d_theta = dims.d_psi, dims.J, dims.d_theta
    x = parent.flat()

    def unpack(xv):
        return xv[:d_psi], xv[d_psi:].reshape(J, d_theta)

    def logf(xv):
        psi, th = unpack(xv)
        lp = model.log_prior_hyper(psi)
        if lp == NEG_INF:
            return NEG_INF
        loc = model.log_local_prior(th, psi)
        return lp + loc

    rec: list = [None]

    def constraint(xv):
        cnt.nss_constraint += 1
        cnt.nss_group_calls += J
        psi, th = unpack(xv)
        ell = model.all_group_loglike(th, psi)
        S = float(ell.sum())
        if S > lstar:
            rec[0] = (ell, S)
            return True
        return False

    committed = None
    for _ in range(cfg.joint_steps(dims.d_total)):
        direction = live_cov.joint_direction(d_psi, J, d_theta, buf)

        def logf_t(t, _x=x, _d=direction):
            return logf(_x + t * _d)

        def constraint_t(t, _x=x, _d=direction):
            return constraint(_x + t * _d)

        t1, moved = _slice_1d(
            0.0, logf_t, constraint_t, 1.0, buf, cnt, cfg.max_stepout, cfg.max_shrink
        )
        if moved:
            x = x + t1 * direction
            committed = rec[0]

    psi, th = unpack(x)
    if committed is None:
        ell, S = parent.ell.copy(), parent.S
    else:
        ell, S = committed
    state = ParamState(
        psi.copy(), th.copy(), ell, S, model.log_prior_total(psi, th)
    )
    if audit:
        _audit_state(model, state.thetas, state.psi, state.ell, state.S, lstar, "nss_replace")
    if not state.S > lstar:
        raise FeasibilityError(f"kernel produced S={state.S} <= lstar={lstar}")
    return state, cnt
