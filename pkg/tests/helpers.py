"""Small analytic models used as oracles across the test suite."""

from __future__ import annotations

import math

import numpy as np

from hierns.models import ModelDims, ModelSpec, Structure
from hierns.util import LN2PI


class TwoGroupGauss(ModelSpec):
    """No hyperparameters, two groups: theta_j ~ N(0,1) a priori and
    ell_j = log N(y_j; theta_j, 1). The likelihood-constrained prior is a
    bivariate standard normal truncated to a disc around y, so every marginal
    is computable by 1-d quadrature."""

    structure = Structure.IID

    def __init__(self, y=(1.0, -0.5)):
        self.name = "two_group_gauss"
        self.dims = ModelDims(d_psi=0, J=2, d_theta=1)
        self.y = np.asarray(y, dtype=float)
        self._y = [float(v) for v in self.y]

    def log_conditional_prior(self, theta_j, psi, j):
        x = theta_j[0]
        return -0.5 * (LN2PI + x * x)

    def group_loglike(self, theta_j, psi, j):
        d = self._y[j] - theta_j[0]
        return -0.5 * (LN2PI + d * d)

    def all_group_loglike(self, thetas, psi):
        d = self.y - thetas[:, 0]
        return -0.5 * (LN2PI + d * d)

    def log_local_prior(self, thetas, psi):
        th = thetas[:, 0]
        return -0.5 * (2 * LN2PI + float(th @ th))

    def local_context(self, psi):
        return None

    def conditional_logprior_scalar(self, x, ctx, j):
        return -0.5 * (LN2PI + x * x)

    def group_loglike_scalar(self, x, ctx, j):
        d = self._y[j] - x
        return -0.5 * (LN2PI + d * d)

    def sample_locals(self, psi, rng):
        return rng.standard_normal((2, 1))


class IIDGaussGroups(ModelSpec):
    """theta_j ~ N(0,1) iid, ell_j = log N(y_j; theta_j, 1); no
    hyperparameters."""

    structure = Structure.IID

    def __init__(self, y):
        self.name = "iid_gauss_groups"
        self.y = np.asarray(y, dtype=float)
        self.dims = ModelDims(d_psi=0, J=len(self.y), d_theta=1)
        self._y = [float(v) for v in self.y]

    def log_conditional_prior(self, theta_j, psi, j):
        x = theta_j[0]
        return -0.5 * (LN2PI + x * x)

    def group_loglike(self, theta_j, psi, j):
        d = self._y[j] - theta_j[0]
        return -0.5 * (LN2PI + d * d)

    def all_group_loglike(self, thetas, psi):
        d = self.y - thetas[:, 0]
        return -0.5 * (LN2PI + d * d)

    def log_local_prior(self, thetas, psi):
        th = thetas[:, 0]
        return -0.5 * (len(self._y) * LN2PI + float(th @ th))

    def local_context(self, psi):
        return None

    def conditional_logprior_scalar(self, x, ctx, j):
        return -0.5 * (LN2PI + x * x)

    def group_loglike_scalar(self, x, ctx, j):
        d = self._y[j] - x
        return -0.5 * (LN2PI + d * d)

    def sample_locals(self, psi, rng):
        return rng.standard_normal((len(self._y), 1))


class MarkovTwinGauss(ModelSpec):
    """Degenerate Markov twin of IIDGaussGroups: the transition density
    ignores the previous site, so site conditionals reduce to the iid
    conditional up to terms constant in the site value."""

    structure = Structure.MARKOV

    def __init__(self, y):
        self.name = "markov_twin_gauss"
        self.y = np.asarray(y, dtype=float)
        self.dims = ModelDims(d_psi=0, J=len(self.y), d_theta=1)
        self._y = [float(v) for v in self.y]

    def log_initial_state(self, theta0, psi):
        x = theta0[0]
        return -0.5 * (LN2PI + x * x)

    def log_transition(self, theta_t, theta_prev, psi):
        x = theta_t[0]
        return -0.5 * (LN2PI + x * x)

    def group_loglike(self, theta_j, psi, j):
        d = self._y[j] - theta_j[0]
        return -0.5 * (LN2PI + d * d)

    def all_group_loglike(self, thetas, psi):
        d = self.y - thetas[:, 0]
        return -0.5 * (LN2PI + d * d)

    def log_local_prior(self, thetas, psi):
        th = thetas[:, 0]
        return -0.5 * (len(self._y) * LN2PI + float(th @ th))

    def local_context(self, psi):
        return None

    def initial_logpdf_scalar(self, x, ctx):
        return -0.5 * (LN2PI + x * x)

    def transition_logpdf_scalar(self, x, prev, ctx):
        return -0.5 * (LN2PI + x * x)

    def group_loglike_scalar(self, x, ctx, j):
        d = self._y[j] - x
        return -0.5 * (LN2PI + d * d)

    def sample_locals(self, psi, rng):
        return rng.standard_normal((len(self._y), 1))


class GaussChain(ModelSpec):
    """Linear-Gaussian AR(1) chain with Gaussian observations and no
    hyperparameters; the exact evidence comes from the Kalman filter and all
    site conditionals are Gaussian."""

    structure = Structure.MARKOV

    def __init__(self, y, beta=0.8, q=0.5, r=0.4):
        self.name = "gauss_chain"
        self.y = np.asarray(y, dtype=float)
        self.dims = ModelDims(d_psi=0, J=len(self.y), d_theta=1)
        self.beta = beta
        self.q = q
        self.r = r
        self.v0 = q * q / (1.0 - beta * beta)
        self._y = [float(v) for v in self.y]

    def log_initial_state(self, theta0, psi):
        x = theta0[0]
        return -0.5 * (LN2PI + math.log(self.v0) + x * x / self.v0)

    def log_transition(self, theta_t, theta_prev, psi):
        d = theta_t[0] - self.beta * theta_prev[0]
        return -0.5 * (LN2PI + 2 * math.log(self.q) + d * d / self.q**2)

    def group_loglike(self, theta_j, psi, j):
        d = self._y[j] - theta_j[0]
        return -0.5 * (LN2PI + 2 * math.log(self.r) + d * d / self.r**2)

    def all_group_loglike(self, thetas, psi):
        d = self.y - thetas[:, 0]
        return -0.5 * (LN2PI + 2 * math.log(self.r) + d * d / self.r**2)

    def log_local_prior(self, thetas, psi):
        th = thetas[:, 0]
        out = -0.5 * (LN2PI + math.log(self.v0) + th[0] ** 2 / self.v0)
        if th.size > 1:
            res = th[1:] - self.beta * th[:-1]
            out += -0.5 * (
                (th.size - 1) * (LN2PI + 2 * math.log(self.q)) + float(res @ res) / self.q**2
            )
        return out

    def local_context(self, psi):
        return None

    def initial_logpdf_scalar(self, x, ctx):
        return -0.5 * (LN2PI + math.log(self.v0) + x * x / self.v0)

    def transition_logpdf_scalar(self, x, prev, ctx):
        d = x - self.beta * prev
        return -0.5 * (LN2PI + 2 * math.log(self.q) + d * d / self.q**2)

    def group_loglike_scalar(self, x, ctx, j):
        d = self._y[j] - x
        return -0.5 * (LN2PI + 2 * math.log(self.r) + d * d / self.r**2)

    def sample_locals(self, psi, rng):
        T = self.dims.J
        th = np.empty(T)
        th[0] = math.sqrt(self.v0) * rng.standard_normal()
        for t in range(1, T):
            th[t] = self.beta * th[t - 1] + self.q * rng.standard_normal()
        return th.reshape(-1, 1)

    def kalman_logz(self) -> float:
        mean_p, var_p = 0.0, self.v0
        ll = 0.0
        for t in range(self.dims.J):
            s = var_p + self.r**2
            ll += -0.5 * (LN2PI + math.log(s) + (self.y[t] - mean_p) ** 2 / s)
            gain = var_p / s
            mean_f = mean_p + gain * (self.y[t] - mean_p)
            var_f = var_p * (1 - gain)
            mean_p = self.beta * mean_f
            var_p = self.beta**2 * var_f + self.q**2
        return ll
