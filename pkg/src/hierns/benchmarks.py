"""Reference models with analytic or quadrature evidences, synthetic-data
generators, and evaluation-cost accounting in full-likelihood equivalents.

Three targets:
  * hierarchical Gaussian: conjugate everywhere, closed-form evidence; the
    observation likelihood does not involve the hyperparameter, but a full
    recomputation is forced during hyperparameter updates so evaluation
    counts emulate the general case.
  * funnel: scale hyperparameter with broad uniform local priors; the
    Gaussian conditionals act as per-group likelihoods; evidence by 1-d
    quadrature over the hyperparameter.
  * stochastic volatility: AR(1) latent log-volatilities (Markov), synthetic
    returns, heavy-tailed hyperpriors truncated to keep the prior proper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf

from .models import ModelDims, ModelSpec, Structure
from .util import LN2PI, NEG_INF, stream


# --- evaluation accounting -----------------------------------------------------


@dataclass
class EvalCounter:
    """Group-call tally; J single-group calls are one full evaluation."""

    J: int
    group_calls: int = 0

    @property
    def full_equivalents(self) -> float:
        return self.group_calls / self.J


def count_equivalents(counter: EvalCounter, calls: int) -> EvalCounter:
    """Accumulate `calls` group-likelihood calls into the counter."""
    counter.group_calls += calls
    return counter


# --- hierarchical Gaussian ------------------------------------------------------


@dataclass
class HierGaussConfig:
    J: int = 10
    mu0: float = 0.0
    sigma_psi: float = 10.0
    sigma_theta: float = 2.0
    sigma_obs: float = 1.0
    psi_true: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_psi, self.sigma_theta, self.sigma_obs) <= 0:
            raise ValueError("all scales must be positive")


def generate_hg_data(cfg: HierGaussConfig) -> np.ndarray:
    """theta_j ~ N(psi_true, sigma_theta^2), y_j ~ N(theta_j, sigma_obs^2)."""
    rng = stream(cfg.seed, 100)
    thetas = cfg.psi_true + cfg.sigma_theta * rng.standard_normal(cfg.J)
    return thetas + cfg.sigma_obs * rng.standard_normal(cfg.J)


def hg_analytic_logz(y: np.ndarray, cfg: HierGaussConfig) -> float:
    """Exact evidence: y ~ N(mu0 * 1, tau^2 I + sigma_psi^2 11^T) with
    tau^2 = sigma_theta^2 + sigma_obs^2, via the rank-one determinant and
    Sherman-Morrison identities."""
    y = np.asarray(y, dtype=float)
    J = y.size
    tau2 = cfg.sigma_theta**2 + cfg.sigma_obs**2
    sp2 = cfg.sigma_psi**2
    r = y - cfg.mu0
    sum_r = float(r.sum())
    quad = (float(r @ r) - sp2 * sum_r**2 / (tau2 + J * sp2)) / tau2
    logdet = (J - 1) * math.log(tau2) + math.log(tau2 + J * sp2)
    return -0.5 * (J * LN2PI + logdet + quad)


class HierGaussModel(ModelSpec):
    """psi ~ N(mu0, sigma_psi^2); theta_j | psi ~ N(psi, sigma_theta^2);
    y_j | theta_j ~ N(theta_j, sigma_obs^2)."""

    structure = Structure.IID
    likelihood_depends_on_psi = False

    def __init__(self, cfg: HierGaussConfig, y: np.ndarray | None = None):
        self.cfg = cfg
        self.name = "hier_gauss"
        self.dims = ModelDims(d_psi=1, J=cfg.J, d_theta=1)
        self.y = np.asarray(y if y is not None else generate_hg_data(cfg), dtype=float)
        if self.y.shape != (cfg.J,):
            raise ValueError(f"need {cfg.J} observations, got shape {self.y.shape}")
        self._y_list = [float(v) for v in self.y]
        s = cfg
        self._lp_psi_const = -0.5 * (LN2PI + 2.0 * math.log(s.sigma_psi))
        self._inv2_psi = 0.5 / s.sigma_psi**2
        self._lp_th_const = -0.5 * (LN2PI + 2.0 * math.log(s.sigma_theta))
        self._inv2_th = 0.5 / s.sigma_theta**2
        self._ll_const = -0.5 * (LN2PI + 2.0 * math.log(s.sigma_obs))
        self._inv2_obs = 0.5 / s.sigma_obs**2
        self.analytic_logz = hg_analytic_logz(self.y, cfg)

    # hyperprior
    def log_prior_hyper(self, psi):
        d = psi[0] - self.cfg.mu0
        return self._lp_psi_const - d * d * self._inv2_psi

    def sample_psi(self, rng):
        return np.array([self.cfg.mu0 + self.cfg.sigma_psi * rng.standard_normal()])

    # conditional prior and likelihood
    def log_conditional_prior(self, theta_j, psi, j):
        d = theta_j[0] - psi[0]
        return self._lp_th_const - d * d * self._inv2_th

    def group_loglike(self, theta_j, psi, j):
        if theta_j[0] != theta_j[0]:
            raise FloatingPointError("NaN parameters: model bug upstream")
        d = self._y_list[j] - theta_j[0]
        return self._ll_const - d * d * self._inv2_obs

    def sample_locals(self, psi, rng):
        return (psi[0] + self.cfg.sigma_theta * rng.standard_normal(self.cfg.J)).reshape(-1, 1)

    # vectorized + scalar fast paths
    def all_group_loglike(self, thetas, psi):
        th = thetas[:, 0]
        if np.isnan(th).any():
            raise FloatingPointError("NaN parameters: model bug upstream")
        d = self.y - th
        return self._ll_const - d * d * self._inv2_obs

    def log_local_prior(self, thetas, psi):
        d = thetas[:, 0] - psi[0]
        return self.cfg.J * self._lp_th_const - float(d @ d) * self._inv2_th

    def local_context(self, psi):
        return float(psi[0])

    def conditional_logprior_scalar(self, x, ctx, j):
        d = x - ctx
        return self._lp_th_const - d * d * self._inv2_th

    def group_loglike_scalar(self, x, ctx, j):
        d = self._y_list[j] - x
        return self._ll_const - d * d * self._inv2_obs

    # closed-form posterior pieces (used for oracles and plot contours)
    def psi_posterior(self) -> tuple[float, float]:
        """(mean, variance) of psi | y."""
        cfg = self.cfg
        tau2 = cfg.sigma_theta**2 + cfg.sigma_obs**2
        prec = 1.0 / cfg.sigma_psi**2 + cfg.J / tau2
        var = 1.0 / prec
        mean = var * (cfg.mu0 / cfg.sigma_psi**2 + float(self.y.sum()) / tau2)
        return mean, var

    def theta_conditional(self, psi0: float, j: int) -> tuple[float, float]:
        """(mean, variance) of theta_j | psi, y_j (conjugate)."""
        cfg = self.cfg
        prec = 1.0 / cfg.sigma_theta**2 + 1.0 / cfg.sigma_obs**2
        var = 1.0 / prec
        mean = var * (psi0 / cfg.sigma_theta**2 + self._y_list[j] / cfg.sigma_obs**2)
        return mean, var

    def joint_psi_theta0_posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the Gaussian (psi, theta_0) posterior."""
        cfg = self.cfg
        mu_p, v_p = self.psi_posterior()
        prec = 1.0 / cfg.sigma_theta**2 + 1.0 / cfg.sigma_obs**2
        v = 1.0 / prec
        b = v / cfg.sigma_theta**2
        m0 = v * (mu_p / cfg.sigma_theta**2 + self._y_list[0] / cfg.sigma_obs**2)
        mean = np.array([mu_p, m0])
        cov = np.array([[v_p, b * v_p], [b * v_p, v + b * b * v_p]])
        return mean, cov

    def analytic_info_decomposition(self) -> dict:
        """KL(posterior || prior) split: hyperparameter KL plus the expected
        per-group conditional KLs (all Gaussian)."""
        cfg = self.cfg
        mu_p, v_p = self.psi_posterior()
        sp2 = cfg.sigma_psi**2
        h_psi = 0.5 * (v_p / sp2 - 1.0 + (mu_p - cfg.mu0) ** 2 / sp2 + math.log(sp2 / v_p))
        st2 = cfg.sigma_theta**2
        tau2 = st2 + cfg.sigma_obs**2
        v = 1.0 / (1.0 / st2 + 1.0 / cfg.sigma_obs**2)
        c = st2 / tau2
        base = 0.5 * (v / st2 - 1.0 + math.log(st2 / v))
        h_locals = base + 0.5 * c * c * ((self.y - mu_p) ** 2 + v_p) / st2
        return {
            "h_psi": h_psi,
            "h_locals": h_locals,
            "h_total": h_psi + float(h_locals.sum()),
        }


# --- funnel ----------------------------------------------------------------------


@dataclass
class FunnelConfig:
    J: int = 10
    sigma_psi_sq: float = 9.0
    theta_bound: float = 100.0

    def __post_init__(self):
        if self.sigma_psi_sq <= 0 or self.theta_bound <= 0:
            raise ValueError("scale and bound must be positive")


def funnel_analytic_logz(cfg: FunnelConfig, epsabs: float = 1e-6) -> float:
    """Evidence by marginalizing each local parameter inside its uniform
    bounds, then integrating the hyperparameter numerically over [-40, 40]
    (> 13 prior sigmas)."""
    b = cfg.theta_bound
    sig = math.sqrt(cfg.sigma_psi_sq)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)

    def integrand(psi: float) -> float:
        z = b * math.exp(-0.5 * psi)
        frac = erf(z * inv_sqrt2)  # P(|theta| < b) under N(0, e^psi)
        dens = math.exp(-0.5 * (psi / sig) ** 2) / (sig * math.sqrt(2 * math.pi))
        return dens * frac**cfg.J

    val, err = integrate.quad(integrand, -40.0, 40.0, epsabs=epsabs * 1e-3, epsrel=1e-10, limit=200)
    if err > epsabs or not val > 0:
        raise RuntimeError(f"funnel evidence quadrature did not converge (err={err})")
    return -cfg.J * math.log(2.0 * b) + math.log(val)


class FunnelModel(ModelSpec):
    """psi ~ N(0, sigma_psi_sq); theta_j ~ Uniform(-b, b) a priori; the
    Gaussian conditionals N(theta_j; 0, e^psi) act as per-group likelihoods."""

    structure = Structure.IID
    likelihood_depends_on_psi = True

    def __init__(self, cfg: FunnelConfig):
        self.cfg = cfg
        self.name = "funnel"
        self.dims = ModelDims(d_psi=1, J=cfg.J, d_theta=1)
        self._sig = math.sqrt(cfg.sigma_psi_sq)
        self._lp_psi_const = -0.5 * (LN2PI + math.log(cfg.sigma_psi_sq))
        self._inv2_psi = 0.5 / cfg.sigma_psi_sq
        self._b = cfg.theta_bound
        self._log_unif = -math.log(2.0 * cfg.theta_bound)
        self.analytic_logz = funnel_analytic_logz(cfg)

    def log_prior_hyper(self, psi):
        x = psi[0]
        return self._lp_psi_const - x * x * self._inv2_psi

    def sample_psi(self, rng):
        return np.array([self._sig * rng.standard_normal()])

    def log_conditional_prior(self, theta_j, psi, j):
        return self._log_unif if -self._b < theta_j[0] < self._b else NEG_INF

    def group_loglike(self, theta_j, psi, j):
        x = theta_j[0]
        if x != x or psi[0] != psi[0]:
            raise FloatingPointError("NaN parameters: model bug upstream")
        p = psi[0]
        return -0.5 * (LN2PI + p + x * x * math.exp(-p))

    def sample_locals(self, psi, rng):
        return rng.uniform(-self._b, self._b, size=(self.cfg.J, 1))

    def all_group_loglike(self, thetas, psi):
        th = thetas[:, 0]
        if np.isnan(th).any() or psi[0] != psi[0]:
            raise FloatingPointError("NaN parameters: model bug upstream")
        p = psi[0]
        return -0.5 * (LN2PI + p + th * th * math.exp(-p))

    def log_local_prior(self, thetas, psi):
        th = thetas[:, 0]
        if np.all(np.abs(th) < self._b):
            return self.cfg.J * self._log_unif
        return NEG_INF

    def local_context(self, psi):
        p = float(psi[0])
        return (-0.5 * (LN2PI + p), 0.5 * math.exp(-p))

    def conditional_logprior_scalar(self, x, ctx, j):
        return self._log_unif if -self._b < x < self._b else NEG_INF

    def group_loglike_scalar(self, x, ctx, j):
        return ctx[0] - x * x * ctx[1]

    def posterior_logdensity_grid(self, psi: np.ndarray, theta0: np.ndarray) -> np.ndarray:
        """Unnormalized log posterior of (psi, theta_0), other thetas
        marginalized inside the bounds; for plot contours."""
        z = self._b * np.exp(-0.5 * psi)
        frac = erf(z / math.sqrt(2.0))
        lp = self._lp_psi_const - psi**2 * self._inv2_psi
        ll0 = -0.5 * (LN2PI + psi + theta0**2 * np.exp(-psi))
        return lp + ll0 + (self.cfg.J - 1) * np.log(frac)


# --- stochastic volatility --------------------------------------------------------


@dataclass
class SVConfig:
    T: int = 50
    mu: float = -1.0
    beta: float = 0.95
    sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not abs(self.beta) < 1:
            raise ValueError("AR(1) persistence must satisfy |beta| < 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def generate_sv_data(cfg: SVConfig) -> np.ndarray:
    """theta_0 from the stationary AR(1) law, theta_t = mu + beta
    (theta_{t-1} - mu) + sigma eps_t, returns y_t ~ N(0, exp(theta_t))."""
    rng = stream(cfg.seed, 200)
    th = np.empty(cfg.T)
    th[0] = cfg.mu + cfg.sigma / math.sqrt(1.0 - cfg.beta**2) * rng.standard_normal()
    eps = rng.standard_normal(cfg.T)
    for t in range(1, cfg.T):
        th[t] = cfg.mu + cfg.beta * (th[t - 1] - cfg.mu) + cfg.sigma * eps[t]
    return np.exp(0.5 * th) * rng.standard_normal(cfg.T)


# hyperprior constants: mu ~ Cauchy(0, 10) on [-50, 50];
# (beta+1)/2 ~ Beta(20, 1.5); sigma ~ HalfCauchy(0, 2) on (0, 50].
_MU_SCALE = 10.0
_MU_BOUND = 50.0
_SIG_SCALE = 2.0
_SIG_BOUND = 50.0
_BETA_A = 20.0
_BETA_B = 1.5


def _cauchy_cdf(x: float, scale: float) -> float:
    return 0.5 + math.atan(x / scale) / math.pi


_MU_NORM = math.log(_cauchy_cdf(_MU_BOUND, _MU_SCALE) - _cauchy_cdf(-_MU_BOUND, _MU_SCALE))
_SIG_NORM = math.log(2.0 * (_cauchy_cdf(_SIG_BOUND, _SIG_SCALE) - 0.5))
_BETA_LNB = math.lgamma(_BETA_A) + math.lgamma(_BETA_B) - math.lgamma(_BETA_A + _BETA_B)


class SVModel(ModelSpec):
    """Markov target: latent log-volatilities follow an AR(1) chain under
    psi = (mu, beta, sigma); observations y_t ~ N(0, exp(theta_t))."""

    structure = Structure.MARKOV
    likelihood_depends_on_psi = False

    def __init__(self, cfg: SVConfig, y: np.ndarray | None = None):
        self.cfg = cfg
        self.name = "sv"
        self.dims = ModelDims(d_psi=3, J=cfg.T, d_theta=1)
        self.y = np.asarray(y if y is not None else generate_sv_data(cfg), dtype=float)
        if self.y.shape != (cfg.T,):
            raise ValueError(f"need {cfg.T} observations, got shape {self.y.shape}")
        self._y2 = self.y**2
        self._y2_list = [float(v) for v in self._y2]
        self.analytic_logz = None

    def log_prior_hyper(self, psi):
        mu, beta, sigma = psi[0], psi[1], psi[2]
        if mu != mu or beta != beta or sigma != sigma:
            raise FloatingPointError("NaN parameters: model bug upstream")
        if not (-_MU_BOUND <= mu <= _MU_BOUND) or not (0.0 < sigma <= _SIG_BOUND):
            return NEG_INF
        if not -1.0 < beta < 1.0:
            return NEG_INF
        lp_mu = -math.log(math.pi * _MU_SCALE * (1.0 + (mu / _MU_SCALE) ** 2)) - _MU_NORM
        lp_sig = (
            math.log(2.0)
            - math.log(math.pi * _SIG_SCALE * (1.0 + (sigma / _SIG_SCALE) ** 2))
            - _SIG_NORM
        )
        u = 0.5 * (beta + 1.0)
        lp_beta = (
            (_BETA_A - 1.0) * math.log(u)
            + (_BETA_B - 1.0) * math.log1p(-u)
            - _BETA_LNB
            + math.log(0.5)
        )
        return lp_mu + lp_sig + lp_beta

    def sample_psi(self, rng):
        lo = _cauchy_cdf(-_MU_BOUND, _MU_SCALE)
        hi = _cauchy_cdf(_MU_BOUND, _MU_SCALE)
        mu = _MU_SCALE * math.tan(math.pi * (rng.uniform(lo, hi) - 0.5))
        beta = 2.0 * rng.beta(_BETA_A, _BETA_B) - 1.0
        hi_s = 2.0 * (_cauchy_cdf(_SIG_BOUND, _SIG_SCALE) - 0.5)
        sigma = _SIG_SCALE * math.tan(0.5 * math.pi * rng.uniform(0.0, hi_s))
        return np.array([mu, beta, sigma])

    # chain prior
    def log_initial_state(self, theta0, psi):
        mu, beta, sigma = psi[0], psi[1], psi[2]
        v0 = sigma**2 / (1.0 - beta**2)
        d = theta0[0] - mu
        return -0.5 * (LN2PI + math.log(v0) + d * d / v0)

    def log_transition(self, theta_t, theta_prev, psi):
        mu, beta, sigma = psi[0], psi[1], psi[2]
        d = theta_t[0] - mu - beta * (theta_prev[0] - mu)
        return -0.5 * (LN2PI + 2.0 * math.log(sigma) + d * d / sigma**2)

    def sample_local_chain(self, psi, T, rng):
        mu, beta, sigma = float(psi[0]), float(psi[1]), float(psi[2])
        th = np.empty(T)
        th[0] = mu + sigma / math.sqrt(1.0 - beta**2) * rng.standard_normal()
        eps = rng.standard_normal(T)
        for t in range(1, T):
            th[t] = mu + beta * (th[t - 1] - mu) + sigma * eps[t]
        return th

    def sample_locals(self, psi, rng):
        return self.sample_local_chain(psi, self.cfg.T, rng).reshape(-1, 1)

    # likelihood
    def group_loglike(self, theta_j, psi, j):
        x = theta_j[0]
        if x != x:
            raise FloatingPointError("NaN parameters: model bug upstream")
        try:
            e = math.exp(-x)
        except OverflowError:
            return NEG_INF
        return -0.5 * (LN2PI + x + self._y2_list[j] * e)

    def all_group_loglike(self, thetas, psi):
        th = thetas[:, 0]
        if np.isnan(th).any():
            raise FloatingPointError("NaN parameters: model bug upstream")
        with np.errstate(over="ignore"):
            out = -0.5 * (LN2PI + th + self._y2 * np.exp(-th))
        return out

    def log_local_prior(self, thetas, psi):
        mu, beta, sigma = psi[0], psi[1], psi[2]
        th = thetas[:, 0]
        v0 = sigma**2 / (1.0 - beta**2)
        d0 = th[0] - mu
        out = -0.5 * (LN2PI + math.log(v0) + d0 * d0 / v0)
        if th.size > 1:
            resid = th[1:] - mu - beta * (th[:-1] - mu)
            out += -0.5 * (
                (th.size - 1) * (LN2PI + 2.0 * math.log(sigma)) + float(resid @ resid) / sigma**2
            )
        return out

    # scalar fast hooks
    def local_context(self, psi):
        mu, beta, sigma = float(psi[0]), float(psi[1]), float(psi[2])
        v0 = sigma**2 / (1.0 - beta**2)
        return (
            mu,
            beta,
            -0.5 * (LN2PI + 2.0 * math.log(sigma)),
            0.5 / sigma**2,
            -0.5 * (LN2PI + math.log(v0)),
            0.5 / v0,
        )

    def initial_logpdf_scalar(self, x, ctx):
        d = x - ctx[0]
        return ctx[4] - d * d * ctx[5]

    def transition_logpdf_scalar(self, x, prev, ctx):
        d = x - ctx[0] - ctx[1] * (prev - ctx[0])
        return ctx[2] - d * d * ctx[3]

    def group_loglike_scalar(self, x, ctx, j):
        try:
            e = math.exp(-x)
        except OverflowError:
            return NEG_INF
        return -0.5 * (LN2PI + x + self._y2_list[j] * e)


# --- factory ------------------------------------------------------------------------


def make_model(name: str, **params) -> ModelSpec:
    """Build a benchmark model by name; data are regenerated deterministically
    from the config seed unless observations are supplied."""
    y = params.pop("y", None)
    if name == "hier_gauss":
        return HierGaussModel(HierGaussConfig(**params), y=y)
    if name == "funnel":
        if y is not None:
            raise ValueError("the funnel model has no observations")
        return FunnelModel(FunnelConfig(**params))
    if name == "sv":
        return SVModel(SVConfig(**params), y=y)
    raise ValueError(f"unknown model {name!r}; choose hier_gauss, funnel, or sv")
