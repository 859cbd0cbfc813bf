"""Model contract for factorized-likelihood targets.

A target model owns its data and exposes: a hyperprior over psi, a
conditional prior over each local block theta_j (iid groups or a Markov
chain over sites), and a per-group log-likelihood. The sampling kernels and
the nested-sampling engine only ever talk to this interface, so any model
with an additive log-likelihood plugs in unchanged.

Conventions:
  * log-densities are in nats; -inf means "outside support / zero likelihood"
    and is legal everywhere. NaN is always a bug and raises.
  * psi has shape (d_psi,) with d_psi >= 0; thetas has shape (J, d_theta).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CACHE_RTOL = 1e-9


class ModelContractError(RuntimeError):
    """An operation was called on a model that does not support it."""


class Structure(enum.Enum):
    IID = "iid"
    MARKOV = "markov"


@dataclass(frozen=True)
class ModelDims:
    """Dimension bookkeeping: d_total = d_psi + J * d_theta."""

    d_psi: int
    J: int
    d_theta: int

    def __post_init__(self):
        if self.d_psi < 0:
            raise ValueError("d_psi must be >= 0")
        if self.J < 1 or self.d_theta < 1:
            raise ValueError("J and d_theta must be >= 1")

    @property
    def d_total(self) -> int:
        return self.d_psi + self.J * self.d_theta


@dataclass
class ParamState:
    """One particle: parameters plus cached per-group log-likelihoods.

    `S` is kept equal to `ell.sum()` (to 1e-9 relative) at every module
    boundary; kernels update it incrementally and refresh it from `ell`
    at sweep boundaries to keep float drift bounded.
    """

    psi: np.ndarray
    thetas: np.ndarray
    ell: np.ndarray
    S: float
    log_prior: float

    def copy(self) -> "ParamState":
        return ParamState(
            self.psi.copy(), self.thetas.copy(), self.ell.copy(), self.S, self.log_prior
        )

    def flat(self) -> np.ndarray:
        """Full parameter vector (psi, theta_0, ..., theta_{J-1})."""
        return np.concatenate([self.psi, self.thetas.ravel()])

    def check_cache(self, rtol: float = CACHE_RTOL) -> None:
        total = float(self.ell.sum())
        if total == self.S:
            return
        tol = rtol * max(1.0, abs(self.S))
        if not abs(total - self.S) <= tol:
            raise AssertionError(
                f"cache drift: S={self.S!r} vs sum(ell)={total!r} (tol={tol:g})"
            )


def _check_not_nan(x: float, what: str) -> float:
    if x != x:
        raise FloatingPointError(f"NaN {what}: model bug upstream")
    return x


class ModelSpec:
    """Base class for factorized models.

    Subclasses set `dims`, `structure`, `name`, and implement the abstract
    pieces for their structure. Vectorized overrides (`all_group_loglike`,
    `log_local_prior`) and the scalar fast hooks are optional; the defaults
    fall back to the per-group contract.
    """

    name: str = "model"
    dims: ModelDims
    structure: Structure = Structure.IID
    analytic_logz: float | None = None

    # Recompute all J group likelihoods during psi updates even if the
    # likelihood does not depend on psi (emulates hyperparameter-dependent
    # likelihoods in the evaluation accounting).
    force_full_recompute_on_psi: bool = True
    likelihood_depends_on_psi: bool = False

    # --- hyperparameters -------------------------------------------------

    def log_prior_hyper(self, psi: np.ndarray) -> float:
        if self.dims.d_psi == 0:
            return 0.0
        raise NotImplementedError

    def sample_psi(self, rng: np.random.Generator) -> np.ndarray:
        if self.dims.d_psi == 0:
            return np.empty(0)
        raise NotImplementedError

    # --- local blocks: iid contract --------------------------------------

    def log_conditional_prior(self, theta_j: np.ndarray, psi: np.ndarray, j: int) -> float:
        if self.structure is Structure.MARKOV:
            raise ModelContractError(
                "log_conditional_prior is undefined for Markov-structured models; "
                "use log_blanket_prior"
            )
        raise NotImplementedError

    # --- local blocks: Markov contract -----------------------------------

    def log_initial_state(self, theta0: np.ndarray, psi: np.ndarray) -> float:
        raise ModelContractError("log_initial_state requires a Markov-structured model")

    def log_transition(self, theta_t: np.ndarray, theta_prev: np.ndarray, psi: np.ndarray) -> float:
        raise ModelContractError("log_transition requires a Markov-structured model")

    def log_blanket_prior(self, t: int, theta_window: tuple, psi: np.ndarray) -> float:
        """Conditional prior of site t given its chain neighbours.

        `theta_window` is (theta_{t-1}, theta_t, theta_{t+1}) truncated at the
        boundaries: (theta_0, theta_1) at t=0 and (theta_{T-2}, theta_{T-1})
        at t=T-1 (just (theta_0,) when T=1).
        """
        if self.structure is not Structure.MARKOV:
            raise ModelContractError("log_blanket_prior requires a Markov-structured model")
        T = self.dims.J
        if not 0 <= t < T:
            raise IndexError(f"site index {t} out of range for T={T}")
        if t == 0:
            out = self.log_initial_state(theta_window[0], psi)
            if T > 1:
                out += self.log_transition(theta_window[1], theta_window[0], psi)
            return out
        if t == T - 1:
            return self.log_transition(theta_window[1], theta_window[0], psi)
        prev, cur, nxt = theta_window
        return self.log_transition(cur, prev, psi) + self.log_transition(nxt, cur, psi)

    def sample_locals(self, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw all J local blocks from the conditional prior, shape (J, d_theta)."""
        raise NotImplementedError

    # --- likelihood -------------------------------------------------------

    def group_loglike(self, theta_j: np.ndarray, psi: np.ndarray, j: int) -> float:
        raise NotImplementedError

    def all_group_loglike(self, thetas: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """All J per-group log-likelihoods; override with a vectorized version."""
        if np.isnan(thetas).any() or (psi.size and np.isnan(psi).any()):
            raise FloatingPointError("NaN parameters: model bug upstream")
        return np.array(
            [self.group_loglike(thetas[j], psi, j) for j in range(self.dims.J)]
        )

    def log_local_prior(self, thetas: np.ndarray, psi: np.ndarray) -> float:
        """Joint conditional log-prior of all local blocks given psi."""
        if self.structure is Structure.MARKOV:
            out = self.log_initial_state(thetas[0], psi)
            for t in range(1, self.dims.J):
                out += self.log_transition(thetas[t], thetas[t - 1], psi)
            return out
        return float(
            sum(self.log_conditional_prior(thetas[j], psi, j) for j in range(self.dims.J))
        )

    def log_prior_total(self, psi: np.ndarray, thetas: np.ndarray) -> float:
        return self.log_prior_hyper(psi) + self.log_local_prior(thetas, psi)

    # --- scalar fast hooks (d_theta == 1 hot path) ------------------------
    #
    # local_context(psi) precomputes whatever the scalar hooks need (unpacked
    # floats, log-normalizers); kernels call it once per sweep. The defaults
    # shim through the array contract so custom models need not implement
    # them.

    def local_context(self, psi: np.ndarray):
        return psi

    def group_loglike_scalar(self, x: float, ctx, j: int) -> float:
        return self.group_loglike(np.array([x]), ctx, j)

    def conditional_logprior_scalar(self, x: float, ctx, j: int) -> float:
        return self.log_conditional_prior(np.array([x]), ctx, j)

    def initial_logpdf_scalar(self, x: float, ctx) -> float:
        return self.log_initial_state(np.array([x]), ctx)

    def transition_logpdf_scalar(self, x: float, prev: float, ctx) -> float:
        return self.log_transition(np.array([x]), np.array([prev]), ctx)

    # --- derived operations -----------------------------------------------

    def total_loglike(self, state: ParamState) -> tuple[float, np.ndarray]:
        """Fresh recomputation of all J terms and their sum (J group calls)."""
        ell = self.all_group_loglike(state.thetas, state.psi)
        return float(ell.sum()), ell

    def sample_prior(self, rng: np.random.Generator) -> ParamState:
        """One draw from the joint prior with likelihood caches populated."""
        psi = np.atleast_1d(np.asarray(self.sample_psi(rng), dtype=float))
        if self.dims.d_psi == 0:
            psi = np.empty(0)
        thetas = np.asarray(self.sample_locals(psi, rng), dtype=float).reshape(
            self.dims.J, self.dims.d_theta
        )
        ell = self.all_group_loglike(thetas, psi)
        lp = self.log_prior_total(psi, thetas)
        return ParamState(psi, thetas, ell, float(ell.sum()), _check_not_nan(lp, "log prior"))

    # --- optional analytics -------------------------------------------------

    def analytic_info_decomposition(self) -> dict | None:
        """Closed-form KL(posterior || prior) split, when the model has one."""
        return None


# --- observation files ------------------------------------------------------


def write_observations(path: str | Path, model_name: str, seed: int, values: np.ndarray) -> None:
    """Columnar observation file: `# model=<name> seed=<u64> J=<n>` then one row per obs."""
    values = np.asarray(values, dtype=float)
    lines = [f"# model={model_name} seed={seed} J={values.shape[0]}"]
    for v in np.atleast_1d(values):
        row = np.atleast_1d(v)
        lines.append(" ".join(format(x, ".17g") for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_observations(path: str | Path) -> tuple[dict, np.ndarray]:
    """Inverse of `write_observations`; returns (header fields, values)."""
    text = Path(path).read_text().strip().splitlines()
    header = text[0]
    if not header.startswith("# "):
        raise ValueError(f"missing observation header in {path}")
    meta: dict = {}
    for tok in header[2:].split():
        key, _, val = tok.partition("=")
        meta[key] = val
    meta["seed"] = int(meta["seed"])
    meta["J"] = int(meta["J"])
    rows = [[float(x) for x in line.split()] for line in text[1:] if line.strip()]
    values = np.array(rows)
    if values.shape[1] == 1:
        values = values[:, 0]
    if values.shape[0] != meta["J"]:
        raise ValueError(f"header J={meta['J']} but file has {values.shape[0]} rows")
    return meta, values
