"""Batch-deletion nested-sampling outer loop.

Maintains m live particles above a rising likelihood threshold; each
iteration deletes the k lowest, credits their evidence contributions under
the expected-compression quadrature rule, and regenerates them by mutating
surviving parents with a constrained kernel. The k mutations in an iteration
are independent given the frozen (threshold, covariance) snapshot and
pre-split random streams, so they can run across worker processes with
results merged deterministically by slot.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .kernels import KernelConfig, KernelCounters, nss_replace, swig_replace
from .models import ModelSpec, ParamState
from .slicing import BlockCovariance, estimate_block_cov
from .util import NEG_INF, log_diff_exp, stream

_MAX_ITERATIONS = 10_000_000

KERNELS = {"swig": swig_replace, "nss": nss_replace}


class NaNAbort(RuntimeError):
    """A NaN reached the live set; the run cannot continue."""


@dataclass
class RunConfig:
    m: int = 1000
    k: int = 50
    epsilon: float = -3.0
    kernel: str = "swig"
    seed: int = 0
    kernel_cfg: KernelConfig = field(default_factory=KernelConfig)
    store_params_every: int = 1
    n_workers: int = 1
    pool_local_cov: bool | None = None

    def __post_init__(self):
        if not 1 <= self.k < self.m:
            raise ValueError(f"need 1 <= k < m, got k={self.k}, m={self.m}")
        if not self.epsilon < 0:
            raise ValueError("termination threshold epsilon must be negative")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {sorted(KERNELS)}")


@dataclass
class DeadRecord:
    iteration: int
    log_like: float
    log_x: float
    log_weight: float
    params: np.ndarray | None = None


@dataclass
class EvidenceAccumulator:
    """Running evidence, prior volume, and information."""

    log_z: float = NEG_INF
    log_x: float = 0.0
    h: float = 0.0
    dead: list = field(default_factory=list)


@dataclass
class LiveSet:
    particles: list
    m: int
    cov: BlockCovariance | None = None


@dataclass
class RunResult:
    log_z: float
    sigma_hat: float
    h: float
    ess: float
    n_iterations: int
    n_group_calls: int
    full_equivalents: float
    stall_count: int
    wall_seconds: float
    dead: list
    counters: dict
    model_name: str
    analytic_logz: float | None
    config: RunConfig
    n_groups: int = 0
    d_total: int = 0

    def log_weights(self) -> np.ndarray:
        return np.array([d.log_weight for d in self.dead])

    def posterior_samples(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Equal-weight posterior draws by resampling stored dead points."""
        stored = [d for d in self.dead if d.params is not None]
        if not stored:
            raise ValueError("no stored parameters; set store_params_every >= 1")
        lw = np.array([d.log_weight for d in stored])
        w = np.exp(lw - logsumexp(lw))
        idx = rng.choice(len(stored), size=n, p=w / w.sum())
        return np.stack([stored[i].params for i in idx])


# --- core operations ---------------------------------------------------------


def select_batch(log_likes: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Indices of the k lowest log-likelihoods (ascending; ties by index
    order) and the k-th lowest value, which becomes the new threshold."""
    log_likes = np.asarray(log_likes)
    if k >= log_likes.size:
        raise ValueError("k must be smaller than the live-set size")
    order = np.argsort(log_likes, kind="stable")
    dead = order[:k]
    return dead, float(log_likes[dead[-1]])


def compress_volume(log_x: float, m: int, k: int) -> tuple[np.ndarray, float]:
    """Expected log-compression for a batch of k deletions without
    replacement: the i-th deleted point is assigned
    log_x - sum_{r<=i} 1/(m-r); reduces to the classic 1/m rule at k=1."""
    if k >= m:
        raise ValueError("k must be smaller than m")
    steps = 1.0 / (m - np.arange(k))
    assigned = log_x - np.cumsum(steps)
    return assigned, float(assigned[-1])


def update_evidence(
    acc: EvidenceAccumulator, ell_batch: np.ndarray, log_x_batch: np.ndarray
) -> np.ndarray:
    """Fold a dead batch (ascending likelihood, decreasing volume) into the
    running evidence and information. Returns the batch log-weights."""
    n = len(ell_batch)
    lws = np.empty(n)
    prev = acc.log_x
    for i in range(n):
        lvol = log_diff_exp(prev, log_x_batch[i])
        ell = ell_batch[i]
        lws[i] = lvol + ell if ell > NEG_INF else NEG_INF
        prev = log_x_batch[i]

    finite = lws > NEG_INF
    if finite.any():
        batch_lse = float(logsumexp(lws[finite]))
        lz_new = float(np.logaddexp(acc.log_z, batch_lse))
        t1 = float(np.sum(np.exp(lws[finite] - lz_new) * np.asarray(ell_batch)[finite]))
        t2 = 0.0
        if acc.log_z > NEG_INF:
            t2 = math.exp(acc.log_z - lz_new) * (acc.h + acc.log_z)
        acc.h = t1 + t2 - lz_new
        acc.log_z = lz_new
    acc.log_x = float(log_x_batch[-1])
    return lws


def termination_check(acc: EvidenceAccumulator, max_live_loglike: float, epsilon: float) -> bool:
    """Stop once the best-case remaining live contribution is negligible:
    log_x + max live log-likelihood - log_z < epsilon."""
    return acc.log_x + max_live_loglike - acc.log_z < epsilon


def finalize(
    acc: EvidenceAccumulator,
    live: list,
    m: int,
    n_iterations: int,
    store_params_every: int,
) -> None:
    """Append the remaining live points as dead records with the final
    volume split equally (X_t / m each), then close the accumulator."""
    order = np.argsort([p.S for p in live], kind="stable")
    lx_end = acc.log_x
    log_m = math.log(m)
    ell_batch = np.array([live[i].S for i in order])
    lx_batch = np.array(
        [lx_end + math.log((m - i) / m) if i < m else NEG_INF for i in range(1, m + 1)]
    )
    lws = update_evidence(acc, ell_batch, lx_batch)
    base = len(acc.dead)
    for pos, i in enumerate(order):
        idx = base + pos
        params = live[i].flat() if _store(idx, store_params_every) else None
        acc.dead.append(
            DeadRecord(n_iterations, float(live[i].S), float(lx_batch[pos]), float(lws[pos]), params)
        )


def _store(idx: int, every: int) -> bool:
    return every > 0 and idx % every == 0


def ess_from_log_weights(lw: np.ndarray) -> float:
    lw = lw[lw > NEG_INF]
    if lw.size == 0:
        return 0.0
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


# --- parallel mutation --------------------------------------------------------


def _mutate_jobs(args):
    model, kernel_name, kcfg, lstar, cov, jobs, audit = args
    replace = KERNELS[kernel_name]
    out = []
    for slot, parent, seed, key in jobs:
        rng = stream(seed, *key)
        state, cnt = replace(parent, lstar, cov, model, kcfg, rng, audit)
        out.append((slot, state, cnt))
    return out


def _run_mutations(executor, model, cfg, lstar, cov, jobs, audit):
    args = (model, cfg.kernel, cfg.kernel_cfg, lstar, cov, jobs, audit)
    if executor is None:
        return _mutate_jobs(args)
    n = max(1, cfg.n_workers)
    chunks = [jobs[i::n] for i in range(n)]
    futures = [
        executor.submit(_mutate_jobs, (model, cfg.kernel, cfg.kernel_cfg, lstar, cov, c, audit))
        for c in chunks
        if c
    ]
    results = []
    for f in futures:
        results.extend(f.result())
    results.sort(key=lambda r: r[0])
    return results


# --- the outer loop -----------------------------------------------------------


def run_nested_sampling(model: ModelSpec, cfg: RunConfig, audit: bool = False) -> RunResult:
    """Full batch-deletion run; deterministic given cfg.seed (independent of
    n_workers). Aborts only on NaN."""
    t0 = time.perf_counter()
    m, k = cfg.m, cfg.k
    J = model.dims.J
    d_psi = model.dims.d_psi

    particles = [model.sample_prior(stream(cfg.seed, 0, i)) for i in range(m)]
    n_group_calls = m * J  # cache initialization: one full evaluation per draw
    counters = KernelCounters()
    clone_events = 0

    S_vec = np.array([p.S for p in particles])
    if np.isnan(S_vec).any():
        raise NaNAbort("NaN log-likelihood among prior draws")

    acc = EvidenceAccumulator()
    executor = None
    if cfg.n_workers > 1:
        import multiprocessing

        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:  # platforms without fork
            ctx = multiprocessing.get_context()
        executor = ProcessPoolExecutor(max_workers=cfg.n_workers, mp_context=ctx)

    it = 0
    try:
        while True:
            if it > 0 and termination_check(acc, float(S_vec.max()), cfg.epsilon):
                break
            if it >= _MAX_ITERATIONS:
                raise RuntimeError("iteration guard tripped; check the configuration")

            psis = (
                np.stack([p.psi for p in particles]) if d_psi else None
            )
            thetas = np.stack([p.thetas for p in particles])
            cov = estimate_block_cov(psis, thetas, cfg.pool_local_cov)

            dead_idx, lstar = select_batch(S_vec, k)
            assigned, _ = compress_volume(acc.log_x, m, k)
            ell_batch = S_vec[dead_idx]
            lws = update_evidence(acc, ell_batch, assigned)
            base = len(acc.dead)
            for pos, idx in enumerate(dead_idx):
                rec_idx = base + pos
                params = (
                    particles[idx].flat() if _store(rec_idx, cfg.store_params_every) else None
                )
                acc.dead.append(
                    DeadRecord(it, float(ell_batch[pos]), float(assigned[pos]), float(lws[pos]), params)
                )

            dead_set = set(int(i) for i in dead_idx)
            survivors = [i for i in range(m) if i not in dead_set]
            rs = stream(cfg.seed, 1, it, 0)
            parent_ids = rs.integers(0, m - k, size=k)

            jobs = []
            clones = []
            for slot in range(k):
                parent = particles[survivors[int(parent_ids[slot])]]
                if parent.S > lstar:
                    jobs.append((slot, parent, cfg.seed, (1, it, 1 + slot)))
                else:
                    # Tie-degenerate parent (S == lstar); no feasible moves
                    # exist, so keep a clone and record the stall.
                    clones.append((slot, parent.copy()))
            results = _run_mutations(executor, model, cfg, lstar, cov, jobs, audit)
            clone_events += len(clones)

            new_states = {slot: state for slot, state, _ in results}
            for slot, state, cnt in results:
                counters.merge(cnt)
            for slot, state in clones:
                new_states[slot] = state

            for slot in range(k):
                state = new_states[slot]
                if state.S != state.S:
                    raise NaNAbort(f"NaN total log-likelihood at iteration {it}, slot {slot}")
                tgt = int(dead_idx[slot])
                particles[tgt] = state
                S_vec[tgt] = state.S
            it += 1
    finally:
        if executor is not None:
            executor.shutdown()

    finalize(acc, particles, m, it, cfg.store_params_every)
    n_group_calls += counters.group_calls
    lw_all = np.array([d.log_weight for d in acc.dead])
    h = acc.h
    sigma_hat = math.sqrt(max(h, 0.0) / m)
    wall = time.perf_counter() - t0

    counter_dict = counters.as_dict()
    counter_dict["init_group_calls"] = m * J
    counter_dict["clone_events"] = clone_events

    return RunResult(
        log_z=acc.log_z,
        sigma_hat=sigma_hat,
        h=h,
        ess=ess_from_log_weights(lw_all),
        n_iterations=it,
        n_group_calls=n_group_calls,
        full_equivalents=n_group_calls / J,
        stall_count=counters.stalls + clone_events,
        wall_seconds=wall,
        dead=acc.dead,
        counters=counter_dict,
        model_name=model.name,
        analytic_logz=model.analytic_logz,
        config=cfg,
        n_groups=J,
        d_total=model.dims.d_total,
    )


# --- information decomposition -------------------------------------------------


@dataclass
class InfoReport:
    h_run: float
    h_psi: float | None = None
    h_locals: np.ndarray | None = None
    h_analytic_total: float | None = None


def info_decomposition_report(model: ModelSpec, result: RunResult) -> InfoReport:
    """Total information from the run plus, when the model provides one, the
    closed-form split into hyperparameter and per-group contributions."""
    parts = model.analytic_info_decomposition()
    if parts is None:
        return InfoReport(h_run=result.h)
    return InfoReport(
        h_run=result.h,
        h_psi=parts["h_psi"],
        h_locals=np.asarray(parts["h_locals"]),
        h_analytic_total=parts["h_total"],
    )


# --- file output ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(x, ".17g")


def param_names(model: ModelSpec) -> list[str]:
    names = [f"psi_{i}" for i in range(model.dims.d_psi)]
    for j in range(model.dims.J):
        if model.dims.d_theta == 1:
            names.append(f"theta_{j}")
        else:
            names.extend(f"theta_{j}_{a}" for a in range(model.dims.d_theta))
    return names


def write_dead_points(path: str | Path, result: RunResult, model: ModelSpec) -> None:
    """Columnar dead-point file; parameter columns only on thinned rows."""
    cols = ["iteration", "log_like", "log_x", "log_weight"] + param_names(model)
    lines = [" ".join(cols)]
    for d in result.dead:
        row = [str(d.iteration), _fmt(d.log_like), _fmt(d.log_x), _fmt(d.log_weight)]
        if d.params is not None:
            row.extend(_fmt(v) for v in d.params)
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def summary_fields(result: RunResult) -> dict:
    cfg = result.config
    out = {
        "model": result.model_name,
        "kernel": cfg.kernel,
        "seed": cfg.seed,
        "J": result.n_groups,
        "d_total": result.d_total,
        "log_z": result.log_z,
        "sigma_hat": result.sigma_hat,
        "h": result.h,
        "ess": result.ess,
        "n_iterations": result.n_iterations,
        "n_group_calls": result.n_group_calls,
        "n_full_likelihood_equivalents": result.full_equivalents,
        "stall_count": result.stall_count,
        "m": cfg.m,
        "k": cfg.k,
        "epsilon": cfg.epsilon,
        "store_params_every": cfg.store_params_every,
        "M": cfg.kernel_cfg.M,
        "m_psi": cfg.kernel_cfg.m_psi,
        "m_theta": cfg.kernel_cfg.m_theta,
        "nss_steps": cfg.kernel_cfg.nss_steps,
    }
    if result.analytic_logz is not None:
        out["analytic_logz"] = result.analytic_logz
    for key, val in sorted(result.counters.items()):
        out[f"counter_{key}"] = val
    return out


def write_summary(path: str | Path, result: RunResult) -> None:
    """Deterministic run summary (wall time goes to a separate timing file,
    keeping this byte-reproducible for a fixed seed)."""
    lines = []
    for key, val in summary_fields(result).items():
        if isinstance(val, float):
            lines.append(f"{key} = {_fmt(val)}")
        else:
            lines.append(f"{key} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_timing(path: str | Path, result: RunResult) -> None:
    Path(path).write_text(f"wall_seconds = {result.wall_seconds:.6f}\n")


def read_summary(path: str | Path) -> dict:
    out: dict = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, val = line.partition(" = ")
        try:
            parsed: object = int(val)
        except ValueError:
            try:
                parsed = float(val)
            except ValueError:
                parsed = None if val == "None" else val
        out[key] = parsed
    return out
