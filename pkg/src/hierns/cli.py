"""Command line: experiment configuration, run orchestration, ablation
sweeps, scaling studies with log-log slope fits, the MMD two-sample
diagnostic, and plot-ready output emission.

Config files are flat typed key = value documents with one section per
module; unknown sections or keys are errors. All randomness derives from the
single [run] seed, split per (sweep point, repeat) with a counter scheme, so
sweeps reproduce independently of execution order.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmarks import FunnelConfig, HierGaussConfig, SVConfig, make_model
from .diagnostics import fit_power_law, mmd
from .engine import (
    NaNAbort,
    RunConfig,
    read_summary,
    run_nested_sampling,
    write_dead_points,
    write_summary,
    write_timing,
)
from .kernels import KernelConfig
from .models import write_observations
from .util import derive_seed


class ConfigError(ValueError):
    pass


MODEL_CONFIGS = {"hier_gauss": HierGaussConfig, "funnel": FunnelConfig, "sv": SVConfig}

_SCALAR_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": lambda s: {"true": True, "false": False}[s.lower()],
}


def _optional(parser):
    def parse(s: str):
        if s.lower() in ("none", ""):
            return None
        return parser(s)

    return parse


_RUN_FIELDS = {
    "m": int,
    "k": int,
    "epsilon": float,
    "kernel": str,
    "seed": int,
    "store_params_every": int,
    "n_workers": int,
    "pool_local_cov": _optional(_SCALAR_PARSERS["bool"]),
}

_KERNEL_FIELDS = {
    "M": int,
    "m_psi": _optional(int),
    "m_theta": _optional(int),
    "nss_steps": _optional(int),
    "shuffle_sweep": _SCALAR_PARSERS["bool"],
    "max_stepout": int,
    "max_shrink": int,
}

_EXPERIMENT_FIELDS = {"model": str, "repeats": int, "out": str}


def _model_fields(model: str) -> dict:
    cls = MODEL_CONFIGS.get(model)
    if cls is None:
        raise ConfigError(f"unknown model {model!r}; choose from {sorted(MODEL_CONFIGS)}")
    out = {}
    for f in dataclasses.fields(cls):
        parser = _SCALAR_PARSERS.get(f.type)
        if parser is None:
            raise ConfigError(f"unsupported field type {f.type} for model.{f.name}")
        out[f.name] = parser
    return out


@dataclass
class ExperimentConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    run: RunConfig = field(default_factory=RunConfig)
    repeats: int = 1
    out: str = "runs"
    sweep: list = field(default_factory=list)  # [(path, [values...]), ...]
    scaling_J: list = field(default_factory=list)
    scaling_kernels: list = field(default_factory=lambda: ["swig", "nss"])


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    known_sections = {"experiment", "model", "run", "kernel", "sweep", "scaling"}
    unknown = set(cp.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "experiment" not in cp or "model" not in cp["experiment"]:
        raise ConfigError("config must set model under [experiment]")

    def take(section: str, fields: dict) -> dict:
        got = {}
        if section not in cp:
            return got
        for key, raw in cp[section].items():
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                got[key] = fields[key](raw.strip())
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
        return got

    exp = take("experiment", _EXPERIMENT_FIELDS)
    model = exp["model"]
    model_params = take("model", _model_fields(model))
    run_kwargs = take("run", _RUN_FIELDS)
    kernel_kwargs = take("kernel", _KERNEL_FIELDS)

    try:
        run_cfg = RunConfig(kernel_cfg=KernelConfig(**kernel_kwargs), **run_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    cfg = ExperimentConfig(
        model=model,
        model_params=model_params,
        run=run_cfg,
        repeats=exp.get("repeats", 1),
        out=exp.get("out", "runs"),
    )
    if cfg.repeats < 1:
        raise ConfigError("repeats must be >= 1")

    if "sweep" in cp:
        for path, raw in cp["sweep"].items():
            parser = _sweep_parser(cfg, path)
            values = [parser(tok.strip()) for tok in raw.split(",") if tok.strip()]
            if not values:
                raise ConfigError(f"empty sweep list for {path}")
            cfg.sweep.append((path, values))

    if "scaling" in cp:
        allowed = {"J", "kernels"}
        unknown = set(cp["scaling"]) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in [scaling]: {sorted(unknown)}")
        if "J" in cp["scaling"]:
            cfg.scaling_J = [int(t) for t in cp["scaling"]["J"].split(",") if t.strip()]
        if "kernels" in cp["scaling"]:
            cfg.scaling_kernels = [t.strip() for t in cp["scaling"]["kernels"].split(",")]
            bad = set(cfg.scaling_kernels) - {"swig", "nss"}
            if bad:
                raise ConfigError(f"unknown kernels in [scaling]: {sorted(bad)}")
    return cfg


def _sweep_parser(cfg: ExperimentConfig, path: str):
    section, _, key = path.partition(".")
    table = {
        "run": _RUN_FIELDS,
        "kernel": _KERNEL_FIELDS,
        "model": _model_fields(cfg.model),
    }.get(section)
    if table is None or key not in table:
        raise ConfigError(f"sweep field {path!r} does not name an existing config field")
    return table[key]


def serialize_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str

    def put(section: str, items: dict):
        cp[section] = {k: _render(v) for k, v in items.items()}

    put("experiment", {"model": cfg.model, "repeats": cfg.repeats, "out": cfg.out})
    if cfg.model_params:
        put("model", cfg.model_params)
    run = cfg.run
    put(
        "run",
        {
            "m": run.m,
            "k": run.k,
            "epsilon": run.epsilon,
            "kernel": run.kernel,
            "seed": run.seed,
            "store_params_every": run.store_params_every,
            "n_workers": run.n_workers,
            "pool_local_cov": run.pool_local_cov,
        },
    )
    kc = run.kernel_cfg
    put(
        "kernel",
        {
            "M": kc.M,
            "m_psi": kc.m_psi,
            "m_theta": kc.m_theta,
            "nss_steps": kc.nss_steps,
            "shuffle_sweep": kc.shuffle_sweep,
            "max_stepout": kc.max_stepout,
            "max_shrink": kc.max_shrink,
        },
    )
    if cfg.sweep:
        cp["sweep"] = {path: ", ".join(_render(v) for v in values) for path, values in cfg.sweep}
    if cfg.scaling_J:
        cp["scaling"] = {
            "J": ", ".join(str(j) for j in cfg.scaling_J),
            "kernels": ", ".join(cfg.scaling_kernels),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _render(v) -> str:
    if v is None:
        return "None"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


# --- run orchestration ----------------------------------------------------------


def _apply_override(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    section, _, key = path.partition(".")
    if section == "run":
        return replace(cfg, run=replace(cfg.run, **{key: value}))
    if section == "kernel":
        return replace(cfg, run=replace(cfg.run, kernel_cfg=replace(cfg.run.kernel_cfg, **{key: value})))
    if section == "model":
        params = dict(cfg.model_params)
        params[key] = value
        return replace(cfg, model_params=params)
    raise ConfigError(f"cannot apply override {path!r}")


def _sweep_points(cfg: ExperimentConfig) -> list:
    """Cartesian product of sweep values: [(label, resolved config), ...]."""
    points = [("base", cfg)]
    for path, values in cfg.sweep:
        key = path.partition(".")[2]
        nxt = []
        for label, sub in points:
            for v in values:
                tag = f"{key}={_render(v)}"
                new_label = tag if label == "base" else f"{label}_{tag}"
                nxt.append((new_label, _apply_override(sub, path, v)))
        points = nxt
    return points


def run_experiment(cfg: ExperimentConfig) -> tuple[list[dict], list[str]]:
    """Execute (sweep points x repeats), writing one directory per run plus
    an aggregate table. Returns (aggregate rows, failure messages)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = []
    for point_idx, (label, pcfg) in enumerate(_sweep_points(cfg)):
        point_dir = out / label
        point_dir.mkdir(parents=True, exist_ok=True)
        try:
            model = make_model(pcfg.model, **pcfg.model_params)
        except Exception as exc:  # bad model point: record, move on
            failures.append(f"{label}: {exc!r}")
            continue
        if hasattr(model, "y"):
            write_observations(
                point_dir / "data.txt",
                model.name,
                pcfg.model_params.get("seed", 0),
                model.y,
            )
        stats = {"log_z": [], "sigma_hat": [], "equiv": [], "ess": [], "wall": []}
        for r in range(pcfg.repeats):
            seed_r = derive_seed(pcfg.run.seed, point_idx, r)
            run_cfg = replace(pcfg.run, seed=seed_r)
            run_dir = point_dir / f"seed_{seed_r}"
            run_dir.mkdir(parents=True, exist_ok=True)
            resolved = replace(pcfg, run=run_cfg, sweep=[])
            (run_dir / "config.txt").write_text(serialize_config(resolved))
            try:
                result = run_nested_sampling(model, run_cfg)
            except NaNAbort as exc:
                failures.append(f"{label}/seed_{seed_r}: {exc!r}")
                continue
            write_dead_points(run_dir / "dead.tsv", result, model)
            write_summary(run_dir / "summary.txt", result)
            write_timing(run_dir / "timing.txt", result)
            stats["log_z"].append(result.log_z)
            stats["sigma_hat"].append(result.sigma_hat)
            stats["equiv"].append(result.full_equivalents)
            stats["ess"].append(result.ess)
            stats["wall"].append(result.wall_seconds)
        if stats["log_z"]:
            row = {
                "label": label,
                "model": pcfg.model,
                "kernel": pcfg.run.kernel,
                "J": model.dims.J,
                "n_runs": len(stats["log_z"]),
                "logz_mean": float(np.mean(stats["log_z"])),
                "logz_std": float(np.std(stats["log_z"], ddof=1)) if len(stats["log_z"]) > 1 else 0.0,
                "sigma_hat_mean": float(np.mean(stats["sigma_hat"])),
                "equiv_mean": float(np.mean(stats["equiv"])),
                "ess_mean": float(np.mean(stats["ess"])),
                "wall_mean": float(np.mean(stats["wall"])),
                "analytic_logz": model.analytic_logz,
            }
            rows.append(row)
    _write_table(out / "aggregate.tsv", rows)
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n")
    return rows, failures


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(_render(row.get(c)) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def scaling_study(cfg: ExperimentConfig) -> dict:
    """Runs over the [scaling] J grid for each kernel and fits the log-log
    slope of full-likelihood equivalents against J."""
    if len(cfg.scaling_J) < 3:
        raise ConfigError("scaling study needs at least 3 J values")
    if cfg.model != "hier_gauss":
        raise ConfigError("the scaling study is defined on the hier_gauss model")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    points = []  # (kernel, J, equivalents) per run
    failures = []
    for kernel in cfg.scaling_kernels:
        for J in cfg.scaling_J:
            sub = _apply_override(cfg, "model.J", J)
            sub = _apply_override(sub, "run.kernel", kernel)
            sub = replace(sub, out=str(out / f"{kernel}_J{J}"), sweep=[])
            sub_rows, sub_failures = run_experiment(sub)
            failures.extend(sub_failures)
            rows.extend(sub_rows)
            for d in (Path(sub.out)).glob("*/seed_*/summary.txt"):
                s = read_summary(d)
                points.append((kernel, J, float(s["n_full_likelihood_equivalents"])))
    fits = {}
    report_lines = []
    for kernel in cfg.scaling_kernels:
        xs = np.array([p[1] for p in points if p[0] == kernel], dtype=float)
        ys = np.array([p[2] for p in points if p[0] == kernel], dtype=float)
        fit = fit_power_law(xs, ys)
        lo, hi = fit.ci95(len(xs))
        fits[kernel] = fit
        report_lines += [
            f"kernel = {kernel}",
            f"n_points = {len(xs)}",
            f"slope = {_render(fit.slope)}",
            f"stderr = {_render(fit.stderr)}",
            f"ci95_lo = {_render(lo)}",
            f"ci95_hi = {_render(hi)}",
            "",
        ]
    (out / "scaling_report.txt").write_text("\n".join(report_lines))
    _write_table(out / "aggregate.tsv", rows)
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n")
    return fits


# --- plot data -------------------------------------------------------------------


def emit_plotdata(run_root: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Aggregate run directories under `run_root` into plot-ready columns:
    evaluations / evidence error / runtime against J, posterior scatter for
    (psi, theta_0), and analytic contour parameters where available."""
    root = Path(run_root)
    out = Path(out_dir) if out_dir is not None else root / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    summaries = sorted(root.glob("**/summary.txt"))
    if not summaries:
        print(f"warning: no run summaries under {root}", file=sys.stderr)
        return []
    runs = []
    for path in summaries:
        s = read_summary(path)
        timing = path.parent / "timing.txt"
        s["wall_seconds"] = (
            float(read_summary(timing).get("wall_seconds", "nan")) if timing.exists() else float("nan")
        )
        s["_dir"] = path.parent
        runs.append(s)

    written = []
    groups: dict = {}
    for s in runs:
        groups.setdefault((s["model"], s["kernel"]), []).append(s)

    eval_rows, ev_rows, rt_rows = [], [], []
    for (model_name, kernel), rs in sorted(groups.items()):
        by_J: dict = {}
        for s in rs:
            by_J.setdefault(int(s["J"]), []).append(s)
        for J, ss in sorted(by_J.items()):
            eq = np.array([x["n_full_likelihood_equivalents"] for x in ss], dtype=float)
            lz = np.array([x["log_z"] for x in ss], dtype=float)
            sh = np.array([x["sigma_hat"] for x in ss], dtype=float)
            wl = np.array([x["wall_seconds"] for x in ss], dtype=float)
            base = {"model": model_name, "kernel": kernel, "J": J, "n_runs": len(ss)}
            eval_rows.append(base | {"equiv_mean": eq.mean(), "equiv_std": eq.std(ddof=1) if len(ss) > 1 else 0.0})
            analytic = ss[0].get("analytic_logz")
            err = lz - analytic if analytic is not None else np.full_like(lz, np.nan)
            ev_rows.append(
                base
                | {
                    "logz_mean": lz.mean(),
                    "logz_std": lz.std(ddof=1) if len(ss) > 1 else 0.0,
                    "sigma_hat_mean": sh.mean(),
                    "analytic_logz": analytic,
                    "err_mean": float(np.mean(err)),
                }
            )
            rt_rows.append(base | {"wall_mean": float(np.nanmean(wl)), "wall_std": float(np.nanstd(wl))})

    for name, rows in (
        ("evals_vs_J.tsv", eval_rows),
        ("evidence_vs_J.tsv", ev_rows),
        ("runtime_vs_J.tsv", rt_rows),
    ):
        _write_table(out / name, rows)
        written.append(out / name)

    # posterior scatter: first run per (model, kernel) with stored parameters
    for (model_name, kernel), rs in sorted(groups.items()):
        for s in rs:
            dead = s["_dir"] / "dead.tsv"
            if not dead.exists():
                continue
            scatter = _scatter_rows(dead, s)
            if scatter:
                p = out / f"scatter_{model_name}_{kernel}.tsv"
                p.write_text("psi theta0 weight\n" + "\n".join(scatter) + "\n")
                written.append(p)
                break

    written.extend(_emit_contours(runs, out))
    return written


def _scatter_rows(dead_path: Path, summary: dict) -> list[str]:
    d_psi = int(summary["d_total"]) - int(summary["J"])  # d_theta == 1 benchmarks
    if d_psi < 1:
        return []
    logz = float(summary["log_z"])
    rows = []
    with open(dead_path) as fh:
        header = fh.readline().split()
        n_meta = 4
        for line in fh:
            parts = line.split()
            if len(parts) <= n_meta:
                continue
            lw = float(parts[3])
            psi0 = float(parts[n_meta])
            theta0 = float(parts[n_meta + d_psi])
            rows.append(f"{psi0:.8g} {theta0:.8g} {np.exp(lw - logz):.8g}")
    return rows


def _emit_contours(runs: list[dict], out: Path) -> list[Path]:
    from .models import read_observations

    written = []
    seen = set()
    for s in runs:
        model_name = s["model"]
        if model_name in seen:
            continue
        cfg_path = s["_dir"] / "config.txt"
        if not cfg_path.exists():
            continue
        try:
            cfg = parse_config(cfg_path.read_text())
        except ConfigError:
            continue
        seen.add(model_name)
        if model_name == "hier_gauss":
            data_path = s["_dir"].parent / "data.txt"
            params = dict(cfg.model_params)
            if data_path.exists():
                _, y = read_observations(data_path)
                params["y"] = y
            model = make_model("hier_gauss", **params)
            mean, cov = model.joint_psi_theta0_posterior()
            p = out / "contour_hier_gauss.tsv"
            p.write_text(
                "mean_psi mean_theta0 var_psi cov_psi_theta0 var_theta0\n"
                f"{mean[0]:.10g} {mean[1]:.10g} {cov[0, 0]:.10g} {cov[0, 1]:.10g} {cov[1, 1]:.10g}\n"
            )
            written.append(p)
        elif model_name == "funnel":
            model = make_model("funnel", **cfg.model_params)
            psis = np.linspace(-9.0, 9.0, 121)
            thetas = np.linspace(-15.0, 15.0, 121)
            lines = ["psi theta0 logdensity"]
            for pv in psis:
                dens = model.posterior_logdensity_grid(np.full_like(thetas, pv), thetas)
                lines.extend(
                    f"{pv:.6g} {tv:.6g} {dv:.8g}" for tv, dv in zip(thetas, dens)
                )
            p = out / "contour_funnel.tsv"
            p.write_text("\n".join(lines) + "\n")
            written.append(p)
    return written


# --- entry point -------------------------------------------------------------------


def _load_samples(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(t) for t in line.split()])
            except ValueError:
                continue  # header line
    if not rows:
        raise ConfigError(f"no numeric rows in {path}")
    return np.array(rows)


def _apply_cli_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    if args.kernel is not None:
        cfg = replace(cfg, run=replace(cfg.run, kernel=args.kernel))
    if args.threads is not None:
        cfg = replace(cfg, run=replace(cfg.run, n_workers=args.threads))
    if args.repeats is not None:
        cfg = replace(cfg, repeats=args.repeats)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--kernel", choices=["swig", "nss"], default=None)
    p.add_argument("--threads", type=int, default=None)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="hierns")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep", "scaling"):
        _add_common(sub.add_parser(verb))
    mp = sub.add_parser("mmd")
    mp.add_argument("file_a")
    mp.add_argument("file_b")
    mp.add_argument("--subsample", type=int, default=1000)
    mp.add_argument("--repeats", type=int, default=5)
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--standardize", action="store_true")
    pp = sub.add_parser("plotdata")
    pp.add_argument("run_dir")
    pp.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    try:
        if args.verb in ("run", "sweep", "scaling"):
            text = Path(args.config).read_text()
            cfg = _apply_cli_overrides(parse_config(text), args)
            if args.verb == "run":
                if cfg.sweep:
                    raise ConfigError("config has a [sweep] section; use the sweep verb")
                rows, failures = run_experiment(cfg)
            elif args.verb == "sweep":
                if not cfg.sweep:
                    raise ConfigError("sweep verb needs a [sweep] section")
                rows, failures = run_experiment(cfg)
            else:
                fits = scaling_study(cfg)
                for kernel, fit in fits.items():
                    print(f"{kernel}: slope {fit.slope:.3f} +/- {fit.stderr:.3f}")
                failures = []
            for row in rows if args.verb != "scaling" else []:
                print(
                    f"{row['label']}: log_z {row['logz_mean']:.4f} "
                    f"(sigma_hat {row['sigma_hat_mean']:.4f}, {row['n_runs']} runs)"
                )
            if failures:
                print(f"{len(failures)} run(s) failed; see failures.txt", file=sys.stderr)
                return 1
            return 0
        if args.verb == "mmd":
            a = _load_samples(args.file_a)
            b = _load_samples(args.file_b)
            res = mmd(
                a,
                b,
                n_sub=args.subsample,
                repeats=args.repeats,
                rng=np.random.default_rng(args.seed),
                standardize=args.standardize,
            )
            print(
                f"mmd2 {res.value:.6e} bandwidth {res.bandwidth:.6g} "
                f"n {res.n_subsample} repeats {res.n_repeats} std {res.std_over_repeats:.3e}"
            )
            return 0
        if args.verb == "plotdata":
            written = emit_plotdata(args.run_dir, args.out)
            for p in written:
                print(p)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NaNAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
