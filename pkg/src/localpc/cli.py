"""Configuration-driven experiment runner.

Each subcommand is one pipeline stage and reads/writes plain-text files in the
output directory::

    localpc synthesize-data --config configs/source_paper.cfg --out runs/source
    localpc build-surrogate --config ... --out runs/source
    localpc adapt           --config ... --out runs/source
    localpc sample          --config ... --out runs/source
    localpc analyze         --config ... --out runs/source

Exit status: 0 on success, 2 for configuration errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import (BiasingParams, CEConfig, DegenerateBatchError, MissedPosteriorError,
                       RuleSpec, load_biasing, run, save_biasing, save_trace)
from .analysis import (CoverageError, batch_means_se, flux_moments, kde2, kl_divergence_2d,
                       make_grid, write_kde, write_matrix, write_moments, write_table)
from .bayes import GaussianLikelihood, Posterior, Prior
from .mcmc import autocorrelation, dram, ess, first_lag_below, independence_sampler, load_chain, save_chain
from .models import (FunctionModel, HeatModel, HeatModelConfig, SolverError, SourceModel,
                     SourceModelConfig, synthesize)
from .polychaos import ModelEvaluationError, load_surrogate, project, save_surrogate
from .polynomials import total_order_set
from .quadrature import SparseGridSpec, smolyak_rule

log = logging.getLogger("localpc")

SEED_OFFSETS = {"synthesize-data": 0, "build-surrogate": 100, "adapt": 200, "sample": 300,
                "analyze": 400}

DATA_FILE = "data.tsv"
PRIOR_SURROGATE_FILE = "surrogate_prior.pc"
ADAPTIVE_SURROGATE_FILE = "surrogate_adaptive.pc"
BIASING_FILE = "biasing.tsv"
TRACE_FILE = "trace.tsv"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


NUMERICAL_ERRORS = (SolverError, ModelEvaluationError, DegenerateBatchError, MissedPosteriorError,
                    np.linalg.LinAlgError, FloatingPointError, CoverageError)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


@dataclass
class Experiment:
    cfg: configparser.ConfigParser
    path: Path
    seed: int

    def get(self, section: str, key: str, fallback=None) -> str:
        if self.cfg.has_option(section, key):
            return self.cfg.get(section, key)
        if fallback is None:
            raise ConfigError(f"missing [{section}] {key}")
        return fallback

    def getint(self, section, key, fallback=None) -> int:
        try:
            return int(float(self.get(section, key, None if fallback is None else str(fallback))))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be an integer") from exc

    def getfloat(self, section, key, fallback=None) -> float:
        try:
            return float(self.get(section, key, None if fallback is None else str(fallback)))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be a number") from exc

    def getfloats(self, section, key, fallback=None) -> np.ndarray:
        return _floats(self.get(section, key, fallback))

    def getbool(self, section, key, fallback: bool) -> bool:
        if not self.cfg.has_option(section, key):
            return fallback
        try:
            return self.cfg.getboolean(section, key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be a boolean") from exc

    @property
    def problem(self) -> str:
        p = self.get("experiment", "problem")
        if p not in ("source", "heat", "custom"):
            raise ConfigError(f"unknown problem {p!r}")
        return p

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    def hash(self) -> str:
        h = hashlib.sha256(self.path.read_bytes())
        h.update(str(self.seed).encode())
        return h.hexdigest()


def load_experiment(path, seed: int | None = None) -> Experiment:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cfg.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    exp = Experiment(cfg, path, 0)
    exp.seed = seed if seed is not None else exp.getint("experiment", "seed", 0)
    exp.problem  # validate early
    return exp


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------

def make_model(exp: Experiment, fine: bool = False):
    p = exp.problem
    factor = exp.getint("data", "refine", 2) if fine else 1
    if p == "source":
        cfg = SourceModelConfig(
            strength=exp.getfloat("model", "strength", 2.0),
            width=exp.getfloat("model", "width", 0.05),
            tau=exp.getfloat("model", "tau", 0.3),
            sensors_1d=tuple(exp.getfloats("model", "sensors", "0 0.5 1")),
            times=tuple(exp.getfloats("model", "times", "0.1 0.2")),
            n_nodes=exp.getint("model", "n_nodes", 51),
            dt=exp.getfloat("model", "dt", 5e-4))
        return SourceModel(cfg.refined(factor) if factor > 1 else cfg)
    if p == "heat":
        cfg = HeatModelConfig(
            sensor=exp.getfloat("model", "sensor", 0.4),
            n_times=exp.getint("model", "n_times", 50),
            n_modes=exp.getint("model", "n_modes", 4),
            n_nodes=exp.getint("model", "n_nodes", 101),
            dt=exp.getfloat("model", "dt", 1e-3),
            scheme=exp.get("model", "scheme", "bdf2"))
        return HeatModel(cfg.refined(factor) if factor > 1 else cfg)
    # custom: linear map G(y) = A y
    A = np.atleast_2d(exp.getfloats("model", "matrix", "1"))
    n_in = exp.getint("model", "n_inputs", A.size if A.shape[0] == 1 and A.size == 1 else 1)
    A = A.reshape(-1, n_in)
    return FunctionModel(lambda y: y @ A.T, n_in, A.shape[0], vectorized=True)


def make_prior(exp: Experiment) -> Prior:
    kind = exp.get("prior", "kind")
    if kind == "uniform":
        return Prior.uniform(exp.getfloats("prior", "lower"), exp.getfloats("prior", "upper"))
    if kind == "gaussian":
        mean = exp.getfloats("prior", "mean")
        var = exp.getfloats("prior", "variance")
        return Prior.gaussian(mean, var if var.size > 1 else float(var[0]))
    raise ConfigError(f"unknown prior kind {kind!r}")


def parameter_names(exp: Experiment, dim: int) -> list[str]:
    if exp.problem == "source":
        return ["x1", "x2"]
    if exp.problem == "heat":
        nm = (dim - 1) // 2
        return ["a_0"] + [f"a_{j}" for j in range(1, nm + 1)] + [f"b_{j}" for j in range(1, nm + 1)]
    return [f"y{j + 1}" for j in range(dim)]


def _data_rows(exp: Experiment, model, values: np.ndarray):
    """Rows (t, sensor_index, value) in model output order."""
    if isinstance(model, SourceModel):
        times = np.asarray(model.config.times)
        n_s = len(model.config.sensors_1d) ** 2
        t = np.tile(times, n_s)
        s = np.repeat(np.arange(n_s), times.size)
    elif isinstance(model, HeatModel):
        t = model.config.obs_times
        s = np.zeros(t.size, dtype=int)
    else:
        t = np.zeros(values.size)
        s = np.arange(values.size)
    return t, s


def load_data(out: Path) -> np.ndarray:
    path = out / DATA_FILE
    if not path.exists():
        raise ConfigError(f"{path} not found; run synthesize-data first")
    return np.loadtxt(path, ndmin=2)[:, 2]


def make_likelihood(exp: Experiment, out: Path) -> GaussianLikelihood:
    return GaussianLikelihood(load_data(out), exp.getfloat("likelihood", "sigma"))


def rule_spec(exp: Experiment, section: str, prefix: str = "") -> RuleSpec:
    return RuleSpec(kind=exp.get(section, prefix + "rule_kind", "smolyak"),
                    level=exp.getint(section, prefix + "level", 3),
                    rule=exp.get(section, prefix + "rule", "gauss-hermite"))


def ce_config(exp: Experiment, seed: int) -> CEConfig:
    s = "adaptive"
    final_rule = rule_spec(exp, s, "final_") if exp.cfg.has_option(s, "final_level") else None
    delta = exp.getfloat(s, "delta") if exp.cfg.has_option(s, "delta") else None
    try:
        return CEConfig(
            rho=exp.getfloat(s, "rho", 0.05), gamma=exp.getfloat(s, "gamma", 1e-3),
            delta=delta, delta_fraction=exp.getfloat(s, "delta_fraction", 0.1),
            n_samples=exp.getint(s, "n_samples", 50_000), max_iter=exp.getint(s, "max_iter", 50),
            order=exp.getint(s, "order", 2), rule=rule_spec(exp, s),
            final_order=exp.getint(s, "final_order") if exp.cfg.has_option(s, "final_order") else None,
            final_rule=final_rule, sigma_min=exp.getfloat(s, "sigma_min", 1e-6),
            min_ess=exp.getfloat(s, "min_ess", 10), extra_passes=exp.getint(s, "extra_passes", 0),
            lambda_reference=exp.get(s, "lambda_reference", "peak"), seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _update_manifest(exp: Experiment, out: Path, stage: str, outputs: list[Path],
                     model_evals: int | None, seconds: float, extra: dict | None = None) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest.update({"config": str(exp.path), "config_sha256": exp.hash(), "seed": exp.seed,
                     "version": __version__})
    entry = {"outputs": sorted(p.name for p in outputs), "seed": exp.stage_seed(stage)}
    if model_evals is not None:
        entry["model_evals"] = int(model_evals)
    if extra:
        entry.update(extra)
    manifest.setdefault("stages", {})[stage] = entry
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    # wall times vary run to run, so they live outside the manifest
    tpath = out / "timings.json"
    timings = json.loads(tpath.read_text()) if tpath.exists() else {}
    timings[stage] = round(seconds, 3)
    tpath.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_synthesize_data(exp: Experiment, out: Path) -> list[Path]:
    if not exp.cfg.has_option("data", "truth"):
        raise ConfigError("missing [data] truth (true parameters)")
    truth = exp.getfloats("data", "truth")
    sigma = exp.getfloat("data", "noise_sigma", exp.getfloat("likelihood", "sigma", 0.0))
    model = make_model(exp, fine=True)
    if truth.size != model.n_inputs:
        raise ConfigError(f"truth has {truth.size} entries, model takes {model.n_inputs}")
    seed = exp.stage_seed("synthesize-data")
    clean, noisy = synthesize(model, truth, sigma, seed)
    t, s = _data_rows(exp, model, noisy)
    path = out / DATA_FILE
    np.savetxt(path, np.column_stack([t, s, noisy]), fmt=["%.10e", "%d", "%.16e"], delimiter="\t",
               header="t\tsensor_index\tvalue", comments="# ")
    prov = out / "data_provenance.json"
    info = {"truth": truth.tolist(), "noise_sigma": sigma, "seed": seed,
            "model": type(model).__name__,
            "mesh": getattr(getattr(model, "config", None), "n_nodes", None),
            "dt": getattr(getattr(model, "config", None), "dt", None)}
    prov.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return [path, prov]


def cmd_build_surrogate(exp: Experiment, out: Path):
    s = "surrogate"
    prior = make_prior(exp)
    model = make_model(exp)
    spec = SparseGridSpec(prior.dim, exp.getint(s, "level"),
                          exp.get(s, "rule", "gauss-hermite" if prior.dist._normal.all()
                                  else "clenshaw-curtis"),
                          exp.get(s, "growth", ""))
    sur = project(model, prior.dist, total_order_set(prior.dim, exp.getint(s, "order")),
                  smolyak_rule(spec))
    path = out / PRIOR_SURROGATE_FILE
    save_surrogate(sur, path)
    log.info("prior surrogate: %d terms, %d model evaluations", len(sur.index_set), sur.n_model_evals)
    return [path], sur.n_model_evals


def cmd_adapt(exp: Experiment, out: Path):
    prior = make_prior(exp)
    model = make_model(exp)
    lik = make_likelihood(exp, out)
    config = ce_config(exp, exp.stage_seed("adapt"))
    mu0 = exp.getfloats("adaptive", "initial_mu", " ".join(map(str, prior.mean())))
    sd0 = exp.getfloats("adaptive", "initial_sigma", " ".join(map(str, prior.std())))
    initial = BiasingParams(np.broadcast_to(mu0, (prior.dim,)), np.broadcast_to(sd0, (prior.dim,)))
    res = run(model, prior, lik, config, initial)
    paths = [out / TRACE_FILE, out / BIASING_FILE, out / ADAPTIVE_SURROGATE_FILE]
    save_trace(res.trace, paths[0])
    save_biasing(res.biasing, paths[1])
    save_surrogate(res.surrogate, paths[2])
    return paths, res.model_evals, {"iterations": res.iterations}


def _chain_specs(exp: Experiment) -> list[tuple[str, str]]:
    specs = []
    for item in exp.get("sample", "chains").replace(",", " ").split():
        target, _, sampler = item.partition(":")
        if target not in ("exact", "adaptive", "prior") or sampler not in ("independence", "dram"):
            raise ConfigError(f"bad chain spec {item!r}; use <exact|adaptive|prior>:<independence|dram>")
        specs.append((target, sampler))
    return specs


def _target_model(exp: Experiment, out: Path, target: str):
    if target == "exact":
        return make_model(exp)
    name = ADAPTIVE_SURROGATE_FILE if target == "adaptive" else PRIOR_SURROGATE_FILE
    path = out / name
    if not path.exists():
        raise ConfigError(f"{path} not found; run the stage that builds it first")
    return load_surrogate(path)


def cmd_sample(exp: Experiment, out: Path):
    s = "sample"
    prior = make_prior(exp)
    lik = make_likelihood(exp, out)
    n_steps = exp.getint(s, "n_steps")
    burn_in = exp.getint(s, "burn_in", 10_000)
    if (out / BIASING_FILE).exists():
        v = load_biasing(out / BIASING_FILE)
    else:
        v = BiasingParams(prior.mean(), prior.std())
    inflate = exp.getfloat(s, "proposal_inflation", 1.0)
    proposal = BiasingParams(v.mu, v.sigma * inflate)
    cov0 = np.diag(v.sigma**2) * 2.38**2 / prior.dim
    names = parameter_names(exp, prior.dim)
    paths, evals, rates = [], 0, {}
    base = exp.stage_seed(s)
    for k, (target, sampler) in enumerate(_chain_specs(exp)):
        model = _target_model(exp, out, target)
        post = Posterior(prior, lik, model)
        seed = base + k
        if sampler == "independence":
            chain = independence_sampler(post, proposal, n_steps, seed=seed, burn_in=burn_in)
        else:
            chain = dram(post, v.mu, cov0, n_steps, seed=seed, burn_in=burn_in,
                         dr_shrink=exp.getfloat(s, "dr_shrink", 0.25))
        if target == "exact":
            evals += model.n_evals
        path = out / f"chain_{target}_{sampler}.tsv"
        paths += [path, save_chain(chain, path, names)]
        rates[f"{target}:{sampler}"] = round(chain.acceptance_rate, 6)
    return paths, evals, {"acceptance_rates": rates}


def _pair_list(exp: Experiment, names: list[str]) -> list[tuple[int, int]]:
    pairs = []
    for item in exp.get("analyze", "pairs", "").split(";"):
        if not item.strip():
            continue
        a, b = (v.strip() for v in item.split(","))
        try:
            pairs.append((names.index(a), names.index(b)))
        except ValueError as exc:
            raise ConfigError(f"unknown parameter in pair {item!r}") from exc
    return pairs


def cmd_analyze(exp: Experiment, out: Path):
    s = "analyze"
    ref_name = exp.get(s, "reference")
    ref_path = out / f"chain_{ref_name.replace(':', '_')}.tsv"
    if not ref_path.exists():
        raise ConfigError(f"reference chain {ref_path} not found")
    ref, names = load_chain(ref_path)
    # chain files carry a metadata sibling; that tells them apart from chain_stats.tsv
    others = sorted(p for p in out.glob("chain_*.tsv")
                    if p != ref_path and p.with_name(p.name + ".meta").exists())
    chains = {ref_name: ref}
    for p in others:
        c, _ = load_chain(p)
        chains[p.stem[len("chain_"):].replace("_", ":", 1)] = c
    pairs = _pair_list(exp, names)
    n_boot = exp.getint(s, "n_boot", 20)
    seed = exp.stage_seed(s)
    paths, rows = [], []
    for i, j in pairs:
        for label, c in chains.items():
            kde = kde2(c.kept()[:, [i, j]], make_grid(ref.kept()[:, [i, j]], c.kept()[:, [i, j]]))
            kp = out / f"kde_{label.replace(':', '_')}_{names[i]}_{names[j]}.tsv"
            write_kde(kde, kp, (names[i], names[j]))
            paths.append(kp)
            if label == ref_name:
                continue
            r = kl_divergence_2d(ref.kept()[:, [i, j]], c.kept()[:, [i, j]], n_boot=n_boot, seed=seed)
            rows.append({"chain": label, "pair": f"{names[i]},{names[j]}", "kl": r.value,
                         "kl_se": r.stderr})
    if rows:
        paths.append(out / "kl_table.tsv")
        write_table(rows, paths[-1])
    if exp.problem == "heat":
        t = np.linspace(0.0, 1.0, exp.getint(s, "n_flux_times", 50))
        for label, c in chains.items():
            m = flux_moments(c.kept(), t)
            tag = label.replace(":", "_")
            paths += [out / f"moments_{tag}.tsv", out / f"autocov_{tag}.tsv"]
            write_moments(m, paths[-2], batch_means_se(c.kept(), t))
            write_matrix(m.autocov, paths[-1], "flux autocovariance on t = " + " ".join(f"{v:g}" for v in t))
    param = exp.get(s, "autocorr_parameter", names[min(1, len(names) - 1)])
    k = names.index(param)
    max_lag = exp.getint(s, "max_lag", 1000)
    cols, header, stats = [np.arange(max_lag + 1)], ["lag"], []
    for label, c in chains.items():
        x = c.kept()[:, k]
        rho = autocorrelation(x, min(max_lag, x.size - 1))
        cols.append(np.pad(rho, (0, max_lag + 1 - rho.size), constant_values=np.nan))
        header.append(label)
        stats.append({"chain": label, "acceptance": c.acceptance_rate, "ess": ess(x),
                      "lag_below_0.1": first_lag_below(rho)})
    paths.append(out / f"autocorr_{param}.tsv")
    write_matrix(np.column_stack(cols), paths[-1], "\t".join(header))
    paths.append(out / "chain_stats.tsv")
    write_table(stats, paths[-1])
    return paths, None


STAGES = {
    "synthesize-data": cmd_synthesize_data,
    "build-surrogate": cmd_build_surrogate,
    "adapt": cmd_adapt,
    "sample": cmd_sample,
    "analyze": cmd_analyze,
}


def run_stage(stage: str, config, out, seed: int | None = None) -> None:
    """Run one stage programmatically (raises instead of returning exit codes)."""
    exp = load_experiment(config, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = STAGES[stage](exp, out)
    if isinstance(result, list):
        result = (result, None)
    paths, evals, *extra = result
    _update_manifest(exp, out, stage, paths, evals, time.perf_counter() - t0,
                     extra[0] if extra else None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localpc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run_stage(args.command, args.config, args.out, args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:  # iteration overrun in the adaptive loop
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
