"""Batch command-line front end.

Every command reads a JSON config (``--config``) whose fields may be
overridden by flags, writes its artifacts into ``--out`` and records them in
``manifest.json``. ``result.json`` is a deterministic function of the config
and seed; timing lives only in the manifest.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
import traceback
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bayes import posterior
from .contamination import ContaminationClass, perturbation_vector
from .fixtures import KAPPA_HAT, load_fixture, von_mises_model
from .geometry import bhattacharyya, fr_distance, geodesic_to_csv, hellinger, kl_divergence
from .grid import DomainSpec, make_parametric
from .influence import influence_all
from .sensitivity import (
    global_report,
    likelihood_sensitivity_curve,
    local_bayes_factor,
    local_geodesic_second_order,
    local_posterior_functional,
    local_report,
    posterior_means,
    sensitivity_surface,
)

COMMANDS = ("geodesic", "contaminate", "global", "local", "influence", "demo")


class ConfigError(ValueError):
    pass


class Run:
    """Collects artifacts for one invocation."""

    def __init__(self, out: Path, command: str, config: dict, seed: int):
        self.out = out
        self.command = command
        self.config = config
        self.seed = seed
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        if name not in self.files:
            self.files.append(name)

    def write_json(self, name: str, obj) -> None:
        self.write(name, dumps(obj))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _domain(cfg: dict, resolution: int | None) -> DomainSpec:
    d = dict(cfg)
    if resolution is not None:
        d["points_per_axis"] = resolution
    return DomainSpec.from_dict(d)


def _model(cfg: dict, resolution: int | None):
    if "fixture" not in cfg:
        raise ConfigError("model config needs a 'fixture' name")
    fx = load_fixture(cfg["fixture"])
    options = dict(cfg.get("options", {}))
    if resolution is not None and cfg["fixture"] in ("gaussian50", "turtles"):
        base = fx.model(**options).param_domain
        options["domain"] = DomainSpec.from_dict({**base.to_dict(), "points_per_axis": resolution})
    elif resolution is not None and cfg["fixture"] == "vasoconstriction":
        options["points_per_axis"] = resolution
    return fx, fx.model(**options)


def _density(spec: dict, domain: DomainSpec):
    return make_parametric(spec["family"], spec["params"], domain)


# --------------------------------------------------------------------------
# commands

def cmd_geodesic(run: Run, cfg: dict, args) -> dict:
    domain = _domain(cfg["domain"], args.resolution)
    p1, p2 = _density(cfg["p1"], domain), _density(cfg["p2"], domain)
    prefix = cfg.get("name", "geodesic")
    result = {
        "fr_distance": fr_distance(p1, p2),
        "kl_p1_p2": kl_divergence(p1, p2),
        "kl_p2_p1": kl_divergence(p2, p1),
        "hellinger": hellinger(p1, p2),
        "bhattacharyya": bhattacharyya(p1, p2),
    }
    run.write(f"{prefix}_path.csv", geodesic_to_csv(p1, p2, int(cfg.get("n_tau", 11))))
    return result


def cmd_contaminate(run: Run, cfg: dict, args) -> dict:
    domain = _domain(cfg["domain"], args.resolution)
    cls = ContaminationClass.from_spec(cfg, domain)
    header = ["node"]
    cols = []
    summary = []
    for cid, eps, dens in cls.enumerate():
        header.append(f'"{cid}@{eps!r}"')
        cols.append(dens.values)
        summary.append({"contaminant": cid, "epsilon": eps, "fr_to_baseline": fr_distance(cls.baseline, dens)})
    nodes = domain.nodes
    lines = [",".join(header)]
    for i in range(domain.size):
        node = " ".join(repr(float(v)) for v in nodes[i])
        lines.append(",".join([node, *(repr(float(c[i])) for c in cols)]))
    run.write("members.csv", "\n".join(lines) + "\n")
    return {"mode": cls.mode.value, "count": len(cls), "members": summary}


def cmd_global(run: Run, cfg: dict, args) -> dict:
    _, model = _model(cfg["model"], args.resolution)
    cls = ContaminationClass.from_spec(cfg["class"], model.param_domain)
    report, surface = global_report(model, cls)
    run.write("surface.csv", surface.to_csv())
    return report.to_dict()


def _functional(name: str | None):
    if name in (None, "none"):
        return None
    if name == "identity":
        return lambda t: t
    raise ConfigError(f"unknown functional {name!r}; use 'identity' or 'none'")


def cmd_local(run: Run, cfg: dict, args) -> dict:
    _, model = _model(cfg["model"], args.resolution)
    domain = model.param_domain
    contaminants = {}
    from .contamination import _expand_contaminants, _fmt

    for family, vec in _expand_contaminants(cfg["contaminants"]):
        contaminants[f"{family}({', '.join(_fmt(v) for v in vec)})"] = make_parametric(family, vec, domain)
    pi1 = _density(cfg["pi1"], domain) if "pi1" in cfg else None
    report = local_report(model, contaminants, pi1, _functional(cfg.get("functional", "identity")))
    lines = ["contaminant,measure,value"]
    lines += [f'"{c}",{m},{v!r}' for c, _, m, v in report.entries]
    run.write("local.csv", "\n".join(lines) + "\n")
    return report.to_dict()


def cmd_influence(run: Run, cfg: dict, args) -> dict:
    estimator = (args.estimator or cfg.get("estimator", "exact")).lower()
    n = int(args.samples or cfg.get("samples", 100_000))
    trace_cases = cfg.get("trace_cases", [])
    mcfg = cfg["model"]
    if mcfg.get("fixture") == "surgical":
        fx = load_fixture("surgical")
        reg = fx.model(**mcfg.get("options", {}))
        if estimator != "is":
            raise ConfigError("the surgical regression is analyzed with the 'is' estimator")
        shell = _regression_shell(reg)
        report = influence_all(
            shell, "is", n, run.seed, sampler=lambda n_, s: reg.full.sample(n_, s),
            is_pair=reg.is_pair, trace_cases=trace_cases,
        )
    else:
        _, model = _model(mcfg, args.resolution)
        report = influence_all(model, estimator, n, run.seed, burn_in=int(cfg.get("burn_in", 1000)), trace_cases=trace_cases)
    run.write("influence.csv", report.to_csv())
    for case in report.traces:
        run.write(f"trace_case{case}.csv", report.traces_to_csv(case))
    return report.to_dict()


def _regression_shell(reg):
    """A data-only model for enumerating cases of a closed-form regression posterior."""
    from .bayes import BayesModel
    from .fixtures import regression_log_likelihood

    domain = DomainSpec.linear(-1.0, 1.0, 16)
    prior = make_parametric("Normal", [0.0, 0.2], domain)
    data = np.column_stack([reg.X, reg.y])
    return BayesModel(domain, lambda rows, t: regression_log_likelihood(rows, t, reg.sigma), data, prior, name="regression")


# --------------------------------------------------------------------------
# demos

LINEAR_8 = {"topology": "Linear", "lower": -8.0, "upper": 8.0, "dims": 1}


def demo_divergences(run: Run, args) -> dict:
    one = cmd_geodesic(run, {
        "name": "univariate",
        "domain": {**LINEAR_8, "points_per_axis": 2048},
        "p1": {"family": "Normal", "params": [0, 1]},
        "p2": {"family": "SkewNormal", "params": [5, 0, 1]},
    }, args)
    two = cmd_geodesic(run, {
        "name": "bivariate",
        "domain": {"topology": "Linear", "lower": -8.0, "upper": 8.0, "dims": 2, "points_per_axis": 257},
        "p1": {"family": "MultivariateNormal", "params": [0.5, -0.2, 1.2, 0.4, 0.4, 0.6]},
        "p2": {"family": "MultivariateNormal", "params": [0.0, 0.5, 0.5, -0.2, -0.2, 0.7]},
    }, args)
    return {"univariate": one, "bivariate": two}


def _skew_normal_class(mode: str) -> dict:
    return {
        "baseline": {"family": "Normal", "params": [0, 1]},
        "contaminants": {"family": "SkewNormal", "base": [0, 0, 1], "grid": {"0": {"linspace": [-5, 5, 101]}}},
        "epsilons": {"linspace": [0, 1, 31]},
        "mode": mode,
    }


def demo_example1(run: Run, args) -> dict:
    _, model = _model({"fixture": "gaussian50"}, args.resolution)
    geo = ContaminationClass.from_spec(_skew_normal_class("Geometric"), model.param_domain)
    lin = ContaminationClass.from_spec(_skew_normal_class("Linear"), model.param_domain)
    base = posterior(model)
    s_geo = sensitivity_surface(model, geo, base)
    run.write("surface_geometric_fr.csv", s_geo.to_csv())
    s_kl1 = sensitivity_surface(model, lin, base, kl_divergence)
    run.write("surface_linear_kl_p0_p.csv", s_kl1.to_csv())
    s_kl2 = sensitivity_surface(model, lin, base, lambda a, b: kl_divergence(b, a))
    run.write("surface_linear_kl_p_p0.csv", s_kl2.to_csv())
    alphas = [p[0] for p in geo.parameters.values()]
    m_geo = posterior_means(model, geo, 0.5)
    m_lin = posterior_means(model, lin, 0.5)
    lines = ["alpha,mean_geometric,mean_linear"]
    lines += [f"{a!r},{m_geo[c]!r},{m_lin[c]!r}" for a, c in zip(alphas, geo.ids)]
    run.write("posterior_means_eps0.5.csv", "\n".join(lines) + "\n")
    return {
        "shape": list(s_geo.values.shape),
        "global_sensitivity_geometric": dict(zip(map(repr, s_geo.epsilons), map(float, s_geo.row_max()))),
        "argmax": dict(zip(map(repr, s_geo.epsilons), s_geo.argmax_ids())),
        "baseline_mean": float(base.density.mean()[0]),
    }


def turtle_kappa_grid() -> list[float]:
    return sorted(set(np.linspace(0.01, 10.0, 100).tolist()) | {KAPPA_HAT})


def demo_example2(run: Run, args) -> dict:
    fx = load_fixture("turtles")
    domain = DomainSpec.circular(points_per_axis=args.resolution or 2048)
    curve = likelihood_sensitivity_curve(
        lambda k: von_mises_model(fx.extra["angles"], kappa=k, domain=domain), turtle_kappa_grid(), KAPPA_HAT
    )
    run.write("kappa_curve.csv", "kappa,fr_distance\n" + "".join(f"{k!r},{d!r}\n" for k, d in curve))
    grid_only = [(k, d) for k, d in curve if k != KAPPA_HAT]
    k_min = min(grid_only, key=lambda kd: kd[1])[0]
    return {"kappa_hat": KAPPA_HAT, "argmin_on_grid": k_min, "curve_points": len(curve)}


def example4_measures(model, dfs) -> list[dict]:
    domain = model.param_domain
    pi1 = make_parametric("Normal", [0.0, math.sqrt(5.0)], domain)
    rows = []
    for df in dfs:
        g = make_parametric("StudentT", [df, 0.0, 1.0], domain)
        v = perturbation_vector(model.prior, g)
        rows.append({
            "df": int(df),
            "bayes_factor": local_bayes_factor(model, pi1, v),
            "posterior_mean": local_posterior_functional(model, lambda t: t, v),
            "geodesic_second_order": local_geodesic_second_order(model, v),
        })
    return rows


def demo_example4(run: Run, args) -> dict:
    _, model = _model({"fixture": "gaussian50"}, args.resolution)
    rows = example4_measures(model, range(3, 101))
    keys = ["df", "bayes_factor", "posterior_mean", "geodesic_second_order"]
    run.write("local_t.csv", ",".join(keys) + "\n" + "".join(",".join(repr(r[k]) for k in keys) + "\n" for r in rows))
    return {"rows": rows, "sample_mean": float(np.mean(model.dataset))}


def demo_turtle_local(run: Run, args) -> dict:
    fx = load_fixture("turtles")
    domain = DomainSpec.circular(points_per_axis=args.resolution or 2048)
    model = von_mises_model(fx.extra["angles"], domain=domain)
    pi1 = make_parametric("VonMises", [math.pi / 2, 0.01], domain)
    lams = np.linspace(0.2, 10.0, 25)
    etas = np.linspace(0.2, 5.0, 25)
    out = {"bayes_factor": [], "posterior_mean": [], "geodesic_second_order": []}
    for lam in lams:
        rows = {k: [] for k in out}
        for eta in etas:
            v = perturbation_vector(model.prior, make_parametric("WrappedLaplace", [lam, eta, 0.0], domain))
            rows["bayes_factor"].append(local_bayes_factor(model, pi1, v))
            rows["posterior_mean"].append(local_posterior_functional(model, lambda t: t, v))
            rows["geodesic_second_order"].append(local_geodesic_second_order(model, v))
        for k in out:
            out[k].append(rows[k])
    for k, mat in out.items():
        lines = ["lambda\\eta," + ",".join(repr(float(e)) for e in etas)]
        lines += [repr(float(l)) + "," + ",".join(repr(v) for v in row) for l, row in zip(lams, mat)]
        run.write(f"wrapped_laplace_{k}.csv", "\n".join(lines) + "\n")
    return {"baseline_posterior_mean": float(posterior(model).density.mean()[0]), "grid": [len(lams), len(etas)]}


def demo_surgical(run: Run, args) -> dict:
    cfg = {"model": {"fixture": "surgical"}, "estimator": "is", "trace_cases": [2, 17, 38, 52]}
    args.estimator = "is"
    return cmd_influence(run, cfg, args)


def demo_vasoconstriction(run: Run, args) -> dict:
    return cmd_influence(run, {"model": {"fixture": "vasoconstriction"}, "estimator": args.estimator or "exact"}, args)


DEMOS = {
    "divergences": demo_divergences,
    "example1": demo_example1,
    "example2": demo_example2,
    "example4": demo_example4,
    "turtle-local": demo_turtle_local,
    "surgical": demo_surgical,
    "example5": demo_surgical,
    "vasoconstriction": demo_vasoconstriction,
    "example6": demo_vasoconstriction,
}


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frao", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "demo":
            p.add_argument("example", choices=sorted(DEMOS))
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=Path("frao-out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed for Monte-Carlo paths")
        p.add_argument("--threads", type=int, default=1, help="worker cap (computations run in one thread)")
        p.add_argument("--resolution", type=int, default=None, help="grid points per axis")
        p.add_argument("--estimator", choices=["exact", "mc", "is"], default=None)
        p.add_argument("--samples", type=int, default=None, help="Monte-Carlo sample size N")
    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        session = Run(out, args.command, cfg, seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.command == "demo":
                result = DEMOS[args.example](session, args)
            else:
                if not cfg:
                    raise ConfigError(f"'{args.command}' needs --config")
                result = globals()[f"cmd_{args.command}"](session, cfg, args)
        session.write_json("result.json", {"command": args.command, "seed": seed, "result": result})
        manifest = {
            "command": args.command,
            "example": getattr(args, "example", None),
            "config": cfg,
            "seed": seed,
            "flags": {k: getattr(args, k) for k in ("resolution", "estimator", "samples", "threads")},
            "versions": {
                "frao": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": sorted(session.files),
            "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
            "wall_time_s": time.perf_counter() - start,
        }
        (out / "manifest.json").write_text(dumps(manifest))
        return 0
    except Exception as exc:  # reported as machine-readable JSON
        code = 2 if isinstance(exc, ConfigError) else 1
        err = {
            "command": args.command,
            "error": type(exc).__name__,
            "module": type(exc).__module__,
            "message": str(exc),
            "traceback": traceback.format_exc().splitlines()[-6:],
        }
        (out / "error.json").write_text(dumps(err))
        print(f"frao: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
