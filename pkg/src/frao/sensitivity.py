"""Global and local sensitivity of posteriors to prior and likelihood perturbations."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .bayes import BayesModel, Posterior, expectation, log_marginal, posterior, theta_arg
from .contamination import ContaminationClass, perturbation_vector
from .geometry import TangentVector, fr_distance
from .grid import GridDensity, quadrature


def _baseline(model: BayesModel, baseline: Posterior | None) -> Posterior:
    return posterior(model) if baseline is None else baseline


Divergence = Callable[[GridDensity, GridDensity], float]


def posterior_distances(
    model: BayesModel,
    cls: ContaminationClass,
    eps: float,
    baseline: Posterior | None = None,
    metric: Divergence = fr_distance,
) -> dict[str, float]:
    """Distance from the baseline posterior to every contaminated posterior at ``eps``.

    ``metric(p0, p)`` defaults to the Fisher-Rao distance.
    """
    if not cls.contaminants:
        raise ValueError("contamination class is empty")
    model.param_domain.check_same(cls.baseline.domain)
    base = _baseline(model, baseline)
    out = {}
    for cid in cls.ids:
        prior = cls.member(cid, eps)
        if prior is cls.baseline:
            out[cid] = 0.0
        else:
            out[cid] = metric(base.density, posterior(model, prior).density)
    return out


def global_sensitivity(
    model: BayesModel, cls: ContaminationClass, eps: float, baseline: Posterior | None = None
) -> tuple[float, str]:
    """Largest posterior FR distance over the class at ``eps`` and the contaminant attaining it."""
    dist = posterior_distances(model, cls, eps, baseline)
    best = max(dist, key=dist.__getitem__)
    return dist[best], best


@dataclass(frozen=True)
class SensitivitySurface:
    """Distances indexed by (epsilon row, contaminant column)."""

    epsilons: tuple[float, ...]
    ids: tuple[str, ...]
    values: np.ndarray
    mode: str = "Geometric"

    def row_max(self) -> np.ndarray:
        return self.values.max(axis=1)

    def argmax_ids(self) -> list[str]:
        return [self.ids[j] for j in self.values.argmax(axis=1)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(["epsilon", *(f'"{c}"' for c in self.ids)]) + "\n")
        for eps, row in zip(self.epsilons, self.values):
            buf.write(",".join([repr(float(eps)), *(repr(float(v)) for v in row)]) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def sensitivity_surface(
    model: BayesModel,
    cls: ContaminationClass,
    baseline: Posterior | None = None,
    metric: Divergence = fr_distance,
) -> SensitivitySurface:
    base = _baseline(model, baseline)
    rows = []
    for eps in cls.epsilons:
        dist = posterior_distances(model, cls, eps, base, metric)
        rows.append([dist[c] for c in cls.ids])
    return SensitivitySurface(cls.epsilons, tuple(cls.ids), np.array(rows), cls.mode.value)


def posterior_means(
    model: BayesModel, cls: ContaminationClass, eps: float
) -> dict[str, np.ndarray | float]:
    """Posterior mean under every contaminated prior at ``eps``."""
    out = {}
    for cid in cls.ids:
        mean = posterior(model, cls.member(cid, eps)).density.mean()
        out[cid] = float(mean[0]) if mean.size == 1 else mean
    return out


def likelihood_sensitivity_curve(
    model_for: Callable[[float], BayesModel], values: Iterable[float], baseline: float
) -> list[tuple[float, float]]:
    """Posterior FR distance to the baseline as a likelihood parameter varies.

    ``model_for(value)`` must return the model with the perturbed likelihood;
    all models share one parameter grid and prior.
    """
    values = [float(v) for v in values]
    if not values or not min(values) <= baseline <= max(values):
        raise ValueError("baseline parameter must lie inside the value grid")
    base = posterior(model_for(baseline)).density
    curve = []
    for v in values:
        d = 0.0 if v == baseline else fr_distance(base, posterior(model_for(v)).density)
        curve.append((v, d))
    return curve


# --------------------------------------------------------------------------
# local measures at eps = 0

def _scaled_terms(model: BayesModel, v: TangentVector) -> tuple[np.ndarray, float]:
    """``f * sqrt(pi0) * v / m0`` on the grid, and ``log m0``."""
    model.param_domain.check_same(v.domain)
    if not np.allclose(v.base.values, np.sqrt(model.prior.values), rtol=0, atol=1e-10):
        raise ValueError("tangent vector is not based at the square root of the model prior")
    log_m0 = log_marginal(model)
    return np.exp(model.loglik_grid - log_m0) * v.base.values * v.values, log_m0


def local_bayes_factor(model: BayesModel, pi1: GridDensity, v: TangentVector) -> float:
    """Derivative at 0 of ``m(x | eps g) / m(x | pi1)`` along the geodesic ``v``."""
    if v.norm == 0.0:
        return 0.0
    terms, log_m0 = _scaled_terms(model, v)
    log_m1 = log_marginal(model, pi1)
    if not np.isfinite(log_m1):
        raise FloatingPointError("marginal under the alternative prior underflows")
    return 2.0 * quadrature(model.param_domain, terms) * math.exp(log_m0 - log_m1)


def local_posterior_functional(model: BayesModel, h, v: TangentVector) -> float:
    """Derivative at 0 of the posterior expectation of ``h`` along the geodesic ``v``."""
    if v.norm == 0.0:
        return 0.0
    terms, _ = _scaled_terms(model, v)
    hv = h(theta_arg(model.param_domain.nodes)) if callable(h) else h
    hv = np.broadcast_to(np.asarray(hv, dtype=float), (model.param_domain.size,))
    ratio = quadrature(model.param_domain, terms)
    e0 = expectation(posterior(model), hv)
    return 2.0 * quadrature(model.param_domain, hv * terms) - 2.0 * ratio * e0


def local_geodesic_second_order(
    model: BayesModel, v: TangentVector, diagnostics: dict | None = None, support_tol: float = 1e-6
) -> float:
    """Second derivative at 0 of ``||sqrt(p0) - sqrt(p_eps)||^2`` along ``v``.

    Evaluates ``2 E0[v^2/pi0] + 2 r^2 - 4 r E0[v/sqrt(pi0)]`` with
    ``r = m~/m0``, which equals twice the posterior variance of
    ``v / sqrt(pi0)``. Nodes where the prior vanishes are left out.
    """
    if v.norm == 0.0:
        return 0.0
    terms, log_m0 = _scaled_terms(model, v)
    support = model.prior.values > 0
    lik_over_m = np.exp(model.loglik_grid - log_m0)
    # p0 * v^2 / pi0 == f v^2 / m0 on the support
    sq = lik_over_m * v.values**2
    outside = ~support & (v.values != 0)
    if np.any(outside):
        lost = quadrature(model.param_domain, np.where(outside, sq, 0.0))
        kept = quadrature(model.param_domain, np.where(support, sq, 0.0))
        if diagnostics is not None:
            diagnostics["excluded_nodes"] = int(outside.sum())
            diagnostics["excluded_mass"] = lost
        if lost > support_tol * max(kept, 1e-300):
            raise ValueError("perturbation has weight where the prior vanishes")
    ratio = quadrature(model.param_domain, terms)
    e_sq = quadrature(model.param_domain, np.where(support, sq, 0.0))
    # p0 * v / sqrt(pi0) == f sqrt(pi0) v / m0
    e_lin = quadrature(model.param_domain, np.where(support, terms, 0.0))
    return 2.0 * e_sq + 2.0 * ratio**2 - 4.0 * ratio * e_lin


@dataclass
class SensitivityReport:
    mode: str
    entries: list[tuple[str, float, str, float]]
    baseline_summary: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "entries": [
                {"contaminant": c, "order_or_eps": o, "measure": m, "value": v} for c, o, m, v in self.entries
            ],
            "baseline_summary": self.baseline_summary,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def _summary(model: BayesModel, base: Posterior) -> dict:
    mean = base.density.mean()
    return {"posterior_mean": mean.tolist(), "log_marginal": base.log_marginal}


def global_report(model: BayesModel, cls: ContaminationClass) -> tuple[SensitivityReport, SensitivitySurface]:
    base = posterior(model)
    surface = sensitivity_surface(model, cls, base)
    entries = []
    for i, eps in enumerate(surface.epsilons):
        for j, cid in enumerate(surface.ids):
            entries.append((cid, float(eps), "fr_distance", float(surface.values[i, j])))
    diag = {
        "global_sensitivity": dict(zip(map(repr, surface.epsilons), map(float, surface.row_max()))),
        "argmax": dict(zip(map(repr, surface.epsilons), surface.argmax_ids())),
    }
    return SensitivityReport("Global", entries, _summary(model, base), diag), surface


def local_report(
    model: BayesModel,
    contaminants: dict[str, GridDensity],
    pi1: GridDensity | None = None,
    h=None,
) -> SensitivityReport:
    """All local measures for every contaminant; the Bayes factor needs ``pi1``."""
    base = posterior(model)
    entries = []
    diag: dict = {}
    for cid, g in contaminants.items():
        v = perturbation_vector(model.prior, g)
        if pi1 is not None:
            entries.append((cid, 1, "bayes_factor", local_bayes_factor(model, pi1, v)))
        if h is not None:
            entries.append((cid, 1, "posterior_functional", local_posterior_functional(model, h, v)))
        d = {}
        entries.append((cid, 2, "geodesic_second_order", local_geodesic_second_order(model, v, d)))
        if d:
            diag[cid] = d
    return SensitivityReport("Local", entries, _summary(model, base), diag)


def squared_hellinger_path(model: BayesModel, g: GridDensity, eps: Sequence[float]) -> np.ndarray:
    """``||sqrt(p0) - sqrt(p_eps)||^2`` along the geometric contamination toward ``g``."""
    from .contamination import contaminate

    base = np.sqrt(posterior(model).density.values)
    out = []
    for e in eps:
        pe = np.sqrt(posterior(model, contaminate(model.prior, g, e)).density.values)
        out.append(quadrature(model.param_domain, (base - pe) ** 2))
    return np.array(out)
