"""Grid posteriors, marginals, expectations and Metropolis sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import optimize

from .geometry import TangentVector
from .grid import DomainSpec, GridDensity, SampleSet, evaluate, quadrature

LogLikelihood = Callable[[np.ndarray, np.ndarray], np.ndarray]


class PosteriorEscapeError(RuntimeError):
    """Every grid node carries zero posterior mass."""


class SamplerError(RuntimeError):
    """The Metropolis chain failed to mix."""


def theta_arg(nodes: np.ndarray) -> np.ndarray:
    """Parameter values as passed to user callables: ``(M,)`` in 1D, else ``(M, d)``."""
    nodes = np.atleast_2d(nodes)
    return nodes[:, 0] if nodes.shape[1] == 1 else nodes


def log_density_values(p: GridDensity) -> np.ndarray:
    if p.log_values is not None:
        return np.asarray(p.log_values)
    with np.errstate(divide="ignore"):
        return np.log(p.values)


@dataclass(frozen=True, eq=False)
class BayesModel:
    """Likelihood, data and prior on a parameter grid.

    Parameters
    ----------
    param_domain : DomainSpec
        Grid over the parameter (at most three dimensions).
    log_likelihood : callable
        ``log_likelihood(rows, theta)`` returns the summed log likelihood of
        the observation ``rows`` at each parameter value in ``theta``.
    dataset : ndarray
        One observation per row.
    prior : GridDensity
        Prior tabulated on ``param_domain``.
    log_prior : callable, optional
        Exact log prior density for off-grid evaluation (sampling and
        optimization). Interpolated from ``prior`` when omitted.
    """

    param_domain: DomainSpec
    log_likelihood: LogLikelihood
    dataset: np.ndarray
    prior: GridDensity
    log_prior: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "model"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.param_domain.check_same(self.prior.domain)
        data = np.asarray(self.dataset)
        if data.ndim == 1:
            data = data[:, None]
        object.__setattr__(self, "dataset", data)

    @property
    def n_obs(self) -> int:
        return self.dataset.shape[0]

    def _checked(self, ll: np.ndarray) -> np.ndarray:
        ll = np.asarray(ll, dtype=float).reshape(self.param_domain.size)
        if np.any(np.isnan(ll)) or np.any(ll == np.inf):
            raise ValueError(f"{self.name}: log likelihood is NaN or +inf on the grid")
        return ll

    @cached_property
    def loglik_grid(self) -> np.ndarray:
        ll = self._checked(self.log_likelihood(self.dataset, theta_arg(self.param_domain.nodes)))
        n_inf = int(np.sum(np.isneginf(ll)))
        if n_inf:
            self.diagnostics["neg_inf_nodes"] = n_inf
        return ll

    def case_loglik(self, k: int) -> np.ndarray:
        """Log likelihood of observation ``k`` alone on the grid."""
        return self._checked(self.log_likelihood(self.dataset[k : k + 1], theta_arg(self.param_domain.nodes)))

    def log_target(self, theta: np.ndarray) -> np.ndarray:
        """Unnormalized log posterior at arbitrary parameter values ``(M, d)``."""
        theta = np.atleast_2d(theta)
        if self.log_prior is not None:
            lp = np.asarray(self.log_prior(theta_arg(theta)), dtype=float)
        else:
            if self.param_domain.is_circular:
                theta = self.param_domain.lower[0] + np.mod(theta - self.param_domain.lower[0], 2 * math.pi)
            inside = self.param_domain.contains(theta)
            lp = np.full(theta.shape[0], -np.inf)
            if np.any(inside):
                vals = np.atleast_1d(evaluate(self.prior, theta[inside] if theta.shape[1] > 1 else theta[inside, 0]))
                with np.errstate(divide="ignore"):
                    lp[inside] = np.log(vals)
        lp = np.atleast_1d(lp)
        out = lp.copy()
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] += np.asarray(self.log_likelihood(self.dataset, theta_arg(theta[ok])), dtype=float)
        return out

    def with_prior(self, prior: GridDensity, log_prior=None) -> "BayesModel":
        return replace(self, prior=prior, log_prior=log_prior, diagnostics={})

    def deleted(self, k: int) -> "BayesModel":
        """The same model with observation ``k`` (0-based) removed."""
        return replace(self, dataset=np.delete(self.dataset, k, axis=0), diagnostics={})


@dataclass(frozen=True, eq=False)
class Posterior:
    density: GridDensity
    log_marginal: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        """Sidecar metadata; the density itself exports via ``density.to_csv``."""
        return json.dumps(
            {"log_marginal": self.log_marginal, "domain": self.density.domain.to_dict(), "diagnostics": self.diagnostics},
            sort_keys=True,
            default=float,
        )


def _log_joint(model: BayesModel, prior: GridDensity, loglik: np.ndarray | None = None) -> np.ndarray:
    model.param_domain.check_same(prior.domain)
    ll = model.loglik_grid if loglik is None else loglik
    return ll + log_density_values(prior)


def _normalize_log(domain: DomainSpec, s: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Max-shifted weights, shift and log quadrature of ``exp(s)``."""
    m = np.max(s)
    if not np.isfinite(m):
        raise PosteriorEscapeError("posterior mass escapes the grid: every node has zero density")
    shifted = s - m
    z = quadrature(domain, np.exp(shifted))
    return shifted, m, math.log(z)


def posterior(model: BayesModel, prior: GridDensity | None = None, loglik: np.ndarray | None = None) -> Posterior:
    """Grid posterior computed in log space.

    Parameters
    ----------
    model : BayesModel
    prior : GridDensity, optional
        Replacement prior; defaults to ``model.prior``.
    loglik : ndarray, optional
        Precomputed log likelihood on the grid (e.g. with one case removed).
    """
    prior = model.prior if prior is None else prior
    shifted, m, log_z = _normalize_log(model.param_domain, _log_joint(model, prior, loglik))
    density = GridDensity.from_values(model.param_domain, np.exp(shifted), log_values=shifted)
    diag = {"max_log_joint": float(m)}
    if "neg_inf_nodes" in model.diagnostics:
        diag["neg_inf_nodes"] = model.diagnostics["neg_inf_nodes"]
    return Posterior(density, float(m + log_z), diag)


def log_marginal(model: BayesModel, prior: GridDensity | None = None) -> float:
    prior = model.prior if prior is None else prior
    _, m, log_z = _normalize_log(model.param_domain, _log_joint(model, prior))
    return float(m + log_z)


def marginal_contaminated(model: BayesModel, pi_eps: GridDensity) -> float:
    """``log m(x | pi_eps)``."""
    return log_marginal(model, pi_eps)


def _check_base(model: BayesModel, v: TangentVector) -> None:
    model.param_domain.check_same(v.domain)
    if not np.allclose(v.base.values, np.sqrt(model.prior.values), rtol=0, atol=1e-10):
        raise ValueError("tangent vector is not based at the square root of the model prior")


def tilde_ratio(model: BayesModel, v: TangentVector) -> float:
    """``m~(x | v) / m(x | pi0)`` computed without underflow."""
    _check_base(model, v)
    s = _log_joint(model, model.prior)
    shifted, _, log_z = _normalize_log(model.param_domain, s)
    m_ll = np.max(model.loglik_grid)
    # f * sqrt(pi0) * v divided by m, all on the same shift
    scaled = np.exp(model.loglik_grid - m_ll) * v.base.values * v.values
    return quadrature(model.param_domain, scaled) * math.exp(m_ll - float(np.max(s)) - log_z)


def tilde_marginal(model: BayesModel, v: TangentVector) -> float:
    """Signed integral of ``f * sqrt(pi0) * v`` over the parameter grid."""
    return tilde_ratio(model, v) * math.exp(log_marginal(model))


def expectation(post: Posterior | GridDensity, h) -> float:
    """Posterior expectation of ``h`` (callable on parameter values or node array)."""
    density = post.density if isinstance(post, Posterior) else post
    values = h(theta_arg(density.domain.nodes)) if callable(h) else h
    values = np.broadcast_to(np.asarray(values, dtype=float), (density.domain.size,))
    return quadrature(density.domain, values * density.values)


def mh_sample(
    model: BayesModel,
    n: int,
    burn_in: int = 1000,
    seed: int = 0,
    step: float | None = None,
    target_acceptance: float = 0.35,
) -> SampleSet:
    """Gaussian random-walk Metropolis on the parameter.

    When ``step`` is None the proposal scale starts from the grid posterior
    spread and is adapted by Robbins-Monro during burn-in only, so the
    retained chain is a time-homogeneous Markov chain. Every iteration draws
    exactly one normal vector and one uniform, whatever happens.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    rng = np.random.default_rng(seed)
    d = model.param_domain.dims
    nodes = model.param_domain.nodes
    post = posterior(model)
    current = nodes[int(np.argmax(post.density.values))].copy()
    tune = step is None
    if tune:
        mean = np.sum(nodes * (post.density.values * model.param_domain.weights)[:, None], axis=0)
        var = np.sum((nodes - mean) ** 2 * (post.density.values * model.param_domain.weights)[:, None], axis=0)
        step = 2.38 / math.sqrt(d) * float(np.sqrt(np.mean(var)))
    log_step = math.log(step)
    lt = float(model.log_target(current[None, :])[0])
    if not np.isfinite(lt):
        raise SamplerError("chain starts at a point of zero posterior density")
    draws = np.empty((n, d))
    accepted = 0
    for t in range(burn_in + n):
        z = rng.standard_normal(d)
        u = rng.random()
        proposal = current + math.exp(log_step) * z
        lp = float(model.log_target(proposal[None, :])[0])
        accept = math.log(u) < lp - lt if np.isfinite(lp) else False
        if accept:
            current, lt = proposal, lp
        if t < burn_in:
            if tune:
                log_step += (float(accept) - target_acceptance) / (t + 1) ** 0.6
        else:
            accepted += accept
            draws[t - burn_in] = current
    if model.param_domain.is_circular:
        lo = model.param_domain.lower[0]
        draws = lo + np.mod(draws - lo, 2 * math.pi)
    rate = accepted / n
    if rate < 0.01:
        raise SamplerError(f"acceptance rate {rate:.4f} is below 0.01")
    diag = {"acceptance_rate": rate, "step": math.exp(log_step), "seed": seed, "burn_in": burn_in, "tuned": tune}
    return SampleSet(draws, diagnostics=diag)


def _hessian(fn: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    d = x.size
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    hess = np.empty((d, d))
    f0 = fn(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (fn(x + ei) - 2 * f0 + fn(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return hess


def laplace_fit(model: BayesModel, start: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mode and per-axis standard deviation from the curvature there.

    The mode is located by Powell's conjugate-direction search, which starts
    from the coordinate axes, begun at the prior mean.
    """
    x0 = model.prior.mean() if start is None else np.asarray(start, dtype=float)

    def neg(x):
        val = float(model.log_target(np.asarray(x)[None, :])[0])
        return -val if np.isfinite(val) else 1e300

    res = optimize.minimize(neg, x0, method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxiter": 100000})
    if not np.all(np.isfinite(res.x)) or res.fun >= 1e300:
        raise RuntimeError(f"mode search diverged: {res.message}")
    mode = np.asarray(res.x, dtype=float)
    hess = _hessian(neg, mode)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raise RuntimeError("curvature at the mode is singular") from None
    var = np.diag(cov)
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise RuntimeError("curvature at the mode is not negative definite")
    return mode, np.sqrt(var)


def laplace_bounds(
    model: BayesModel, half_width_sds: float = 6.0, points_per_axis: int | None = None, start=None
) -> DomainSpec:
    """Box ``mode +/- half_width_sds * sd`` on every axis."""
    if half_width_sds <= 0:
        raise ValueError("half_width_sds must be positive")
    mode, sd = laplace_fit(model, start)
    return DomainSpec.linear(
        tuple(mode - half_width_sds * sd), tuple(mode + half_width_sds * sd), points_per_axis, dims=mode.size
    )


def union_bounds(domains: list[DomainSpec], points_per_axis: int | None = None) -> DomainSpec:
    """Smallest box containing every box in ``domains``."""
    lower = np.min([d.lower for d in domains], axis=0)
    upper = np.max([d.upper for d in domains], axis=0)
    return DomainSpec.linear(tuple(lower), tuple(upper), points_per_axis, dims=lower.size)
