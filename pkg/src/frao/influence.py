"""Case-deletion influence: exact grid, Monte-Carlo and importance-sampling estimators."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .bayes import BayesModel, Posterior, mh_sample, posterior, theta_arg
from .geometry import fr_distance
from .grid import SampleSet

SILENT_CLAMP = 1e-4
DEFAULT_THRESHOLDS = (0.3, 0.7)


class ClampFlag(UserWarning):
    """An influence estimate needed a cosine larger than one by more than noise allows."""


class LogDensity(Protocol):
    def logpdf(self, theta: np.ndarray) -> np.ndarray: ...


def _clamped_arccos(cosine: float, diagnostics: dict | None = None) -> tuple[float, bool]:
    """arccos with silent clamping up to ``1 + SILENT_CLAMP`` and a flag beyond it."""
    flagged = cosine > 1.0 + SILENT_CLAMP or cosine < 0.0
    if flagged:
        warnings.warn(f"influence cosine {cosine:.8g} clamped into [0, 1]", ClampFlag, stacklevel=3)
    if diagnostics is not None:
        diagnostics["cosine"] = cosine
        diagnostics["clamped"] = flagged
    return math.acos(min(1.0, max(0.0, cosine))), flagged


def influence_exact(model: BayesModel, k: int, baseline: Posterior | None = None) -> float:
    """FR distance between the full and case-``k``-deleted grid posteriors."""
    if model.param_domain.dims > 3:
        raise ValueError("grid quadrature is limited to three parameter dimensions")
    p0 = posterior(model) if baseline is None else baseline
    pk = posterior(model.deleted(k))
    return fr_distance(p0.density, pk.density)


def _case_loglik(model: BayesModel, k: int, draws: np.ndarray) -> np.ndarray:
    lf = np.asarray(model.log_likelihood(model.dataset[k : k + 1], theta_arg(draws)), dtype=float)
    if not np.all(np.isfinite(lf)):
        raise FloatingPointError(f"log likelihood of case {k} is not finite at every draw")
    return lf


def _mc_log_cosines(lf: np.ndarray) -> np.ndarray:
    """Running ``log[(b_N / N) sum_i a_i]`` for every prefix length N.

    ``a_i = f_k(theta_i)^(-1/2)`` and ``b_N = [N^-1 sum_i 1/f_k(theta_i)]^(-1/2)``,
    both accumulated by sequential log-add-exp in draw order.
    """
    n = np.arange(1, lf.size + 1)
    log_sum_a = np.logaddexp.accumulate(-0.5 * lf)
    log_sum_inv = np.logaddexp.accumulate(-lf)
    return log_sum_a - np.log(n) - 0.5 * (log_sum_inv - np.log(n))


def influence_mc(
    model: BayesModel, k: int, samples: SampleSet, diagnostics: dict | None = None
) -> float:
    """Monte-Carlo influence estimate from draws of the full-data posterior.

    Assumes conditionally independent observations, so that the predictive
    density of case ``k`` given the rest is ``f(x_k | theta)``.
    """
    lf = _case_loglik(model, k, samples.draws)
    cosine = math.exp(_mc_log_cosines(lf)[-1])
    return _clamped_arccos(cosine, diagnostics)[0]


def _is_log_cosines(p0: LogDensity, pk: LogDensity, draws: np.ndarray) -> np.ndarray:
    half = 0.5 * (np.asarray(pk.logpdf(draws), dtype=float) - np.asarray(p0.logpdf(draws), dtype=float))
    if not np.all(np.isfinite(half)):
        raise FloatingPointError("density ratio is not finite at every draw")
    n = np.arange(1, half.size + 1)
    return np.logaddexp.accumulate(half) - np.log(n)


def _check_normalized(p0: LogDensity, pk: LogDensity, draws: np.ndarray) -> None:
    ratio = np.exp(np.asarray(pk.logpdf(draws)) - np.asarray(p0.logpdf(draws)))
    mean, se = ratio.mean(), ratio.std() / math.sqrt(ratio.size)
    if abs(mean - 1.0) > max(0.1, 6.0 * se):
        raise ValueError(f"densities look unnormalized: importance weights average {mean:.4g}")


def influence_is(
    p0: LogDensity, pk: LogDensity, samples: SampleSet, diagnostics: dict | None = None, check: bool = True
) -> float:
    """Importance-sampling influence estimate with the full-data posterior as proposal.

    Both arguments expose ``logpdf(theta)`` with exact normalizing constants.
    """
    if check:
        _check_normalized(p0, pk, samples.draws)
    cosine = math.exp(_is_log_cosines(p0, pk, samples.draws)[-1])
    return _clamped_arccos(cosine, diagnostics)[0]


def convergence_trace(
    model: BayesModel | None,
    k: int,
    samples: SampleSet,
    checkpoints: Sequence[int],
    is_pair: tuple[LogDensity, LogDensity] | None = None,
) -> list[tuple[int, float]]:
    """Estimates from the first ``N`` draws of one chain for every ``N`` in ``checkpoints``.

    Uses the Monte-Carlo estimator, or the importance-sampling one when
    ``is_pair = (p0, pk)`` is given.
    """
    if is_pair is not None:
        logc = _is_log_cosines(is_pair[0], is_pair[1], samples.draws)
    else:
        logc = _mc_log_cosines(_case_loglik(model, k, samples.draws))
    out = []
    for n in checkpoints:
        if not 1 <= n <= logc.size:
            raise ValueError(f"checkpoint {n} outside 1..{logc.size}")
        out.append((int(n), math.acos(min(1.0, max(0.0, math.exp(logc[n - 1]))))))
    return out


@dataclass
class CaseInfluence:
    case: int
    value: float
    estimator: str
    n: int | None
    clamped: bool = False
    label: str = ""


@dataclass
class InfluenceReport:
    """Per-case influence values; ``case`` labels are 1-based."""

    per_case: list[CaseInfluence]
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    traces: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    variance_study: dict[int, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.per_case])

    @property
    def ranking(self) -> list[int]:
        """Case labels sorted by decreasing influence (stable for ties)."""
        order = np.argsort(-self.values, kind="stable")
        return [self.per_case[i].case for i in order]

    def to_dict(self) -> dict:
        return {
            "per_case": [c.__dict__ for c in self.per_case],
            "ranking": self.ranking,
            "thresholds": list(self.thresholds),
            "traces": {str(k): v for k, v in self.traces.items()},
            "variance_study": {str(k): v for k, v in self.variance_study.items()},
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self, path=None) -> str:
        text = "case,influence\n" + "".join(f"{c.case},{c.value!r}\n" for c in self.per_case)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def traces_to_csv(self, case: int) -> str:
        return "n,influence\n" + "".join(f"{n},{v!r}\n" for n, v in self.traces[case])


def _label(value: float, thresholds: tuple[float, float]) -> str:
    possible, high = thresholds
    if value > high:
        return "highly influential"
    if value > possible:
        return "possibly influential"
    return ""


def influence_all(
    model: BayesModel,
    estimator: str = "exact",
    n: int = 100_000,
    seed: int = 0,
    *,
    samples: SampleSet | None = None,
    burn_in: int = 1000,
    is_pair: Callable[[int], tuple[LogDensity, LogDensity]] | None = None,
    sampler: Callable[[int, int], SampleSet] | None = None,
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
    trace_cases: Sequence[int] = (),
    checkpoints: Sequence[int] | None = None,
) -> InfluenceReport:
    """Influence of every observation, reusing one baseline sample for all cases.

    Parameters
    ----------
    estimator : {"exact", "mc", "is"}
    n, seed : sample size and seed for the shared baseline sample.
    samples : SampleSet, optional
        Baseline draws; otherwise ``sampler(n, seed)`` or a Metropolis chain.
    is_pair : callable, optional
        ``is_pair(k) -> (p0, pk)`` evaluable posteriors, required for "is".
    trace_cases : 1-based case labels for which to record convergence traces.
    """
    estimator = estimator.lower()
    if estimator not in {"exact", "mc", "is"}:
        raise ValueError(f"unknown estimator {estimator!r}")
    cases = range(model.n_obs)
    per_case: list[CaseInfluence] = []
    traces: dict[int, list[tuple[int, float]]] = {}
    diag: dict = {"estimator": estimator}
    if estimator == "exact":
        base = posterior(model)
        for k in cases:
            v = influence_exact(model, k, base)
            per_case.append(CaseInfluence(k + 1, v, "exact", None, False, _label(v, thresholds)))
        return InfluenceReport(per_case, thresholds, diagnostics=diag)

    if samples is None:
        if sampler is not None:
            samples = sampler(n, seed)
        else:
            samples = mh_sample(model, n, burn_in, seed)
    diag.update({"n": len(samples), "seed": seed, "sampler": dict(samples.diagnostics)})
    if estimator == "is" and is_pair is None:
        raise ValueError("the importance-sampling estimator needs evaluable posteriors")
    for k in cases:
        d: dict = {}
        if estimator == "mc":
            v = influence_mc(model, k, samples, d)
        else:
            p0, pk = is_pair(k)
            v = influence_is(p0, pk, samples, d, check=False)
        per_case.append(CaseInfluence(k + 1, v, estimator, len(samples), d["clamped"], _label(v, thresholds)))
    checkpoints = list(checkpoints) if checkpoints is not None else default_checkpoints(len(samples))
    for case in trace_cases:
        pair = is_pair(case - 1) if estimator == "is" else None
        traces[case] = convergence_trace(model, case - 1, samples, checkpoints, pair)
    return InfluenceReport(per_case, thresholds, traces, diagnostics=diag)


def default_checkpoints(n: int, count: int = 50) -> list[int]:
    return sorted({int(round(v)) for v in np.linspace(max(1, n // count), n, count)})


def variance_study(estimate: Callable[[int], np.ndarray], seeds: Sequence[int]) -> np.ndarray:
    """Per-case sample variance of ``estimate(seed)`` across replicate seeds."""
    runs = np.array([np.asarray(estimate(s), dtype=float) for s in seeds])
    return runs.var(axis=0, ddof=1)
