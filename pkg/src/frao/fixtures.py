"""Bundled datasets and the example models built on them."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special

from .bayes import BayesModel, laplace_bounds, union_bounds
from .grid import DomainSpec, GridDensity, SampleSet, make_parametric

KAPPA_HAT = 1.1423
DATA_ENV = "FRAO_DATA_DIR"


class MissingFixtureError(FileNotFoundError):
    pass


class SchemaError(ValueError):
    pass


def _bundled_dir() -> Path:
    return Path(str(resources.files("frao") / "data"))


def fixture_index() -> dict:
    return json.loads((_bundled_dir() / "index.json").read_text())


@dataclass(frozen=True)
class ExampleFixture:
    """A dataset with its provenance and the reference values tied to it."""

    name: str
    columns: dict[str, np.ndarray]
    expected: list[dict]
    provenance: str
    path: Path
    checksum_verified: bool
    extra: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def model(self, **kwargs) -> BayesModel:
        """Baseline model of the example using this dataset."""
        return MODEL_BUILDERS[self.name](self, **kwargs)


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    return {h: data[:, j] for j, h in enumerate(header)}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_fixture(name: str, data_dir: str | os.PathLike | None = None) -> ExampleFixture:
    """Load and validate a named fixture.

    Files are looked up in ``data_dir``, then ``$FRAO_DATA_DIR``, then the
    bundled data directory. Bundled files are checked against pinned SHA-256
    digests.
    """
    index = fixture_index()
    if name not in index:
        raise MissingFixtureError(f"unknown fixture {name!r}; known: {sorted(index)}")
    entry = index[name]
    candidates = [Path(p) for p in (data_dir, os.environ.get(DATA_ENV)) if p]
    candidates.append(_bundled_dir())
    path = next((d / entry["file"] for d in candidates if (d / entry["file"]).is_file()), None)
    if path is None:
        raise MissingFixtureError(
            f"missing fixture file {entry['file']!r} for {name!r}; {entry['provenance']}"
        )
    verified = False
    if path.parent == _bundled_dir() and entry.get("sha256"):
        if _sha256(path) != entry["sha256"]:
            raise SchemaError(f"checksum mismatch for bundled fixture {name!r}")
        verified = True
    columns = _read_csv(path)
    missing = [c for c in entry["columns"] if c not in columns]
    if missing:
        raise SchemaError(f"{path.name}: missing columns {missing}")
    columns = {c: columns[c] for c in entry["columns"]}
    n = len(next(iter(columns.values())))
    if n != entry["rows"]:
        raise SchemaError(f"{path.name}: expected {entry['rows']} rows, found {n}")
    for c, v in columns.items():
        if not np.all(np.isfinite(v)):
            raise SchemaError(f"{path.name}: non-finite values in column {c!r}")
    extra: dict = {}
    if name == "turtles":
        extra["angles"] = np.mod(np.deg2rad(columns["direction_deg"]), 2 * math.pi)
    elif name == "vasoconstriction":
        if not np.all(np.isin(columns["y"], (0.0, 1.0))):
            raise SchemaError("vasoconstriction response must be binary")
        extra["X"] = np.column_stack([np.ones(n), columns["volume"], columns["rate"]])
        extra["y"] = columns["y"]
    elif name == "surgical":
        if np.any(columns["survival"] <= 0):
            raise SchemaError("survival times must be positive")
        predictors = np.column_stack([columns[c] for c in entry["columns"][:8]])
        extra["X"], extra["y"] = standardized_design(predictors, np.log(columns["survival"]))
    return ExampleFixture(name, columns, entry["expected"], entry["provenance"], path, verified, extra)


def standardized_design(predictors: np.ndarray, response: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Z-score every predictor and the response, then prepend an intercept column."""
    z = (predictors - predictors.mean(axis=0)) / predictors.std(axis=0, ddof=1)
    y = (response - response.mean()) / response.std(ddof=1)
    return np.column_stack([np.ones(len(y)), z]), y


# --------------------------------------------------------------------------
# Gaussian location model

def normal_log_likelihood(rows: np.ndarray, theta: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    x = rows[:, 0]
    theta = np.atleast_1d(theta)
    r = (x[:, None] - theta[None, :]) / sigma
    return -0.5 * np.sum(r * r, axis=0) - x.size * (math.log(sigma) + 0.5 * math.log(2 * math.pi))


def gaussian_model(
    x: np.ndarray, prior_mean: float = 0.0, prior_sd: float = 1.0, domain: DomainSpec | None = None
) -> BayesModel:
    """``x_i ~ N(theta, 1)`` with a normal prior on ``theta``."""
    domain = DomainSpec.linear(-8.0, 8.0, 2048) if domain is None else domain
    prior = make_parametric("Normal", [prior_mean, prior_sd], domain)

    def log_prior(t):
        return -0.5 * ((t - prior_mean) / prior_sd) ** 2 - math.log(prior_sd) - 0.5 * math.log(2 * math.pi)

    return BayesModel(domain, normal_log_likelihood, np.asarray(x, dtype=float), prior, log_prior, "gaussian")


def conjugate_normal_posterior(x: np.ndarray, prior_mean: float = 0.0, prior_sd: float = 1.0) -> tuple[float, float]:
    """Posterior mean and standard deviation for ``x_i ~ N(theta, 1)``."""
    prec = 1.0 / prior_sd**2 + len(x)
    return (prior_mean / prior_sd**2 + float(np.sum(x))) / prec, 1.0 / math.sqrt(prec)


# --------------------------------------------------------------------------
# von Mises mean direction

def von_mises_log_likelihood(rows: np.ndarray, theta: np.ndarray, kappa: float = KAPPA_HAT) -> np.ndarray:
    x = rows[:, 0]
    theta = np.atleast_1d(theta)
    c = np.sum(np.cos(x)), np.sum(np.sin(x))
    return kappa * (c[0] * np.cos(theta) + c[1] * np.sin(theta)) - x.size * (
        math.log(2 * math.pi * special.i0e(kappa)) + kappa
    )


def von_mises_model(
    angles: np.ndarray,
    kappa: float = KAPPA_HAT,
    prior_mean: float = 0.0,
    prior_kappa: float = 0.01,
    domain: DomainSpec | None = None,
) -> BayesModel:
    """``x_i ~ vM(theta, kappa)`` with a ``vM(prior_mean, prior_kappa)`` prior."""
    domain = DomainSpec.circular() if domain is None else domain
    prior = make_parametric("VonMises", [prior_mean, prior_kappa], domain)

    def loglik(rows, theta):
        return von_mises_log_likelihood(rows, theta, kappa)

    def log_prior(t):
        return prior_kappa * (np.cos(t - prior_mean) - 1) - math.log(2 * math.pi * special.i0e(prior_kappa))

    return BayesModel(domain, loglik, np.asarray(angles, dtype=float), prior, log_prior, f"vonmises(kappa={kappa})")


def von_mises_conjugate(
    angles: np.ndarray, kappa: float, prior_mean: float = 0.0, prior_kappa: float = 0.01
) -> tuple[float, float]:
    """Closed-form posterior ``vM(mu, k)`` parameters for the mean direction."""
    c = kappa * np.sum(np.cos(angles)) + prior_kappa * math.cos(prior_mean)
    s = kappa * np.sum(np.sin(angles)) + prior_kappa * math.sin(prior_mean)
    return math.atan2(s, c), math.hypot(c, s)


def von_mises_mle_kappa(angles: np.ndarray) -> float:
    """Maximum-likelihood concentration: solves ``I1(k)/I0(k) = Rbar``."""
    from scipy.optimize import brentq

    rbar = math.hypot(np.mean(np.cos(angles)), np.mean(np.sin(angles)))
    return brentq(lambda k: special.i1e(k) / special.i0e(k) - rbar, 1e-8, 1e4)


# --------------------------------------------------------------------------
# logistic regression

def logistic_log_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """``sum_i y_i x_i'theta - log(1 + exp(x_i'theta))`` for each row of ``theta``.

    The softplus is evaluated with ``logaddexp`` so large linear predictors
    neither overflow nor lose the saturation limit.
    """
    theta = np.atleast_2d(theta)
    out = np.empty(theta.shape[0])
    for start in range(0, theta.shape[0], chunk):
        eta = theta[start : start + chunk] @ X.T
        out[start : start + chunk] = np.sum(y * eta - np.logaddexp(0.0, eta), axis=1)
    return out


def logistic_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    eta = X @ np.asarray(theta, dtype=float)
    return X.T @ (y - special.expit(eta))


def logistic_model(
    X: np.ndarray,
    y: np.ndarray,
    prior_mean: float = 1.0,
    prior_scale: float = 1000.0,
    scale_is_sd: bool = True,
    domain: DomainSpec | None = None,
    points_per_axis: int = 101,
    half_width_sds: float = 6.0,
    cover_deletions: bool = True,
) -> BayesModel:
    """Bayesian logistic regression on a 3D grid.

    Without an explicit ``domain`` the grid is the smallest box holding the
    Laplace box of the full-data posterior and, with ``cover_deletions``, of
    every case-deleted posterior.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    d = X.shape[1]
    sd = prior_scale if scale_is_sd else math.sqrt(prior_scale)
    mean = np.full(d, float(prior_mean))
    cov = np.eye(d) * sd**2
    data = np.column_stack([X, y])

    def loglik(rows, theta):
        return logistic_log_likelihood(theta, rows[:, :-1], rows[:, -1])

    def log_prior(t):
        t = np.atleast_2d(t)
        return -0.5 * np.sum((t - mean) ** 2, axis=1) / sd**2 - d * (math.log(sd) + 0.5 * math.log(2 * math.pi))

    if domain is None:
        # a placeholder grid only carries the prior for locating the modes
        probe = DomainSpec.linear(tuple(mean - 8 * sd), tuple(mean + 8 * sd), 16, dims=d)
        pilot = BayesModel(probe, loglik, data, _gaussian_grid(mean, cov, probe), log_prior, "logistic")
        start = _logistic_mle(X, y)
        boxes = [laplace_bounds(pilot, half_width_sds, points_per_axis, start=start)]
        if cover_deletions:
            for k in range(len(y)):
                boxes.append(laplace_bounds(pilot.deleted(k), half_width_sds, points_per_axis, start=start))
        domain = union_bounds(boxes, points_per_axis)
    prior = _gaussian_grid(mean, cov, domain)
    return BayesModel(domain, loglik, data, prior, log_prior, "logistic")


def _gaussian_grid(mean: np.ndarray, cov: np.ndarray, domain: DomainSpec) -> GridDensity:
    """Prior restricted to the grid; far wider than the grid, so no truncation warning."""
    from scipy.stats import multivariate_normal

    logp = multivariate_normal(mean, cov).logpdf(domain.nodes)
    return GridDensity.from_log_values(domain, np.atleast_1d(logp))


def _logistic_mle(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    from scipy.optimize import minimize

    res = minimize(
        lambda t: -logistic_log_likelihood(t, X, y)[0],
        np.zeros(X.shape[1]),
        jac=lambda t: -logistic_gradient(t, X, y),
        method="BFGS",
    )
    return res.x


# --------------------------------------------------------------------------
# conjugate linear regression

@dataclass(frozen=True)
class GaussianPosterior:
    """Multivariate normal with exact log density, used as an evaluable posterior."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("posterior covariance is not positive definite") from None
        object.__setattr__(self, "_chol", chol)

    @property
    def dims(self) -> int:
        return self.mean.size

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        z = np.linalg.solve(self._chol, (theta - self.mean).T)
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * np.sum(z * z, axis=0) - 0.5 * (log_det + self.dims * math.log(2 * math.pi))

    def sample(self, n: int, seed: int) -> SampleSet:
        rng = np.random.default_rng(seed)
        draws = self.mean + rng.standard_normal((n, self.dims)) @ self._chol.T
        return SampleSet(draws, diagnostics={"seed": seed, "sampler": "exact"})


@dataclass(frozen=True)
class LinearRegressionPosterior:
    """Conjugate posterior for ``y ~ N(X theta, sigma^2 I)`` and ``theta ~ N(0, tau^2 I)``."""

    X: np.ndarray
    y: np.ndarray
    sigma: float
    prior_var: float

    def _fit(self, X: np.ndarray, y: np.ndarray) -> GaussianPosterior:
        prec = X.T @ X / self.sigma**2 + np.eye(X.shape[1]) / self.prior_var
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        return GaussianPosterior(cov @ (X.T @ y) / self.sigma**2, cov)

    @property
    def full(self) -> GaussianPosterior:
        return self._fit(self.X, self.y)

    def deleted(self, k: int) -> GaussianPosterior:
        """Posterior without case ``k`` (0-based); ``sigma`` stays at its full-data value."""
        return self._fit(np.delete(self.X, k, axis=0), np.delete(self.y, k))

    def is_pair(self, k: int) -> tuple[GaussianPosterior, GaussianPosterior]:
        return self.full, self.deleted(k)


def linear_regression_posterior(
    X: np.ndarray,
    y: np.ndarray,
    prior_scale: float = 1000.0,
    scale_is_sd: bool = False,
    sigma: float | None = None,
) -> LinearRegressionPosterior:
    """Conjugate regression posterior with ``sigma`` plugged in from OLS residuals.

    ``prior_scale`` is the prior variance unless ``scale_is_sd``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise np.linalg.LinAlgError("design matrix is singular")
    if sigma is None:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        sigma = math.sqrt(float(resid @ resid) / (n - p))
    prior_var = prior_scale**2 if scale_is_sd else prior_scale
    return LinearRegressionPosterior(X, y, float(sigma), float(prior_var))


def regression_log_likelihood(rows: np.ndarray, theta: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian regression likelihood; ``rows`` hold the design row then the response."""
    theta = np.atleast_2d(theta)
    r = (rows[:, -1][None, :] - theta @ rows[:, :-1].T) / sigma
    return -0.5 * np.sum(r * r, axis=1) - rows.shape[0] * (math.log(sigma) + 0.5 * math.log(2 * math.pi))


def simulate_linear_regression(
    n: int = 54, p: int = 8, seed: int = 0, outliers: dict[int, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Standardized synthetic regression with optional response shifts at given cases."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    beta = rng.normal(0.0, 0.5, size=p)
    y = Z @ beta + rng.standard_normal(n)
    for k, shift in (outliers or {}).items():
        y[k] += shift
    return standardized_design(Z, y)


# --------------------------------------------------------------------------

def _gaussian_from_fixture(fx: ExampleFixture, **kw) -> BayesModel:
    return gaussian_model(fx.columns["x"], **kw)


def _turtles_from_fixture(fx: ExampleFixture, **kw) -> BayesModel:
    return von_mises_model(fx.extra["angles"], **kw)


def _vaso_from_fixture(fx: ExampleFixture, **kw) -> BayesModel:
    return logistic_model(fx.extra["X"], fx.extra["y"], **kw)


def _surgical_from_fixture(fx: ExampleFixture, **kw) -> LinearRegressionPosterior:
    return linear_regression_posterior(fx.extra["X"], fx.extra["y"], **kw)


MODEL_BUILDERS: dict[str, Callable] = {
    "gaussian50": _gaussian_from_fixture,
    "turtles": _turtles_from_fixture,
    "vasoconstriction": _vaso_from_fixture,
    "surgical": _surgical_from_fixture,
}
