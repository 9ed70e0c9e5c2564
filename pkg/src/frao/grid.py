"""Probability densities tabulated on uniform tensor grids.

A :class:`GridDensity` is the concrete stand-in for a point of the density
manifold: nonnegative values on the nodes of a :class:`DomainSpec` that
integrate to one under the domain's quadrature rule (trapezoid on linear
axes, periodic rectangle rule on the circle).
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special, stats
from scipy.interpolate import RegularGridInterpolator

TWO_PI = 2.0 * math.pi

DEFAULT_POINTS = {1: 2048, 2: 257, 3: 101}
MIN_POINTS = 16
NORMALIZATION_TOL = 1e-9
TRUNCATION_WARN = 1e-6


class Topology(str, Enum):
    LINEAR = "Linear"
    CIRCULAR = "Circular"


class Family(str, Enum):
    NORMAL = "Normal"
    SKEW_NORMAL = "SkewNormal"
    STUDENT_T = "StudentT"
    GAMMA = "Gamma"
    VON_MISES = "VonMises"
    WRAPPED_LAPLACE = "WrappedLaplace"
    MULTIVARIATE_NORMAL = "MultivariateNormal"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown family {name!r}")


class DomainMismatchError(ValueError):
    """Raised when two grid objects live on different domains."""


class TruncationWarning(UserWarning):
    """A parametric density has non-negligible mass outside the grid."""


@dataclass(frozen=True)
class DomainSpec:
    """Uniform tensor grid on a box (``Linear``) or on the circle (``Circular``).

    ``lower`` and ``upper`` accept a scalar (shared by every axis) or one
    bound per axis. Linear axes include both endpoints; a circular axis
    holds ``points_per_axis`` equally spaced angles starting at ``lower``
    and never repeats ``lower + 2*pi``.
    """

    topology: Topology
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points_per_axis: int
    dims: int = 1

    def __post_init__(self):
        topology = Topology(self.topology)
        dims = int(self.dims)
        if dims not in (1, 2, 3):
            raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
        lower = _per_axis(self.lower, dims, "lower")
        upper = _per_axis(self.upper, dims, "upper")
        n = int(self.points_per_axis)
        if n < MIN_POINTS:
            raise ValueError(f"points_per_axis must be >= {MIN_POINTS}, got {n}")
        for lo, hi in zip(lower, upper):
            if not hi > lo:
                raise ValueError(f"upper must exceed lower ({lo} >= {hi})")
        if topology is Topology.CIRCULAR:
            if dims != 1:
                raise ValueError("circular domains are one-dimensional")
            if abs((upper[0] - lower[0]) - TWO_PI) > 1e-12:
                raise ValueError("a circular domain must span exactly 2*pi")
        object.__setattr__(self, "topology", topology)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "points_per_axis", n)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def linear(cls, lower, upper, points_per_axis: int | None = None, dims: int = 1) -> "DomainSpec":
        if points_per_axis is None:
            points_per_axis = DEFAULT_POINTS[dims]
        return cls(Topology.LINEAR, lower, upper, points_per_axis, dims)

    @classmethod
    def circular(cls, lower: float = -math.pi, points_per_axis: int = DEFAULT_POINTS[1]) -> "DomainSpec":
        return cls(Topology.CIRCULAR, lower, lower + TWO_PI, points_per_axis, 1)

    @property
    def is_circular(self) -> bool:
        return self.topology is Topology.CIRCULAR

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dims

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dims

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        n = self.points_per_axis
        if self.is_circular:
            ax = self.lower[0] + TWO_PI * np.arange(n) / n
            ax.setflags(write=False)
            return (ax,)
        out = []
        for lo, hi in zip(self.lower, self.upper):
            ax = np.linspace(lo, hi, n)
            ax.setflags(write=False)
            out.append(ax)
        return tuple(out)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        n = self.points_per_axis
        if self.is_circular:
            return (TWO_PI / n,)
        return tuple((hi - lo) / (n - 1) for lo, hi in zip(self.lower, self.upper))

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dims)``, row-major flattening."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        out = np.stack([m.reshape(-1) for m in mesh], axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights matching :attr:`nodes`."""
        per_axis = []
        for h in self.spacing:
            w = np.full(self.points_per_axis, h)
            if not self.is_circular:
                w[0] = w[-1] = 0.5 * h
            per_axis.append(w)
        out = per_axis[0]
        for w in per_axis[1:]:
            out = np.multiply.outer(out, w).reshape(-1)
        out = np.ascontiguousarray(out)
        out.setflags(write=False)
        return out

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_circular:
            return np.isfinite(points[:, 0])
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((points >= lo) & (points <= hi), axis=1)

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.value,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "points_per_axis": self.points_per_axis,
            "dims": self.dims,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(
            Topology(d["topology"]),
            d["lower"],
            d["upper"],
            d.get("points_per_axis") or DEFAULT_POINTS[int(d.get("dims", 1))],
            d.get("dims", 1),
        )

    def check_same(self, other: "DomainSpec") -> None:
        if self != other:
            raise DomainMismatchError(f"domain mismatch: {self} vs {other}")


def _per_axis(value, dims: int, name: str) -> tuple[float, ...]:
    if np.ndim(value) == 0:
        return (float(value),) * dims
    out = tuple(float(v) for v in value)
    if len(out) != dims:
        raise ValueError(f"{name} needs {dims} entries, got {len(out)}")
    return out


def pilot_domain(mean, sd, points_per_axis: int | None = None, half_width: float = 8.0) -> DomainSpec:
    """Linear box ``mean +/- half_width * sd`` around a pilot moment estimate."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    if np.any(sd <= 0):
        raise ValueError("pilot standard deviation must be positive")
    return DomainSpec.linear(mean - half_width * sd, mean + half_width * sd, points_per_axis, dims=mean.size)


def quadrature(domain: DomainSpec, values: np.ndarray) -> float:
    # elementwise product then numpy's pairwise sum: fixed order, no BLAS reduction
    return float(np.sum(np.asarray(values) * domain.weights))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Normalized nonnegative values on every node of ``domain``.

    ``log_values``, when present, holds the exact log-density at each node
    (same normalization as ``values``). Parametric constructors fill it so
    that divergences stay finite where ``values`` underflows to zero.
    """

    domain: DomainSpec
    values: np.ndarray
    log_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.domain.size:
            raise ValueError(f"expected {self.domain.size} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        total = quadrature(self.domain, values)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"density integrates to {total!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.log_values is not None:
            logv = np.array(self.log_values, dtype=float).reshape(-1)
            logv.setflags(write=False)
            object.__setattr__(self, "log_values", logv)

    @classmethod
    def from_values(cls, domain: DomainSpec, values, *, log_values=None, diagnostics=None) -> "GridDensity":
        """Normalize ``values`` by quadrature and wrap them."""
        values = np.array(values, dtype=float).reshape(-1)
        if values.size != domain.size:
            raise ValueError(f"expected {domain.size} values, got {values.size}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and nonnegative")
        total = quadrature(domain, values)
        if not total > 0:
            raise ValueError("density has zero mass on the grid")
        if log_values is not None:
            log_values = np.asarray(log_values, dtype=float).reshape(-1) - math.log(total)
        return cls(domain, values / total, log_values, dict(diagnostics or {}))

    @classmethod
    def from_log_values(cls, domain: DomainSpec, log_values, *, diagnostics=None) -> "GridDensity":
        log_values = np.asarray(log_values, dtype=float).reshape(-1)
        top = np.max(log_values)
        if not np.isfinite(top):
            raise ValueError("log-density is -inf on every node")
        return cls.from_values(domain, np.exp(log_values - top), log_values=log_values - top, diagnostics=diagnostics)

    @property
    def grid_values(self) -> np.ndarray:
        return self.values.reshape(self.domain.shape)

    def mean(self) -> np.ndarray:
        nodes = self.domain.nodes
        if self.domain.is_circular:
            c = quadrature(self.domain, self.values * np.cos(nodes[:, 0]))
            s = quadrature(self.domain, self.values * np.sin(nodes[:, 0]))
            return np.array([math.atan2(s, c)])
        return np.array([quadrature(self.domain, self.values * nodes[:, j]) for j in range(self.domain.dims)])

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "values": self.values.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GridDensity":
        return cls(DomainSpec.from_dict(d["domain"]), np.asarray(d["values"], dtype=float))

    @classmethod
    def from_json(cls, text: str) -> "GridDensity":
        return cls.from_dict(json.loads(text))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.domain.to_dict()) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node", "value"])
        for i, v in enumerate(self.values):
            writer.writerow([i, repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GridDensity":
        text = Path(source).read_text() if not _looks_like_csv_text(source) else source
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError("grid density CSV must start with a '# {domain}' header")
        domain = DomainSpec.from_dict(json.loads(lines[0][1:]))
        rows = list(csv.reader(lines[2:]))
        values = np.empty(domain.size)
        for node, value in rows:
            values[int(node)] = float(value)
        return cls.from_values(domain, values)


def _looks_like_csv_text(source) -> bool:
    return isinstance(source, str) and "\n" in source


def integrate(p, domain: DomainSpec | None = None) -> float:
    """Quadrature integral of a :class:`GridDensity` or of raw node values."""
    if isinstance(p, GridDensity):
        return quadrature(p.domain, p.values)
    if domain is None:
        raise ValueError("raw values need a domain")
    values = np.asarray(p, dtype=float).reshape(-1)
    if values.size != domain.size:
        raise ValueError(f"expected {domain.size} values, got {values.size}")
    return quadrature(domain, values)


def evaluate(p: GridDensity, x):
    """Multilinear interpolation of ``p`` at one point or an array of points."""
    domain = p.domain
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 0 or (pts.ndim == 1 and domain.dims > 1 and pts.size == domain.dims)
    pts = pts.reshape(-1, domain.dims)
    if domain.is_circular:
        ax = domain.axes[0]
        out = np.interp(pts[:, 0], ax, p.values, period=TWO_PI)
    else:
        if not np.all(domain.contains(pts)):
            raise ValueError("evaluation point outside the linear domain")
        if domain.dims == 1:
            out = np.interp(pts[:, 0], domain.axes[0], p.values)
        else:
            interp = RegularGridInterpolator(domain.axes, p.grid_values, method="linear")
            out = interp(pts)
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# parametric families

def _wrapped_laplace_logpdf(x, lam: float, eta: float, mode: float = 0.0):
    """Wrapped asymmetric Laplace, closed-form sum of the wrapped series.

    ``lam`` is the concentration and ``eta`` the skewness: ``eta < 1`` puts
    the heavier tail counterclockwise, ``eta = 1`` is symmetric about ``mode``.
    """
    t = np.mod(np.asarray(x, dtype=float) - mode, TWO_PI)
    a = eta * lam  # decay rate counterclockwise of the mode
    b = lam / eta  # decay rate clockwise of the mode
    log_c = math.log(eta * lam / (1.0 + eta**2))
    # e^{-a t} / (1 - e^{-2 pi a})  and  e^{-b (2 pi - t)} / (1 - e^{-2 pi b})
    first = -a * t - math.log(-math.expm1(-TWO_PI * a))
    second = -b * (TWO_PI - t) - math.log(-math.expm1(-TWO_PI * b))
    return log_c + np.logaddexp(first, second)


def _von_mises_logpdf(x, mu: float, kappa: float):
    return kappa * (np.cos(np.asarray(x, dtype=float) - mu) - 1.0) - math.log(TWO_PI * special.i0e(kappa))


def _split_params(family: Family, params: Sequence[float], dims: int):
    p = [float(v) for v in np.atleast_1d(np.asarray(params, dtype=float))]

    def need(lo, hi=None):
        hi = lo if hi is None else hi
        if not lo <= len(p) <= hi:
            raise ValueError(f"{family.value} expects {lo}..{hi} parameters, got {len(p)}")

    if family is Family.NORMAL:
        need(2)
        mu, sigma = p
        if sigma <= 0:
            raise ValueError("Normal scale must be positive")
        return stats.norm(mu, sigma)
    if family is Family.SKEW_NORMAL:
        need(1, 3)
        alpha, loc, scale = (p + [0.0, 1.0][len(p) - 1:])[:3]
        if scale <= 0:
            raise ValueError("SkewNormal scale must be positive")
        return stats.skewnorm(alpha, loc, scale)
    if family is Family.STUDENT_T:
        need(1, 3)
        df, loc, scale = (p + [0.0, 1.0][len(p) - 1:])[:3]
        if df < 1 or scale <= 0:
            raise ValueError("StudentT needs df >= 1 and a positive scale")
        return stats.t(df, loc, scale)
    if family is Family.GAMMA:
        need(2)
        shape, rate = p
        if shape <= 0 or rate <= 0:
            raise ValueError("Gamma shape and rate must be positive")
        return stats.gamma(shape, scale=1.0 / rate)
    if family is Family.VON_MISES:
        need(2)
        if p[1] < 0:
            raise ValueError("VonMises concentration must be nonnegative")
        return tuple(p)
    if family is Family.WRAPPED_LAPLACE:
        need(2, 3)
        lam, eta = p[0], p[1]
        mode = p[2] if len(p) == 3 else 0.0
        if lam <= 0 or eta <= 0:
            raise ValueError("WrappedLaplace needs lambda > 0 and eta > 0")
        return (lam, eta, mode)
    if family is Family.MULTIVARIATE_NORMAL:
        if len(p) != dims + dims * dims:
            raise ValueError(f"MultivariateNormal on {dims} dims expects {dims + dims * dims} parameters")
        mean = np.array(p[:dims])
        cov = np.array(p[dims:]).reshape(dims, dims)
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        return stats.multivariate_normal(mean, cov)
    raise ValueError(f"unsupported family {family}")


def parametric_logpdf(family, params, x, dims: int = 1) -> np.ndarray:
    """Exact log-density of a supported family at points ``x``."""
    family = Family.parse(family)
    dist = _split_params(family, params, dims)
    x = np.asarray(x, dtype=float)
    if family is Family.VON_MISES:
        return _von_mises_logpdf(x.reshape(-1), *dist)
    if family is Family.WRAPPED_LAPLACE:
        return _wrapped_laplace_logpdf(x.reshape(-1), *dist)
    if family is Family.MULTIVARIATE_NORMAL:
        return np.atleast_1d(dist.logpdf(x.reshape(-1, dims)))
    return dist.logpdf(x.reshape(-1))


def make_parametric(family, params, domain: DomainSpec) -> GridDensity:
    """Tabulate a parametric density on ``domain`` and renormalize it.

    Parameter vectors:

    ========================  =====================================
    Normal                    ``[mu, sigma]``
    SkewNormal                ``[alpha, loc=0, scale=1]``
    StudentT                  ``[df, loc=0, scale=1]``
    Gamma                     ``[shape, rate]``
    VonMises                  ``[mu, kappa]``
    WrappedLaplace            ``[lambda, eta, mode=0]``
    MultivariateNormal        ``[mean (d), cov (d*d, row-major)]``
    ========================  =====================================

    Mass lost to truncation on a linear domain is absorbed by the
    renormalization and reported in ``diagnostics["truncated_mass"]``.
    """
    family = Family.parse(family)
    circular_family = family in (Family.VON_MISES, Family.WRAPPED_LAPLACE)
    if circular_family != domain.is_circular:
        raise ValueError(f"{family.value} does not live on a {domain.topology.value} domain")
    if family is Family.MULTIVARIATE_NORMAL:
        dims = domain.dims
    elif domain.dims != 1:
        raise ValueError(f"{family.value} is univariate; domain has {domain.dims} dims")
    else:
        dims = 1
    dist = _split_params(family, params, dims)
    nodes = domain.nodes if dims > 1 else domain.nodes[:, 0]
    logv = parametric_logpdf(family, params, nodes, dims)
    raw = np.exp(logv)
    diagnostics = {"family": family.value, "params": [float(v) for v in np.atleast_1d(params)]}
    if domain.is_circular:
        truncated = 0.0
    elif dims == 1:
        truncated = float(dist.cdf(domain.lower[0]) + dist.sf(domain.upper[0]))
    else:
        truncated = max(0.0, 1.0 - quadrature(domain, raw))
    diagnostics["truncated_mass"] = truncated
    if truncated > TRUNCATION_WARN:
        warnings.warn(
            f"{family.value}{tuple(diagnostics['params'])} has mass {truncated:.3g} outside the grid",
            TruncationWarning,
            stacklevel=2,
        )
    return GridDensity.from_values(domain, raw, log_values=logv, diagnostics=diagnostics)


# --------------------------------------------------------------------------
# samples and kernel density estimation

@dataclass(frozen=True, eq=False)
class SampleSet:
    """Draws of a parameter vector, one row per draw, with optional weights."""

    draws: np.ndarray
    weights: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = np.array(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.ndim != 2 or draws.shape[0] == 0:
            raise ValueError("a sample set needs at least one draw")
        if not np.all(np.isfinite(draws)):
            raise ValueError("draws must be finite")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.size != draws.shape[0] or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per draw")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.draws.shape[0]

    @property
    def dims(self) -> int:
        return self.draws.shape[1]

    def head(self, n: int) -> "SampleSet":
        """First ``n`` draws (weights renormalized)."""
        w = None
        if self.weights is not None:
            w = self.weights[:n] / self.weights[:n].sum()
        return SampleSet(self.draws[:n], w, dict(self.diagnostics))

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
        return cls(np.array([[float(v) for v in r] for r in rows]))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.draws, delimiter=",")


def silverman_bandwidth(draws: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Per-axis rule-of-thumb bandwidth ``1.06 * sd * n**(-1/5)``."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 1 and draws.shape[1] > 1:
        draws = draws.T
    n = draws.shape[0]
    if weights is None:
        sd = draws.std(axis=0, ddof=1)
    else:
        mu = weights @ draws
        sd = np.sqrt(weights @ (draws - mu) ** 2 * n / (n - 1))
    return 1.06 * sd * n ** (-0.2)


def _kernel_matrix(axis: np.ndarray, x: np.ndarray, h: float, circular: bool) -> np.ndarray:
    d = axis[None, :] - x[:, None]
    if circular:
        d = np.mod(d + math.pi, TWO_PI) - math.pi
        k = sum(np.exp(-0.5 * ((d + s) / h) ** 2) for s in (-TWO_PI, 0.0, TWO_PI))
    else:
        k = np.exp(-0.5 * (d / h) ** 2)
    return k / (h * math.sqrt(TWO_PI))


def kde(samples: SampleSet, domain: DomainSpec, bandwidth=None, *, chunk: int = 2048) -> GridDensity:
    """Gaussian product-kernel density estimate tabulated on ``domain``."""
    draws = samples.draws
    n = draws.shape[0]
    if n < 30:
        raise ValueError(f"kde needs at least 30 draws, got {n}")
    if draws.shape[1] != domain.dims:
        raise ValueError("sample dimension does not match the domain")
    if not np.all(domain.contains(draws)):
        raise ValueError("draws fall outside the domain bounds")
    w = samples.weights if samples.weights is not None else np.full(n, 1.0 / n)
    if bandwidth is None:
        h = silverman_bandwidth(draws, samples.weights)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (domain.dims,))
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise ValueError("zero sample variance: bandwidth would vanish")
    circ = domain.is_circular
    shape = domain.shape
    acc = np.zeros(shape)
    if domain.dims == 3:
        chunk = min(chunk, 256)
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        mats = [_kernel_matrix(domain.axes[j], draws[sl, j], float(h[j]), circ) for j in range(domain.dims)]
        wk = w[sl]
        if domain.dims == 1:
            acc += wk @ mats[0]
        elif domain.dims == 2:
            acc += (mats[0] * wk[:, None]).T @ mats[1]
        else:
            outer = (mats[0] * wk[:, None])[:, :, None] * mats[1][:, None, :]
            acc += (outer.reshape(outer.shape[0], -1).T @ mats[2]).reshape(shape)
    diag = {"bandwidth": [float(v) for v in h], "n_draws": int(n)}
    return GridDensity.from_values(domain, acc.reshape(-1), diagnostics=diag)
