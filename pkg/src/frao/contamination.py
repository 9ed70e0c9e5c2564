"""Geometric and linear epsilon-contamination of priors and likelihoods."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

import numpy as np

from .geometry import TangentVector, exp_map, from_srt, log_map, to_srt
from .grid import DomainSpec, GridDensity, make_parametric, quadrature


class Mode(str, Enum):
    GEOMETRIC = "Geometric"
    LINEAR = "Linear"


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    return eps


def perturbation_vector(pi0: GridDensity, g: GridDensity) -> TangentVector:
    """Tangent vector at ``sqrt(pi0)`` pointing at ``sqrt(g)``."""
    pi0.domain.check_same(g.domain)
    return log_map(to_srt(pi0), to_srt(g))


def contaminate(pi0: GridDensity, g: GridDensity, eps: float) -> GridDensity:
    """Move ``eps`` of the way along the Fisher-Rao geodesic from ``pi0`` to ``g``."""
    eps = _check_eps(eps)
    v = perturbation_vector(pi0, g)
    if eps == 0.0 or v.norm < 1e-14:
        return pi0
    return from_srt(exp_map(eps * v))


def contaminate_linear(pi0: GridDensity, g: GridDensity, eps: float) -> GridDensity:
    """Mixture ``(1 - eps) * pi0 + eps * g``."""
    eps = _check_eps(eps)
    pi0.domain.check_same(g.domain)
    if eps == 0.0:
        return pi0
    if eps == 1.0:
        return g
    return GridDensity.from_values(pi0.domain, (1.0 - eps) * pi0.values + eps * g.values)


@dataclass(frozen=True, eq=False)
class ContaminationClass:
    """Baseline prior, named finite family of contaminants and an epsilon grid."""

    baseline: GridDensity
    contaminants: dict[str, GridDensity]
    epsilons: tuple[float, ...]
    mode: Mode = Mode.GEOMETRIC
    parameters: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if any(not 0.0 <= e <= 1.0 for e in eps):
            raise ValueError("epsilons must lie in [0, 1]")
        if list(eps) != sorted(eps):
            raise ValueError("epsilons must be sorted")
        for name, g in self.contaminants.items():
            try:
                self.baseline.domain.check_same(g.domain)
            except ValueError as exc:
                raise ValueError(f"contaminant {name!r}: {exc}") from None
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "contaminants", dict(self.contaminants))

    def __len__(self) -> int:
        return len(self.contaminants) * len(self.epsilons)

    @property
    def ids(self) -> list[str]:
        return list(self.contaminants)

    def member(self, contaminant_id: str, eps: float) -> GridDensity:
        g = self.contaminants[contaminant_id]
        if self.mode is Mode.GEOMETRIC:
            return contaminate(self.baseline, g, eps)
        return contaminate_linear(self.baseline, g, eps)

    def enumerate(self) -> Iterator[tuple[str, float, GridDensity]]:
        """Lazily yield ``(contaminant id, eps, density)`` over the full product."""
        for cid in self.contaminants:
            for eps in self.epsilons:
                yield cid, eps, self.member(cid, eps)

    @classmethod
    def from_spec(cls, spec: dict, domain: DomainSpec | None = None) -> "ContaminationClass":
        """Build a class from a JSON-style document.

        Example::

            {"domain": {"topology": "Linear", "lower": -8, "upper": 8,
                        "points_per_axis": 2048, "dims": 1},
             "baseline": {"family": "Normal", "params": [0, 1]},
             "contaminants": {"family": "SkewNormal", "base": [0],
                              "grid": {"0": {"linspace": [-5, 5, 101]}}},
             "epsilons": {"linspace": [0, 1, 31]},
             "mode": "Geometric"}
        """
        if domain is None:
            domain = DomainSpec.from_dict(spec["domain"])
        base = spec["baseline"]
        baseline = make_parametric(base["family"], base["params"], domain)
        contaminants: dict[str, GridDensity] = {}
        params: dict[str, list[float]] = {}
        for family, vec in _expand_contaminants(spec["contaminants"]):
            cid = f"{family}({', '.join(_fmt(v) for v in vec)})"
            contaminants[cid] = make_parametric(family, vec, domain)
            params[cid] = vec
        return cls(baseline, contaminants, tuple(expand_values(spec["epsilons"])), spec.get("mode", "Geometric"), params)

    @classmethod
    def from_json(cls, text: str, domain: DomainSpec | None = None) -> "ContaminationClass":
        return cls.from_spec(json.loads(text), domain)


def enumerate_class(cls: ContaminationClass) -> list[tuple[str, float, GridDensity]]:
    return list(cls.enumerate())


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def expand_values(spec) -> list[float]:
    """``[..]``, ``{"values": [..]}`` or ``{"linspace": [start, stop, num]}``."""
    if isinstance(spec, dict):
        if "linspace" in spec:
            start, stop, num = spec["linspace"]
            return [float(v) for v in np.linspace(start, stop, int(num))]
        if "values" in spec:
            return [float(v) for v in spec["values"]]
        raise ValueError(f"cannot expand value spec {spec!r}")
    return [float(v) for v in np.atleast_1d(spec)]


def _expand_contaminants(spec) -> list[tuple[str, list[float]]]:
    if isinstance(spec, list):
        out = []
        for item in spec:
            out.extend(_expand_contaminants(item))
        return out
    family = spec["family"]
    if "params" in spec:
        return [(family, [float(v) for v in spec["params"]])]
    base = [float(v) for v in spec.get("base", [])]
    grid = {int(k): expand_values(v) for k, v in spec.get("grid", {}).items()}
    size = max([len(base)] + [k + 1 for k in grid])
    base = base + [0.0] * (size - len(base))
    keys = sorted(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        vec = list(base)
        for k, v in zip(keys, combo):
            vec[k] = v
        out.append((family, vec))
    return out


# --------------------------------------------------------------------------
# likelihoods tabulated on (x, theta) grids

class NonNormalizedLikelihood(ValueError):
    """A likelihood slice ``f(. | theta)`` does not integrate to one in x."""


@dataclass(frozen=True, eq=False)
class LikelihoodGrid:
    """Sampling densities ``f(x | theta)``: rows index x nodes, columns theta nodes."""

    x_domain: DomainSpec
    theta_domain: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.x_domain.size, self.theta_domain.size)
        if values.shape != expected:
            raise ValueError(f"likelihood grid must have shape {expected}, got {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("likelihood values must be finite and nonnegative")
        mass = self.x_domain.weights @ values
        if np.max(np.abs(mass - 1.0)) > 1e-6:
            raise NonNormalizedLikelihood(f"slice masses range over [{mass.min():.6g}, {mass.max():.6g}]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, x_domain: DomainSpec, theta_domain: DomainSpec, fn: Callable) -> "LikelihoodGrid":
        """Tabulate ``fn(x, theta)`` (broadcasting) and renormalize every slice."""
        x = x_domain.nodes[:, 0][:, None]
        theta = theta_domain.nodes[:, 0][None, :]
        values = np.broadcast_to(np.asarray(fn(x, theta), dtype=float), (x_domain.size, theta_domain.size))
        values = values / (x_domain.weights @ values)[None, :]
        return cls(x_domain, theta_domain, values)


def _column_geodesic(base: np.ndarray, target: np.ndarray, w: np.ndarray, eps: float) -> np.ndarray:
    """Columnwise ``exp(eps * log_base(target))`` for unit columns."""
    ip = np.clip(w @ (base * target), 0.0, 1.0)
    u = target - ip[None, :] * base
    u_norm = np.sqrt(w @ (u * u))
    chord = np.sqrt(w @ ((base - target) ** 2))
    theta = 2.0 * np.arcsin(np.minimum(1.0, 0.5 * chord))
    out = base.copy()
    move = (u_norm > 0) & (theta > 0)
    t = eps * theta[move]
    out[:, move] = np.cos(t)[None, :] * base[:, move] + (np.sin(t) / u_norm[move])[None, :] * u[:, move]
    return np.maximum(out, 0.0)


def contaminate_likelihood(f0: LikelihoodGrid, q: LikelihoodGrid, eps: float) -> LikelihoodGrid:
    """Geometric contamination of every slice ``f0(. | theta)`` toward ``q(. | theta)``."""
    eps = _check_eps(eps)
    if f0.x_domain != q.x_domain or f0.theta_domain != q.theta_domain:
        raise ValueError("likelihood grids live on different domains")
    if eps == 0.0 or np.array_equal(f0.values, q.values):
        return f0
    root = _column_geodesic(np.sqrt(f0.values), np.sqrt(q.values), f0.x_domain.weights, eps)
    values = root * root
    values = values / (f0.x_domain.weights @ values)[None, :]
    return LikelihoodGrid(f0.x_domain, f0.theta_domain, values)


def _forward_derivative(path: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    """Second-order one-sided derivative at 0 using only nonnegative steps."""
    e0, e1, e2 = path(0.0), path(h), path(2.0 * h)
    return (4.0 * (e1 - e0) - (e2 - e0)) / (2.0 * h)


def _joint_quadrature(f: LikelihoodGrid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(f.x_domain.weights @ (a * b) * f.theta_domain.weights))


def joint_isometry_check(
    pi0: GridDensity, g1: GridDensity, g2: GridDensity, f: LikelihoodGrid, h: float = 1e-5
) -> tuple[float, float]:
    """Inner product of two prior perturbations on the joint and on the prior space.

    The joint-space tangents are obtained by numerically differentiating
    ``sqrt(f(x|theta) * pi_eps(theta))`` along the contamination path, then
    integrated over the full ``(x, theta)`` grid. The prior-space value is
    the plain inner product of the two perturbation vectors.
    """
    f.theta_domain.check_same(pi0.domain)
    root_f = np.sqrt(f.values)
    joint = []
    for g in (g1, g2):
        d = _forward_derivative(lambda e, g=g: np.sqrt(contaminate(pi0, g, e).values), h)
        joint.append(root_f * d[None, :])
    lhs = _joint_quadrature(f, joint[0], joint[1])
    v1, v2 = perturbation_vector(pi0, g1), perturbation_vector(pi0, g2)
    rhs = quadrature(pi0.domain, v1.values * v2.values)
    return lhs, rhs


def prior_likelihood_orthogonality_check(
    f0: LikelihoodGrid, pi0: GridDensity, q: LikelihoodGrid, g: GridDensity, h: float = 1e-5
) -> float:
    """Joint-space inner product of a prior and a likelihood perturbation."""
    f0.theta_domain.check_same(pi0.domain)
    d_prior = _forward_derivative(lambda e: np.sqrt(contaminate(pi0, g, e).values), h)
    v_g = np.sqrt(f0.values) * d_prior[None, :]
    d_lik = _forward_derivative(lambda e: np.sqrt(contaminate_likelihood(f0, q, e).values), h)
    v_q = d_lik * np.sqrt(pi0.values)[None, :]
    return _joint_quadrature(f0, v_g, v_q)
