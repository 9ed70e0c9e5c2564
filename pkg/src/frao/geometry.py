"""Square-root transform and geometry of the unit Hilbert-sphere orthant.

Under ``psi = sqrt(p)`` the Fisher-Rao metric becomes the flat L2 inner
product, so distances, geodesics and exponential/log maps all have closed
forms. Every inner product here uses the grid quadrature of the domain the
functions live on.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import DomainSpec, GridDensity, quadrature

UNIT_NORM_TOL = 1e-9
TANGENCY_TOL = 1e-8
CLAMP_FLAG_TOL = 1e-6
# relative size below which exp_map output negatives are treated as roundoff
NEGATIVE_ROUNDOFF = 1e-12


class ClampWarning(UserWarning):
    """An inner product between unit vectors exceeded one by a visible margin."""


@dataclass(frozen=True, eq=False)
class SrtDensity:
    """Square root of a density: nonnegative, unit L2 norm on the grid."""

    domain: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.domain.size:
            raise ValueError(f"expected {self.domain.size} values, got {values.size}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("SRT values must be finite and nonnegative")
        norm = math.sqrt(quadrature(self.domain, values * values))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"SRT function has norm {norm!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def norm(self) -> float:
        return math.sqrt(quadrature(self.domain, self.values**2))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Element of the tangent space at ``base``.

    A vector failing the tangency tolerance is re-projected once onto the
    orthogonal complement of ``base`` before validation.
    """

    base: SrtDensity
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.base.domain.size:
            raise ValueError("tangent vector does not match its base grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("tangent values must be finite")
        w = self.base.domain.weights
        ip = float(np.sum(values * self.base.values * w))
        if abs(ip) > TANGENCY_TOL:
            values = values - ip * self.base.values
            ip = float(np.sum(values * self.base.values * w))
            if abs(ip) > TANGENCY_TOL:
                raise ValueError(f"vector is not tangent at its base (<v, psi> = {ip:.3g})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def domain(self) -> DomainSpec:
        return self.base.domain

    @property
    def norm(self) -> float:
        return math.sqrt(quadrature(self.domain, self.values**2))

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(self.base, float(c) * self.values)

    __rmul__ = __mul__

    def __add__(self, other: "TangentVector") -> "TangentVector":
        if other.base is not self.base and not np.array_equal(other.base.values, self.base.values):
            raise ValueError("tangent vectors live at different base points")
        return TangentVector(self.base, self.values + other.values)

    def __neg__(self) -> "TangentVector":
        return TangentVector(self.base, -self.values)

    @classmethod
    def zero(cls, base: SrtDensity) -> "TangentVector":
        return cls(base, np.zeros_like(base.values))


def to_srt(p: GridDensity) -> SrtDensity:
    psi = np.sqrt(p.values)
    norm = math.sqrt(quadrature(p.domain, psi * psi))
    if abs(norm - 1.0) > 1e-12:
        psi = psi / norm
    return SrtDensity(p.domain, psi)


def from_srt(psi: SrtDensity) -> GridDensity:
    return GridDensity.from_values(psi.domain, psi.values * psi.values)


def inner(a, b) -> float:
    """Quadrature L2 inner product of two grid functions on one domain."""
    a.domain.check_same(b.domain)
    return quadrature(a.domain, a.values * b.values)


def _angle(a: np.ndarray, b: np.ndarray, w: np.ndarray, diagnostics: dict | None = None) -> tuple[float, float]:
    """Great-circle angle between unit grid functions, plus their inner product.

    Near zero the angle comes from the chord length, which keeps it accurate
    where ``arccos`` of an inner product close to 1 would lose half the digits.
    """
    ip = float(np.sum(a * b * w))
    if ip > 1.0 + CLAMP_FLAG_TOL:
        if diagnostics is not None:
            diagnostics["clamped"] = True
            diagnostics["raw_inner_product"] = ip
        warnings.warn(f"inner product {ip!r} > 1 clamped", ClampWarning, stacklevel=3)
    ip_c = min(max(ip, 0.0), 1.0)
    if ip_c > 0.5:
        chord = math.sqrt(float(np.sum((a - b) ** 2 * w)))
        theta = 2.0 * math.asin(min(1.0, 0.5 * chord))
    else:
        theta = math.acos(ip_c)
    return theta, ip_c


def bhattacharyya(p1: GridDensity, p2: GridDensity) -> float:
    """Bhattacharyya coefficient, the cosine of the Fisher-Rao distance."""
    p1.domain.check_same(p2.domain)
    return quadrature(p1.domain, np.sqrt(p1.values * p2.values))


def hellinger(p1: GridDensity, p2: GridDensity) -> float:
    """Chord length between the square roots (the unscaled Hellinger distance)."""
    p1.domain.check_same(p2.domain)
    d = np.sqrt(p1.values) - np.sqrt(p2.values)
    return math.sqrt(quadrature(p1.domain, d * d))


def fr_distance(p1: GridDensity, p2: GridDensity, diagnostics: dict | None = None) -> float:
    """Fisher-Rao geodesic distance, in ``[0, pi/2]``."""
    p1.domain.check_same(p2.domain)
    if p1 is p2 or np.array_equal(p1.values, p2.values):
        return 0.0
    a, b = to_srt(p1), to_srt(p2)
    return srt_distance(a, b, diagnostics)


def srt_distance(a: SrtDensity, b: SrtDensity, diagnostics: dict | None = None) -> float:
    a.domain.check_same(b.domain)
    theta, _ = _angle(a.values, b.values, a.domain.weights, diagnostics)
    return theta


def geodesic_path(psi1: SrtDensity, psi2: SrtDensity, tau: float) -> SrtDensity:
    """Point at fraction ``tau`` along the great circle from ``psi1`` to ``psi2``."""
    psi1.domain.check_same(psi2.domain)
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if tau == 0.0:
        return psi1
    if tau == 1.0:
        return psi2
    theta, _ = _angle(psi1.values, psi2.values, psi1.domain.weights)
    if theta < 1e-12:
        return psi1
    s = math.sin(theta)
    values = (math.sin(theta - tau * theta) * psi1.values + math.sin(tau * theta) * psi2.values) / s
    return SrtDensity(psi1.domain, values)


def exp_map(v: TangentVector) -> SrtDensity:
    base = v.base
    n = v.norm
    if n < 1e-14:
        return base
    values = math.cos(n) * base.values + (math.sin(n) / n) * v.values
    floor = -NEGATIVE_ROUNDOFF * float(np.max(np.abs(values)))
    if np.any(values < floor):
        raise ValueError("exponential map leaves the nonnegative orthant for this tangent vector")
    values = np.maximum(values, 0.0)
    return SrtDensity(base.domain, values)


def log_map(psi1: SrtDensity, psi2: SrtDensity) -> TangentVector:
    """Inverse exponential map at ``psi1``; the result has norm ``d(psi1, psi2)``."""
    psi1.domain.check_same(psi2.domain)
    if psi1 is psi2 or np.array_equal(psi1.values, psi2.values):
        return TangentVector.zero(psi1)
    w = psi1.domain.weights
    theta, ip = _angle(psi1.values, psi2.values, w)
    u = psi2.values - ip * psi1.values
    u_norm = math.sqrt(float(np.sum(u * u * w)))
    if theta == 0.0 or u_norm == 0.0:
        return TangentVector.zero(psi1)
    # theta * u / |u| equals (theta / sin theta) * (psi2 - cos theta * psi1)
    # without dividing by a small sine
    return TangentVector(psi1, (theta / u_norm) * u)


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Kullback-Leibler divergence ``KL(p || q)`` by grid quadrature.

    Uses exact log-values when both densities carry them, otherwise logs of
    the stored values with the convention ``0 log 0 = 0``.
    """
    p.domain.check_same(q.domain)
    support = p.values > 0
    if p.log_values is not None and q.log_values is not None:
        lp, lq = p.log_values, q.log_values
        if np.any(support & ~np.isfinite(lq)):
            raise ValueError("KL undefined: q vanishes where p has mass")
        integrand = np.where(support, p.values * (lp - np.where(support, lq, 0.0)), 0.0)
        return quadrature(p.domain, integrand)
    if np.any(support & (q.values <= 0)):
        raise ValueError("KL undefined: q vanishes where p has mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(support, p.values * (np.log(p.values) - np.log(q.values)), 0.0)
    return quadrature(p.domain, integrand)


def srt_pushforward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Differential of ``p -> sqrt(p)`` applied to ``dp``, by complex-step differentiation."""
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    out = np.zeros_like(p)
    active = dp != 0
    # per-node step keeps h*dp/p at 1e-10 so the O(h^2) term is far below roundoff
    h = 1e-10 * p[active] / np.abs(dp[active])
    out[active] = np.sqrt(p[active] + 1j * h * dp[active]).imag / h
    return out


def pullback_check(p: GridDensity, dp1, dp2) -> tuple[float, float]:
    """Both sides of the square-root pullback identity for two perturbations.

    Returns ``(<phi_*(dp1), phi_*(dp2)>, 0.25 * <<dp1, dp2>>_p)``: the flat
    inner product of the pushed-forward perturbations and a quarter of the
    Fisher-Rao metric at ``p``.
    """
    dp1 = np.asarray(dp1, dtype=float).reshape(-1)
    dp2 = np.asarray(dp2, dtype=float).reshape(-1)
    domain = p.domain
    for dp in (dp1, dp2):
        if dp.size != domain.size:
            raise ValueError("perturbation does not match the grid")
        scale = quadrature(domain, np.abs(dp))
        if abs(quadrature(domain, dp)) > 1e-8 * max(scale, 1.0):
            raise ValueError("perturbation must integrate to zero")
        if np.any((p.values == 0) & (dp != 0)):
            raise ValueError("perturbation is nonzero where p vanishes")
    push1 = srt_pushforward(p.values, dp1)
    push2 = srt_pushforward(p.values, dp2)
    lhs = quadrature(domain, push1 * push2)
    support = p.values > 0
    fisher = np.zeros_like(dp1)
    fisher[support] = dp1[support] * dp2[support] / p.values[support]
    rhs = 0.25 * quadrature(domain, fisher)
    return lhs, rhs


def distance_matrix(densities: Sequence[GridDensity]) -> np.ndarray:
    n = len(densities)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = fr_distance(densities[i], densities[j])
    return out


def matrix_to_csv(matrix: np.ndarray, labels: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(labels))
    for label, row in zip(labels, matrix):
        writer.writerow([label] + [repr(float(v)) for v in row])
    return buf.getvalue()


def geodesic_to_csv(p1: GridDensity, p2: GridDensity, n_tau: int = 11) -> str:
    """Densities along the geodesic, one column per tau sample."""
    a, b = to_srt(p1), to_srt(p2)
    taus = np.linspace(0.0, 1.0, n_tau)
    cols = [from_srt(geodesic_path(a, b, float(t))).values for t in taus]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    nodes = p1.domain.nodes
    coord_names = [f"x{j}" for j in range(p1.domain.dims)]
    writer.writerow(coord_names + [f"tau={t:.2f}" for t in taus])
    for i in range(p1.domain.size):
        writer.writerow([repr(float(c)) for c in nodes[i]] + [repr(float(col[i])) for col in cols])
    return buf.getvalue()
