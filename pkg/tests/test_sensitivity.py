import csv
import io
import json
import math

import numpy as np
import pytest

from conftest import random_gaussian_models
from frao.bayes import expectation, marginal_contaminated, log_marginal, posterior
from frao.contamination import ContaminationClass, contaminate, perturbation_vector
from frao.fixtures import KAPPA_HAT, von_mises_model
from frao.geometry import TangentVector, fr_distance
from frao.grid import DomainSpec, make_parametric
from frao.sensitivity import (
    global_report,
    global_sensitivity,
    likelihood_sensitivity_curve,
    local_bayes_factor,
    local_geodesic_second_order,
    local_posterior_functional,
    local_report,
    posterior_distances,
    sensitivity_surface,
    squared_hellinger_path,
)

H = 1e-4


def one_sided(f, h=H):
    """Second-order one-sided first derivative at 0; contamination needs eps >= 0."""
    return (-3 * f(0.0) + 4 * f(h) - f(2 * h)) / (2 * h)


def second_order_fd(model, g, h=1e-3):
    # f(0) = f'(0) = 0, so 8 f(h) - f(2h) = f''(0) h^2 * 2 + O(h^4)
    fh, f2h = squared_hellinger_path(model, g, [h, 2 * h])
    return (8 * fh - f2h) / (2 * h * h)


def skew_class(domain, alphas=(-5, -2, 0, 2, 5), eps=(0.0, 0.25, 0.5, 1.0), mode="Geometric"):
    return ContaminationClass.from_spec(
        {
            "baseline": {"family": "Normal", "params": [0, 1]},
            "contaminants": {"family": "SkewNormal", "base": [0, 0, 1], "grid": {"0": {"values": list(alphas)}}},
            "epsilons": list(eps),
            "mode": mode,
        },
        domain,
    )


class TestGlobal:
    def test_zero_at_eps_zero(self, gauss_model, line):
        s, _ = global_sensitivity(gauss_model, skew_class(line), 0.0)
        assert s == 0.0

    def test_alpha_zero_column_is_zero(self, gauss_model, line):
        surface = sensitivity_surface(gauss_model, skew_class(line))
        j = surface.ids.index("SkewNormal(0, 0, 1)")
        np.testing.assert_allclose(surface.values[:, j], 0.0, atol=1e-12)

    def test_row_max_matches_brute_force(self, gauss_model, line):
        cls = skew_class(line)
        surface = sensitivity_surface(gauss_model, cls)
        base = posterior(gauss_model).density
        for i, eps in enumerate(cls.epsilons):
            brute = max(
                fr_distance(base, posterior(gauss_model, contaminate(cls.baseline, g, eps)).density)
                for g in cls.contaminants.values()
            )
            assert surface.row_max()[i] == pytest.approx(brute, abs=1e-12)

    def test_nondecreasing_in_eps(self, gauss_model, line):
        cls = skew_class(line, eps=tuple(np.linspace(0, 1, 11)))
        row_max = sensitivity_surface(gauss_model, cls).row_max()
        assert np.all(np.diff(row_max) >= -1e-12)

    def test_argmax_consistent(self, gauss_model, line):
        cls = skew_class(line)
        s, cid = global_sensitivity(gauss_model, cls, 1.0)
        assert posterior_distances(gauss_model, cls, 1.0)[cid] == s

    def test_surface_csv(self, gauss_model, line):
        surface = sensitivity_surface(gauss_model, skew_class(line))
        rows = list(csv.reader(io.StringIO(surface.to_csv())))
        assert len(rows) == 1 + 4
        assert rows[0][1:] == list(surface.ids)
        assert all(len(r) == 1 + 5 for r in rows)

    def test_report_json(self, gauss_model, line):
        report, surface = global_report(gauss_model, skew_class(line))
        d = json.loads(report.to_json())
        assert d["mode"] == "Global"
        assert len(d["entries"]) == surface.values.size

    def test_custom_metric(self, gauss_model, line):
        from frao.geometry import kl_divergence

        cls = skew_class(line, mode="Linear")
        surface = sensitivity_surface(gauss_model, cls, metric=kl_divergence)
        assert np.all(surface.values >= -1e-12)


class TestLikelihoodCurve:
    def test_zero_at_baseline(self):
        angles = np.random.default_rng(0).vonmises(0.5, 1.1, 40)
        d = DomainSpec.circular(points_per_axis=512)
        curve = likelihood_sensitivity_curve(
            lambda k: von_mises_model(angles, kappa=k, domain=d), [0.5, KAPPA_HAT, 3.0], KAPPA_HAT
        )
        assert dict(curve)[KAPPA_HAT] == 0.0
        assert all(dist > 0 for k, dist in curve if k != KAPPA_HAT)

    def test_baseline_outside(self):
        with pytest.raises(ValueError):
            likelihood_sensitivity_curve(lambda k: None, [1.0, 2.0], 3.0)


class TestLocalMeasures:
    def test_bayes_factor_fd(self):
        for m in random_gaussian_models(20, seed=1):
            g = make_parametric("StudentT", [4, 0.3, 1.1], m.param_domain)
            pi1 = make_parametric("Normal", [0, 2], m.param_domain)
            v = perturbation_vector(m.prior, g)
            log_m1 = log_marginal(m, pi1)
            fd = one_sided(lambda e: math.exp(marginal_contaminated(m, contaminate(m.prior, g, e)) - log_m1))
            assert local_bayes_factor(m, pi1, v) == pytest.approx(fd, rel=1e-3, abs=1e-9)

    def test_posterior_functional_fd(self):
        for m in random_gaussian_models(20, seed=2):
            g = make_parametric("SkewNormal", [3, 0, 1.2], m.param_domain)
            v = perturbation_vector(m.prior, g)
            fd = one_sided(lambda e: expectation(posterior(m, contaminate(m.prior, g, e)), lambda t: t))
            assert local_posterior_functional(m, lambda t: t, v) == pytest.approx(fd, rel=1e-3, abs=1e-8)

    def test_second_order_fd(self):
        for m in random_gaussian_models(20, seed=3):
            g = make_parametric("StudentT", [3, 0, 1], m.param_domain)
            v = perturbation_vector(m.prior, g)
            assert local_geodesic_second_order(m, v) == pytest.approx(second_order_fd(m, g), rel=1e-3)

    def test_second_order_is_twice_variance(self, gauss_model, line):
        g = make_parametric("StudentT", [5, 0, 1], line)
        v = perturbation_vector(gauss_model.prior, g)
        ratio = v.values / v.base.values
        p0 = posterior(gauss_model)
        mean = expectation(p0, ratio)
        var = expectation(p0, (ratio - mean) ** 2)
        assert local_geodesic_second_order(gauss_model, v) == pytest.approx(2 * var, rel=1e-8)
        assert local_geodesic_second_order(gauss_model, v) >= 0

    def test_zero_vector(self, gauss_model, line):
        v = TangentVector.zero(perturbation_vector(gauss_model.prior, gauss_model.prior).base)
        pi1 = make_parametric("Normal", [0, 2], line)
        assert local_bayes_factor(gauss_model, pi1, v) == 0.0
        assert local_posterior_functional(gauss_model, lambda t: t, v) == 0.0
        assert local_geodesic_second_order(gauss_model, v) == 0.0

    def test_constant_functional(self, gauss_model, line):
        v = perturbation_vector(gauss_model.prior, make_parametric("StudentT", [3, 0, 1], line))
        assert local_posterior_functional(gauss_model, lambda t: np.ones_like(t), v) == pytest.approx(0.0, abs=1e-12)

    def test_linear_in_v(self, gauss_model, line):
        v = perturbation_vector(gauss_model.prior, make_parametric("StudentT", [3, 0, 1], line))
        pi1 = make_parametric("Normal", [0, 2], line)
        assert local_bayes_factor(gauss_model, pi1, v * 2.0) == pytest.approx(
            2 * local_bayes_factor(gauss_model, pi1, v), rel=1e-12
        )
        assert local_geodesic_second_order(gauss_model, v * 2.0) == pytest.approx(
            4 * local_geodesic_second_order(gauss_model, v), rel=1e-12
        )

    def test_wrong_base(self, gauss_model, line):
        other = make_parametric("Normal", [0.5, 1], line)
        v = perturbation_vector(other, make_parametric("StudentT", [3, 0, 1], line))
        with pytest.raises(ValueError):
            local_geodesic_second_order(gauss_model, v)

    def test_report(self, gauss_model, line):
        gs = {f"t{df}": make_parametric("StudentT", [df, 0, 1], line) for df in (3, 10)}
        rep = local_report(gauss_model, gs, pi1=make_parametric("Normal", [0, 2], line), h=lambda t: t)
        measures = {(c, m) for c, _, m, _ in rep.entries}
        assert len(measures) == 6
        assert json.loads(rep.to_json())["mode"] == "Local"


@pytest.fixture(scope="module")
def rows(gauss_model):
    from frao.cli import example4_measures

    return example4_measures(gauss_model, [3, 5, 10, 30, 100])


class TestStudentTTrends:
    """Local measures for Student-t contaminants of a standard normal prior."""

    def test_bayes_factor_negative(self, rows):
        assert all(r["bayes_factor"] < 0 for r in rows)

    def test_posterior_mean_sign(self, rows, gaussian50):
        assert np.mean(gaussian50.columns["x"]) > 0
        assert all(r["posterior_mean"] < 0 for r in rows)

    def test_second_order_decreasing(self, rows):
        vals = [r["geodesic_second_order"] for r in rows]
        assert np.all(np.diff(vals) < 0)
        assert vals[-1] < 0.05 * vals[0]
