import numpy as np
import pytest

from depguide.condition import (KINDS, ConditionEnergy, ConditionError, cond_grad, cond_hvp,
                                energy_value, from_spec)
from depguide.oracles import fd_gradient, fd_hvp, rel_err
from depguide.schedule import SingleStep, linear_schedule
from depguide.score import GaussianMixture
from depguide.selftest import random_condition, random_mixture

SCHED = linear_schedule(100)
STD2 = GaussianMixture.standard_normal(2)


def test_zero_energy_examples():
    c = np.array([1.0, 2.0])
    q = ConditionEnergy("quadratic_target", {"target": c})
    assert energy_value(q, c, 0, STD2, SCHED) == 0.0
    u = np.array([0.6, 0.8])
    a = ConditionEnergy("alignment", {"direction": u})
    assert abs(energy_value(a, u, 0, STD2, SCHED)) <= 1e-7
    r = ConditionEnergy("ring", {"center": [1.0, 1.0], "radius": 5.0})
    assert abs(energy_value(r, np.array([4.0, 5.0]), 0, STD2, SCHED)) <= 1e-30


def test_quadratic_gradient_examples():
    q = ConditionEnergy("quadratic_target", {"target": [0.0, 0.0]})
    assert np.array_equal(cond_grad(q, np.array([1.0, 0.0]), 10, STD2, SCHED), [-1.0, 0.0])
    assert np.array_equal(cond_grad(q, np.zeros(2), 10, STD2, SCHED), [0.0, 0.0])
    v = np.array([0.3, -0.9])
    assert np.array_equal(cond_hvp(q, np.ones(2), 10, v, STD2, SCHED), -v)
    assert np.array_equal(cond_hvp(q, np.ones(2), 10, np.zeros(2), STD2, SCHED), np.zeros(2))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["direct", "denoised"])
def test_fd_oracles(kind, mode):
    rng = np.random.default_rng(hash((kind, mode)) % 2**32)
    for _ in range(5):
        d = int(rng.integers(2, 7))
        m = random_mixture(rng, d)
        cond = random_condition(rng, kind, d, mode)
        t = int(rng.integers(1, 101))
        x, v = rng.normal(size=(2, d))
        g = cond_grad(cond, x, t, m, SCHED)
        assert rel_err(g, fd_gradient(lambda y: -energy_value(cond, y, t, m, SCHED), x)) <= 1e-6
        h = cond_hvp(cond, x, t, v, m, SCHED)
        assert rel_err(h, fd_hvp(lambda y: cond_grad(cond, y, t, m, SCHED), x, v)) <= 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_scale_is_linear(kind):
    rng = np.random.default_rng(3)
    m = random_mixture(rng, 3)
    c1 = random_condition(rng, kind, 3, "denoised").with_scale(1.0)
    x = rng.normal(size=3)
    g1 = cond_grad(c1, x, 20, m, SCHED)
    g2 = cond_grad(c1.with_scale(2.0), x, 20, m, SCHED)
    assert np.allclose(g2, 2 * g1, rtol=1e-15, atol=0)


@pytest.mark.parametrize("kind", KINDS)
def test_denoised_at_unit_alpha_bar_is_direct(kind):
    rng = np.random.default_rng(4)
    m = random_mixture(rng, 3)
    c = random_condition(rng, kind, 3, "denoised")
    direct = ConditionEnergy(c.kind, dict(c.params), c.scale, "direct")
    x = rng.normal(size=3)
    s = SingleStep(0.1, 1.0)
    assert rel_err(cond_grad(c, x, 1, m, s), cond_grad(direct, x, 1, m, s)) <= 1e-12


def test_denoised_needs_positive_alpha_bar():
    c = ConditionEnergy("quadratic_target", {"target": [0.0, 0.0]}, mode="denoised")
    with pytest.raises(ConditionError):
        energy_value(c, np.zeros(2), 1, STD2, SingleStep(0.1, 0.0))


def test_support_restricts_coordinates():
    c = ConditionEnergy("quadratic_target", {"target": [1.0, 2.0, 3.0, 4.0]}, support=[2, 3])
    g = cond_grad(c, np.zeros(4), 0, GaussianMixture.standard_normal(4), SCHED)
    assert np.array_equal(g, [0.0, 0.0, 3.0, 4.0])


@pytest.mark.parametrize("spec, match", [
    ({"kind": "blob", "params": {}}, "unknown condition kind"),
    ({"kind": "ring", "params": {"center": [0, 0]}}, "missing"),
    ({"kind": "ring", "params": {"center": [0, 0], "radius": -1}}, "radius"),
    ({"kind": "alignment", "params": {"direction": [1.0, 1.0]}}, "unit vector"),
    ({"kind": "logistic_classifier", "params": {"normal": [1, 0], "bias": 0, "label": 0}}, "label"),
    ({"kind": "quadratic_target", "params": {"target": [0, 0]}, "scale": -1}, "scale"),
    ({"kind": "quadratic_target", "params": {"target": [0, 0], "support": [5]}}, "support"),
])
def test_invalid_conditions(spec, match):
    with pytest.raises(ConditionError, match=match):
        from_spec(spec)


def test_from_spec_default_name():
    c = from_spec({"kind": "ring", "params": {"center": [0, 0], "radius": 1}}, 3)
    assert c.name == "cond3" and c.scale == 1.0 and c.mode == "direct"
