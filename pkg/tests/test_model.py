import numpy as np
import pytest

from mpfc import Grid, Params
from mpfc import model
from mpfc.initial import random_smooth

TWO_PI = 2 * np.pi


def test_params_validation():
    with pytest.raises(ValueError):
        Params(beta=0.0)
    with pytest.raises(ValueError):
        Params(beta=-1.0)
    with pytest.raises(ValueError):
        Params(epsilon=3.0, split_k=1.0)
    assert Params(epsilon=0.25).split_k == 1.0
    assert Params(epsilon=3.0).split_k == 3.0


def test_f_values():
    p = Params(epsilon=0.25)
    assert model.f_eval(0.0, p) == 0.0
    assert model.f_eval(1.0, p) == pytest.approx(1.75)
    assert model.F_eval(1.0, p) == pytest.approx(0.625)


def test_f_is_derivative_of_F():
    p = Params(epsilon=0.25)
    phi = np.linspace(-2, 2, 41)
    hs = np.array([1e-3, 1e-4, 1e-5, 1e-6])
    errs = [np.max(np.abs((model.F_eval(phi + h, p) - model.F_eval(phi, p)) / h - model.f_eval(phi, p))) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)
    fd = (model.f_eval(phi + 1e-6, p) - model.f_eval(phi - 1e-6, p)) / 2e-6
    assert np.allclose(fd, model.f_prime(phi, p), atol=1e-6)


def test_shifted_and_split():
    p = Params(epsilon=0.25)
    y = np.linspace(-1, 1, 11)
    assert np.allclose(model.f_shifted(np.zeros(3), 0.4, p), model.f_eval(0.4, p))
    assert np.allclose(model.f_shifted(y, 0.4, p), model.f_eval(y + 0.4, p))
    assert np.allclose(model.f_split(y, p) - model.f_eval(y, p), p.split_k * y, atol=1e-15)


@pytest.mark.parametrize("eps", [0.25, 1.0, 2.5, 6.0])
def test_f_split_monotone(eps):
    p = Params(epsilon=eps)
    r = np.random.default_rng(7)
    a = r.uniform(-5, 5, 10_000)
    b = a + r.uniform(0, 2, 10_000)
    assert np.all(model.f_split(a, p) <= model.f_split(b, p))


def test_free_energy_constant_and_zero(grid2):
    p = Params(epsilon=0.25)
    assert model.free_energy(grid2, np.ones(grid2.shape), p) == pytest.approx(0.625, rel=1e-14)
    assert model.free_energy(grid2, np.zeros(grid2.shape), p) == 0.0


@pytest.mark.parametrize("A", [0.1, 1.0])
def test_free_energy_single_mode(grid1, A):
    eps = 0.25
    p = Params(epsilon=eps)
    u = A * np.sin(TWO_PI * grid1.coordinates()[0])
    expected = A**2 * TWO_PI**4 / 4 - A**2 * TWO_PI**2 / 2 + (1 - eps) * A**2 / 4 + 3 * A**4 / 32
    assert model.free_energy(grid1, u, p) == pytest.approx(expected, rel=1e-13)


def test_pseudo_energy_examples(grid1):
    p = Params(beta=1.0, epsilon=0.25)
    one = np.ones(grid1.shape)
    assert model.pseudo_energy(grid1, one, 0 * one, p) == pytest.approx(0.625)
    s = np.sin(TWO_PI * grid1.coordinates()[0])
    p2 = Params(beta=2.0, epsilon=0.25)
    kin = model.pseudo_energy(grid1, 0 * one, s, p2)
    assert kin == pytest.approx(1 / (8 * np.pi**2), rel=1e-13)
    c = 0.3
    diff = model.pseudo_energy_unbarred(grid1, s, s + c, p2) - model.pseudo_energy(grid1, s, s + c, p2)
    assert diff == pytest.approx(p2.beta / 2 * c * c, rel=1e-12)
    assert model.pseudo_energy_unbarred(grid1, s, s, p2) == pytest.approx(model.pseudo_energy(grid1, s, s, p2))


def test_energy_shift_by_constant(grid2, rng):
    p = Params(epsilon=0.25)
    u = random_smooth(grid2, seed=3, amplitude=0.3)
    c = 0.17
    c_hat = grid2.transform(u)
    expected = grid2.quadrature(c_hat, lambda w: model.F_eval(w + c, p) - model.F_eval(w, p))
    assert model.free_energy(grid2, u + c, p) - model.free_energy(grid2, u, p) == pytest.approx(expected, rel=1e-10)


def test_pseudo_energy_translation_invariant(grid2, rng):
    p = Params(beta=1.3, epsilon=0.25)
    u = grid2.inverse_transform(grid2.dealias(grid2.transform(0.4 * rng.standard_normal(grid2.shape))))
    v = rng.standard_normal(grid2.shape)
    e0 = model.pseudo_energy(grid2, u, v, p)
    e1 = model.pseudo_energy(grid2, np.roll(u, (3, 5), axis=(0, 1)), np.roll(v, (3, 5), axis=(0, 1)), p)
    assert abs(e0 - e1) <= 1e-11 * max(1.0, abs(e0))


def test_lower_bound(grid2, rng):
    eps = 0.25
    p = Params(epsilon=eps)
    c1 = model.lower_bound_constant(p)
    assert c1 == pytest.approx(((1 + eps) / 2) ** 2, rel=1e-9)
    for _ in range(100):
        u = rng.uniform(0.05, 2.0) * rng.standard_normal(grid2.shape)
        c = grid2.dealias(grid2.transform(u))
        u = grid2.inverse_transform(c)
        E = model.free_energy(grid2, u, p)
        lap = grid2.norm_hat(c, 2.0) ** 2 - c[grid2.zero].real ** 2
        l2 = np.sum(grid2.weight * np.abs(c) ** 2)
        assert E >= 0.25 * lap + l2 - c1 - 1e-9


def test_quadratic_energy(grid1):
    z = np.zeros(grid1.shape)
    assert model.quadratic_energy(grid1, z, z, 1.0, 2.0) == 0.0
    s = np.sin(TWO_PI * grid1.coordinates()[0])
    Lam = 3.0
    expected = TWO_PI**4 / 4 - TWO_PI**2 / 2 + Lam / (4 * TWO_PI**2)
    assert model.quadratic_energy(grid1, s, z, 1.0, Lam) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(ValueError):
        model.quadratic_energy(grid1, s, z, 1.0, -1.0)


def test_lambda_threshold_unit_box():
    assert model.lambda_threshold(Grid(2, 16)) == 0.0


def test_energy_report(grid1):
    p = Params(beta=1.0, epsilon=0.25)
    one = np.ones(grid1.shape)
    rep = model.energy_report(grid1, one, 0 * one, p)
    assert rep.free_energy == pytest.approx(0.625)
    assert rep.pseudo_energy == rep.pseudo_energy_unbarred == pytest.approx(0.625)
    assert rep.quadratic_energy == 0.0


def test_cubic_switch():
    nl = Params(epsilon=0.25, cubic=0.0).nonlinearity
    assert nl.f(2.0) == pytest.approx(1.5)
    assert nl.rest(2.0) == 0.0
