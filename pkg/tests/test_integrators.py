import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mpfc import Grid, MeanLaw, Params, SchemeConfig, State, run, step_mpfc, step_pfc
from mpfc.diagnostics import energy_identity_residual
from mpfc.initial import random_smooth, single_mode
from mpfc.integrators import (NonFiniteError, SolverError, damped_flow, make_stepper, mean_law_eval)

TWO_PI = 2 * np.pi


def oscillator(L, beta, t):
    """(a, a') at time t of beta a'' + a' + L a = 0 from (1, 0), by matrix exponential."""
    E = expm(np.array([[0.0, 1.0], [-L / beta, -1.0 / beta]]) * t)
    return E[0, 0], E[1, 0]


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig("rk4")
    with pytest.raises(ValueError):
        SchemeConfig("imex2", dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig("imex2", stabilizer_s=-1.0)
    assert SchemeConfig("imex2").stabilizer(Params(epsilon=3.0)) == 2.0
    assert SchemeConfig("split1").stabilizer(Params(epsilon=0.25)) == 1.0


def test_mean_law_examples():
    law = MeanLaw.from_means(0.1, 0.2, beta=1.0)
    assert law.M == pytest.approx(0.3)
    assert mean_law_eval(law, 0.0) == pytest.approx((0.1, 0.2))
    mphi, mphit = mean_law_eval(law, 1e3)
    assert (mphi, mphit) == (pytest.approx(0.3), 0.0)
    still = MeanLaw.from_means(0.1, 0.0, beta=2.0)
    assert all(mean_law_eval(still, t)[0] == 0.1 for t in (0.0, 1.0, 50.0))
    ts = np.linspace(0, 5, 11)
    mphi, mphit = mean_law_eval(law, ts)
    assert np.max(np.abs(law.beta * mphit + mphi - law.M)) < 1e-16


@settings(max_examples=60, deadline=None)
@given(beta=st.floats(1e-6, 10), L=st.floats(0, 1e7), h=st.floats(1e-5, 0.5))
def test_damped_flow_matches_matrix_exponential(beta, L, h):
    p = [v.item() for v in damped_flow(np.array([L]), beta, h)]
    E = expm(np.array([[0.0, 1.0], [-L / beta, -1.0 / beta]]) * h)
    scale = max(1.0, np.max(np.abs(E)))
    assert np.max(np.abs(np.array(p).reshape(2, 2) - E)) <= 1e-9 * scale


def test_damped_flow_critical_transition():
    beta, h = 0.5, 0.1
    Lc = 0.25 / beta
    for L in (Lc * (1 - 1e-12), Lc, Lc * (1 + 1e-12)):
        p = np.array([v.item() for v in damped_flow(np.array([L]), beta, h)]).reshape(2, 2)
        E = expm(np.array([[0.0, 1.0], [-L / beta, -1.0 / beta]]) * h)
        assert np.max(np.abs(p - E)) < 1e-12


@pytest.mark.parametrize("scheme", ["imex2", "split1", "pfc_split1"])
def test_constant_state_is_fixed(scheme):
    g = Grid(2, 16)
    M = 0.37
    st_ = State(g, np.full(g.shape, M), np.zeros(g.shape))
    tr = run(st_, Params(beta=1.0, epsilon=0.25), SchemeConfig(scheme, 1e-2), 0.5)
    assert np.max(np.abs(tr.final.phi - M)) < 1e-13
    assert np.max(np.abs(tr.final.phi_t)) < 1e-13


def test_linear_single_mode_short():
    g = Grid(1, 16)
    p = Params(beta=1.0, epsilon=0.25, cubic=0.0)
    phi = single_mode(g, 0.0, 0.7)
    tr = run(State(g, phi, 0 * phi), p, SchemeConfig("imex2", 1e-4), 0.1, snapshot_every=50)
    lam = TWO_PI**2
    L = lam * (lam**2 - 2 * lam + 0.75)
    for s in tr.snapshots:
        a, da = oscillator(L, 1.0, s.t)
        assert np.max(np.abs(s.phi - a * phi)) < 1e-9
        assert np.max(np.abs(s.phi_t - da * phi)) < 1e-9 * max(1.0, abs(da) * 0.7) * 1e3


def test_imex2_order_on_linear_problem():
    # with s > 0 part of the linear operator moves into the explicit kick, exposing the splitting error
    g = Grid(1, 16)
    p = Params(beta=1.0, epsilon=0.25, cubic=0.0)
    phi = single_mode(g, 0.0, 1.0)
    lam = TWO_PI**2
    a, _ = oscillator(lam * (lam**2 - 2 * lam + 0.75), 1.0, 0.5)
    dts = np.array([1e-3, 5e-4, 2.5e-4])
    errs = [np.max(np.abs(run(State(g, phi, 0 * phi), p, SchemeConfig("imex2", dt, stabilizer_s=10.0), 0.5)
                          .final.phi - a * phi)) for dt in dts]
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert order >= 1.9
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_mean_law_followed_exactly():
    g = Grid(2, 16)
    phi0 = random_smooth(g, 1, mean=0.1, amplitude=0.2)
    phi1 = random_smooth(g, 2, mean=-0.3, amplitude=0.2)
    for scheme in ("imex2", "split1"):
        tr = run(State(g, phi0, phi1), Params(beta=0.7), SchemeConfig(scheme, 2e-3), 0.4)
        law = tr.law
        mphi, mphit = mean_law_eval(law, tr.ledger.t)
        assert np.max(np.abs(tr.ledger.column("mean_phi") - mphi)) <= 1e-13
        assert np.max(np.abs(tr.ledger.column("mean_phit") - mphit)) <= 1e-13
        assert np.max(np.abs(0.7 * tr.ledger.column("mean_phit") + tr.ledger.column("mean_phi") - law.M)) <= 1e-13


def test_split1_energy_stable_large_dt():
    g = Grid(2, 16)
    phi0 = random_smooth(g, 3, mean=0.05, amplitude=0.5)
    phi1 = random_smooth(g, 4, mean=0.0, amplitude=0.5)
    tr = run(State(g, phi0, phi1), Params(beta=1.0, epsilon=0.25), SchemeConfig("split1", 0.1), 20.0)
    pe = tr.ledger.column("pseudoE")
    assert np.max(np.diff(pe)) <= 1e-12


def test_pfc_mass_and_energy():
    g = Grid(2, 16)
    phi = random_smooth(g, 5, mean=0.2, amplitude=0.5)
    tr = run(State(g, phi, np.zeros(g.shape)), Params(epsilon=0.25), SchemeConfig("pfc_split1", 1e-2), 100.0)
    m = tr.ledger.column("mean_phi")
    assert np.max(np.abs(m - g.mean(phi))) <= 1e-14
    E = tr.ledger.column("E")
    # once at equilibrium E jitters in its last bit; allow that and nothing more
    assert np.max(np.diff(E)) <= 1e-15 * np.max(np.abs(E))
    assert np.all(tr.ledger.column("mean_phit") == 0.0)


def test_step_pfc_constant_fixed_point():
    g = Grid(1, 16)
    c = np.full(g.shape, -0.4)
    out = step_pfc(c, Params(epsilon=0.3), SchemeConfig("pfc_split1", 0.1), grid=g)
    assert np.max(np.abs(out - c)) < 1e-15
    with pytest.raises(ValueError):
        step_pfc(c, Params(epsilon=0.3), SchemeConfig("pfc_split1", 0.1))


def test_step_mpfc_matches_run():
    g = Grid(2, 16)
    st_ = State(g, random_smooth(g, 6, 0.1, 0.2), random_smooth(g, 7, 0.0, 0.2))
    p, sc = Params(beta=1.0), SchemeConfig("imex2", 1e-3)
    one = step_mpfc(st_, p, sc)
    assert one.t == pytest.approx(1e-3)
    ref = run(st_, p, sc, 1e-3).final
    assert np.array_equal(one.phi, ref.phi)
    with pytest.raises(ValueError):
        step_mpfc(st_, p, SchemeConfig("pfc_split1", 1e-3))


def test_tiny_beta_rejected():
    g = Grid(1, 16)
    st_ = State(g, np.zeros(g.shape), np.zeros(g.shape))
    with pytest.raises(ValueError, match="step_pfc"):
        step_mpfc(st_, Params(beta=1e-9), SchemeConfig("imex2", 1e-3))


def test_nan_detection_names_step():
    g = Grid(2, 16)
    st_ = State(g, random_smooth(g, 1, 0.0, 500.0), np.zeros(g.shape))
    with np.errstate(all="ignore"), pytest.raises(NonFiniteError, match=r"after step \d+") as info:
        run(st_, Params(beta=1.0), SchemeConfig("imex2", 0.5), 25.0)
    assert info.value.step is not None and info.value.step >= 1


def test_split1_nonconvergence_reports_trace():
    g = Grid(2, 16)
    st_ = State(g, random_smooth(g, 1, 0.0, 2.0), np.zeros(g.shape))
    with pytest.raises(SolverError, match="did not converge") as info:
        run(st_, Params(beta=1.0), SchemeConfig("split1", 0.1, newton_tol=1e-15, newton_max_iter=1), 0.1)
    assert len(info.value.trace) == 1


def test_run_t_end_zero_and_determinism():
    g = Grid(2, 16)
    st_ = State(g, random_smooth(g, 8, 0.1, 0.3), random_smooth(g, 9, 0.1, 0.3))
    p, sc = Params(beta=1.0), SchemeConfig("imex2", 1e-3)
    tr = run(st_, p, sc, 0.0)
    assert len(tr.ledger) == 1 and np.array_equal(tr.final.phi, st_.phi)
    a = run(st_, p, sc, 0.05).ledger.to_csv()
    b = run(st_, p, sc, 0.05).ledger.to_csv()
    assert a == b


def test_run_rejects_misaligned_t_end():
    g = Grid(1, 16)
    st_ = State(g, np.zeros(g.shape), np.zeros(g.shape))
    with pytest.raises(ValueError):
        run(st_, Params(), SchemeConfig("imex2", 1e-3), 0.0015)


def test_run_until_stops_early():
    g = Grid(1, 16)
    st_ = State(g, single_mode(g, 0.0, 0.1), np.zeros(g.shape))
    tr = run(st_, Params(), SchemeConfig("imex2", 1e-3), 1.0, until=lambda r: r.t >= 0.01)
    assert tr.steps == 10 and tr.ledger.rows[-1].t == pytest.approx(0.01)


def test_identity_residual_with_source_term_converges():
    # <phi_1> != 0: the signed source term must be tracked for the residual to vanish at order 2
    g = Grid(2, 16)
    st_ = State(g, random_smooth(g, 10, 0.1, 0.1, kmax=1.5), random_smooth(g, 11, 0.4, 0.1, kmax=1.5))
    p = Params(beta=1.0)
    dts = [4e-3, 2e-3, 1e-3]
    R = [abs(energy_identity_residual(run(st_, p, SchemeConfig("imex2", dt), 0.4).ledger)) for dt in dts]
    assert np.polyfit(np.log(dts), np.log(R), 1)[0] >= 1.9


def test_beta_limit():
    g = Grid(1, 16)
    phi0 = random_smooth(g, 12, 0.1, 0.3)
    pfc = run(State(g, phi0, np.zeros(g.shape)), Params(epsilon=0.25), SchemeConfig("pfc_split1", 1e-3), 1.0).final
    errs = []
    for beta in (1e-1, 1e-2, 1e-3):
        mp = run(State(g, phi0, np.zeros(g.shape)), Params(beta=beta, epsilon=0.25),
                 SchemeConfig("imex2", min(1e-3, beta / 10)), 1.0).final
        errs.append(np.max(np.abs(mp.phi - pfc.phi)))
    floor = 1e-14
    assert errs[0] > floor
    assert errs[1] <= errs[0] and errs[2] <= errs[1] + floor


def test_stepper_exposes_state_and_time():
    g = Grid(1, 16)
    st_ = State(g, single_mode(g, 0.2, 0.1), np.zeros(g.shape), t=3.0)
    stp = make_stepper(st_, Params(), SchemeConfig("imex2", 0.01))
    stp.step()
    stp.step()
    assert stp.t == pytest.approx(3.02)
    assert stp.state().t == pytest.approx(3.02)


def test_state_shape_validation():
    g = Grid(1, 16)
    with pytest.raises(ValueError):
        State(g, np.zeros(8), np.zeros(16))
