import numpy as np
import pytest

from regvi.internal_model import build_p_copy, recast_exosystem
from regvi.observer import ObserverKnown
from regvi.oracle import (LtiPlant, compute_parameterization,
                          place_observer_gain, verify_theorem4)
from regvi.regression import SamplingGrid, build_regression
from regvi.sim import ExplorationSignal, Policy, Tone, simulate
from regvi.vi import (RankConditionError, ViConfig, _StageSolver, identify_E,
                      solve_stage, vi_run)


def rel(a, b):
    return np.linalg.norm(a - b, "fro") / np.linalg.norm(b, "fro")


# ---------------------------------------------------------------------------
# Configuration validation
# ---------------------------------------------------------------------------

def test_config_validation():
    good = dict(P0=np.eye(2), eps_num=1.0, eps_shift=1.0, eps_conv=0.01,
                max_iters=10, R=np.eye(1))
    cfg = ViConfig(**good)
    assert cfg.eps(0) == pytest.approx(1.0)
    assert cfg.eps(9) == pytest.approx(0.1)
    assert cfg.bound_radius(0) == pytest.approx(1000.0 * 20.0)
    for bad in (dict(eps_num=-1.0), dict(eps_shift=0.0), dict(eps_conv=0.0),
                dict(bound_scale=0.0), dict(bound_shift=-1.0),
                dict(P0=np.array([[1.0, 2.0], [0.0, 1.0]]))):
        with pytest.raises(ValueError):
            ViConfig(**{**good, **bad})


def test_vi_run_requires_weights(fullstate_setup):
    data = fullstate_setup["data"]
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-4,
                   max_iters=100, R=np.eye(1))
    with pytest.raises(ValueError):
        vi_run(1, data, cfg)            # Q missing
    cfg.Q = np.eye(3)
    cfg.P0 = np.zeros((3, 3))
    with pytest.raises(ValueError):
        vi_run(1, data, cfg)            # P0 not positive definite


# ---------------------------------------------------------------------------
# Loop mechanics
# ---------------------------------------------------------------------------

def test_full_state_vi_matches_are(fullstate_setup):
    data, sol = fullstate_setup["data"], fullstate_setup["sol"]
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-4,
                   max_iters=200000, R=np.eye(1), Q=np.eye(3))
    res = vi_run(1, data, cfg)
    assert res.converged
    assert rel(res.P_final, sol.P) <= 0.02
    # history schema and within-epoch boundedness
    assert res.history.shape == (res.iters, 4)
    for k, j, norm_p, _ in res.history:
        assert norm_p <= cfg.bound_radius(int(j)) + 1e-9


def test_degenerate_zero_cost(fullstate_setup):
    """With Q = 0 the optimal value is zero; VI must converge to P = 0."""
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-6,
                   max_iters=200000, R=np.eye(1), Q=np.zeros((3, 3)))
    res = vi_run(1, fullstate_setup["data"], cfg)
    assert res.converged
    assert np.linalg.norm(res.P_final, 2) <= 1e-5


def test_reset_counting(fullstate_setup):
    """A bound radius below ||P0|| forces an escape-and-reset every iteration."""
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-6,
                   max_iters=25, R=np.eye(1), Q=np.eye(3),
                   bound_scale=1e-6, bound_shift=1e-6)
    res = vi_run(1, fullstate_setup["data"], cfg)
    assert not res.converged
    assert res.resets == 25
    assert np.array_equal(res.history[:, 1], np.arange(25))   # j increments


def test_nonconvergence_reported(fullstate_setup):
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-12,
                   max_iters=30, R=np.eye(1), Q=np.eye(3))
    res = vi_run(1, fullstate_setup["data"], cfg)
    assert not res.converged and res.iters == 30


def test_rank_gate(fullstate_setup):
    """Insufficient data rows raise before any iteration runs."""
    log = fullstate_setup["log"]
    with pytest.warns(UserWarning):
        data = build_regression(log, SamplingGrid(t0=1.0, dt=0.1, s=5), 1,
                                R=np.eye(1))
    cfg = ViConfig(P0=0.05 * np.eye(3), eps_num=5.0, eps_shift=5.0, eps_conv=1e-4,
                   max_iters=10, R=np.eye(1), Q=np.eye(3))
    with pytest.raises(RankConditionError):
        vi_run(1, data, cfg)


def test_gain_is_exact_function_of_iterate(nonzero_setup):
    """For the known-input-matrix variants, K = -R^{-1} B^T P identically."""
    data = build_regression(nonzero_setup["log"], nonzero_setup["grid"], 4,
                            known_B=nonzero_setup["objs"].B_rho)
    vicfg = nonzero_setup["vicfg"]
    rng = np.random.default_rng(11)
    X = rng.standard_normal((8, 8))
    P = X + X.T
    E_id = nonzero_setup["aux"].E_rho
    stage = solve_stage(4, P, data, vicfg, identified_E=E_id)
    K_expected = -np.linalg.solve(vicfg.R, nonzero_setup["objs"].B_rho.T) @ P
    assert np.allclose(stage.K, K_expected, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# Convergence against the oracle (preset data, E != 0)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def nonzero_vi_runs(nonzero_setup):
    data3 = build_regression(nonzero_setup["log"], nonzero_setup["grid"], 3,
                             known_B=nonzero_setup["objs"].B_rho)
    data4 = build_regression(nonzero_setup["log"], nonzero_setup["grid"], 4,
                             known_B=nonzero_setup["objs"].B_rho)
    vicfg = nonzero_setup["vicfg"]
    return vi_run(3, data3, vicfg), vi_run(4, data4, vicfg)


def test_variant3_matches_oracle(nonzero_setup, nonzero_vi_runs):
    res3, _ = nonzero_vi_runs
    assert res3.converged
    assert rel(res3.P_final, nonzero_setup["sol"].P) <= 0.02


def test_variant4_matches_oracle(nonzero_setup, nonzero_vi_runs):
    _, res4 = nonzero_vi_runs
    assert res4.converged
    assert rel(res4.P_final, nonzero_setup["sol"].P) <= 0.02
    assert rel(res4.E_rho_identified, nonzero_setup["aux"].E_rho) <= 0.01


def test_variant3_variant4_agree(nonzero_vi_runs):
    res3, res4 = nonzero_vi_runs
    assert rel(res3.P_final, res4.P_final) <= 0.01


def test_identify_e_requires_pd_p0(nonzero_setup):
    data = build_regression(nonzero_setup["log"], nonzero_setup["grid"], 4,
                            known_B=nonzero_setup["objs"].B_rho)
    solver = _StageSolver(4, data, nonzero_setup["vicfg"])
    with pytest.raises(ValueError):
        identify_E(solver, np.zeros((8, 8)))


# ---------------------------------------------------------------------------
# Output-based variants vs the state/output LQR equivalence (well-conditioned
# scenario: every plant mode reachable, so no near-degenerate data direction)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def output_based_setup():
    plant = LtiPlant(A=[[0.0, 1.0], [-2.0, -3.0]], B=[[0.0], [1.0]],
                     C=[[1.0, 0.0]], E=np.zeros((2, 2)), F=[[1.0, 0.0]])
    exo = recast_exosystem([1.0, 0.0], [2.0, 1.0])
    known = ObserverKnown.from_poles([-3.0, -4.0], plant.m, plant.p)
    im = build_p_copy([1.0, 0.0], 1)
    B_rho = np.vstack([known.B_zeta, np.zeros((im.n_z, 1))])
    tones = [Tone(5.0, 1.3), Tone(5.0, 2.9), Tone(-5.0, 4.7),
             Tone(5.0, 7.1), Tone(-5.0, 9.3)]
    expl = ExplorationSignal(tones=tones, K0=np.zeros((1, known.n_zeta)))
    log = simulate(plant, exo, known, im, Policy(exploration=expl),
                   (0.0, 24.0), 1e-3, x0=[1.0, -0.5])
    grid = SamplingGrid(t0=2.0, dt=0.2, s=100)
    n_rho = known.n_zeta + im.n_z
    S = np.zeros((n_rho, 2))
    S[:known.n_zeta, :1] = known.E_zeta
    S[known.n_zeta:, 1:] = im.G2
    vicfg = ViConfig(P0=np.eye(n_rho), eps_num=8.0, eps_shift=10.0, eps_conv=1e-3,
                     max_iters=100000, R=np.eye(1), Q_y=np.eye(1),
                     Q_z=np.eye(im.n_z), E_structure=S,
                     bound_scale=1000.0, bound_shift=200.0)
    L = place_observer_gain(plant.A, plant.C, np.array([-3.0, -4.0]))
    param = compute_parameterization(plant, L, known.companion.alpha)
    t4 = verify_theorem4(plant, param, im, np.eye(1 + im.n_z), np.eye(1))
    P_lift = t4.W.T @ t4.P_xi @ t4.W
    return {"plant": plant, "im": im, "known": known, "B_rho": B_rho,
            "log": log, "grid": grid, "vicfg": vicfg, "P_lift": P_lift}


def test_variant5_matches_lifted_solution(output_based_setup):
    s = output_based_setup
    data = build_regression(s["log"], s["grid"], 5, known_B=s["B_rho"])
    res = vi_run(5, data, s["vicfg"])
    assert res.converged
    assert rel(res.P_final, s["P_lift"]) <= 0.02


def test_variant6_matches_lifted_solution(output_based_setup):
    s = output_based_setup
    data = build_regression(s["log"], s["grid"], 6, known_B=s["B_rho"])
    res = vi_run(6, data, s["vicfg"])
    assert res.converged
    assert rel(res.P_final, s["P_lift"]) <= 0.02
    E_true = np.vstack([np.zeros((s["known"].n_zeta, 2)),
                        s["im"].G2 @ s["plant"].F])
    assert rel(res.E_rho_identified, E_true) <= 0.02
