import numpy as np
import pytest

from rydcycles import kernels
from rydcycles.exact import evolve_exact, product_state
from rydcycles.model import (AllToAll, CollectiveCoupling, CouplingMatrix, Lattice, SystemParams,
                             VdW, build_coupling_matrix, chain_coupling, mean_field_shifts)
from rydcycles.twa import (TrajectoryState, TWASettings, drift, param_vector, run_lattice,
                           sample_initial, simulate, step, trajectory_rng)


def uncoupled(n):
    z = np.zeros((n, n))
    return CouplingMatrix(z, z, z)


def test_ground_sampling_moments():
    X = kernels.sample_ground(100_000, trajectory_rng(0, 0))
    assert np.all(X[:, :2] == 0)
    assert np.all(X[:, 6:] == 0)
    assert set(np.unique(X[:, 2:6])) == {-1.0, 1.0}
    assert abs(X[:, 2].mean()) < 0.01
    assert X[:, 2].var() == pytest.approx(1.0, abs=0.01)
    assert X[:, 6].var() == 0.0


def test_ground_quadratures_are_independent():
    X = kernels.sample_ground(50_000, trajectory_rng(3, 1))
    assert abs(np.mean(X[:, 2] * X[:, 4])) < 0.02
    assert np.all(X[:, 2] ** 2 + X[:, 3] ** 2 == 2.0)


def test_no_jump_drift_is_normalized():
    # drive off: d p_r = -Gamma p_r + kappa p_r with kappa = Gamma clamp(p_r)
    p = SystemParams(0.0, 0.0, 8.0, 3.0, 1.0, 1.0)
    for pr in (0.25, 0.5, 1.0):
        X = np.zeros((1, 8))
        X[0, 1] = pr
        d = drift(TrajectoryState(X, trajectory_rng(0, 0)), uncoupled(1), p)
        assert d[0, 1] == pytest.approx(-pr + pr * pr)
        assert d[0, 0] == 0.0


def test_two_atom_field_matches_mean_field_shift():
    p = SystemParams.reference()
    chi = CollectiveCoupling(12.0, 7.0, 3.0)
    cm = chain_coupling(2, AllToAll(12.0, 7.0, 3.0))
    y = np.array([0.2, 0.3, 0.4, -0.2, 0.1, 0.5, -0.3, 0.2])
    X = np.stack([y, y])
    d = drift(TrajectoryState(X, trajectory_rng(0, 0)), cm, p)
    hs, hr = mean_field_shifts(y[0], y[1], chi)
    kappa = kernels.jump_rate(y[0], y[1], param_vector(p))
    expected = np.empty(8)
    kernels.atom_rhs(y, hs, hr, param_vector(p), kappa, 2.0, expected)
    assert np.allclose(d[0], expected, atol=1e-12)
    assert np.array_equal(d[0], d[1])


def test_sparse_and_collective_fields_agree():
    p = SystemParams.reference()
    cm = build_coupling_matrix(Lattice(3), AllToAll(12.0, 7.0, 3.0))
    dense = CouplingMatrix(cm.v_ss, cm.v_rr, cm.v_sr)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(9, 8)) * 0.5
    a = drift(TrajectoryState(X, trajectory_rng(0, 0)), cm, p)
    b = drift(TrajectoryState(X, trajectory_rng(0, 0)), dense, p)
    assert np.allclose(a, b, atol=1e-12)


def test_without_decay_the_dynamics_is_deterministic():
    p = SystemParams(2.0, 2.0, 8.0, 3.0, 0.0, 0.0)
    cm = chain_coupling(3, AllToAll.uniform(12.0))
    X0 = kernels.sample_ground(3, trajectory_rng(9, 0))
    a = TrajectoryState(X0.copy(), trajectory_rng(1, 0))
    b = TrajectoryState(X0.copy(), trajectory_rng(2, 5))
    for _ in range(200):
        step(a, 1e-2, cm, p)
        step(b, 1e-2, cm, p)
    assert np.array_equal(a.X, b.X)


def test_empty_levels_never_jump():
    par = param_vector(SystemParams.reference())
    X = kernels.sample_ground(500, trajectory_rng(0, 0))
    before = X.copy()
    for _ in range(100):
        kernels.apply_jumps(X, 0.01, par, trajectory_rng(0, 1))
    assert np.array_equal(X, before)
    assert kernels.jump_rate(-0.3, 0.0, par) == 0.0


def test_decay_law():
    # 4000 independent atoms starting in |r>; drive off
    n = 4000
    p = SystemParams(0.0, 0.0, 8.0, 3.0, 1.0, 1.0)
    X = np.zeros((n, 8))
    X[:, 1] = 1.0
    state = TrajectoryState(X, trajectory_rng(11, 0))
    cm = uncoupled(n)
    dt = 1e-2
    for k in range(1, 201):
        step(state, dt, cm, p)
        if k % 50 == 0:
            mean = state.p_r.mean()
            expected = np.exp(-k * dt)
            err = np.sqrt(expected * (1 - expected) / n)
            assert abs(mean - expected) < 4 * err


def test_step_precondition():
    state = sample_initial(2, trajectory_rng(0, 0))
    with pytest.raises(ValueError):
        step(state, 0.1, uncoupled(2), SystemParams.reference())


def test_settings_validation():
    with pytest.raises(ValueError):
        TWASettings(dt=0.0)
    s = TWASettings(dt=5e-3, t_end=1.0, record_dt=0.05)
    assert (s.n_steps, s.record_every) == (200, 10)


def test_seed_determinism_and_parallel_merge():
    p = SystemParams.reference()
    s = TWASettings(dt=1e-2, t_end=2.0, record_dt=0.1)
    cm = chain_coupling(3, VdW.calibrated())
    a = simulate(p, cm, s, 4, master_seed=5, workers=1)
    b = simulate(p, cm, s, 4, master_seed=5, workers=1)
    c = simulate(p, cm, s, 4, master_seed=5, workers=2)
    d = simulate(p, cm, s, 4, master_seed=6, workers=1)
    assert np.array_equal(a.traj_n_s, b.traj_n_s) and np.array_equal(a.traj_n_r, b.traj_n_r)
    assert np.array_equal(a.traj_n_s, c.traj_n_s)
    assert not np.array_equal(a.traj_n_s, d.traj_n_s)
    assert a.seeds == [(5, i) for i in range(4)]


def test_single_atom_tracks_exact_solution():
    p = SystemParams.reference()
    s = TWASettings(dt=5e-3, t_end=4.0, record_dt=0.1)
    res = simulate(p, uncoupled(1), s, 2000, master_seed=1, workers=1)
    ex = evolve_exact(product_state(1), p, uncoupled(1), 4.0, dt=5e-3, sample_dt=0.1)
    assert np.max(np.abs(res.n_s - ex.n_s[:, 0])) < 0.05
    assert np.max(np.abs(res.n_r - ex.n_r[:, 0])) < 0.05


def test_ensemble_outputs_are_physical():
    p = SystemParams.reference(delta_r=3.0)
    s = TWASettings(dt=1e-2, t_end=5.0, record_dt=0.1, snapshot_times=(1.0, 4.0), subsystem_window=2)
    res = run_lattice(p, Lattice(4), AllToAll.uniform(12.0), s, 3, master_seed=0, workers=1)
    assert np.all((res.n_s >= 0) & (res.n_s <= 1))
    assert np.all((res.n_r >= 0) & (res.n_r <= 1))
    f = res.f_rs[np.isfinite(res.f_rs)]
    assert np.all((f >= -1) & (f <= 1))
    assert [sn.time for sn in res.snapshots] == [1.0, 4.0]
    assert res.snapshots[0].p_s.shape == (16,)
    assert res.window_n_s.shape == res.traj_n_s.shape
    assert res.metadata()["n_aborted"] == 0 and not res.unreliable


def test_guard_breach_aborts():
    p = SystemParams.reference()
    s = TWASettings(dt=1e-2, t_end=1.0, guard=0.5)
    with pytest.raises(RuntimeError):
        simulate(p, uncoupled(2), s, 2, master_seed=0, workers=1)
