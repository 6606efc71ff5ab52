"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The ensemble criteria run desk-scale simulations (about ten minutes in total
on one core). Every tolerance below is the stated one; nothing is loosened
to make a criterion pass.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydcycles.exact import evolve_exact, product_state
from rydcycles.meanfield import (EigenSpectrum, MFState, Phase, classical_fixed_points,
                                 classical_jacobian, classify_phases, evolve_mf, leading_eigenvalue,
                                 limit_cycle_metrics)
from rydcycles.model import (AllToAll, CollectiveCoupling, CouplingMatrix, Lattice, SystemParams,
                             VdW, chain_coupling)
from rydcycles.observables import (direct_correlation, first_peak_lag, fourier_spectrum,
                                   peak_to_peak, relative_fraction_of_means, scaling_collapse,
                                   two_time_correlation)
from rydcycles.twa import TWASettings, run_lattice, simulate

pytestmark = pytest.mark.slow

CHI = CollectiveCoupling.uniform(12.0)
OMEGAS = np.round(np.arange(0.5, 4.0 + 1e-9, 0.1), 10)
DELTAS = np.round(np.arange(0.0, 6.0 + 1e-9, 0.1), 10)

# spectral analysis settings shared by the all-to-all ensembles
T_END = 2050.0
TRANSIENT = 50.0
MAX_LAG = 100.0
RECORD_DT = 0.05


def _all_to_all(delta_r, n, n_traj, seed):
    p = SystemParams.reference(2.0, delta_r)
    s = TWASettings(dt=5e-3, t_end=T_END, record_dt=RECORD_DT)
    return simulate(p, chain_coupling(n, AllToAll.uniform(12.0)), s, n_traj, seed, workers=1)


def _spectrum(res, n):
    corr = two_time_correlation(res.traj_n_r, res.traj_n_r, RECORD_DT, TRANSIENT, MAX_LAG)
    return fourier_spectrum(corr, "cosine", n)


@pytest.fixture(scope="module")
def quasicycle_runs():
    return {n: _all_to_all(2.1, n, 4, 21) for n in (64, 256, 1024)}


@pytest.fixture(scope="module")
def cycle_runs():
    return {n: _all_to_all(3.0, n, 1, 11) for n in (64, 256, 1024)}


def test_criterion_1_hopf(verdict):
    deltas = np.round(np.arange(1.5, 3.5 + 1e-9, 0.05), 10)
    re = np.array([leading_eigenvalue(SystemParams.reference(2.0, d), CHI).real for d in deltas])
    flips = np.nonzero(np.diff(np.sign(re)))[0]
    crossing = np.nan
    if len(flips):
        # linear interpolation of Re[lambda_0] between the bracketing grid points
        k = flips[0]
        crossing = deltas[k] - re[k] * (deltas[k + 1] - deltas[k]) / (re[k + 1] - re[k])
    lam = leading_eigenvalue(SystemParams.reference(2.0, 2.1), CHI)
    ok = (len(flips) == 1 and 2.1 < crossing < 3.0 and lam.real < 0
          and abs(abs(lam.imag) - 3.7) <= 0.4)
    detail = (f"sign changes={len(flips)} at delta_r*={crossing:.4f}; at 2.1 "
              f"Re={lam.real:.4f} |Im|={abs(lam.imag):.3f}")
    assert verdict(1, "Hopf transition", ok, detail)


def test_criterion_2_limit_cycle_metrics(verdict):
    traj = evolve_mf(MFState.ground(), SystemParams.reference(2.0, 3.0), CHI, 300.0, sample_dt=1e-2)
    late = traj.t >= 100.0
    m = limit_cycle_metrics(traj.t[late], traj.n_s[late], traj.n_r[late])
    ok = 1.4 <= m.period <= 2.6 and 0.2 < m.t_rs < 0.5
    assert verdict(2, "limit-cycle metrics", ok, f"T={m.period:.3f} t_rs={m.t_rs:.3f}")


def test_criterion_3_four_phases(verdict):
    points = [(om, dr) for om in OMEGAS for dr in DELTAS]
    labels = []
    for i in range(0, len(points), 256):
        chunk = points[i:i + 256]
        params = [SystemParams.reference(om, dr) for om, dr in chunk]
        labels += [lab.label for lab in classify_phases(params, CHI)]
    table = dict(zip(points, labels))
    found = {lab for lab in labels}
    required = {Phase.MONOSTABLE_STA, Phase.PURE_LC, Phase.COEXIST_STA_LC, Phase.BISTABLE_STA}
    # the Delta_r = 0 edge must be mostly monostable; a Hopf pocket near Omega = 3 is genuine
    small_delta = [table[(om, 0.0)] for om in OMEGAS]
    mono = sum(lab is Phase.MONOSTABLE_STA for lab in small_delta) / len(small_delta)
    others = [float(om) for om in OMEGAS if table[(om, 0.0)] is not Phase.MONOSTABLE_STA]
    ok = required <= found and table[(2.0, 3.0)] is Phase.PURE_LC and mono > 0.5
    counts = {p.value: labels.count(p) for p in Phase}
    assert verdict(3, "four-phase coverage", ok,
                   f"counts={counts} (2,3)={table[(2.0, 3.0)].value} "
                   f"monostable at delta_r=0: {mono:.0%} (others at omega={others})")


def test_criterion_4_classical_null(verdict):
    worst_imag = 0.0
    worst_stable = -np.inf
    n_roots = 0
    for om in OMEGAS:
        for dr in DELTAS:
            p = SystemParams.reference(om, dr)
            for n_s, n_r in classical_fixed_points(p, CHI):
                ev = np.linalg.eigvals(classical_jacobian(n_s, n_r, p, CHI))
                n_roots += 1
                worst_imag = max(worst_imag, float(np.max(np.abs(ev.imag))))
                if np.all(ev.real < 0):
                    worst_stable = max(worst_stable, float(ev.real.max()))
    ok = worst_imag < 1e-8 and worst_stable < 0
    assert verdict(4, "classical null result", ok,
                   f"roots={n_roots} max|Im|={worst_imag:.1e} max Re(stable)={worst_stable:.3f}")


def test_criterion_5_oracle_equivalence(verdict):
    p = SystemParams.reference()
    z = np.zeros((1, 1))
    single = CouplingMatrix(z, z, z)
    res = simulate(p, single, TWASettings(dt=5e-3, t_end=10.0, record_dt=0.05), 10_000, 1, workers=1)
    ex = evolve_exact(product_state(1), p, single, 10.0, dt=5e-3, sample_dt=0.05)
    dev = max(np.max(np.abs(res.n_s - ex.n_s[:, 0])), np.max(np.abs(res.n_r - ex.n_r[:, 0])))
    worst_rel = 0.0
    for delta_r in (3.0, 2.1):
        q = SystemParams.reference(2.0, delta_r)
        for n in (2, 3):
            cm = chain_coupling(n, VdW.calibrated())
            e = evolve_exact(product_state(n), q, cm, 30.0, dt=5e-3, sample_dt=0.05)
            r = simulate(q, cm, TWASettings(dt=5e-3, t_end=30.0, record_dt=0.05), 2000, 5, workers=1)
            late = e.t >= 10.0
            for approx, exact in ((r.n_s, e.mean_n_s), (r.n_r, e.mean_n_r)):
                rel = abs(approx[late].mean() - exact[late].mean()) / exact[late].mean()
                worst_rel = max(worst_rel, rel)
    ok = dev < 0.02 and worst_rel < 0.15
    assert verdict(5, "oracle equivalence", ok,
                   f"N=1 max dev={dev:.4f}; N=2,3 vdW max rel err={worst_rel:.3f}")


def test_criterion_6_quasicycle_collapse(verdict, quasicycle_runs):
    spectra = [(n, _spectrum(res, n)) for n, res in quasicycle_runs.items()]
    report = scaling_collapse(spectra)
    omega = np.array(report.peak_omega)
    in_band = np.all((omega >= 1.9) & (omega <= 2.9))
    distinct = np.all(np.abs(omega - 3.7) > 0.5)
    ok = report.collapsed and in_band and distinct
    detail = (f"N*F={np.round(report.scaled, 3).tolist()} deviation={report.deviation:.2f} "
              f"peaks={np.round(omega, 2).tolist()}")
    assert verdict(6, "quasicycle collapse", ok, detail)


def test_criterion_7_limit_cycle_spectra(verdict, cycle_runs):
    big = cycle_runs[1024]
    late = big.t >= TRANSIENT
    f = relative_fraction_of_means(np.clip(big.traj_n_s[0], 0, 1), np.clip(big.traj_n_r[0], 0, 1))
    f_peak = float(np.nanmax(f[late]))
    spec = _spectrum(big, 1024)
    w0, _ = spec.peak()
    harmonics = spec.harmonics(w0)
    exact_multiples = [(k, w) for k, w in harmonics if abs(w - k * w0) <= 0.05 * k * w0]
    # the fundamental is the first harmonic; at least its second multiple must show up
    n_harmonics = 1 + len(exact_multiples)
    report = scaling_collapse([(n, _spectrum(res, n)) for n, res in cycle_runs.items()])
    ok = f_peak >= 0.7 and n_harmonics >= 2 and not report.collapsed
    detail = (f"f_rs max={f_peak:.3f} fundamental={w0:.3f} harmonics={harmonics} "
              f"N*F={np.round(report.scaled, 2).tolist()} verdict={report.verdict}")
    assert verdict(7, "limit-cycle spectra", ok, detail)


def test_criterion_8_predator_prey_lag(verdict, quasicycle_runs, cycle_runs):
    results = []
    for regime, runs in (("qc", quasicycle_runs), ("lc", cycle_runs)):
        for n, res in runs.items():
            w0, _ = _spectrum(res, n).peak()
            period = 2 * np.pi / w0
            g_rs = two_time_correlation(res.traj_n_r, res.traj_n_s, RECORD_DT, TRANSIENT, MAX_LAG,
                                        labels=("r", "s"))
            lag = first_peak_lag(g_rs)
            results.append((regime, n, lag, period, 0 < lag <= period / 2))
    ok = all(r[-1] for r in results)
    detail = "; ".join(f"{r}/{n}: {lag:.3f} of T/2={T / 2:.3f}" for r, n, lag, T, _ in results)
    assert verdict(8, "predator-prey cross-correlation", ok, detail)


def test_criterion_9_vdw_desynchronization(verdict):
    p = SystemParams.reference(2.0, 3.0)
    scaled, peaks = [], []
    window_ratio = raw_ratio = np.nan
    for L in (8, 12, 16):
        s = TWASettings(dt=5e-3, t_end=650.0, record_dt=RECORD_DT, subsystem_window=4)
        res = run_lattice(p, Lattice(L), VdW.calibrated(), s, 1, 11, workers=1)
        corr = two_time_correlation(res.traj_n_r, res.traj_n_r, RECORD_DT, TRANSIENT, 50.0)
        w, h = fourier_spectrum(corr, "none", L * L).peak()
        peaks.append(w)
        scaled.append(L * L * h)
        if L == 16:
            late = res.t >= 600.0
            whole = res.f_rs[late]
            window = relative_fraction_of_means(np.clip(res.window_n_s[0], 0, 1),
                                                np.clip(res.window_n_r[0], 0, 1))[late]
            window_ratio = peak_to_peak(window) / peak_to_peak(whole)
            raw_ratio = np.ptp(window[np.isfinite(window)]) / np.ptp(whole[np.isfinite(whole)])
    spread = max(scaled) / min(scaled) - 1.0
    ok = spread < 0.30 and window_ratio >= 3.0
    detail = (f"N*F={np.round(scaled, 3).tolist()} spread={spread:.2f}; window/whole "
              f"range ratio={window_ratio:.2f} (max-min {raw_ratio:.2f})")
    assert verdict(9, "vdW desynchronization", ok, detail)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1.5, 3.5), st.integers(50, 2000))
def _hygiene_case(seed, delta_r, n):
    rng = np.random.default_rng(seed)
    p = SystemParams.reference(2.0, delta_r)
    traj = evolve_mf(MFState.mixture(*rng.uniform(0, 0.4, 2), 0.01), p, CHI, 5.0, dt_max=1e-3)
    trace = np.max(np.abs(np.trace(traj.rho, axis1=1, axis2=2) - 1))
    herm = np.max(np.abs(traj.rho - np.conj(np.swapaxes(traj.rho, 1, 2))))
    assert trace < 1e-9 and herm < 1e-12
    ev = EigenSpectrum.from_matrix(rng.normal(size=(8, 8))).eigenvalues
    assert np.allclose(np.sort_complex(ev), np.sort_complex(ev.conj()), atol=1e-8)
    a = rng.normal(size=n)
    b = rng.normal(size=n)
    fft = two_time_correlation(a, b, 1.0, 0.0, 20.0, enforce_length=False).values
    assert np.max(np.abs(fft - direct_correlation(a, b, 20))) < 1e-10


def test_criterion_10_hygiene(verdict):
    failure = ""
    try:
        _hygiene_case()
        s = TWASettings(dt=1e-2, t_end=5.0, record_dt=0.1)
        cm = chain_coupling(4, VdW.calibrated())
        a = simulate(SystemParams.reference(), cm, s, 3, 42, workers=1)
        b = simulate(SystemParams.reference(), cm, s, 3, 42, workers=1)
        if not (np.array_equal(a.traj_n_s, b.traj_n_s) and np.array_equal(a.traj_n_r, b.traj_n_r)):
            failure = "seed determinism"
    except AssertionError as exc:
        failure = f"property violated: {exc}"
    assert verdict(10, "numerics hygiene", not failure, failure or "all properties hold")
