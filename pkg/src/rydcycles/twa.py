"""Open-system discrete truncated Wigner (OSDTWA) lattice dynamics.

Each atom carries a classical phase point: populations ``p_s, p_r`` and six
quadratures ``x, y`` with ``sigma^ab ~ (x + i y) / 2``. A trajectory

* starts every atom from the discrete Wigner distribution of ``|g>``
  (g-s and g-r quadratures independently +-1, s-r quadratures 0);
* follows the single-atom no-jump evolution in site-resolved interaction
  fields: coherent part, anticommutator damping, and the norm-restoring term
  ``kappa * y`` with ``kappa = sum_a Gamma_a clamp(p_a, 0, 1)``;
* after each RK4 step, resets an atom to a fresh ground-state sample with
  probability ``1 - exp(-kappa dt)``.

Using the same ``kappa`` in the drift and in the jump rate makes the ensemble
mean of a single atom obey its Lindblad equation exactly (up to O(dt)), clamp
or not, because the reset target has zero populations and zero mean
coherences.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import CouplingMatrix, InteractionSpec, Lattice, SystemParams, build_coupling_matrix
from .observables import relative_fraction, relative_fraction_of_means

THREADS_ENV = "RYDCYCLES_THREADS"
ABORT_TOLERANCE = 0.01


@dataclass(frozen=True)
class TWASettings:
    dt: float = 5e-3
    t_end: float = 100.0
    record_dt: float = 0.05
    t_transient: float = 0.0
    snapshot_times: tuple[float, ...] = ()
    subsystem_window: int | None = None
    # Legitimate phase points reach |x| ~ 50 when fields fluctuate; only true blow-ups abort.
    guard: float = 1e3

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.record_dt <= 0:
            raise ValueError("dt, t_end and record_dt must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def record_every(self) -> int:
        return max(1, int(round(self.record_dt / self.dt)))


class KernelCoupling:
    """Coupling data laid out for the compiled field evaluation."""

    def __init__(self, couplings: CouplingMatrix):
        n = couplings.N
        if couplings.collective is not None:
            c = couplings.collective
            self.mode = kernels.ALL_TO_ALL
            self.chi = np.array([c.ss, c.rr, c.sr], dtype=float)
            self.indptr = np.zeros(n + 1, dtype=np.int64)
            self.indices = np.zeros(0, dtype=np.int64)
            self.vss = self.vrr = self.vsr = np.zeros(0)
        else:
            mask = (couplings.v_ss != 0) | (couplings.v_rr != 0) | (couplings.v_sr != 0)
            rows, cols = np.nonzero(mask)
            self.mode = kernels.SPARSE
            self.chi = np.zeros(3)
            self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
            self.indices = cols.astype(np.int64)
            self.vss = couplings.v_ss[rows, cols].astype(float)
            self.vrr = couplings.v_rr[rows, cols].astype(float)
            self.vsr = couplings.v_sr[rows, cols].astype(float)
        self.N = n

    def args(self):
        return self.mode, self.chi, self.indptr, self.indices, self.vss, self.vrr, self.vsr


def param_vector(params: SystemParams) -> np.ndarray:
    return np.array([params.omega_s, params.omega_r, params.delta_s, params.delta_r,
                     params.gamma_s, params.gamma_r], dtype=float)


# ---------------------------------------------------------------------------
# single-trajectory API


@dataclass
class TrajectoryState:
    X: np.ndarray  # (N, 8) phase points
    rng: np.random.Generator
    t: float = 0.0

    @property
    def p_s(self) -> np.ndarray:
        return self.X[:, 0]

    @property
    def p_r(self) -> np.ndarray:
        return self.X[:, 1]


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index``: a counter-based split of ``master_seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,))))


def sample_initial(atoms: int | Lattice, rng: np.random.Generator) -> TrajectoryState:
    n = atoms.N if isinstance(atoms, Lattice) else int(atoms)
    return TrajectoryState(kernels.sample_ground(n, rng), rng)


def drift(state: TrajectoryState, couplings: CouplingMatrix, params: SystemParams) -> np.ndarray:
    """Deterministic per-atom derivatives of the phase points."""
    kc = KernelCoupling(couplings)
    out = np.empty_like(state.X)
    kernels.drift_stage(state.X, *kc.args(), param_vector(params), out)
    return out


def step(state: TrajectoryState, dt: float, couplings: CouplingMatrix | KernelCoupling,
         params: SystemParams) -> TrajectoryState:
    """Advance by one RK4 drift step followed by the jump decisions, in place."""
    if params.gamma_max * dt >= 0.05:
        raise ValueError(f"Gamma_max * dt = {params.gamma_max * dt:.3g} must stay below 0.05")
    kc = couplings if isinstance(couplings, KernelCoupling) else KernelCoupling(couplings)
    par = param_vector(params)
    work = np.empty((5,) + state.X.shape)
    kernels.rk4_drift(state.X, dt, *kc.args(), par, work)
    kernels.apply_jumps(state.X, dt, par, state.rng)
    state.t += dt
    return state


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Snapshot:
    time: float
    p_s: np.ndarray
    p_r: np.ndarray

    @property
    def f_rs(self) -> np.ndarray:
        """Site-resolved relative fraction; phase-space populations are clamped to [0, 1] first."""
        return relative_fraction(np.clip(self.p_s, 0, 1), np.clip(self.p_r, 0, 1))[0]


@dataclass
class EnsembleResult:
    t: np.ndarray
    traj_n_s: np.ndarray  # (n_ok, n_t) lattice means per trajectory
    traj_n_r: np.ndarray
    window_n_s: np.ndarray | None
    window_n_r: np.ndarray | None
    snapshots: list[Snapshot]
    n_traj: int
    n_aborted: int
    seeds: list[tuple[int, int]]
    n_atoms: int
    wall_time: float = 0.0
    aborted: list[int] = field(default_factory=list)

    @property
    def n_s(self) -> np.ndarray:
        return self.traj_n_s.mean(axis=0)

    @property
    def n_r(self) -> np.ndarray:
        return self.traj_n_r.mean(axis=0)

    @property
    def f_rs(self) -> np.ndarray:
        """Relative fraction of the ensemble-averaged lattice populations."""
        return relative_fraction_of_means(np.clip(self.n_s, 0, 1), np.clip(self.n_r, 0, 1))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def unreliable(self) -> bool:
        return self.n_aborted > ABORT_TOLERANCE * self.n_traj

    def metadata(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "n_aborted": self.n_aborted,
            "aborted_indices": self.aborted,
            "unreliable": self.unreliable,
            "n_atoms": self.n_atoms,
            "seeds": [{"master_seed": m, "trajectory": i} for m, i in self.seeds],
            "wall_time_s": self.wall_time,
        }


def _run_one(job):
    kc, par, settings, window, snap_steps, master_seed, index = job
    rng = trajectory_rng(master_seed, index)
    X = kernels.sample_ground(kc.N, rng)
    rec, snaps, abort = kernels.run_trajectory(
        X, rng, settings.n_steps, settings.dt, settings.record_every, *kc.args(), par,
        window, snap_steps, settings.guard)
    return index, rec, snaps, abort


def worker_count() -> int:
    value = os.environ.get(THREADS_ENV)
    return max(1, int(value)) if value else (os.cpu_count() or 1)


def simulate(params: SystemParams, couplings: CouplingMatrix, settings: TWASettings, n_traj: int,
             master_seed: int, window: np.ndarray | None = None,
             workers: int | None = None) -> EnsembleResult:
    """Run ``n_traj`` independent trajectories and merge them in index order."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if params.gamma_max * settings.dt >= 0.05:
        raise ValueError("Gamma_max * dt must stay below 0.05")
    kc = KernelCoupling(couplings)
    n = kc.N
    win = np.zeros(n, dtype=bool) if window is None else np.asarray(window, dtype=bool)
    snap_steps = np.array(sorted(int(round(s / settings.dt)) for s in settings.snapshot_times),
                          dtype=np.int64)
    par = param_vector(params)
    jobs = [(kc, par, settings, win, snap_steps, master_seed, i) for i in range(n_traj)]
    workers = worker_count() if workers is None else workers
    start = time.perf_counter()
    if workers > 1 and n_traj > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_traj)) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    ok = [r for r in results if r[3] < 0]
    aborted = [r[0] for r in results if r[3] >= 0]
    if not ok:
        raise RuntimeError(f"all {n_traj} trajectories hit the divergence guard")
    recs = np.array([r[1] for r in ok])
    t = np.arange(recs.shape[1]) * settings.record_every * settings.dt
    snapshots = []
    first = ok[0][2]
    for m, s in enumerate(snap_steps):
        snapshots.append(Snapshot(s * settings.dt, first[m, :, 0].copy(), first[m, :, 1].copy()))
    return EnsembleResult(
        t=t,
        traj_n_s=recs[:, :, 0], traj_n_r=recs[:, :, 1],
        window_n_s=recs[:, :, 2] if window is not None else None,
        window_n_r=recs[:, :, 3] if window is not None else None,
        snapshots=snapshots, n_traj=n_traj, n_aborted=len(aborted),
        seeds=[(master_seed, i) for i in range(n_traj)], n_atoms=n,
        wall_time=time.perf_counter() - start, aborted=aborted,
    )


def run_ensemble(config, n_traj: int | None = None, master_seed: int | None = None,
                 workers: int | None = None) -> EnsembleResult:
    """Ensemble for a resolved run configuration (see :class:`rydcycles.config.RunConfig`)."""
    n_traj = config.n_traj if n_traj is None else n_traj
    master_seed = config.master_seed if master_seed is None else master_seed
    couplings = build_coupling_matrix(config.lattice, config.interaction)
    window = None
    if config.twa.subsystem_window:
        window = config.lattice.window(config.twa.subsystem_window)
    return simulate(config.params, couplings, config.twa, n_traj, master_seed, window, workers)


def run_lattice(params: SystemParams, lattice: Lattice, interaction: InteractionSpec,
                settings: TWASettings, n_traj: int, master_seed: int, **kw) -> EnsembleResult:
    couplings = build_coupling_matrix(lattice, interaction)
    window = lattice.window(settings.subsystem_window) if settings.subsystem_window else None
    return simulate(params, couplings, settings, n_traj, master_seed, window, **kw)
