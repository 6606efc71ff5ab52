"""Exact many-body Lindblad integration for a handful of atoms.

Used as ground truth for the mean-field (N = 1) and phase-space (N <= 6)
backends. The superoperator is never built: diagonal terms act as one
elementwise factor, and the drive and recycling terms act site by site on the
density-matrix tensor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import G, R, S, CouplingMatrix, SystemParams

MAX_ATOMS = 6


class CapacityError(ValueError):
    pass


def _check_size(n: int):
    if n > MAX_ATOMS:
        raise CapacityError(f"exact propagation is limited to {MAX_ATOMS} atoms, got {n}")


def product_state(n: int, local: np.ndarray | None = None) -> np.ndarray:
    """``rho_1 (x) ... (x) rho_n``; the default is every atom in ``|g>``."""
    _check_size(n)
    if local is None:
        local = np.zeros((3, 3), dtype=complex)
        local[G, G] = 1.0
    rho = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        rho = np.kron(rho, local)
    return rho


@dataclass(frozen=True)
class DensityMatrix:
    rho: np.ndarray

    @property
    def n_atoms(self) -> int:
        return int(round(np.log(self.rho.shape[0]) / np.log(3)))

    def violations(self) -> dict:
        rho = self.rho
        out = {
            "trace": abs(np.trace(rho) - 1.0),
            "hermiticity": float(np.max(np.abs(rho - rho.conj().T))),
        }
        if self.n_atoms <= 3:
            out["min_eigenvalue"] = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
        return out


class ExactModel:
    """Precomputed pieces of the many-body master equation."""

    def __init__(self, params: SystemParams, couplings: CouplingMatrix):
        n = couplings.N
        _check_size(n)
        self.n = n
        self.params = params
        occ = np.array(list(itertools.product(range(3), repeat=n)), dtype=int).reshape(-1, n)
        single = np.where(occ == S, -params.delta_s, 0.0) + np.where(occ == R, -params.delta_r, 0.0)
        self.energy_diag = single.sum(axis=1) + couplings.pair_energy(occ)
        decay = np.where(occ == S, params.gamma_s, 0.0) + np.where(occ == R, params.gamma_r, 0.0)
        self.decay_diag = decay.sum(axis=1)
        E = self.energy_diag
        D = self.decay_diag
        self.diag_factor = -1j * (E[:, None] - E[None, :]) - 0.5 * (D[:, None] + D[None, :])
        drive = np.zeros((3, 3))
        drive[G, S] = drive[S, G] = params.omega_s / 2
        drive[G, R] = drive[R, G] = params.omega_r / 2
        self.drive = drive

    def _tensor(self, rho):
        return rho.reshape((3,) * (2 * self.n))

    def drive_left(self, rho: np.ndarray) -> np.ndarray:
        """``sum_l A_l rho`` for the single-site drive operator ``A``."""
        n = self.n
        t = self._tensor(rho)
        out = np.zeros_like(t)
        for l in range(n):
            out += np.moveaxis(np.tensordot(self.drive, t, axes=([1], [l])), 0, l)
        return out.reshape(rho.shape)

    def drive_right(self, rho: np.ndarray) -> np.ndarray:
        n = self.n
        t = self._tensor(rho)
        out = np.zeros_like(t)
        for l in range(n):
            out += np.moveaxis(np.tensordot(t, self.drive, axes=([n + l], [0])), -1, n + l)
        return out.reshape(rho.shape)

    def recycling(self, rho: np.ndarray) -> np.ndarray:
        """``sum_{l,a} Gamma_a |g><a|_l rho |a><g|_l``."""
        n = self.n
        t = self._tensor(rho)
        out = np.zeros_like(t)
        for l in range(n):
            for a, gamma in ((S, self.params.gamma_s), (R, self.params.gamma_r)):
                src = [slice(None)] * (2 * n)
                src[l] = a
                src[n + l] = a
                dst = list(src)
                dst[l] = G
                dst[n + l] = G
                out[tuple(dst)] += gamma * t[tuple(src)]
        return out.reshape(rho.shape)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.diag_factor * rho - 1j * (self.drive_left(rho) - self.drive_right(rho))
                + self.recycling(rho))

    def energy(self, rho: np.ndarray) -> float:
        return float(np.real(np.sum(self.energy_diag * np.diag(rho)) + np.trace(self.drive_left(rho))))

    def site_populations(self, rho: np.ndarray) -> np.ndarray:
        """``(n, 3)`` array of single-site populations of ``g, s, r``."""
        n = self.n
        diag = np.real(np.diag(rho)).reshape((3,) * n)
        pops = np.empty((n, 3))
        for l in range(n):
            other = tuple(k for k in range(n) if k != l)
            pops[l] = diag.sum(axis=other) if other else diag
        return pops


def liouvillian_apply(rho: np.ndarray | DensityMatrix, params: SystemParams,
                      couplings: CouplingMatrix) -> np.ndarray:
    """Action of the master-equation generator on ``rho``."""
    if isinstance(rho, DensityMatrix):
        rho = rho.rho
    model = ExactModel(params, couplings)
    if rho.shape != (3 ** model.n,) * 2:
        raise ValueError(f"rho of shape {rho.shape} does not match {model.n} atoms")
    return model.apply(rho)


@dataclass
class ExactTrajectory:
    t: np.ndarray
    n_s: np.ndarray  # (n_t, N)
    n_r: np.ndarray  # (n_t, N)
    rho_final: np.ndarray

    @property
    def mean_n_s(self) -> np.ndarray:
        return self.n_s.mean(axis=1)

    @property
    def mean_n_r(self) -> np.ndarray:
        return self.n_r.mean(axis=1)


def evolve_exact(rho0: np.ndarray, params: SystemParams, couplings: CouplingMatrix, t_end: float,
                 dt: float = 1e-2, sample_dt: float | None = None) -> ExactTrajectory:
    """RK4 propagation recording site-resolved populations.

    Aborts if the trace drifts by more than 1e-6. For N <= 3 positivity is
    checked at 10 evenly spaced samples.
    """
    model = ExactModel(params, couplings)
    n_steps = int(np.ceil(t_end / dt - 1e-9))
    dt = t_end / n_steps
    every = 1 if sample_dt is None else max(1, int(round(sample_dt / dt)))
    checks = set(np.linspace(0, n_steps, 10).round().astype(int)) if model.n <= 3 else set()
    rho = np.array(rho0, dtype=complex)
    ts, ps = [], []
    for i in range(n_steps + 1):
        if i > 0:
            k1 = model.apply(rho)
            k2 = model.apply(rho + 0.5 * dt * k1)
            k3 = model.apply(rho + 0.5 * dt * k2)
            k4 = model.apply(rho + dt * k3)
            rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % every == 0:
            drift = abs(np.trace(rho) - 1.0)
            if drift > 1e-6:
                raise RuntimeError(f"trace drift {drift:.2e} at t={i * dt:.3f}; reduce dt")
            ts.append(i * dt)
            ps.append(model.site_populations(rho))
        if i in checks:
            lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
            if lo < -1e-7:
                raise RuntimeError(f"positivity lost at t={i * dt:.3f} (min eigenvalue {lo:.2e})")
    ps = np.array(ps)
    return ExactTrajectory(np.array(ts), ps[:, :, S], ps[:, :, R], rho)
