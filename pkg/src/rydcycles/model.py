"""Physical model of the two-component driven-dissipative Rydberg lattice.

Single-atom basis ordering is ``(g, s, r)`` throughout the package. Energies,
rates and times are in units of the decay rate Gamma (hbar = 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

G, S, R = 0, 1, 2

#: Default vdW cutoff in lattice units; the r^-6 tail beyond it is < 0.1% of the lattice sum.
DEFAULT_CUTOFF = 6.0


@dataclass(frozen=True)
class SystemParams:
    """Laser and decay constants of a single three-level atom."""

    omega_s: float = 2.0
    omega_r: float = 2.0
    delta_s: float = 8.0
    delta_r: float = 3.0
    gamma_s: float = 1.0
    gamma_r: float = 1.0

    def __post_init__(self):
        # zero decay is allowed for conservative checks of the dynamics
        if self.gamma_s < 0 or self.gamma_r < 0:
            raise ValueError("decay rates must be non-negative")
        if self.omega_s < 0 or self.omega_r < 0:
            raise ValueError("Rabi frequencies must be non-negative (phases are absorbed)")
        for name in ("omega_s", "omega_r", "delta_s", "delta_r", "gamma_s", "gamma_r"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def reference(cls, omega: float = 2.0, delta_r: float = 3.0) -> "SystemParams":
        """Reference set: Gamma_s = Gamma_r = 1, Omega_s = Omega_r = omega, Delta_s = 8."""
        return cls(omega_s=omega, omega_r=omega, delta_s=8.0, delta_r=delta_r,
                   gamma_s=1.0, gamma_r=1.0)

    def swapped(self) -> "SystemParams":
        """Exchange the roles of ``s`` and ``r``."""
        return SystemParams(self.omega_r, self.omega_s, self.delta_r, self.delta_s,
                            self.gamma_r, self.gamma_s)

    @property
    def gamma_max(self) -> float:
        return max(self.gamma_s, self.gamma_r)


@dataclass(frozen=True)
class CollectiveCoupling:
    """Mean-field couplings chi_ab = 2/N sum_{k != l} V_lk,ab."""

    ss: float = 12.0
    rr: float = 12.0
    sr: float = 12.0

    @classmethod
    def uniform(cls, chi: float) -> "CollectiveCoupling":
        return cls(chi, chi, chi)


def mean_field_shifts(n_s, n_r, chi: CollectiveCoupling):
    """Interaction-induced level shifts ``(h_s, h_r)`` for populations ``(n_s, n_r)``.

    Works elementwise on arrays.
    """
    h_s = chi.ss * n_s + chi.sr * n_r
    h_r = chi.rr * n_r + chi.sr * n_s
    return h_s, h_r


def single_atom_hamiltonian(params: SystemParams, h_s: float = 0.0, h_r: float = 0.0) -> np.ndarray:
    """3x3 rotating-frame Hamiltonian of one atom with diagonal shifts ``h_s``, ``h_r``."""
    H = np.zeros((3, 3), dtype=complex)
    H[G, S] = H[S, G] = params.omega_s / 2
    H[G, R] = H[R, G] = params.omega_r / 2
    H[S, S] = -params.delta_s + h_s
    H[R, R] = -params.delta_r + h_r
    return H


@dataclass(frozen=True)
class Lattice:
    """Square ``L x L`` lattice with unit spacing."""

    L: int
    boundary: Literal["open", "periodic"] = "open"

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def N(self) -> int:
        return self.L * self.L

    def coords(self) -> np.ndarray:
        """Integer site coordinates ``(i, j)``, row-major, shape ``(N, 2)``."""
        i, j = np.divmod(np.arange(self.N), self.L)
        return np.stack([i, j], axis=1)

    def distances(self) -> np.ndarray:
        """Pairwise distances; minimum-image convention for periodic boundaries."""
        c = self.coords()
        d = np.abs(c[:, None, :] - c[None, :, :]).astype(float)
        if self.boundary == "periodic":
            d = np.minimum(d, self.L - d)
        return np.sqrt((d ** 2).sum(axis=-1))

    def window(self, edge: int) -> np.ndarray:
        """Boolean site mask of a centered ``edge x edge`` subsystem."""
        if not 1 <= edge <= self.L:
            raise ValueError(f"window edge {edge} outside [1, {self.L}]")
        lo = (self.L - edge) // 2
        c = self.coords()
        inside = (c >= lo) & (c < lo + edge)
        return inside.all(axis=1)


@dataclass(frozen=True)
class AllToAll:
    chi_ss: float = 12.0
    chi_rr: float = 12.0
    chi_sr: float = 12.0

    @classmethod
    def uniform(cls, chi: float) -> "AllToAll":
        return cls(chi, chi, chi)

    def collective(self) -> CollectiveCoupling:
        return CollectiveCoupling(self.chi_ss, self.chi_rr, self.chi_sr)


@dataclass(frozen=True)
class VdW:
    c6_ss: float
    c6_rr: float
    c6_sr: float
    cutoff_radius: float = DEFAULT_CUTOFF

    @classmethod
    def calibrated(cls, chi: float = 12.0, cutoff_radius: float = DEFAULT_CUTOFF) -> "VdW":
        """C6 chosen so a bulk atom of a fully excited infinite lattice feels shift ``chi``."""
        c6 = calibrate_c6(chi, cutoff_radius)
        return cls(c6, c6, c6, cutoff_radius)


InteractionSpec = Union[AllToAll, VdW]


def lattice_sum(cutoff_radius: float = DEFAULT_CUTOFF, power: int = 6) -> float:
    """Brute-force ``sum_{(m,n) != 0, |(m,n)| <= cutoff} |(m,n)|^-power`` on the square lattice."""
    m = int(np.floor(cutoff_radius))
    i, j = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    r2 = (i ** 2 + j ** 2).astype(float)
    keep = (r2 > 0) & (r2 <= cutoff_radius ** 2 + 1e-12)
    return float(np.sum(r2[keep] ** (-power / 2)))


def calibrate_c6(chi: float = 12.0, cutoff_radius: float = DEFAULT_CUTOFF) -> float:
    return chi / (2.0 * lattice_sum(cutoff_radius))


@dataclass(frozen=True)
class CouplingMatrix:
    """Pairwise couplings ``V_lk,ab`` stored as dense symmetric matrices with zero diagonal.

    ``collective`` is set for all-to-all couplings, which lets the dynamical
    backends evaluate fields from two global sums instead of a matrix product.
    """

    v_ss: np.ndarray
    v_rr: np.ndarray
    v_sr: np.ndarray
    collective: CollectiveCoupling | None = None

    @property
    def N(self) -> int:
        return self.v_ss.shape[0]

    def fields(self, p_s: np.ndarray, p_r: np.ndarray):
        """Site-resolved shifts ``h_a^l = 2 sum_k V_lk,ab p_b^k`` (the pair sum runs over ordered pairs)."""
        h_s = 2.0 * (self.v_ss @ p_s + self.v_sr @ p_r)
        h_r = 2.0 * (self.v_rr @ p_r + self.v_sr @ p_s)
        return h_s, h_r

    def pair_energy(self, occ: np.ndarray) -> np.ndarray:
        """Diagonal interaction energy of product basis states.

        ``occ`` has shape ``(..., N)`` with entries in ``{G, S, R}``.
        """
        ns = (occ == S).astype(float)
        nr = (occ == R).astype(float)
        # sum over ordered pairs l != k of the Hamiltonian's interaction lines
        e = np.einsum("...l,lk,...k->...", ns, self.v_ss, ns)
        e += np.einsum("...l,lk,...k->...", nr, self.v_rr, nr)
        e += 2.0 * np.einsum("...l,lk,...k->...", ns, self.v_sr, nr)
        return e


def coupling_from_distances(dist: np.ndarray, spec: InteractionSpec, *,
                            allow_degenerate: bool = False) -> CouplingMatrix:
    """Couplings for an arbitrary set of atoms given their distance matrix."""
    n = dist.shape[0]
    off = ~np.eye(n, dtype=bool)
    if n > 1 and np.any(dist[off] <= 0):
        raise ValueError("coincident atoms: pairwise distances must be positive")
    if isinstance(spec, AllToAll):
        base = np.zeros((n, n))
        if n > 1:
            base[off] = 1.0 / (2.0 * (n - 1))
        return CouplingMatrix(spec.chi_ss * base, spec.chi_rr * base, spec.chi_sr * base,
                              collective=spec.collective())
    if isinstance(spec, VdW):
        if spec.cutoff_radius < 1 and not allow_degenerate:
            raise ValueError(
                f"cutoff_radius={spec.cutoff_radius} < 1 leaves no interacting pairs; "
                "pass allow_degenerate=True to force")
        kernel = np.zeros((n, n))
        within = off & (dist <= spec.cutoff_radius)
        kernel[within] = dist[within] ** -6
        return CouplingMatrix(spec.c6_ss * kernel, spec.c6_rr * kernel, spec.c6_sr * kernel)
    raise TypeError(f"unsupported interaction spec {spec!r}")


def build_coupling_matrix(lattice: Lattice, spec: InteractionSpec, *,
                          allow_degenerate: bool = False) -> CouplingMatrix:
    return coupling_from_distances(lattice.distances(), spec, allow_degenerate=allow_degenerate)


def chain_coupling(n: int, spec: InteractionSpec, spacing: float = 1.0) -> CouplingMatrix:
    """Couplings for ``n`` atoms on an open 1D chain (used for small exact checks)."""
    x = spacing * np.arange(n, dtype=float)
    return coupling_from_distances(np.abs(x[:, None] - x[None, :]), spec)
