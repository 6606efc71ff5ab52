"""Mean-field dynamics and bifurcation analysis.

The factorized ansatz reduces the lattice to one self-consistent 3x3 density
matrix. Real coordinates used for Jacobians are

    (sigma^ss, sigma^rr, Re sigma^gs, Im sigma^gs, Re sigma^gr, Im sigma^gr,
     Re sigma^sr, Im sigma^sr)

with sigma^ab = rho[b, a] and sigma^gg eliminated through the trace.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import find_peaks

from . import kernels
from .model import G, R, S, CollectiveCoupling, SystemParams, mean_field_shifts

COORD_NAMES = ("n_s", "n_r", "re_gs", "im_gs", "re_gr", "im_gr", "re_sr", "im_sr")


class IntegrationError(RuntimeError):
    """Raised when the fixed-step integrator visibly loses the trace."""


class IllConditionedJacobian(RuntimeError):
    pass


class NotPeriodic(ValueError):
    pass


# ---------------------------------------------------------------------------
# state and coordinates


def coords_to_rho(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    rho = np.zeros(v.shape[:-1] + (3, 3), dtype=complex)
    rho[..., S, S] = v[..., 0]
    rho[..., R, R] = v[..., 1]
    rho[..., G, G] = 1.0 - v[..., 0] - v[..., 1]
    rho[..., S, G] = v[..., 2] + 1j * v[..., 3]
    rho[..., R, G] = v[..., 4] + 1j * v[..., 5]
    rho[..., R, S] = v[..., 6] + 1j * v[..., 7]
    rho[..., G, S] = np.conj(rho[..., S, G])
    rho[..., G, R] = np.conj(rho[..., R, G])
    rho[..., S, R] = np.conj(rho[..., R, S])
    return rho


def rho_to_coords(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    return np.stack([
        rho[..., S, S].real, rho[..., R, R].real,
        rho[..., S, G].real, rho[..., S, G].imag,
        rho[..., R, G].real, rho[..., R, G].imag,
        rho[..., R, S].real, rho[..., R, S].imag,
    ], axis=-1)


@dataclass(frozen=True)
class MFState:
    """Single-atom density matrix over ``(g, s, r)``."""

    rho: np.ndarray

    @classmethod
    def ground(cls) -> "MFState":
        return cls.mixture(0.0, 0.0)

    @classmethod
    def pure(cls, level: int) -> "MFState":
        rho = np.zeros((3, 3), dtype=complex)
        rho[level, level] = 1.0
        return cls(rho)

    @classmethod
    def mixture(cls, n_s: float, n_r: float, coherence: float = 0.0) -> "MFState":
        v = np.zeros(8)
        v[0], v[1] = n_s, n_r
        v[2:] = coherence
        return cls(coords_to_rho(v))

    @classmethod
    def from_coords(cls, v) -> "MFState":
        return cls(coords_to_rho(v))

    def coords(self) -> np.ndarray:
        return rho_to_coords(self.rho)

    def sigma(self, a: int, b: int) -> complex:
        """Expectation of |a><b|."""
        return complex(self.rho[b, a])

    @property
    def n_s(self) -> float:
        return float(self.rho[S, S].real)

    @property
    def n_r(self) -> float:
        return float(self.rho[R, R].real)

    def violations(self) -> dict:
        """Deviation of trace, Hermiticity and positivity from a physical state."""
        return {
            "trace": abs(np.trace(self.rho) - 1.0),
            "hermiticity": float(np.max(np.abs(self.rho - self.rho.conj().T))),
            "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T)).min()),
        }


# ---------------------------------------------------------------------------
# equations of motion


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def lindblad_rhs(rho, omega_s, omega_r, delta_s, delta_r, gamma_s, gamma_r,
                 chi: CollectiveCoupling, shifts=None) -> np.ndarray:
    """Batched single-atom mean-field Lindblad right-hand side.

    ``rho`` has shape ``(..., 3, 3)``; scalar parameters broadcast against the
    batch shape. If ``shifts`` is given, the level shifts are frozen at those
    values instead of being computed from ``rho`` itself.
    """
    rho = np.asarray(rho, dtype=complex)
    batch = rho.shape[:-2]
    if shifts is None:
        h_s, h_r = mean_field_shifts(rho[..., S, S].real, rho[..., R, R].real, chi)
    else:
        h_s, h_r = shifts
    H = np.zeros(batch + (3, 3), dtype=complex)
    H[..., G, S] = H[..., S, G] = _as_array(omega_s) / 2
    H[..., G, R] = H[..., R, G] = _as_array(omega_r) / 2
    H[..., S, S] = -_as_array(delta_s) + h_s
    H[..., R, R] = -_as_array(delta_r) + h_r
    d = -1j * (H @ rho - rho @ H)
    gs = _as_array(gamma_s)
    gr = _as_array(gamma_r)
    # jump |a> -> |g>: recycling into gg, anticommutator damping elsewhere
    d[..., G, G] += gs * rho[..., S, S] + gr * rho[..., R, R]
    damp = np.zeros(batch + (3,))
    damp[..., S] = gs
    damp[..., R] = gr
    d -= 0.5 * (damp[..., :, None] + damp[..., None, :]) * rho
    return d


def mf_rhs(state: MFState | np.ndarray, params: SystemParams, chi: CollectiveCoupling) -> np.ndarray:
    """Time derivative of the mean-field density matrix."""
    rho = state.rho if isinstance(state, MFState) else state
    p = params
    return lindblad_rhs(rho, p.omega_s, p.omega_r, p.delta_s, p.delta_r, p.gamma_s, p.gamma_r, chi)


def _coord_rhs(v, params: SystemParams, chi: CollectiveCoupling, shifts=None) -> np.ndarray:
    p = params
    d = lindblad_rhs(coords_to_rho(v), p.omega_s, p.omega_r, p.delta_s, p.delta_r,
                     p.gamma_s, p.gamma_r, chi, shifts=shifts)
    return rho_to_coords(d)


# ---------------------------------------------------------------------------
# time evolution


@dataclass
class MFTrajectory:
    t: np.ndarray
    rho: np.ndarray  # (n_t, 3, 3)

    @property
    def n_s(self) -> np.ndarray:
        return self.rho[:, S, S].real

    @property
    def n_r(self) -> np.ndarray:
        return self.rho[:, R, R].real

    def state(self, i: int) -> MFState:
        return MFState(self.rho[i])

    def coords(self) -> np.ndarray:
        return rho_to_coords(self.rho)


def _rk4_steps(rho, f, dt, n_steps, record_every=1, record_from=0):
    """Integrate ``rho`` with fixed-step RK4; returns recorded samples (including t=0 if recorded)."""
    out = []
    if record_from == 0:
        out.append(rho.copy())
    for i in range(1, n_steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i >= record_from and i % record_every == 0:
            out.append(rho.copy())
    return rho, out


def evolve_mf(state0: MFState, params: SystemParams, chi: CollectiveCoupling, t_end: float,
              dt_max: float = 1e-2, sample_dt: float | None = None) -> MFTrajectory:
    """Fixed-step RK4 mean-field trajectory on a uniform grid.

    The step is the largest ``dt <= dt_max`` dividing ``t_end``; samples are
    taken every ``sample_dt`` (rounded to a whole number of steps).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n_steps = int(math.ceil(t_end / dt_max - 1e-9))
    dt = t_end / n_steps
    every = 1 if sample_dt is None else max(1, int(round(sample_dt / dt)))
    _, samples = _rk4_steps(state0.rho.astype(complex), lambda r: mf_rhs(r, params, chi),
                            dt, n_steps, every)
    rho = np.array(samples)
    drift = np.max(np.abs(np.trace(rho, axis1=1, axis2=2) - 1.0))
    if drift > 1e-6:
        raise IntegrationError(f"trace drift {drift:.2e} exceeds 1e-6; reduce dt_max (dt={dt:.3g})")
    t = np.arange(len(rho)) * every * dt
    return MFTrajectory(t, rho)


# ---------------------------------------------------------------------------
# fixed points and linear stability


class FixedPoint(NamedTuple):
    state: MFState
    residual: float


@dataclass(frozen=True)
class EigenSpectrum:
    """Jacobian eigenvalues sorted by descending real part, conjugate pairs adjacent."""

    eigenvalues: np.ndarray

    @classmethod
    def from_matrix(cls, J: np.ndarray) -> "EigenSpectrum":
        return cls(sort_spectrum(np.linalg.eigvals(J)))

    @property
    def leading(self) -> complex:
        return complex(self.eigenvalues[0])

    @property
    def stable(self) -> bool:
        return self.leading.real < 0

    @property
    def quasicycle_ratio(self) -> float:
        """``-|Im lambda_0| / Re lambda_0``; large and positive near a noisy stable focus."""
        lam = self.leading
        if lam.real == 0:
            return math.inf
        return -abs(lam.imag) / lam.real


def sort_spectrum(ev: np.ndarray) -> np.ndarray:
    ev = np.asarray(ev, dtype=complex)
    # rounding merges the real parts of conjugate partners before sorting
    order = np.lexsort((-ev.imag, -np.round(ev.real, 9)))
    return ev[order]


def jacobian(fp: MFState | np.ndarray, params: SystemParams, chi: CollectiveCoupling,
             step: float = 1e-6, check_step: float = 1e-5, tol: float = 1e-4) -> np.ndarray:
    """8x8 Jacobian of the mean-field flow by central differences.

    A second stencil at ``check_step`` validates the first; disagreement above
    ``tol`` in any entry raises :class:`IllConditionedJacobian`.
    """
    v = fp.coords() if isinstance(fp, MFState) else np.asarray(fp, dtype=float)
    J1 = _fd_jacobian(v[None], params, chi, step)[0]
    J2 = _fd_jacobian(v[None], params, chi, check_step)[0]
    err = np.max(np.abs(J1 - J2))
    if err > tol:
        raise IllConditionedJacobian(f"finite-difference stencils disagree by {err:.2e}")
    return J1


def _fd_jacobian(v: np.ndarray, params, chi, h: float) -> np.ndarray:
    """Batched central-difference Jacobian, ``v`` of shape (B, 8)."""
    eye = np.eye(8) * h
    plus = v[:, None, :] + eye[None]
    minus = v[:, None, :] - eye[None]
    fp = _coord_rhs(plus, params, chi)
    fm = _coord_rhs(minus, params, chi)
    return np.swapaxes((fp - fm) / (2 * h), 1, 2)


def _frozen_field_seeds(params, chi, spacing: float = 0.05, keep: int = 12) -> np.ndarray:
    """Near-fixed points from the self-consistency map of frozen-field steady states.

    For frozen shifts the single-atom flow is affine, so its steady state is
    one linear solve. Grid points where the map nearly returns its argument
    seed Newton alongside the fixed start grid.
    """
    grid = np.arange(0.0, 1.0 + 1e-9, spacing)
    ns, nr = np.meshgrid(grid, grid, indexing="ij")
    mask = ns + nr <= 1.0 + 1e-9
    pts = np.stack([ns[mask], nr[mask]], axis=1)
    shifts = mean_field_shifts(pts[:, 0], pts[:, 1], chi)
    shifts = (shifts[0][:, None], shifts[1][:, None])
    basis = np.concatenate([np.zeros((1, 8)), np.eye(8)])
    f = _coord_rhs(np.broadcast_to(basis, (len(pts), 9, 8)), params, chi, shifts=shifts)
    b = f[:, 0]
    A = np.swapaxes(f[:, 1:] - b[:, None], 1, 2)
    steady = np.linalg.solve(A, -b[..., None])[..., 0]
    resid = np.linalg.norm(steady[:, :2] - pts, axis=1)
    order = np.argsort(resid)[:keep]
    return steady[order]


def _start_grid() -> np.ndarray:
    starts = []
    for n_s in (0.0, 0.3, 0.6):
        for n_r in (0.0, 0.3, 0.6):
            for c in (0.0, 0.05, -0.05):
                v = np.zeros(8)
                v[0], v[1] = n_s, n_r
                v[2:] = c
                starts.append(v)
    return np.array(starts)


def find_fixed_points(params: SystemParams, chi: CollectiveCoupling, n_starts: int | None = None,
                      max_iter: int = 60, tol: float = 1e-10) -> list[FixedPoint]:
    """Physical fixed points of the mean-field flow.

    Damped Newton runs from a deterministic start list: 27 mixtures
    (n_s, n_r in {0, 0.3, 0.6}, coherences 0 or +-0.05) followed by
    frozen-field seeds. ``n_starts`` truncates that list (minimum 8).
    """
    starts = np.concatenate([_start_grid(), _frozen_field_seeds(params, chi)])
    if n_starts is not None:
        if n_starts < 8:
            raise ValueError("n_starts must be >= 8")
        starts = starts[:n_starts]
    v = starts.copy()
    active = np.ones(len(v), dtype=bool)
    for _ in range(max_iter):
        f = _coord_rhs(v, params, chi)
        norm = np.linalg.norm(f, axis=1)
        active &= np.isfinite(norm) & (norm > tol * 1e-3)
        if not active.any():
            break
        J = _fd_jacobian(v[active], params, chi, 1e-6)
        try:
            dv = np.linalg.solve(J, -f[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            dv = np.stack([np.linalg.lstsq(j, -r, rcond=None)[0] for j, r in zip(J, f[active])])
        size = np.linalg.norm(dv, axis=1, keepdims=True)
        dv *= np.minimum(1.0, 0.5 / np.maximum(size, 1e-300))
        v[active] += dv
        active &= np.all(np.abs(v) < 10, axis=1)
    roots: list[FixedPoint] = []
    for x in v:
        res = float(np.linalg.norm(_coord_rhs(x, params, chi)))
        if not res < tol:
            continue
        state = MFState.from_coords(x)
        if state.violations()["min_eigenvalue"] < -1e-9:
            continue
        if any(np.max(np.abs(x - r.state.coords())) < 1e-6 for r in roots):
            continue
        roots.append(FixedPoint(state, res))
    if not roots:
        raise RuntimeError("no fixed point found; the mean-field flow always has one")
    roots.sort(key=lambda r: (r.state.n_s + r.state.n_r, r.state.n_s))
    return roots


# ---------------------------------------------------------------------------
# limit cycles


@dataclass(frozen=True)
class LimitCycleMetrics:
    period: float
    dT_rs: float
    t_rs: float
    amplitude_s: float
    amplitude_r: float


def _moving_average(x: np.ndarray, w: int) -> np.ndarray:
    if w <= 1:
        return x
    pad = w // 2
    xp = np.pad(x, (pad, w - 1 - pad), mode="edge")
    return np.convolve(xp, np.ones(w) / w, mode="valid")


def _dominant_period(x: np.ndarray, dt: float) -> float:
    x = x - x.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), dt)
    spec[:2] = 0.0
    k = int(np.argmax(spec))
    if k == 0 or spec[k] == 0:
        raise NotPeriodic("no oscillatory component")
    return 1.0 / freqs[k]


def _refined_peaks(x: np.ndarray, t: np.ndarray, distance: int, prominence: float) -> np.ndarray:
    idx, _ = find_peaks(x, distance=max(1, distance), prominence=prominence)
    idx = idx[(idx > 0) & (idx < len(x) - 1)]
    y0, y1, y2 = x[idx - 1], x[idx], x[idx + 1]
    denom = y0 - 2 * y1 + y2
    shift = np.where(denom != 0, 0.5 * (y0 - y2) / np.where(denom != 0, denom, 1), 0.0)
    return t[idx] + shift * (t[1] - t[0])


def limit_cycle_metrics(t, n_s=None, n_r=None, window_fraction: float = 1 / 20) -> LimitCycleMetrics:
    """Period and relative timing of ``n_r`` and ``n_s`` peaks.

    Accepts an :class:`MFTrajectory` or explicit arrays. Signals are smoothed
    with a moving average over ``window_fraction`` of a rough period first.
    The advance of each ``n_r`` peak over the next ``n_s`` peak is wrapped to
    ``[-T/2, T/2)`` and averaged on the circle. Amplitudes are peak-to-peak
    over the second half of the series.
    """
    if isinstance(t, MFTrajectory):
        t, n_s, n_r = t.t, t.n_s, t.n_r
    t = np.asarray(t, dtype=float)
    n_s = np.asarray(n_s, dtype=float)
    n_r = np.asarray(n_r, dtype=float)
    dt = t[1] - t[0]
    T0 = _dominant_period(n_r, dt)
    w = max(1, int(round(window_fraction * T0 / dt)))
    ss = _moving_average(n_s, w)
    sr = _moving_average(n_r, w)
    dist = int(0.5 * T0 / dt)
    pr = _refined_peaks(sr, t, dist, 0.25 * np.ptp(sr))
    ps = _refined_peaks(ss, t, dist, 0.25 * np.ptp(ss))
    if len(pr) < 3 or len(ps) < 1:
        raise NotPeriodic(f"only {len(pr)} n_r peaks and {len(ps)} n_s peaks detected")
    T = float(np.mean(np.diff(pr)))
    lags = []
    for p in pr:
        later = ps[ps >= p - 1e-12]
        if len(later):
            lags.append(later[0] - p)
    if not lags:
        raise NotPeriodic("no n_s peak follows an n_r peak")
    phase = 2 * np.pi * np.asarray(lags) / T
    mean_phase = math.atan2(np.mean(np.sin(phase)), np.mean(np.cos(phase)))
    t_rs = mean_phase / (2 * np.pi)
    if t_rs >= 0.5:
        t_rs -= 1.0
    late = slice(len(t) // 2, None)
    return LimitCycleMetrics(T, t_rs * T, t_rs, float(np.ptp(n_s[late])), float(np.ptp(n_r[late])))


# ---------------------------------------------------------------------------
# phase classification


class Phase(str, enum.Enum):
    MONOSTABLE_STA = "MonostableSTA"
    PURE_LC = "PureLC"
    COEXIST_STA_LC = "CoexistSTA_LC"
    BISTABLE_STA = "BistableSTA"
    INDETERMINATE = "Indeterminate"


@dataclass
class ClassifiedFixedPoint:
    point: FixedPoint
    spectrum: EigenSpectrum

    @property
    def stable(self) -> bool:
        return self.spectrum.stable


@dataclass
class PhaseLabel:
    label: Phase
    fixed_points: list[ClassifiedFixedPoint]
    quasicycle_ratio: float | None
    lc_amplitude: float
    metrics: LimitCycleMetrics | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def n_stable(self) -> int:
        return sum(fp.stable for fp in self.fixed_points)

    def dominant(self) -> ClassifiedFixedPoint:
        """Stable fixed point closest to instability; the most unstable one if none is stable."""
        pool = [fp for fp in self.fixed_points if fp.stable] or self.fixed_points
        return max(pool, key=lambda fp: fp.spectrum.leading.real)


LC_AMPLITUDE = 1e-3
AMBIGUOUS_AMPLITUDE = 1e-4
POINCARE_TOL = 1e-4


def _poincare_returns(t, n_s, n_r) -> np.ndarray:
    """``n_s`` at upward crossings of ``n_r`` through its mid-range, linearly interpolated."""
    level = 0.5 * (n_r.max() + n_r.min())
    below = n_r[:-1] < level
    idx = np.nonzero(below & (n_r[1:] >= level))[0]
    frac = (level - n_r[idx]) / (n_r[idx + 1] - n_r[idx])
    return n_s[idx] + frac * (n_s[idx + 1] - n_s[idx])


def _detect_cycles(params_list, chi, initial: list[list[np.ndarray]], t_total=200.0, dt=1e-2,
                   chunk=512):
    """Integrate every ``(params, initial state)`` pair and summarize the late half.

    Returns, per parameter point, a list of ``(peak-to-peak n_r, settled)`` over
    its initial states, plus the late ``(n_s, n_r)`` series of the first
    settled cycle found at each point.
    """
    jobs = [(k, v) for k, vs in enumerate(initial) for v in vs]
    n_steps = int(round(t_total / dt))
    half = n_steps // 2
    chi_arr = np.array([chi.ss, chi.rr, chi.sr])
    results: list[list[tuple[float, bool]]] = [[] for _ in params_list]
    series: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for start in range(0, len(jobs), chunk):
        block = jobs[start:start + chunk]
        ks = [k for k, _ in block]
        V0 = np.array([v for _, v in block], dtype=float)
        par = np.array([_par_vector(params_list[k]) for k in ks])
        _, late = kernels.mf_batch_integrate(V0, par, chi_arr, dt, n_steps, half)
        t = np.arange(late.shape[0]) * dt
        for j, k in enumerate(ks):
            ns = late[:, j, 0]
            nr = late[:, j, 1]
            amp = float(np.ptp(nr))
            converged = False
            if amp > LC_AMPLITUDE:
                ret = _poincare_returns(t, ns, nr)
                # every return in the late window must agree, which rejects slowly decaying foci
                converged = len(ret) >= 4 and np.ptp(ret) < POINCARE_TOL
                if converged and k not in series:
                    series[k] = (ns.copy(), nr.copy())
            results[k].append((amp, converged))
    return results, series, dt


def _par_vector(p: SystemParams) -> np.ndarray:
    return np.array([p.omega_s, p.omega_r, p.delta_s, p.delta_r, p.gamma_s, p.gamma_r])


def _initial_conditions(fps: list[FixedPoint]) -> list[np.ndarray]:
    ics = [MFState.ground().coords(), MFState.mixture(0.6, 0.0, 0.02).coords(),
           MFState.mixture(0.0, 0.6, 0.02).coords(), MFState.mixture(0.3, 0.3, -0.02).coords()]
    for fp in fps:
        v = fp.state.coords().copy()
        v[2:] += 1e-3
        ics.append(v)
    return ics


def classify_phases(params_list: Sequence[SystemParams], chi: CollectiveCoupling,
                    t_total: float = 200.0, dt: float = 1e-2) -> list[PhaseLabel]:
    """Classify many parameter points; limit-cycle detection runs batched."""
    all_fps = []
    for p in params_list:
        fps = []
        for fp in find_fixed_points(p, chi):
            fps.append(ClassifiedFixedPoint(fp, EigenSpectrum.from_matrix(jacobian(fp.state, p, chi))))
        all_fps.append(fps)
    initial = [_initial_conditions([c.point for c in fps]) for fps in all_fps]
    cycles, series, rec_dt = _detect_cycles(params_list, chi, initial, t_total, dt)
    labels = []
    for fps, runs, k in zip(all_fps, cycles, range(len(params_list))):
        n_stable = sum(c.stable for c in fps)
        amps = [a for a, _ in runs]
        lc = any(conv for _, conv in runs)
        unsettled = any(a > LC_AMPLITUDE and not conv for a, conv in runs)
        ambiguous = any(AMBIGUOUS_AMPLITUDE <= a <= LC_AMPLITUDE for a in amps)
        notes = []
        if n_stable == 0:
            if lc or unsettled:
                label = Phase.PURE_LC
                if not lc:
                    notes.append("oscillation not yet settled; no stable fixed point")
            else:
                label = Phase.INDETERMINATE
                notes.append("no stable fixed point and no oscillation detected")
        elif lc:
            label = Phase.COEXIST_STA_LC
        elif ambiguous:
            label = Phase.INDETERMINATE
            notes.append("late-time amplitude inside the ambiguous band")
        elif n_stable == 1:
            label = Phase.MONOSTABLE_STA
        elif n_stable == 2:
            label = Phase.BISTABLE_STA
        else:
            label = Phase.INDETERMINATE
            notes.append(f"{n_stable} stable fixed points")
        stable = [c for c in fps if c.stable]
        ratio = max(stable, key=lambda c: c.spectrum.leading.real).spectrum.quasicycle_ratio \
            if stable else None
        metrics = None
        if k in series:
            ns, nr = series[k]
            try:
                metrics = limit_cycle_metrics(np.arange(len(ns)) * rec_dt, ns, nr)
            except NotPeriodic:
                pass
        labels.append(PhaseLabel(label, fps, ratio, max(amps), metrics, notes))
    return labels


def classify_phase(params: SystemParams, chi: CollectiveCoupling, **kw) -> PhaseLabel:
    return classify_phases([params], chi, **kw)[0]


def leading_eigenvalue(params: SystemParams, chi: CollectiveCoupling) -> complex:
    """Leading eigenvalue at the fixed point with the largest Re[lambda_0]."""
    best = None
    for fp in find_fixed_points(params, chi):
        lam = EigenSpectrum.from_matrix(jacobian(fp.state, params, chi)).leading
        if best is None or lam.real > best.real:
            best = lam
    return best


def phase_row(omega: float, delta_r: float, label: PhaseLabel) -> dict:
    dom = label.dominant().spectrum.leading
    return {
        "omega": omega,
        "delta_r": delta_r,
        "phase_label": label.label.value,
        "re_lambda0": dom.real,
        "im_lambda0": abs(dom.imag),
        "quasicycle_ratio": "" if label.quasicycle_ratio is None else label.quasicycle_ratio,
        "T": "" if label.metrics is None else label.metrics.period,
        "t_rs": "" if label.metrics is None else label.metrics.t_rs,
    }


# ---------------------------------------------------------------------------
# classical limit (coherences adiabatically eliminated)


def excitation_rate(delta_eff, omega, gamma):
    """Weak-drive excitation rate ``(Omega^2/4) Gamma / (delta^2 + Gamma^2/4)``."""
    return (omega ** 2 / 4.0) * gamma / (delta_eff ** 2 + gamma ** 2 / 4.0)


def _rate_and_slope(delta_eff, omega, gamma):
    den = delta_eff ** 2 + gamma ** 2 / 4.0
    a = (omega ** 2 / 4.0) * gamma
    # derivative with respect to the level shift h (delta_eff = Delta - h)
    return a / den, 2.0 * a * delta_eff / den ** 2


def classical_rhs(n_s, n_r, params: SystemParams, chi: CollectiveCoupling):
    h_s, h_r = mean_field_shifts(n_s, n_r, chi)
    n_g = 1.0 - n_s - n_r
    up_s = excitation_rate(params.delta_s - h_s, params.omega_s, params.gamma_s)
    up_r = excitation_rate(params.delta_r - h_r, params.omega_r, params.gamma_r)
    return up_s * n_g - params.gamma_s * n_s, up_r * n_g - params.gamma_r * n_r


def classical_jacobian(n_s, n_r, params: SystemParams, chi: CollectiveCoupling) -> np.ndarray:
    h_s, h_r = mean_field_shifts(n_s, n_r, chi)
    n_g = 1.0 - n_s - n_r
    up_s, ds = _rate_and_slope(params.delta_s - h_s, params.omega_s, params.gamma_s)
    up_r, dr = _rate_and_slope(params.delta_r - h_r, params.omega_r, params.gamma_r)
    return np.array([
        [n_g * ds * chi.ss - up_s - params.gamma_s, n_g * ds * chi.sr - up_s],
        [n_g * dr * chi.sr - up_r, n_g * dr * chi.rr - up_r - params.gamma_r],
    ])


def classical_fixed_points(params: SystemParams, chi: CollectiveCoupling, spacing: float = 0.05,
                           tol: float = 1e-12) -> list[tuple[float, float]]:
    """Physical roots of the rate equations by damped Newton from a population grid."""
    grid = np.arange(0.0, 1.0 + 1e-9, spacing)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    keep = a + b <= 1.0 + 1e-9
    x = np.stack([a[keep], b[keep]], axis=1)
    for _ in range(50):
        f = np.stack(classical_rhs(x[:, 0], x[:, 1], params, chi), axis=1)
        live = np.linalg.norm(f, axis=1) >= tol
        if not live.any():
            break
        J = np.moveaxis(classical_jacobian(x[live, 0], x[live, 1], params, chi), -1, 0)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        ok = det != 0
        fl = f[live]
        safe = np.where(ok, det, 1.0)
        dx = np.stack([(-J[:, 1, 1] * fl[:, 0] + J[:, 0, 1] * fl[:, 1]) / safe,
                       (J[:, 1, 0] * fl[:, 0] - J[:, 0, 0] * fl[:, 1]) / safe], axis=1)
        dx[~ok] = 0.0
        size = np.linalg.norm(dx, axis=1, keepdims=True)
        x[live] += dx * np.minimum(1.0, 0.2 / np.maximum(size, 1e-300))
    f = np.stack(classical_rhs(x[:, 0], x[:, 1], params, chi), axis=1)
    good = (np.linalg.norm(f, axis=1) < 1e-10) & (x.min(axis=1) >= -1e-9) & (x.sum(axis=1) <= 1 + 1e-9)
    roots: list[tuple[float, float]] = []
    for u, w in x[good]:
        if any(abs(u - r0) < 1e-6 and abs(w - r1) < 1e-6 for r0, r1 in roots):
            continue
        roots.append((float(u), float(w)))
    return sorted(roots)
