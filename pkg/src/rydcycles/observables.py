"""Post-processing of population time series.

Relative fractions, two-time population correlators, their Fourier spectra,
peak-envelope lifetimes and finite-size scaling of spectral peaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import find_peaks

#: Sites with n_s + n_r below this carry no defined fraction.
UNDEFINED_TOTAL = 1e-9
COLLAPSE_TOLERANCE = 0.2


class NotApplicable(ValueError):
    """The requested analysis has no meaning for the given input."""


class SeriesTooShort(ValueError):
    def __init__(self, required: float, available: float):
        super().__init__(f"series spans {available:g} but at least {required:g} is required "
                         "(t_transient + 10 * t_max_lag)")
        self.required = required
        self.available = available


# ---------------------------------------------------------------------------
# relative fraction


class RelativeFraction(NamedTuple):
    sites: np.ndarray  # NaN where undefined
    average: np.ndarray | float  # mean over defined sites (last axis)
    defined: np.ndarray | bool  # False where every site is undefined


def relative_fraction(n_s, n_r) -> RelativeFraction:
    """``f = (n_r - n_s) / (n_r + n_s)`` per site, plus its average over the last axis."""
    n_s = np.asarray(n_s, dtype=float)
    n_r = np.asarray(n_r, dtype=float)
    if np.any(n_s < 0) or np.any(n_r < 0):
        raise ValueError("populations must be non-negative")
    total = n_s + n_r
    ok = total >= UNDEFINED_TOTAL
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(ok, (n_r - n_s) / np.where(ok, total, 1.0), np.nan)
    if f.ndim == 0:
        return RelativeFraction(f, float(f), bool(ok))
    defined = ok.any(axis=-1)
    with np.errstate(invalid="ignore"):
        avg = np.where(defined, np.nansum(f, axis=-1) / np.maximum(ok.sum(axis=-1), 1), np.nan)
    return RelativeFraction(f, avg, defined)


def relative_fraction_of_means(n_s, n_r) -> np.ndarray:
    """Elementwise fraction of already averaged populations; NaN where undefined."""
    return relative_fraction(n_s, n_r).sites


def peak_to_peak(x, coverage: float = 0.95) -> float:
    """Oscillation range of a noisy series: the width of its central ``coverage`` quantile band.

    ``coverage = 1`` gives the plain max - min, which single-trajectory noise
    spikes dominate.
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    tail = 50.0 * (1.0 - coverage)
    lo, hi = np.percentile(x, [tail, 100.0 - tail])
    return float(hi - lo)


# ---------------------------------------------------------------------------
# two-time correlations


@dataclass(frozen=True)
class CorrelationSeries:
    lags: np.ndarray
    values: np.ndarray
    a: str = "r"
    b: str = "r"
    n_traj: int = 1
    stderr: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.lags[1] - self.lags[0])

    @property
    def t_max(self) -> float:
        return float(self.lags[-1])

    def positive(self) -> "CorrelationSeries":
        """Restriction to lags >= 0."""
        keep = self.lags >= -1e-12
        se = None if self.stderr is None else self.stderr[keep]
        return CorrelationSeries(self.lags[keep], self.values[keep], self.a, self.b, self.n_traj, se)


def _as_trajectories(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("series must be 1D or (n_traj, n_t)")
    return x


def _fft_correlation(a: np.ndarray, b: np.ndarray, n_lag: int) -> np.ndarray:
    """``sum_t a[t] b[t+k]`` for k = 0..n_lag, row-wise."""
    m = a.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(2 * m)))
    fa = np.fft.rfft(a, nfft)
    fb = np.fft.rfft(b, nfft)
    return np.fft.irfft(np.conj(fa) * fb, nfft)[..., : n_lag + 1]


def direct_correlation(a, b, n_lag: int) -> np.ndarray:
    """Sliding-window mean ``<da(t) db(t+k)>`` for k = 0..n_lag, by explicit loops."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a - a.mean()
    b = b - b.mean()
    m = len(a)
    out = np.empty(n_lag + 1)
    for k in range(n_lag + 1):
        s = 0.0
        for t in range(m - k):
            s += a[t] * b[t + k]
        out[k] = s / (m - k)
    return out


def two_time_correlation(series_a, series_b, dt: float, t_transient: float, t_max_lag: float,
                         labels: tuple[str, str] = ("r", "r"), symmetric: bool = False,
                         enforce_length: bool = True) -> CorrelationSeries:
    """``G_ab(t) = <dn_a(t') dn_b(t' + t)>_t'`` averaged over trajectories.

    Inputs are 1D or ``(n_traj, n_t)`` on a uniform grid with spacing ``dt``
    starting at time 0. Each trajectory is correlated on its own (after its
    own time mean is removed) and the results are averaged. With
    ``symmetric`` the lag grid runs over ``[-t_max_lag, t_max_lag]``, the
    negative side being ``G_ba``.
    """
    A = _as_trajectories(series_a)
    B = _as_trajectories(series_b)
    if A.shape != B.shape:
        raise ValueError(f"series shapes differ: {A.shape} vs {B.shape}")
    duration = (A.shape[1] - 1) * dt
    required = t_transient + 10.0 * t_max_lag
    if enforce_length and duration < required - 1e-9 * max(required, 1.0):
        raise SeriesTooShort(required, duration)
    start = int(round(t_transient / dt))
    n_lag = int(round(t_max_lag / dt))
    A = A[:, start:]
    B = B[:, start:]
    m = A.shape[1]
    if n_lag >= m:
        raise SeriesTooShort(required, duration)
    A = A - A.mean(axis=1, keepdims=True)
    B = B - B.mean(axis=1, keepdims=True)
    norm = m - np.arange(n_lag + 1)
    fwd = _fft_correlation(A, B, n_lag) / norm
    if symmetric:
        bwd = _fft_correlation(B, A, n_lag) / norm
        per_traj = np.concatenate([bwd[:, :0:-1], fwd], axis=1)
        lags = np.arange(-n_lag, n_lag + 1) * dt
    else:
        per_traj = fwd
        lags = np.arange(n_lag + 1) * dt
    n_traj = per_traj.shape[0]
    stderr = per_traj.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else None
    return CorrelationSeries(lags, per_traj.mean(axis=0), labels[0], labels[1], n_traj, stderr)


def first_peak_lag(corr: CorrelationSeries) -> float:
    """Lag of the first positive local maximum of ``G`` at ``t >= 0`` (``0`` counts if it is one)."""
    c = corr.positive()
    g = c.values
    if len(g) > 1 and g[0] > g[1] and g[0] > 0:
        return 0.0
    peaks, _ = find_peaks(g)
    peaks = [p for p in peaks if g[p] > 0]
    if not peaks:
        raise NotApplicable("correlation has no positive local maximum")
    p = peaks[0]
    return float(c.lags[p] + c.dt * _parabolic_offset(g[p - 1], g[p], g[p + 1]))


def _parabolic_offset(ym, y0, yp) -> float:
    den = ym - 2.0 * y0 + yp
    return 0.0 if den == 0 else 0.5 * (ym - yp) / den


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class Spectrum:
    """``F(omega) = int_0^t_max w(t) G(t) e^{i omega t} dt`` on the DFT grid of the lag series."""

    omega: np.ndarray
    values: np.ndarray  # complex
    n_atoms: int | None = None
    duration: float | None = None
    taper: str = "none"
    lag_energy: float = 0.0  # sum_j |w_j G_j|^2

    @property
    def resolution(self) -> float:
        return float(self.omega[1] - self.omega[0])

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def half(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-negative frequencies up to Nyquist with magnitudes."""
        m = len(self.omega)
        keep = np.arange(m // 2 + 1)
        return self.omega[keep], self.magnitude[keep]

    def peak(self, omega_min: float = 0.5, omega_max: float | None = None) -> tuple[float, float]:
        """Dominant peak ``(omega, |F|)`` in the band, refined by parabolic interpolation."""
        w, mag = self.half()
        band = (w >= omega_min) & (w <= (omega_max if omega_max is not None else w[-1]))
        idx = np.flatnonzero(band)
        if idx.size < 3:
            raise NotApplicable("frequency band holds fewer than three grid points")
        k = idx[np.argmax(mag[idx])]
        if k == idx[0] or k == idx[-1] or k == 0 or k == len(w) - 1:
            raise NotApplicable("spectral maximum sits on the band edge; no interior peak")
        off = _parabolic_offset(mag[k - 1], mag[k], mag[k + 1])
        height = mag[k] - 0.25 * (mag[k - 1] - mag[k + 1]) * off
        return float(w[k] + off * self.resolution), float(height)

    def harmonics(self, fundamental: float, max_order: int = 6, tolerance: float = 0.05,
                  min_snr: float = 10.0) -> list[tuple[int, float]]:
        """Peaks of ``Re F`` within ``tolerance`` of ``k * fundamental`` for ``k >= 2``.

        ``Re F`` is half the two-sided transform of the even correlation. Unlike
        ``|F|`` it has no ``G(0) / omega`` tail from the edge at zero lag, so
        weak overtones stay visible. A peak counts when its prominence exceeds
        ``min_snr`` times the median ``|Re F|`` above the fundamental band.
        """
        m = len(self.omega) // 2 + 1
        w = self.omega[:m]
        re = self.values.real[:m]
        floor = np.median(np.abs(re[w > 0.5 * fundamental]))
        peaks, _ = find_peaks(re, prominence=min_snr * floor)
        found = []
        for k in range(2, max_order + 1):
            target = k * fundamental
            if target * (1 + tolerance) > w[-1]:
                break
            near = [p for p in peaks if abs(w[p] - target) <= tolerance * target]
            if near:
                p = max(near, key=lambda q: re[q])
                off = _parabolic_offset(re[p - 1], re[p], re[p + 1]) if 0 < p < m - 1 else 0.0
                found.append((k, float(w[p] + off * self.resolution)))
        return found


def cosine_taper(n: int) -> np.ndarray:
    """Half-Hann lag window: 1 at zero lag falling to 0 at the last lag."""
    return 0.5 * (1.0 + np.cos(np.pi * np.arange(n) / max(n - 1, 1)))


def fourier_spectrum(corr: CorrelationSeries, taper: str = "none", n_atoms: int | None = None,
                     duration: float | None = None) -> Spectrum:
    """Trapezoid ``int_0^t_max w(t) G(t) e^{i omega t} dt`` on ``omega_k = 2 pi k / (M dt)``."""
    c = corr.positive()
    g = c.values
    m = len(g)
    if taper == "none":
        w = np.ones(m)
    elif taper in ("cosine", "hann"):
        w = cosine_taper(m)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    w = w.copy()
    # trapezoid end weights; a full-weight G(0) would add a flat dt G(0) / 2 floor
    w[0] *= 0.5
    w[-1] *= 0.5
    dt = c.dt
    gw = g * w
    values = dt * m * np.fft.ifft(gw)
    omega = 2.0 * np.pi * np.arange(m) / (m * dt)
    return Spectrum(omega, values, n_atoms, duration, taper, float(np.sum(np.abs(gw) ** 2)))


# ---------------------------------------------------------------------------
# envelope fit


@dataclass(frozen=True)
class EnvelopeFit:
    amplitude: float
    tau: float
    residual: float
    n_peaks: int
    decaying: bool = True


def fit_envelope(corr: CorrelationSeries, min_relative: float = 0.05) -> EnvelopeFit:
    """Fit ``A exp(-t / tau)`` to the local maxima of ``|G|`` by log-linear least squares.

    Peaks smaller than ``min_relative * |G(0)|`` are treated as noise floor and
    left out. A non-decaying envelope yields ``tau = inf``.
    """
    c = corr.positive()
    mag = np.abs(c.values)
    peaks, _ = find_peaks(mag)
    floor = min_relative * mag[0]
    peaks = [p for p in peaks if mag[p] >= floor]
    if mag[0] >= mag[1]:
        peaks = [0] + peaks
    if len(peaks) < 4:
        raise NotApplicable(f"need at least 4 envelope peaks, found {len(peaks)}")
    t = c.lags[peaks]
    y = np.log(mag[peaks])
    (slope, intercept), res, *_ = np.linalg.lstsq(np.column_stack([t, np.ones_like(t)]), y, rcond=None)
    residual = float(res[0]) if res.size else 0.0
    if slope >= 0:
        return EnvelopeFit(float(np.exp(intercept)), np.inf, residual, len(peaks), decaying=False)
    return EnvelopeFit(float(np.exp(intercept)), float(-1.0 / slope), residual, len(peaks))


# ---------------------------------------------------------------------------
# finite-size scaling


@dataclass(frozen=True)
class CollapseReport:
    sizes: tuple[int, ...]
    peak_omega: tuple[float, ...]
    peak_height: tuple[float, ...]
    scaled: tuple[float, ...]  # N * F_peak
    deviation: float  # max / min - 1 of the scaled heights
    tolerance: float = COLLAPSE_TOLERANCE
    notes: list[str] = field(default_factory=list)

    @property
    def collapsed(self) -> bool:
        return self.deviation < self.tolerance

    @property
    def verdict(self) -> str:
        return "collapse" if self.collapsed else "no collapse"

    def as_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "peak_omega": list(self.peak_omega),
            "peak_height": list(self.peak_height),
            "scaled_peak": list(self.scaled),
            "deviation": self.deviation,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def scaling_collapse(spectra: Sequence[tuple[int, Spectrum]], tolerance: float = COLLAPSE_TOLERANCE,
                     omega_min: float = 0.5, omega_max: float | None = None) -> CollapseReport:
    """Compare ``N * F_peak`` across sizes; ``1/N`` peak heights collapse."""
    if len(spectra) < 3:
        raise ValueError("scaling collapse needs at least three sizes")
    sizes, omegas, heights = [], [], []
    for n, spec in sorted(spectra, key=lambda item: item[0]):
        w, h = spec.peak(omega_min, omega_max)  # NotApplicable propagates
        sizes.append(int(n))
        omegas.append(w)
        heights.append(h)
    scaled = [n * h for n, h in zip(sizes, heights)]
    deviation = max(scaled) / min(scaled) - 1.0
    return CollapseReport(tuple(sizes), tuple(omegas), tuple(heights), tuple(scaled), float(deviation),
                          tolerance)
