"""Harmonic spectra, Gabor time-frequency maps and plateau extraction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d, maximum_filter, median_filter

from .errors import InvalidParameterError

GABOR_CARRIER = 10.0


@dataclass(frozen=True, eq=False)
class Spectrum:
    order: np.ndarray
    intensity: np.ndarray
    omega: float
    window: str = "envelope"

    @property
    def energy(self):
        return self.order * self.omega

    @property
    def log_intensity(self):
        tiny = np.finfo(float).tiny
        return np.log10(np.maximum(self.intensity, tiny))

    def scaled(self, factor):
        return Spectrum(self.order, self.intensity * factor, self.omega, self.window)


@dataclass(frozen=True, eq=False)
class TimeFreqMap:
    t: np.ndarray
    energy: np.ndarray
    # shape (n_energy, n_t)
    magnitude: np.ndarray

    def ridge(self, t_index=None):
        """Energy of maximal magnitude at each time sample."""
        idx = np.argmax(self.magnitude, axis=0)
        return self.energy[idx]


@dataclass(frozen=True)
class Plateau:
    onset: float
    cutoff: float
    median_log: float
    cutoff_log: float


@dataclass(frozen=True)
class PlateauReport:
    plateaus: tuple
    expected: int | None = None
    warning: str | None = None
    smoothed_order: np.ndarray | None = field(default=None, repr=False, compare=False)
    smoothed_log: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def complete(self):
        return self.warning is None

    def to_dict(self):
        return {
            "plateaus": [
                {
                    "onset_order": p.onset,
                    "cutoff_order": p.cutoff,
                    "median_log10_intensity": p.median_log,
                    "cutoff_log10_intensity": p.cutoff_log,
                }
                for p in self.plateaus
            ],
            "expected": self.expected,
            "warning": self.warning,
        }


def _uniform_dt(t):
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise InvalidParameterError("need at least two time samples")
    steps = np.diff(t)
    dt = steps.mean()
    if np.max(np.abs(steps - dt)) > 1e-9 * max(abs(dt), 1.0) * t.size:
        raise InvalidParameterError("time grid is not uniform")
    return float(dt)


def fourier_transform(t, j):
    """Unitary transform F(W) = dt / sqrt(2 pi) sum_n j_n exp(i W t_n).

    Returns (angular frequencies, F) on the full two-sided FFT grid, so that
    sum |F|^2 dW equals sum |j|^2 dt.
    """
    dt = _uniform_dt(t)
    n = len(j)
    # exp(+i W t) with t = t0 + n dt: inverse FFT up to scale and a phase
    F = np.fft.ifft(j) * n * dt / np.sqrt(2 * np.pi)
    W = 2 * np.pi * np.fft.fftfreq(n, dt)
    F = F * np.exp(1j * W * t[0])
    return W, F


def spectral_window(t, pulse, kind="envelope"):
    """Taper applied to j(t) before the transform.

    ``envelope`` multiplies by the pulse's cos^4 envelope; it suppresses the
    leakage from the free oscillation that persists after the pulse, which
    otherwise swamps weak plateaus.  ``none`` leaves j unchanged.
    """
    t = np.asarray(t)
    if kind == "none":
        return np.ones_like(t)
    if kind == "envelope":
        u = pulse.omega * t / (2 * pulse.n_cycles)
        return np.where(np.abs(t) <= pulse.t_max, np.cos(u) ** 4, 0.0)
    if kind == "hann":
        T = t[-1] - t[0]
        return np.sin(np.pi * (t - t[0]) / T) ** 2
    raise InvalidParameterError(f"unknown window {kind!r}")


def harmonic_spectrum(current, pulse, window="envelope"):
    """|F[j w](W)|^2 on W >= 0, with W expressed in harmonic orders."""
    t = current.t
    j = current.j * spectral_window(t, pulse, window)
    W, F = fourier_transform(t, j)
    keep = W >= 0
    order = W[keep] / pulse.omega
    intensity = np.abs(F[keep]) ** 2
    return Spectrum(order, intensity, pulse.omega, window)


def gabor_wavelet(t):
    """Mother wavelet pi^(-1/4) exp(-t^2/2 + 10 i t)."""
    return np.pi ** -0.25 * np.exp(-0.5 * t**2 + 1j * GABOR_CARRIER * t)


def gabor_transform(t, j, energies, t_out=None):
    """Continuous wavelet transform with the Gabor wavelet.

    Scale s maps to energy via W = 10 / s.  The wavelet at scale s is
    s^-1 g((t' - t)/s), so a pure tone gives the same ridge height at every
    energy (about 0.94 for unit amplitude).  Evaluated by FFT convolution,
    one energy row at a time.  ``t_out`` optionally subsamples the output
    times (indices into ``t``).
    """
    t = np.asarray(t, dtype=float)
    j = np.asarray(j)
    energies = np.asarray(energies, dtype=float)
    if np.any(energies <= 0):
        raise InvalidParameterError("wavelet energies must be positive")
    dt = _uniform_dt(t)
    n = t.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    J = np.fft.fft(j, nfft)
    W = 2 * np.pi * np.fft.fftfreq(nfft, dt)
    idx = np.arange(n) if t_out is None else np.asarray(t_out)
    out = np.empty((energies.size, idx.size))
    for r, energy in enumerate(energies):
        s = GABOR_CARRIER / energy
        # correlation with s^-1 g(u/s); the Fourier transform of g is real,
        # sqrt(2) pi^(1/4) exp(-(W - 10)^2 / 2), so the kernel is that at s W
        kernel = np.sqrt(2.0) * np.pi**0.25 * np.exp(-0.5 * (s * W - GABOR_CARRIER) ** 2)
        row = np.fft.ifft(J * kernel)[:n]
        out[r] = np.abs(row[idx])
    return TimeFreqMap(t[idx], energies, out)


def _moving_median(values, width):
    width = max(1, int(width))
    width += 1 - width % 2
    return median_filter(values, size=width, mode="nearest")


def _moving_max(values, width):
    width = max(1, int(width))
    width += 1 - width % 2
    return maximum_filter(values, size=width, mode="nearest")


def _hinge(x, y, max_candidates=400):
    """Joint of the best continuous two-segment linear fit to y(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 6:
        return float(x[0])
    inner = np.arange(2, x.size - 2)
    stride = max(1, inner.size // max_candidates)
    b = x[inner[::stride]]
    # design [1, x - b, max(x - b, 0)] for every candidate joint at once
    A = np.stack(
        [np.ones((b.size, x.size)), x - b[:, None], np.maximum(x - b[:, None], 0.0)],
        axis=2,
    )
    coef = np.linalg.solve(
        np.einsum("bni,bnj->bij", A, A), np.einsum("bni,n->bi", A, y)[..., None]
    )[..., 0]
    err = np.sum((np.einsum("bni,bi->bn", A, coef) - y) ** 2, axis=1)
    return float(b[np.argmin(err)])


def _local_slope(values, half_width, step):
    """Least-squares slope over a centred window of 2 half_width + 1 samples."""
    offsets = np.arange(-half_width, half_width + 1, dtype=float)
    kernel = offsets / (np.sum(offsets**2) * step)
    return correlate1d(values, kernel, mode="nearest")


# Plateau extraction thresholds, in decades of log10 intensity and orders
SMOOTH_ORDERS = 2.0
PLATEAU_BAND = 1.5
DROP_DECADES = 2.0
DROP_PERSIST = 3.0
MIN_WIDTH = 3.0
FLOOR_MARGIN = 5.0
# decades per order separating a plateau from a decline
FLAT_SLOPE = 0.1
PLATEAU_SLOPE = 0.2


def extract_plateaus(spectrum, expected_count=None, min_order=1.5, max_order=None,
                     smooth=SMOOTH_ORDERS, band=PLATEAU_BAND, drop=DROP_DECADES,
                     persist=DROP_PERSIST, min_width=MIN_WIDTH, floor_margin=FLOOR_MARGIN,
                     flat_slope=FLAT_SLOPE, plateau_slope=PLATEAU_SLOPE):
    """Locate plateaus in a harmonic spectrum.

    The log spectrum is smoothed with a moving median (S) and a moving
    maximum (X, the envelope of the harmonic peaks), both ``smooth`` orders
    wide.  Scanning upward, a run lasts until S falls more than ``drop``
    decades below the run's median and stays there for ``persist`` orders.

    The onset of a plateau is the first order, after the previous drop,
    where the local slope of X is shallower than ``flat_slope`` decades per
    order: the point where the fast fall of the perturbative harmonics (or
    of the previous plateau) levels off.  The cutoff is the joint of a
    two-line fit to X across the end of the run, where the flat top meets
    the final decline.

    Runs narrower than ``min_width`` orders, steeper on average than
    ``plateau_slope``, or within ``floor_margin`` decades of the numerical
    noise floor are discarded.  Finding fewer plateaus than
    ``expected_count`` sets ``warning`` instead of raising.
    """
    order = spectrum.order
    d_order = order[1] - order[0]
    hi = order[-1] if max_order is None else max_order
    sel = (order >= min_order) & (order <= hi)
    o = order[sel]
    L = spectrum.log_intensity
    w = int(round(smooth / d_order))
    S = _moving_median(L, w)[sel]
    X = _moving_max(L, w)[sel]
    dX = _local_slope(X, w, d_order)
    dS = _local_slope(S, int(round(persist / d_order / 2)), d_order)
    floor = float(np.percentile(S, 5))
    n = o.size
    p = max(1, int(round(persist / d_order)))

    runs = []
    i = 0
    while i < n:
        values = [S[i]]
        level = S[i]
        k = i
        end_drop = None
        while k + 1 < n:
            ahead = S[k + 1:k + 1 + p]
            if ahead.size == p and np.all(ahead < level - drop):
                end_drop = k + 1
                break
            k += 1
            values.append(S[k])
            level = float(np.median(values))
        if end_drop is None:
            runs.append((i, k, level, None, n))
            break
        # skip the descent: restart once the fall has eased off
        j = end_drop
        while j < n and dS[j] < -plateau_slope:
            j += 1
        runs.append((i, k, level, end_drop, j))
        i = max(j, k + 1)

    plateaus = []
    lead_from = 0
    for start, stop, level, drop_at, resume in runs:
        next_lead = drop_at if drop_at is not None else stop
        if level < floor + floor_margin or o[stop] - o[start] < min_width:
            lead_from = next_lead
            continue
        span = slice(start, stop + 1)
        slope = np.polyfit(o[span], S[span], 1)[0]
        if slope < -plateau_slope:
            lead_from = next_lead
            continue
        below = np.nonzero(X[stop:] < level - 2 * drop)[0]
        tail_end = n if below.size == 0 else stop + below[0] + w + 1
        tail_end = min(tail_end, resume + 1, n)
        mid = (start + stop) // 2
        # look for levelling off only past the steepest point of the lead-in
        steep = lead_from + int(np.argmin(dX[lead_from:mid + 1]))
        flat = np.nonzero(dX[steep:mid + 1] >= -flat_slope)[0]
        onset = float(o[steep + flat[0]] if flat.size else o[start])
        cutoff = _hinge(o[mid:tail_end], X[mid:tail_end])
        lead_from = next_lead
        if cutoff - onset < min_width:
            continue
        body = (o >= onset) & (o <= cutoff)
        # strength of the cutoff harmonic: the highest peak within one order
        near = np.abs(o - cutoff) <= 1.0
        plateaus.append(
            Plateau(onset, cutoff, float(np.median(S[body])), float(L[sel][near].max()))
        )
    warning = None
    if expected_count is not None and len(plateaus) < expected_count:
        warning = f"found {len(plateaus)} plateaus, expected {expected_count}"
        warnings.warn(warning, stacklevel=2)
    return PlateauReport(tuple(plateaus), expected_count, warning, o, S)
