"""Closed-form and semi-analytic predictors for plateaus, strengths and SFA.

Plateau bounds come from the adiabatic energies at the peak vector
potential.  Strengths follow Landau-Zener tunneling at avoided crossings
and, for the second plateau of a paired four-level system, an exponential
barrier factor between the inner levels.  The strong-field-approximation
part covers the two-band current, its ionization saddle points and the
emission-time relation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from .bandstructure import quadratic_gap_fit, smooth_gauge_couplings, solve_bloch
from .dynamics import CurrentSeries, adiabatic_energies
from .errors import ConvergenceError, InvalidParameterError

DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 140.0


def two_level_cutoff(omega0, rabi):
    """(lowest, cutoff) plateau energies: omega0 and 2 sqrt(rabi^2 + omega0^2/4)."""
    if omega0 < 0 or rabi < 0:
        raise InvalidParameterError("omega0 and rabi must be >= 0")
    return float(omega0), float(2.0 * math.hypot(rabi, 0.5 * omega0))


def lz_exponent(omega0, omega, rabi):
    """Landau-Zener exponent -pi omega0^2 / (4 omega rabi)."""
    if not omega > 0 or not rabi > 0:
        raise InvalidParameterError("omega and rabi must be > 0")
    return -math.pi * omega0**2 / (4.0 * omega * rabi)


def lz_rate(omega0, omega, rabi, alpha=DEFAULT_ALPHA):
    """alpha exp(-pi omega0^2 / (4 omega rabi)), a relative plateau strength."""
    return alpha * math.exp(lz_exponent(omega0, omega, rabi))


def crossing_parameter(omega0, rabi):
    """R = omega0 / (2 rabi); tunneling and adiabatic following separate for R << 1."""
    if not rabi > 0:
        raise InvalidParameterError("rabi must be > 0")
    return omega0 / (2.0 * rabi)


@dataclass(frozen=True)
class PlateauPrediction:
    A0: float
    omega: float | None
    onsets: tuple
    cutoffs: tuple
    # (lower, upper) adiabatic level pair responsible for each bound
    onset_sources: tuple
    cutoff_sources: tuple

    @property
    def collapsed(self):
        """Per plateau: True where level repulsion pushed the cutoff below the onset."""
        return tuple(lo > hi for lo, hi in zip(self.onsets, self.cutoffs))

    @property
    def n_plateaus(self):
        return len(self.onsets)

    def orders(self):
        if self.omega is None:
            raise InvalidParameterError("no carrier frequency attached")
        return (
            tuple(e / self.omega for e in self.onsets),
            tuple(e / self.omega for e in self.cutoffs),
        )

    def to_dict(self):
        out = {
            "A0": self.A0,
            "omega": self.omega,
            "plateaus": [],
        }
        for i in range(self.n_plateaus):
            item = {
                "onset_au": self.onsets[i],
                "cutoff_au": self.cutoffs[i],
                "onset_levels": list(self.onset_sources[i]),
                "cutoff_levels": list(self.cutoff_sources[i]),
                "collapsed": self.collapsed[i],
            }
            if self.omega is not None:
                item["onset_order"] = self.onsets[i] / self.omega
                item["cutoff_order"] = self.cutoffs[i] / self.omega
            out["plateaus"].append(item)
        return out


def multilevel_plateau_bounds(system, A0, omega=None):
    """Plateau bounds from one diagonalization of diag(w) + A0 p.

    First plateau: from w2 - w1 up to E~2 - E~1.  Second plateau: from
    E~3 - E~1 up to E~4 - E~1.  Level numbers are 1-based.  Systems with
    fewer than four levels give the first plateau only, with a warning.
    Strong repulsion from level 3 can push E~2 - E~1 below w2 - w1; such a
    plateau is reported as collapsed rather than rejected.
    """
    E = adiabatic_energies(system, A0)[0]
    w = system.energies
    onsets = [float(w[1] - w[0])]
    cutoffs = [float(E[1] - E[0])]
    onset_src = [(1, 2)]
    cutoff_src = [(1, 2)]
    if system.n_levels < 4:
        warnings.warn(
            f"{system.n_levels}-level system: only the two-level plateau is predicted",
            stacklevel=2,
        )
    else:
        onsets.append(float(E[2] - E[0]))
        cutoffs.append(float(E[3] - E[0]))
        onset_src.append((1, 3))
        cutoff_src.append((1, 4))
    return PlateauPrediction(
        float(A0), omega, tuple(onsets), tuple(cutoffs), tuple(onset_src), tuple(cutoff_src)
    )


def _paired_couplings(system):
    if system.n_levels < 4:
        raise InvalidParameterError("paired-coupling estimates need at least four levels")
    mu12 = abs(float(system.couplings[0, 1]))
    mu34 = abs(float(system.couplings[2, 3]))
    return mu12, mu34


def inner_gap(system, A0):
    """E~3 - E~2 at vector potential A0 (exact eigenvalues)."""
    E = adiabatic_energies(system, A0)[0]
    return float(E[2] - E[1])


def inner_gap_linear(system, A0):
    """(w3 - w2) - (mu12 + mu34) A0, the linearized E~3 - E~2."""
    mu12, mu34 = _paired_couplings(system)
    w = system.energies
    return float(w[2] - w[1] - (mu12 + mu34) * A0)


@dataclass(frozen=True)
class MergeThreshold:
    # vector potential and field where the linearized inner gap vanishes
    A_linear: float
    E0_linear: float
    # vector potential and field of the exact avoided-crossing minimum
    A_exact: float
    E0_exact: float
    min_gap: float

    def to_dict(self):
        return dict(self.__dict__)


def merge_threshold(system, omega, A_max=None):
    """Field at which the inner adiabatic levels 2 and 3 meet.

    The ordered eigenvalues never cross, so the exact value is the location
    of the avoided-crossing minimum of E~3 - E~2; the linearized gap has a
    true zero.  Both are returned.
    """
    mu12, mu34 = _paired_couplings(system)
    w = system.energies
    if mu12 + mu34 == 0:
        raise InvalidParameterError("mu12 + mu34 = 0: inner levels are never pushed together")
    A_lin = float((w[2] - w[1]) / (mu12 + mu34))
    hi = 2.0 * A_lin if A_max is None else A_max
    res = minimize_scalar(
        lambda a: inner_gap(system, a), bounds=(0.0, hi), method="bounded",
        options={"xatol": 1e-10},
    )
    return MergeThreshold(A_lin, A_lin * omega, float(res.x), float(res.x) * omega, float(res.fun))


@dataclass(frozen=True)
class StrengthEstimate:
    log_value: float
    log_p12: float
    log_p23: float
    log_p34: float
    barrier: float
    barrier_exact: float
    barrier_linear: float
    reliable: bool

    @property
    def value(self):
        return math.exp(self.log_value)

    def to_dict(self):
        out = dict(self.__dict__)
        out["value"] = self.value
        return out


def second_plateau_strength(system, pulse, beta=DEFAULT_BETA, barrier="linear"):
    """P12 P23 P34 for a paired four-level system.

    P12 and P34 have the Landau-Zener form with rabi = mu A0; P23 =
    exp(-beta * barrier), where the barrier is the inner gap E~3 - E~2 at the
    peak, either linearized (default) or exact.  Logs are returned so deep
    suppression does not underflow.  Past the merge threshold the estimate is
    flagged unreliable.
    """
    mu12, mu34 = _paired_couplings(system)
    if mu12 == 0 or mu34 == 0:
        raise InvalidParameterError("mu12 and mu34 must be nonzero for Landau-Zener factors")
    if barrier not in ("linear", "exact"):
        raise InvalidParameterError(f"unknown barrier {barrier!r}")
    A0 = pulse.A0
    w = system.energies
    log_p12 = lz_exponent(w[1] - w[0], pulse.omega, mu12 * A0)
    log_p34 = lz_exponent(w[3] - w[2], pulse.omega, mu34 * A0)
    b_lin = inner_gap_linear(system, A0)
    b_exact = inner_gap(system, A0)
    b = b_lin if barrier == "linear" else b_exact
    log_p23 = -beta * b
    return StrengthEstimate(
        log_p12 + log_p23 + log_p34, log_p12, log_p23, log_p34, b, b_exact, b_lin, b_lin > 0
    )


def fit_alpha(omega0, omega, rabis, intensities):
    """Least-squares alpha for intensities ~ alpha exp(-pi omega0^2 / (4 omega rabi)).

    Fits in log space with the exponent fixed.
    """
    rabis = np.asarray(rabis, dtype=float)
    intensities = np.asarray(intensities, dtype=float)
    if rabis.size < 1 or rabis.shape != intensities.shape:
        raise InvalidParameterError("need matching, non-empty rabi and intensity arrays")
    expo = np.array([lz_exponent(omega0, omega, r) for r in rabis])
    return float(np.exp(np.mean(np.log(intensities) - expo)))


def fit_beta(system, pulses, intensities, barrier="linear"):
    """Least-squares (beta, log prefactor) for second-plateau intensities.

    Fits log I - log P12 - log P34 = c - beta * barrier.
    """
    pulses = list(pulses)
    intensities = np.asarray(intensities, dtype=float)
    if len(pulses) < 2 or len(pulses) != intensities.size:
        raise InvalidParameterError("need at least two pulses with matching intensities")
    est = [second_plateau_strength(system, p, 0.0, barrier) for p in pulses]
    y = np.log(intensities) - np.array([e.log_p12 + e.log_p34 for e in est])
    x = np.array([e.barrier for e in est])
    slope, c = np.polyfit(x, y, 1)
    return float(-slope), float(c)


@dataclass(frozen=True, eq=False)
class CutoffCaps:
    A0: float
    conduction: tuple
    # eps_c(A0) - eps_v(A0) per conduction band
    instantaneous: np.ndarray
    # largest gap reachable with |k| <= A0, bounded by the zone maximum
    cap: np.ndarray


def multiband_cutoff_caps(bands, A0, valence=0):
    """Per-band cutoff estimates for a drive of peak vector potential A0.

    Crystal momentum is folded into the zone, so once A0 passes the point of
    maximum gap the cutoff stops growing: ``cap`` is the largest gap sampled
    over |k| <= A0, which equals the zone maximum for A0 at the zone edge.
    """
    if bands.n_bands < 2:
        raise InvalidParameterError("need at least two bands")
    edge = bands.potential.zone_edge
    conduction = tuple(range(valence + 1, bands.n_bands))
    eps = bands.at(bands.fold(A0))[0]
    inst = np.array([eps[c] - eps[valence] for c in conduction])
    reach = min(abs(A0), edge)
    k = bands.k[np.abs(bands.k) <= reach]
    cap = []
    for i, c in enumerate(conduction):
        gap = bands.energies[np.abs(bands.k) <= reach, c] - bands.energies[np.abs(bands.k) <= reach, valence]
        end = bands.at(reach)[0]
        top = max(gap.max() if k.size else -np.inf, end[c] - end[valence])
        cap.append(max(top, inst[i]))
    return CutoffCaps(float(A0), conduction, inst, np.array(cap))


def _two_band_profile(bands, valence, conduction, n_k=2049):
    k = np.linspace(-bands.potential.zone_edge, bands.potential.zone_edge, n_k)
    eps, p = smooth_gauge_couplings(bands.potential, k, conduction + 1, bands.M)
    gap = eps[:, conduction] - eps[:, valence]
    pcv = p[:, conduction, valence]
    return k, CubicSpline(k, gap), CubicSpline(k, pcv)


def sfa_current(bands, pulse, valence=0, conduction=1, k0=0.0, samples_per_cycle=4096,
                x_profile=None):
    """Two-band strong-field-approximation current on a uniform grid.

    j(t) = i X_vc(k(t)) int_{t0}^t exp(-i S(t, t')) F(t') X_cv(k(t')) dt' + c.c.
    with k(t) = k0 + A(t), S the accumulated gap phase and F = -dA/dt.  The
    valence amplitude is taken as 1 (no depletion).  X_cv = i p_cv / gap is
    built from smooth-gauge band couplings unless ``x_profile`` (a callable
    of k) is given.  The inner integral is a cumulative trapezoid rule.
    """
    n = pulse.n_cycles * samples_per_cycle
    t = np.linspace(-pulse.t_max, pulse.t_max, n + 1)
    k = bands.fold(k0 + pulse.A(t))
    _, gap_fn, pcv_fn = _two_band_profile(bands, valence, conduction)
    gap = gap_fn(k)
    if x_profile is None:
        X_cv = 1j * pcv_fn(k) / gap
    else:
        X_cv = np.asarray(x_profile(k), dtype=complex)
    X_vc = np.conj(X_cv)
    phase = cumulative_trapezoid(gap, t, initial=0.0)
    inner = cumulative_trapezoid(np.exp(1j * phase) * pulse.E(t) * X_cv, t, initial=0.0)
    amp = 1j * X_vc * np.exp(-1j * phase) * inner
    return CurrentSeries(t, 2.0 * amp.real)


@dataclass(frozen=True, eq=False)
class SaddleSolution:
    E_g: float
    a: float
    m: np.ndarray
    # complex ionization times, closed form and Newton-refined
    ionization: np.ndarray
    ionization_newton: np.ndarray
    # recombination energy, real emission times and actions S(t, t') with the
    # ionization time of the same half-cycle
    energy: float | None = None
    emission: np.ndarray | None = None
    action: np.ndarray | None = None

    @property
    def gamma(self):
        return self.ionization.imag

    def to_dict(self):
        out = {
            "E_g": self.E_g,
            "a": self.a,
            "m": self.m.tolist(),
            "ionization_re": self.ionization.real.tolist(),
            "ionization_im": self.ionization.imag.tolist(),
            "newton_re": self.ionization_newton.real.tolist(),
            "newton_im": self.ionization_newton.imag.tolist(),
        }
        if self.emission is not None:
            out["energy"] = self.energy
            out["emission"] = self.emission.tolist()
            out["action_re"] = self.action.real.tolist()
            out["action_im"] = self.action.imag.tolist()
        return out


def saddle_closed_form(E_g, a, A0, omega, m=0):
    """t' = m pi / omega + (i / omega) asinh(sqrt(2 E_g / (a A0^2)))."""
    if not (a > 0 and A0 > 0 and omega > 0) or E_g < 0:
        raise InvalidParameterError("need E_g >= 0 and a, A0, omega > 0")
    gamma = math.asinh(math.sqrt(2.0 * E_g / (a * A0**2))) / omega
    return np.asarray(m) * math.pi / omega + 1j * gamma


def saddle_newton(E_g, a, A0, omega, guess, tol=1e-14, max_iter=60):
    """Complex root of E_g + (a/2) (A0 sin(omega t))^2 near ``guess``.

    Steps are capped at one radian of phase, 1 / omega, so a start far from
    the root cannot jump into the region where sin(omega t) overflows.
    """
    t = complex(guess)
    for _ in range(max_iter):
        s, c = np.sin(omega * t), np.cos(omega * t)
        f = E_g + 0.5 * a * (A0 * s) ** 2
        df = a * A0**2 * omega * s * c
        if df == 0:
            break
        step = f / df
        if abs(step) > 1.0 / omega:
            step *= 1.0 / (omega * abs(step))
        t -= step
        if abs(step) <= tol * max(1.0, abs(t)):
            return t
    s = np.sin(omega * t)
    residual = abs(E_g + 0.5 * a * (A0 * s) ** 2)
    raise ConvergenceError(
        f"saddle search did not converge from {guess}: residual {residual:.3e}", residual
    )


def newton_start(m, omega):
    """Start for the complex search that does not use the closed form.

    On the line Re t = m pi / omega the residual is real and concave in
    Im t, so Newton converges monotonically from any positive Im t.
    """
    return (m * math.pi + 1.0j) / omega


def _quadratic_action(E_g, a, A0, omega, t, tp):
    """Integral of E_g + (a/2) A0^2 sin^2(omega s) from tp to t."""
    d = t - tp
    osc = (np.sin(2 * omega * t) - np.sin(2 * omega * tp)) / (4 * omega)
    return E_g * d + 0.5 * a * A0**2 * (0.5 * d - osc)


def ionization_saddles(bands, pulse, m=(0, 1), valence=0, conduction=1, energy=None):
    """Ionization saddle points for a sinusoidal drive A0 sin(omega t).

    The gap is continued into complex k through its quadratic fit
    E_g + (a/2) k^2 at the zone centre.  Closed-form roots are checked by a
    complex Newton search started away from them.  With ``energy``, real
    emission times in the half-cycles starting at each m pi / omega
    and their actions are added.
    """
    E_g, a = quadratic_gap_fit(bands, valence, conduction)
    m = np.atleast_1d(np.asarray(m, dtype=int))
    closed = saddle_closed_form(E_g, a, pulse.A0, pulse.omega, m)
    closed = np.atleast_1d(closed)
    newton = np.array([
        saddle_newton(E_g, a, pulse.A0, pulse.omega, newton_start(mi, pulse.omega)) for mi in m
    ])
    if energy is None:
        return SaddleSolution(E_g, a, m, closed, newton)
    cw = pulse if pulse.shape == "cw" else type(pulse)(pulse.A0, pulse.omega, pulse.n_cycles, "cw")
    emission, action = [], []
    for mi, tp in zip(m, closed):
        start = mi * math.pi / pulse.omega
        ts = emission_times(bands, cw, energy, valence, conduction,
                            window=(start, start + math.pi / pulse.omega))
        emission.append(ts)
        action.append(_quadratic_action(E_g, a, pulse.A0, pulse.omega, ts, tp))
    return SaddleSolution(
        E_g, a, m, closed, newton, float(energy),
        np.array(emission, dtype=object) if len({len(x) for x in emission}) > 1 else np.array(emission),
        np.array(action, dtype=object) if len({len(x) for x in action}) > 1 else np.array(action),
    )


def _half_cycles(pulse, window):
    """Zeros of A delimiting half-cycles inside ``window``."""
    w = pulse.omega
    lo, hi = window
    if pulse.shape == "cw":
        first = math.ceil(lo * w / math.pi - 1e-12)
        zeros = [j * math.pi / w for j in range(first, int(math.floor(hi * w / math.pi + 1e-12)) + 1)]
    else:
        # cos(w t) zeros inside the pulse, plus the window edges
        first = math.ceil(lo * w / math.pi - 0.5 - 1e-12)
        zeros = [(j + 0.5) * math.pi / w
                 for j in range(first, int(math.floor(hi * w / math.pi - 0.5 + 1e-12)) + 1)]
        zeros = [lo] + [z for z in zeros if lo < z < hi] + [hi]
    return zeros


def emission_times(bands, pulse, energy, valence=0, conduction=1, window=None, grouped=False,
                   tol=1e-9):
    """Real times t where the instantaneous gap at k(t) = A(t) equals ``energy``.

    Each half-cycle (between zeros of A) is split at the peak of |A| into a
    rising and a falling branch, and roots are bracketed on each.  At the
    peak gap a single (tangent) time is returned.  Energies above the peak
    gap give no times.  ``window`` defaults to one optical cycle from t = 0
    for a CW drive and to the whole pulse otherwise.
    """
    w = pulse.omega
    if window is None:
        window = (0.0, pulse.period) if pulse.shape == "cw" else (-pulse.t_max, pulse.t_max)
    def direct(t):
        sol = solve_bloch(bands.potential, float(bands.fold(pulse.A(t))), conduction + 1, bands.M)
        return float(sol.energies[conduction] - sol.energies[valence])

    zeros = _half_cycles(pulse, window)
    groups = []
    for z0, z1 in zip(zeros[:-1], zeros[1:]):
        res = minimize_scalar(lambda t: -abs(float(pulse.A(t))), bounds=(z0, z1),
                              method="bounded", options={"xatol": 1e-12 / w})
        tp = float(res.x)
        if pulse.shape == "cw":
            tp = 0.5 * (z0 + z1)
        found = []
        g_peak = direct(tp)
        if abs(g_peak - energy) <= tol:
            groups.append(np.array([tp]))
            continue
        for a_, b_ in ((z0, tp), (tp, z1)):
            grid = np.linspace(a_, b_, 65)
            vals = np.array([direct(x) - energy for x in grid])
            for i in range(grid.size - 1):
                if vals[i] == 0.0:
                    found.append(grid[i])
                elif vals[i] * vals[i + 1] < 0:
                    found.append(brentq(lambda x: direct(x) - energy, grid[i], grid[i + 1],
                                        xtol=1e-13, rtol=1e-15))
        found = sorted(set(found))
        groups.append(np.array(found))
    if grouped:
        return groups
    return np.array(sorted(x for g in groups for x in g))
