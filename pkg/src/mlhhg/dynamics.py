"""Time propagation of a driven multi-level channel.

Two equivalent formulations are provided:

* Bloch basis:      i dC/dt = (diag(w) + A(t) p) C
* adiabatic basis:  i dC~/dt = (diag(E(t)) - F(t) X(t)) C~

where E(t) are the instantaneous eigenvalues of diag(w) + A(t) p, F(t) the
electric field and X_nm = i <n|p|m> / (E_n - E_m).  Both use the same fixed
step classical RK4 on a uniform grid so the two can be compared sample by
sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import FrameContinuityError, InvalidParameterError, StepSizeError

# dt * (max|w_n| + A0 * max row sum |p|) must not exceed this
COURANT_LIMIT = 0.02
MIN_STEPS_PER_CYCLE = 4096
SAMPLES_PER_CYCLE = 1024
DEGENERACY_FLOOR = 1e-9
NORM_ERROR = 1e-6
CONTINUITY_FLOOR = 0.5


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    # shape (n_t, n_levels)
    amplitudes: np.ndarray
    pulse: object
    system: object
    basis: str
    dt: float
    steps_per_cycle: int
    # adiabatic runs only: instantaneous frames on the output grid
    frames: "AdiabaticFrames | None" = None

    @property
    def populations(self):
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self):
        return np.sum(self.populations, axis=1)

    def to_bloch(self):
        """Bloch-basis amplitudes (identity for a Bloch-basis run)."""
        if self.basis == "bloch":
            return self.amplitudes
        return np.einsum("tnm,tm->tn", self.frames.vectors, self.amplitudes)


@dataclass(frozen=True, eq=False)
class AdiabaticFrame:
    A: float
    energies: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True, eq=False)
class AdiabaticFrames:
    """Instantaneous eigen-decompositions on a time grid, gauge smoothed.

    ``vectors[i][:, n]`` is the n-th adiabatic state at ``t[i]`` expressed in
    the bare-level basis.  ``overlap[i]`` is the smallest diagonal overlap
    with the previous frame, ``flagged[i]`` marks near-degenerate samples.
    """

    t: np.ndarray
    A: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    overlap: np.ndarray
    flagged: np.ndarray

    def __len__(self):
        return self.t.size

    def __getitem__(self, i):
        return AdiabaticFrame(float(self.A[i]), self.energies[i], self.vectors[i])

    def momentum(self, couplings):
        """<phi_n|p|phi_m> for every frame."""
        V = self.vectors
        return np.einsum("tkn,kl,tlm->tnm", V, couplings, V)


@dataclass(frozen=True, eq=False)
class CurrentSeries:
    t: np.ndarray
    j: np.ndarray
    j_intra: np.ndarray | None = None
    j_inter: np.ndarray | None = None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])


def min_steps_per_cycle(system, pulse, courant=COURANT_LIMIT, multiple=SAMPLES_PER_CYCLE):
    """Smallest step count per optical cycle meeting the step-size rule.

    Rounded up to a multiple of ``multiple`` so output sampling stays uniform.
    """
    rate = np.max(np.abs(system.energies)) + pulse.A0 * np.max(
        np.sum(np.abs(system.couplings), axis=1)
    )
    steps = max(MIN_STEPS_PER_CYCLE, math.ceil(pulse.period * rate / courant))
    return int(math.ceil(steps / multiple) * multiple)


def _grid(system, pulse, steps_per_cycle, samples_per_cycle):
    minimum = min_steps_per_cycle(system, pulse, multiple=1)
    if steps_per_cycle is None:
        steps_per_cycle = min_steps_per_cycle(system, pulse, multiple=samples_per_cycle)
    elif steps_per_cycle < minimum:
        raise InvalidParameterError(
            f"steps_per_cycle={steps_per_cycle} below the minimum {minimum} for this system and pulse"
        )
    if steps_per_cycle % samples_per_cycle:
        raise InvalidParameterError(
            f"steps_per_cycle={steps_per_cycle} is not a multiple of samples_per_cycle={samples_per_cycle}"
        )
    n_steps = steps_per_cycle * pulse.n_cycles
    dt = pulse.period / steps_per_cycle
    t_half = -pulse.t_max + 0.5 * dt * np.arange(2 * n_steps + 1)
    stride = steps_per_cycle // samples_per_cycle
    return steps_per_cycle, dt, t_half, stride


def _energy_shift(energies):
    return 0.5 * (energies.min() + energies.max())


@njit(cache=True)
def _rk4_bloch(energies, p, A_half, dt, c0, stride):
    n_steps = (A_half.size - 1) // 2
    N = energies.size
    out = np.empty((n_steps // stride + 1, N), dtype=np.complex128)
    c = c0.copy()
    out[0] = c
    k1 = np.empty(N, dtype=np.complex128)
    k2 = np.empty(N, dtype=np.complex128)
    k3 = np.empty(N, dtype=np.complex128)
    k4 = np.empty(N, dtype=np.complex128)
    tmp = np.empty(N, dtype=np.complex128)
    h = dt
    for s in range(n_steps):
        a0 = A_half[2 * s]
        a1 = A_half[2 * s + 1]
        a2 = A_half[2 * s + 2]
        for n in range(N):
            acc = 0j
            for m in range(N):
                acc += p[n, m] * c[m]
            k1[n] = -1j * (energies[n] * c[n] + a0 * acc)
        for n in range(N):
            tmp[n] = c[n] + 0.5 * h * k1[n]
        for n in range(N):
            acc = 0j
            for m in range(N):
                acc += p[n, m] * tmp[m]
            k2[n] = -1j * (energies[n] * tmp[n] + a1 * acc)
        for n in range(N):
            tmp[n] = c[n] + 0.5 * h * k2[n]
        for n in range(N):
            acc = 0j
            for m in range(N):
                acc += p[n, m] * tmp[m]
            k3[n] = -1j * (energies[n] * tmp[n] + a1 * acc)
        for n in range(N):
            tmp[n] = c[n] + h * k3[n]
        for n in range(N):
            acc = 0j
            for m in range(N):
                acc += p[n, m] * tmp[m]
            k4[n] = -1j * (energies[n] * tmp[n] + a2 * acc)
        for n in range(N):
            c[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])
        if (s + 1) % stride == 0:
            out[(s + 1) // stride] = c
    return out


def _restore_phase(amplitudes, t, shift, t0):
    return amplitudes * np.exp(-1j * shift * (t - t0))[:, None]


def _check_norm(amplitudes, t):
    drift = np.abs(np.sum(np.abs(amplitudes) ** 2, axis=1) - 1.0)
    worst = int(np.argmax(drift))
    if drift[worst] > NORM_ERROR:
        raise StepSizeError(
            f"norm drift {drift[worst]:.3e} at t={t[worst]:.3f} exceeds {NORM_ERROR:g}; "
            "increase steps_per_cycle"
        )


def propagate_bloch(system, pulse, steps_per_cycle=None, samples_per_cycle=SAMPLES_PER_CYCLE):
    """RK4 propagation of the Bloch-basis amplitudes from the lowest level.

    A constant energy offset is removed during integration (it only sets a
    global phase) and restored exactly on output.
    """
    steps_per_cycle, dt, t_half, stride = _grid(system, pulse, steps_per_cycle, samples_per_cycle)
    shift = _energy_shift(system.energies)
    c0 = np.zeros(system.n_levels, dtype=complex)
    c0[0] = 1.0
    A_half = pulse.A(t_half)
    raw = _rk4_bloch(
        np.ascontiguousarray(system.energies - shift),
        np.ascontiguousarray(system.couplings),
        A_half, dt, c0, stride,
    )
    t = t_half[:: 2 * stride]
    amplitudes = _restore_phase(raw, t, shift, t[0])
    _check_norm(amplitudes, t)
    return Trajectory(t, amplitudes, pulse, system, "bloch", dt, steps_per_cycle)


@njit(cache=True)
def _align(V, prev):
    N = V.shape[0]
    worst = 2.0
    for j in range(N):
        ov = 0.0
        for i in range(N):
            ov += V[i, j] * prev[i, j]
        if ov < 0.0:
            for i in range(N):
                V[i, j] = -V[i, j]
            ov = -ov
        if ov < worst:
            worst = ov
    return worst


@njit(cache=True)
def _fix_first(V):
    N = V.shape[0]
    for j in range(N):
        best = 0
        for i in range(N):
            if abs(V[i, j]) > abs(V[best, j]):
                best = i
        if V[best, j] < 0.0:
            for i in range(N):
                V[i, j] = -V[i, j]


@njit(cache=True)
def _frames_kernel(energies, p, A):
    n = A.size
    N = energies.size
    evals = np.empty((n, N))
    evecs = np.empty((n, N, N))
    overlap = np.empty(n)
    H = np.empty((N, N))
    for s in range(n):
        for i in range(N):
            for k in range(N):
                H[i, k] = A[s] * p[i, k]
            H[i, i] += energies[i]
        w, V = np.linalg.eigh(H)
        if s == 0:
            _fix_first(V)
            overlap[s] = 1.0
        else:
            overlap[s] = _align(V, evecs[s - 1])
        evals[s] = w
        evecs[s] = V
    return evals, evecs, overlap


def _flag_degenerate(evals):
    gaps = np.diff(evals, axis=1)
    return np.any(gaps < DEGENERACY_FLOOR, axis=1)


def adiabatic_frames(system, pulse, t):
    """Instantaneous eigenstates of diag(w) + A(t) p along ``t`` (time ordered)."""
    t = np.asarray(t, dtype=float)
    A = pulse.A(t)
    evals, evecs, overlap = _frames_kernel(
        np.ascontiguousarray(system.energies), np.ascontiguousarray(system.couplings), A
    )
    return AdiabaticFrames(t, A, evals, evecs, overlap, _flag_degenerate(evals))


def coupling_X(frames, system):
    """X_nm = i <n|p|m> / (E_n - E_m) per frame, zero on the diagonal.

    Pairs closer than the degeneracy floor get X = 0.
    """
    P = frames.momentum(system.couplings)
    E = frames.energies
    diff = E[:, :, None] - E[:, None, :]
    safe = np.abs(diff) >= DEGENERACY_FLOOR
    X = np.zeros(P.shape, dtype=complex)
    X[safe] = 1j * P[safe] / diff[safe]
    return X


@njit(cache=True)
def _adiabatic_deriv(c, w, V, p, field, out):
    N = w.size
    # P~ = V^T p V
    pv = np.zeros((N, N))
    for i in range(N):
        for m in range(N):
            acc = 0.0
            for k in range(N):
                acc += p[i, k] * V[k, m]
            pv[i, m] = acc
    flagged = False
    for n in range(N):
        acc = 0j
        for m in range(N):
            if m == n:
                continue
            diff = w[n] - w[m]
            if abs(diff) < 1e-9:
                flagged = True
                continue
            pnm = 0.0
            for k in range(N):
                pnm += V[k, n] * pv[k, m]
            acc += (1j * pnm / diff) * c[m]
        out[n] = -1j * (w[n] * c[n] - field * acc)
    return flagged


@njit(cache=True)
def _rk4_adiabatic(energies, p, A_half, F_half, dt, c0, stride, shift):
    n_steps = (A_half.size - 1) // 2
    N = energies.size
    n_out = n_steps // stride + 1
    out = np.empty((n_out, N), dtype=np.complex128)
    out_w = np.empty((n_out, N))
    out_V = np.empty((n_out, N, N))
    out_ov = np.empty(n_out)
    c = c0.copy()
    H = np.empty((N, N))
    k1 = np.empty(N, dtype=np.complex128)
    k2 = np.empty(N, dtype=np.complex128)
    k3 = np.empty(N, dtype=np.complex128)
    k4 = np.empty(N, dtype=np.complex128)
    tmp = np.empty(N, dtype=np.complex128)
    n_flag = 0
    bad_step = -1
    worst = 2.0

    for i in range(N):
        for k in range(N):
            H[i, k] = A_half[0] * p[i, k]
        H[i, i] += energies[i]
    w0, V0 = np.linalg.eigh(H)
    _fix_first(V0)
    out[0] = c
    out_w[0] = w0 + shift
    out_V[0] = V0
    out_ov[0] = 1.0
    step_ov = 2.0
    for s in range(n_steps):
        # frames at the half step and the full step, aligned in time order
        for i in range(N):
            for k in range(N):
                H[i, k] = A_half[2 * s + 1] * p[i, k]
            H[i, i] += energies[i]
        w1, V1 = np.linalg.eigh(H)
        ov1 = _align(V1, V0)
        for i in range(N):
            for k in range(N):
                H[i, k] = A_half[2 * s + 2] * p[i, k]
            H[i, i] += energies[i]
        w2, V2 = np.linalg.eigh(H)
        ov2 = _align(V2, V1)
        step_ov = min(ov1, ov2)
        if step_ov < worst:
            worst = step_ov
        if step_ov < 0.5:
            bad_step = s
            break

        if _adiabatic_deriv(c, w0, V0, p, F_half[2 * s], k1):
            n_flag += 1
        for n in range(N):
            tmp[n] = c[n] + 0.5 * dt * k1[n]
        _adiabatic_deriv(tmp, w1, V1, p, F_half[2 * s + 1], k2)
        for n in range(N):
            tmp[n] = c[n] + 0.5 * dt * k2[n]
        _adiabatic_deriv(tmp, w1, V1, p, F_half[2 * s + 1], k3)
        for n in range(N):
            tmp[n] = c[n] + dt * k3[n]
        _adiabatic_deriv(tmp, w2, V2, p, F_half[2 * s + 2], k4)
        for n in range(N):
            c[n] += dt / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])
        w0 = w2
        V0 = V2
        if (s + 1) % stride == 0:
            o = (s + 1) // stride
            out[o] = c
            out_w[o] = w2 + shift
            out_V[o] = V2
            out_ov[o] = step_ov
    return out, out_w, out_V, out_ov, n_flag, bad_step, worst


def propagate_adiabatic(system, pulse, steps_per_cycle=None, samples_per_cycle=SAMPLES_PER_CYCLE):
    """RK4 propagation in the smoothly gauged instantaneous eigenbasis.

    The returned trajectory carries the frames on the output grid, so
    ``trajectory.to_bloch()`` reconstructs the bare-level amplitudes.
    """
    steps_per_cycle, dt, t_half, stride = _grid(system, pulse, steps_per_cycle, samples_per_cycle)
    shift = _energy_shift(system.energies)
    c0 = np.zeros(system.n_levels, dtype=complex)
    c0[0] = 1.0
    amps, w, V, ov, n_flag, bad_step, _ = _rk4_adiabatic(
        np.ascontiguousarray(system.energies - shift),
        np.ascontiguousarray(system.couplings),
        pulse.A(t_half), pulse.E(t_half), dt, c0, stride, shift,
    )
    if bad_step >= 0:
        raise FrameContinuityError(
            f"adiabatic level tracking lost at t={t_half[2 * bad_step]:.4f}: "
            f"frame overlap fell below {CONTINUITY_FLOOR}",
            time=float(t_half[2 * bad_step]),
        )
    t = t_half[:: 2 * stride]
    amplitudes = _restore_phase(amps, t, shift, t[0])
    _check_norm(amplitudes, t)
    frames = AdiabaticFrames(t, pulse.A(t), w, V, ov, _flag_degenerate(w))
    return Trajectory(t, amplitudes, pulse, system, "adiabatic", dt, steps_per_cycle, frames)


def current(trajectory, system=None, pulse=None):
    """Coherent current j(t) = -(Re <psi|p|psi> + A(t))."""
    system = system or trajectory.system
    pulse = pulse or trajectory.pulse
    C = trajectory.to_bloch()
    expect = np.einsum("tn,nm,tm->t", C.conj(), system.couplings, C).real
    return CurrentSeries(trajectory.t, -(expect + pulse.A(trajectory.t)))


def current_split(trajectory, frames=None, system=None, pulse=None):
    """Split the current of an adiabatic-basis run into intra and inter parts.

    j_intra = -(sum_n |C~_n|^2 <n|p|n> + A) carries the diamagnetic A term,
    j_inter = -sum_{n != m} C~_m^* C~_n <m|p|n>, and j = j_intra + j_inter.
    """
    if trajectory.basis != "adiabatic":
        raise InvalidParameterError("current_split needs an adiabatic-basis trajectory")
    frames = frames or trajectory.frames
    system = system or trajectory.system
    pulse = pulse or trajectory.pulse
    P = frames.momentum(system.couplings)
    C = trajectory.amplitudes
    full = np.einsum("tm,tmn,tn->t", C.conj(), P, C).real
    diag = np.einsum("tn,tnn->t", np.abs(C) ** 2, P)
    A = pulse.A(trajectory.t)
    j_intra = -(diag + A)
    j_inter = -(full - diag)
    return CurrentSeries(trajectory.t, j_intra + j_inter, j_intra, j_inter)


def houston_energy(bands, k0, A, band_count=None):
    """Houston-state energies eps_n(k0 + A) - A^2/2 for each A.

    Returns an array of shape (len(A), n_bands).  Crystal momentum is folded
    into the first zone (the bands are periodic in k).
    """
    A = np.atleast_1d(np.asarray(A, dtype=float))
    k = bands.fold(k0 + A)
    eps = bands.at(k, band_count)
    return eps - 0.5 * A[:, None] ** 2


def adiabatic_energies(system, A):
    """Eigenvalues of diag(w) + A p for each A, ascending."""
    A = np.atleast_1d(np.asarray(A, dtype=float))
    H = system.energies[None, :, None] * np.eye(system.n_levels)[None] + A[:, None, None] * system.couplings
    return np.linalg.eigvalsh(H)


def sum_channels(currents, weights=None):
    """Weighted sum of per-channel currents (quadrature over k0)."""
    currents = list(currents)
    if not currents:
        raise InvalidParameterError("no channels to sum")
    if weights is None:
        weights = np.ones(len(currents))
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(currents):
        raise InvalidParameterError(f"{len(currents)} channels but {weights.size} weights")
    t = currents[0].t
    for i, c in enumerate(currents[1:], 1):
        if c.t.shape != t.shape or not np.array_equal(c.t, t):
            raise InvalidParameterError(f"channel {i} time grid differs from channel 0")
    total = np.zeros_like(t)
    for w, c in zip(weights, currents):
        total = total + w * c.j
    return CurrentSeries(t, total)
