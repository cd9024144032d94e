"""Domain types shared by every stage: level systems, laser pulses, potentials.

Everything here is in atomic units.  Conversions from eV / nm / W cm^-2
happen in :mod:`mlhhg.units` and at the config boundary only.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError, ValidationError
from .units import ev_to_au, wavelength_nm_to_omega

SYMMETRY_TOL = 1e-12


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MultiLevelSystem:
    """Level energies and momentum couplings of one crystal-momentum channel.

    ``couplings[n, m]`` is the momentum matrix element between levels n and m.
    At ``k0 == 0`` the diagonal must vanish (parity); away from the zone
    centre the diagonal carries the band velocity and is allowed.
    """

    energies: np.ndarray
    couplings: np.ndarray
    label: str = ""
    k0: float = 0.0

    def __post_init__(self):
        energies = _frozen(self.energies)
        couplings = _frozen(self.couplings)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "couplings", couplings)
        problems = validate_levels(energies, couplings, self.k0)
        if problems:
            raise ValidationError(f"invalid level system {self.label!r}", problems)

    @property
    def n_levels(self):
        return self.energies.size

    def hamiltonian(self, A):
        """Field-dressed Hamiltonian diag(energies) + A * couplings."""
        return np.diag(self.energies) + A * self.couplings

    def subsystem(self, levels, label=None):
        idx = list(levels)
        return MultiLevelSystem(
            self.energies[idx],
            self.couplings[np.ix_(idx, idx)],
            label=label if label is not None else self.label,
            k0=self.k0,
        )

    def __eq__(self, other):
        if not isinstance(other, MultiLevelSystem):
            return NotImplemented
        return (
            self.label == other.label
            and self.k0 == other.k0
            and np.array_equal(self.energies, other.energies)
            and np.array_equal(self.couplings, other.couplings)
        )

    __hash__ = None


def validate_levels(energies, couplings, k0=0.0):
    problems = []
    n = energies.size
    if energies.ndim != 1 or n < 2:
        problems.append(f"need at least 2 levels, got shape {energies.shape}")
        return problems
    if couplings.shape != (n, n):
        problems.append(f"coupling matrix shape {couplings.shape} != ({n}, {n})")
        return problems
    if not np.all(np.isfinite(energies)) or not np.all(np.isfinite(couplings)):
        problems.append("non-finite entries")
    for i in range(n - 1):
        if energies[i + 1] < energies[i]:
            problems.append(f"energy[{i + 1}]={energies[i + 1]!r} < energy[{i}]={energies[i]!r}")
    for i in range(n):
        for j in range(i + 1, n):
            if abs(couplings[i, j] - couplings[j, i]) > SYMMETRY_TOL:
                problems.append(
                    f"coupling[{i},{j}]={couplings[i, j]!r} != coupling[{j},{i}]={couplings[j, i]!r}"
                )
    if k0 == 0.0:
        for i in range(n):
            if couplings[i, i] != 0.0:
                problems.append(f"coupling[{i},{i}]={couplings[i, i]!r} must be 0 at k0=0")
    return problems


def two_level_system(omega0, mu=1.0, label="two-level"):
    """Symmetric two-level system with levels at -omega0/2 and +omega0/2."""
    if omega0 < 0:
        raise InvalidParameterError("omega0 must be >= 0")
    return MultiLevelSystem(
        [-omega0 / 2.0, omega0 / 2.0], [[0.0, mu], [mu, 0.0]], label=label
    )


# Energies and momentum couplings of the lowest five k0=0 Bloch states of the
# Mathieu solid (V0=0.37, a0=8).
TABLE1_ENERGIES = (-0.526, -0.098, 0.056, 0.878, 0.880)
TABLE1_COUPLINGS = (
    (0.0, 0.41, 0.0, 0.03, 0.0),
    (0.41, 0.0, 0.70, 0.0, 0.14),
    (0.0, 0.70, 0.0, 0.18, 0.0),
    (0.03, 0.0, 0.18, 0.0, 1.55),
    (0.0, 0.14, 0.0, 1.55, 0.0),
)

ARGON_LEVELS_EV = (0.0, 14.0, 20.0, 29.0)
# The fitted argon couplings were never published.  Stand-in: equal nearest-
# neighbour coupling, everything else zero.  Override with ``argon_coupling``.
ARGON_PLACEHOLDER_COUPLING = 0.5


def table1_system(n_levels=4):
    """The tabulated Mathieu-solid levels.

    ``n_levels=4`` drops the lowest Bloch state and uses the second one as the
    valence level; ``n_levels=5`` returns the full table.
    """
    if n_levels == 5:
        return MultiLevelSystem(TABLE1_ENERGIES, TABLE1_COUPLINGS, label="table1-5")
    if n_levels == 4:
        full = table1_system(5)
        return full.subsystem(range(1, 5), label="table1")
    raise InvalidParameterError(f"table1 has 4- or 5-level modes, not {n_levels}")


def argon_system(coupling=ARGON_PLACEHOLDER_COUPLING):
    """Four Gamma-point levels of solid argon with stepwise couplings.

    ``coupling`` is either one number used for 1-2, 2-3 and 3-4, or a
    sequence of three nearest-neighbour values.
    """
    energies = ev_to_au(ARGON_LEVELS_EV)
    steps = np.broadcast_to(np.asarray(coupling, dtype=float), (3,))
    p = np.diag(steps, 1)
    return MultiLevelSystem(energies, p + p.T, label="argon")


def load_system(source, **options):
    """Resolve ``builtin:table1``, ``builtin:table1-5``, ``builtin:argon``,
    ``builtin:two-level`` or a path to a system file."""
    if isinstance(source, MultiLevelSystem):
        return source
    source = str(source)
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        if name == "table1":
            return table1_system(options.get("n_levels", 4))
        if name == "table1-5":
            return table1_system(5)
        if name == "argon":
            return argon_system(options.get("coupling", ARGON_PLACEHOLDER_COUPLING))
        if name == "two-level":
            return two_level_system(options.get("omega0", 1.0), options.get("mu", 1.0))
        raise ValidationError(f"unknown builtin system {name!r}")
    with open(source) as fh:
        text = fh.read()
    label = os.path.splitext(os.path.basename(source))[0]
    return parse_system(text, label=label)


def parse_system(text, label=""):
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise ValidationError("empty system file")
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2 or parts[0] != "levels":
        raise ValidationError("malformed system file", [f"line {lineno}: expected 'levels N'"])
    try:
        n = int(parts[1])
    except ValueError:
        raise ValidationError("malformed system file", [f"line {lineno}: bad level count {parts[1]!r}"])
    body = lines[1:]
    if len(body) != 2 * n:
        raise ValidationError(
            "malformed system file",
            [f"expected {n} energy lines and {n} coupling rows, got {len(body)} data lines"],
        )
    problems = []
    energies = []
    for lineno, line in body[:n]:
        try:
            (value,) = line.split()
            energies.append(float(value))
        except ValueError:
            problems.append(f"line {lineno}: expected one energy, got {line!r}")
    rows = []
    for lineno, line in body[n:]:
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            row = []
        if len(row) != n:
            problems.append(f"line {lineno}: expected {n} couplings, got {line!r}")
        rows.append(row)
    if problems:
        raise ValidationError("malformed system file", problems)
    return MultiLevelSystem(energies, rows, label=label)


def format_system(system):
    out = [f"levels {system.n_levels}"]
    out += [repr(float(e)) for e in system.energies]
    out += [" ".join(repr(float(v)) for v in row) for row in system.couplings]
    return "\n".join(out) + "\n"


def save_system(system, path):
    with open(path, "w") as fh:
        fh.write(format_system(system))


@dataclass(frozen=True)
class LaserPulse:
    """Vector potential A(t) = A0 cos^4(w t / 2n) cos(w t) on |t| <= n pi / w.

    ``shape="cw"`` gives A(t) = A0 sin(w t) instead; the time window is the
    same so propagations on either shape share grids.
    """

    A0: float
    omega: float
    n_cycles: int
    shape: str = "cos4"

    def __post_init__(self):
        if not self.omega > 0:
            raise InvalidParameterError(f"omega must be > 0, got {self.omega}")
        if int(self.n_cycles) != self.n_cycles or self.n_cycles < 1:
            raise InvalidParameterError(f"n_cycles must be a positive integer, got {self.n_cycles}")
        if not self.A0 >= 0:
            raise InvalidParameterError(f"A0 must be >= 0, got {self.A0}")
        if self.shape not in ("cos4", "cw"):
            raise InvalidParameterError(f"unknown pulse shape {self.shape!r}")

    @property
    def t_max(self):
        return self.n_cycles * math.pi / self.omega

    @property
    def period(self):
        return 2.0 * math.pi / self.omega

    def A(self, t):
        t = np.asarray(t, dtype=float)
        if self.shape == "cw":
            return self.A0 * np.sin(self.omega * t)
        u = self.omega * t / (2 * self.n_cycles)
        env = np.cos(u) ** 4
        out = self.A0 * env * np.cos(self.omega * t)
        return np.where(np.abs(t) <= self.t_max, out, 0.0)

    def E(self, t):
        """Electric field -dA/dt from the analytic derivative."""
        t = np.asarray(t, dtype=float)
        w = self.omega
        if self.shape == "cw":
            return -self.A0 * w * np.cos(w * t)
        n = self.n_cycles
        u = w * t / (2 * n)
        c, s = np.cos(u), np.sin(u)
        dA = self.A0 * (-(2.0 * w / n) * c**3 * s * np.cos(w * t) - w * c**4 * np.sin(w * t))
        return np.where(np.abs(t) <= self.t_max, -dA, 0.0)

    @cached_property
    def E0(self):
        t = np.linspace(-self.t_max, self.t_max, 64 * self.n_cycles * 16 + 1)
        return float(np.max(np.abs(self.E(t))))

    def rabi(self, mu):
        """Peak Rabi frequency mu * A0."""
        return mu * self.A0

    def with_amplitude(self, A0):
        return LaserPulse(A0, self.omega, self.n_cycles, self.shape)


def build_pulse(A0, omega, n_cycles, shape="cos4"):
    return LaserPulse(float(A0), float(omega), int(n_cycles), shape)


def pulse_from_wavelength(lambda_nm, E0, n_cycles, shape="cos4"):
    """Pulse with carrier set by ``lambda_nm`` and A0 = E0 / omega.

    A0 = E0/omega ignores the envelope's contribution to the peak field;
    for n_cycles ~ 10 the actual peak of -dA/dt is within 1% of E0.
    """
    if not lambda_nm > 0:
        raise InvalidParameterError(f"wavelength must be > 0, got {lambda_nm}")
    if E0 < 0:
        raise InvalidParameterError(f"E0 must be >= 0, got {E0}")
    omega = float(wavelength_nm_to_omega(lambda_nm))
    return build_pulse(E0 / omega, omega, n_cycles, shape)


@dataclass(frozen=True)
class PeriodicPotential:
    """Mathieu-type potential V(x) = -V0 [1 + cos(2 pi x / a0)]."""

    V0: float
    a0: float

    def __post_init__(self):
        if not self.a0 > 0:
            raise InvalidParameterError(f"lattice constant must be > 0, got {self.a0}")

    def __call__(self, x):
        return -self.V0 * (1.0 + np.cos(2.0 * np.pi * np.asarray(x) / self.a0))

    @property
    def reciprocal(self):
        return 2.0 * np.pi / self.a0

    @property
    def zone_edge(self):
        return np.pi / self.a0


MATHIEU_SOLID = PeriodicPotential(V0=0.37, a0=8.0)
