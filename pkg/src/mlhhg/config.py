"""Run configuration: a strict sectioned key = value format.

    # comment
    [system]
    source = builtin:table1

    [pulse]
    wavelength_nm = 3200
    E0 = 4.1e-3

Every key is typed and checked against a fixed schema; unknown sections or
keys, duplicates and bad values raise ConfigError with the line number.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidParameterError, ValidationError
from .model import (
    MATHIEU_SOLID,
    PeriodicPotential,
    build_pulse,
    load_system,
    pulse_from_wavelength,
)


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def _int(text):
    return int(text)


def _bool(text):
    low = text.lower()
    if low in ("yes", "true", "on", "1"):
        return True
    if low in ("no", "false", "off", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _floats(text):
    return tuple(_float(x) for x in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


def _text(text):
    return text


def _steps(text):
    return None if text == "auto" else int(text)


SCHEMA = {
    "system": {
        "source": _text,
        "levels": _int,
        "skip": _int,
        "k0": _float,
        "omega0": _float,
        "mu": _float,
        "coupling": _floats,
        "V0": _float,
        "a0": _float,
        "plane_waves": _int,
    },
    "pulse": {
        "shape": _choice("cos4", "cw"),
        "n_cycles": _int,
        "omega": _float,
        "wavelength_nm": _float,
        "A0": _float,
        "E0": _float,
        "rabi": _float,
    },
    "propagation": {
        "basis": _choice("bloch", "adiabatic", "both", "none"),
        "steps_per_cycle": _steps,
        "samples_per_cycle": _int,
        "save_trajectory": _bool,
    },
    "analysis": {
        "window": _choice("envelope", "none", "hann"),
        "plateaus": _int,
        "max_order": _float,
        "wavelet": _bool,
        "wavelet_energies": _floats,
        "wavelet_stride": _int,
        "bands": _bool,
        "band_couplings": _bool,
        "n_k": _int,
        "n_bands": _int,
        "houston_levels": _ints,
        "sfa": _bool,
        "sfa_valence": _int,
        "sfa_conduction": _int,
        "saddle_energy": _float,
    },
    "scan": {
        "parameter": _choice("E0", "wavelength_nm", "rabi", "A0"),
        "values": _floats,
        "start": _float,
        "stop": _float,
        "count": _int,
        "max_failed_fraction": _float,
    },
    "output": {
        "name": _text,
    },
}

DEFAULTS = {
    "system": {"source": "builtin:table1", "skip": 0, "k0": 0.0, "omega0": 1.0, "mu": 1.0,
               "V0": MATHIEU_SOLID.V0, "a0": MATHIEU_SOLID.a0, "plane_waves": 64},
    "pulse": {"shape": "cos4", "n_cycles": 11},
    "propagation": {"basis": "bloch", "steps_per_cycle": None, "samples_per_cycle": 1024,
                    "save_trajectory": False},
    "analysis": {"window": "envelope", "wavelet": False, "wavelet_stride": 16, "bands": False,
                 "band_couplings": False,
                 "n_k": 513, "n_bands": 5, "sfa": False, "sfa_valence": 0,
                 "sfa_conduction": 1},
    "scan": {"max_failed_fraction": 0.1},
    "output": {},
}


def parse_config(text, path=None):
    """Parse config text into ``{section: {key: value}}`` plus line numbers."""
    values = {}
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno, path)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, path)
            if section in values:
                raise ConfigError(f"duplicate section [{section}]", lineno, path)
            values[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, path)
        if section is None:
            raise ConfigError("key outside any section", lineno, path)
        key, _, raw_value = line.partition("=")
        key, raw_value = key.strip(), raw_value.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, path)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, path)
        if not raw_value:
            raise ConfigError(f"empty value for {key!r}", lineno, path)
        try:
            values[section][key] = SCHEMA[section][key](raw_value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
        lines[(section, key)] = lineno
    return values, lines


@dataclass(frozen=True)
class ScanSpec:
    parameter: str
    values: tuple
    max_failed_fraction: float = 0.1

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValidationError("scan needs at least two points")
        steps = np.diff(self.values)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValidationError("scan values must be strictly monotone")


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated run parameters.  ``sections`` keeps every value."""

    sections: dict = field(hash=False)
    path: str | None = None
    lines: dict = field(default_factory=dict, hash=False, compare=False, repr=False)

    @classmethod
    def from_text(cls, text, path=None):
        values, lines = parse_config(text, path)
        merged = {name: dict(DEFAULTS[name]) for name in SCHEMA}
        for name, items in values.items():
            merged[name].update(items)
        cfg = cls(merged, path, lines)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), str(path))

    def get(self, section, key, default=None):
        return self.sections[section].get(key, default)

    def _error(self, message, section, key):
        return ConfigError(message, self.lines.get((section, key)), self.path)

    def validate(self):
        pulse = self.sections["pulse"]
        scan = self.sections["scan"]
        swept = scan.get("parameter")
        no_pulse = self.sections["propagation"]["basis"] == "none" and not self.has_pulse()
        carrier = [k for k in ("omega", "wavelength_nm") if k in pulse]
        if no_pulse:
            if swept:
                raise self._error("a scan needs a pulse", "scan", "parameter")
        elif swept == "wavelength_nm":
            if "omega" in pulse:
                raise self._error("omega conflicts with a wavelength scan", "pulse", "omega")
        elif len(carrier) != 1:
            raise ConfigError("[pulse] needs exactly one of omega, wavelength_nm", None, self.path)
        amp = [k for k in ("A0", "E0", "rabi") if k in pulse]
        if swept in ("A0", "E0", "rabi"):
            if amp and amp != [swept]:
                raise self._error(f"{amp[0]} conflicts with the {swept} scan", "pulse", amp[0])
        elif len(amp) != 1 and not no_pulse:
            raise ConfigError("[pulse] needs exactly one of A0, E0, rabi", None, self.path)
        if pulse["n_cycles"] < 1:
            raise self._error("n_cycles must be >= 1", "pulse", "n_cycles")
        prop = self.sections["propagation"]
        if prop["samples_per_cycle"] < 1:
            raise self._error("samples_per_cycle must be >= 1", "propagation", "samples_per_cycle")
        if scan and "parameter" in scan:
            self.scan_spec()
        elif any(k in scan for k in ("values", "start", "stop", "count")):
            raise ConfigError("[scan] needs a parameter", None, self.path)
        try:
            self.system()
            if not swept and not no_pulse:
                self._check_steps(self.system(), self.pulse())
        except (InvalidParameterError, ValidationError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), None, self.path) from None
        except OSError as exc:
            raise self._error(f"cannot read system file: {exc}", "system", "source") from None

    def _check_steps(self, system, pulse):
        from .dynamics import min_steps_per_cycle

        prop = self.sections["propagation"]
        steps = prop["steps_per_cycle"]
        if steps is None or prop["basis"] == "none":
            return
        minimum = min_steps_per_cycle(system, pulse, multiple=1)
        if steps < minimum:
            raise self._error(f"steps_per_cycle={steps} is below the minimum {minimum} for this "
                              "system and pulse", "propagation", "steps_per_cycle")
        if steps % prop["samples_per_cycle"]:
            raise self._error(f"steps_per_cycle={steps} is not a multiple of samples_per_cycle",
                              "propagation", "steps_per_cycle")

    def has_pulse(self):
        keys = ("omega", "wavelength_nm", "A0", "E0", "rabi")
        return any(k in self.sections["pulse"] for k in keys) or "parameter" in self.sections["scan"]

    def potential(self):
        s = self.sections["system"]
        return PeriodicPotential(s["V0"], s["a0"])

    def system(self):
        s = self.sections["system"]
        source = s["source"]
        if source == "bands":
            from .bandstructure import system_from_bands

            return system_from_bands(self.potential(), s.get("levels", 4), s["k0"], s["skip"],
                                     s["plane_waves"])
        options = {"omega0": s["omega0"], "mu": s["mu"]}
        if "levels" in s:
            options["n_levels"] = s["levels"]
        if "coupling" in s:
            c = s["coupling"]
            options["coupling"] = c[0] if len(c) == 1 else c
        return load_system(source, **options)

    def pulse(self, **override):
        p = dict(self.sections["pulse"])
        p.update(override)
        if "rabi" in p:
            mu = abs(float(self.system().couplings[0, 1]))
            if mu == 0:
                raise ConfigError("rabi given but levels 1-2 are uncoupled", None, self.path)
            A0 = p["rabi"] / mu
        else:
            A0 = p.get("A0")
        if "wavelength_nm" in p:
            if A0 is not None:
                pulse = pulse_from_wavelength(p["wavelength_nm"], 0.0, p["n_cycles"], p["shape"])
                return pulse.with_amplitude(A0)
            return pulse_from_wavelength(p["wavelength_nm"], p["E0"], p["n_cycles"], p["shape"])
        if A0 is None:
            A0 = p["E0"] / p["omega"]
        return build_pulse(A0, p["omega"], p["n_cycles"], p["shape"])

    def scan_spec(self):
        scan = self.sections["scan"]
        if "parameter" not in scan:
            return None
        if "values" in scan:
            if any(k in scan for k in ("start", "stop", "count")):
                raise self._error("give either values or start/stop/count", "scan", "values")
            values = scan["values"]
        else:
            missing = [k for k in ("start", "stop", "count") if k not in scan]
            if missing:
                raise ConfigError(f"[scan] missing {', '.join(missing)}", None, self.path)
            values = tuple(np.linspace(scan["start"], scan["stop"], scan["count"]).tolist())
        try:
            return ScanSpec(scan["parameter"], tuple(values), scan["max_failed_fraction"])
        except ValidationError as exc:
            raise self._error(str(exc), "scan", "values" if "values" in scan else "count") from None

    def with_value(self, key, value):
        """Copy with one [pulse] parameter replaced (a scan point)."""
        sections = {name: dict(items) for name, items in self.sections.items()}
        pulse = sections["pulse"]
        if key in ("A0", "E0", "rabi"):
            for k in ("A0", "E0", "rabi"):
                pulse.pop(k, None)
        pulse[key] = value
        sections["scan"] = dict(DEFAULTS["scan"])
        return RunConfig(sections, self.path, self.lines)

    def canonical(self):
        """Deterministic JSON-ready dict of all resolved values."""
        out = {}
        for name in sorted(self.sections):
            items = self.sections[name]
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(items.items())}
        return out

    def to_text(self):
        """Config text that parses back to the same values."""
        lines = []
        for name, items in self.canonical().items():
            items = {k: v for k, v in items.items() if v is not None}
            if not items:
                continue
            lines.append(f"[{name}]")
            for key, value in items.items():
                if isinstance(value, bool):
                    text = "yes" if value else "no"
                elif isinstance(value, list):
                    text = ", ".join(repr(v) for v in value)
                else:
                    text = repr(value) if isinstance(value, float) else str(value)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def content_hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        if self.sections["system"]["source"] not in ("bands",) and not str(
            self.sections["system"]["source"]
        ).startswith("builtin:"):
            with open(self.sections["system"]["source"], "rb") as fh:
                blob += hashlib.sha256(fh.read()).hexdigest()
        return hashlib.sha256(blob.encode()).hexdigest()
