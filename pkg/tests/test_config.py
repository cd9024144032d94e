import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlhhg.config import RunConfig, ScanSpec, parse_config
from mlhhg.errors import ConfigError, ValidationError
from mlhhg.runner import RECIPES, load_config

GOOD = """
# two-level run
[system]
source = builtin:two-level
omega0 = 1.0

[pulse]
omega = 0.1
rabi = 2
"""


def test_minimal_config_resolves():
    cfg = RunConfig.from_text(GOOD)
    assert cfg.pulse().A0 == 2.0 and cfg.pulse().n_cycles == 11
    assert cfg.system().n_levels == 2
    assert cfg.sections["propagation"]["basis"] == "bloch"


@pytest.mark.parametrize("text,line,fragment", [
    ("[system]\nsource = builtin:table1\nbogus = 1\n", 3, "unknown key"),
    ("[systems]\n", 1, "unknown section"),
    ("omega = 1\n", 1, "outside any section"),
    ("[pulse]\nomega = 0.1\nomega = 0.2\n", 3, "duplicate key"),
    ("[pulse]\n\n[pulse]\n", 3, "duplicate section"),
    ("[pulse]\nomega = fast\n", 2, "bad value"),
    ("[pulse]\nomega\n", 2, "key = value"),
    ("[pulse]\nomega =\n", 2, "empty value"),
    ("[pulse\n", 1, "malformed"),
    ("[pulse]\nomega = inf\n", 2, "not finite"),
    ("[propagation]\nbasis = length\n", 2, "not one of"),
])
def test_schema_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "x.cfg")
    assert err.value.line == line
    assert str(err.value).startswith(f"x.cfg:{line}:")
    assert fragment in str(err.value)


@pytest.mark.parametrize("extra,key", [
    ("n_cycles = 0\n", "n_cycles"),
    ("[propagation]\nsteps_per_cycle = 1024\n", "steps_per_cycle"),
    ("[scan]\nparameter = rabi\nvalues = 1, 1\n", "values"),
    ("[scan]\nparameter = E0\nvalues = 1e-3, 2e-3\n", "rabi"),
])
def test_semantic_errors_point_at_the_key(extra, key):
    text = GOOD + extra
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text(text, "x.cfg")
    assert key in text.splitlines()[err.value.line - 1]


@pytest.mark.parametrize("pulse", [
    "omega = 0.1\n",                                 # no amplitude
    "omega = 0.1\nA0 = 1\nE0 = 0.1\n",               # two amplitudes
    "omega = 0.1\nwavelength_nm = 800\nA0 = 1\n",    # two carriers
])
def test_pulse_needs_exactly_one_carrier_and_amplitude(pulse):
    with pytest.raises(ConfigError):
        RunConfig.from_text("[pulse]\n" + pulse)


def test_system_file_missing(tmp_path):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text(f"[system]\nsource = {tmp_path}/none.txt\n[pulse]\nomega = 1\nA0 = 1\n", "c")
    assert err.value.line == 2


def test_scan_spec():
    cfg = RunConfig.from_text(GOOD.replace("rabi = 2", "") + "[scan]\nparameter = rabi\nstart = 0.5\nstop = 3\ncount = 7\n")
    spec = cfg.scan_spec()
    assert len(spec.values) == 7 and spec.values[-1] == 3.0
    point = cfg.with_value("rabi", 1.5)
    assert point.pulse().A0 == 1.5 and point.scan_spec() is None
    with pytest.raises(ValidationError):
        ScanSpec("E0", (1.0,))
    with pytest.raises(ValidationError):
        ScanSpec("E0", (1.0, 3.0, 2.0))


@pytest.mark.parametrize("name", RECIPES)
def test_recipes_load_and_round_trip(name):
    cfg = load_config(name)
    again = RunConfig.from_text(cfg.to_text())
    assert again.canonical() == cfg.canonical()
    assert again.content_hash() == cfg.content_hash()


@settings(max_examples=40)
@given(st.floats(1e-4, 1.0), st.floats(100, 5000), st.integers(1, 20),
       st.sampled_from(["bloch", "adiabatic", "both"]))
def test_to_text_round_trip(E0, nm, n, basis):
    cfg = RunConfig.from_text(
        f"[pulse]\nwavelength_nm = {nm!r}\nE0 = {E0!r}\nn_cycles = {n}\n[propagation]\nbasis = {basis}\n")
    assert RunConfig.from_text(cfg.to_text()).canonical() == cfg.canonical()


def test_hash_tracks_system_file(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("levels 2\n0\n1\n0 1\n1 0\n")
    text = f"[system]\nsource = {path}\n[pulse]\nomega = 0.1\nA0 = 1\n"
    h1 = RunConfig.from_text(text).content_hash()
    path.write_text("levels 2\n0\n1\n0 0.5\n0.5 0\n")
    assert RunConfig.from_text(text).content_hash() != h1
