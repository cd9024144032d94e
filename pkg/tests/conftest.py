import pytest

from mlhhg.dynamics import current, propagate_bloch
from mlhhg.model import build_pulse, pulse_from_wavelength, table1_system, two_level_system
from mlhhg.spectral import harmonic_spectrum

# lines reported by the acceptance tests, printed after the run whatever the capture mode
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1_run():
    system = two_level_system(1.0)
    pulse = build_pulse(2.0, 0.1, 11)
    tr = propagate_bloch(system, pulse)
    j = current(tr)
    return system, pulse, tr, j, harmonic_spectrum(j, pulse)


@pytest.fixture(scope="session")
def fig3a_run():
    system = table1_system(4)
    pulse = pulse_from_wavelength(3200, 4.1e-3, 11)
    tr = propagate_bloch(system, pulse)
    j = current(tr)
    return system, pulse, tr, j, harmonic_spectrum(j, pulse)
