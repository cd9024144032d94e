import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlhhg.bandstructure import band_structure
from mlhhg.errors import ConvergenceError, InvalidParameterError
from mlhhg.model import (
    MATHIEU_SOLID,
    MultiLevelSystem,
    argon_system,
    build_pulse,
    pulse_from_wavelength,
    table1_system,
    two_level_system,
)
from mlhhg.predict import (
    crossing_parameter,
    emission_times,
    fit_alpha,
    fit_beta,
    inner_gap,
    inner_gap_linear,
    ionization_saddles,
    lz_exponent,
    lz_rate,
    merge_threshold,
    multiband_cutoff_caps,
    multilevel_plateau_bounds,
    newton_start,
    saddle_closed_form,
    saddle_newton,
    second_plateau_strength,
    sfa_current,
    two_level_cutoff,
)
from mlhhg.spectral import extract_plateaus, harmonic_spectrum


@pytest.fixture(scope="module")
def bands():
    return band_structure(MATHIEU_SOLID, 513, 3)


def test_two_level_closed_forms():
    low, cut = two_level_cutoff(1.0, 2.0)
    assert low == 1.0 and cut == pytest.approx(math.sqrt(17))
    assert lz_exponent(1.0, 0.1, 2.0) == pytest.approx(-math.pi / 0.8)
    assert lz_rate(1.0, 0.1, 2.0) == pytest.approx(10 * math.exp(-math.pi / 0.8))
    assert crossing_parameter(1.0, 2.0) == 0.25


@settings(max_examples=30)
@given(st.floats(0.1, 3), st.floats(0.0, 4))
def test_multilevel_bounds_reduce_to_two_level(omega0, rabi):
    with pytest.warns(UserWarning):
        pred = multilevel_plateau_bounds(two_level_system(omega0), rabi)
    assert pred.n_plateaus == 1
    assert pred.cutoffs[0] == pytest.approx(two_level_cutoff(omega0, rabi)[1], rel=1e-12)


def test_four_level_bounds_frozen():
    pulse = pulse_from_wavelength(3200, 4.1e-3, 11)
    on, cut = multilevel_plateau_bounds(table1_system(4), pulse.A0, pulse.omega).orders()
    assert on == pytest.approx((10.8157, 47.4831), abs=1e-3)
    assert cut == pytest.approx((30.3233, 110.0476), abs=1e-3)


def test_argon_first_plateau_reported_not_rejected():
    pulse = pulse_from_wavelength(1333, 0.03, 11)
    pred = multilevel_plateau_bounds(argon_system(), pulse.A0, pulse.omega)
    assert pred.n_plateaus == 2
    d = pred.to_dict()
    assert [p["collapsed"] for p in d["plateaus"]] == list(pred.collapsed)


def test_merge_threshold_frozen():
    omega = pulse_from_wavelength(3200, 1e-3, 11).omega
    th = merge_threshold(table1_system(4), omega)
    assert th.E0_linear == pytest.approx(5.2018e-3, rel=1e-4)
    assert th.E0_exact == pytest.approx(5.6895e-3, rel=1e-3)
    assert inner_gap_linear(table1_system(4), th.A_linear) == pytest.approx(0, abs=1e-14)
    assert th.min_gap == pytest.approx(inner_gap(table1_system(4), th.A_exact))


def test_second_plateau_strength():
    system = table1_system(4)
    weak, strong = (second_plateau_strength(system, pulse_from_wavelength(3200, e, 11))
                    for e in (3.5e-3, 5.0e-3))
    assert strong.log_value > weak.log_value
    assert weak.log_value == pytest.approx(weak.log_p12 + weak.log_p23 + weak.log_p34)
    assert weak.log_value / math.log(10) == pytest.approx(-19.653, abs=1e-3)
    exact = second_plateau_strength(system, pulse_from_wavelength(3200, 3.5e-3, 11), barrier="exact")
    assert exact.barrier == exact.barrier_exact != exact.barrier_linear
    past = second_plateau_strength(system, pulse_from_wavelength(3200, 6e-3, 11))
    assert not past.reliable
    uncoupled = MultiLevelSystem([0, 1, 2, 3], np.diag([0.0, 1.0, 0.0], 1) + np.diag([0.0, 1.0, 0.0], -1))
    with pytest.raises(InvalidParameterError):
        second_plateau_strength(uncoupled, build_pulse(0.1, 0.01, 2))


def test_fits_recover_parameters():
    rabis = np.linspace(0.5, 3, 7)
    intensities = 3.7 * np.exp([lz_exponent(1.0, 0.1, r) for r in rabis])
    assert fit_alpha(1.0, 0.1, rabis, intensities) == pytest.approx(3.7)
    system = table1_system(4)
    pulses = [pulse_from_wavelength(3200, e, 11) for e in np.linspace(3.5e-3, 5e-3, 6)]
    logs = [second_plateau_strength(system, p, beta=120.0).log_value + 2.0 for p in pulses]
    beta, c = fit_beta(system, pulses, np.exp(logs))
    assert beta == pytest.approx(120.0) and c == pytest.approx(2.0)


@settings(max_examples=60)
@given(st.floats(0.01, 1.0), st.floats(0.1, 10), st.floats(0.02, 1.0), st.floats(0.005, 0.1),
       st.integers(0, 4))
def test_saddle_closed_form_is_a_root(E_g, a, A0, omega, m):
    t = complex(saddle_closed_form(E_g, a, A0, omega, m))
    assert abs(E_g + 0.5 * a * (A0 * np.sin(omega * t)) ** 2) < 1e-10 * max(1, E_g)
    assert abs(t - saddle_newton(E_g, a, A0, omega, newton_start(m, omega))) < 1e-9 * abs(t)


def test_newton_reports_failure():
    with pytest.raises(ConvergenceError) as err:
        saddle_newton(0.1, 1.0, 0.2, 0.05, 0.0, max_iter=3)
    assert err.value.residual is not None


def test_ionization_saddles_agree(bands):
    pulse = build_pulse(0.3, 0.0142, 11, "cw")
    sol = ionization_saddles(bands, pulse, (0, 1, 2), 1, 2)
    assert np.max(np.abs(sol.ionization - sol.ionization_newton)) < 1e-10
    assert np.allclose(np.diff(sol.ionization.real), math.pi / pulse.omega)
    assert np.all(sol.gamma > 0)


def test_emission_times_two_per_half_cycle(bands):
    pulse = build_pulse(0.288, 0.0142, 11, "cw")
    g_peak = bands.at(pulse.A0)[0]
    g_peak = g_peak[2] - g_peak[1]
    g0 = bands.gap(1, 2)[bands.k.size // 2]
    for energy in np.linspace(g0, g_peak, 6)[1:-1]:
        groups = emission_times(bands, pulse, energy, 1, 2, grouped=True)
        assert [len(g) for g in groups] == [2, 2]
        # the two times of a half-cycle sit symmetrically about its peak
        for k, g in enumerate(groups):
            assert g.sum() / 2 == pytest.approx((k + 0.5) * math.pi / pulse.omega, rel=1e-9)
    assert emission_times(bands, pulse, g_peak + 0.01, 1, 2).size == 0


def test_sfa_cutoff_at_gap_of_peak_momentum(bands):
    pulse = pulse_from_wavelength(3200, 4.1e-3, 11)
    js = sfa_current(bands, pulse, 1, 2)
    found = extract_plateaus(harmonic_spectrum(js, pulse), 1).plateaus
    eps = bands.at(pulse.A0)[0]
    assert abs(found[-1].cutoff - (eps[2] - eps[1]) / pulse.omega) <= 2


def test_sfa_accepts_constant_dipole(bands):
    pulse = build_pulse(0.1, 0.02, 4)
    js = sfa_current(bands, pulse, 1, 2, x_profile=lambda k: np.full_like(k, 1.0))
    assert np.all(np.isfinite(js.j)) and np.max(np.abs(js.j)) > 0


def test_cutoff_caps_saturate_past_the_gap_maximum():
    bands = band_structure(MATHIEU_SOLID, 513, 4)
    caps = multiband_cutoff_caps(bands, 0.288, 1)
    assert caps.conduction == (2, 3)
    assert np.all(caps.cap >= caps.instantaneous - 1e-12)
    edge = multiband_cutoff_caps(bands, MATHIEU_SOLID.zone_edge * 1.5, 1)
    gaps = bands.energies[:, 2:] - bands.energies[:, [1]]
    assert np.allclose(edge.cap, gaps.max(axis=0), atol=1e-9)
