import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlhhg.dynamics import CurrentSeries
from mlhhg.errors import InvalidParameterError
from mlhhg.model import build_pulse
from mlhhg.spectral import (
    Spectrum,
    extract_plateaus,
    fourier_transform,
    gabor_transform,
    harmonic_spectrum,
    spectral_window,
)


@settings(max_examples=25)
@given(st.integers(8, 400), st.floats(0.01, 2.0), st.floats(-50, 50))
def test_parseval(n, dt, t0):
    x = np.cos(np.arange(n) * 0.37) + 0.1 * np.arange(n) % 3
    t = t0 + dt * np.arange(n)
    W, F = fourier_transform(t, x)
    dW = 2 * np.pi / (n * dt)
    assert np.sum(np.abs(F) ** 2) * dW == pytest.approx(np.sum(x**2) * dt, rel=1e-9)


def test_transform_sign_and_phase_convention():
    # a Gaussian centred at t = 5: F(W) = exp(-W^2/2) exp(i 5 W) under exp(+i W t)
    t = np.linspace(-30, 40, 4096, endpoint=False)
    W, F = fourier_transform(t, np.exp(-0.5 * (t - 5) ** 2))
    sel = np.abs(W) < 3
    assert np.allclose(F[sel], np.exp(-0.5 * W[sel] ** 2 + 5j * W[sel]), atol=1e-10)


def test_non_uniform_grid_rejected():
    with pytest.raises(InvalidParameterError):
        fourier_transform(np.array([0.0, 1.0, 3.0]), np.ones(3))


def test_harmonic_orders_of_a_tone():
    pulse = build_pulse(1.0, 0.1, 11)
    t = np.linspace(-pulse.t_max, pulse.t_max, 11 * 1024 + 1)
    spec = harmonic_spectrum(CurrentSeries(t, np.cos(3 * 0.1 * t)), pulse)
    assert spec.order[np.argmax(spec.intensity)] == pytest.approx(3.0, abs=0.05)
    assert np.allclose(spec.energy, spec.order * 0.1)


def test_windows():
    pulse = build_pulse(1.0, 0.1, 4)
    t = np.linspace(-pulse.t_max, pulse.t_max, 101)
    env = spectral_window(t, pulse, "envelope")
    assert env[50] == 1 and env[0] == pytest.approx(0, abs=1e-15)
    assert np.all(spectral_window(t, pulse, "none") == 1)
    assert spectral_window(t, pulse, "hann")[50] == pytest.approx(1)
    with pytest.raises(InvalidParameterError):
        spectral_window(t, pulse, "boxcar")


@pytest.mark.parametrize("W", [0.5, 1.0, 2.0])
def test_gabor_ridge_tracks_tone_with_flat_height(W):
    t = np.linspace(0, 400, 8001)
    energies = np.linspace(0.25, 3.0, 56)
    tf = gabor_transform(t, np.exp(1j * W * t), energies, np.arange(3000, 5000, 500))
    assert np.allclose(tf.ridge(), W, atol=0.05)
    heights = tf.magnitude.max(axis=0)
    assert np.allclose(heights, 2 ** 0.5 * np.pi ** 0.25, rtol=2e-3)


def test_gabor_rejects_nonpositive_energy():
    with pytest.raises(InvalidParameterError):
        gabor_transform(np.arange(10.0), np.ones(10), [0.0, 1.0])


ORDERS = np.arange(0, 120, 0.05)


def step_spectrum(steps=(30.0, 57.0), peaks=True, scale=1.0):
    """Perturbative fall to order 8, a flat top, then two 6- and 8-decade drops."""
    log = np.where(ORDERS < steps[0], 0.0, np.where(ORDERS < steps[1], -6.0, -14.0))
    log = log - np.clip(8 - ORDERS, 0, None)
    if peaks:
        d = np.abs(((ORDERS - 1) % 2) - 1)
        log = log + 2 * np.exp(-((d / 0.15) ** 2))
    return Spectrum(ORDERS, scale * 10**log, 0.1)


@pytest.mark.parametrize("peaks", [True, False])
def test_step_spectrum_cutoffs_at_the_steps(peaks):
    report = extract_plateaus(step_spectrum(peaks=peaks), 2)
    assert report.complete and len(report.plateaus) == 2
    first, second = report.plateaus
    assert abs(first.cutoff - 30) <= 1 and abs(second.cutoff - 57) <= 1
    assert abs(first.onset - 8) <= 1.5
    # the slope window (2 orders each side) delays the onset after a vertical step
    assert 30 <= second.onset <= 33.5
    assert first.median_log == pytest.approx(0, abs=0.05)
    assert second.median_log == pytest.approx(-6, abs=0.05)


@settings(max_examples=20, deadline=None)
@given(st.floats(-12, 12))
def test_extraction_is_scale_invariant(log_scale):
    base = extract_plateaus(step_spectrum(), 2).plateaus
    scaled = extract_plateaus(step_spectrum(scale=10**log_scale), 2).plateaus
    assert [(p.onset, p.cutoff) for p in scaled] == [(p.onset, p.cutoff) for p in base]
    for a, b in zip(scaled, base):
        assert a.median_log - b.median_log == pytest.approx(log_scale, abs=1e-9)


def test_missing_plateau_warns_not_raises():
    flat = Spectrum(ORDERS, 10 ** np.where(ORDERS < 30, 0.0, -14.0), 0.1)
    with pytest.warns(UserWarning, match="expected 3"):
        report = extract_plateaus(flat, 3)
    assert not report.complete and len(report.plateaus) == 1
    assert report.to_dict()["warning"].startswith("found 1")


def test_pure_decay_has_no_plateau():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = extract_plateaus(Spectrum(ORDERS, 10 ** (-0.5 * ORDERS), 0.1), 1)
    assert report.plateaus == ()


def test_two_level_run_extraction(fig1_run):
    *_, spec = fig1_run
    (p,) = extract_plateaus(spec, 1).plateaus
    assert abs(p.onset - 10) <= 2 and abs(p.cutoff - 41.23) <= 2
