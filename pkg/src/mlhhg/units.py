"""Atomic-unit conversions used at the CLI and config boundary."""

import numpy as np

HARTREE_EV = 27.211386245988
BOHR_NM = 0.0529177210903
SPEED_OF_LIGHT_AU = 137.035999084
# I[W/cm^2] = E0[au]^2 * INTENSITY_AU_WCM2
INTENSITY_AU_WCM2 = 3.50944758e16


def ev_to_au(energy_ev):
    return np.asarray(energy_ev, dtype=float) / HARTREE_EV


def au_to_ev(energy_au):
    return np.asarray(energy_au, dtype=float) * HARTREE_EV


def wavelength_nm_to_omega(lambda_nm):
    """Carrier angular frequency in au for a vacuum wavelength in nm."""
    lambda_bohr = lambda_nm / BOHR_NM
    return 2.0 * np.pi * SPEED_OF_LIGHT_AU / lambda_bohr


def intensity_to_field(intensity_wcm2):
    """Peak field (au) of a linearly polarized beam of the given peak intensity."""
    return float(np.sqrt(intensity_wcm2 / INTENSITY_AU_WCM2))


def field_to_intensity(E0):
    return float(E0) ** 2 * INTENSITY_AU_WCM2
