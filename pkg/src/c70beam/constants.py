"""Physical constants and shared unit helpers.

Internal unit system: energies in eV, times in s, temperatures in K,
lengths in m.  Cross sections are carried in cm^2 (the unit used by the
tabulated absorption data), so the speed of light appears both in m/s
and cm/s.
"""

import math

K_B_EV = 8.617333262e-5        # Boltzmann constant, eV/K
K_B_J = 1.380649e-23           # Boltzmann constant, J/K
HBAR_EV_S = 6.582119569e-16    # reduced Planck constant, eV s
H_EV_S = 4.135667696e-15       # Planck constant, eV s
H_J_S = 6.62607015e-34         # Planck constant, J s
C_M_S = 2.99792458e8           # speed of light, m/s
C_CM_S = 2.99792458e10         # speed of light, cm/s
EV_NM = H_EV_S * C_M_S * 1e9   # photon energy [eV] * wavelength [nm]
AMU_KG = 1.66053906660e-27     # atomic mass unit, kg

# C70 molecule
C70_MASS_U = 840.0
C70_MASS_KG = C70_MASS_U * AMU_KG
C70_HEAT_CAPACITY_EV_K = 202.0 * K_B_EV   # vibrational heat capacity, ~constant 1000-3000 K
C70_GAP_EV = 1.6                          # HOMO-LUMO gap; no emission below


def photon_energy_ev(wavelength_m: float) -> float:
    """Photon energy in eV for a vacuum wavelength in m."""
    return H_EV_S * C_M_S / wavelength_m


def photon_temperature_kick(wavelength_m: float,
                            heat_capacity_ev_k: float = C70_HEAT_CAPACITY_EV_K) -> float:
    """Internal-temperature increase per absorbed photon, K.

    One photon deposits its full energy into the vibrational bath:
    dT = E_photon / C_V.
    """
    return photon_energy_ev(wavelength_m) / heat_capacity_ev_k


def most_probable_speed(temperature_k: float, mass_u: float = C70_MASS_U) -> float:
    """Most probable speed sqrt(2 kT / m) of molecules in the oven, m/s."""
    return math.sqrt(2.0 * K_B_J * temperature_k / (mass_u * AMU_KG))


def de_broglie_wavelength(velocity_m_s: float, mass_u: float = C70_MASS_U) -> float:
    """de Broglie wavelength h/(m v), m."""
    return H_J_S / (mass_u * AMU_KG * velocity_m_s)
