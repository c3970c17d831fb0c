"""Laser-heated C70 beamline toolkit.

Models the internal-temperature dynamics of fullerenes in a molecular-beam
interferometer: thermal photon emission and radiative cooling, Poisson
photon absorption in the heating stage, Arrhenius thermionic ionization,
inversion of measured ion-yield curves for the triplet absorption cross
section and ionization prefactor, and the resulting loss of near-field
interference visibility.
"""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
