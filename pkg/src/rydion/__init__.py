"""Simulation and fitting toolkit for trapped Rydberg ions."""
from . import crystal, dynamics, errors, fitting, interactions, rydstate, spectra, trap, units

__version__ = "0.1.0"

__all__ = ["crystal", "dynamics", "errors", "fitting", "interactions", "rydstate", "spectra",
           "trap", "units", "__version__"]
