import pytest


def approx(expected, rel=1e-6, abs=0.0):
    """pytest.approx without its hidden 1e-12 absolute tolerance, which
    swallows SI quantities such as energies in J."""
    return pytest.approx(expected, rel=rel, abs=abs)
