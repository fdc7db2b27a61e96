"""Independent reference calculations used by the tests.

Nothing here calls the package routine it is meant to check.
"""
import numpy as np
from scipy.constants import e, epsilon_0, hbar, physical_constants

A0 = physical_constants["Bohr radius"][0]
K = 1.0 / (4.0 * np.pi * epsilon_0)


def hydrogen_mean_radius(n, L):
    """<r> of a hydrogen eigenstate in metres."""
    return A0 * (3 * n**2 - L * (L + 1)) / 2.0


def two_ion_half_spacing():
    """Equilibrium z of two equal ions in units of the length scale."""
    return 0.25 ** (1.0 / 3.0)


def three_ion_axial_ratios():
    return np.array([1.0, np.sqrt(3.0), np.sqrt(29.0 / 5.0)])


def three_ion_zigzag_ratio():
    """Critical omega_r / omega_z for three ions."""
    return np.sqrt(12.0 / 5.0)


def min_spacing_formula(N):
    return 2.018 / N**0.559


def time_domain_sidebands(beta_mm, beta_alpha, kmax=40, samples=2048, phases=64):
    """Sideband weights from the FFT of exp(i * phase(t)) over one RF period.

    The instantaneous detuning is a Doppler term beta_mm*W*sin(Wt + theta)
    plus the oscillating half of the Stark term, -(4 beta_alpha W) cos^2(Wt)
    minus its mean. The weights are averaged over the Doppler phase theta.
    Returns ({order k: weight}, carrier offset in units of W).
    """
    tau = np.arange(samples) / samples * 2.0 * np.pi        # W t over one period
    weights = np.zeros(2 * kmax + 1)
    for theta in np.linspace(0.0, 2.0 * np.pi, phases, endpoint=False):
        # analytic time integral of the zero-mean detuning, in units of 1
        phase = -beta_mm * np.cos(tau + theta) - beta_alpha * np.sin(2.0 * tau)
        c = np.fft.fft(np.exp(1j * phase)) / samples
        # exp(i phase) = sum_k c_k exp(i k W t): the laser sees a line at -k W
        for k in range(-kmax, kmax + 1):
            weights[k + kmax] += abs(c[k % samples]) ** 2
    weights /= phases
    return {k: weights[k + kmax] for k in range(-kmax, kmax + 1)}, -2.0 * beta_alpha


def driven_oscillator_phase(force, omega, t_end, mass_free=True, steps=20001):
    """Numerically integrate beta(t) = -(i/hbar) int F e^{i w t} and the phase
    Im int beta_dot beta* dt with Simpson's rule on a fine grid."""
    t = np.linspace(0.0, t_end, steps)
    f = np.array([force(tt) for tt in t])
    integrand = -1j / hbar * f * np.exp(1j * omega * t)
    beta = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    phase = np.trapezoid(np.imag(integrand * np.conj(beta)), t)
    return beta[-1], phase


def coulomb_pair(Ri, Rj, ri, rj):
    """Direct sum over the four charges of two singly-charged Rydberg ions
    (core +2e at R, electron -e at R + r)."""
    charges_i = [(2 * e, np.asarray(Ri, float)), (-e, np.asarray(Ri, float) + ri)]
    charges_j = [(2 * e, np.asarray(Rj, float)), (-e, np.asarray(Rj, float) + rj)]
    return sum(K * qa * qb / np.linalg.norm(pa - pb) for qa, pa in charges_i for qb, pb in charges_j)


def rabi_two_level(omega, t):
    return np.sin(omega * t / 2.0) ** 2


def franck_condon_from_zero(beta, n):
    from math import factorial
    return np.exp(-beta**2) * beta ** (2 * n) / factorial(n)
