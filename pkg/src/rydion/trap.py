"""Linear Paul trap: fields, pseudopotential, secular frequencies and the
polarizability-induced changes of the ion's motion."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, Singular, Unstable
from .units import AMU, E_CHARGE, HBAR

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge_number: int = 1
    label: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigError(f"ion mass must be positive, got {self.mass}")
        if self.charge_number not in (1, 2):
            raise ConfigError(f"charge_number must be 1 or 2, got {self.charge_number}")

    @property
    def charge(self):
        return self.charge_number * E_CHARGE

    def doubly_charged(self):
        return IonSpecies(self.mass, 2, self.label + "2+")


CA40 = IonSpecies(39.962590863 * AMU, 1, "40Ca+")
SR88 = IonSpecies(87.9056121 * AMU, 1, "88Sr+")
SPECIES = {"Ca40": CA40, "40Ca+": CA40, "Sr88": SR88, "88Sr+": SR88,
           "Ca40++": CA40.doubly_charged(), "40Ca2+": CA40.doubly_charged()}


@dataclass(frozen=True)
class TrapConfig:
    """RF gradient ``gamma_prime``, static gradient ``gamma`` (both V/m^2),
    radial asymmetry ``epsilon``, drive ``omega_rf`` (rad/s), RF phase
    imbalance ``phi_rf``, stray field ``e_stray`` and residual RF field
    ``e0`` at the centre (V/m vectors)."""

    gamma_prime: float
    gamma: float
    omega_rf: float
    epsilon: float = 0.0
    phi_rf: float = 0.0
    e_stray: tuple = (0.0, 0.0, 0.0)
    e0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.omega_rf > 0:
            raise ConfigError("omega_rf must be positive")
        if self.gamma_prime < 0:
            raise ConfigError("gamma_prime must be non-negative")
        object.__setattr__(self, "e_stray", tuple(float(v) for v in np.broadcast_to(self.e_stray, 3)))
        object.__setattr__(self, "e0", tuple(float(v) for v in np.broadcast_to(self.e0, 3)))

    @property
    def rf_geometry(self):
        # coefficients of X^2, Y^2, Z^2 in the RF potential; sum is zero
        return np.array([1.0, -1.0, 0.0]) * self.gamma_prime

    @property
    def static_geometry(self):
        return -np.array([1.0 + self.epsilon, 1.0 - self.epsilon, -2.0]) * self.gamma


def trap_for_frequencies(ion, omega_radial, omega_z, omega_rf, epsilon=0.0, **extra):
    """Gradients that give the requested secular frequencies for ``ion``.

    ``omega_radial`` is the mean radial frequency (exact for epsilon = 0).
    """
    q = ion.charge
    gamma = ion.mass * omega_z**2 / (4.0 * q)
    rf_sq = omega_radial**2 + 2.0 * q * gamma / ion.mass
    gamma_prime = np.sqrt(rf_sq * ion.mass**2 * omega_rf**2 / (2.0 * q**2))
    return TrapConfig(float(gamma_prime), float(gamma), float(omega_rf), epsilon, **extra)


def _radicands(trap, ion):
    q, m = ion.charge, ion.mass
    rf = 2.0 * q**2 * trap.gamma_prime**2 / (m**2 * trap.omega_rf**2)
    return np.array([
        rf - 2.0 * q * trap.gamma * (1.0 + trap.epsilon) / m,
        rf - 2.0 * q * trap.gamma * (1.0 - trap.epsilon) / m,
        4.0 * q * trap.gamma / m,
    ])


def secular_frequencies(trap, ion):
    """(omega_x, omega_y, omega_z) in rad/s; raises ``Unstable`` if any
    direction is not confining."""
    rad = _radicands(trap, ion)
    bad = [AXES[i] for i in range(3) if not rad[i] > 0]
    if bad:
        raise Unstable(f"{ion.label or 'ion'} not confined along {', '.join(bad)}")
    return tuple(float(v) for v in np.sqrt(rad))


def trap_potential(trap, position, t):
    """Electric potential (V) at ``position`` and time ``t``."""
    r2 = np.asarray(position, float) ** 2
    rf = np.dot(trap.rf_geometry, r2) * np.cos(trap.omega_rf * t)
    return rf + np.dot(trap.static_geometry, r2)


def trap_field(trap, position, t):
    """Instantaneous electric field (V/m) including stray and RF phase
    imbalance terms."""
    pos = np.asarray(position, float)
    rf = -2.0 * trap.rf_geometry * pos * np.cos(trap.omega_rf * t)
    static = -2.0 * trap.static_geometry * pos
    imbalance = np.asarray(trap.e0) * trap.phi_rf * np.sin(trap.omega_rf * t)
    return rf + static + imbalance + np.asarray(trap.e_stray)


def field_divergence(trap, position, t, step=None):
    """Central-difference divergence of ``trap_field``."""
    pos = np.asarray(position, float)
    if step is None:
        step = 1e-7 * max(1e-6, float(np.linalg.norm(pos)))
    div = 0.0
    for i in range(3):
        dp = np.zeros(3)
        dp[i] = step
        div += (trap_field(trap, pos + dp, t)[i] - trap_field(trap, pos - dp, t)[i]) / (2 * step)
    return div


def pseudopotential(trap, ion, position):
    """Analytic secular potential energy (J): static part plus the RF
    ponderomotive term, without stray fields."""
    pos = np.asarray(position, float)
    q, m = ion.charge, ion.mass
    static = q * np.dot(trap.static_geometry, pos**2)
    ponder = q**2 * trap.gamma_prime**2 * (pos[0] ** 2 + pos[1] ** 2) / (m * trap.omega_rf**2)
    return static + ponder


def averaged_potential(trap, ion, position, samples=64):
    """Secular potential energy from a numerical average over one RF period.

    The ponderomotive part is q^2 <E_rf^2> / (2 M Omega^2), with the mean
    square of the oscillating field taken over ``samples`` phases.
    """
    pos = np.asarray(position, float)
    phases = np.arange(samples) * 2.0 * np.pi / samples
    quiet = TrapConfig(trap.gamma_prime, trap.gamma, trap.omega_rf, trap.epsilon)
    static = trap_field(quiet, pos, np.pi / (2.0 * trap.omega_rf))
    fields = np.array([trap_field(quiet, pos, p / trap.omega_rf) for p in phases]) - static
    mean_sq = np.mean(np.sum(fields**2, axis=1))
    q = ion.charge
    static_energy = q * np.dot(trap.static_geometry, pos**2)
    return static_energy + q**2 * mean_sq / (2.0 * ion.mass * trap.omega_rf**2)


def stray_displacement(trap, ion, axis):
    """Static off-centre shift (m) along ``axis`` (0, 1, 2 or 'x', 'y', 'z')."""
    i = AXES.index(axis) if isinstance(axis, str) else int(axis)
    omega = secular_frequencies(trap, ion)[i]
    return ion.charge * trap.e_stray[i] / (ion.mass * omega**2)


def _shift_coefficients(trap):
    g2 = trap.gamma**2
    return np.array([
        4.0 * trap.gamma_prime**2 + 8.0 * g2 * (1.0 + trap.epsilon) ** 2,
        4.0 * trap.gamma_prime**2 + 8.0 * g2 * (1.0 - trap.epsilon) ** 2,
        8.0 * g2,
    ]) * E_CHARGE**2


def rydberg_frequency_shift(trap, ion, nu2):
    """Magnitudes (dw_x, dw_y, dw_z) of the polarizability frequency shifts.

    ``nu2`` is the second-order sum (m^2/J) of the Rydberg electron.
    """
    if not np.isfinite(nu2):
        raise ConfigError("nu2 must be finite")
    return tuple(float(v) for v in np.sqrt(_shift_coefficients(trap) * abs(nu2) / ion.mass))


def rydberg_secular_frequencies(trap, ion, nu2):
    """Secular frequencies of an ion whose electron has second-order sum
    ``nu2``: omega'^2 = omega^2 + sign(nu2) dw^2."""
    rad = _radicands(trap, ion) + _shift_coefficients(trap) * nu2 / ion.mass
    bad = [AXES[i] for i in range(3) if not rad[i] > 0]
    if bad:
        raise Unstable(f"Rydberg state not confined along {', '.join(bad)}")
    return tuple(float(v) for v in np.sqrt(rad))


def nu2_from_polarizability(alpha):
    """Second-order sum corresponding to a static polarizability (C^2 m^2/J)."""
    return -alpha / (2.0 * E_CHARGE**2)


def stark_shift_weak(n_x, n_y, omega_ground, omega_rydberg):
    """Motional-state dependent line shift (J) for per-axis frequencies
    ``omega_ground`` and ``omega_rydberg`` (only x and y are used)."""
    if n_x < 0 or n_y < 0:
        raise ConfigError("phonon numbers must be non-negative")
    dx = omega_rydberg[0] - omega_ground[0]
    dy = omega_rydberg[1] - omega_ground[1]
    return (n_x + 0.5) * HBAR * dx + (n_y + 0.5) * HBAR * dy


def stark_shift_strong(alpha, trap, ion, x_d, y_d):
    """Stark shift (J) of a displaced ion and its shifted equilibrium x."""
    omega_x = secular_frequencies(trap, ion)[0]
    denom = 1.0 - 2.0 * alpha * trap.gamma_prime**2 / (ion.mass * omega_x**2)
    if abs(denom) < 1e-12:
        raise Singular("polarizability cancels the radial confinement")
    shifted = x_d / denom
    return -alpha * trap.gamma_prime**2 * (x_d**2 + y_d**2), shifted
