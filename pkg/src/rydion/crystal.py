"""Coulomb crystals: equilibrium, normal modes, Lamb-Dicke factors,
sidebands, the zigzag transition and Franck-Condon factors."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_genlaguerre, gammaln
from sklearn.base import BaseEstimator, TransformerMixin

from . import trap as trapmod
from .errors import (CollapsedPair, ConfigError, ImaginaryMode, NoConvergence, NoLowerState,
                     NotApplicable, NotAtEquilibrium)
from .units import COULOMB_K, E_CHARGE, HBAR


@dataclass(frozen=True)
class HarmonicTrap:
    """Trap given directly by the secular frequencies (rad/s) of a reference
    species. Other species scale as sqrt(charge/mass)."""

    omega_x: float
    omega_y: float
    omega_z: float
    reference: trapmod.IonSpecies = trapmod.CA40

    def frequencies(self, ion):
        scale = np.sqrt(ion.charge_number * self.reference.mass / (self.reference.charge_number * ion.mass))
        return tuple(float(w * scale) for w in (self.omega_x, self.omega_y, self.omega_z))


@dataclass(frozen=True)
class Tag:
    """Electronic state of an ion: ``ground``, ``rydberg`` (with second-order
    sum ``nu2`` in m^2/J) or ``doubly_charged``. ``omega`` overrides the
    per-axis frequencies outright (used for pinned ions)."""

    kind: str = "ground"
    nu2: float = 0.0
    omega: tuple = None

    def __post_init__(self):
        if self.kind not in ("ground", "rydberg", "doubly_charged"):
            raise ConfigError(f"unknown electronic tag {self.kind!r}")


GROUND = Tag()


def ion_frequencies(trap, ion, tag=GROUND):
    """Per-axis secular frequencies of ``ion`` in electronic state ``tag``."""
    if tag.omega is not None:
        return tuple(float(w) for w in tag.omega)
    species = ion.doubly_charged() if tag.kind == "doubly_charged" and ion.charge_number == 1 else ion
    if isinstance(trap, HarmonicTrap):
        if tag.kind == "rydberg" and tag.nu2 != 0:
            raise ConfigError("Rydberg shifts need a TrapConfig; give Tag.omega instead")
        return trap.frequencies(species)
    if tag.kind == "rydberg":
        return trapmod.rydberg_secular_frequencies(trap, species, tag.nu2)
    return trapmod.secular_frequencies(trap, species)


def length_scale(ion, omega_z):
    """l = (Z^2 e^2 / (4 pi eps0 M omega_z^2))^(1/3)."""
    return (COULOMB_K * (ion.charge_number * E_CHARGE) ** 2 / (ion.mass * omega_z**2)) ** (1.0 / 3.0)


def min_spacing_estimate(N, omega_z, ion):
    """Empirical minimum spacing of an N-ion linear chain (m)."""
    if N < 2:
        raise ConfigError("need at least two ions")
    return length_scale(ion, omega_z) * 2.018 / N**0.559


@dataclass
class Crystal:
    ions: list
    tags: list
    trap: object
    positions: np.ndarray
    length_scale: float
    frequencies: np.ndarray
    charges: np.ndarray = field(repr=False, default=None)
    masses: np.ndarray = field(repr=False, default=None)
    omega_ref: float = 0.0

    @property
    def N(self):
        return len(self.ions)

    def _dimensionless(self):
        m_rel = self.masses / self.masses[0]
        kappa = m_rel[:, None] * (self.frequencies / self.omega_ref) ** 2
        c = np.outer(self.charges, self.charges) / self.charges[0] ** 2
        return m_rel, kappa, c

    def gradient(self, u=None):
        _, kappa, c = self._dimensionless()
        u = self.positions / self.length_scale if u is None else u
        return _gradient(u, kappa, c)

    def hessian(self):
        _, kappa, c = self._dimensionless()
        return _hessian(self.positions / self.length_scale, kappa, c)


def _pair_terms(u):
    d = u[:, None, :] - u[None, :, :]
    r = np.linalg.norm(d, axis=2)
    np.fill_diagonal(r, np.inf)
    return d, r


def _energy(u, kappa, c):
    _, r = _pair_terms(u)
    return 0.5 * np.sum(kappa * u**2) + np.sum(np.triu(c / r, 1))


def _gradient(u, kappa, c):
    d, r = _pair_terms(u)
    return kappa * u - np.sum((c / r**3)[:, :, None] * d, axis=1)


def _hessian(u, kappa, c):
    n = u.shape[0]
    d, r = _pair_terms(u)
    h = np.zeros((3 * n, 3 * n))
    eye = np.eye(3)
    for i in range(n):
        block_ii = np.diag(kappa[i])
        for j in range(n):
            if i == j:
                continue
            dd = d[i, j]
            t = c[i, j] * (3.0 * np.outer(dd, dd) / r[i, j] ** 5 - eye / r[i, j] ** 3)
            block_ii = block_ii + t
            h[3 * i:3 * i + 3, 3 * j:3 * j + 3] = -t
        h[3 * i:3 * i + 3, 3 * i:3 * i + 3] = block_ii
    return h


def _newton(u, kappa, c, linear, max_steps=200, tol=1e-12):
    e = _energy(u, kappa, c)
    for _ in range(max_steps):
        g = _gradient(u, kappa, c)
        if linear:
            g[:, :2] = 0.0
        gn = np.linalg.norm(g)
        if gn < tol:
            return u, True
        h = _hessian(u, kappa, c)
        if linear:
            idx = np.arange(u.shape[0]) * 3 + 2
            step = np.zeros(u.size)
            sub = h[np.ix_(idx, idx)]
            w, v = np.linalg.eigh(sub)
            step[idx] = -v @ ((v.T @ g[:, 2]) / np.maximum(np.abs(w), 1e-8))
        else:
            w, v = np.linalg.eigh(h)
            step = -v @ ((v.T @ g.ravel()) / np.maximum(np.abs(w), 1e-8))
        step = step.reshape(u.shape)
        t = 1.0
        while t > 1e-10:
            trial = u + t * step
            _, r = _pair_terms(trial)
            if np.all(r > 1e-6):
                et = _energy(trial, kappa, c)
                gt = np.linalg.norm(_gradient(trial, kappa, c))
                if et <= e + 1e-14 * abs(e) or gt < gn:
                    break
            t *= 0.5
        u, e = trial, et
    g = _gradient(u, kappa, c)
    if linear:
        g[:, :2] = 0.0
    return u, np.linalg.norm(g) < tol


def equilibrium_positions(trap, ions, tags=None, seed=0, linear=None, restarts=20):
    """Solve for the crystal equilibrium.

    ``ions`` is a list of ``IonSpecies``; ``tags`` an optional list of
    ``Tag``. With ``linear=True`` the ions are kept on the z axis even if a
    transverse mode is unstable (needed for the zigzag search). By default a
    chain that turns out to be a saddle is relaxed into the stable 2D/3D
    structure. Positions are returned sorted by z.
    """
    ions = list(ions)
    if not ions:
        raise ConfigError("crystal needs at least one ion")
    tags = [GROUND] * len(ions) if tags is None else list(tags)
    if len(tags) != len(ions):
        raise ConfigError("one tag per ion required")
    freqs = np.array([ion_frequencies(trap, ion, tag) for ion, tag in zip(ions, tags)])
    species = [ion.doubly_charged() if t.kind == "doubly_charged" and ion.charge_number == 1 else ion
               for ion, t in zip(ions, tags)]
    charges = np.array([s.charge_number for s in species], float)
    masses = np.array([s.mass for s in species])
    omega_ref = freqs[0, 2] if freqs[0, 2] <= freqs[0, :2].min() or linear else freqs[0].min()
    l = length_scale(species[0], omega_ref)
    kappa = (masses / masses[0])[:, None] * (freqs / omega_ref) ** 2
    c = np.outer(charges, charges) / charges[0] ** 2
    n = len(ions)
    weak = int(np.argmin(kappa[0])) if not linear else 2
    if linear is None:
        linear = False
    if linear:
        weak = 2
    rng = np.random.default_rng(seed)
    spacing = 2.018 / n**0.559 if n > 1 else 1.0
    u = None
    for attempt in range(restarts + 1):
        u0 = np.zeros((n, 3))
        u0[:, weak] = (np.arange(n) - (n - 1) / 2.0) * spacing
        jitter = 1e-3 * (1 + attempt)
        u0[:, weak] += rng.normal(0, jitter, n)
        if not linear:
            u0 += rng.normal(0, jitter, (n, 3)) * (attempt > 0)
        trial, ok = _newton(u0, kappa, c, linear)
        if not ok:
            continue
        if not linear:
            # escape saddles: follow the softest unstable direction
            for _ in range(3 * n):
                h = _hessian(trial, kappa, c)
                mw = np.repeat(np.sqrt(masses / masses[0]), 3)
                w, v = np.linalg.eigh(h / np.outer(mw, mw))
                if w[0] > -1e-9 * max(1.0, abs(w[-1])):
                    break
                kick = (v[:, 0] / mw).reshape(n, 3)
                trial, ok = _newton(trial + 0.1 * kick / np.abs(kick).max(), kappa, c, False)
                if not ok:
                    break
            if not ok:
                continue
        u = trial
        break
    if u is None:
        raise NoConvergence("equilibrium search failed after restarts")
    _, r = _pair_terms(u)
    if n > 1 and r.min() < 1e-3:
        raise CollapsedPair(f"ions closer than 1e-3 l ({r.min():.3g} l)")
    order = np.lexsort((u[:, 0], u[:, 1], u[:, 2]))
    pos = u[order] * l
    return Crystal([ions[i] for i in order], [tags[i] for i in order], trap, pos, l,
                   freqs[order], charges[order], masses[order], omega_ref)


@dataclass
class ModeDecomposition:
    frequencies: np.ndarray
    eigenvectors: np.ndarray
    masses: np.ndarray
    hessian: np.ndarray = field(repr=False, default=None)

    def ion_vector(self, mode, ion):
        """Mass-weighted eigenvector components (3,) of ``ion`` in ``mode``."""
        return self.eigenvectors[3 * ion:3 * ion + 3, mode]

    def dominant_axis(self, mode):
        v = self.eigenvectors[:, mode].reshape(-1, 3)
        return int(np.argmax(np.sum(v**2, axis=0)))

    def modes_along(self, axis):
        return [m for m in range(self.frequencies.size) if self.dominant_axis(m) == axis]

    def ion_weights(self, mode):
        v = self.eigenvectors[:, mode].reshape(-1, 3)
        return np.sum(v**2, axis=1)


def normal_modes(crystal, check_equilibrium=True):
    """Diagonalise the mass-weighted Hessian of ``crystal``.

    Frequencies (rad/s) ascend; eigenvector columns are orthonormal in
    mass-weighted coordinates. Raises ``ImaginaryMode`` for a saddle.
    """
    scale = COULOMB_K * (crystal.charges[0] * E_CHARGE) ** 2 / crystal.length_scale**2
    if check_equilibrium and crystal.N > 1:
        g = crystal.gradient()
        if np.linalg.norm(g) > 1e-10 * max(1.0, np.abs(crystal.positions).max() / crystal.length_scale):
            raise NotAtEquilibrium(f"gradient norm {np.linalg.norm(g):.3g} (units of {scale:.3g} N)")
    h = crystal.hessian()
    m_rel = crystal.masses / crystal.masses[0]
    mw = np.repeat(np.sqrt(m_rel), 3)
    hm = h / np.outer(mw, mw)
    hm = 0.5 * (hm + hm.T)
    w, v = np.linalg.eigh(hm)
    tol = 1e-9 * max(1.0, np.abs(w).max())
    if w[0] < -tol:
        raise ImaginaryMode(f"unstable mode with omega^2 = {w[0]:.4g} omega_ref^2", w[0], v[:, 0])
    freqs = crystal.omega_ref * np.sqrt(np.clip(w, 0.0, None))
    return ModeDecomposition(freqs, v, crystal.masses, hm)


def lamb_dicke(k_effective, mode_frequency, mode_vector, ion_mass):
    """eta = sqrt(hbar / (2 M omega)) k . e for one ion and one mode."""
    if not mode_frequency > 0:
        raise ConfigError("mode frequency must be positive")
    k = np.asarray(k_effective, float)
    e = np.asarray(mode_vector, float)
    return float(np.sqrt(HBAR / (2.0 * ion_mass * mode_frequency)) * np.dot(k, e))


def wavevector(wavelength, direction=(0.0, 0.0, 1.0)):
    d = np.asarray(direction, float)
    return 2.0 * np.pi / wavelength * d / np.linalg.norm(d)


def sideband_rabi(eta, n, branch, omega0):
    """Carrier, red or blue sideband Rabi frequency to first order in eta."""
    if n < 0:
        raise ConfigError("phonon number must be non-negative")
    if branch == "carrier":
        return (1.0 - eta**2 * n) * omega0
    if branch == "red":
        if n == 0:
            raise NoLowerState("red sideband needs n >= 1")
        return eta * np.sqrt(n) * omega0
    if branch == "blue":
        return eta * np.sqrt(n + 1) * omega0
    raise ConfigError(f"unknown sideband branch {branch!r}")


def mode_shaping_report(crystal, modes=None, threshold=0.9):
    """Participation ratios and segment weights of every mode.

    Segments are the runs of ions between Rydberg-tagged ions (chain order).
    A mode is flagged localized when more than ``threshold`` of its weight
    sits in a single segment.
    """
    modes = normal_modes(crystal) if modes is None else modes
    tagged = [i for i, t in enumerate(crystal.tags) if t.kind == "rydberg" or t.omega is not None]
    bounds = [-1] + tagged + [crystal.N]
    segments = [list(range(a + 1, b)) for a, b in zip(bounds[:-1], bounds[1:]) if b - a > 1]
    report = []
    for m in range(modes.frequencies.size):
        w = modes.ion_weights(m)
        seg_w = [float(w[s].sum()) for s in segments]
        best = int(np.argmax(seg_w)) if segments else -1
        localized = bool(tagged) and best >= 0 and seg_w[best] > threshold
        report.append({
            "mode": m,
            "frequency": float(modes.frequencies[m]),
            "participation": float(1.0 / np.sum(w**2)),
            "segment_weights": seg_w,
            "localized_segment": segments[best] if localized else None,
        })
    return report


def _linear_chain_stable(N, ion, omega_z, omega_r):
    trap = HarmonicTrap(omega_r, omega_r, omega_z, ion)
    crystal = equilibrium_positions(trap, [ion] * N, linear=True)
    try:
        normal_modes(crystal)
    except ImaginaryMode:
        return False
    return True


def zigzag_critical_anisotropy(N, ion=trapmod.CA40, omega_z=2 * np.pi * 1e6, tol=1e-4):
    """Anisotropy (omega_z / omega_r)^2 at which the linear chain buckles."""
    if N < 3:
        raise NotApplicable("two ions never leave the weakest axis")
    lo, hi = omega_z * 1.0001, omega_z * 2.0 * N
    while not _linear_chain_stable(N, ion, omega_z, hi):
        hi *= 2.0
    if _linear_chain_stable(N, ion, omega_z, lo):
        return 1.0
    while (omega_z / lo) ** 2 - (omega_z / hi) ** 2 > tol:
        mid = 0.5 * (lo + hi)
        if _linear_chain_stable(N, ion, omega_z, mid):
            hi = mid
        else:
            lo = mid
    return float((omega_z / (0.5 * (lo + hi))) ** 2)


def franck_condon(displacement_beta, n_from, n_to):
    """|<n_to| D(beta) |n_from>|^2 for equal-frequency displaced oscillators."""
    if n_from < 0 or n_to < 0:
        raise ConfigError("phonon numbers must be non-negative")
    b2 = float(displacement_beta) ** 2
    lo, hi = min(n_from, n_to), max(n_from, n_to)
    dn = hi - lo
    if b2 == 0.0:
        return 1.0 if dn == 0 else 0.0
    log_pref = gammaln(lo + 1) - gammaln(hi + 1) + dn * np.log(b2) - b2
    lag = eval_genlaguerre(lo, dn, b2)
    return float(np.exp(log_pref) * lag**2)


class NormalModeTransformer(BaseEstimator, TransformerMixin):
    """Project ion displacements (rows of 3N coordinates, m) onto normal
    mode coordinates of a crystal fitted from a trap and species list."""

    def __init__(self, trap=None, ions=None, tags=None, mass_weighted=True):
        self.trap = trap
        self.ions = ions
        self.tags = tags
        self.mass_weighted = mass_weighted

    def fit(self, X=None, y=None):
        if self.trap is None or not self.ions:
            raise ValueError("trap and ions must be set")
        self.crystal_ = equilibrium_positions(self.trap, self.ions, self.tags)
        self.modes_ = normal_modes(self.crystal_)
        self.frequencies_ = self.modes_.frequencies
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_array, check_is_fitted
        check_is_fitted(self, "modes_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 3 * self.crystal_.N:
            raise ValueError(f"expected {3 * self.crystal_.N} columns")
        w = np.repeat(np.sqrt(self.crystal_.masses), 3) if self.mass_weighted else 1.0
        return (X * w) @ self.modes_.eigenvectors
