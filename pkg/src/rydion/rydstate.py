"""Rydberg levels of singly-charged ions in a single-channel quantum-defect
model: energies, radial integrals, polarizabilities, quadrupole moments,
scaling laws and Rydberg-Ritz series fitting."""
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from sympy.physics.wigner import wigner_3j, wigner_6j

from .errors import ConfigError, DataFileMissing, IllConditioned, NoConvergence, UnknownProperty
from .fitting import levenberg_marquardt
from .units import A0, AMU, E_CHARGE, FINE_STRUCTURE, H_PLANCK, M_ELECTRON, RYDBERG_ENERGY


@dataclass(frozen=True)
class RydbergLevel:
    n: int
    L: int
    J: float
    m_j: float = None

    def __post_init__(self):
        if self.m_j is None:
            object.__setattr__(self, "m_j", self.J)
        if not (self.n > self.L >= 0):
            raise ConfigError(f"need n > L >= 0, got n={self.n}, L={self.L}")
        if abs(abs(self.J - self.L) - 0.5) > 1e-9:
            raise ConfigError(f"J={self.J} incompatible with L={self.L}")
        if abs(self.m_j) > self.J + 1e-9 or abs((self.m_j - self.J) % 1.0) > 1e-9:
            raise ConfigError(f"m_j={self.m_j} invalid for J={self.J}")

    @property
    def label(self):
        return f"{self.n}{'SPDFGHIK'[self.L] if self.L < 8 else 'L' + str(self.L)}{int(2 * self.J)}/2"


@dataclass
class QuantumDefectModel:
    """Per-series defects ``{(L, J): (mu0, mu1, dmu_dE)}`` plus the double
    ionization limit (J, from the ion ground state), reduced Rydberg energy
    and core charge. Series missing from the table are hydrogenic."""

    series: dict
    ionization_limit: float
    reduced_rydberg: float
    core_charge: int = 2
    species: str = ""
    parameterization: str = "mu1"

    def __post_init__(self):
        if not self.ionization_limit > 0:
            raise ConfigError("ionization_limit must be positive")
        if self.parameterization not in ("mu1", "mu0"):
            raise ConfigError("parameterization must be 'mu1' or 'mu0'")

    def defects(self, L, J):
        return self.series.get((int(L), float(J)), (0.0, 0.0, 0.0))


def _data_path(name):
    return resources.files("rydion") / "data" / name


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8") if not hasattr(path, "read_text") else path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataFileMissing(str(path)) from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.reader(lines))


def load_model(species, defects_file=None, species_file=None, parameterization="mu1"):
    """Build a ``QuantumDefectModel`` for ``species`` from the data files."""
    species_rows = _read_rows(species_file or _data_path("species.csv"))
    info = {r[0].strip(): r[1:] for r in species_rows}
    if species not in info:
        raise ConfigError(f"species {species!r} not in species table")
    mass_amu, limit, charge = info[species]
    core_mass = float(mass_amu) * AMU - M_ELECTRON
    reduced = RYDBERG_ENERGY / (1.0 + M_ELECTRON / core_mass)
    series = {}
    for row in _read_rows(defects_file or _data_path("quantum_defects.csv")):
        if row[0].strip() != species:
            continue
        L, J, mu0, mu1, dmu = row[1:6]
        series[(int(L), float(J))] = (float(mu0), float(mu1), float(dmu))
    if not series:
        raise ConfigError(f"no quantum defects for {species!r}")
    return QuantumDefectModel(series, float(limit), reduced, int(charge), species, parameterization)


def _ritz(n_eff, j, limit, ryd, z):
    fs = ryd * z**4 * FINE_STRUCTURE**2 / n_eff**3 * (0.75 / n_eff - 1.0 / (j + 0.5))
    return limit - ryd * z**2 / n_eff**2 + fs


def _quantum_defect(energy, n, mu0, mu1, dmu, limit, ryd, z, parameterization, mu_prev):
    anchor = mu1 if parameterization == "mu1" else mu0
    return mu0 - dmu * ryd / (n - anchor) ** 2


def level_energy_and_defect(model, level, max_iter=100):
    mu0, mu1, dmu = model.defects(level.L, level.J)
    ryd, z, limit = model.reduced_rydberg, model.core_charge, model.ionization_limit
    tol = H_PLANCK * 1.0
    mu = mu0
    energy = None
    for _ in range(max_iter):
        if level.n - mu <= 0:
            raise ConfigError(f"n - mu <= 0 for {level.label}")
        e_new = _ritz(level.n - mu, level.J, limit, ryd, z)
        mu = _quantum_defect(e_new, level.n, mu0, mu1, dmu, limit, ryd, z, model.parameterization, mu)
        if energy is not None and abs(e_new - energy) < tol:
            return e_new, mu
        energy = e_new
    raise NoConvergence(f"quantum defect iteration for {level.label} did not settle")


def level_energy(model, level):
    """Level energy (J) above the ion ground state."""
    return level_energy_and_defect(model, level)[0]


def binding_energy(model, level):
    return model.ionization_limit - level_energy(model, level)


def effective_n(model, level):
    return level.n - level_energy_and_defect(model, level)[1]


# -- radial wavefunctions --------------------------------------------------

@lru_cache(maxsize=512)
def _radial_wavefunction(n_eff, L, step):
    """Scaled radial function on a sqrt(rho) mesh, rho = Z r / a0.

    Returns (x, w) with u(rho) = sqrt(x) w(x) and int u^2 drho = 1. The
    mesh points are integer multiples of ``step`` so different states share
    grid points.
    """
    rho_out = 2.0 * n_eff * (n_eff + 15.0)
    disc = 1.0 - L * (L + 1) / n_eff**2
    rho_in = n_eff**2 * (1.0 - math.sqrt(disc)) if disc > 0 else L * (L + 1) / 2.0
    k_top = int(math.sqrt(rho_out) / step)
    k_bot = max(1, int(math.ceil(math.sqrt(rho_in) / step))) if L > 0 else 1
    x = np.arange(k_bot, k_top + 1) * step
    f = ((2 * L + 1) ** 2 - 0.25) / x**2 - 8.0 + 4.0 * x**2 / n_eff**2
    c = 1.0 - step**2 * f / 12.0
    w = np.zeros_like(x)
    w[-1] = 0.0
    w[-2] = 1e-12
    for i in range(x.size - 2, 0, -1):
        w[i - 1] = (2.0 * (1.0 + 5.0 * step**2 * f[i] / 12.0) * w[i] - c[i + 1] * w[i + 1]) / c[i - 1]
        if abs(w[i - 1]) > 1e200:
            w[i - 1:] *= 1e-200
    if not np.all(np.isfinite(w)):
        raise NoConvergence("Numerov integration overflowed")
    norm = 2.0 * _trapz(w**2 * x**2, x)
    if not norm > 0:
        raise NoConvergence("Numerov wavefunction has zero norm")
    w = w / math.sqrt(norm)
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    return x, w


def radial_integral(n_eff_a, L_a, n_eff_b, L_b, power=1, core_charge=2, step=0.005):
    """<a| r^power |b> in metres^power for two single-channel states."""
    xa, wa = _radial_wavefunction(round(float(n_eff_a), 12), int(L_a), step)
    xb, wb = _radial_wavefunction(round(float(n_eff_b), 12), int(L_b), step)
    ka = np.rint(xa / step).astype(int)
    kb = np.rint(xb / step).astype(int)
    lo, hi = max(ka[0], kb[0]), min(ka[-1], kb[-1])
    if hi <= lo:
        return 0.0
    sa = slice(lo - ka[0], hi - ka[0] + 1)
    sb = slice(lo - kb[0], hi - kb[0] + 1)
    x = xa[sa]
    integrand = wa[sa] * wb[sb] * x ** (2 + 2 * power)
    val = 2.0 * _trapz(integrand, x)
    return val * (A0 / core_charge) ** power


def _trapz(y, x):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)


def radial_matrix_element(model, a, b, power=1):
    """<a| r^power |b> (m^power) from inward Numerov integration."""
    if power not in (1, 2):
        raise ConfigError("power must be 1 or 2")
    return radial_integral(effective_n(model, a), a.L, effective_n(model, b), b.L,
                           power, model.core_charge)


# -- angular factors -------------------------------------------------------

@lru_cache(maxsize=4096)
def dipole_angular_factor(L_a, J_a, m_a, L_b, J_b, m_b, q=0):
    """<L_a J_a m_a| C^1_q |L_b J_b m_b> for a spin-1/2 electron."""
    s = 0.5
    three = wigner_3j(J_a, 1, J_b, -m_a, q, m_b)
    if three == 0:
        return 0.0
    six = wigner_6j(L_a, J_a, s, J_b, L_b, 1)
    lred = wigner_3j(L_a, 1, L_b, 0, 0, 0)
    phase = (-1) ** int(round(J_a - m_a + L_a + s + J_b + 1 + L_a))
    val = phase * three * math.sqrt((2 * J_a + 1) * (2 * J_b + 1) * (2 * L_a + 1) * (2 * L_b + 1)) * six * lred
    return float(val)


def transition_dipole(model, a, b, q=0):
    """e <a| r_q |b> (C m) including the angular factor."""
    ang = dipole_angular_factor(a.L, a.J, a.m_j, b.L, b.J, b.m_j, q)
    if ang == 0.0:
        return 0.0
    return E_CHARGE * ang * radial_matrix_element(model, a, b, 1)


def _polarizability_terms(model, level, cutoff):
    e0 = level_energy(model, level)
    total = 0.0
    for Lp in (level.L - 1, level.L + 1):
        if Lp < 0:
            continue
        for Jp in (Lp - 0.5, Lp + 0.5):
            if Jp < 0 or abs(Jp - level.J) > 1:
                continue
            if abs(level.m_j) > Jp:
                continue
            ang = dipole_angular_factor(Lp, Jp, level.m_j, level.L, level.J, level.m_j, 0)
            if ang == 0.0:
                continue
            for n2 in range(max(Lp + 1, level.n - cutoff), level.n + cutoff + 1):
                other = RydbergLevel(n2, Lp, Jp, level.m_j)
                r = radial_matrix_element(model, other, level, 1)
                total += (ang * r) ** 2 / (e0 - level_energy(model, other))
    return total


def polarizability_sum(model, level, basis_cutoff=15):
    """Static polarizability (C^2 m^2/J) along z and the second-order sum
    nu2 = sum |<m|z|n>|^2 / (E_n - E_m) (m^2/J); alpha = -2 e^2 nu2."""
    if basis_cutoff < 10:
        raise ConfigError("basis_cutoff must be at least 10")
    nu2 = _polarizability_terms(model, level, basis_cutoff)
    wider = _polarizability_terms(model, level, basis_cutoff + 5)
    if abs(wider - nu2) > 0.01 * abs(wider):
        raise NoConvergence("polarizability sum not converged in the basis cutoff")
    return -2.0 * E_CHARGE**2 * wider, wider


# -- quadrupole ------------------------------------------------------------

def quadrupole_moment(level, radial_r2):
    """Q (C m^2) from <r^2> in m^2; zero for J = 1/2."""
    J = level.J
    if J < 1:
        return 0.0
    return -E_CHARGE * (2 * J - 1) / (2 * J + 2) * radial_r2


def quadrupole_moment_approx(n, L, core_charge=2):
    """Large-n closed form for D3/2 quoted alongside the exact expression."""
    return 2 * E_CHARGE * A0**2 * n**2 / (5 * (4 * core_charge + 2)) * (5 * n**2 + 1 - 3 * L * (L + 1))


def quadrupole_angular_factor(J, m_j):
    if J < 1:
        return 0.0
    return (J * (J + 1) - 3 * m_j**2) / (J * (2 * J - 1))


def static_quadrupole_shift(level, Q, gamma):
    """First-order shift (J) of ``level`` in the static gradient ``gamma``."""
    return gamma * Q * quadrupole_angular_factor(level.J, level.m_j)


def rf_coupling_rate(Q, gamma_prime):
    """Delta m_J = +-2 coupling rate (rad/s) from the RF quadrupole field."""
    from .units import HBAR
    return -2.0 * Q * gamma_prime / (5.0 * math.sqrt(3.0) * HBAR)


# -- scaling laws ----------------------------------------------------------

SCALING_EXPONENTS = {
    "binding_energy": -2.0,
    "energy_separation": -3.0,
    "fine_structure_splitting": -3.0,
    "orbital_size": 2.0,
    "quadrupole_moment": 4.0,
    "natural_lifetime": 3.0,
    "bbr_lifetime": 2.0,
    "dipole_ground_rydberg": -1.5,
    "dipole_rydberg_rydberg": 2.0,
    "polarizability": 7.0,
    "dipole_dipole": 4.0,
    "van_der_waals": 11.0,
}


def scaled_property(property_tag, n_ref, value_ref, n_target, effective=False, quantum_defect=0.0):
    """Scale a reference value from ``n_ref`` to ``n_target``."""
    try:
        exponent = SCALING_EXPONENTS[property_tag]
    except KeyError:
        raise UnknownProperty(property_tag) from None
    a, b = (n_ref - quantum_defect, n_target - quantum_defect) if effective else (n_ref, n_target)
    return value_ref * (b / a) ** exponent


# -- series fitting --------------------------------------------------------

def _series_energy(params, n, J, keys, key_index, ryd, z, parameterization, limit=None):
    """Ritz energies; with ``limit`` given, ``params[0]`` is ignored and the
    result is measured from that limit (keeps the small binding energies at
    full precision)."""
    limit = params[0] if limit is None else 0.0
    out = np.empty(n.size)
    width = 3 if parameterization == "mu1" else 2
    for i in range(n.size):
        p = params[1 + width * key_index[i]: 1 + width * (key_index[i] + 1)]
        mu0, dmu = p[0], p[-1] / ryd
        anchor = p[1] if parameterization == "mu1" else mu0
        mu = mu0 - dmu * ryd / (n[i] - anchor) ** 2
        out[i] = _ritz(n[i] - mu, J[i], limit, ryd, z)
    return out


@dataclass
class SeriesFit:
    ionization_limit: float
    series: dict
    sigma: dict
    covariance: np.ndarray
    residuals: np.ndarray
    ionization_limit_sigma: float = 0.0
    condition: float = 0.0
    extra: dict = field(default_factory=dict)


def fit_rydberg_series(lines, initial_guess, model=None, parameterization="mu1"):
    """Weighted Rydberg-Ritz fit.

    ``lines`` rows are (n, L, J, energy, sigma) with energies in J above the
    ion ground state. ``initial_guess`` is a ``QuantumDefectModel`` or a dict
    with ``ionization_limit`` and ``series`` entries. Returns a ``SeriesFit``
    with per-series (mu0, mu1, dmu_dE) and 1-sigma uncertainties.
    """
    arr = np.asarray(lines, float)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise ConfigError("lines must have columns n, L, J, energy, sigma")
    n, L, J, energy, sig = arr.T
    if arr.shape[0] < 4 or n.max() - n.min() < 10:
        raise IllConditioned("need at least 4 lines spanning 10 in n")
    if np.any(sig <= 0):
        raise ConfigError("sigma must be positive")
    if isinstance(initial_guess, QuantumDefectModel):
        guess = {"ionization_limit": initial_guess.ionization_limit, "series": initial_guess.series,
                 "reduced_rydberg": initial_guess.reduced_rydberg, "core_charge": initial_guess.core_charge}
    else:
        guess = dict(initial_guess)
    ryd = guess.get("reduced_rydberg", model.reduced_rydberg if model else RYDBERG_ENERGY)
    z = guess.get("core_charge", model.core_charge if model else 2)
    if parameterization == "mu1":
        # The mu1 direction is weakly determined; seed it from the better
        # conditioned mu0 form so the damped steps start near the valley.
        try:
            seed = fit_rydberg_series(lines, initial_guess, model, "mu0")
            guess = dict(guess, ionization_limit=seed.ionization_limit, series=seed.series)
        except (IllConditioned, NoConvergence):
            pass
    keys = sorted({(int(a), float(b)) for a, b in zip(L, J)})
    key_index = np.array([keys.index((int(a), float(b))) for a, b in zip(L, J)])
    p0 = [guess["ionization_limit"]]
    scale = [abs(guess["ionization_limit"])]
    for key in keys:
        mu0, mu1, dmu = guess["series"].get(key, (0.0, 0.0, 0.0))
        # dmu_dE is carried as the dimensionless product dmu_dE * R*
        block = [mu0, mu1, dmu * ryd] if parameterization == "mu1" else [mu0, dmu * ryd]
        p0.extend(block)
        scale.extend([1.0] * len(block))
    p0 = np.array(p0)
    # Fit the ionization limit as an offset in units of sigma to keep steps well scaled.
    e_scale = float(np.median(sig))
    base = p0[0]

    def unpack(q):
        full = q.copy()
        full[0] = base + q[0] * e_scale
        return full

    measured = energy - base

    def residual(q):
        model_e = _series_energy(q, n, J, keys, key_index, ryd, z, parameterization, limit=0.0)
        return (model_e + q[0] * e_scale - measured) / sig

    q0 = p0.copy()
    q0[0] = 0.0
    res = levenberg_marquardt(residual, q0, scale=np.maximum(np.array(scale), 1.0))
    params = unpack(res.params)
    cov = res.covariance.copy()
    cov[0, :] *= e_scale
    cov[:, 0] *= e_scale
    width = 3 if parameterization == "mu1" else 2
    series, sigma = {}, {}
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    for k, key in enumerate(keys):
        block = params[1 + width * k: 1 + width * (k + 1)]
        bsig = sd[1 + width * k: 1 + width * (k + 1)]
        if parameterization == "mu1":
            series[key] = (block[0], block[1], block[2] / ryd)
            sigma[key] = (bsig[0], bsig[1], bsig[2] / ryd)
        else:
            series[key] = (block[0], block[0], block[1] / ryd)
            sigma[key] = (bsig[0], bsig[0], bsig[1] / ryd)
    return SeriesFit(params[0], series, sigma, cov, res.residuals * sig, sd[0], res.condition)


def synthetic_series(model, L, J, n_values, noise=0.0, rng=None):
    """Line list (n, L, J, energy, sigma) generated from ``model``."""
    rng = np.random.default_rng() if rng is None else rng
    rows = []
    for nn in n_values:
        e = level_energy(model, RydbergLevel(int(nn), L, J))
        if noise > 0:
            e += rng.normal(0.0, noise)
        rows.append((nn, L, J, e, noise if noise > 0 else H_PLANCK * 1e6))
    return np.array(rows, float)


def read_line_list(path):
    """Read a delimited line list with columns n, L, J, energy (J), sigma (J)."""
    rows = _read_rows(path)
    try:
        return np.array([[float(v) for v in r[:5]] for r in rows if r and not r[0].strip().startswith("n")])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed line list ({exc})") from None


class RydbergSeriesFitter(BaseEstimator, RegressorMixin):
    """Estimator wrapper around ``fit_rydberg_series``.

    ``X`` holds (n, L, J) rows and ``y`` the measured level energies (J).
    """

    def __init__(self, species="Sr88", parameterization="mu1", sigma=None):
        self.species = species
        self.parameterization = parameterization
        self.sigma = sigma

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 3:
            raise ValueError("X must have columns n, L, J")
        model = load_model(self.species)
        if sample_weight is not None:
            sig = 1.0 / np.sqrt(np.asarray(sample_weight, float))
        else:
            sig = np.full(y.size, self.sigma or H_PLANCK * 1e6)
        lines = np.column_stack([X, y, sig])
        result = fit_rydberg_series(lines, model, parameterization=self.parameterization)
        self.model_ = QuantumDefectModel({**model.series, **result.series}, result.ionization_limit,
                                         model.reduced_rydberg, model.core_charge, model.species,
                                         self.parameterization)
        self.result_ = result
        self.ionization_limit_ = result.ionization_limit
        self.ionization_limit_sigma_ = result.ionization_limit_sigma
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return np.array([level_energy(self.model_, RydbergLevel(int(a), int(b), float(c))) for a, b, c in X])
