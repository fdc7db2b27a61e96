"""Rydberg line shapes: micromotion Doppler and Stark sidebands, thermal
envelopes, Floquet sidebands of quadrupole-coupled manifolds and line
fitting."""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import jv
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, RydionError, TruncationTooSmall
from .fitting import levenberg_marquardt
from .rydstate import quadrupole_angular_factor
from .units import HBAR


@dataclass(frozen=True)
class LineModel:
    omega0: float
    beta_mm: float
    beta_alpha: float
    omega_rf: float
    natural_width: float
    carrier_offset: float = 0.0

    def __post_init__(self):
        if not self.natural_width > 0:
            raise ConfigError("natural_width must be positive")
        if self.beta_mm < 0 or self.beta_alpha < 0:
            raise ConfigError("modulation indices must be non-negative")
        if not self.omega_rf > 0:
            raise ConfigError("omega_rf must be positive")


def stark_index(alpha, e_res, omega_rf):
    """(beta_alpha, carrier_offset) for polarizability ``alpha`` (C^2 m^2/J)
    in an RF field of amplitude ``e_res`` (V/m)."""
    depth = alpha * e_res**2 / HBAR
    return abs(depth) / (8.0 * omega_rf), -depth / 4.0


def line_model_from_fields(omega0, k_dot_rmm, alpha, e_res, omega_rf, natural_width):
    b_alpha, offset = stark_index(alpha, e_res, omega_rf)
    return LineModel(omega0, abs(k_dot_rmm), b_alpha, omega_rf, natural_width, offset)


def default_order_cap(beta):
    # the Bessel tail reaches about beta^(1/3) past m = beta
    return int(np.ceil(beta + 2.0 * np.cbrt(beta))) + 8


def sideband_series(model, order_cap=None, coherent=False):
    """Discrete sidebands as ``(offsets, weights)``.

    Offsets (rad/s) are measured from omega0 + carrier_offset. Doppler orders
    m' sit at m' Omega and Stark orders m at 2 m Omega. With ``coherent``
    False the relative phase of the two combs is averaged out, so weights add
    as J_m'^2 J_m^2; with True the amplitudes interfere as written.
    """
    cap_mm = default_order_cap(model.beta_mm) if order_cap is None else order_cap
    cap_a = default_order_cap(model.beta_alpha) if order_cap is None else order_cap
    if cap_mm < 1 or cap_a < 1:
        raise ConfigError("order_cap must be at least 1")
    mp = np.arange(-cap_mm, cap_mm + 1)
    ms = np.arange(-cap_a, cap_a + 1)
    a_mm = jv(mp, model.beta_mm)
    a_st = jv(ms, model.beta_alpha)
    order = mp[:, None] + 2 * ms[None, :]
    if coherent:
        amp = (a_mm * (1j) ** mp)[:, None] * ((-1.0) ** ms * a_st)[None, :]
    else:
        amp = None
    lo, hi = order.min(), order.max()
    weights = np.zeros(hi - lo + 1)
    if coherent:
        acc = np.zeros(hi - lo + 1, complex)
        np.add.at(acc, (order - lo).ravel(), amp.ravel())
        weights = np.abs(acc) ** 2
    else:
        np.add.at(weights, (order - lo).ravel(), np.outer(a_mm**2, a_st**2).ravel())
    residual = 1.0 - weights.sum()
    if residual > 1e-4:
        raise TruncationTooSmall(f"residual sideband weight {residual:.2e}")
    offsets = np.arange(lo, hi + 1) * model.omega_rf
    keep = weights > 1e-15
    return offsets[keep], weights[keep]


def lorentzian(x, fwhm):
    hw = 0.5 * fwhm
    return hw**2 / (x**2 + hw**2)


def line_profile(model, detuning_grid, order_cap=None, coherent=False):
    """Excitation profile on ``detuning_grid`` (rad/s from omega0); each
    sideband is a peak-normalised Lorentzian of FWHM natural_width."""
    grid = np.asarray(detuning_grid, float)
    if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
        raise ConfigError("detuning grid must be monotone")
    offsets, weights = sideband_series(model, order_cap, coherent)
    centres = offsets + model.carrier_offset
    return np.sum(weights[:, None] * lorentzian(grid[None, :] - centres[:, None], model.natural_width), axis=0)


def thermal_profile(omega_ground, omega_rydberg, nbar_x, nbar_y, natural_width, grid, cutoff=1e-6):
    """Line envelope of a thermal ion whose radial frequencies change on
    excitation: each (n_x, n_y) contributes a Lorentzian shifted by
    (n_x + 1/2) dw_x + (n_y + 1/2) dw_y."""
    if nbar_x < 0 or nbar_y < 0:
        raise ConfigError("mean phonon numbers must be non-negative")
    grid = np.asarray(grid, float)
    dx = omega_rydberg[0] - omega_ground[0]
    dy = omega_rydberg[1] - omega_ground[1]

    def thermal(nbar):
        if nbar == 0:
            return np.array([1.0])
        q = nbar / (nbar + 1.0)
        nmax = int(np.ceil(np.log(cutoff) / np.log(q)))
        n = np.arange(nmax + 1)
        return (1.0 - q) * q**n

    px, py = thermal(nbar_x), thermal(nbar_y)
    shifts = (np.arange(px.size)[:, None] + 0.5) * dx + (np.arange(py.size)[None, :] + 0.5) * dy
    w = np.outer(px, py).ravel()
    s = shifts.ravel()
    out = np.zeros_like(grid)
    for chunk in range(0, s.size, 2048):
        out += np.sum(w[chunk:chunk + 2048, None]
                      * lorentzian(grid[None, :] - s[chunk:chunk + 2048, None], natural_width), axis=0)
    return out


def fwhm(grid, profile):
    """Full width at half maximum of a sampled single-peaked profile."""
    half = profile.max() / 2.0
    above = np.nonzero(profile >= half)[0]
    i0, i1 = above[0], above[-1]

    def cross(a, b):
        return grid[a] + (half - profile[a]) * (grid[b] - grid[a]) / (profile[b] - profile[a])

    left = cross(i0 - 1, i0) if i0 > 0 else grid[0]
    right = cross(i1, i1 + 1) if i1 + 1 < grid.size else grid[-1]
    return abs(right - left)


@dataclass
class FloquetResult:
    quasi_energies: np.ndarray
    bare_energies: np.ndarray
    line_energies: np.ndarray
    line_weights: np.ndarray
    m_values: np.ndarray
    line_orders: np.ndarray

    def order_weights(self):
        """Total probe weight per Floquet order k (0 is the carrier group)."""
        out = {}
        for k, w in zip(self.line_orders, self.line_weights):
            out[int(k)] = out.get(int(k), 0.0) + float(w)
        return out

    def order_offsets(self):
        """Weighted mean line position of each order relative to the carrier
        group (rad/s)."""
        carrier = np.average(self.line_energies[self.line_orders == 0],
                             weights=self.line_weights[self.line_orders == 0])
        out = {}
        for k in np.unique(self.line_orders):
            sel = self.line_orders == k
            out[int(k)] = float(np.average(self.line_energies[sel], weights=self.line_weights[sel]) - carrier)
        return out


def floquet_sidebands(J, Q, gamma_prime, gamma, omega_rf, zeeman_splitting, k_max=4, coupling=None):
    """Floquet spectrum of a Zeeman manifold coupled by the RF quadrupole.

    The manifold {m_J} of angular momentum ``J`` has bare energies
    m_J * zeeman_splitting + static quadrupole shift (rad/s). The RF field
    couples m_J and m_J +- 2 with H = hbar C cos(Omega t); ``coupling``
    overrides C. Lines are the quasi-energies probed from the k = 0 block,
    weighted by their k = 0 content summed over m_J; each line's order is
    the Floquet block holding most of its eigenvector.
    """
    from .rydstate import rf_coupling_rate

    if k_max < 2:
        raise ConfigError("k_max must be at least 2")
    m_vals = np.arange(-J, J + 1.0)
    dim = m_vals.size
    static = np.array([gamma * Q * quadrupole_angular_factor(J, m) / HBAR for m in m_vals])
    bare = m_vals * zeeman_splitting + static
    c = rf_coupling_rate(Q, gamma_prime) if coupling is None else coupling
    ks = np.arange(-k_max, k_max + 1)
    nk = ks.size
    size = dim * nk
    h = np.zeros((size, size))

    def idx(mi, ki):
        return ki * dim + mi

    for ki, k in enumerate(ks):
        for mi in range(dim):
            h[idx(mi, ki), idx(mi, ki)] = bare[mi] + k * omega_rf
            for mj in range(dim):
                if abs(m_vals[mj] - m_vals[mi]) == 2 and ki + 1 < nk:
                    h[idx(mi, ki), idx(mj, ki + 1)] = 0.5 * c
                    h[idx(mj, ki + 1), idx(mi, ki)] = 0.5 * c
    w, v = np.linalg.eigh(h)
    centre = k_max
    k0 = v[centre * dim:(centre + 1) * dim, :]
    line_w = np.sum(np.abs(k0) ** 2, axis=0)
    edge = np.sum(np.abs(v[:dim, :]) ** 2, axis=0) + np.sum(np.abs(v[-dim:, :]) ** 2, axis=0)
    if np.any(edge[line_w > 1e-3] > 1e-3):
        raise TruncationTooSmall("Floquet population reaches the truncation edge")
    blocks = np.abs(v.reshape(nk, dim, -1)) ** 2
    orders = ks[np.argmax(blocks.sum(axis=1), axis=0)]
    keep = line_w > 1e-12
    return FloquetResult(w, bare, w[keep], line_w[keep], m_vals, orders[keep])


# -- fitting ---------------------------------------------------------------

def _peak_candidates(x, y, omega_rf, orders=4):
    """Carrier candidates: every sideband sits on an omega_rf lattice through
    the tallest peak, whichever order that peak is."""
    top = float(x[np.argmax(y)])
    lo, hi = x.min(), x.max()
    cands = [top + k * omega_rf for k in range(-orders, orders + 1)]
    return sorted((c for c in cands if lo <= c <= hi), key=lambda c: abs(c - top))


def fit_line(detuning, signal, sigma, omega_rf, natural_width=None, e_res=None,
             initial=None, fit_width=False, omega0=None):
    """Fit ``line_profile`` (times an amplitude) to an observed spectrum.

    Free parameters are the carrier position, beta_mm and either beta_alpha
    or, when ``e_res`` is supplied, the polarizability. Passing a known
    unperturbed resonance ``omega0`` removes the carrier position from the
    fit, so the mean Stark shift also constrains the polarizability.
    Returns a dict of estimates and 1-sigma uncertainties plus the
    ``FitResult``.
    """
    x = np.asarray(detuning, float)
    y = np.asarray(signal, float)
    s = np.broadcast_to(np.asarray(sigma, float), y.shape)
    init = {"shift": float(x[np.argmax(y)]), "beta_mm": 0.5, "stark": 0.3, "amplitude": float(y.max()) or 1.0,
            "width": natural_width}
    if initial:
        init.update(initial)
    if init["width"] is None:
        raise ConfigError("natural_width or an initial width is required")
    use_alpha = e_res is not None
    free_centre = omega0 is None
    names = (["shift"] if free_centre else []) + ["beta_mm", "stark", "amplitude"] + (["width"] if fit_width else [])
    scale_of = {"shift": omega_rf, "beta_mm": 1.0, "stark": (abs(init["stark"]) or 1e-30) if use_alpha else 1.0,
                "amplitude": abs(init["amplitude"]) or 1.0, "width": init["width"]}
    scales = np.array([scale_of[k] for k in names])

    # The free centre parameter is the observed carrier position omega0 +
    # carrier_offset; fitting omega0 directly would make the Stark index
    # collinear with the centre as it tends to zero.
    def build(p):
        v = dict(zip(names, p))
        width = abs(v["width"]) if fit_width else init["width"]
        if use_alpha:
            b_a, offset = stark_index(v["stark"], e_res, omega_rf)
        else:
            b_a, offset = abs(v["stark"]), -2.0 * omega_rf * abs(v["stark"])
        centre = v["shift"] if free_centre else omega0 + offset
        return LineModel(centre - offset, abs(v["beta_mm"]), b_a, omega_rf, width, offset), v["amplitude"]

    def residual(q):
        model, amp = build(q * scales)
        return (amp * line_profile(model, x - model.omega0) - y) / s

    # Strong modulation can make a sideband the tallest feature, and the
    # Bessel comb has local minima in beta_mm, so starts not supplied are gridded.
    if not free_centre or (initial and "shift" in initial):
        shifts = [init["shift"]]
    else:
        shifts = _peak_candidates(x, y, omega_rf)
    mms = [init["beta_mm"]] if initial and "beta_mm" in initial else [0.3, 1.0, 2.0]
    starts = [np.array([dict(init, shift=sh, beta_mm=mm)[k] for k in names], float) / scales
              for mm in mms for sh in shifts]
    if len(starts) > 3:
        screened = []
        for q0 in starts:
            try:
                screened.append(levenberg_marquardt(residual, q0, max_iter=15, partial=True))
            except RydionError:
                continue
        screened.sort(key=lambda r: r.chi2)
        starts = [r.params for r in screened[:3]] or starts
    res, last_error = None, None
    for q0 in starts:
        try:
            trial = levenberg_marquardt(residual, q0)
        except RydionError as exc:
            last_error = exc
            continue
        if res is None or trial.chi2 < res.chi2:
            res = trial
    if res is None:
        raise last_error
    p = res.params * scales
    sd = res.sigma * scales
    est = dict(zip(names, p))
    est["beta_mm"] = abs(est["beta_mm"])
    unc = dict(zip(names, sd))
    model, _ = build(p)
    est["centre"] = model.omega0 + model.carrier_offset
    unc["centre"] = unc.pop("shift", 0.0)
    est.pop("shift", None)
    est["omega0"] = model.omega0
    if use_alpha:
        est["alpha"] = est.pop("stark")
        unc["alpha"] = unc.pop("stark")
    else:
        est["beta_alpha"] = abs(est.pop("stark"))
        unc["beta_alpha"] = unc.pop("stark")
    return {"estimates": est, "sigma": unc, "model": model, "fit": res,
            "reduced_chi2": res.chi2 / max(1, y.size - len(names))}


class LineShapeFitter(BaseEstimator, RegressorMixin):
    """Estimator form of ``fit_line``: ``X`` is a column of detunings
    (rad/s), ``y`` the excitation signal."""

    def __init__(self, omega_rf=2 * np.pi * 6.5e6, natural_width=2 * np.pi * 1e6, e_res=None,
                 sigma=0.01, fit_width=False):
        self.omega_rf = omega_rf
        self.natural_width = natural_width
        self.e_res = e_res
        self.sigma = sigma
        self.fit_width = fit_width

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, float)
        if X.shape[1] != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("X must be a single detuning column matching y")
        init = {"stark": 1e-29} if self.e_res is not None else None
        out = fit_line(X[:, 0], y, self.sigma, self.omega_rf, self.natural_width, self.e_res,
                       initial=init, fit_width=self.fit_width)
        self.estimates_ = out["estimates"]
        self.sigma_ = out["sigma"]
        self.model_ = out["model"]
        self.amplitude_ = out["estimates"]["amplitude"]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return self.amplitude_ * line_profile(self.model_, X[:, 0] - self.model_.omega0)
