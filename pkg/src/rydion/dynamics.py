"""Open-system dynamics of the two-photon ladder |0> -> |e> -> |r>.

Populations decay into a sink level |g>, which keeps the master equation
trace preserving while letting "population returned to |0>" be measured
honestly. All rates and frequencies are angular (rad/s) with hbar = 1.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import ConfigError, EliminationInvalid, NotCounterIntuitive, StepFailure
from .fitting import levenberg_marquardt

Scalar = Union[float, Callable]

GROUND, INTER, RYD, SINK = 0, 1, 2, 3
LEVELS = ("0", "e", "r", "g")


def _value(f, t):
    return f(t) if callable(f) else f


@dataclass
class ThreeLevelSystem:
    omega1: Scalar = 0.0
    omega2: Scalar = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    phi: Scalar = 0.0
    gamma_e: float = 0.0
    gamma_r: float = 0.0
    dephasing: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.gamma_e < 0 or self.gamma_r < 0 or min(self.dephasing) < 0:
            raise ConfigError("rates must be non-negative")


def hamiltonian(sys, t=0.0):
    """3x3 ladder Hamiltonian (units of hbar, rad/s) at time ``t``."""
    o1, o2 = _value(sys.omega1, t), _value(sys.omega2, t)
    ph = np.exp(1j * _value(sys.phi, t))
    d1, d2 = sys.delta1, sys.delta2
    return 0.5 * np.array([[0.0, o1, 0.0],
                           [o1, 2 * d1, o2 * ph],
                           [0.0, o2 * np.conj(ph), 2 * d1 + 2 * d2]], dtype=complex)


# -- generic Lindblad engine ----------------------------------------------

def _commutator_super(h):
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_super(ops):
    d = ops[0].shape[0] if ops else 0
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), complex)
    for c in ops:
        cdc = c.conj().T @ c
        out += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return out


@dataclass
class MasterEquation:
    """drho/dt = -i[H(t), rho] + sum_k D[c_k] rho with
    H(t) = h0 + sum_j f_j(t) h_j. Density matrices are flattened row-major."""

    h0: np.ndarray
    terms: list = field(default_factory=list)
    collapse: list = field(default_factory=list)

    def __post_init__(self):
        self.dim = self.h0.shape[0]
        self._l0 = _commutator_super(self.h0) + (_dissipator_super(self.collapse) if self.collapse else 0)
        self._lk = [(_commutator_super(h), f) for h, f in self.terms]

    def liouvillian(self, t):
        out = self._l0.copy()
        for lk, f in self._lk:
            out += _value(f, t) * lk
        return out

    @property
    def is_static(self):
        return all(not callable(f) for _, f in self.terms)

    def evolve(self, rho0, t0, t1, t_eval=None, rtol=1e-9, atol=1e-10):
        """Integrate from t0 to t1; returns (times, states[k, d, d])."""
        y0 = np.asarray(rho0, complex).ravel()
        if t_eval is None:
            t_eval = np.array([t0, t1])
        t_eval = np.asarray(t_eval, float)
        if t1 == t0:
            return t_eval, np.repeat(y0.reshape(1, self.dim, self.dim), t_eval.size, axis=0)
        if self.is_static:
            lv = self.liouvillian(t0)
            states = np.array([expm(lv * (t - t0)) @ y0 for t in t_eval])
        else:
            def rhs(t, y):
                return self.liouvillian(t) @ y

            sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
            if sol.status != 0:
                raise StepFailure(sol.message)
            states = sol.y.T
        states = states.reshape(-1, self.dim, self.dim)
        return t_eval, 0.5 * (states + np.conj(np.transpose(states, (0, 2, 1))))

    def steady_state(self, t=0.0, initial=None):
        """Long-time limit of the frozen Liouvillian at ``t`` starting from
        ``initial`` (default: the first level). When decoupled levels make
        the kernel degenerate, the start state is projected onto it along
        the conserved quantities (left null vectors)."""
        lv = self.liouvillian(t)
        n = self.dim
        rho0 = pure_state(n, 0) if initial is None else np.asarray(initial, complex)
        _, s, vh = np.linalg.svd(lv)
        tol = s.max() * 1e-10
        right = vh[s <= tol].conj().T
        _, s2, vh2 = np.linalg.svd(lv.conj().T)
        left = vh2[s2 <= tol].conj().T
        if right.shape[1] == 0 or right.shape[1] != left.shape[1]:
            raise StepFailure("Liouvillian has no well-defined steady state")
        y = right @ np.linalg.solve(left.conj().T @ right, left.conj().T @ rho0.ravel())
        rho = y.reshape(n, n)
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real


def _proj(d, i, j):
    m = np.zeros((d, d), complex)
    m[i, j] = 1.0
    return m


def ladder_master_equation(sys, dim=4, offset=0, repump=0.0):
    """Master equation of ``sys`` embedded at levels offset..offset+3 of a
    ``dim``-level space (|0>, |e>, |r>, |g> in that order)."""
    g0, e, r, g = offset, offset + 1, offset + 2, offset + 3
    h0 = np.zeros((dim, dim), complex)
    h0[e, e] = sys.delta1
    h0[r, r] = sys.delta1 + sys.delta2
    h1 = 0.5 * (_proj(dim, g0, e) + _proj(dim, e, g0))
    terms = [(h1, sys.omega1)]
    if callable(sys.phi):
        raise ConfigError("time-dependent phase not supported by the ladder builder")
    ph = np.exp(1j * sys.phi)
    h2 = 0.5 * (ph * _proj(dim, e, r) + np.conj(ph) * _proj(dim, r, e))
    terms.append((h2, sys.omega2))
    ops = []
    if sys.gamma_e > 0:
        ops.append(np.sqrt(sys.gamma_e) * _proj(dim, g, e))
    if sys.gamma_r > 0:
        ops.append(np.sqrt(sys.gamma_r) * _proj(dim, g, r))
    d1, d2 = sys.dephasing
    if d1 > 0:
        ops.append(np.sqrt(d1) * (_proj(dim, e, e) + _proj(dim, r, r)))
    if d2 > 0:
        ops.append(np.sqrt(d2) * _proj(dim, r, r))
    if repump > 0:
        ops.append(np.sqrt(repump) * _proj(dim, g0, g))
    return MasterEquation(h0, terms, ops)


def pure_state(dim, index):
    rho = np.zeros((dim, dim), complex)
    rho[index, index] = 1.0
    return rho


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def populations(self):
        return np.real(np.einsum("kii->ki", self.states))

    def population(self, level):
        return self.populations[:, level]


def check_density_matrix(rho, tol=1e-8):
    """Raise ``AssertionError`` unless ``rho`` is a valid density matrix."""
    herm = np.abs(rho - rho.conj().T).max()
    tr = abs(np.trace(rho) - 1.0)
    mineig = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if herm > 1e-10 or tr > tol or mineig < -tol:
        raise AssertionError(f"invalid state: herm {herm:.2e}, trace err {tr:.2e}, min eig {mineig:.2e}")


def evolve(sys, initial=None, duration=1e-6, dt_control=None, t0=0.0):
    """Evolve the 4-level ladder; ``dt_control`` sets the output spacing."""
    me = ladder_master_equation(sys)
    rho0 = pure_state(4, GROUND) if initial is None else np.asarray(initial, complex)
    npts = 201 if dt_control is None else int(round(duration / dt_control)) + 1
    times = np.linspace(t0, t0 + duration, max(npts, 2))
    t, states = me.evolve(rho0, t0, t0 + duration, times)
    traj = Trajectory(t, states)
    drift = np.abs(np.trace(states, axis1=1, axis2=2) - 1.0).max()
    if drift > 1e-8:
        raise StepFailure(f"trace drifted by {drift:.2e}")
    return traj


# -- adiabatic elimination and dressed states ------------------------------

@dataclass
class EffectiveTwoLevel:
    omega_eff: float
    shift_ground: float
    shift_rydberg: float
    resonance_residual: float


def adiabatic_eliminate(sys, guard=5.0):
    """Effective |0>-|r> coupling for a far-detuned intermediate level."""
    o1, o2 = _value(sys.omega1, 0.0), _value(sys.omega2, 0.0)
    d1 = sys.delta1
    if abs(d1) < guard * max(abs(o1), abs(o2), sys.gamma_e) or d1 == 0:
        raise EliminationInvalid("intermediate detuning too small for adiabatic elimination")
    return EffectiveTwoLevel(
        omega_eff=o1 * o2 / (2.0 * d1),
        shift_ground=-o1**2 / (4.0 * d1),
        shift_rydberg=-o2**2 / (4.0 * d1),
        resonance_residual=(o1**2 - o2**2) / (4.0 * d1) + d1 + sys.delta2,
    )


def autler_townes(sys):
    """Energies (0, E+, E-) in rad/s and the dressed states of the |e>-|r>
    block, as columns over (|e>, |r>)."""
    o2 = _value(sys.omega2, 0.0)
    if not o2 > 0:
        raise ConfigError("omega2 must be positive")
    d2 = sys.delta2
    root = np.sqrt(d2**2 + o2**2)
    e_plus, e_minus = 0.5 * (d2 + root), 0.5 * (d2 - root)
    vecs = []
    for sign in (1, -1):
        v = np.array([(-d2 + sign * root) / o2, 1.0])
        vecs.append(v / np.linalg.norm(v))
    return (0.0, e_plus, e_minus), np.array(vecs).T


def dark_state(omega1, omega2, phi=0.0):
    """Normalised dark state over (|0>, |e>, |r>)."""
    v = np.array([omega2 * np.exp(1j * phi), 0.0, -omega1], complex)
    return v / np.linalg.norm(v)


def mixing_angle(omega1, omega2):
    return np.arctan2(omega1, omega2)


# -- spectroscopy ----------------------------------------------------------

def spectroscopy_scan(sys, delta1_grid, delta2_grid=None, observable=INTER, repump=None):
    """Steady-state population of ``observable`` over a detuning grid.

    Decay into the sink is recycled to |0> at rate ``repump`` (defaults to
    gamma_e) so a steady state exists. Returns a 1D array for a Δ1 scan or
    a (len(delta2_grid), len(delta1_grid)) map.
    """
    rate = sys.gamma_e if repump is None else repump
    d2s = [sys.delta2] if delta2_grid is None else list(delta2_grid)
    out = np.empty((len(d2s), len(delta1_grid)))
    for i, d2 in enumerate(d2s):
        for j, d1 in enumerate(delta1_grid):
            me = ladder_master_equation(replace(sys, delta1=d1, delta2=d2), repump=rate)
            out[i, j] = np.real(me.steady_state()[observable, observable])
    return out[0] if delta2_grid is None else out


def find_peaks_refined(x, y, min_rel_height=0.05):
    """Local maxima with parabolic refinement, strongest first."""
    x, y = np.asarray(x), np.asarray(y)
    idx = [i for i in range(1, y.size - 1) if y[i] > y[i - 1] and y[i] >= y[i + 1]
           and y[i] > min_rel_height * y.max()]
    peaks = []
    for i in idx:
        denom = y[i - 1] - 2 * y[i] + y[i + 1]
        shift = 0.5 * (y[i - 1] - y[i + 1]) / denom if denom != 0 else 0.0
        peaks.append((x[i] + shift * (x[i + 1] - x[i]), y[i]))
    peaks.sort(key=lambda p: -p[1])
    return peaks


# -- STIRAP ----------------------------------------------------------------

def sine_envelopes(omega1_max, omega2_max, pulse_length, overlap=0.5):
    """Counter-intuitive sin^2 pulses: omega2 first, omega1 delayed by
    (1 - overlap) * pulse_length. Returns (omega1(t), omega2(t), total)."""
    delay = (1.0 - overlap) * pulse_length

    def pulse(amp, start):
        def f(t):
            s = (t - start) / pulse_length
            return amp * np.sin(np.pi * s) ** 2 if 0.0 <= s <= 1.0 else 0.0
        return f

    return pulse(omega1_max, delay), pulse(omega2_max, 0.0), pulse_length + delay


def _centroid(f, total, n=401):
    t = np.linspace(0, total, n)
    w = np.array([abs(f(x)) for x in t])
    return float(np.sum(t * w) / np.sum(w)) if w.sum() > 0 else 0.0


@dataclass
class StirapResult:
    transfer_efficiency: float
    return_population: float
    acquired_phase: float
    final_state: np.ndarray = field(repr=False, default=None)


def _reversed(f, total):
    return lambda t: f(total - t)


def stirap(sys, envelopes, duration=None, wait=0.0, phase_shift=0.0, double=True, initial=None,
           dim=4, offset=0):
    """Single- or double-pass STIRAP |0> -> |r> (-> |0>).

    ``envelopes`` is (omega1(t), omega2(t)) on [0, duration] or the output
    of ``sine_envelopes``. The return pass plays the sequence backwards in
    time with ``phase_shift`` added to the upper laser. Detunings and
    rates come from ``sys``.
    """
    if len(envelopes) == 3:
        f1, f2, total = envelopes
    else:
        (f1, f2), total = envelopes, duration
    if total is None or total <= 0:
        raise ConfigError("pulse duration required")
    if _centroid(f2, total) >= _centroid(f1, total):
        raise NotCounterIntuitive("the upper-transition pulse must lead")
    rho = pure_state(dim, offset + GROUND) if initial is None else np.asarray(initial, complex)
    me1 = ladder_master_equation(replace(sys, omega1=f1, omega2=f2), dim, offset)
    _, st = me1.evolve(rho, 0.0, total)
    rho = st[-1]
    efficiency = float(np.real(rho[offset + RYD, offset + RYD]))
    if not double:
        return StirapResult(efficiency, float("nan"), float("nan"), rho)
    if wait > 0:
        idle = ladder_master_equation(replace(sys, omega1=0.0, omega2=0.0), dim, offset)
        _, st = idle.evolve(rho, 0.0, wait)
        rho = st[-1]
    me2 = ladder_master_equation(replace(sys, omega1=_reversed(f1, total), omega2=_reversed(f2, total),
                                         phi=sys.phi + phase_shift), dim, offset)
    _, st = me2.evolve(rho, 0.0, total)
    rho = st[-1]
    ret = float(np.real(rho[offset + GROUND, offset + GROUND]))
    phase = float(np.angle(rho[offset + GROUND, 0])) if offset > 0 else float("nan")
    return StirapResult(efficiency, ret, phase, rho)


def fit_exponential_decay(t, y, sigma=None):
    """Fit y = A exp(-t / tau); returns (tau, sigma_tau, A)."""
    t, y = np.asarray(t, float), np.asarray(y, float)
    s = np.full(y.size, 1e-3) if sigma is None else np.broadcast_to(sigma, y.shape)
    pos = y > 0
    slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
    tau0 = -1.0 / slope if slope < 0 else t.max()
    scale = np.array([tau0, np.exp(icpt)])

    def residual(q):
        tau, amp = q * scale
        return (amp * np.exp(-t / tau) - y) / s

    res = levenberg_marquardt(residual, np.ones(2))
    tau, amp = res.params * scale
    return float(tau), float(res.sigma[0] * scale[0]), float(amp)


# -- geometric phase gate --------------------------------------------------

QUBIT_ONE = 0
QUBIT_ZERO = 1


def _ramsey_pulse(rho, dim, phase=0.0):
    """Ideal pi/2 rotation on the qubit levels {|1>, |0>} (indices 0, 1)."""
    u = np.eye(dim, dtype=complex)
    u[:2, :2] = np.array([[1, -1j * np.exp(-1j * phase)], [-1j * np.exp(1j * phase), 1]]) / np.sqrt(2)
    return u @ rho @ u.conj().T


def _double_stirap_map(sys, envelopes, wait, phi):
    """Apply the double STIRAP to a 5-level state (|1>, |0>, |e>, |r>, |g>)."""
    def apply(rho):
        return stirap(sys, envelopes, wait=wait, phase_shift=phi, initial=rho, dim=5, offset=1).final_state
    return apply


PAULI = [np.eye(2, dtype=complex), np.array([[0, 1], [1, 0]], complex),
         np.array([[0, -1j], [1j, 0]], complex), np.array([[1, 0], [0, -1]], complex)]


def process_matrix(channel):
    """chi matrix (Pauli basis I, X, Y, Z) of a qubit map from its action
    on |1>, |0>, (|1>+|0>)/sqrt2 and (|1>+i|0>)/sqrt2 by linear inversion."""
    k1 = np.array([1, 0], complex)
    k0 = np.array([0, 1], complex)
    plus = (k1 + k0) / np.sqrt(2)
    plus_i = (k1 + 1j * k0) / np.sqrt(2)
    inputs = [np.outer(v, v.conj()) for v in (k1, k0, plus, plus_i)]
    outputs = [channel(r) for r in inputs]
    # express matrix units |a><b| in terms of the inputs
    a = np.array([r.ravel() for r in inputs]).T
    outs = np.array([o.ravel() for o in outputs]).T
    coeffs = np.linalg.solve(a, np.eye(4))
    unit_images = outs @ coeffs
    choi = np.zeros((4, 4), complex)
    for idx in range(4):
        i, j = divmod(idx, 2)
        choi += np.kron(_proj(2, i, j), unit_images[:, idx].reshape(2, 2))
    basis = np.array([p.T.ravel() for p in PAULI]).T
    # choi = sum_mn chi_mn |E_m>><<E_n| with column-stacked vec(E)
    chi = np.linalg.solve(basis, np.linalg.solve(basis, choi.T).conj().T).conj().T
    chi = 0.5 * (chi + chi.conj().T)
    return chi


def psd_project(chi):
    w, v = np.linalg.eigh(chi)
    if w.min() >= -1e-12 * max(w.max(), 1.0):
        return chi, False
    w = np.clip(w, 0, None)
    return (v * w) @ v.conj().T, True


@dataclass
class GateResult:
    phis: np.ndarray
    p0: np.ndarray
    chi: np.ndarray
    fidelity: float
    contrast: float
    projected: bool


def geometric_phase_gate(sys, envelopes, phis=None, gate_phi=np.pi, wait=0.0):
    """Ramsey fringe P0(phi) and process tomography of the double-STIRAP
    phase gate at ``gate_phi``. Qubit levels |1> (inert) and |0>."""
    phis = np.linspace(0, 2 * np.pi, 9) if phis is None else np.asarray(phis, float)
    dim = 5
    p0 = []
    for phi in phis:
        rho = pure_state(dim, QUBIT_ZERO)
        rho = _ramsey_pulse(rho, dim)
        rho = _double_stirap_map(sys, envelopes, wait, phi)(rho)
        rho = _ramsey_pulse(rho, dim)
        p0.append(float(np.real(rho[QUBIT_ZERO, QUBIT_ZERO])))
    p0 = np.array(p0)
    gate = _double_stirap_map(sys, envelopes, wait, gate_phi)

    def channel(r2):
        full = np.zeros((dim, dim), complex)
        full[:2, :2] = r2
        return gate(full)[:2, :2]

    chi = process_matrix(channel)
    chi_used, projected = psd_project(chi)
    ideal_u = np.diag([1.0, np.exp(1j * gate_phi)])
    chi_ideal = process_matrix(lambda r: ideal_u @ r @ ideal_u.conj().T)
    fidelity = float(np.real(np.trace(chi_ideal @ chi_used)))
    contrast = float(p0.max() - p0.min())
    return GateResult(phis, p0, chi_used, fidelity, contrast, projected)
