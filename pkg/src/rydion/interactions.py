"""Interactions between Rydberg ions.

Pair potentials and their multipole expansion, microwave-dressed states,
two-ion blockade dynamics and the conditional phase gate, the electric
kick gate, excitation transport along a chain and plaquette spin-spin
couplings. Frequencies are angular (rad/s); energies are in joules unless
a docstring says otherwise.
"""
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import minimize
from scipy.sparse.linalg import expm_multiply

from . import crystal as crys
from . import dynamics as dyn
from .errors import (CoincidentCharges, ConfigError, ExpansionInvalid, NoFeasiblePulse,
                     NotImpulsive, ResonantMode, StepFailure, TooLarge)
from .units import COULOMB_K, E_CHARGE, HBAR

# -- pair potentials -------------------------------------------------------


def _vec(x):
    v = np.asarray(x, float).reshape(-1)
    if v.size != 3:
        raise ConfigError("positions must be 3-vectors")
    return v


def pair_potential_exact(Ri, Rj, ri, rj):
    """Coulomb energy (J) of two singly charged ions, each a doubly charged
    core at R plus one electron at R + r."""
    Ri, Rj, ri, rj = map(_vec, (Ri, Rj, ri, rj))
    d = np.array([np.linalg.norm(Ri - Rj),
                  np.linalg.norm(Ri - (Rj + rj)),
                  np.linalg.norm((Ri + ri) - Rj),
                  np.linalg.norm((Ri + ri) - (Rj + rj))])
    scale = max(np.linalg.norm(Ri - Rj), np.linalg.norm(ri), np.linalg.norm(rj), 1e-300)
    if d.min() <= 1e-14 * scale:
        raise CoincidentCharges("two point charges coincide")
    return float(COULOMB_K * E_CHARGE**2 * (4.0 / d[0] - 2.0 / d[1] - 2.0 / d[2] + 1.0 / d[3]))


@dataclass(frozen=True)
class MultipoleTerms:
    coulomb: float
    dipole_charge: float
    quad_charge: float
    dipole_dipole: float

    @property
    def total(self):
        return self.coulomb + self.dipole_charge + self.quad_charge + self.dipole_dipole


def pair_potential_multipole(Ri, Rj, ri, rj, max_ratio=0.2):
    """Leading terms of the pair energy for orbits small compared with the
    ion separation, returned separately (J)."""
    Ri, Rj, ri, rj = map(_vec, (Ri, Rj, ri, rj))
    R = Ri - Rj
    dist = np.linalg.norm(R)
    if dist == 0:
        raise CoincidentCharges("ion cores coincide")
    ratio = max(np.linalg.norm(ri), np.linalg.norm(rj)) / dist
    if ratio > max_ratio:
        raise ExpansionInvalid(f"orbit/separation ratio {ratio:.3g} exceeds {max_ratio}")
    n = R / dist
    a, b = n @ ri, n @ rj
    k = COULOMB_K * E_CHARGE**2
    return MultipoleTerms(
        coulomb=k / dist,
        dipole_charge=k * (R @ (ri - rj)) / dist**3,
        quad_charge=k * (ri @ ri - 3 * a**2 + rj @ rj - 3 * b**2) / (2 * dist**3),
        dipole_dipole=k * (ri @ rj - 3 * a * b) / dist**3,
    )


# -- microwave dressing ----------------------------------------------------

@dataclass(frozen=True)
class MWDressing:
    """Microwave coupling of an nP and an n'S Rydberg level.

    ``dipole_d1`` is the P-S transition dipole (C m) along the microwave
    polarization; polarizabilities are in C^2 m^2 / J.
    """

    rabi_mw: float
    delta_s: float = 0.0
    delta_p: float = 0.0
    dipole_d1: float = 0.0
    alpha_s: float = 0.0
    alpha_p: float = 0.0

    @property
    def delta_minus(self):
        return self.delta_p - self.delta_s


@dataclass(frozen=True)
class DressedStates:
    c_plus: float
    c_minus: float
    alpha_plus: float
    alpha_minus: float
    energies: tuple
    vectors: np.ndarray  # columns |+>, |-> over (|P>, |S>)


def _mixing_coefficients(rabi, dm):
    root = np.hypot(rabi, dm)
    # form the well-conditioned root directly and use C+ C- = -1 for the other
    if dm >= 0:
        cp = (dm + root) / rabi
        return cp, -1.0 / cp
    cm = (dm - root) / rabi
    return -1.0 / cm, cm


def mw_dressed_states(dressing):
    """Dressed states |+-> = (C|P> + |S>)/sqrt(1 + C^2), their energies
    (rad/s, rotating frame) and polarizabilities."""
    if not dressing.rabi_mw > 0:
        raise ConfigError("microwave Rabi frequency must be positive")
    rabi = dressing.rabi_mw
    cp, cm = _mixing_coefficients(rabi, dressing.delta_minus)

    def alpha(c):
        return (c**2 * dressing.alpha_p + dressing.alpha_s) / (1.0 + c**2)

    vecs = np.array([[cp, cm], [1.0, 1.0]]) / np.sqrt(1.0 + np.array([cp, cm]) ** 2)
    energies = tuple(0.5 * rabi * c + dressing.delta_s for c in (cp, cm))
    return DressedStates(cp, cm, alpha(cp), alpha(cm), energies, vecs)


def zero_polarizability_detuning(alpha_s, alpha_p, rabi_mw, branch="-"):
    """Detuning difference Delta_P - Delta_S that makes the ``branch``
    dressed state unpolarizable."""
    if alpha_s * alpha_p >= 0:
        raise ConfigError("S and P polarizabilities must have opposite signs")
    c = np.sqrt(-alpha_s / alpha_p) * (1.0 if branch == "+" else -1.0)
    return rabi_mw * (c**2 - 1.0) / (2.0 * c)


def dressed_dipole_length(dressing):
    """d+- = |d1| C+- / (e (1 + C+-^2)) in metres."""
    st = mw_dressed_states(dressing)
    return tuple(abs(dressing.dipole_d1) * c / (E_CHARGE * (1.0 + c**2)) for c in (st.c_plus, st.c_minus))


def dipole_dipole_strength(dressing, r0, angle=np.pi / 2):
    """Resonant exchange shift (J) of the pair states |++> and |-->.

    The two ions sit ``r0`` apart; ``angle`` is between the microwave
    polarization and the inter-ion axis. The shift is first order in the
    rotating-frame exchange coupling, where both orderings |SP><PS| and
    |PS><SP| contribute.
    """
    if not r0 > 0:
        raise ConfigError("inter-ion distance must be positive")
    geometry = 1.0 - 3.0 * np.cos(angle) ** 2
    dp, dm = dressed_dipole_length(dressing)
    scale = 2.0 * COULOMB_K * E_CHARGE**2 * geometry / r0**3
    return {"++": scale * dp**2, "--": scale * dm**2}


def van_der_waals_two_state(dipole_a, dipole_b, pair_defect, r0):
    """Second-order shift (J) through one pair channel with energy defect
    ``pair_defect`` (J)."""
    if pair_defect == 0:
        raise ConfigError("pair defect must be non-zero")
    coupling = COULOMB_K * dipole_a * dipole_b / r0**3
    return -coupling**2 / pair_defect


# -- two-ion master equation -----------------------------------------------

def _sparse_comm(h):
    eye = sp.identity(h.shape[0], format="csr", dtype=complex)
    h = sp.csr_matrix(h)
    return (-1j * (sp.kron(h, eye) - sp.kron(eye, h.T))).tocsr()


def _sparse_diss(ops, d):
    eye = sp.identity(d, format="csr", dtype=complex)
    out = sp.csr_matrix((d * d, d * d), dtype=complex)
    for c in ops:
        c = sp.csr_matrix(c)
        cdc = (c.conj().T @ c).tocsr()
        out = out + sp.kron(c, c.conj()) - 0.5 * (sp.kron(cdc, eye) + sp.kron(eye, cdc.T))
    return out.tocsr()


@dataclass
class PairSystem:
    """Two ladder ions with |r r> shifted by ``v_dd`` (rad/s).

    With ``spectator`` each ion also carries an inert qubit level |1> in
    front of the ladder, giving the per-ion order (|1>, |0>, |e>, |r>, |g>).
    """

    sys_a: dyn.ThreeLevelSystem
    sys_b: dyn.ThreeLevelSystem
    v_dd: float
    spectator: bool = False

    def __post_init__(self):
        if self.v_dd < 0:
            raise ConfigError("v_dd must be non-negative")
        self.site_dim = 5 if self.spectator else 4
        self.offset = 1 if self.spectator else 0

    @property
    def dim(self):
        return self.site_dim**2

    def index(self, a, b):
        """Pair index of per-ion levels given as names from (1, 0, e, r, g)."""
        names = ("1", "0", "e", "r", "g") if self.spectator else ("0", "e", "r", "g")
        return names.index(a) * self.site_dim + names.index(b)

    def liouvillian_parts(self, omega_a=None, omega_b=None):
        """(L0, [(Lk, fk)]) as sparse superoperators.

        ``omega_a``/``omega_b`` optionally replace the (omega1, omega2)
        drives of each ion.
        """
        d = self.site_dim
        eye = np.eye(d)
        parts = []
        for sys, om in ((self.sys_a, omega_a), (self.sys_b, omega_b)):
            if om is not None:
                sys = replace(sys, omega1=om[0], omega2=om[1])
            parts.append(dyn.ladder_master_equation(sys, d, self.offset))
        ma, mb = parts
        h0 = np.kron(ma.h0, eye) + np.kron(eye, mb.h0)
        rr = self.index("r", "r")
        h0[rr, rr] += self.v_dd
        ops = [np.kron(c, eye) for c in ma.collapse] + [np.kron(eye, c) for c in mb.collapse]
        l0 = _sparse_comm(h0)
        if ops:
            l0 = (l0 + _sparse_diss(ops, self.dim)).tocsr()
        terms = [(_sparse_comm(np.kron(h, eye)), f) for h, f in ma.terms]
        terms += [(_sparse_comm(np.kron(eye, h)), f) for h, f in mb.terms]
        # fold constant drives into L0
        lk = []
        for op, f in terms:
            if callable(f):
                lk.append((op, f))
            elif f != 0:
                l0 = (l0 + f * op).tocsr()
        return l0, lk


def _propagate(l0, lk, y0, t0, t1, t_eval=None, rtol=1e-9, atol=1e-11):
    """Evolve columns of ``y0`` (vectorized operators) under L(t)."""
    y0 = np.asarray(y0, complex)
    if y0.ndim == 1:
        y0 = y0[:, None]
    t_eval = np.array([t1]) if t_eval is None else np.asarray(t_eval, float)
    if t1 == t0:
        return np.repeat(y0[None], t_eval.size, axis=0)
    if not lk:
        steps = np.diff(np.concatenate([[t0], t_eval]))
        if steps.size == 1 or np.allclose(steps[1:], steps[-1], rtol=1e-9, atol=0):
            # one propagator per distinct step on a uniform grid
            dense = l0.toarray()
            first = expm(dense * steps[0]) if steps[0] > 0 else None
            step = expm(dense * steps[-1]) if steps.size > 1 else None
            out, y = [], y0
            for k in range(t_eval.size):
                prop = first if k == 0 else step
                if prop is not None:
                    y = prop @ y
                out.append(y)
            return np.array(out)
        return np.array([expm_multiply(l0 * (t - t0), y0) if t > t0 else y0.copy() for t in t_eval])
    shape = y0.shape

    def rhs(t, y):
        m = y.reshape(shape)
        acc = l0 @ m
        for op, f in lk:
            v = f(t)
            if v != 0:
                acc = acc + v * (op @ m)
        return acc.ravel()

    sol = solve_ivp(rhs, (t0, t1), y0.ravel(), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StepFailure(sol.message)
    return sol.y.T.reshape(t_eval.size, *shape)


@dataclass
class BlockadeDynamics:
    times: np.ndarray
    pair_populations: dict  # "00", "0r", "r0", "rr" -> arrays
    single_rydberg: np.ndarray  # one ion driven alone

    @property
    def max_double(self):
        return float(self.pair_populations["rr"].max())


def blockade_dynamics(sys, v_dd, duration, n_times=201, sys_b=None):
    """Both ions driven from |00> with constant fields for ``duration``.

    Returns pair-state populations next to the single-ion reference.
    """
    pair = PairSystem(sys, sys if sys_b is None else sys_b, v_dd)
    if any(callable(f) for f in (sys.omega1, sys.omega2)):
        raise ConfigError("square-pulse protocol needs constant drives")
    l0, lk = pair.liouvillian_parts()
    times = np.linspace(0.0, duration, n_times)
    rho0 = np.zeros((pair.dim, pair.dim), complex)
    rho0[pair.index("0", "0"), pair.index("0", "0")] = 1.0
    states = _propagate(l0, lk, rho0.ravel(), 0.0, duration, times)[:, :, 0]
    states = states.reshape(-1, pair.dim, pair.dim)
    pops = {k: np.real(states[:, pair.index(*k), pair.index(*k)]) for k in ("00", "0r", "r0", "rr")}
    single = dyn.evolve(sys, duration=duration, dt_control=duration / (n_times - 1)).population(dyn.RYD)
    return BlockadeDynamics(times, pops, single[:n_times])


def collective_rabi_frequency(times, population):
    """Rabi frequency (rad/s) from a sin^2(W t / 2) fit to ``population``."""
    from .fitting import levenberg_marquardt

    t, y = np.asarray(times), np.asarray(population)
    power = np.abs(np.fft.rfft(y - y.mean()))
    freqs = np.fft.rfftfreq(t.size, t[1] - t[0]) * 2 * np.pi
    w0 = freqs[1 + np.argmax(power[1:])]

    def resid(p):
        return p[0] * np.sin(0.5 * p[1] * t) ** 2 - y

    fit = levenberg_marquardt(resid, np.array([max(y.max(), 1e-3), w0]))
    return float(abs(fit.params[1]))


QUBITS = ("1", "0")


@dataclass
class BlockadeGateResult:
    conditional_phase: float
    phases: dict
    fidelity: float
    wait: float
    duration: float
    double_excitation: float
    process: dict = field(repr=False, default=None)


def _wrap(x):
    return float((x + np.pi) % (2 * np.pi) - np.pi)


def _gate_map(pair, envelopes, wait):
    f1, f2, total = envelopes
    units = [(a + b, c + d) for a in QUBITS for b in QUBITS for c in QUBITS for d in QUBITS]
    y0 = np.zeros((pair.dim**2, len(units)), complex)
    for k, (ket, bra) in enumerate(units):
        y0[pair.index(*ket) * pair.dim + pair.index(*bra), k] = 1.0
    l0, lk = pair.liouvillian_parts((f1, f2), (f1, f2))
    y = _propagate(l0, lk, y0, 0.0, total)[-1]
    mid = y.copy()
    if wait > 0:
        l0w, lkw = pair.liouvillian_parts((0.0, 0.0), (0.0, 0.0))
        y = _propagate(l0w, lkw, y, 0.0, wait)[-1]
    back = (dyn._reversed(f1, total), dyn._reversed(f2, total))
    l0r, lkr = pair.liouvillian_parts(back, back)
    y = _propagate(l0r, lkr, y, 0.0, total)[-1]
    rr = pair.index("r", "r")
    p_rr = float(np.real(mid[rr * pair.dim + rr, units.index(("00", "00"))]))
    comp = [pair.index(a, b) for a in QUBITS for b in QUBITS]
    labels = [a + b for a in QUBITS for b in QUBITS]
    out = {}
    for k, (ket, bra) in enumerate(units):
        full = y[:, k].reshape(pair.dim, pair.dim)
        out[(ket, bra)] = full[np.ix_(comp, comp)]
    return out, labels, p_rr


def _phases_and_fidelity(process, labels):
    ref = "11"
    iref = labels.index(ref)
    phases = {}
    for i, lab in enumerate(labels):
        phases[lab] = float(np.angle(process[(lab, ref)][i, iref]))
    cond = _wrap(phases["00"] - phases["01"] - phases["10"] + phases["11"])
    target = np.array([phases[lab] for lab in labels])
    target[labels.index("00")] = phases["01"] + phases["10"] - phases["11"] + np.pi
    u = np.diag(np.exp(1j * target))
    total = 0.0
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            total += (u.conj().T @ process[(a, b)] @ u)[i, j]
    return cond, phases, float(np.real(total)) / len(labels) ** 2


def blockade_gate(sys, v_dd, envelopes, wait=None, sys_b=None):
    """Conditional phase gate from a double STIRAP on both ions.

    Each ion's |0> is carried to |r> and back (return pass time reversed);
    |1> is inert. During the whole sequence |r r> is shifted by ``v_dd``.
    With ``wait=None`` the hold time is chosen so the conditional phase is
    pi. The fidelity is the process fidelity with a controlled-Z, allowing
    single-qubit Z rotations.
    """
    if len(envelopes) != 3:
        raise ConfigError("envelopes must be (omega1(t), omega2(t), total)")
    pair = PairSystem(sys, sys if sys_b is None else sys_b, v_dd, spectator=True)
    if wait is None:
        if v_dd <= 0:
            raise ConfigError("a conditional phase needs v_dd > 0")
        proc, labels, _ = _gate_map(pair, envelopes, 0.0)
        cond0, _, _ = _phases_and_fidelity(proc, labels)
        # held |rr> accumulates -v_dd t
        wait = ((cond0 - np.pi) % (2 * np.pi)) / v_dd
    proc, labels, p_rr = _gate_map(pair, envelopes, wait)
    cond, phases, fid = _phases_and_fidelity(proc, labels)
    return BlockadeGateResult(cond, phases, fid, float(wait), 2 * envelopes[2] + wait, p_rr, proc)


# -- electric kick gate ----------------------------------------------------

KICK_STATES = ("dd", "du", "ud", "uu")


@dataclass
class KickGateProblem:
    """Two-ion kick gate in the basis dd, du, ud, uu (u = Rydberg).

    ``segments`` is a list of (amplitude V/m, duration s) played back to
    back. For each basis state, ``mode_frequencies`` (rad/s) and
    ``kick_couplings`` (J per V/m, F_j = coupling_j f) are length-2 arrays;
    ``com_term`` (C m) multiplies f(t) in the energy. ``impulsive`` marks
    problems meant to be much shorter than the motion.
    """

    segments: list
    mode_frequencies: dict
    kick_couplings: dict
    com_term: dict = None
    impulsive: bool = False

    def __post_init__(self):
        self.segments = [(float(a), float(d)) for a, d in self.segments]
        if any(d < 0 for _, d in self.segments):
            raise ConfigError("segment durations must be non-negative")
        for s in KICK_STATES:
            w = np.asarray(self.mode_frequencies[s], float)
            if w.shape != (2,) or not np.all(w > 0):
                raise ConfigError(f"mode frequencies for {s} must be two positive values")
        if self.com_term is None:
            self.com_term = {s: 0.0 for s in KICK_STATES}

    @property
    def duration(self):
        return sum(d for _, d in self.segments)

    def with_segments(self, segments):
        return replace(self, segments=list(segments))


def _mode_response(segments, omega, coupling):
    """Closed-form displacement and phase of one driven mode."""
    beta = 0j
    phase = 0.0
    t = 0.0
    for amp, dur in segments:
        c = coupling * amp / (HBAR * omega)
        ea = np.exp(1j * omega * t)
        eb = np.exp(1j * omega * (t + dur))
        b = beta + c * ea
        phase += omega * c**2 * dur - c * np.imag(np.conj(b) * (eb - ea))
        beta = b - c * eb
        t += dur
    return beta, phase


@dataclass
class KickGateResult:
    phases: dict
    mode_phases: dict
    centre_phases: dict
    displacements: dict
    residual_phonons: dict
    fidelity: float

    @property
    def differential_phase(self):
        return _wrap(self.phases["uu"] - self.phases["dd"])

    @property
    def total_residual(self):
        return float(sum(np.sum(v) for v in self.residual_phonons.values()))


def kick_fidelity(phases, residual, target_phase=np.pi):
    """Overlap of the final state with the ideal phase gate for an equal
    superposition of the four basis states, motion starting in the ground
    state. The target is dd, du, ud at phi_dd and uu at phi_dd + target."""
    ref = phases["dd"]
    amp = 0j
    for s in KICK_STATES:
        tgt = ref + (target_phase if s == "uu" else 0.0)
        amp += np.exp(1j * (phases[s] - tgt)) * np.exp(-0.5 * np.sum(residual[s]))
    return float(abs(amp / 4.0) ** 2)


def kick_gate_phases(problem, target_phase=np.pi):
    """Phases, residual phonons and gate fidelity of a kick waveform."""
    if problem.impulsive:
        wmin = min(np.min(problem.mode_frequencies[s]) for s in KICK_STATES)
        if problem.duration * 10 > 2 * np.pi / wmin:
            warnings.warn("pulse is not short compared with the motional period", NotImpulsive)
    phases, modes, centre, disp, resid = {}, {}, {}, {}, {}
    area = sum(a * d for a, d in problem.segments)
    for s in KICK_STATES:
        w = np.asarray(problem.mode_frequencies[s], float)
        g = np.asarray(problem.kick_couplings[s], float)
        res = [_mode_response(problem.segments, w[j], g[j]) for j in range(2)]
        disp[s] = np.array([r[0] for r in res])
        modes[s] = np.array([r[1] for r in res])
        resid[s] = np.abs(disp[s]) ** 2
        centre[s] = -problem.com_term[s] * area / HBAR
        phases[s] = float(modes[s].sum() + centre[s])
    return KickGateResult(phases, modes, centre, disp, resid, kick_fidelity(phases, resid, target_phase))


def kick_gate_numeric(problem, rtol=1e-12):
    """Same quantities as ``kick_gate_phases`` by integrating the driven
    oscillator equations (a cross-check on the closed form)."""
    phases, resid = {}, {}
    for s in KICK_STATES:
        total = -problem.com_term[s] * sum(a * d for a, d in problem.segments) / HBAR
        res = []
        for j in range(2):
            w = float(problem.mode_frequencies[s][j])
            g = float(problem.kick_couplings[s][j])
            y = np.zeros(3)
            tau = 0.0
            for amp, dur in problem.segments:
                c = g * amp / (HBAR * w)

                def rhs(x, yy, c=c):
                    db = -1j * c * np.exp(1j * x)
                    b = yy[0] + 1j * yy[1]
                    return [db.real, db.imag, np.imag(db * np.conj(b))]

                span = w * dur
                if span > 0:
                    sol = solve_ivp(rhs, (tau, tau + span), y, method="DOP853", rtol=rtol,
                                    atol=rtol * max(1.0, abs(c)) ** 2)
                    y = sol.y[:, -1]
                tau += span
            total += y[2]
            res.append(y[0] ** 2 + y[1] ** 2)
        phases[s] = float(total)
        resid[s] = np.array(res)
    return phases, resid


def kick_problem_from_crystal(trap, ion, nu2_up, segments=(), radial_axis_check=True):
    """Mode frequencies, couplings and centre terms of a two-ion crystal
    kicked by a uniform axial field, for each Rydberg configuration.

    ``nu2_up`` is the second-order sum (m^2/J) of the Rydberg level.
    """
    up = crys.Tag("rydberg", nu2_up)
    freqs, couplings, centre = {}, {}, {}
    for s in KICK_STATES:
        tags = [up if c == "u" else crys.GROUND for c in s]
        # the solver sorts ions by z; the two ions are identical so the
        # tag order defines left/right
        cr = crys.equilibrium_positions(trap, [ion, ion], tags, linear=True)
        if [t.kind for t in cr.tags] != [t.kind for t in tags]:
            cr = replace(cr, tags=tags)
        md = crys.normal_modes(cr)
        axial = sorted(md.modes_along(2), key=lambda m: md.frequencies[m])
        if radial_axis_check and len(axial) != 2:
            raise ConfigError("crystal is not a linear axial chain")
        m_rel = cr.masses / cr.masses[0]
        q = cr.charges * E_CHARGE
        w = md.frequencies[axial]
        g = []
        for j, m in enumerate(axial):
            b = np.array([md.ion_vector(m, i)[2] for i in range(2)]) / np.sqrt(m_rel)
            b *= np.sign(b.sum()) if b.sum() != 0 else 1.0
            g.append(-np.sum(q * b) * np.sqrt(HBAR / (2 * cr.masses[0] * w[j])))
        freqs[s] = w
        couplings[s] = np.array(g)
        centre[s] = float(-np.sum(q * cr.positions[:, 2]))
    return KickGateProblem(list(segments), freqs, couplings, centre)


@dataclass
class KickOptimization:
    segments: list
    infidelity: float
    objective: float
    result: KickGateResult
    evaluations: int


def kick_objective(result, target_phase=np.pi, weights=(1.0, 10.0, 1.0, 1.0)):
    """Weighted penalty on the gate phase, residual phonons and the
    single-excitation phase symmetry."""
    p = result.phases
    phase_err = _wrap(p["uu"] - p["dd"] - target_phase) ** 2
    resid = sum(float(np.sum(v**2)) for v in result.residual_phonons.values())
    sym1 = _wrap(p["dd"] - p["ud"]) ** 2
    sym2 = _wrap(p["dd"] - p["du"]) ** 2
    return weights[0] * phase_err + weights[1] * resid + weights[2] * sym1 + weights[3] * sym2


def _field_scale(problem):
    w = problem.mode_frequencies["dd"][0]
    g = abs(problem.kick_couplings["dd"][0]) or 1.0
    return HBAR * w / g


def optimize_kick(problem, n_segments=1, total_duration=None, target_phase=np.pi,
                  weights=(1.0, 10.0, 1.0, 1.0), restarts=8, rng=None, initial=None,
                  max_infidelity=0.1, require_feasible=True):
    """Search piecewise-constant waveforms with ``n_segments`` segments.

    With ``total_duration`` the segment durations share that total;
    otherwise each duration is free. Nelder-Mead from ``restarts`` random
    starts drawn from ``rng``; ``initial`` adds a starting waveform.
    Raises ``NoFeasiblePulse`` when the best infidelity exceeds
    ``max_infidelity`` (unless ``require_feasible`` is false).
    """
    if not 1 <= n_segments <= 16:
        raise ConfigError("n_segments must be between 1 and 16")
    rng = np.random.default_rng(0) if rng is None else rng
    fs = _field_scale(problem)
    period = 2 * np.pi / problem.mode_frequencies["dd"][0]

    def decode(x):
        amps = x[:n_segments] * fs
        if total_duration is not None:
            w = x[n_segments:] ** 2 + 1e-12
            durs = total_duration * w / w.sum()
        else:
            durs = np.abs(x[n_segments:]) * period
        return list(zip(amps, durs))

    def cost(x):
        res = kick_gate_phases(problem.with_segments(decode(x)), target_phase)
        return kick_objective(res, target_phase, weights)

    starts = []
    if initial is not None:
        amps = np.array([a for a, _ in initial]) / fs
        durs = np.array([d for _, d in initial])
        if total_duration is not None:
            tail = np.sqrt(durs / durs.sum())
        else:
            tail = durs / period
        starts.append(np.concatenate([amps, tail]))
    for _ in range(restarts):
        amps = rng.normal(0, 3.0, n_segments)
        tail = rng.uniform(0.2, 1.0, n_segments) * (1.0 if total_duration is not None else 1.5)
        starts.append(np.concatenate([amps, tail]))
    best, evals = None, 0
    for x0 in starts:
        sol = minimize(cost, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000 * len(x0),
                                "maxfev": 4000 * len(x0), "adaptive": True})
        sol = minimize(cost, sol.x, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 2000 * len(x0), "adaptive": True})
        evals += sol.nfev
        if best is None or sol.fun < best.fun:
            best = sol
    segments = decode(best.x)
    result = kick_gate_phases(problem.with_segments(segments), target_phase)
    out = KickOptimization(segments, 1.0 - result.fidelity, float(best.fun), result, evals)
    if require_feasible and out.infidelity > max_infidelity:
        raise NoFeasiblePulse(f"best infidelity {out.infidelity:.3g} exceeds {max_infidelity}")
    return out


# -- excitation transport --------------------------------------------------

MAX_TRANSPORT_IONS = 14


def exchange_scale(ion_mass, omega_z, d2):
    """J = -2 M omega_z^2 d2^2 / (9 e^2) in joules (d2 in C m)."""
    return -2.0 * ion_mass * omega_z**2 * d2**2 / (9.0 * E_CHARGE**2)


@dataclass
class TransportResult:
    times: np.ndarray
    magnetization: np.ndarray  # (n_times, N), <S_z^k>
    J: float
    hamiltonian: np.ndarray  # single-excitation block (J)

    @property
    def scaled_times(self):
        return self.times * abs(self.J) / HBAR

    def peak_time(self, site=-1):
        """First local maximum of <S_z> on ``site`` (in units of hbar/|J|)."""
        y = self.magnetization[:, site]
        for i in range(1, y.size - 1):
            if y[i] > y[i - 1] and y[i] >= y[i + 1] and y[i] > y[0] + 0.25:
                return float(self.scaled_times[i])
        raise ConfigError("no transfer peak inside the time window")


def transport_hamiltonian(positions_z, d2, quadrupole_difference=0.0):
    """Single-excitation Hamiltonian (J) of a chain at axial positions
    ``positions_z`` (m) with resonant exchange and the position-dependent
    trap-gradient shift of the excited level."""
    z = np.asarray(positions_z, float)
    n = z.size
    dz = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(dz, np.inf)
    h = -2.0 * COULOMB_K * d2**2 / (9.0 * dz**3)
    np.fill_diagonal(h, 0.0)
    if quadrupole_difference:
        extra_gradient = 0.5 * COULOMB_K * E_CHARGE * np.sum(1.0 / dz**3, axis=1)
        h[np.diag_indices(n)] = E_CHARGE * extra_gradient * quadrupole_difference
    return h


def spin_transport(crystal, d2, duration=None, times=None, n_times=401, initial=0,
                   quadrupole_difference=0.0):
    """Magnetization <S_z^k(t)> after exciting ion ``initial`` of a chain.

    Exchange couplings use the actual equilibrium spacings. ``duration``
    defaults to 4 hbar/|J|. Exact in the single-excitation sector.
    """
    n = crystal.N
    if n > MAX_TRANSPORT_IONS:
        raise TooLarge(f"{n} ions exceeds the limit of {MAX_TRANSPORT_IONS}")
    if not 0 <= initial < n:
        raise ConfigError("initial site outside the chain")
    omega_z = crystal.omega_ref
    J = exchange_scale(crystal.masses[0], omega_z, d2)
    if times is None:
        duration = 4.0 * HBAR / abs(J) if duration is None else duration
        times = np.linspace(0.0, duration, n_times)
    times = np.asarray(times, float)
    h = transport_hamiltonian(crystal.positions[:, 2], d2, quadrupole_difference)
    w, v = np.linalg.eigh(h)
    c0 = v[initial, :].conj()
    amps = (v[None, :, :] * (np.exp(-1j * np.outer(times, w) / HBAR) * c0)[:, None, :]).sum(axis=2)
    pops = np.abs(amps) ** 2
    return TransportResult(times, pops - 0.5, J, h)


# -- plaquette couplings ---------------------------------------------------

@dataclass
class PlaquetteResult:
    jz: np.ndarray  # rad/s
    jperp: np.ndarray
    mode_frequencies: np.ndarray
    detunings: np.ndarray
    lamb_dicke: np.ndarray  # (N, modes)
    spins: list
    uniformity: float
    lamb_dicke_ok: bool


def hexagonal_plaquette(ion, omega_xy, omega_z, omega_pinned, seed=0):
    """Seven ions in a plane (hexagon plus centre) with the centre ion's
    transverse frequency set to ``omega_pinned``. Returns (crystal, centre)."""
    trap = crys.HarmonicTrap(omega_xy, omega_xy, omega_z, reference=ion)
    cr = crys.equilibrium_positions(trap, [ion] * 7, seed=seed)
    r = np.linalg.norm(cr.positions[:, :2], axis=1)
    centre = int(np.argmin(r))
    if np.ptp(cr.positions[:, 2]) > 1e-6 * cr.length_scale:
        raise ConfigError("crystal is not planar for these frequencies")
    tags = list(cr.tags)
    tags[centre] = crys.Tag("ground", omega=(omega_xy, omega_xy, omega_pinned))
    freqs = cr.frequencies.copy()
    freqs[centre, 2] = omega_pinned
    return replace(cr, tags=tags, frequencies=freqs), centre


def plaquette_couplings(crystal, rabi, k_raman, delta_1=None, detunings=None, axis=2,
                        rabi_perp=None, nbar=0.0):
    """Raman-mediated spin-spin couplings J^{ij} = sum_m 4 W_i W_j eta_m^i
    eta_m^j / delta_m over the modes along ``axis`` (rad/s).

    ``rabi`` holds the differential two-photon Rabi frequency per ion
    (zero for ions without a spin). Detunings are either given per mode or
    set by ``delta_1`` from the lowest mode. ``rabi_perp`` does the same
    for the flip-flop coupling.
    """
    rabi = np.asarray(rabi, float)
    if rabi.size != crystal.N:
        raise ConfigError("one Rabi frequency per ion required")
    md = crys.normal_modes(crystal)
    modes = sorted(md.modes_along(axis), key=lambda m: md.frequencies[m])
    w = md.frequencies[modes]
    if detunings is None:
        if delta_1 is None:
            raise ConfigError("give delta_1 or per-mode detunings")
        detunings = w[0] + delta_1 - w
    detunings = np.asarray(detunings, float)
    if detunings.size != w.size:
        raise ConfigError("one detuning per transverse mode required")
    close = np.abs(detunings) < 1e-3 * w
    if np.any(close):
        raise ResonantMode(f"mode {int(np.argmax(close))} within 1e-3 of resonance")
    m_rel = crystal.masses / crystal.masses[0]
    eta = np.empty((crystal.N, w.size))
    for col, m in enumerate(modes):
        b = np.array([md.ion_vector(m, i)[axis] for i in range(crystal.N)]) / np.sqrt(m_rel)
        eta[:, col] = k_raman * np.sqrt(HBAR / (2 * crystal.masses[0] * w[col])) * b

    def couple(om):
        j = 4.0 * np.einsum("i,j,im,jm,m->ij", om, om, eta, eta, 1.0 / detunings)
        j = 0.5 * (j + j.T)
        np.fill_diagonal(j, 0.0)
        return j

    jz = couple(rabi)
    jperp = couple(np.asarray(rabi_perp, float)) if rabi_perp is not None else np.zeros_like(jz)
    spins = [i for i in range(crystal.N) if rabi[i] != 0]
    pairs = np.array([jz[i, j] for a, i in enumerate(spins) for j in spins[a + 1:]])
    mean = pairs.mean() if pairs.size else 0.0
    uniformity = float(np.max(np.abs(pairs - mean)) / abs(mean)) if pairs.size and mean else float("nan")
    ld_ok = bool(np.all(np.abs(eta) * np.sqrt(nbar + 1.0) < 0.3))
    return PlaquetteResult(jz, jperp, w, detunings, eta, spins, uniformity, ld_ok)
