"""Acceptance gate: one check per criterion, each printed as PASS or FAIL.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from rydion import crystal as crys  # noqa: E402
from rydion import dynamics as dyn  # noqa: E402
from rydion import interactions as inter  # noqa: E402
from rydion import rydstate as ryd  # noqa: E402
from rydion import spectra as sp  # noqa: E402
from rydion import trap as trapmod  # noqa: E402
from rydion.units import E_CHARGE, H_PLANCK, POLARIZABILITY_MHZ_VCM2, TWO_PI  # noqa: E402

MHZ = TWO_PI * 1e6
RESULTS = {}
LOSSY = dict(gamma_e=TWO_PI * 4.9e6, gamma_r=1 / 2.3e-6, dephasing=(TWO_PI * 100e3, TWO_PI * 100e3))


def within(value, target, rel):
    return abs(value / target - 1.0) <= rel


def criterion_1():
    """Sr+ 50S reference properties from Numerov plus quantum defects."""
    m = ryd.load_model("Sr88")
    s50, s51, p50 = ryd.RydbergLevel(50, 0, 0.5), ryd.RydbergLevel(51, 0, 0.5), ryd.RydbergLevel(50, 1, 0.5)
    got = {
        "binding": (ryd.binding_energy(m, s50), 3.8e-21, 0.03),
        "spacing": (ryd.level_energy(m, s51) - ryd.level_energy(m, s50), 1.6e-22, 0.05),
        "size": (ryd.radial_matrix_element(m, s50, s50, 1), 89e-9, 0.05),
        "dipole": (abs(ryd.transition_dipole(m, s50, p50)), 4.07e-27, 0.10),
        "alpha": (ryd.polarizability_sum(m, s50)[0], 1.02e-30, 0.20),
    }
    bad = [k for k, (v, t, r) in got.items() if not within(v, t, r)]
    assert not bad, f"out of band: {bad}"
    return ", ".join(f"{k} {v / t - 1:+.1%}" for k, (v, t, _) in got.items())


def criterion_2():
    ion = trapmod.CA40
    axis = np.array([0.0, 0.0, 1.0])
    eta = crys.lamb_dicke(crys.wavevector(122e-9), TWO_PI * 1e6, axis, ion.mass)
    # two photons absorbed from counter-propagating beams
    k_eff = crys.wavevector(213e-9) + crys.wavevector(285e-9, (0.0, 0.0, -1.0))
    eta_eff = crys.lamb_dicke(k_eff, TWO_PI * 1e6, axis, ion.mass)
    assert abs(abs(eta) - 0.58) <= 0.01 and abs(abs(eta_eff) - 0.083) <= 0.003, (eta, eta_eff)
    return f"eta {abs(eta):.4f}, eta_eff {abs(eta_eff):.4f}"


def criterion_3():
    ion = trapmod.CA40
    wz = TWO_PI * 1e6
    trap = crys.HarmonicTrap(TWO_PI * 10e6, TWO_PI * 10e6, wz)
    c2 = crys.equilibrium_positions(trap, [ion] * 2)
    z2 = np.sort(c2.positions[:, 2]) / c2.length_scale
    assert np.allclose(np.abs(z2), oracles.two_ion_half_spacing(), rtol=1e-6), z2
    c3 = crys.equilibrium_positions(trap, [ion] * 3)
    md = crys.normal_modes(c3)
    axial = np.sort(md.frequencies[md.modes_along(2)]) / wz
    assert np.allclose(axial, oracles.three_ion_axial_ratios(), rtol=1e-6), axial
    worst = 0.0
    for n in range(2, 11):
        cr = crys.equilibrium_positions(crys.HarmonicTrap(TWO_PI * 30e6, TWO_PI * 30e6, wz), [ion] * n)
        z = np.sort(cr.positions[:, 2])
        solver = np.diff(z).min()
        worst = max(worst, abs(crys.min_spacing_estimate(n, wz, ion) / solver - 1.0))
    assert worst < 0.10, worst
    return f"N=2 {z2[1]:.7f} l, N=3 ratios {np.round(axial, 7).tolist()}, worst d_min gap {worst:.1%}"


def criterion_4():
    rng = np.random.default_rng(4)
    wrf = TWO_PI * 10e6
    worst = 0.0
    for _ in range(20):
        b_mm, b_a = rng.uniform(0, 3), rng.uniform(0, 1)
        model = sp.LineModel(0.0, b_mm, b_a, wrf, TWO_PI * 0.1e6)
        offsets, weights = sp.sideband_series(model)
        ref, _ = oracles.time_domain_sidebands(b_mm, b_a)
        for off, w in zip(offsets, weights):
            k = int(round(off / wrf))
            r = ref.get(k, 0.0)
            if max(w, r) > 1e-3:
                worst = max(worst, abs(w - r) / r)
    assert worst < 0.02, worst
    offsets, weights = sp.sideband_series(sp.LineModel(0.0, 0.0, 0.8, wrf, TWO_PI * 0.1e6))
    orders = np.round(offsets / wrf).astype(int)
    odd = weights[orders % 2 == 1].sum()
    assert odd < 1e-12, odd
    return f"worst weight mismatch {worst:.2e}, Stark-only odd-order weight {odd:.1e}"


def criterion_5():
    u = POLARIZABILITY_MHZ_VCM2
    alpha, e_res, wrf, width = 800 * u, 24.0, TWO_PI * 6.5e6, TWO_PI * 0.5e6
    model = sp.line_model_from_fields(0.0, 1.0, alpha, e_res, wrf, width)
    x = np.linspace(-TWO_PI * 25e6, TWO_PI * 25e6, 401)
    p = sp.line_profile(model, x)
    rng = np.random.default_rng(52)
    y = rng.binomial(100, np.clip(p, 0, 1)) / 100
    s = np.sqrt(np.maximum(y * (1 - y), 0.01) / 100)
    fit = sp.fit_line(x, y, s, wrf, width, e_res, initial={"stark": 0.5 * alpha}, omega0=0.0)
    err = fit["estimates"]["alpha"] / alpha - 1
    assert abs(err) < 0.05, err
    clean = sp.fit_line(x, p, 0.01, wrf, width, e_res, initial={"stark": 0.5 * alpha})
    err_free = clean["estimates"]["alpha"] / alpha - 1
    assert abs(err_free) < 0.05, err_free
    return f"noisy, known line centre {err:+.2%}; noiseless, free centre {err_free:+.1e}"


def criterion_6():
    m = ryd.load_model("Sr88")
    hits = 0
    for k in range(100):
        lines = ryd.synthetic_series(m, 0, 0.5, range(38, 66), H_PLANCK * 1e6, np.random.default_rng(1000 + k))
        fit = ryd.fit_rydberg_series(lines, m, m)
        hits += abs(fit.ionization_limit - m.ionization_limit) <= 3 * fit.ionization_limit_sigma
    assert hits >= 95, hits
    return f"{hits}/100 trials within 3 sigma"


def criterion_7():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        w2 = TWO_PI * rng.uniform(10e6, 40e6)
        sys_ = dyn.ThreeLevelSystem(omega1=TWO_PI * 0.3e6, omega2=w2, gamma_e=TWO_PI * 4.9e6)
        grid = np.linspace(-1.5 * w2, 1.5 * w2, 301)
        peaks = dyn.find_peaks_refined(grid, dyn.spectroscopy_scan(sys_, grid))
        split = abs(peaks[0][0] - peaks[1][0])
        worst = max(worst, abs(split / w2 - 1))
    assert worst < 0.05, worst
    w2 = TWO_PI * 20e6
    gaps = []
    for d2 in TWO_PI * np.array([100e6, 200e6, 400e6]):
        sys_ = dyn.ThreeLevelSystem(omega1=TWO_PI * 0.3e6, omega2=w2, delta2=d2, gamma_e=TWO_PI * 4.9e6)
        near0 = np.linspace(-TWO_PI * 10e6, TWO_PI * 10e6, 201)
        neard = -d2 + near0
        p0 = dyn.find_peaks_refined(near0, dyn.spectroscopy_scan(sys_, near0))[0][0]
        pd = dyn.find_peaks_refined(neard, dyn.spectroscopy_scan(sys_, neard))[0][0]
        bound = 1.5 * w2**2 / (4 * d2) + (near0[1] - near0[0])
        assert abs(p0) <= bound and abs(pd + d2) <= bound, (d2, p0, pd)
        gaps.append((abs(p0), abs(pd + d2)))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps[:, 0]) < 0) and np.all(np.diff(gaps[:, 1]) < 0), gaps
    return f"worst splitting error {worst:.2%}; ridge offsets shrink {np.round(gaps[:, 0] / MHZ, 3).tolist()} MHz"


def criterion_8():
    lossless = dyn.stirap(dyn.ThreeLevelSystem(), dyn.sine_envelopes(TWO_PI * 30e6, TWO_PI * 30e6, 2e-6))
    assert lossless.transfer_efficiency > 0.999, lossless.transfer_efficiency
    single, double = [], []
    for rabi in (80e6, 100e6, 120e6):
        for length in (0.15e-6, 0.2e-6, 0.25e-6):
            r = dyn.stirap(dyn.ThreeLevelSystem(**LOSSY), dyn.sine_envelopes(TWO_PI * rabi, TWO_PI * rabi, length))
            single.append(r.transfer_efficiency)
            double.append(r.return_population)
    single, double = np.array(single), np.array(double)
    assert np.all(np.abs(single - 0.91) <= 0.05) and np.all(np.abs(double - 0.83) <= 0.05), (single, double)
    waits = np.linspace(0, 4e-6, 9)
    env = dyn.sine_envelopes(TWO_PI * 100e6, TWO_PI * 100e6, 0.2e-6)
    ret = [dyn.stirap(dyn.ThreeLevelSystem(**LOSSY), env, wait=w).return_population for w in waits]
    tau, _, _ = dyn.fit_exponential_decay(waits, np.array(ret))
    assert within(tau, 2.3e-6, 0.10), tau
    return (f"lossless {lossless.transfer_efficiency:.6f}; box single {single.min():.3f}..{single.max():.3f}, "
            f"double {double.min():.3f}..{double.max():.3f}; lifetime {tau * 1e6:.3f} us")


def criterion_9():
    env = dyn.sine_envelopes(TWO_PI * 100e6, TWO_PI * 100e6, 0.2e-6)
    phis = np.linspace(0, 2 * np.pi, 13)
    clean = dyn.geometric_phase_gate(dyn.ThreeLevelSystem(), env, phis)
    assert clean.fidelity > 0.999, clean.fidelity
    design = np.column_stack([np.ones_like(phis), np.cos(phis), np.sin(phis)])
    coef, *_ = np.linalg.lstsq(design, clean.p0, rcond=None)
    misfit = np.abs(design @ coef - clean.p0).max()
    assert misfit < 1e-3, misfit
    lossy = dyn.geometric_phase_gate(dyn.ThreeLevelSystem(**LOSSY), env, phis)
    assert 0.7 <= lossy.fidelity <= 0.9, lossy.fidelity
    return f"lossless {clean.fidelity:.5f} (sinusoid misfit {misfit:.1e}); lossy {lossy.fidelity:.3f}"


def criterion_10():
    sys_ = dyn.ThreeLevelSystem(omega1=TWO_PI * 40e6, omega2=TWO_PI * 40e6, delta1=TWO_PI * 1e9, delta2=-TWO_PI * 1e9)
    omega_eff = dyn.adiabatic_eliminate(sys_).omega_eff
    res = inter.blockade_dynamics(sys_, 20 * abs(omega_eff), 3e-6)
    pp = res.pair_populations
    ratio = (inter.collective_rabi_frequency(res.times, pp["0r"] + pp["r0"])
             / inter.collective_rabi_frequency(res.times, res.single_rydberg))
    assert res.max_double < 0.05 and within(ratio, np.sqrt(2), 0.02), (res.max_double, ratio)
    return f"max P_rr {res.max_double:.4f}, collective/single {ratio / np.sqrt(2):.4f} x sqrt2"


def _kick_problem():
    ion = trapmod.CA40
    trap = trapmod.trap_for_frequencies(ion, TWO_PI * 8e6, TWO_PI * 1e6, TWO_PI * 40e6)
    return inter.kick_problem_from_crystal(trap, ion, trapmod.nu2_from_polarizability(-2.02e-29))


def criterion_11():
    problem = _kick_problem()
    segs = [(3.0, 0.4e-6), (-2.0, 0.3e-6), (1.5, 0.5e-6)]
    closed = inter.kick_gate_phases(problem.with_segments(segs))
    numeric, _ = inter.kick_gate_numeric(problem.with_segments(segs))
    rel = max(abs(numeric[s] - closed.phases[s]) / abs(closed.phases[s]) for s in inter.KICK_STATES)
    assert rel < 1e-8, rel
    weights = (1.0, 1e4, 0.0, 0.0)
    one = inter.optimize_kick(problem, 1, 1e-6, np.pi, weights, 1, np.random.default_rng(0), require_feasible=False)
    three = inter.optimize_kick(problem, 3, 1e-6, np.pi, weights, 1, np.random.default_rng(0), require_feasible=False)
    assert three.infidelity < one.infidelity and three.objective < one.objective, (one.infidelity, three.infidelity)
    best = inter.optimize_kick(problem, 3, 3e-6, np.pi, weights, 1, np.random.default_rng(0), require_feasible=False)
    dphi = abs(abs(best.result.differential_phase) - np.pi)
    assert dphi < 1e-3 and best.result.total_residual < 1e-3, (dphi, best.result.total_residual)
    return (f"closed vs numeric {rel:.1e}; at 1 us infidelity 1 seg {one.infidelity:.4f} > 3 seg {three.infidelity:.4f}; "
            f"pi phase error {dphi:.1e}, residual phonons {best.result.total_residual:.1e}")


def criterion_12():
    ion = trapmod.CA40
    trap = crys.HarmonicTrap(TWO_PI * 10e6, TWO_PI * 10e6, TWO_PI * 1e6)
    chain = crys.equilibrium_positions(trap, [ion] * 10, linear=True)
    res = inter.spin_transport(chain, 4.1e-27)
    peak = res.peak_time(-1)
    total = res.magnetization.sum(axis=1)
    drift = np.abs(total - total[0]).max()
    assert within(peak, 1.8, 0.15) and drift < 1e-10, (peak, drift)
    return f"first-to-last peak {peak:.3f} hbar/J, S_z drift {drift:.1e}"


def criterion_13():
    ion = trapmod.CA40
    cr, centre = inter.hexagonal_plaquette(ion, TWO_PI * 1e6, TWO_PI * 3e6, TWO_PI * 2.7e6)
    rabi = np.full(cr.N, TWO_PI * 50e3)
    rabi[centre] = 0.0
    res = inter.plaquette_couplings(cr, rabi, 2 * TWO_PI / 355e-9, delta_1=TWO_PI * 10e3)
    assert res.uniformity < 0.3, res.uniformity
    return f"outer-ring uniformity {res.uniformity:.3f}"


def criterion_14():
    import test_invariants as inv
    counts = inv.run_all_suites(cases=1000)
    return ", ".join(f"{k} {v}" for k, v in counts.items())


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 15)}


def _run(k):
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            detail = CRITERIA[k]()
        status = "PASS"
    except AssertionError as exc:
        detail, status = f"{exc}", "FAIL"
    elapsed = time.perf_counter() - start
    RESULTS[k] = (status, detail, elapsed)
    line = f"criterion {k:2d}: {status} ({elapsed:5.1f} s) {detail}"
    print(line)
    return status, detail


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    status, detail = _run(k)
    assert status == "PASS", detail


if __name__ == "__main__":
    failed = [k for k in sorted(CRITERIA) if _run(k)[0] != "PASS"]
    sys.exit(1 if failed else 0)
