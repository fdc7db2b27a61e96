"""Command line scenario runner: ``rydion run``, ``rydion sweep``, ``rydion fit``.

Scenarios are YAML files::

    kind: stirap
    seed: 3
    parameters:
      omega1_max: 100 MHz
      pulse_length: 0.2 us
    sweep: {parameter: parameters.wait, values: [0 us, 1 us]}
    output: {file: stirap.csv, format: delimited}

Quantities carry unit suffixes; frequencies given in Hz are cyclic and
become angular internally. Tables are comma separated with a '#' header
whose column names carry a unit token in brackets.
"""
import argparse
import hashlib
import io
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from . import crystal as crys
from . import dynamics as dyn
from . import interactions as inter
from . import rydstate as ryd
from . import spectra
from . import trap as trapmod
from .errors import ConfigError, DataFileMissing, RydionError
from .units import H_PLANCK, HBAR, POLARIZABILITY_MHZ_VCM2, TWO_PI, parse_quantity

REQUIRED = object()
MHZ = TWO_PI * 1e6


def _mhz(w):
    return w / MHZ


# -- parameter schemas -----------------------------------------------------

SYSTEM = {
    "omega1": ("angular_frequency", 0.0),
    "omega2": ("angular_frequency", 0.0),
    "delta1": ("angular_frequency", 0.0),
    "delta2": ("angular_frequency", 0.0),
    "phase": ("angle", 0.0),
    "gamma_e": ("angular_frequency", 0.0),
    "lifetime_r": ("time", None),
    "dephasing1": ("angular_frequency", 0.0),
    "dephasing2": ("angular_frequency", 0.0),
}

PULSES = {
    "omega1_max": ("angular_frequency", REQUIRED),
    "omega2_max": ("angular_frequency", REQUIRED),
    "pulse_length": ("time", REQUIRED),
    "overlap": ("dimensionless", 0.5),
}

SCHEMAS = {
    "spectrum": {
        "omega_rf": ("angular_frequency", REQUIRED),
        "natural_width": ("angular_frequency", REQUIRED),
        "span": ("angular_frequency", REQUIRED),
        "points": ("int", 801),
        "beta_mm": ("dimensionless", 0.0),
        "beta_alpha": ("dimensionless", 0.0),
        "alpha": ("polarizability", None),
        "e_res": ("field", None),
        "coherent": ("bool", False),
        "repetitions": ("int", 0),
    },
    "modes": {
        "species": ("str", "Ca40"),
        "n_ions": ("int", REQUIRED),
        "omega_z": ("angular_frequency", REQUIRED),
        "omega_radial": ("angular_frequency", REQUIRED),
        "omega_rf": ("angular_frequency", TWO_PI * 30e6),
        "rydberg_ions": ("int_list", []),
        "alpha": ("polarizability", 0.0),
        "doubly_charged_ions": ("int_list", []),
    },
    "rabi": dict(SYSTEM, duration=("time", REQUIRED), points=("int", 201)),
    "autler_townes": dict(SYSTEM, span=("angular_frequency", REQUIRED), points=("int", 401)),
    "stirap": dict(SYSTEM, **PULSES, wait=("time", 0.0), phase_shift=("angle", 0.0),
                   rabi_spread=("dimensionless", 0.0)),
    "geometric_gate": dict(SYSTEM, **PULSES, wait=("time", 0.0), gate_phase=("angle", math.pi),
                           phase_points=("int", 9)),
    "blockade": dict(SYSTEM, **{k: (d, None) for k, (d, _) in PULSES.items()},
                     v_dd=("angular_frequency", REQUIRED), protocol=("str", "square"),
                     duration=("time", None), points=("int", 201), wait=("time", None)),
    "kick_gate": {
        "species": ("str", "Ca40"),
        "omega_z": ("angular_frequency", REQUIRED),
        "omega_radial": ("angular_frequency", REQUIRED),
        "omega_rf": ("angular_frequency", REQUIRED),
        "alpha": ("polarizability", REQUIRED),
        "n_segments": ("int", 3),
        "total_duration": ("time", None),
        "restarts": ("int", 4),
        "target_phase": ("angle", math.pi),
        "weights": ("float_list", [1.0, 10.0, 1.0, 1.0]),
    },
    "transport": {
        "species": ("str", "Ca40"),
        "n_ions": ("int", REQUIRED),
        "omega_z": ("angular_frequency", REQUIRED),
        "omega_radial": ("angular_frequency", REQUIRED),
        "dipole": ("dipole", REQUIRED),
        "duration": ("dimensionless", 4.0),
        "points": ("int", 401),
        "initial": ("int", 0),
    },
    "plaquette": {
        "species": ("str", "Ca40"),
        "omega_xy": ("angular_frequency", REQUIRED),
        "omega_z": ("angular_frequency", REQUIRED),
        "omega_pinned": ("angular_frequency", REQUIRED),
        "delta_1": ("angular_frequency", REQUIRED),
        "rabi": ("angular_frequency", REQUIRED),
        "raman_wavelength": ("length", REQUIRED),
    },
    "series_fit": {
        "species": ("str", "Sr88"),
        "L": ("int", 0),
        "J": ("dimensionless", 0.5),
        "n_min": ("int", 38),
        "n_max": ("int", 65),
        "noise": ("frequency", 1e6),
        "parameterization": ("str", "mu1"),
        "data_file": ("str", None),
    },
    "line_fit": {
        "omega_rf": ("angular_frequency", REQUIRED),
        "natural_width": ("angular_frequency", REQUIRED),
        "e_res": ("field", REQUIRED),
        "alpha": ("polarizability", None),
        "beta_mm": ("dimensionless", 1.0),
        "span": ("angular_frequency", REQUIRED),
        "points": ("int", 401),
        "repetitions": ("int", 100),
        "omega0": ("angular_frequency", None),
        "alpha_guess": ("polarizability", None),
        "data_file": ("str", None),
    },
}

TOP_LEVEL = {"kind", "seed", "parameters", "sweep", "output"}


def _convert(value, dim, path):
    if value is None:
        return None
    if dim == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if dim == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if dim == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if dim in ("int_list", "float_list"):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        cast = int if dim == "int_list" else float
        try:
            return [cast(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: bad list entry") from None
    out = parse_quantity(value, dim, path)
    if not math.isfinite(out):
        raise ConfigError(f"{path}: value must be finite")
    return out


def parse_parameters(kind, raw, prefix="parameters"):
    """Validate and convert a parameter mapping for ``kind`` to SI."""
    if kind not in SCHEMAS:
        raise ConfigError(f"kind: unknown scenario kind {kind!r} (choose from {', '.join(SCHEMAS)})")
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected a mapping")
    schema = SCHEMAS[kind]
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{prefix}.{key}: unknown key for kind {kind!r}")
    out = {}
    for key, (dim, default) in schema.items():
        if key in raw:
            out[key] = _convert(raw[key], dim, f"{prefix}.{key}")
        elif default is REQUIRED:
            raise ConfigError(f"{prefix}.{key}: required for kind {kind!r}")
        else:
            out[key] = default
    return out


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFileMissing(f"scenario file {path} not found") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario must be a mapping")
    for key in data:
        if key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown top-level key")
    if "kind" not in data:
        raise ConfigError("kind: required")
    parse_parameters(data["kind"], data.get("parameters"))
    return data, text


# -- scenario handlers -----------------------------------------------------
# Each returns (columns, rows, summary, message). Column and summary names
# carry a unit token in brackets.

def _system(p, **override):
    gamma_r = 1.0 / p["lifetime_r"] if p.get("lifetime_r") else 0.0
    base = dict(omega1=p["omega1"], omega2=p["omega2"], delta1=p["delta1"], delta2=p["delta2"],
                phi=p["phase"], gamma_e=p["gamma_e"], gamma_r=gamma_r,
                dephasing=(p["dephasing1"], p["dephasing2"]))
    base.update(override)
    return dyn.ThreeLevelSystem(**base)


def _envelopes(p, scale=1.0):
    for key in PULSES:
        if p.get(key) is None:
            raise ConfigError(f"parameters.{key}: required for this protocol")
    return dyn.sine_envelopes(scale * p["omega1_max"], scale * p["omega2_max"], p["pulse_length"], p["overlap"])


def _species(name):
    if name not in trapmod.SPECIES:
        raise ConfigError(f"parameters.species: unknown species {name!r}")
    return trapmod.SPECIES[name]


def run_spectrum(p, rng):
    if p["alpha"] is not None:
        if p["e_res"] is None:
            raise ConfigError("parameters.e_res: required with alpha")
        b_alpha, offset = spectra.stark_index(p["alpha"], p["e_res"], p["omega_rf"])
    else:
        b_alpha, offset = p["beta_alpha"], -2.0 * p["omega_rf"] * p["beta_alpha"]
    model = spectra.LineModel(0.0, p["beta_mm"], b_alpha, p["omega_rf"], p["natural_width"], offset)
    grid = np.linspace(-p["span"], p["span"], p["points"])
    signal = spectra.line_profile(model, grid, coherent=p["coherent"])
    if p["repetitions"] > 0:
        signal, _ = projection_noise(signal, p["repetitions"], rng)
    rows = np.column_stack([_mhz(grid), signal])
    summary = {"beta_alpha[1]": b_alpha, "beta_mm[1]": p["beta_mm"], "carrier_offset[MHz]": _mhz(offset),
               "fwhm[MHz]": _mhz(spectra.fwhm(grid, spectra.line_profile(model, grid, coherent=p["coherent"])))}
    return ["detuning[MHz]", "signal[1]"], rows, summary, f"beta_alpha {b_alpha:.4g}"


def run_modes(p, rng):
    ion = _species(p["species"])
    n = p["n_ions"]
    trap = trapmod.trap_for_frequencies(ion, p["omega_radial"], p["omega_z"], p["omega_rf"])
    nu2 = trapmod.nu2_from_polarizability(p["alpha"])
    tags = []
    for i in range(n):
        if i in p["rydberg_ions"]:
            tags.append(crys.Tag("rydberg", nu2))
        elif i in p["doubly_charged_ions"]:
            tags.append(crys.Tag("doubly_charged"))
        else:
            tags.append(crys.GROUND)
    for i in p["rydberg_ions"] + p["doubly_charged_ions"]:
        if not 0 <= i < n:
            raise ConfigError(f"parameters: ion index {i} outside 0..{n - 1}")
    cr = crys.equilibrium_positions(trap, [ion] * n, tags)
    md = crys.normal_modes(cr)
    cols = ["mode[1]", "frequency[MHz]"] + [f"e{i}{ax}[1]" for i in range(n) for ax in "xyz"]
    rows = np.column_stack([np.arange(md.frequencies.size), _mhz(md.frequencies), md.eigenvectors.T])
    axial = sorted(md.frequencies[m] for m in md.modes_along(2))
    summary = {"lowest_axial[MHz]": _mhz(axial[0])}
    for k, w in enumerate(axial[1:], start=2):
        summary[f"axial_ratio_{k}[1]"] = w / axial[0]
    ratio = f", second/first axial {axial[1] / axial[0]:.6f}" if len(axial) > 1 else ""
    return cols, rows, summary, f"{md.frequencies.size} modes{ratio}"


def run_rabi(p, rng):
    traj = dyn.evolve(_system(p), duration=p["duration"], dt_control=p["duration"] / (p["points"] - 1))
    pops = traj.populations
    rows = np.column_stack([traj.times * 1e6, pops])
    k = int(np.argmax(pops[:, dyn.RYD]))
    summary = {"max_P_r[1]": pops[k, dyn.RYD], "time_of_max_P_r[us]": traj.times[k] * 1e6}
    return ["time[us]", "P_0[1]", "P_e[1]", "P_r[1]", "P_g[1]"], rows, summary, \
        f"max P_r {pops[k, dyn.RYD]:.4f}"


def run_autler_townes(p, rng):
    sys_ = _system(p)
    grid = np.linspace(-p["span"], p["span"], p["points"])
    pe = dyn.spectroscopy_scan(sys_, grid, observable=dyn.INTER)
    peaks = dyn.find_peaks_refined(grid, pe)
    split = abs(peaks[0][0] - peaks[1][0]) if len(peaks) >= 2 else float("nan")
    summary = {"splitting[MHz]": _mhz(split), "omega2[MHz]": _mhz(p["omega2"])}
    return ["delta1[MHz]", "P_e[1]"], np.column_stack([_mhz(grid), pe]), summary, \
        f"splitting {_mhz(split):.4f} MHz"


def run_stirap(p, rng):
    spread = p["rabi_spread"]
    scales = [1.0] if spread <= 0 else [1.0 - spread, 1.0, 1.0 + spread]
    rows = []
    for s in scales:
        res = dyn.stirap(_system(p), _envelopes(p, s), wait=p["wait"], phase_shift=p["phase_shift"])
        rows.append([s, res.transfer_efficiency, res.return_population])
    rows = np.array(rows)
    mid = rows[len(scales) // 2]
    half = 0.5 * np.ptp(rows, axis=0)
    summary = {"single_pass_efficiency[1]": mid[1], "single_pass_spread[1]": half[1],
               "return_population[1]": mid[2], "return_spread[1]": half[2]}
    msg = (f"single-pass efficiency {mid[1]:.3f}±{half[1]:.3f}, "
           f"double-pass {mid[2]:.3f}±{half[2]:.3f}")
    return ["rabi_scale[1]", "single_pass_efficiency[1]", "return_population[1]"], rows, summary, msg


def run_geometric_gate(p, rng):
    phis = np.linspace(0, 2 * np.pi, p["phase_points"])
    res = dyn.geometric_phase_gate(_system(p), _envelopes(p), phis, p["gate_phase"], p["wait"])
    summary = {"fidelity[1]": res.fidelity, "contrast[1]": res.contrast}
    return ["phase[rad]", "P_0[1]"], np.column_stack([phis, res.p0]), summary, \
        f"gate fidelity {res.fidelity:.3f}"


def run_blockade(p, rng):
    if p["protocol"] == "square":
        if p["duration"] is None:
            raise ConfigError("parameters.duration: required for the square protocol")
        sys_ = _system(p)
        res = inter.blockade_dynamics(sys_, p["v_dd"], p["duration"], p["points"])
        pp = res.pair_populations
        rows = np.column_stack([res.times * 1e6, pp["00"], pp["0r"], pp["r0"], pp["rr"], res.single_rydberg])
        single = inter.collective_rabi_frequency(res.times, res.single_rydberg)
        pair = inter.collective_rabi_frequency(res.times, pp["0r"] + pp["r0"])
        summary = {"max_P_rr[1]": res.max_double, "collective_ratio[1]": pair / single}
        return ["time[us]", "P_00[1]", "P_0r[1]", "P_r0[1]", "P_rr[1]", "P_r_single[1]"], rows, summary, \
            f"max P_rr {res.max_double:.4f}, collective/single {pair / single:.4f}"
    if p["protocol"] == "stirap":
        res = inter.blockade_gate(_system(p), p["v_dd"], _envelopes(p), p["wait"])
        labels = [a + b for a in inter.QUBITS for b in inter.QUBITS]
        rows = np.array([[i, res.phases[lab]] for i, lab in enumerate(labels)])
        summary = {"conditional_phase[rad]": res.conditional_phase, "fidelity[1]": res.fidelity,
                   "wait[us]": res.wait * 1e6, "duration[us]": res.duration * 1e6}
        return ["basis_index[1]", "phase[rad]"], rows, summary, \
            f"conditional phase {res.conditional_phase:.4f} rad, fidelity {res.fidelity:.3f}"
    raise ConfigError(f"parameters.protocol: unknown protocol {p['protocol']!r}")


def run_kick_gate(p, rng):
    ion = _species(p["species"])
    if len(p["weights"]) != 4:
        raise ConfigError("parameters.weights: four weights required")
    trap = trapmod.trap_for_frequencies(ion, p["omega_radial"], p["omega_z"], p["omega_rf"])
    problem = inter.kick_problem_from_crystal(trap, ion, trapmod.nu2_from_polarizability(p["alpha"]))
    opt = inter.optimize_kick(problem, p["n_segments"], p["total_duration"], p["target_phase"],
                              tuple(p["weights"]), p["restarts"], rng, require_feasible=False)
    starts = np.concatenate([[0.0], np.cumsum([d for _, d in opt.segments])[:-1]])
    rows = np.array([[i, starts[i] * 1e6, a, d * 1e6] for i, (a, d) in enumerate(opt.segments)])
    res = opt.result
    summary = {"infidelity[1]": opt.infidelity, "differential_phase[rad]": res.differential_phase,
               "residual_phonons[1]": res.total_residual, "objective[1]": opt.objective}
    return ["segment[1]", "start[us]", "amplitude[V/m]", "duration[us]"], rows, summary, \
        f"differential phase {res.differential_phase:.4f} rad, residual phonons {res.total_residual:.2e}"


def run_transport(p, rng):
    ion = _species(p["species"])
    trap = crys.HarmonicTrap(p["omega_radial"], p["omega_radial"], p["omega_z"], reference=ion)
    cr = crys.equilibrium_positions(trap, [ion] * p["n_ions"], linear=True)
    probe = inter.exchange_scale(ion.mass, cr.omega_ref, p["dipole"])
    times = np.linspace(0.0, p["duration"], p["points"]) * HBAR / abs(probe)
    res = inter.spin_transport(cr, p["dipole"], times=times, initial=p["initial"])
    cols = ["time[hbar/J]"] + [f"Sz_{k + 1}[1]" for k in range(cr.N)]
    rows = np.column_stack([res.scaled_times, res.magnetization])
    total = res.magnetization.sum(axis=1)
    summary = {"J[Hz]": res.J / H_PLANCK, "sz_drift[1]": float(np.abs(total - total[0]).max())}
    msg = f"J/h {res.J / H_PLANCK:.4g} Hz"
    try:
        peak = res.peak_time(-1 if p["initial"] == 0 else 0)
        summary["peak_time[hbar/J]"] = peak
        msg += f", end-site peak at {peak:.3f} hbar/J"
    except ConfigError:
        summary["peak_time[hbar/J]"] = float("nan")
    return cols, rows, summary, msg


def run_plaquette(p, rng):
    ion = _species(p["species"])
    cr, centre = inter.hexagonal_plaquette(ion, p["omega_xy"], p["omega_z"], p["omega_pinned"])
    rabi = np.full(cr.N, p["rabi"])
    rabi[centre] = 0.0
    k = 2.0 * TWO_PI / p["raman_wavelength"]
    res = inter.plaquette_couplings(cr, rabi, k, delta_1=p["delta_1"])
    rows = np.array([[i, j, res.jz[i, j] / TWO_PI / 1e3] for i in range(cr.N) for j in range(cr.N) if i < j])
    summary = {"uniformity[1]": res.uniformity, "lowest_mode[MHz]": _mhz(res.mode_frequencies[0]),
               "lamb_dicke_ok[1]": float(res.lamb_dicke_ok)}
    return ["i[1]", "j[1]", "Jz[kHz]"], rows, summary, f"outer-ring uniformity {res.uniformity:.3f}"


def _series_summary(fit, lines, model=None):
    n = lines[:, 0]
    rows = np.column_stack([n, fit.residuals / H_PLANCK / 1e6])
    summary = {"ionization_limit[J]": fit.ionization_limit, "ionization_limit_sigma[J]": fit.ionization_limit_sigma}
    for key, vals in sorted(fit.series.items()):
        tag = "_".join(str(k) for k in key) if isinstance(key, tuple) else str(key)
        summary[f"mu0_{tag}[1]"] = vals[0]
    if model is not None:
        summary["limit_error_sigmas[1]"] = (fit.ionization_limit - model.ionization_limit) / fit.ionization_limit_sigma
    return ["n[1]", "residual[MHz]"], rows, summary


def run_series_fit(p, rng):
    model = ryd.load_model(p["species"], parameterization=p["parameterization"])
    truth = None
    if p["data_file"]:
        lines = ryd.read_line_list(p["data_file"])
    else:
        lines = ryd.synthetic_series(model, p["L"], p["J"], range(p["n_min"], p["n_max"] + 1),
                                     H_PLANCK * p["noise"], rng)
        truth = model
    fit = ryd.fit_rydberg_series(lines, model, model, p["parameterization"])
    cols, rows, summary = _series_summary(fit, lines, truth)
    return cols, rows, summary, f"ionization limit {fit.ionization_limit:.10e} J"


def run_line_fit(p, rng):
    if p["data_file"]:
        x, y, s = _read_spectrum(p["data_file"])
        truth = None
    else:
        if p["alpha"] is None:
            raise ConfigError("parameters.alpha: required for a synthetic spectrum")
        if p["repetitions"] < 1:
            raise ConfigError("parameters.repetitions: must be positive")
        model = spectra.line_model_from_fields(p["omega0"] or 0.0, p["beta_mm"], p["alpha"], p["e_res"],
                                            p["omega_rf"], p["natural_width"])
        x = model.omega0 + model.carrier_offset + np.linspace(-p["span"], p["span"], p["points"])
        y, s = projection_noise(spectra.line_profile(model, x - model.omega0), p["repetitions"], rng)
        truth = p["alpha"]
    guess = p["alpha_guess"] if p["alpha_guess"] is not None else (0.7 * truth if truth else None)
    if guess is None:
        raise ConfigError("parameters.alpha_guess: required when fitting a data file")
    init = {"stark": guess}
    fit = spectra.fit_line(x, y, s, p["omega_rf"], p["natural_width"], p["e_res"], initial=init, omega0=p["omega0"])
    est, unc = fit["estimates"], fit["sigma"]
    model_y = est["amplitude"] * spectra.line_profile(fit["model"], x - fit["model"].omega0)
    rows = np.column_stack([_mhz(x), y, s, model_y])
    a = est["alpha"] / POLARIZABILITY_MHZ_VCM2
    summary = {"alpha[MHz/(V/cm)^2]": a, "alpha_sigma[MHz/(V/cm)^2]": unc["alpha"] / POLARIZABILITY_MHZ_VCM2,
               "beta_mm[1]": est["beta_mm"], "reduced_chi2[1]": fit["reduced_chi2"]}
    return ["detuning[MHz]", "signal[1]", "sigma[1]", "model[1]"], rows, summary, f"alpha {a:.4g} MHz/(V/cm)^2"


def projection_noise(probability, repetitions, rng):
    """Binomial excitation counts over ``repetitions`` shots per point, with
    a standard error floored at one count so empty points keep weight."""
    y = rng.binomial(repetitions, np.clip(probability, 0.0, 1.0)) / repetitions
    s = np.sqrt(np.maximum(y * (1.0 - y), 1.0 / repetitions) / repetitions)
    return y, s


DETUNING_UNITS = {"Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": MHZ, "rad/s": 1.0}


def _read_spectrum(path):
    """Columns detuning, signal[, sigma]. The detuning unit comes from a
    bracketed header token such as ``detuning[MHz]``; plain Hz otherwise.
    With a header, sigma is only read from a column named ``sigma``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFileMissing(f"spectrum file {path} not found") from None
    scale, names = TWO_PI, None
    for line in text.splitlines():
        if line.startswith("#") and "[" in line:
            names = [c.strip().lstrip("#").strip().split("[")[0] for c in line.split(",")]
            token = line.split(",")[0].split("[", 1)[1].split("]", 1)[0].strip()
            if token not in DETUNING_UNITS:
                raise ConfigError(f"{path}: unknown detuning unit {token!r}")
            scale = DETUNING_UNITS[token]
            break
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed spectrum ({exc})") from None
    if data.size == 0 or data.shape[1] < 2:
        raise ConfigError(f"{path}: need columns detuning, signal[, sigma]")
    if names is not None:
        sigma_col = names.index("sigma") if "sigma" in names else None
    else:
        sigma_col = 2 if data.shape[1] > 2 else None
    if sigma_col is not None:
        s = data[:, sigma_col]
    else:
        s = np.full(data.shape[0], max(np.std(data[:, 1]) * 0.05, 1e-6))
    return data[:, 0] * scale, data[:, 1], s


HANDLERS = {
    "spectrum": run_spectrum, "modes": run_modes, "rabi": run_rabi, "autler_townes": run_autler_townes,
    "stirap": run_stirap, "geometric_gate": run_geometric_gate, "blockade": run_blockade,
    "kick_gate": run_kick_gate, "transport": run_transport, "plaquette": run_plaquette,
    "series_fit": run_series_fit, "line_fit": run_line_fit,
}


# -- output ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, str):
        return v
    return f"{float(v):.10g}"


def format_table(columns, rows, preamble=()):
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    buf.write("# " + ",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _versions():
    return {"rydion": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def input_hash(text, seed, extra=""):
    return hashlib.sha256(f"{text}\nseed={seed}\n{extra}".encode()).hexdigest()


def _clean(v):
    if isinstance(v, (np.floating, float)):
        return float(f"{float(v):.10g}")
    if isinstance(v, (np.integer, int)):
        return int(v)
    return v


def write_outputs(out_dir, stem, fmt, columns, rows, summary, meta):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preamble = [f"{k}={v}" for k, v in meta.items()]
    if fmt == "delimited":
        table_path = out_dir / f"{stem}.csv"
        table_path.write_text(format_table(columns, rows, preamble), encoding="utf-8")
    elif fmt == "structured":
        table_path = out_dir / f"{stem}.yaml"
        records = [{c: _clean(v) for c, v in zip(columns, row)} for row in rows]
        table_path.write_text(yaml.safe_dump({"meta": meta, "rows": records}, sort_keys=False),
                              encoding="utf-8")
    else:
        raise ConfigError(f"output.format: unknown format {fmt!r}")
    doc = dict(meta, versions=_versions(), table=table_path.name,
               results={k: _clean(v) for k, v in summary.items()})
    summary_path = out_dir / f"{stem}.summary.yaml"
    summary_path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return table_path, summary_path


def _output_spec(data, scenario_path, default_suffix=""):
    out = data.get("output") or {}
    if not isinstance(out, dict):
        raise ConfigError("output: expected a mapping")
    for key in out:
        if key not in ("file", "format"):
            raise ConfigError(f"output.{key}: unknown key")
    name = out.get("file") or (Path(scenario_path).stem + default_suffix)
    return Path(name).stem, out.get("format", "delimited")


def _resolve_seed(data, cli_seed):
    seed = cli_seed if cli_seed is not None else data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: expected a non-negative integer")
    return seed


def execute(kind, raw_params, seed_seq):
    params = parse_parameters(kind, raw_params)
    rng = np.random.default_rng(seed_seq)
    return HANDLERS[kind](params, rng)


def run_scenario(path, seed=None, out_dir="results"):
    data, text = load_scenario(path)
    seed = _resolve_seed(data, seed)
    kind = data["kind"]
    stem, fmt = _output_spec(data, path)
    try:
        cols, rows, summary, msg = execute(kind, data.get("parameters"), np.random.SeedSequence(seed))
    except ConfigError:
        raise
    except RydionError as exc:
        exc.args = (f"scenario {Path(path).name} ({kind}): {exc}",) + exc.args[1:]
        raise
    meta = {"kind": kind, "seed": seed, "input_sha256": input_hash(text, seed)}
    table, summ = write_outputs(out_dir, stem, fmt, cols, rows, summary, meta)
    return msg, table, summ, summary


# -- sweeps ----------------------------------------------------------------

def _sweep_point(args):
    kind, raw, key, value, seed_seq = args
    params = dict(raw or {})
    params[key] = value
    try:
        _, _, summary, _ = execute(kind, params, seed_seq)
        return summary, ""
    except RydionError as exc:
        return {}, f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")


def _parse_grid(values, dim, path):
    if values is None:
        return [], []
    if not isinstance(values, list):
        raise ConfigError(f"{path}: expected a list of values")
    si = [_convert(v, dim, f"{path}[{i}]") for i, v in enumerate(values)]
    for i, v in enumerate(si):
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"{path}[{i}]: grid values must be finite")
    return values, si


def run_sweep(path, seed=None, out_dir="results", parameter=None, values=None, jobs=1):
    data, text = load_scenario(path)
    seed = _resolve_seed(data, seed)
    kind = data["kind"]
    sweep = dict(data.get("sweep") or {})
    for key in sweep:
        if key not in ("parameter", "values", "fit"):
            raise ConfigError(f"sweep.{key}: unknown key")
    if parameter is not None:
        sweep["parameter"] = parameter
    if values is not None:
        sweep["values"] = values
    if "parameter" not in sweep:
        raise ConfigError("sweep.parameter: required")
    param = sweep["parameter"]
    key = param.split(".", 1)[1] if param.startswith("parameters.") else param
    schema = SCHEMAS[kind]
    if key not in schema:
        raise ConfigError(f"sweep.parameter: {param!r} does not name a parameter of kind {kind!r}")
    dim = schema[key][0]
    raw_values, si_values = _parse_grid(sweep.get("values"), dim, "sweep.values")
    children = np.random.SeedSequence(seed).spawn(len(raw_values))
    tasks = [(kind, data.get("parameters"), key, v, c) for v, c in zip(raw_values, children)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    scalar_keys = sorted({k for s, _ in results for k in s})
    unit = _unit_token(dim)
    cols = ["index[1]", f"{key}[{unit}]"] + scalar_keys + ["error[text]"]
    rows = []
    for i, ((summary, err), v) in enumerate(zip(results, si_values)):
        rows.append([i, _report_value(v, dim)] + [summary.get(k, float("nan")) for k in scalar_keys] + [err or "-"])
    stem, fmt = _output_spec(data, path, "_sweep")
    meta = {"kind": kind, "seed": seed, "sweep": key,
            "input_sha256": input_hash(text, seed, f"{key}={raw_values}")}
    sweep_summary = {"points[1]": len(rows), "failed_points[1]": sum(1 for _, e in results if e)}
    fit = sweep.get("fit")
    if fit is not None:
        sweep_summary.update(_sweep_fit(fit, si_values, results, dim))
    table, summ = write_outputs(out_dir, stem, fmt, cols, rows, sweep_summary, meta)
    return f"{len(rows)} points, {sweep_summary['failed_points[1]']} failed", table, summ, sweep_summary


def _unit_token(dim):
    return {"angular_frequency": "MHz", "frequency": "MHz", "time": "us", "length": "um", "field": "V/m",
            "polarizability": "C2m2/J", "dipole": "Cm", "angle": "rad"}.get(dim, "1")


def _report_value(v, dim):
    if v is None:
        return float("nan")
    if dim in ("angular_frequency",):
        return _mhz(v)
    if dim == "frequency":
        return v / 1e6
    if dim == "time":
        return v * 1e6
    if dim == "length":
        return v * 1e6
    if isinstance(v, (list, str)):
        return str(v).replace(",", ";")
    return v


def _sweep_fit(fit, xs, results, dim):
    if not isinstance(fit, dict) or fit.get("model") != "exponential" or "column" not in fit:
        raise ConfigError("sweep.fit: expected {model: exponential, column: <summary key>}")
    col = fit["column"]
    pts = [(x, s[col]) for x, (s, e) in zip(xs, results) if not e and col in s]
    if len(pts) < 3:
        raise ConfigError(f"sweep.fit: need three successful points with column {col!r}")
    x, y = np.array(pts, float).T
    tau, sigma, amp = dyn.fit_exponential_decay(x, y)
    scale, unit = (1e6, "us") if dim == "time" else (1.0, "1")
    return {f"decay_constant[{unit}]": tau * scale, f"decay_constant_sigma[{unit}]": sigma * scale,
            "decay_amplitude[1]": amp}


# -- fit command -----------------------------------------------------------

FIT_SCHEMAS = {
    "series": {"species": ("str", "Sr88"), "parameterization": ("str", "mu1")},
    "line": {"omega_rf": ("angular_frequency", REQUIRED), "natural_width": ("angular_frequency", REQUIRED),
             "e_res": ("field", None), "alpha_guess": ("polarizability", None),
             "omega0": ("angular_frequency", None)},
}


def _parse_sets(pairs, kind):
    raw = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        k, v = item.split("=", 1)
        raw[k.strip()] = yaml.safe_load(v)
    schema = FIT_SCHEMAS[kind]
    out = {}
    for k in raw:
        if k not in schema:
            raise ConfigError(f"--set {k}: unknown key for fit {kind!r}")
    for k, (dim, default) in schema.items():
        if k in raw:
            out[k] = _convert(raw[k], dim, f"--set {k}")
        elif default is REQUIRED:
            raise ConfigError(f"--set {k}: required for fit {kind!r}")
        else:
            out[k] = default
    return out


def run_fit(kind, data_file, sets=None, seed=None, out_dir="results"):
    if kind not in FIT_SCHEMAS:
        raise ConfigError(f"fit kind {kind!r} unknown (choose from {', '.join(FIT_SCHEMAS)})")
    p = _parse_sets(sets, kind)
    try:
        text = Path(data_file).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFileMissing(f"data file {data_file} not found") from None
    seed = 0 if seed is None else seed
    if kind == "series":
        model = ryd.load_model(p["species"], parameterization=p["parameterization"])
        lines = ryd.read_line_list(data_file)
        fit = ryd.fit_rydberg_series(lines, model, model, p["parameterization"])
        cols, rows, summary = _series_summary(fit, lines)
        msg = f"ionization limit {fit.ionization_limit:.10e} J ± {fit.ionization_limit_sigma:.2e}"
    else:
        x, y, s = _read_spectrum(data_file)
        init = None
        if p["e_res"] is not None:
            if p["alpha_guess"] is None:
                raise ConfigError("--set alpha_guess: required together with e_res")
            init = {"stark": p["alpha_guess"]}
        fit = spectra.fit_line(x, y, s, p["omega_rf"], p["natural_width"], p["e_res"], initial=init,
                            omega0=p["omega0"])
        est, unc = fit["estimates"], fit["sigma"]
        model_y = est["amplitude"] * spectra.line_profile(fit["model"], x - fit["model"].omega0)
        cols = ["detuning[MHz]", "signal[1]", "model[1]"]
        rows = np.column_stack([_mhz(x), y, model_y])
        summary = {"centre[MHz]": _mhz(est["centre"]), "beta_mm[1]": est["beta_mm"],
                   "reduced_chi2[1]": fit["reduced_chi2"]}
        if "alpha" in est:
            summary["alpha[MHz/(V/cm)^2]"] = est["alpha"] / POLARIZABILITY_MHZ_VCM2
            summary["alpha_sigma[MHz/(V/cm)^2]"] = unc["alpha"] / POLARIZABILITY_MHZ_VCM2
        else:
            summary["beta_alpha[1]"] = est["beta_alpha"]
        msg = f"reduced chi2 {fit['reduced_chi2']:.3f}"
    meta = {"kind": f"fit_{kind}", "seed": seed, "input_sha256": input_hash(text, seed, str(sorted(p.items())))}
    table, summ = write_outputs(out_dir, Path(data_file).stem + "_fit", "delimited", cols, rows, summary, meta)
    return msg, table, summ, summary


# -- entry point -----------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="rydion", description="Trapped Rydberg ion scenarios")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="results")
    s = sub.add_parser("sweep", help="sweep one scenario parameter")
    s.add_argument("scenario")
    s.add_argument("--param", help="parameter path, e.g. parameters.wait")
    s.add_argument("--values", help="comma separated grid, e.g. '0 us,1 us'")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="results")
    f = sub.add_parser("fit", help="fit measured data")
    f.add_argument("kind", choices=sorted(FIT_SCHEMAS))
    f.add_argument("data_file")
    f.add_argument("--set", action="append", dest="sets", metavar="KEY=VALUE")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="results")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            msg, table, summ, _ = run_scenario(args.scenario, args.seed, args.out)
        elif args.command == "sweep":
            values = None
            if args.values is not None:
                values = [yaml.safe_load(v) for v in args.values.split(",") if v.strip()]
            msg, table, summ, _ = run_sweep(args.scenario, args.seed, args.out, args.param, values, args.jobs)
        else:
            msg, table, summ, _ = run_fit(args.kind, args.data_file, args.sets, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataFileMissing as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return exc.exit_code
    except RydionError as exc:
        label = "invalid input" if exc.exit_code == 2 else "numerical failure"
        print(f"{label}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(msg)
    print(f"table: {table}")
    print(f"summary: {summ}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
