"""Experiment drivers behind the command line.

Each driver takes a resolved config dict and an output directory, writes its
artifacts there and returns ``(derived, checks, warnings)``: derived
constants for the manifest, tolerance checks as dicts, and warning strings.
"""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .integrate import IntegratorConfig, energy_drift, integrate, write_trajectory_csv
from .melnikov import (
    MelnikovConfig,
    MelnikovIntegrand,
    action_change_measured,
    aligned_grid,
    find_zeros,
    melnikov_I,
    melnikov_I_grid,
    melnikov_P,
    melnikov_P_grid,
    micro_diffusion_demo,
    splitting_measured,
)
from .model import get_model
from .noise import (
    admissible_mask,
    build_kernel,
    calibrate_envelope,
    ergodic_average,
    holder_constant,
    sample_path,
    sample_path_on,
    sublinearity_envelope,
    write_path_csv,
)
from .seeds import child_seed
from .spectral import (
    SpectralConfig,
    monte_carlo_crossings,
    rice_expected_level_crossings,
    smp_smi_check,
    spectral_moments,
    write_rho_csv,
)


def check(name, value, threshold, op):
    ops = {"<=": value <= threshold, ">=": value >= threshold, "<": value < threshold}
    return {"name": name, "value": float(value), "threshold": float(threshold), "op": op, "passed": bool(ops[op])}


def resolve_model(cfg):
    return get_model(cfg.get("model", "default"), **cfg.get("model_params", {}))


def resolve_kernel(cfg):
    return build_kernel(cfg.get("kernel", "pexp"), cfg.get("a", 2.0))


def fit_slope(x, y):
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def run_sample_noise(cfg, out):
    kernel = resolve_kernel(cfg)
    seed = int(cfg.get("seed", 0))
    path = sample_path(kernel, cfg.get("t_start", 0.0), cfg.get("dt", 0.01), int(cfg.get("n", 65536)), seed)
    write_path_csv(path, os.path.join(out, "path.csv"))
    B = cfg.get("B", 0.1)
    derived = {
        "kernel_id": kernel.id,
        "n": path.n,
        "t_end": path.t_end,
        "eigen_clipped": path.clipped,
        "B": B,
        "A_envelope": sublinearity_envelope(path, B),
        "holder_0.49": holder_constant(path, 0.49),
    }
    T = path.t_end
    if path.t_start <= 0.0 < T:
        derived["time_average"], derived["square_average"] = ergodic_average(path, T)
    return derived, [], []


def run_simulate(cfg, out):
    model = resolve_model(cfg)
    kernel = resolve_kernel(cfg)
    eps = float(cfg.get("eps", [0.0])[0])
    t0, t1 = float(cfg.get("t0", 0.0)), float(cfg.get("t1", 10.0))
    dt = cfg.get("dt", 0.01)
    z0 = [cfg.get("I", 1.0), cfg.get("phi", 0.0), cfg.get("p", 0.05), cfg.get("q", 0.02)]
    path = sample_path_on(kernel, min(t0, t1) - 1.0, max(t0, t1) + 1.0, dt, int(cfg.get("seed", 0)))
    icfg = IntegratorConfig(h=cfg.get("h", 1e-3))
    traj = integrate(model, path, eps, z0, t0, t1, icfg)
    write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"), stride=int(cfg.get("stride", 10)))
    write_path_csv(path, os.path.join(out, "path.csv"))
    drift = energy_drift(model, traj)
    derived = {"eps": eps, "steps": len(traj) - 1, "final_state": traj.final.tolist(), "H0_drift": drift,
               "beta": model.beta}
    checks = [check("H0 drift (eps=0)", drift, 1e-9, "<")] if eps == 0.0 else []
    return derived, checks, []


def _scan_path(kernel, cfg, T, S, seed):
    dt = cfg.get("dt", 0.01)
    margin = S + 2 * dt
    return sample_path_on(kernel, -dt * math.ceil(margin / dt), T + margin, dt, seed)


def run_melnikov_scan(cfg, out):
    model = resolve_model(cfg)
    kernel = resolve_kernel(cfg)
    S = cfg.get("S", 40.0)
    T = cfg.get("T", 50.0)
    kind = cfg.get("kind", "P")
    I, phi, tau = cfg.get("I", 1.0), cfg.get("phi", 0.0), cfg.get("tau", 0.0)
    mcfg = MelnikovConfig(S=S)
    path = _scan_path(kernel, cfg, T, S, int(cfg.get("seed", 0)))
    grid = aligned_grid(path, 0.0, T)
    fn = melnikov_P_grid if kind == "P" else melnikov_I_grid
    direct = melnikov_P if kind == "P" else melnikov_I
    series = fn(model, path, I, phi, tau, grid, mcfg)

    def ev(t):
        return direct(model, path, I, phi, tau, t, mcfg).value

    zeros, flagged = find_zeros(series, evaluator=ev, return_flagged=True)
    vmax = float(np.max(np.abs(series.values)))
    recheck = max((abs(ev(t)) for t in zeros[:, 0]), default=0.0)
    zero_after = np.zeros(series.t.size, dtype=int)
    for tz in zeros[:, 0]:
        zero_after[np.searchsorted(series.t, tz) - 1] = 1
    _write_rows(os.path.join(out, "series.csv"), ["t", "value", "zero_in_next_interval"],
                zip(series.t, series.values, zero_after))
    _write_rows(os.path.join(out, "zeros.csv"), ["t_zero", "slope"], zeros)
    derived = {"kind": kind, "n_points": len(series), "n_zeros": int(zeros.shape[0]),
               "n_flagged_degenerate": int(flagged.shape[0]), "max_abs_value": vmax,
               "max_truncation_bound": float(series.truncation_bound.max())}
    warns = [f"degenerate zero flagged at t={t:.6f} (slope {s:.3e})" for t, s in flagged]
    checks = [check("zero re-evaluation |M(t*)|/max", recheck / vmax if vmax else 0.0, 1e-6, "<")]
    return derived, checks, warns


def run_rice(cfg, out):
    model = resolve_model(cfg)
    kernel = resolve_kernel(cfg)
    point = (cfg.get("I", 1.0), cfg.get("phi", 0.0), cfg.get("tau", 0.0))
    kind = cfg.get("kind", "P")
    T = cfg.get("T", 50.0)
    n_paths = int(cfg.get("n_paths", 400))
    mcfg = MelnikovConfig(S=cfg.get("S", 40.0))
    mom = spectral_moments(MelnikovIntegrand(model, *point, kind=kind), kernel, SpectralConfig())
    other = spectral_moments(MelnikovIntegrand(model, *point, kind="I" if kind == "P" else "P"), kernel)
    mP, mI = (mom, other) if kind == "P" else (other, mom)
    v = cfg.get("v", 0.0)
    if v == "sqrt_chi0":
        v = math.sqrt(mom.chi0)
    v = float(v)
    stats = monte_carlo_crossings(model, kernel, point, T, v, n_paths, int(cfg.get("master_seed", 0)), mcfg,
                                  kind=kind, dt=cfg.get("dt", 0.01), refine=int(cfg.get("refine", 1)),
                                  moments=mom, workers=int(cfg.get("workers", 1)))
    write_rho_csv(mom, os.path.join(out, "rho.csv"))
    seeds = [child_seed(int(cfg.get("master_seed", 0)), i) for i in range(n_paths)]
    _write_rows(os.path.join(out, "crossings.csv"), ["index", "seed", "count"],
                zip(range(n_paths), seeds, stats.counts.astype(int)))
    smp = smp_smi_check(mP, mI)
    summary = {"kind": kind, "v": v, "T": T, "n_paths": n_paths, "empirical_mean": stats.empirical_mean,
               "empirical_se": stats.empirical_se, "predicted": stats.predicted,
               "chi0": mom.chi0, "chi2": mom.chi2, "chi2_fd": mom.chi2_fd, "fd_rel_error": mom.fd_rel_error,
               "smp_smi": smp.ok, "moments_all": smp.values}
    _write_json(os.path.join(out, "moments.json"), summary)
    diff = abs(stats.empirical_mean - stats.predicted)
    checks = [check("|empirical - predicted| / SE", diff / stats.empirical_se if stats.empirical_se else 0.0, 3.0, "<=")]
    if v == 0.0:
        checks.append(check("|empirical - predicted| / predicted", diff / stats.predicted, 0.05, "<="))
    checks.append(check("chi2 finite-difference relative error", mom.fd_rel_error, 1e-4, "<"))
    return summary, checks, []


def _choose_t0(model, path, cfg, I, phi, mcfg, T, kind="P"):
    """Admissible node in [0, T] maximizing |M|, with the calibrated envelope."""
    B = cfg.get("B", 0.1)
    A = calibrate_envelope(build_kernel(cfg.get("kernel", "pexp"), cfg.get("a", 2.0)), path.dt, B,
                           half_width=0.5 * (path.t_end - path.t_start), master_seed=int(cfg.get("calibration_seed", 0)))
    grid = aligned_grid(path, 0.0, T)
    fn = melnikov_P_grid if kind == "P" else melnikov_I_grid
    s = fn(model, path, I, phi, 0.0, grid, mcfg)
    mask = admissible_mask(path, A, B)
    idx = np.rint((grid - path.t_start) / path.dt).astype(int)
    score = np.where(mask[idx], np.abs(s.values), -1.0)
    j = int(np.argmax(score))
    if score[j] < 0:
        raise ValueError("no admissible t0 in the scan window")
    return float(grid[j]), A


def run_splitting(cfg, out):
    model = resolve_model(cfg)
    kernel = resolve_kernel(cfg)
    eps_list = [float(e) for e in cfg.get("eps", [1e-2, 3e-3, 1e-3, 3e-4])]
    seed = int(cfg.get("seed", 42))
    I, phi = cfg.get("I", 1.0), cfg.get("phi", 0.13)
    S = cfg.get("S", 40.0)
    T = cfg.get("T", 20.0)
    mcfg = MelnikovConfig(S=S)
    T_asym = cfg.get("T_asym", 20.0)
    delta = cfg.get("seed_offset", 1e-5)
    icfg = IntegratorConfig(h=cfg.get("h", 1e-3))
    dt = cfg.get("dt", 0.01)
    path = sample_path_on(kernel, -S - 10.0, T + S + 10.0, dt, seed)
    t0 = cfg.get("t0", "auto")
    A = None
    if t0 == "auto":
        t0, A = _choose_t0(model, path, cfg, I, phi, mcfg, T)
    t0 = float(t0)
    mP = melnikov_P(model, path, I, phi, 0.0, t0, mcfg).value
    mI = melnikov_I(model, path, I, phi, 0.0, t0, mcfg).value
    srows, arows = [], []
    for eps in eps_list:
        D = splitting_measured(model, path, eps, I, phi, t0, T_asym, delta, icfg)
        srows.append((eps, seed, D, -eps * mP, abs(D + eps * mP)))
        ac = action_change_measured(model, path, eps, I, phi, t0, T_asym, delta, icfg)
        arows.append((eps, seed, ac.deltaI, eps * mI, abs(ac.deltaI - eps * mI)))
    hdr = ["eps", "seed", "measured", "predicted", "residual"]
    _write_rows(os.path.join(out, "splitting.csv"), hdr, srows)
    _write_rows(os.path.join(out, "action.csv"), hdr, arows)
    eps_arr = np.array(eps_list)
    checks = []
    summary = {"t0": t0, "I": I, "phi": phi, "M_P": mP, "M_I": mI, "A": A, "B": cfg.get("B", 0.1)}
    for name, rows, M in (("splitting", srows, mP), ("action", arows, mI)):
        res = np.array([r[4] for r in rows])
        if len(rows) >= 2 and np.all(res > 0):
            slope = fit_slope(eps_arr, res)
            summary[f"{name}_slope"] = slope
            checks.append(check(f"{name} residual log-log slope", slope, 1.2, ">="))
        k = int(np.argmin(np.abs(np.log(eps_arr / 1e-3))))
        rel = abs(rows[k][2] - rows[k][3]) / abs(rows[k][3])
        summary[f"{name}_rel_error_at_{eps_arr[k]:g}"] = rel
        checks.append(check(f"{name} first-order relative error at eps={eps_arr[k]:g}", rel, 0.1, "<="))
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary, checks, []


def run_diffusion(cfg, out):
    model = resolve_model(cfg)
    kernel = resolve_kernel(cfg)
    eps = float(cfg.get("eps", [1e-3])[0])
    seed = int(cfg.get("seed", 42))
    I, phi = cfg.get("I", 1.0), cfg.get("phi", 0.25)
    S = cfg.get("S", 40.0)
    T = cfg.get("T", 50.0)
    mcfg = MelnikovConfig(S=S)
    dt = cfg.get("dt", 0.01)
    path = sample_path_on(kernel, -S - 10.0, T + S + 10.0, dt, seed)
    v = cfg.get("v", "auto")
    grid = aligned_grid(path, 0.0, T)
    series = melnikov_I_grid(model, path, I, phi, 0.0, grid, mcfg)
    smax = float(series.values.max())
    if v == "auto":
        v = 0.5 * smax
    v = float(v)
    rep = micro_diffusion_demo(model, path, eps, I, phi, v, IntegratorConfig(h=cfg.get("h", 1e-3)), mcfg,
                               window=(0.0, T), B=cfg.get("B", 0.1), T_asym=cfg.get("T_asym", 20.0),
                               seed_offset=cfg.get("seed_offset", 1e-5),
                               calibration_seed=int(cfg.get("calibration_seed", 0)))
    report = dict(rep._asdict())
    report.update({"eps": eps, "seed": seed, "I": I, "phi": phi})
    _write_json(os.path.join(out, "report.json"), report)
    _write_rows(os.path.join(out, "scan.csv"), ["t", "M_I"], zip(series.t, series.values))
    checks = [check("|deltaI - eps v| / (eps v)", rep.rel_error, 0.2, "<=")]
    return report, checks, []


DRIVERS = {
    "sample-noise": run_sample_noise,
    "simulate": run_simulate,
    "melnikov-scan": run_melnikov_scan,
    "rice": run_rice,
    "splitting": run_splitting,
    "diffusion": run_diffusion,
}
