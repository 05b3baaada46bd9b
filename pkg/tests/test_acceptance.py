"""Acceptance criteria A1-A14, each checked at its stated tolerance.

Every test records one PASS/FAIL line (collected in the terminal summary)
before asserting, so a failing criterion still reports its measured values.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp

from statfem.assimilation import (ObservationModel, Observations, build_observation, rmse,
                                  run_filter, update)
from statfem.calibration import (CalibrationProblem, UniformPrior, map_search, sigma_f_grid,
                                 system_maker)
from statfem.config import load_config
from statfem.dynamics import build_transition, step
from statfem.forward import AugmentedGaussian, StochasticSystem, forward_run
from statfem.mesh import build_interval_mesh, locate_point
from statfem.oracle import batch_linear_kalman, dense_condition, matern32, mc_forward
from statfem.scenarios import Scenario, make_truth
from statfem.spde import MaterialLaw, MaternParams, build_force_covariance, build_material_covariance
from statfem.assembly import assemble_mass, assemble_stiffness

from conftest import config_path

MC_SAMPLES = 20_000
SIGMA_K_LEVELS = (0.01, 0.05, 0.1, 0.2)
OBS_FACTORS = (270, 90, 30)


def _sdof(**material) -> Scenario:
    cfg = load_config(config_path("sdof.cfg"))
    if material:
        cfg = cfg.replace("material", **material)
    return Scenario(cfg)


def _probe(sc):
    return np.hstack([sc.probe_rows, np.zeros_like(sc.probe_rows)])


# ---------------------------------------------------------------- A1, A2

@pytest.fixture(scope="module")
def sdof_sigma_runs():
    """Perturbation and Monte Carlo tip std for each sigma_k / k0 level."""
    out = {}
    for level in SIGMA_K_LEVELS:
        sc = _sdof(sigma=level * 100.0)
        P = _probe(sc)
        t0 = time.perf_counter()
        fr = forward_run(sc.system(), sc.n_steps, probes=P)
        mc = mc_forward(sc.system(), sc.n_steps, MC_SAMPLES, sc.config.seeds.mc, probes=P)
        out[level] = (np.sqrt(fr.probe_variances[:, 0]), mc, time.perf_counter() - t0)
    return out


def test_a1_perturbation_vs_monte_carlo(sdof_sigma_runs, record_acceptance):
    su, mc, runtime = sdof_sigma_runs[0.05]
    rel = abs(su[-1] - mc.std[-1, 0]) / mc.std[-1, 0]
    se = mc.relative_std_error_of_std
    ok = rel <= 0.05 and se < 0.01 and runtime < 60.0
    record_acceptance("A1", ok, f"sigma_u(10T) perturbation {su[-1]:.5g} vs MC {mc.std[-1, 0]:.5g}, "
                      f"rel err {rel:.3%} (tol 5%), MC rel SE {se:.2%} (<1%), runtime {runtime:.1f}s (<60s)")
    assert ok


def test_a2_error_grows_with_material_uncertainty(sdof_sigma_runs, record_acceptance):
    errs = []
    for level in SIGMA_K_LEVELS:
        su, mc, _ = sdof_sigma_runs[level]
        errs.append(np.linalg.norm(su - mc.std[:, 0]) / np.linalg.norm(mc.std[:, 0]))
    ok = all(b >= a for a, b in zip(errs, errs[1:]))
    record_acceptance("A2", ok, "relative L2 sigma_u error over time for sigma_k/k0 "
                      f"{SIGMA_K_LEVELS}: {', '.join(f'{e:.4f}' for e in errs)} (non-decreasing)")
    assert ok


# ---------------------------------------------------------------- A3, A4

def test_a3_time_step_convergence(record_acceptance):
    base = load_config(config_path("sdof.cfg"))
    dt0 = base.time.dt
    levels = [dt0 / 2 ** i for i in range(4)]
    ref_dt = levels[-1] / 4

    def sigma_u(dt):
        sc = Scenario(base.replace("time", dt=dt))
        fr = forward_run(sc.system(), sc.n_steps, probes=_probe(sc))
        stride = int(round(dt0 / dt))
        return np.sqrt(fr.probe_variances[::stride, 0])

    ref = sigma_u(ref_dt)
    errs = [np.max(np.abs(sigma_u(dt) - ref)) for dt in levels]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(r >= 1.5 for r in ratios)
    record_acceptance("A3", ok, f"sup-norm sigma_u errors {', '.join(f'{e:.3e}' for e in errs)}; "
                      f"halving ratios {', '.join(f'{r:.2f}' for r in ratios)} (>= 1.5)")
    assert ok


def test_a4_integrator_order(record_acceptance):
    w, m = 10.0, 1.0
    dt_max = 2.0 / w
    dts = [dt_max / 10 / 2 ** i for i in range(1, 5)]
    errs = []
    for dt in dts:
        ops = build_transition(np.array([m]), None, sp.csr_matrix([[w * w * m]]), dt)
        n = int(round(2.0 / dt))
        v = np.array([1.0, 0.0])
        err = 0.0
        for k in range(1, n + 1):
            v = step(ops, v, np.zeros(1))
            err = max(err, abs(v[0] - np.cos(w * k * dt)))
        errs.append(err)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    ok = slope >= 1.9
    record_acceptance("A4", ok, f"log-log slope {slope:.3f} over dt {', '.join(f'{d:.4g}' for d in dts)} (>= 1.9)")
    assert ok


# ---------------------------------------------------------------- A5, A6

@pytest.fixture(scope="module")
def sdof_calibration():
    """MAP sigma_f and the filter at the MAP for each observation factor."""
    out = {}
    base = load_config(config_path("sdof.cfg"))
    c = base.calibration
    for n_o in OBS_FACTORS:
        sc = Scenario(base.replace("time", observation_every=n_o))
        truth = make_truth(sc)
        obs = sc.observation_model(truth.sigma_e)
        grid = sigma_f_grid(c.grid_min, c.grid_max, c.grid_points, c.spacing,
                            {"sigma_f": UniformPrior(c.prior_lower, c.prior_upper)})
        problem = CalibrationProblem(system_maker(sc.system, obs), truth.observations, sc.n_steps)
        star, _ = map_search(grid, problem)
        res = run_filter(sc.system(sigma_f=star.sigma_f), obs, truth.observations, sc.n_steps)
        out[n_o] = (len(truth.noisy), star.sigma_f, res)
    return out


def test_a5_stiffness_recovery(sdof_calibration, record_acceptance):
    _, sigma_f, res = sdof_calibration[90]
    k = 100.0 + res.final.kappa_mean[0]
    sd = float(np.sqrt(res.final.C_kk[0, 0]))
    rel = abs(k - 94.48) / 94.48
    ok = rel <= 0.01 and sd < 0.2 * 5.0
    record_acceptance("A5", ok, f"posterior k {k:.3f} (rel err {rel:.2%}, tol 1%), std {sd:.3f} "
                      f"= {sd / 5.0:.0%} of prior (< 20%), at MAP sigma_f {sigma_f:.4g}")
    assert ok


def test_a6_sigma_f_map(sdof_calibration, record_acceptance):
    rows = sorted((count, s) for count, s, _ in sdof_calibration.values())
    gaps = [abs(np.log(s / 0.05)) for _, s in rows]
    shrinking = all(b <= a for a, b in zip(gaps, gaps[1:]))
    best = rows[-1][1]
    ok = shrinking and 0.025 <= best <= 0.1
    desc = ", ".join(f"{c} obs -> {s:.4g}" for c, s in rows)
    record_acceptance("A6", ok, f"MAP sigma_f: {desc}; largest count within factor 2 of 0.05: "
                      f"{0.025 <= best <= 0.1}; gap non-increasing: {shrinking}")
    assert ok


# ---------------------------------------------------------------- A7, A8, A9

def test_a7_update_equals_dense_conditioning(record_acceptance):
    rng = np.random.default_rng(20240701)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        n_k = int(rng.integers(1, 8 - 2 * n + 1))
        d = 2 * n + n_k
        X = rng.standard_normal((d, d + int(rng.integers(-2, 3))))
        P = X @ X.T / d
        mean = rng.standard_normal(d)
        g = AugmentedGaussian(mean[:2 * n], mean[2 * n:], P[:2 * n, :2 * n], P[:2 * n, 2 * n:],
                              P[2 * n:, 2 * n:], 1)
        n_y = int(rng.integers(1, 2 * n + 1))
        H = rng.standard_normal((n_y, 2 * n))
        E = rng.standard_normal((n_y, n_y))
        C_e = E @ E.T / n_y + 0.1 * np.eye(n_y)
        y = rng.standard_normal(n_y)
        post, _ = update(g, ObservationModel(H, C_e, None), y)
        m, c = dense_condition(mean, P, np.hstack([H, np.zeros((n_y, n_k))]), C_e, y)
        blocks = [post.v_mean - m[:2 * n], post.kappa_mean - m[2 * n:],
                  post.C_vv - c[:2 * n, :2 * n], post.C_vk - c[:2 * n, 2 * n:],
                  post.C_kk - c[2 * n:, 2 * n:]]
        worst = max(worst, max(np.max(np.abs(b)) for b in blocks))
    ok = worst <= 1e-8
    record_acceptance("A7", ok, f"max-abs difference over 200 instances, five blocks: {worst:.2e} (<= 1e-8)")
    assert ok


def test_a8_filter_equals_batch_conditioning(record_acceptance):
    mesh = build_interval_mesh(1.0, 5)
    _, bank = assemble_stiffness(mesh, np.full(5, 4.0))
    M = assemble_mass(mesh, 1.0)
    C_f = build_force_covariance(mesh, MaternParams(1.5, 0.4, 1.0, 1))
    tip = np.eye(5)[-1]
    s = StochasticSystem(M.diagonal(), (0.1 * M).tocsr(), bank, MaterialLaw("additive", 4.0),
                         lambda t: np.sin(2.0 * t) * tip, C_f, 0.5, 0.02, np.zeros(5),
                         np.zeros((5, 5)))
    obs = build_observation(mesh, [0.5, 1.0], 0.02)
    steps = [40, 90, 150]
    values = np.random.default_rng(8).normal(0.0, 0.05, (3, 2))
    res = run_filter(s, obs, Observations(np.array(steps) * s.dt, values), 150)
    bm, bc = batch_linear_kalman(s, obs.H, obs.C_e, steps, values)
    err = max(np.max(np.abs(res.final.v_mean - bm)), np.max(np.abs(res.final.C_vv - bc)))
    ok = err <= 1e-6
    record_acceptance("A8", ok, f"5-DOF, 3 observation steps: max-abs difference {err:.2e} (<= 1e-6)")
    assert ok


def test_a9_deterministic_degeneration(record_acceptance):
    cfg = load_config(config_path("bar1d.cfg")).replace("material", sigma=0.0)
    cfg = cfg.replace("forcing", sigma_f=0.0)
    sc = Scenario(cfg)
    truth = make_truth(sc)
    n_steps = 1000
    res = run_filter(sc.system(), sc.observation_model(truth.sigma_e), truth.observations, n_steps)
    # half-step central difference written directly from the equations of motion
    n = sc.mesh.n_free
    K = sc.bank.assemble(sc.law.coefficients(np.zeros(sc.mesh.n_elements)))
    D, minv, dt = sc.damping, 1.0 / sc.mass, sc.dt
    u, v = np.zeros(n), np.zeros(n)
    traj = [np.zeros(2 * n)]
    for k in range(n_steps):
        uh = u + 0.5 * dt * v
        v = v + dt * minv * (sc.force_mean(k * dt) - K @ uh - D @ v)
        u = uh + 0.5 * dt * v
        traj.append(np.concatenate([u, v]))
    err = np.max(np.abs(res.means - np.array(traj)))
    zero_var = not np.any(res.variances)
    ok = err <= 1e-12 and zero_var
    record_acceptance("A9", ok, f"1000 steps, {len(res.update_steps)} updates: max-abs mean difference "
                      f"{err:.2e} (<= 1e-12), all variances zero: {zero_var}")
    assert ok


# ---------------------------------------------------------------- A10

def test_a10_matern_kernel(record_acceptance):
    l, sigma = 2.5, 0.1
    mesh = build_interval_mesh(40.0, 400, clamp_left=False)
    C = build_material_covariance(mesh, MaternParams(1.5, l, sigma, 1)).nodal_covariance
    x = mesh.nodes[:, 0]
    interior = np.flatnonzero((x >= 2 * l - 1e-9) & (x <= 40.0 - 2 * l + 1e-9))
    r = np.abs(x[interior, None] - x[None, interior])
    sel = (r >= 0.25 - 1e-9) & (r <= 5.0 + 1e-9)
    ref = matern32(r[sel], l, sigma)
    worst = float(np.max(np.abs(C[np.ix_(interior, interior)][sel] - ref) / ref))
    ok = worst <= 0.05
    record_acceptance("A10", ok, f"max relative kernel error for r in [0.25, 5]: {worst:.2%} (<= 5%)")
    assert ok


# ---------------------------------------------------------------- A11, A12, A14

@pytest.fixture(scope="module")
def bar_runs():
    out = {}
    for name in ("bar1d.cfg", "bar1d_l2.5.cfg"):
        sc = Scenario(load_config(config_path(name)))
        truth = make_truth(sc)
        obs = sc.observation_model(truth.sigma_e)
        P = _probe(sc)
        kw = dict(start_time=sc.burn_in_time, stop_time=sc.stop_time, probes=P)
        aug = run_filter(sc.system(), obs, truth.observations, sc.n_steps, check_contraction=True, **kw)
        noaug = run_filter(sc.system(), obs, truth.observations, sc.n_steps, update_material=False, **kw)
        fwd = forward_run(sc.system(), sc.n_steps, probes=P)
        window = (truth.times >= sc.burn_in_time) & (truth.times <= sc.stop_time)
        tip = truth.trajectory @ P[0]
        err = {k: rmse(r.probe_means[window, 0], tip[window])
               for k, r in (("aug", aug), ("noaug", noaug), ("fwd", fwd))}
        out[name] = (sc, truth, aug, err)
    return out


def test_a11_bar_assimilation(bar_runs, record_acceptance):
    sc, truth, aug, err = bar_runs["bar1d.cfg"]
    ratio = err["aug"] / err["fwd"]
    km, ks = aug.final.kappa_mean, np.sqrt(np.diag(aug.final.C_kk))
    cover = float(np.mean(np.abs(km - truth.kappa) <= 1.959964 * ks))
    ok = ratio <= 0.25 and cover >= 0.85
    record_acceptance("A11", ok, f"seed {sc.config.seeds.truth}: tip RMSE posterior {err['aug']:.4g} / "
                      f"forward {err['fwd']:.4g} = {ratio:.3f} (<= 0.25); E(x) coverage {cover:.0%} (>= 85%)")
    assert ok


def test_a12_material_suppressed_degradation(bar_runs, record_acceptance):
    gaps = {name: v[3]["noaug"] - v[3]["aug"] for name, v in bar_runs.items()}
    e10 = bar_runs["bar1d.cfg"][3]
    strict = e10["noaug"] > e10["aug"]
    larger = gaps["bar1d.cfg"] > gaps["bar1d_l2.5.cfg"]
    ok = strict and larger
    record_acceptance("A12", ok, f"l=10 tip RMSE no-update {e10['noaug']:.4g} vs augmented {e10['aug']:.4g} "
                      f"(strictly larger: {strict}); gap l=10 {gaps['bar1d.cfg']:.3g} vs "
                      f"l=2.5 {gaps['bar1d_l2.5.cfg']:.3g} (larger: {larger})")
    assert ok


# ---------------------------------------------------------------- A13, A14

@pytest.fixture(scope="module")
def plate_run():
    t0 = time.perf_counter()
    sc = Scenario(load_config(config_path("plate2d.cfg")))
    truth = make_truth(sc)
    P = _probe(sc)
    fwd = forward_run(sc.system(), sc.n_steps, probes=P)
    res = run_filter(sc.system(), sc.observation_model(truth.sigma_e), truth.observations,
                     sc.n_steps, start_time=sc.burn_in_time, stop_time=sc.stop_time,
                     check_contraction=True, probes=P)
    return sc, truth, fwd, res, time.perf_counter() - t0


def test_a13_plate(plate_run, record_acceptance):
    sc, truth, fwd, res, runtime = plate_run
    steps = [int(k) for k in truth.observation_steps if k * sc.dt >= sc.burn_in_time]
    narrower = res.probe_variances[steps, -1] < fwd.probe_variances[steps, -1]
    ys = np.linspace(0.02, 1.98, 50)
    elems = [locate_point(sc.mesh, (0.5, y))[0] for y in ys]
    km = res.final.kappa_mean[elems]
    ks = np.sqrt(np.diag(res.final.C_kk))[elems]
    bracket = float(np.mean(np.abs(km - truth.kappa[elems]) <= 1.959964 * ks))
    ok = bool(np.all(narrower)) and bracket >= 0.8 and runtime < 300.0
    record_acceptance("A13", ok, f"{sc.mesh.n_elements} elements: probe CI narrower at "
                      f"{int(narrower.sum())}/{len(steps)} post-burn-in instants; mu(x) bracketed at "
                      f"{bracket:.0%} of 50 points on x=0.5 (>= 80%); runtime {runtime:.0f}s (< 300s)")
    assert ok


def test_a14_variance_contraction(bar_runs, plate_run, record_acceptance):
    excess = [max(c) for c in bar_runs["bar1d.cfg"][2].contraction]
    excess += [max(c) for c in plate_run[3].contraction]
    worst = max(excess)
    ok = worst <= 0.0
    record_acceptance("A14", ok, f"{len(excess)} updates: largest diagonal growth beyond 1e-12 "
                      f"relative slack {worst:.3e} (<= 0)")
    assert ok
