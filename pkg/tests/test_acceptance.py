"""Acceptance criteria at the stated tolerances and runtime limits.

Each test prints one ``PASS``/``FAIL`` line with the measured quantities.
"""
import json
import time

import numpy as np
import pytest

from _oracles import plane_bump, poisson_halfspace, random_probes
from magschrod import cgo as C
from magschrod import cli
from magschrod import dnmap as DN
from magschrod import forward as F
from magschrod import greens as G
from magschrod import recon as R
from magschrod import validate as V
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField, make_potential, smooth_step


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def done(name, ok, limit, **vals):
        dt = time.perf_counter() - t0
        ok = bool(ok) and dt < limit
        detail = " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in vals.items())
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} time={dt:.1f}s (limit {limit:.0f}s)")
        assert ok, f"{name}: {detail} time={dt:.1f}s"

    return done


def zeros(g):
    return VectorField(g, np.zeros((3,) + g.dims)), ScalarField(g, np.zeros(g.dims, complex))


def half_grid(n, hw, n3):
    return Grid3.cube(n, hw, n3=2 * n3 - 1).lower_half()


def test_criterion_01_green_residual(report):
    g = Grid3.cube(96, 1.0)
    dx = g.spacing[0]
    rng = np.random.default_rng(0)
    battery = []
    for _ in range(10):
        c = rng.uniform(-0.3, 0.3, 3)
        s = rng.uniform(4, 6) * dx
        amp = rng.standard_normal() + 1j * rng.standard_normal()
        battery.append(ScalarField(g, amp * np.exp(-g.radius(c) ** 2 / (2 * s * s))))
    worst = 0.0
    for k in (1.0, 2.0, 5.0):
        ker = G.GreenKernel.build(k, g)
        for phi in battery:
            worst = max(worst, G.helmholtz_residual(G.resolvent_apply(ker, phi), phi, k))
    report("1 Green residual", worst <= 1e-4, 120, max_rel_residual=worst)


def test_criterion_02_far_field_order(report):
    radii = np.geomspace(4.0, 32.0, 6)
    slopes = []
    for k in (1.0, 2.0, 5.0):
        for y in ((0.1, -0.2, 0.05), (0.3, 0.0, -0.2)):
            u = lambda p, y=y, k=k: G.green_eval(k, p, y)
            far = G.far_field_extract(u, k, (400.0, 800.0))
            _, s = G.far_field_deviation(u, k, far, radii)
            slopes.append(s)
    ok = all(abs(s + 2) <= 0.2 for s in slopes)
    report("2 far-field order", ok, 60, min_slope=min(slopes), max_slope=max(slopes))


def test_criterion_03_halfspace_trace(report):
    g = half_grid(64, 1.6, 33)
    A, q = zeros(g)
    k = 2.0
    sc = Scenario(k, A, q, ((0, 0, -0.8), 0.5), (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))
    fb = plane_bump((0.1, -0.05), 0.25)
    tr = DN.BoundaryTrace.from_function(g, fb, sc.gamma2_patch)
    u, _ = F.solve_halfspace_dirichlet(sc, tr)
    X = g.mesh()
    idx = random_probes(g, 120, seed=0)
    got = np.array([u.values[i] for i in idx])
    ex = np.array([poisson_halfspace(fb, k, np.array([X[0][i], X[1][i], X[2][i]])) for i in idx])
    err = float(np.linalg.norm(got - ex) / np.linalg.norm(ex))
    report("3 half-space trace", err < 1e-3, 120, rel_err=err)


def test_criterion_04_dn_gauge_invariance(report):
    g = half_grid(64, 1.6, 33)
    A = make_potential("gaussian_bump", g, None, amplitude=(0.8, -0.5, 0.4), sigma=0.12, center=(-0.6, 0.1, -0.6))
    q = make_potential("gaussian_bump", g, None, amplitude=4 - 1j, sigma=0.12, center=(-0.5, 0, -0.55))
    sc = Scenario(2.0, VectorField(g, A.values.real), q, ((-0.6, 0, 0), 0.7),
                  (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))
    tr = DN.BoundaryTrace.from_function(g, plane_bump((0.0, 0.0), 0.25, 0.9, 0.35), sc.gamma2_patch)
    tol = 1e-6
    devs = []
    for amp, rad, sig, c in ((1.0, 0.7, 0.1, (-0.6, 0.0, -0.85)), (-0.7, 0.6, 0.1, (0.4, 0.3, -0.9)),
                             (1.5, 0.65, 0.11, (0.0, -0.5, -0.8))):
        grad, psi = make_potential("gradient_field", g, None, amplitude=amp, radius=rad, sigma=sig, center=c)
        gauge = DN.GaugeFunction(psi, VectorField(g, grad.values.real))
        devs.append(DN.gauge_invariance_check(sc, gauge, tr, tol=tol)["deviation"])
    report("4 DN gauge invariance", max(devs) < 10 * tol, 300, max_deviation=max(devs))


def cone_scenario():
    g = Grid3.cube(72, 2.0)
    f = np.clip(1 - g.radius(), 0, None)
    A = VectorField(g, np.stack([0.4 * f, -0.25 * f, 0.3 * f]))
    sc = Scenario(0.3, A, ScalarField(g, np.zeros(g.dims, complex)), ((0, 0, 0), 1.3), (-1, 1, -1, 1), (-1, 1, -1, 1))
    return g, sc


@pytest.fixture(scope="module")
def cone_ladder():
    g, sc = cone_scenario()
    dom = g.radius() <= 1.3
    xi = [0.3, 0.2, 0.0]
    hs = np.array([0.4, 0.2, 0.1, 0.05, 0.04])
    res, rem = [], []
    t0 = time.perf_counter()
    for h in hs:
        sol = C.make_cgo(sc, C.make_zeta_pair(h, xi, *C.special_gammas(xi)), domain=dom)
        _, nrm, _ = C.solve_remainder(sol, sc, domain=dom)
        res.append(sol.residual_sup)
        rem.append(nrm)
    return hs, np.array(res), np.array(rem), time.perf_counter() - t0


def test_criterion_05a_cgo_residual_scaling(report, cone_ladder):
    hs, res, _, dt = cone_ladder
    s = V.loglog_slope(hs, res)
    report("5a CGO residual scaling", abs(s - 4 / 3) <= 0.2 and dt < 600, 600, slope=s, ladder_time=dt)


def test_criterion_05b_cgo_remainder_scaling(report, cone_ladder):
    # expected to fail: the measured remainder decays faster than h^{1/3} (see README, acceptance)
    hs, _, rem, dt = cone_ladder
    s = V.loglog_slope(hs, rem)
    report("5b CGO remainder scaling", abs(s - 1 / 3) <= 0.2 and dt < 600, 600, slope=s, ladder_time=dt)


def test_criterion_06_dbar_inverse(report):
    n, hw = 512, 3.2
    x = np.linspace(-hw, hw, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    d = x[1] - x[0]
    r = np.hypot(X, Y)
    u = C.cauchy_transform(smooth_step((1 - r) / 0.025), (d, d))
    Z = X + 1j * Y
    disk = 0.0
    for Rr, ex in ((0.5, np.conj), (2.0, lambda z: 1 / z)):
        m = np.abs(r - Rr) < d
        disk = max(disk, float(np.abs(u[m] - ex(Z[m])).max()))
    battery = [np.exp(-(X ** 2 + Y ** 2) / 0.1) * (1 + 1j * X),
               np.exp(-((X - 0.7) ** 2 + (Y + 0.3) ** 2) / 0.05) * np.cos(4 * Y),
               smooth_step((1.2 - r) / 0.6) * (X - 2j * Y ** 2)]
    inv = 0.0
    for f in battery:
        e = C.dbar(C.cauchy_transform(f, (d, d)), (d, d))[2:-2, 2:-2] - f[2:-2, 2:-2]
        inv = max(inv, float(np.linalg.norm(e) / np.linalg.norm(f)))
    report("6 dbar inverse", disk < 2e-2 and inv < 1e-3, 120, disk_max_err=disk, dbar_rel_err=inv)


RBALL = ((0.0, 0.0, 0.0), 1.3)


def recon_scenario(g, A=None, q=None):
    A0, q0 = zeros(g)
    return Scenario(2.0, A0 if A is None else A, q0 if q is None else q, RBALL,
                    (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))


def poly_gauge(g, c=(0.0, 0.0, -0.65), sigma=0.2, reach=0.62):
    x = g.mesh()
    d = [x[j] - c[j] for j in range(3)]
    r2 = sum(e * e for e in d)
    t = np.clip(1 - r2 / reach ** 2, 0, None)
    ga = np.exp(-r2 / (2 * sigma ** 2))
    return VectorField(g, np.stack([ga * (-t ** 8 / sigma ** 2 - 16 * t ** 7 / reach ** 2) * e for e in d]))


def test_criterion_07_curl_reconstruction(report):
    g = half_grid(48, 1.6, 24)
    A = make_potential("gaussian_bump", g, None, amplitude=(0.6, -0.4, 0.3), sigma=0.15,
                       center=(0.1, 0.0, -0.7), cutoff=0.65)
    res = R.reconstruct(R.ScenarioPair(recon_scenario(g), recon_scenario(g, VectorField(g, A.values.real))))
    gauge = R.reconstruct(R.ScenarioPair(recon_scenario(g), recon_scenario(g, poly_gauge(g))))
    null = gauge.metrics["curl_null_ratio"]
    report("7 curl reconstruction", res.rel_err_curl < 0.1 and null < 1e-3, 300,
           rel_err_curl=res.rel_err_curl, gauge_null_ratio=null, dual_dims=g.mirror().dims)


def test_criterion_08_q_reconstruction(report):
    g = half_grid(48, 1.6, 24)
    q = make_potential("gaussian_bump", g, None, amplitude=2 - 1j, sigma=0.15, center=(0.1, -0.1, -0.6), cutoff=0.65)
    pair = R.ScenarioPair(recon_scenario(g), recon_scenario(g, poly_gauge(g), q))
    meas = R.reconstruct(pair, "measurement")
    orc = R.reconstruct(pair, "oracle")
    ok = meas.rel_err_q < 0.1 and orc.rel_err_q < 0.01
    report("8 q reconstruction", ok, 900, measurement=meas.rel_err_q, oracle=orc.rel_err_q,
           flagged=meas.metrics["flagged_fraction"])


def test_criterion_09_carleman(report):
    g = Grid3.cube(64, 1.0)
    al = (0.0, 0.0, 1.0)
    hs = [0.2, 0.14, 0.1, 0.07, 0.05]
    bat = V.carleman_battery(g, al, seed=0)
    A0, q0 = zeros(g)
    cone = np.clip(1 - g.radius() / 0.6, 0, None)
    A = VectorField(g, np.stack([0.8 * cone, -0.5 * cone, 0.3 * cone]))
    q = make_potential("gaussian_bump", g, None, amplitude=3 - 1j, sigma=0.15, cutoff=0.6)
    reps = [V.carleman_probe(A0, q0, al, bat, hs), V.carleman_probe(A, q, al, bat, hs),
            V.carleman_probe(A, q, al, bat, hs, weight="convexified", eps=0.5)]
    ok = all(r.passed and min(r.values) >= r.thresholds["c0"] and r.fitted_slope >= -0.1 for r in reps)
    report("9 Carleman probe", ok, 180, min_ratio=min(min(r.values) for r in reps),
           min_slope=min(r.fitted_slope for r in reps))


def test_criterion_10_determinism(report, tmp_path):
    cfg = {"seed": 5, "scenario": {
        "grid": {"n": 48, "half_width": 1.6, "n3": 47}, "k": 2.0,
        "support_ball": {"center": [0, 0, 0], "radius": 1.5},
        "gamma1_patch": [-1.5, 1.5, -1.5, 1.5], "gamma2_patch": [-1.5, 1.5, -1.5, 1.5],
        "second": {"gauge": {"kind": "gradient_field", "amplitude": 1.0, "radius": 0.65, "sigma": 0.1,
                             "center": [0, 0, -0.75]},
                   "q": [{"kind": "gaussian_bump", "amplitude": {"re": 2.0, "im": -1.0}, "sigma": 0.15,
                          "center": [0.1, -0.1, -0.6], "cutoff": 0.65}]}}}
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        out.mkdir()
        cli.cmd_reconstruct(cfg, out, mode="oracle")
        outs.append((out / "recon_metrics.json").read_bytes())
    json.loads(outs[0])
    report("10 determinism", outs[0] == outs[1], 60, bytes=len(outs[0]))
