import json

import numpy as np
import pytest

from _oracles import plane_bump
from magschrod import dnmap as DN
from magschrod import forward as F
from magschrod.fields import (Grid3, ScalarField, Scenario, VectorField, apply_magnetic, fd_curl,
                              make_potential, reflect_extend, spectral_curl)


def half_grid(n=64, half_width=1.6, n3=33):
    return Grid3.cube(n, half_width, n3=2 * n3 - 1).lower_half()


def scenario(g, A=None, q=None, k=2.0):
    A = VectorField(g, np.zeros((3,) + g.dims)) if A is None else A
    q = ScalarField(g, np.zeros(g.dims)) if q is None else q
    return Scenario(k, A, q, ((-0.6, 0, 0), 0.7), (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))


def buried_potentials(g):
    A = make_potential("gaussian_bump", g, None, amplitude=(0.8, -0.5, 0.4), sigma=0.12, center=(-0.6, 0.1, -0.6))
    q = make_potential("gaussian_bump", g, None, amplitude=4 - 1j, sigma=0.12, center=(-0.5, 0, -0.55))
    return VectorField(g, A.values.real), q


def plane_field(g, sig=0.15):
    A = make_potential("gaussian_bump", g, None, amplitude=(0.3, -0.2, 0.6), sigma=sig,
                       center=(0.1, 0, 0), cutoff=8 * sig)
    return VectorField(g, A.values.real)


def test_gauge_fix_trivial():
    g = half_grid(24, 1.0, 13)
    A = plane_field(g, 0.1)
    A.values[2] = 0.0
    Af, gauge = DN.gauge_fix(A)
    assert not np.any(gauge.psi.values) and np.array_equal(Af.values, A.values)


def test_gauge_fix_normal_trace_and_curl():
    g = half_grid(48, 1.6, 25)
    A = plane_field(g)
    Af, gauge = DN.gauge_fix(A)
    gauge.check()
    a3 = A.values[2, :, :, -1]
    assert np.abs(gauge.grad_psi.values[2, :, :, -1] + a3).max() < 1e-8 * np.abs(a3).max()
    assert np.abs(Af.values[2, :, :, -1]).max() < 1e-8 * np.abs(a3).max()
    F.check_gauge(Af)
    ext = reflect_extend(gauge.grad_psi, ["odd", "odd", "even"])
    dc = spectral_curl(ext.values, ext.grid)[:, :, :, : g.dims[2]]
    assert np.linalg.norm(dc) < 1e-6 * np.linalg.norm(fd_curl(A.values, g))


def test_conjugation_identity():
    # e^{-i psi} L_{A,q} e^{i psi} = L_{A + grad psi, q} on a compactly supported w
    g = Grid3.cube(64, 1.0)
    A = make_potential("gaussian_bump", g, None, amplitude=(0.5, 0.3, -0.4), sigma=0.15, cutoff=0.9)
    q = make_potential("gaussian_bump", g, None, amplitude=2.0 - 0.3j, sigma=0.15, cutoff=0.9)
    grad, psi = make_potential("gradient_field", g, None, amplitude=0.9, radius=0.9, sigma=0.15)
    r = g.radius((0.1, -0.1, 0))
    rng = np.random.default_rng(4)
    w = (rng.standard_normal() + 1j * rng.standard_normal()) * np.exp(-r ** 2 / 0.045) * np.cos(3 * r)
    lhs = apply_magnetic(A.values.real + grad.values.real, q.values, w, g)
    e = np.exp(1j * psi.values.real)
    rhs = np.conj(e) * apply_magnetic(A.values.real, q.values, e * w, g)
    assert np.linalg.norm(lhs - rhs) < 1e-6 * np.linalg.norm(lhs)


@pytest.fixture(scope="module")
def dn_setup():
    g = half_grid()
    sc = scenario(g)
    tr = DN.BoundaryTrace.from_function(g, plane_bump((0.0, 0.0), 0.25, 0.9, 0.35), sc.gamma2_patch)
    rec, u, rep = DN.dn_apply(sc, tr, return_field=True)
    return g, sc, tr, rec


def test_dn_zero_potentials_multiplier_oracle(dn_setup):
    g, sc, tr, rec = dn_setup
    ref = DN.dn_multiplier_oracle(tr.values, g.spacing[:2], sc.k, pad=12)
    m = rec.patch_mask
    assert np.linalg.norm(rec.values[m] - ref[m]) < 5e-3 * np.linalg.norm(ref[m])
    assert not np.any(rec.values[~m])


def test_dn_zero_and_linearity(dn_setup):
    g, sc, tr, rec = dn_setup
    z = DN.dn_apply(sc, tr.scaled(0.0))
    assert not np.any(z.values)
    alpha = 0.3 - 2.0j
    r2 = DN.dn_apply(sc, tr.scaled(alpha))
    assert np.linalg.norm(r2.values - alpha * rec.values) < 1e-6 * np.linalg.norm(alpha * rec.values)


def test_dn_patch_shrinking(dn_setup):
    g, sc, tr, rec = dn_setup
    small = Scenario(sc.k, sc.A, sc.q, sc.support_ball, (0.0, 1.2, -1.0, 1.0), sc.gamma2_patch)
    r2 = DN.dn_apply(small, tr)
    both = r2.patch_mask & rec.patch_mask
    assert both.any() and np.array_equal(r2.values[both], rec.values[both])


def test_dn_preconditions(dn_setup):
    g, sc, tr, rec = dn_setup
    A = np.zeros((3,) + g.dims)
    A[2, 10:12, 10:12, -1] = 1.0
    with pytest.raises(F.GaugeError):
        DN.dn_apply(scenario(g, VectorField(g, A)), tr)
    narrow = Scenario(sc.k, sc.A, sc.q, sc.support_ball, sc.gamma1_patch, (0.0, 1.5, -1.5, 1.5))
    with pytest.raises(ValueError, match="Gamma2"):
        DN.dn_apply(narrow, tr)
    with pytest.raises(ValueError):
        DN.BoundaryTrace(tr.plane_grid, np.ones(tr.values.shape), tr.patch_mask)


def test_gauge_invariance_pair(dn_setup):
    g, sc0, tr, _ = dn_setup
    A, q = buried_potentials(g)
    sc = scenario(g, A, q)
    grad, psi = make_potential("gradient_field", g, None, amplitude=1.0, radius=0.7, sigma=0.1,
                               center=(-0.6, 0.0, -0.85))
    gauge = DN.GaugeFunction(psi, VectorField(g, grad.values.real))
    rep = DN.gauge_invariance_check(sc, gauge, tr, tol=1e-6)
    assert rep["deviation"] < 1e-5
    none = DN.GaugeFunction(ScalarField(g, np.zeros(g.dims)), VectorField(g, np.zeros((3,) + g.dims)))
    assert DN.gauge_invariance_check(sc0, none, tr)["deviation"] == 0.0


def test_dn_record_export(dn_setup, tmp_path):
    g, sc, tr, rec = dn_setup
    rec.to_csv(tmp_path / "dn.csv")
    lines = (tmp_path / "dn.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,re,im,in_gamma1" and len(lines) == 1 + rec.values.size
    DN.write_batch_manifest(tmp_path / "m.json", [("f0.csv", "dn.csv", DN.scenario_hash(sc))])
    man = json.loads((tmp_path / "m.json").read_text())
    assert man[0]["record_file"] == "dn.csv" and len(man[0]["scenario_hash"]) == 64


def test_lift_sensitivity_small(dn_setup):
    g, sc, tr, rec = dn_setup
    assert DN.lift_sensitivity(sc, tr) < 5e-3
