import numpy as np
import pytest

from magschrod import forward as F
from magschrod import validate as V
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField, apply_magnetic, make_potential


def zeros(g):
    return VectorField(g, np.zeros((3,) + g.dims)), ScalarField(g, np.zeros(g.dims, complex))


# ---------------------------------------------------------------- Green formula

def test_green_compact_u_both_sides_zero():
    g = Grid3.cube(32, 1.0)
    A = make_potential("gaussian_bump", g, None, amplitude=(0.8, -0.5, 0.3), sigma=0.25, cutoff=1.0)
    q = make_potential("gaussian_bump", g, None, amplitude=3.0, sigma=0.3, cutoff=1.0)
    r = g.radius()
    u = ScalarField(g, np.where(r < 0.5, np.cos(np.pi * r / 1.0) ** 8 * (1 - (r / 0.5) ** 2) ** 4, 0) * (1 + 0j))
    t = V.green_identity_terms(A, q, u, u, ((-0.7, 0.7),) * 3)
    assert t["rhs"] == 0 and abs(t["lhs"]) < 1e-12


def test_green_residual_second_order_and_small():
    rep = V.green_convergence_probe((32, 64))
    assert rep.values[-1] < 1e-3
    assert rep.values[0] / rep.values[1] > 3.0
    assert rep.passed and 1.7 < rep.fitted_slope < 2.3


def test_green_domain_margin():
    g = Grid3.cube(16, 1.0)
    A, q = zeros(g)
    u = ScalarField(g, np.ones(g.dims, complex))
    with pytest.raises(ValueError, match="inside the grid"):
        V.green_identity_probe(A, q, u, u, ((-1.0, 1.0),) * 3)


# ---------------------------------------------------------------- Carleman

@pytest.fixture(scope="module")
def cgrid():
    return Grid3.cube(64, 1.0)


HS = [0.2, 0.14, 0.1, 0.07, 0.05]


def test_conjugated_operator_gaussian_closed_form(cgrid):
    g, h, s = cgrid, 0.2, 0.15
    _, dphi, lap = V.carleman_weight(g, (0, 0, 1.0))
    x = g.mesh()
    w = np.exp(-sum(c * c for c in x) / (2 * s * s)).astype(complex)
    # e^{-x3/h} w is a Gaussian centred at (0, 0, -s^2/h)
    z0 = -s * s / h
    rr = x[0] ** 2 + x[1] ** 2 + (x[2] - z0) ** 2
    G = np.exp(-rr / (2 * s * s))
    exact = -h * h * np.exp(x[2] / h + s * s / (2 * h * h)) * G * (rr / s ** 4 - 3 / s ** 2)
    A, q = zeros(g)
    got = V.conjugated_apply(A.values.real, q.values, w, g, h, dphi, lap)
    assert np.linalg.norm(got - exact) < 1e-7 * np.linalg.norm(exact)


def test_conjugated_operator_with_potentials(cgrid):
    g, h = cgrid, 0.25
    A = make_potential("gaussian_bump", g, None, amplitude=(0.8, -0.5, 0.3), sigma=0.2, cutoff=0.9).values.real
    q = make_potential("gaussian_bump", g, None, amplitude=3 - 1j, sigma=0.2, cutoff=0.9).values
    for weight, eps in (("linear", 0.0), ("convexified", 0.5)):
        phi, dphi, lap = V.carleman_weight(g, (0.6, 0.0, 0.8), weight, eps)
        w = np.exp(-g.radius((0.1, 0, 0)) ** 2 / 0.03).astype(complex)
        got = V.conjugated_apply(A, q, w, g, h, dphi, lap)
        ref = h * h * np.exp(phi / h) * apply_magnetic(A, q, np.exp(-phi / h) * w, g)
        assert np.linalg.norm(got - ref) < 1e-4 * np.linalg.norm(ref)


def test_carleman_zero_potential_stable(cgrid):
    A, q = zeros(cgrid)
    al = (0.0, 0.0, 1.0)
    rep = V.carleman_probe(A, q, al, V.carleman_battery(cgrid, al, seed=0), HS)
    assert rep.passed and min(rep.values) > 1.0 and rep.fitted_slope >= -0.1


def test_carleman_translation_orthogonal_to_alpha(cgrid):
    A, q = zeros(cgrid)
    _, dphi, lap = V.carleman_weight(cgrid, (0, 0, 1.0))
    u = V.carleman_battery(cgrid, (0, 0, 1.0), seed=3, n_bumps=0, n_packets=1)[0](0.1)
    r0 = V.carleman_ratio(A.values.real, q.values, u, cgrid, 0.1, dphi, lap)
    r1 = V.carleman_ratio(A.values.real, q.values, np.roll(u, (5, -3), axis=(0, 1)), cgrid, 0.1, dphi, lap)
    assert abs(r1 - r0) < 1e-10 * r0


def test_carleman_lipschitz_A_battery(cgrid):
    g = cgrid
    al = (0.0, 0.0, 1.0)
    bat = V.carleman_battery(g, al, seed=0)
    A0, q0 = zeros(g)
    base = V.carleman_probe(A0, q0, al, bat, HS)
    cone = np.clip(1 - g.radius() / 0.6, 0, None)
    A = VectorField(g, np.stack([0.8 * cone, -0.5 * cone, 0.3 * cone]))
    rep = V.carleman_probe(A, q0, al, bat, HS, c0=0.5 * min(base.values))
    assert rep.passed


def test_carleman_rejects_under_resolved(cgrid):
    A, q = zeros(cgrid)
    with pytest.raises(ValueError, match="under-resolves"):
        V.carleman_probe(A, q, (0, 0, 1.0), V.carleman_battery(cgrid, (0, 0, 1.0)), [0.01])


# ---------------------------------------------------------------- Rellich

@pytest.fixture(scope="module")
def rgrid():
    return Grid3.cube(48, 1.0)


RADII = [0.55, 0.65, 0.75, 0.85, 0.95, 1.2]
BALL = ((0.0, 0.0, 0.0), 0.5)


def test_rellich_zero_field(rgrid):
    rep = V.rellich_probe(ScalarField(rgrid, np.zeros(rgrid.dims, complex)), RADII, BALL)
    assert rep.passed and rep.meta["null"] and all(v == 0 for v in rep.values)
    assert rep.meta["dropped"] == 1


def test_rellich_point_source_not_null(rgrid):
    for k in (1.0, 2.0, 5.0):
        r = rgrid.radius()
        u = ScalarField(rgrid, np.exp(1j * k * r) / (4 * np.pi * r))
        rep = V.rellich_probe(u, RADII, BALL)
        assert not rep.meta["null"] and rep.passed
        assert np.allclose(rep.values, 1 / (4 * np.pi), rtol=1e-3)


def test_rellich_self_difference_null(rgrid):
    g = rgrid
    A = make_potential("gaussian_bump", g, None, amplitude=(0.4, 0.2, -0.3), sigma=0.1, cutoff=0.45)
    q = make_potential("gaussian_bump", g, None, amplitude=2.0, sigma=0.1, cutoff=0.45)
    sc = Scenario(2.0, VectorField(g, A.values.real), q, BALL, (-0.9, 0.9, -0.9, 0.9), (-0.9, 0.9, -0.9, 0.9))
    f = make_potential("gaussian_bump", g, None, amplitude=1.0, sigma=0.08, cutoff=0.4)
    op = F.LSOperator.build(sc)
    u1, _ = F.solve_freespace(op, f, tol=1e-10)
    u2, _ = F.solve_freespace(op, f, tol=1e-10)
    scale = float(np.abs(u1.values).max())
    rep = V.rellich_probe(ScalarField(g, u1.values - u2.values), RADII, BALL, scale=scale)
    assert rep.meta["null"] and rep.passed
    # the solve itself radiates and must not be classified null
    assert not V.rellich_probe(u1, RADII, BALL, scale=scale).meta["null"]


def test_report_json_lines(tmp_path, rgrid):
    rep = V.rellich_probe(ScalarField(rgrid, np.zeros(rgrid.dims, complex)), RADII, BALL)
    V.write_reports(tmp_path / "p.jsonl", [rep, rep])
    back = V.read_reports(tmp_path / "p.jsonl")
    assert len(back) == 2 and back[0]["pass"] is True and back[0]["probe_name"] == "rellich"
    assert set(back[0]) >= {"probe_name", "h_or_r_ladder", "values", "fitted_slope", "pass"}
    with pytest.raises(ValueError):
        V.ProbeReport("x", [1.0], [np.nan], 0.0, True)
