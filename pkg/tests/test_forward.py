import numpy as np
import pytest

from _oracles import plane_bump, poisson_halfspace, random_probes
from magschrod import forward as F
from magschrod import greens as G
from magschrod.dnmap import BoundaryTrace
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField, apply_magnetic, make_potential


def scenario(grid, A=None, q=None, k=2.0, ball=((0, 0, 0), 0.8)):
    A = VectorField(grid, np.zeros((3,) + grid.dims)) if A is None else A
    q = ScalarField(grid, np.zeros(grid.dims)) if q is None else q
    return Scenario(k, A, q, ball, (-1, 1, -1, 1), (-1, 1, -1, 1))


def potentials(grid, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center)
    A = make_potential("gaussian_bump", grid, None, amplitude=(0.7, -0.4, 0.5), sigma=0.12, center=c + 0.05)
    q = make_potential("gaussian_bump", grid, None, amplitude=3.0 - 0.5j, sigma=0.14, center=c - 0.05)
    return VectorField(grid, A.values.real), q


def gaussian(grid, c, sig):
    r = grid.radius(c)
    return ScalarField(grid, np.exp(-r ** 2 / (2 * sig ** 2)))


def test_zero_potentials_bit_identical_to_resolvent():
    g = Grid3.cube(32, 1.0)
    sc = scenario(g)
    f = gaussian(g, (0.1, 0, 0), 0.1)
    u, rep = F.solve_freespace(F.LSOperator.build(sc), f)
    ref = G.resolvent_apply(G.get_kernel(sc.k, g), f)
    assert np.array_equal(u.values, ref.values) and rep.iterations == 0


def test_manufactured_solution():
    g = Grid3.cube(64, 1.0)
    A, q = potentials(g)
    sc = scenario(g, A, q)
    u_ex = gaussian(g, (0.05, -0.1, 0.0), 0.15).values
    f = apply_magnetic(A.values, q.values, u_ex, g) - sc.k ** 2 * u_ex
    u, rep = F.solve_freespace(F.LSOperator.build(sc), ScalarField(g, f))
    assert rep.converged and rep.relative_residual < 1e-5
    assert np.linalg.norm(u.values - u_ex) < 1e-3 * np.linalg.norm(u_ex)
    assert F.operator_residual(sc, u, ScalarField(g, f)) < 1e-3


def test_zero_source_linearity_and_restart():
    g = Grid3.cube(40, 1.0)
    A, q = potentials(g)
    op = F.LSOperator.build(scenario(g, A, q))
    u0, _ = F.solve_freespace(op, ScalarField(g, np.zeros(g.dims)))
    assert not np.any(u0.values)
    f1 = gaussian(g, (0.2, 0, 0), 0.1)
    f2 = gaussian(g, (-0.1, 0.2, 0), 0.12)
    u1, _ = F.solve_freespace(op, f1, tol=1e-10)
    u2, _ = F.solve_freespace(op, f2, tol=1e-10)
    a, b = 2.0 - 1.0j, 0.5j
    u12, _ = F.solve_freespace(op, ScalarField(g, a * f1.values + b * f2.values), tol=1e-10)
    ref = a * u1.values + b * u2.values
    assert np.linalg.norm(u12.values - ref) < 1e-8 * np.linalg.norm(ref)
    # starting from a perturbed guess lands on the same solution
    x0 = np.random.default_rng(1).standard_normal(g.dims) * 0.1
    u1b, _ = F.solve_freespace(op, f1, tol=1e-10, x0=x0)
    assert np.linalg.norm(u1b.values - u1.values) < 1e-8 * np.linalg.norm(u1.values)


def test_solver_failure_report(tmp_path):
    g = Grid3.cube(32, 1.0)
    A, q = potentials(g)
    q = q.with_values(q.values * 40)
    op = F.LSOperator.build(scenario(g, A, q))
    with pytest.raises(F.SolverError) as err:
        F.solve_freespace(op, gaussian(g, (0, 0, 0), 0.1), tol=1e-12, maxiter=3, restart=3)
    rep = err.value.report
    assert rep is not None and not rep.converged
    rep.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual" and len(lines) == len(rep.history) + 1


def half_grid(n=64, half_width=1.6, n3=33):
    return Grid3.cube(n, half_width, n3=2 * n3 - 1).lower_half()


def test_halfspace_source_odd_with_potentials():
    g = half_grid(40, 1.2, 21)
    A, q = potentials(g, (0.0, 0.0, -0.6))
    sc = scenario(g, A, q, ball=((0, 0, -0.6), 0.5))
    f = make_potential("gaussian_bump", g, None, amplitude=1.0, sigma=0.08, center=(0.1, 0.0, -0.5))
    u, rep, ue = F.solve_halfspace_source(sc, f, tol=1e-10, return_extended=True)
    vals = ue.values
    assert np.abs(vals + vals[:, :, ::-1]).max() < 1e-8 * np.abs(vals).max()
    assert np.abs(u.values[:, :, -1]).max() < 1e-8 * np.abs(u.values).max()


def test_halfspace_image_pair():
    # zero potentials: exterior field is G0(x - y) - G0(x - y~) times the Gaussian factor
    g = half_grid(48, 1.2, 25)
    k, sig = 2.0, 0.06
    y = np.array([0.1, -0.05, -0.6])
    r = g.radius(y)
    f = ScalarField(g, np.exp(-r ** 2 / (2 * sig ** 2)) / (2 * np.pi * sig ** 2) ** 1.5)
    u, _ = F.solve_halfspace_source(scenario(g, k=k), f)
    x = np.stack(g.mesh(), -1)
    yt = y * np.array([1, 1, -1])
    m = r > 6 * sig
    ex = (G.green_eval(k, x[m], y) - G.green_eval(k, x[m], yt)) * np.exp(-k ** 2 * sig ** 2 / 2)
    assert np.abs(u.values[m] - ex).max() < 1e-5 * np.abs(ex).max()


def test_gauge_rejected():
    g = half_grid(24, 1.0, 13)
    A = np.zeros((3,) + g.dims)
    A[2, 5:8, 5:8, -1] = 0.3
    with pytest.raises(F.GaugeError):
        F.extend_scenario(scenario(g, VectorField(g, A)))


def test_dirichlet_matches_poisson_integral():
    g = half_grid()
    k = 2.0
    fb = plane_bump((0.1, -0.05), 0.25)
    tr = BoundaryTrace.from_function(g, fb, (-1.5, 1.5, -1.5, 1.5))
    u, rep = F.solve_halfspace_dirichlet(scenario(g, k=k), tr)
    assert np.array_equal(u.values[:, :, -1], tr.values)
    assert rep.lift_edge_leak < 1e-2
    X = g.mesh()
    idx = random_probes(g, 120, seed=0)
    got = np.array([u.values[i] for i in idx])
    ex = np.array([poisson_halfspace(fb, k, np.array([X[0][i], X[1][i], X[2][i]])) for i in idx])
    assert np.linalg.norm(got - ex) < 1e-3 * np.linalg.norm(ex)


def test_dirichlet_zero_and_overlap():
    g = half_grid(32, 1.2, 17)
    z = BoundaryTrace.from_function(g, lambda a, b: 0 * a, (-1, 1, -1, 1))
    u, _ = F.solve_halfspace_dirichlet(scenario(g), z)
    assert not np.any(u.values)
    _, q = potentials(g, (0.0, 0.0, -0.1))
    tr = BoundaryTrace.from_function(g, plane_bump((0, 0), 0.2, 0.6, 0.2), (-1, 1, -1, 1))
    with pytest.raises(ValueError, match="overlaps"):
        F.solve_halfspace_dirichlet(scenario(g, q=q), tr)
