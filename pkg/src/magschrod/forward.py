"""Outgoing forward solves for ``(L_{A,q} - k^2) u = f``.

``L_{A,q} = -Delta - 2i A.grad + p`` with ``p = -i div A + A^2 + q``. Writing
``u = G0 * s`` turns the equation into the source-form Lippmann-Schwinger
system ``s - V(G0 * s) = f`` with ``V w = 2i A.grad w - p w``. Since ``s - f``
is supported where the potentials are, the Krylov unknown lives on that set only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from . import greens
from .fields import (Grid3, Scenario, ScalarField, VectorField, fd_divergence, reflect_extend,
                     restrict_lower, spectral_divergence)
from .io import write_csv


class SolverError(RuntimeError):
    """Iterative solve failed; ``report`` carries the residual history."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class GaugeError(ValueError):
    """Normal component of A does not vanish on the plane."""


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    history: list = field(default_factory=list)
    converged: bool = True
    radiating_check: Optional[list] = None
    lift_edge_leak: Optional[float] = None

    def to_csv(self, path) -> None:
        write_csv(path, ["iteration", "residual"], enumerate(self.history, 1))


@dataclass
class LSOperator:
    """Discrete Lippmann-Schwinger operator for one scenario."""

    scenario: Scenario
    kernel: greens.GreenKernel
    effective_p: ScalarField
    mask: np.ndarray
    A: np.ndarray

    @classmethod
    def build(cls, scenario: Scenario, kernel: Optional[greens.GreenKernel] = None,
              derivative: str = "spectral") -> "LSOperator":
        grid = scenario.A.grid
        if kernel is None:
            kernel = greens.get_kernel(scenario.k, grid)
        A = scenario.A.values.real.astype(complex)
        div = spectral_divergence(A, grid) if derivative == "spectral" else fd_divergence(A, grid)
        p = -1j * div + np.sum(A * A, axis=0) + scenario.q.values
        mask = (np.abs(A).max(axis=0) > 0) | (scenario.q.values != 0)
        p = np.where(mask, p, 0.0)
        return cls(scenario, kernel, ScalarField(grid, p), mask, A)

    @property
    def grid(self) -> Grid3:
        return self.scenario.A.grid

    @property
    def is_free(self) -> bool:
        return not self.mask.any()

    def potential_term(self, s: np.ndarray) -> np.ndarray:
        """``V(G0 * s)`` restricted to the potential support (flat vector)."""
        w, gw = greens.convolve(self.kernel, s, gradient=True)
        m = self.mask
        return 2j * np.sum(self.A[:, m] * gw[:, m], axis=0) - self.effective_p.values[m] * w[m]

    def embed(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.dims, complex)
        out[self.mask] = t
        return out


def solve_freespace(op: LSOperator, f: ScalarField, tol: float = 1e-6, maxiter: int = 500,
                    x0: Optional[np.ndarray] = None, restart: int = 60, stall: int = 50):
    """Outgoing solution of ``(L_{A,q} - k^2) u = f`` on the operator's grid.

    Returns
    -------
    u : ScalarField
    report : SolveReport

    Raises
    ------
    SolverError
        On a residual plateau over ``stall`` iterations or on hitting ``maxiter``.
    """
    if not f.grid.same_as(op.grid):
        raise ValueError("source lives on a different grid than the operator")
    if op.is_free:
        return greens.resolvent_apply(op.kernel, f), SolveReport(0, 0.0, [])
    n = int(op.mask.sum())
    b = op.potential_term(f.values)
    bn = np.linalg.norm(b)
    if bn == 0:
        return greens.resolvent_apply(op.kernel, f), SolveReport(0, 0.0, [])
    mv = lambda t: t - op.potential_term(op.embed(t))
    A = LinearOperator((n, n), matvec=mv, dtype=complex)
    hist: list = []

    def cb(r):
        hist.append(float(r))
        if len(hist) > stall and hist[-1] > 0.999 * hist[-1 - stall]:
            raise _Stall()

    try:
        t, info = gmres(A, b, x0=None if x0 is None else x0[op.mask], rtol=tol, atol=0.0,
                        restart=restart, maxiter=max(1, -(-maxiter // restart)),
                        callback=cb, callback_type="pr_norm")
    except _Stall:
        raise SolverError("GMRES stagnated (residual plateau)", SolveReport(len(hist), hist[-1], hist, False))
    rel = float(np.linalg.norm(b - mv(t)) / bn)
    report = SolveReport(len(hist), rel, hist, info == 0 and rel <= 10 * tol)
    if not report.converged:
        raise SolverError(f"GMRES did not converge (info={info}, residual={rel:.3g})", report)
    u = greens.convolve(op.kernel, f.values + op.embed(t))
    return ScalarField(op.grid, u), report


class _Stall(Exception):
    pass


def operator_residual(scenario: Scenario, u: ScalarField, f: ScalarField, margin: int = 3) -> float:
    """``||(L_{A,q} - k^2) u - f|| / ||f||`` on the interior, sixth-order differences."""
    g = u.grid
    A = scenario.A.values.real
    lap = greens.fd_laplacian6(u.values, g)
    grad = np.stack([_d1_6(u.values, g, j) for j in range(3)])
    div = spectral_divergence(A.astype(complex), g)
    p = -1j * div + np.sum(A * A, axis=0) + scenario.q.values
    r = -lap - 2j * np.sum(A * grad, axis=0) + (p - scenario.k ** 2) * u.values - f.values
    sl = (slice(margin, -margin),) * 3
    return float(np.linalg.norm(r[sl]) / np.linalg.norm(f.values[sl]))


_D1_6 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])


def _d1_6(u, g, ax):
    acc = np.zeros_like(u)
    for off, c in zip(range(-3, 4), _D1_6):
        if c:
            acc += c * np.roll(u, -off, axis=ax)
    return acc / g.spacing[ax]


# ---------------------------------------------------------------- half space

def check_gauge(A: VectorField, tol: float = 1e-12) -> None:
    g = A.grid
    scale = max(np.abs(A.values).max(), 1e-300)
    plane = A.values[2, :, :, g.dims[2] - 1]
    if np.abs(plane).max() > tol * scale:
        raise GaugeError("A3 does not vanish on x3 = 0; apply dnmap.gauge_fix first")


def extend_scenario(scenario: Scenario) -> Scenario:
    """Reflect a half-grid scenario to the mirror grid (A1, A2, q even; A3 odd)."""
    check_gauge(scenario.A)
    A = reflect_extend(scenario.A, ["even", "even", "odd"])
    q = reflect_extend(scenario.q, ["even"])
    return Scenario(scenario.k, A, q, scenario.support_ball, scenario.gamma1_patch,
                    scenario.gamma2_patch, dict(scenario.meta))


def solve_halfspace_source(scenario: Scenario, f: ScalarField, tol: float = 1e-6,
                           maxiter: int = 500, return_extended: bool = False, **kw):
    """Outgoing solution in x3 < 0 with zero trace, via odd reflection.

    ``scenario`` and ``f`` live on a half grid ending on x3 = 0.
    """
    ext = extend_scenario(scenario)
    fe = reflect_extend(f, ["odd"])
    op = LSOperator.build(ext)
    ue, rep = solve_freespace(op, fe, tol, maxiter, **kw)
    uh = restrict_lower(ue)
    if return_extended:
        return uh, rep, ue
    return uh, rep


@dataclass
class Lift:
    """Even-in-x3 extension ``F`` of Dirichlet data and its Helmholtz image."""

    F: np.ndarray
    grad: np.ndarray
    source: np.ndarray  # (Delta + k^2) F
    edge_leak: float  # max |F| on the lateral box faces relative to max |F|


def window_lift(values: np.ndarray, grid: Grid3, k: float, kappa0: Optional[float] = None,
                slope: float = 0.3, power: int = 2) -> Lift:
    """Lift plane data ``f`` into x3 <= 0, mode by mode.

    Each lateral Fourier mode of ``f`` is continued as
    ``cos(kz x3) exp(-(mu x3)^(2 power))`` with ``kz^2 = k^2 - |xi'|^2`` and
    ``mu = sqrt(kappa0^2 + slope^2 |xi'|^2)``. The cosine makes
    ``(Delta + k^2) F`` vanish to order ``x3^(2 power - 2)`` at the plane, so its
    odd reflection is smooth, while the window keeps ``F`` bounded and thin.
    """
    h = grid.spacing
    if kappa0 is None:
        kappa0 = 1.0 / (10.0 * h[2])
    n1, n2 = values.shape
    k1 = 2 * np.pi * sfft.fftfreq(n1, h[0])[:, None]
    k2 = 2 * np.pi * sfft.fftfreq(n2, h[1])[None, :]
    xi2 = k1 ** 2 + k2 ** 2
    kz = np.sqrt((k * k - xi2).astype(complex))
    mu2p = (kappa0 ** 2 + slope ** 2 * xi2) ** power
    fh = sfft.fft2(np.asarray(values, complex))
    F = np.zeros(grid.dims, complex)
    S = np.zeros(grid.dims, complex)
    D = np.zeros((3,) + grid.dims, complex)
    tp = 2 * power
    for i, z in enumerate(grid.axes()[2]):
        C = np.cos(kz * z)
        C1 = -kz * np.sin(kz * z)
        E = np.exp(-mu2p * z ** tp)
        E1 = -tp * mu2p * z ** (tp - 1) * E
        E2 = (-tp * (tp - 1) * mu2p * z ** (tp - 2) + (tp * mu2p * z ** (tp - 1)) ** 2) * E
        m = fh * C * E
        F[:, :, i] = sfft.ifft2(m)
        D[0, :, :, i] = sfft.ifft2(1j * k1 * m)
        D[1, :, :, i] = sfft.ifft2(1j * k2 * m)
        D[2, :, :, i] = sfft.ifft2(fh * (C1 * E + C * E1))
        S[:, :, i] = sfft.ifft2(fh * (2 * C1 * E1 + C * E2))
    top = np.abs(F).max()
    faces = max(np.abs(F[[0, -1]]).max(), np.abs(F[:, [0, -1]]).max())
    return Lift(F, D, S, float(faces / top) if top > 0 else 0.0)


def solve_halfspace_dirichlet(scenario: Scenario, trace, tol: float = 1e-6, maxiter: int = 500,
                              **lift_kw):
    """Outgoing solution of ``(L_{A,q} - k^2) u = 0`` in x3 < 0 with ``u = f`` on x3 = 0.

    ``u = F + v`` where ``F`` is :func:`window_lift` of the data and ``v`` solves
    the zero-trace problem ``(L_{A,q} - k^2) v = -(L_{A,q} - k^2) F``. The data
    must vanish on the plane where the potentials are nonzero.
    """
    g = scenario.A.grid
    vals = np.asarray(trace.values, complex)
    if vals.shape != g.dims[:2]:
        raise ValueError("trace grid does not match the scenario's plane")
    if not np.any(vals):
        z = ScalarField(g, np.zeros(g.dims, complex))
        return z, SolveReport(0, 0.0, [])
    lift = window_lift(vals, g, scenario.k, **lift_kw)
    if lift.edge_leak > 5e-3:
        warnings.warn(f"Dirichlet lift reaches the lateral box faces (leak {lift.edge_leak:.2g}); "
                      "move supp(f) away from the faces or enlarge the box", RuntimeWarning)
    ext = extend_scenario(scenario)
    n3 = g.dims[2]
    p = LSOperator.build(ext).effective_p.values[:, :, :n3]
    A = scenario.A.values.real
    src = lift.source + 2j * np.sum(A * lift.grad, axis=0) - p * lift.F
    plane = np.abs(src[:, :, -1]).max()
    if plane > 1e-12 * np.abs(src).max():
        raise ValueError("Dirichlet data overlaps the potentials on the plane; "
                         "keep supp(f) inside Gamma2 away from B")
    src[:, :, -1] = 0.0
    v, rep = solve_halfspace_source(scenario, ScalarField(g, src), tol, maxiter)
    u = v.values + lift.F
    u[:, :, -1] = vals  # exact trace; the lift reproduces it only to roundoff
    rep.lift_edge_leak = lift.edge_leak
    return ScalarField(g, u), rep
