"""Gauge fixing, Dirichlet-to-Neumann sampling and gauge-invariance experiments.

All scenarios here live on a half grid whose last x3 layer is the plane x3 = 0;
the outward normal of the lower half space is +e3.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
from scipy.special import j0, j1

from . import forward
from .fields import Grid3, Scenario, ScalarField, VectorField, bump
from .io import write_csv, write_json


@dataclass(frozen=True)
class PlaneGrid:
    origin: tuple
    spacing: tuple
    dims: tuple

    @classmethod
    def of(cls, grid: Grid3) -> "PlaneGrid":
        return cls(grid.origin[:2], grid.spacing[:2], grid.dims[:2])

    def axes(self):
        return [o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.dims)]

    def mesh(self):
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def patch_mask(self, patch) -> np.ndarray:
        x1, x2 = self.mesh()
        a, b, c, d = patch
        return (x1 >= a) & (x1 <= b) & (x2 >= c) & (x2 <= d)


@dataclass
class BoundaryTrace:
    """Dirichlet data on x3 = 0, supported in a patch."""

    plane_grid: PlaneGrid
    values: np.ndarray
    patch_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, complex)
        if np.any(self.values[~self.patch_mask] != 0):
            raise ValueError("trace values must vanish outside the patch")

    @classmethod
    def from_function(cls, grid: Grid3, fn: Callable, patch) -> "BoundaryTrace":
        pg = PlaneGrid.of(grid)
        mask = pg.patch_mask(patch)
        x1, x2 = pg.mesh()
        vals = np.where(mask, fn(x1, x2), 0.0)
        return cls(pg, vals, mask)

    def scaled(self, alpha) -> "BoundaryTrace":
        return BoundaryTrace(self.plane_grid, alpha * self.values, self.patch_mask)


@dataclass
class DNRecord:
    """Samples of the DN map on the plane; ``patch_mask`` marks Gamma1."""

    plane_grid: PlaneGrid
    values: np.ndarray
    patch_mask: np.ndarray
    gauge_normal_zero: bool = True

    def to_csv(self, path) -> None:
        x1, x2 = self.plane_grid.mesh()
        rows = zip(x1.ravel(order="F"), x2.ravel(order="F"), self.values.real.ravel(order="F"),
                   self.values.imag.ravel(order="F"), self.patch_mask.ravel(order="F"))
        write_csv(path, ["x1", "x2", "re", "im", "in_gamma1"], rows)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values[self.patch_mask]) * np.sqrt(np.prod(self.plane_grid.spacing)))


@dataclass
class GaugeFunction:
    """Gauge ``psi`` on the half grid with its gradient."""

    psi: ScalarField
    grad_psi: VectorField
    c11: bool = True

    def check(self, tol: float = 0.0) -> None:
        if np.abs(self.psi.values[:, :, -1]).max() > tol:
            raise ValueError("gauge psi must vanish on x3 = 0")


# ---------------------------------------------------------------- gauge fixing

def _bump_transform(nodes: int = 64):
    """Radial Fourier transform of the unit-mass 2D bump and its derivative."""
    r, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (r + 1.0)
    w = 0.5 * w
    phi = bump(r)
    mass = 2 * np.pi * np.sum(w * phi * r)

    def ft(rho):
        rr = np.asarray(rho, float)[..., None]
        val = 2 * np.pi * np.sum(w * phi * j0(rr * r) * r, axis=-1) / mass
        der = -2 * np.pi * np.sum(w * phi * j1(rr * r) * r * r, axis=-1) / mass
        return val, der

    return ft


def plane_depths(grid: Grid3) -> np.ndarray:
    """x3 of each layer, with the top layer exactly 0."""
    n3 = grid.dims[2]
    return (np.arange(n3) - (n3 - 1)) * grid.spacing[2]


def gauge_fix(A: VectorField, reach: Optional[float] = None, power: int = 8):
    """Remove the normal component of A on x3 = 0 by a gauge ``psi``.

    ``psi(x', t) = t chi(t) (v * phi_|t|)(x')`` with ``v = -A3(., 0)``, a
    unit-mass bump ``phi`` dilated to width ``|t|`` and the cutoff
    ``chi(t) = (1 - (t / reach)^2)^power``. Then ``psi = 0`` and ``d3 psi = v``
    on the plane. The lateral mollification is done exactly in Fourier space.

    The polynomial cutoff is C^(power-1), far above the C^{1,1} the gauge
    needs, and stays resolvable by spectral derivatives on coarse grids.

    Returns
    -------
    A_fixed : VectorField
        ``A + grad psi``.
    gauge : GaugeFunction
    """
    g = A.grid
    if not g.is_lower_half:
        raise ValueError("gauge_fix needs a half grid ending on x3 = 0")
    v = -A.values[2, :, :, -1].real
    zero = VectorField(g, np.zeros_like(A.values))
    if not np.any(v):
        psi = ScalarField(g, np.zeros(g.dims, complex), 0.0)
        return VectorField(g, A.values.copy(), A.support_radius, A.support_center), GaugeFunction(psi, zero)
    t = plane_depths(g)
    if reach is None:
        reach = 0.9 * abs(t[0])
    if reach < 4 * g.spacing[2]:
        raise ValueError("gauge cutoff reach must span at least four cells")
    w = np.clip(1.0 - (t / reach) ** 2, 0.0, None)
    chi = w ** power
    dchi = -2.0 * power * t / reach ** 2 * w ** (power - 1)
    n1, n2 = g.dims[:2]
    k1 = 2 * np.pi * sfft.fftfreq(n1, g.spacing[0])[:, None]
    k2 = 2 * np.pi * sfft.fftfreq(n2, g.spacing[1])[None, :]
    rho = np.sqrt(k1 ** 2 + k2 ** 2)
    vh = sfft.fft2(v)
    ft = _bump_transform()
    psi = np.zeros(g.dims, complex)
    grad = np.zeros((3,) + g.dims, complex)
    for i, ti in enumerate(t):
        if chi[i] == 0:
            continue
        val, der = ft(abs(ti) * rho)
        uh = vh * val
        duh = vh * der * rho * np.sign(ti)  # d/dt of the mollified trace
        psi[:, :, i] = ti * chi[i] * sfft.ifft2(uh)
        grad[0, :, :, i] = ti * chi[i] * sfft.ifft2(1j * k1 * uh)
        grad[1, :, :, i] = ti * chi[i] * sfft.ifft2(1j * k2 * uh)
        grad[2, :, :, i] = sfft.ifft2((chi[i] + ti * dchi[i]) * uh + ti * chi[i] * duh)
    psi[:, :, -1] = 0.0
    psi, grad = psi.real, grad.real
    gauge = GaugeFunction(ScalarField(g, psi), VectorField(g, grad), c11=True)
    fixed = VectorField(g, A.values + grad, None, A.support_center)
    fixed.values[2, :, :, -1] = 0.0
    return fixed, gauge


# ---------------------------------------------------------------- DN map

FD4 = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / 12.0


def normal_derivative(u: ScalarField) -> np.ndarray:
    """One-sided fourth-order d/dx3 on the plane from the layers below it."""
    h = u.grid.spacing[2]
    vals = u.values
    return sum(c * vals[:, :, -1 - j] for j, c in enumerate(FD4)) / h


def dn_apply(scenario: Scenario, trace: BoundaryTrace, tol: float = 1e-6, return_field: bool = False,
             **kw):
    """Sample ``Lambda_{A,q} f`` on Gamma1 for a gauge-fixed scenario.

    With ``n.A = 0`` the DN map is the plain normal derivative of the outgoing
    Dirichlet solution.
    """
    forward.check_gauge(scenario.A)
    pg = PlaneGrid.of(scenario.A.grid)
    g1 = pg.patch_mask(scenario.gamma1_patch)
    g2 = pg.patch_mask(scenario.gamma2_patch)
    if np.any(trace.values[~g2] != 0):
        raise ValueError("trace must be supported in Gamma2")
    u, rep = forward.solve_halfspace_dirichlet(scenario, trace, tol, **kw)
    dn = np.where(g1, normal_derivative(u), 0.0)
    rec = DNRecord(pg, dn, g1, True)
    if return_field:
        return rec, u, rep
    return rec


def with_gauge(scenario: Scenario, gauge: GaugeFunction) -> Scenario:
    A = VectorField(scenario.A.grid, scenario.A.values + gauge.grad_psi.values)
    return Scenario(scenario.k, A, scenario.q, scenario.support_ball, scenario.gamma1_patch,
                    scenario.gamma2_patch, dict(scenario.meta))


def gauge_invariance_check(scenario: Scenario, gauge: GaugeFunction, trace: BoundaryTrace,
                           tol: float = 1e-6) -> dict:
    """Relative Gamma1 deviation between ``Lambda_{A,q} f`` and ``Lambda_{A+grad psi,q} f``."""
    gauge.check()
    r1 = dn_apply(scenario, trace, tol)
    if not np.any(gauge.psi.values):
        return {"deviation": 0.0, "norm": r1.norm(), "tol": tol}
    r2 = dn_apply(with_gauge(scenario, gauge), trace, tol)
    m = r1.patch_mask
    num = np.linalg.norm(r1.values[m] - r2.values[m])
    den = np.linalg.norm(r1.values[m])
    return {"deviation": float(num / den) if den > 0 else float(num), "norm": r1.norm(), "tol": tol,
            "max_abs_diff": float(np.abs(r1.values[m] - r2.values[m]).max())}


def dn_multiplier_oracle(values: np.ndarray, spacing, k: float, pad: int = 8) -> np.ndarray:
    """Zero-potential DN map ``F^{-1}[-i kz F f]`` with lateral zero padding.

    ``kz = sqrt(k^2 - |xi'|^2)`` on the branch with ``Im kz >= 0``.
    """
    n1, n2 = values.shape
    m1, m2 = pad * n1, pad * n2
    big = np.zeros((m1, m2), complex)
    big[:n1, :n2] = values
    k1 = 2 * np.pi * sfft.fftfreq(m1, spacing[0])[:, None]
    k2 = 2 * np.pi * sfft.fftfreq(m2, spacing[1])[None, :]
    kz = np.sqrt((k * k - k1 ** 2 - k2 ** 2).astype(complex))
    out = sfft.ifft2(-1j * kz * sfft.fft2(big))
    return out[:n1, :n2]


def lift_sensitivity(scenario: Scenario, trace: BoundaryTrace, tol: float = 1e-6,
                     kappa_scale: float = 1.5) -> float:
    """Relative Gamma1 change of ``Lambda f`` when the lift window is narrowed.

    The DN map does not depend on the lift analytically; the number measured
    here is its discrete sensitivity.
    """
    h3 = scenario.A.grid.spacing[2]
    r1 = dn_apply(scenario, trace, tol)
    r2 = dn_apply(scenario, trace, tol, kappa0=kappa_scale / (10.0 * h3))
    m = r1.patch_mask
    return float(np.linalg.norm(r1.values[m] - r2.values[m]) / np.linalg.norm(r1.values[m]))


def scenario_hash(scenario: Scenario) -> str:
    h = hashlib.sha256()
    g = scenario.A.grid
    h.update(json.dumps([scenario.k, list(g.origin), list(g.spacing), list(g.dims),
                         list(scenario.gamma1_patch), list(scenario.gamma2_patch)]).encode())
    h.update(np.ascontiguousarray(scenario.A.values, complex).tobytes())
    h.update(np.ascontiguousarray(scenario.q.values, complex).tobytes())
    return h.hexdigest()


def write_batch_manifest(path, entries) -> None:
    """JSON array of ``{trace_file, record_file, scenario_hash}`` entries."""
    rows = [{"trace_file": str(t), "record_file": str(r), "scenario_hash": s} for t, r, s in entries]
    write_json(path, rows)
