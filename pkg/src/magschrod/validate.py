"""Numerical probes of the analytic machinery behind the toolkit.

Each probe is a falsification instrument: it reports a measured quantity along
a ladder (spacing, h or radius) and a pass flag with the thresholds used.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fields import Grid3, ScalarField, VectorField, spectral_derivative, spectral_divergence
from .greens import FieldSampler, sphere_mesh


@dataclass
class ProbeReport:
    probe_name: str
    h_or_r_ladder: list
    values: list
    fitted_slope: float
    passed: bool
    thresholds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.h_or_r_ladder = [float(v) for v in self.h_or_r_ladder]
        self.values = [float(v) for v in self.values]
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.probe_name}: non-finite probe values")
        self.fitted_slope = float(self.fitted_slope)
        self.passed = bool(self.passed)

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, default=_plain)


def _plain(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_reports(path, reports: Sequence[ProbeReport]) -> None:
    """JSON lines, one object per probe run."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json_line() + "\n")


def read_reports(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- magnetic Green formula

def _d(u: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    """Central difference on interior nodes (edges left as NaN)."""
    ax = u.ndim - 3 + axis
    out = np.full(u.shape, np.nan, dtype=np.result_type(u, float))
    hi = [slice(None)] * u.ndim
    lo = [slice(None)] * u.ndim
    mid = [slice(None)] * u.ndim
    hi[ax], lo[ax], mid[ax] = slice(2, None), slice(None, -2), slice(1, -1)
    out[tuple(mid)] = (u[tuple(hi)] - u[tuple(lo)]) / (2 * grid.spacing[axis])
    return out


def _domain_slices(grid: Grid3, domain, margin: int = 2) -> tuple:
    axes = grid.axes()
    out = []
    for j, (a, b) in enumerate(domain):
        i0 = int(np.argmin(np.abs(axes[j] - a)))
        i1 = int(np.argmin(np.abs(axes[j] - b)))
        if i0 < margin or i1 > grid.dims[j] - 1 - margin or i1 - i0 < 2:
            raise ValueError(f"domain must sit at least {margin} nodes inside the grid along axis {j}")
        out.append((i0, i1))
    return tuple(out)


def _trap(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def magnetic_fd(A: np.ndarray, q: np.ndarray, u: np.ndarray, grid: Grid3) -> np.ndarray:
    """``sum_j (-i d_j + A_j)^2 u + q u`` with composed central differences (second order)."""
    out = q * u
    for j in range(3):
        t = -1j * _d(u, grid, j) + A[j] * u
        out = out + (-1j * _d(t, grid, j) + A[j] * t)
    return out


def green_identity_terms(A, q, u, v, domain) -> dict:
    """Both sides of the magnetic Green formula on a box ``domain``.

    ``int (L_{A,q} u) conj(v) - u conj(L_{A,conj q} v)`` against
    ``int_{dOmega} -(d_n u + i A.n u) conj(v) + u conj(d_n v + i A.n v) dS``,
    with trapezoidal quadrature and second-order differences. ``domain`` is
    ``((lo1, hi1), (lo2, hi2), (lo3, hi3))`` snapped to nodes at least two nodes
    inside the grid.
    """
    grid = u.grid
    Av = np.real(_vals(A))
    qv, uv, vv = _vals(q), _vals(u), _vals(v)
    (a0, a1), (b0, b1), (c0, c1) = _domain_slices(grid, domain)
    box = (slice(a0, a1 + 1), slice(b0, b1 + 1), slice(c0, c1 + 1))
    Lu = magnetic_fd(Av, qv, uv, grid)[box]
    Lv = magnetic_fd(Av, np.conj(qv), vv, grid)[box]
    w = np.einsum("i,j,k->ijk", _trap(a1 - a0 + 1), _trap(b1 - b0 + 1), _trap(c1 - c0 + 1)) * grid.cell_volume
    lhs = np.sum(w * (Lu * np.conj(vv[box]) - uv[box] * np.conj(Lv)))

    rhs = 0.0 + 0.0j
    bounds = ((a0, a1), (b0, b1), (c0, c1))
    for j in range(3):
        du, dv = _d(uv, grid, j), _d(vv, grid, j)
        others = [m for m in range(3) if m != j]
        fw = np.outer(_trap(bounds[others[0]][1] - bounds[others[0]][0] + 1),
                      _trap(bounds[others[1]][1] - bounds[others[1]][0] + 1))
        fw = fw * grid.spacing[others[0]] * grid.spacing[others[1]]
        for idx, sgn in ((bounds[j][0], -1.0), (bounds[j][1], 1.0)):
            sl = [slice(bounds[m][0], bounds[m][1] + 1) for m in range(3)]
            sl[j] = idx
            sl = tuple(sl)
            an = sgn * Av[j][sl]
            bu = sgn * du[sl] + 1j * an * uv[sl]
            bv = sgn * dv[sl] + 1j * an * vv[sl]
            rhs += np.sum(fw * (-bu * np.conj(vv[sl]) + uv[sl] * np.conj(bv)))
    return {"lhs": complex(lhs), "rhs": complex(rhs), "residual": float(abs(lhs - rhs))}


def green_identity_probe(A, q, u, v, domain) -> float:
    """``|LHS - RHS|`` of the magnetic Green formula on ``domain``."""
    return green_identity_terms(A, q, u, v, domain)["residual"]


def h2_norm(u: np.ndarray, grid: Grid3) -> float:
    """Discrete ``H^2`` norm from central differences over interior nodes."""
    parts = [np.abs(u) ** 2]
    for j in range(3):
        dj = _d(u, grid, j)
        parts.append(np.abs(dj) ** 2)
        for m in range(3):
            parts.append(np.abs(_d(dj, grid, m)) ** 2)
    tot = sum(p[2:-2, 2:-2, 2:-2] for p in parts)
    return float(np.sqrt(np.sum(tot) * grid.cell_volume))


def smooth_random_field(grid: Grid3, seed: int, modes: int = 6, kmax: float = 3.0) -> np.ndarray:
    """Sum of a few seeded plane waves with wavenumbers up to ``kmax``."""
    rng = np.random.default_rng(seed)
    x = grid.mesh()
    out = np.zeros(grid.dims, complex)
    for _ in range(modes):
        kv = rng.uniform(-kmax, kmax, 3)
        c = rng.standard_normal() + 1j * rng.standard_normal()
        out += c * np.exp(1j * sum(kv[j] * x[j] for j in range(3)))
    return out / np.sqrt(modes)


def green_convergence_probe(ns: Sequence[int] = (32, 64), half_width: float = 1.0, seed: int = 0,
                            tol: float = 1e-3, min_order: float = 1.5) -> ProbeReport:
    """Green-formula residual on a smooth battery at several resolutions.

    The box ``[-0.7, 0.7]^3`` sits inside ``[-w, w]^3``; A is a real Gaussian and q a
    complex Gaussian. Passes when the finest relative residual is below ``tol``
    and the observed order is at least ``min_order``.
    """
    from .fields import make_potential

    dom = ((-0.7, 0.7),) * 3
    hs, rel = [], []
    for n in ns:
        g = Grid3.cube(n, half_width)
        A = make_potential("gaussian_bump", g, None, amplitude=(0.8, -0.5, 0.3), sigma=0.25, cutoff=1.0)
        q = make_potential("gaussian_bump", g, None, amplitude=3.0 - 1.0j, sigma=0.3, center=(0.1, 0, 0),
                           cutoff=1.0)
        u = ScalarField(g, smooth_random_field(g, seed))
        v = ScalarField(g, smooth_random_field(g, seed + 1))
        r = green_identity_probe(A, q, u, v, dom)
        hs.append(g.spacing[0])
        rel.append(r / (h2_norm(u.values, g) * h2_norm(v.values, g)))
    slope = loglog_slope(hs, rel) if len(hs) > 1 else float("nan")
    ok = rel[-1] < tol and (len(hs) < 2 or slope >= min_order)
    return ProbeReport("green_identity", hs, rel, slope if np.isfinite(slope) else 0.0, ok,
                       {"relative_residual": tol, "min_order": min_order}, {"seed": seed, "ns": list(ns)})


# ---------------------------------------------------------------- Carleman

def carleman_weight(grid: Grid3, alpha, weight: str = "linear", eps: float = 0.0):
    """``phi``, ``grad phi`` and ``Laplacian phi`` for the linear or convexified weight."""
    a = np.asarray(alpha, float)
    if abs(np.linalg.norm(a) - 1) > 1e-12:
        raise ValueError("alpha must be a unit vector")
    x = grid.mesh()
    s = sum(a[j] * x[j] for j in range(3))
    if weight == "linear":
        return s, np.stack([np.full(grid.dims, a[j]) for j in range(3)]), np.zeros(grid.dims)
    if weight == "convexified":
        if eps <= 0:
            raise ValueError("convexified weight needs eps > 0")
        fac = 1 + eps * s
        return s + 0.5 * eps * s * s, np.stack([fac * a[j] for j in range(3)]), np.full(grid.dims, eps)
    raise ValueError(f"unknown weight {weight!r}")


def conjugated_apply(A: np.ndarray, q: np.ndarray, u: np.ndarray, grid: Grid3, h: float, dphi, lap_phi) -> np.ndarray:
    """``h^2 e^{phi/h} L_{A,q} e^{-phi/h} u`` with spectral derivatives.

    Expanded as ``-h^2 Lap u + 2h grad phi.grad u + h Lap phi u - |grad phi|^2 u
    - 2i h^2 A.grad u + 2i h A.grad phi u + h^2 p u``, ``p = -i div A + A^2 + q``,
    so the exponential weights are never formed.
    """
    gu = np.stack([spectral_derivative(u, grid, j) for j in range(3)])
    lap = sum(spectral_derivative(u, grid, j, 2) for j in range(3))
    p = -1j * spectral_divergence(A.astype(complex), grid) + np.sum(A * A, 0) + q
    return (-h * h * lap + 2 * h * np.sum(dphi * gu, 0) + h * lap_phi * u - np.sum(dphi * dphi, 0) * u
            - 2j * h * h * np.sum(A * gu, 0) + 2j * h * np.sum(A * dphi, 0) * u + h * h * p * u)


def carleman_ratio(A, q, u: np.ndarray, grid: Grid3, h: float, dphi, lap_phi) -> float:
    """``||L_phi u|| / (h ||u||_{H^1_scl})`` with ``||u||^2_{H^1_scl} = ||u||^2 + ||h grad u||^2``."""
    Lu = conjugated_apply(A, q, u, grid, h, dphi, lap_phi)
    gu = np.stack([spectral_derivative(u, grid, j) for j in range(3)])
    nrm = np.sqrt(np.sum(np.abs(u) ** 2) + h * h * np.sum(np.abs(gu) ** 2))
    return float(np.sqrt(np.sum(np.abs(Lu) ** 2)) / (h * nrm))


def carleman_battery(grid: Grid3, alpha, seed: int = 0, n_bumps: int = 2, n_packets: int = 4,
                     width: float = 0.12, spread: float = 0.25, weight: str = "linear", eps: float = 0.0) -> list:
    """Seeded battery of Gaussian bumps and characteristic wave packets.

    Envelopes are ``exp(-|x - c|^2/(2 width^2))``; the caller keeps them negligible
    at the box faces. A packet ``envelope exp(i beta.x/h)`` has ``beta`` orthogonal to
    ``alpha`` with ``|beta| = |grad phi(c)|``, which puts it on the characteristic
    set of the conjugated symbol; these members attain the smallest ratios.
    Members are callables ``h -> array``.
    """
    rng = np.random.default_rng(seed)
    a = np.asarray(alpha, float)
    e1 = np.cross(a, [1.0, 0, 0] if abs(a[0]) < 0.9 else [0, 1.0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    x = grid.mesh()
    out = []
    for m in range(n_bumps + n_packets):
        c = rng.uniform(-spread, spread, 3)
        env = np.exp(-grid.radius(tuple(c)) ** 2 / (2 * width ** 2)).astype(complex)
        if m < n_bumps:
            out.append(lambda h, env=env: env)
            continue
        th = rng.uniform(0, 2 * np.pi)
        s = float(a @ c)
        mag = 1 + eps * s if weight == "convexified" else 1.0
        beta = mag * (np.cos(th) * e1 + np.sin(th) * e2)
        arg = sum(beta[j] * x[j] for j in range(3))
        out.append(lambda h, env=env, arg=arg: env * np.exp(1j * arg / h))
    return out


def carleman_probe(A: VectorField, q: ScalarField, alpha, u_battery: Sequence[Callable], h_ladder: Sequence[float],
                   weight: str = "linear", eps: float = 0.0, c0: float = 0.05, min_slope: float = -0.1,
                   cells: float = 4.0) -> ProbeReport:
    """Minimum Carleman ratio over a battery along an h ladder.

    ``fitted_slope`` is the slope of ``log min ratio`` against ``log(1/h)``, so a
    ratio that decays as h decreases has a negative slope. Passes when every
    minimum is at least ``c0`` and the slope is at least ``min_slope``.

    Raises
    ------
    ValueError
        If ``2 pi h`` is shorter than ``cells`` grid spacings (under-resolved
        conjugation oscillation).
    """
    grid = A.grid
    dx = max(grid.spacing)
    hs = [float(h) for h in h_ladder]
    for h in hs:
        if 2 * np.pi * h < cells * dx:
            raise ValueError(f"h = {h} under-resolves the conjugation oscillation (min {cells * dx / (2 * np.pi):.4g})")
    _, dphi, lap_phi = carleman_weight(grid, alpha, weight, eps)
    Av = np.real(A.values)
    qv = q.values
    table = np.array([[carleman_ratio(Av, qv, u(h), grid, h, dphi, lap_phi) for u in u_battery] for h in hs])
    mins = table.min(axis=1)
    slope = loglog_slope(1 / np.asarray(hs), mins) if len(hs) > 1 else 0.0
    ok = bool(mins.min() >= c0 and slope >= min_slope)
    name = "carleman_" + weight
    return ProbeReport(name, hs, mins, slope, ok, {"c0": c0, "min_slope": min_slope},
                       {"alpha": list(map(float, alpha)), "eps": eps, "ratios": table.tolist(),
                        "argmin": table.argmin(axis=1).tolist()})


# ---------------------------------------------------------------- Rellich

def sphere_integrals(u, radii: Sequence[float], center=(0.0, 0.0, 0.0), mesh=(24, 48)):
    """``int_{|x - c| = R} |u|^2 dS`` along ``radii``; radii whose sphere leaves the grid are dropped."""
    dirs, _, _, w = sphere_mesh(*mesh)
    c = np.asarray(center, float)
    if isinstance(u, ScalarField):
        f = FieldSampler(u)
        inside = f.inside
    else:
        f, inside = u, None
    kept, vals = [], []
    for R in radii:
        pts = c + R * dirs
        if inside is not None and not np.all(inside(pts)):
            continue
        kept.append(float(R))
        vals.append(float(np.sum(w * np.abs(f(pts)) ** 2) * R * R))
    return kept, vals


def rellich_probe(u, radii: Sequence[float], ball, grid: Optional[Grid3] = None, null_tol: float = 1e-12,
                  decay_slope: float = -1.0, out_tol: float = 1e-6, scale: float = 1.0) -> ProbeReport:
    """Rellich implication check: sphere norms trending to 0 imply smallness outside ``B``.

    A field is classified null when every sphere integral is below
    ``null_tol * scale**2``, or when the log-log slope of the integrals is below
    ``decay_slope`` and the last one is under 1% of the first. The probe passes
    unless a null-classified field has ``||u||`` outside ``B`` above
    ``out_tol * scale``. ``u`` is a ScalarField or a callable on points together
    with ``grid``.
    """
    kept, vals = sphere_integrals(u, radii, ball[0])
    if not kept:
        raise ValueError("no sphere of the radius ladder fits in the grid")
    vals_a = np.asarray(vals)
    tiny = bool(np.all(vals_a <= null_tol * scale ** 2))
    if tiny or np.any(vals_a <= 0):
        slope = 0.0
    else:
        slope = loglog_slope(kept, vals_a) if len(kept) > 1 else 0.0
    trending = len(kept) > 1 and slope < decay_slope and vals_a[-1] < 1e-2 * vals_a[0]
    null = tiny or trending
    if isinstance(u, ScalarField):
        g, uv = u.grid, u.values
    else:
        if grid is None:
            raise ValueError("callable fields need a grid for the outside norm")
        g, uv = grid, u(np.stack(grid.mesh(), -1))
    outside = g.radius(ball[0]) > ball[1]
    out_norm = float(np.sqrt(np.sum(np.abs(uv[outside]) ** 2) * g.cell_volume))
    ok = (not null) or out_norm <= out_tol * scale
    return ProbeReport("rellich", kept, vals, slope, ok,
                       {"null_tol": null_tol, "decay_slope": decay_slope, "out_tol": out_tol, "scale": scale},
                       {"null": bool(null), "outside_norm": out_norm, "dropped": len(radii) - len(kept)})


def _vals(f):
    return f.values if hasattr(f, "values") else np.asarray(f)
