"""Recovery of curl A and q from the integral identity.

Fourier samples use ``F[f](xi) = int f(x) exp(i x.xi) dx``. With this sign
``F[curl A] = -i xi x F[A]`` and ``f(x) = (2 pi)^-3 int F[f](xi) exp(-i x.xi) dxi``.

Two sampling modes exist:

* oracle: direct discrete transform of the known difference on the mirror grid;
* measurement: ``h -> 0`` limit of the pairing integral evaluated with reflected
  CGO factors built from each potential.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from . import cgo as C
from .config import get_threads
from .fields import Grid3, Scenario, ScalarField, VectorField, reflect_extend, spectral_curl, spectral_derivative
from .forward import check_gauge
from .io import write_field, write_json

DEFAULT_LADDER = (0.4, 0.28, 0.2, 0.14, 0.1)


# ---------------------------------------------------------------- pairs and quadrature

@dataclass
class ScenarioPair:
    """Two scenarios on the same half grid (last x3 layer is the plane)."""

    first: Scenario
    second: Scenario

    def __post_init__(self):
        g1, g2 = self.first.A.grid, self.second.A.grid
        if not g1.same_as(g2) or not g1.is_lower_half:
            raise ValueError("pair must share one half grid ending on x3 = 0")

    @property
    def half(self) -> Grid3:
        return self.first.A.grid

    @property
    def ball(self):
        return self.first.support_ball

    def extended(self):
        """Mirror-grid potentials ``(A1~, A2~, q1~, q2~)``."""
        out = []
        for s in (self.first, self.second):
            check_gauge(s.A)
            out.append((reflect_extend(s.A, ["even", "even", "odd"]).values.real,
                        reflect_extend(s.q, ["even"]).values))
        return out[0][0], out[1][0], out[0][1], out[1][1]


def half_ball_weights(half: Grid3, ball) -> np.ndarray:
    """Trapezoidal weights on ``B_- = B cap {x3 <= 0}``: ball mask, plane layer halved."""
    c, rad = ball
    w = (half.radius(c) <= rad).astype(float) * half.cell_volume
    w[..., -1] *= 0.5
    return w


def ball_weights(grid: Grid3, ball) -> np.ndarray:
    c, rad = ball
    return (grid.radius(c) <= rad).astype(float) * grid.cell_volume


def pairing_integral(u1, u2, A1, A2, q1, q2, ball, grad1=None, grad2=None, trace_tol: float = 1e-10) -> complex:
    """``int_{B-} i(A2 - A1).(grad u1 conj(u2) - u1 grad conj(u2)) + (A1^2 - A2^2 + q1 - q2) u1 conj(u2)``.

    ``u1`` and ``u2`` are arrays or fields on the half grid; gradients default to
    second-order differences. Reflected CGOs may be passed directly, in which
    case their exact gradients are used.

    Raises
    ------
    ValueError
        If either factor has a nonzero trace on the plane beyond ``trace_tol``.
    """
    def unpack(u, gr):
        if isinstance(u, C.ReflectedCGO):
            return u.values().values, u.gradient() if gr is None else gr, u.half
        grid = u.grid
        vals = u.values
        if gr is None:
            gr = np.stack(np.gradient(vals, *grid.spacing, edge_order=2))
        return vals, gr, grid

    v1, g1, grid = unpack(u1, grad1)
    v2, g2, _ = unpack(u2, grad2)
    for v, name in ((v1, "u1"), (v2, "u2")):
        scale = np.abs(v).max()
        if scale > 0 and np.abs(v[..., -1]).max() > trace_tol * scale:
            raise ValueError(f"{name} does not vanish on the plane")
    A1, A2 = np.real(_vals(A1)), np.real(_vals(A2))
    q1, q2 = _vals(q1), _vals(q2)
    w = half_ball_weights(grid, ball)
    c2 = np.conj(v2)
    cur = g1 * c2[None] - v1[None] * np.conj(g2)
    dA = A2 - A1
    integrand = 1j * np.sum(dA * cur, axis=0) + (np.sum(A1 * A1, 0) - np.sum(A2 * A2, 0) + q1 - q2) * v1 * c2
    return complex(np.sum(w * integrand))


def _vals(f):
    return f.values if hasattr(f, "values") else np.asarray(f)


# ---------------------------------------------------------------- dual grid and transforms

@dataclass(frozen=True)
class DualGrid:
    """Frequencies conjugate to a mirror grid, in FFT order."""

    grid: Grid3

    @property
    def xi(self) -> list:
        return self.grid.wavenumbers()

    def nodes(self) -> np.ndarray:
        k = np.meshgrid(*[2 * np.pi * sfft.fftfreq(n, d) for n, d in zip(self.grid.dims, self.grid.spacing)],
                        indexing="ij")
        return np.stack(k)

    def axis_mask(self) -> np.ndarray:
        """Nodes with ``xi1 = xi2 = 0``."""
        m = np.zeros(self.grid.dims, bool)
        m[0, 0, :] = True
        return m


def forward_transform(values: np.ndarray, grid: Grid3) -> np.ndarray:
    """``F[f](xi_m) = sum_n f(x_n) exp(i x_n.xi_m) dV`` on the dual grid (last three axes)."""
    n = int(np.prod(grid.dims))
    xi = grid.wavenumbers()
    shift = np.exp(1j * sum(o * k for o, k in zip(grid.origin, xi)))
    return shift * sfft.ifftn(values, axes=(-3, -2, -1), workers=get_threads()) * n * grid.cell_volume


def inverse_transform(samples: np.ndarray, grid: Grid3) -> np.ndarray:
    n = int(np.prod(grid.dims))
    xi = grid.wavenumbers()
    shift = np.exp(-1j * sum(o * k for o, k in zip(grid.origin, xi)))
    return sfft.fftn(samples * shift, axes=(-3, -2, -1), workers=get_threads()) / (n * grid.cell_volume)


def richardson(hs: Sequence[float], values: Sequence[complex], order: float = 1.0 / 3.0):
    """Two-point Richardson limit of ``values(h) = L + c h^order`` on the last two ladder points.

    Returns ``(limit, monotone)`` where ``monotone`` is False when successive
    differences do not shrink along the ladder.
    """
    hs = np.asarray(hs, float)
    v = np.asarray(values, complex)
    if v.size < 2:
        return complex(v[-1]), True
    d = np.abs(np.diff(v))
    monotone = bool(np.all(d[1:] <= d[:-1] * (1 + 1e-12))) if d.size > 1 else True
    a, b = hs[-2] ** order, hs[-1] ** order
    return complex((a * v[-1] - b * v[-2]) / (a - b)), monotone


# ---------------------------------------------------------------- sample sets

@dataclass
class FourierSampleSet:
    """Samples on a dual grid.

    For ``kind == "A"`` the stored values are the tangential components
    ``(gamma1.v, gamma2.v)`` of ``v = F[A2~ - A1~]`` with the special gamma pair
    of each node; ``xi x v`` only needs these. For ``kind == "q"`` the values are
    ``F[q1~ - q2~]``.
    """

    dual: DualGrid
    kind: str
    values: np.ndarray
    excluded_axis_mask: np.ndarray
    flagged: np.ndarray
    mode: str
    meta: dict = field(default_factory=dict)

    @property
    def xi_nodes(self) -> np.ndarray:
        return self.dual.nodes().reshape(3, -1).T

    @property
    def valid(self) -> np.ndarray:
        return ~(self.excluded_axis_mask | self.flagged)

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.sum() / (~self.excluded_axis_mask).sum())

    def coverage(self) -> float:
        return float(self.valid.mean())

    def scaled(self, alpha: complex) -> "FourierSampleSet":
        return FourierSampleSet(self.dual, self.kind, alpha * self.values, self.excluded_axis_mask,
                                self.flagged, self.mode, dict(self.meta))


def special_frames(dual: DualGrid):
    """``gamma1, gamma2`` (sign +1) at every dual node; zero on the x3-axis."""
    xi = dual.nodes()
    lat = np.hypot(xi[0], xi[1])
    nrm = np.sqrt(np.sum(xi ** 2, 0))
    safe = np.where(lat > 0, lat, 1.0)
    g1 = np.stack([-xi[1] / safe, xi[0] / safe, np.zeros_like(lat)])
    g1[:, lat == 0] = 0.0
    xh = xi / np.where(nrm > 0, nrm, 1.0)
    g2 = np.cross(xh, g1, axis=0)
    return g1, g2


def sample_A_oracle(pair: ScenarioPair) -> FourierSampleSet:
    """Direct transform of ``(A2~ - A1~) chi_B`` on the mirror grid, projected on the gamma frame."""
    A1, A2, _, _ = pair.extended()
    grid = pair.half.mirror()
    w = ball_weights(grid, pair.ball) / grid.cell_volume
    v = forward_transform((A2 - A1) * w, grid)
    dual = DualGrid(grid)
    g1, g2 = special_frames(dual)
    vals = np.stack([np.sum(g1 * v, 0), np.sum(g2 * v, 0)])
    mask = dual.axis_mask()
    vals[:, mask] = 0.0
    return FourierSampleSet(dual, "A", vals, mask, np.zeros_like(mask), "oracle", {"full": v})


def fourier_sample_A(pair: ScenarioPair, xi, mode: str = "oracle", ladder: Sequence[float] = DEFAULT_LADDER,
                     order: Optional[float] = None, sign: int = 1, remainder: bool = False) -> dict:
    """One tangential sample ``(gamma1 + i sign gamma2).F[(A2~ - A1~) chi](xi)``.

    Measurement mode evaluates ``h pairing / (2i)`` with reflected CGO pairs along
    ``ladder``. With ``order=None`` the finest rung is the estimate, otherwise
    the last two rungs are Richardson-extrapolated with that rate. The result
    carries the ladder values and a ``flagged`` entry for non-monotone sequences.
    """
    xi = np.asarray(xi, float)
    if np.hypot(xi[0], xi[1]) == 0:
        raise ValueError("xi on the x3-axis is excluded")
    g1, g2 = C.special_gammas(xi, sign)
    w = g1 + 1j * g2
    A1, A2, q1, q2 = pair.extended()
    grid = pair.half.mirror()
    x = grid.mesh()
    ph = np.exp(1j * sum(x[j] * xi[j] for j in range(3)))
    wts = ball_weights(grid, pair.ball)
    oracle = complex(np.sum(wts * ph * np.einsum("j,j...->...", w, A2 - A1)))
    if mode == "oracle":
        return {"value": oracle, "oracle": oracle, "flagged": False}
    if mode != "measurement":
        raise ValueError(f"unknown mode {mode!r}")
    s1 = Scenario(pair.first.k, VectorField(grid, A1), ScalarField(grid, q1), pair.ball,
                  pair.first.gamma1_patch, pair.first.gamma2_patch)
    s2 = Scenario(pair.second.k, VectorField(grid, A2), ScalarField(grid, q2), pair.ball,
                  pair.second.gamma1_patch, pair.second.gamma2_patch)
    dom = grid.radius(pair.ball[0]) <= pair.ball[1]
    half = pair.half
    vals = []
    for h in ladder:
        spec = C.make_zeta_pair(h, xi, g1, g2)
        u1 = C.ReflectedCGO(C.make_cgo(s1, spec, 1, domain=dom), half)
        u2 = C.ReflectedCGO(C.make_cgo(s2, spec, 2, domain=dom), half)
        if remainder:
            C.solve_remainder(u1.solution, s1, domain=dom)
            C.solve_remainder(u2.solution, s2, domain=dom)
        p = pairing_integral(u1, u2, pair.first.A.values.real, pair.second.A.values.real,
                             pair.first.q.values, pair.second.q.values, pair.ball, trace_tol=1e-8)
        vals.append(h * p / 2j)
    lim, mono = richardson(ladder, vals, 1.0 if order is None else order)
    if order is None:
        lim = complex(vals[-1])
    return {"value": lim, "oracle": oracle, "ladder": list(ladder), "values": vals, "flagged": not mono}


# ---------------------------------------------------------------- curl

def _fill_axis(c: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill invalid nodes with the mean of valid transverse neighbours (xi1 +- 1, xi2 +- 1)."""
    out = c.copy()
    for idx in zip(*np.nonzero(~valid)):
        i, j, k = idx
        acc, cnt = 0.0, 0
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ii, jj = (i + di) % valid.shape[0], (j + dj) % valid.shape[1]
            if valid[ii, jj, k]:
                acc = acc + c[..., ii, jj, k]
                cnt += 1
        out[..., i, j, k] = acc / cnt if cnt else 0.0
    return out


def recover_curl(samples: FourierSampleSet, min_coverage: float = 0.9):
    """Inverse transform of ``-i xi x v`` with the x3-axis line filled by interpolation.

    Returns ``(VectorField, info)``; ``info["axis_fill_error"]`` is set when the
    sample set carries full oracle vectors.
    """
    if samples.kind != "A":
        raise ValueError("recover_curl needs A samples")
    cov = samples.coverage()
    if cov < min_coverage:
        raise ValueError(f"sample coverage {cov:.3f} below {min_coverage}")
    dual = samples.dual
    xi = dual.nodes()
    g1, g2 = special_frames(dual)
    vt = g1 * samples.values[0][None] + g2 * samples.values[1][None]
    ct = -1j * np.cross(xi, vt, axis=0)
    valid = samples.valid
    ct = _fill_axis(ct, valid)
    info = {"coverage": cov, "axis_fill_error": None}
    full = samples.meta.get("full")
    if full is not None:
        truth = -1j * np.cross(xi, full, axis=0)
        m = ~valid
        den = np.linalg.norm(truth)
        info["axis_fill_error"] = float(np.linalg.norm((ct - truth)[:, m]) / den) if den > 0 else 0.0
    curl = inverse_transform(ct, dual.grid)
    return VectorField(dual.grid, curl), info


def curl_truth(pair: ScenarioPair) -> np.ndarray:
    A1, A2, _, _ = pair.extended()
    return spectral_curl((A2 - A1).astype(complex), pair.half.mirror())


# ---------------------------------------------------------------- gauge alignment

def gauge_align(A1: VectorField, A2: VectorField, ball, curl_tol: float = 1e-3, fit_tol: float = 1e-3) -> ScalarField:
    """``psi`` with ``grad psi = A1 - A2``, zero outside ``B``.

    Solves ``Delta psi = div(A1 - A2)`` spectrally on the box, removes the constant
    seen outside the ball and zeroes ``psi`` there.

    Raises
    ------
    ValueError
        If ``||curl(A1 - A2)||`` exceeds ``curl_tol`` times the norm of the full
        Jacobian of ``A1 - A2``, or if the fitted gradient misses by more than ``fit_tol``.
    """
    grid = A1.grid
    D = np.real(A1.values - A2.values)
    nD = np.linalg.norm(D)
    if nD == 0:
        return ScalarField(grid, np.zeros(grid.dims))
    c, rad = ball
    curl = np.real(spectral_curl(D.astype(complex), grid))
    jac = np.sqrt(sum(np.linalg.norm(np.real(spectral_derivative(D[j], grid, i))) ** 2
                      for i in range(3) for j in range(3)))
    rel = np.linalg.norm(curl) / jac
    if rel > curl_tol:
        raise ValueError(f"curl certification failed ({rel:.2e}); A1 - A2 is not a gradient")
    s = grid.wavenumbers()
    Dh = sfft.fftn(D, axes=(1, 2, 3), workers=get_threads())
    s2 = s[0] ** 2 + s[1] ** 2 + s[2] ** 2
    num = sum(1j * s[j] * Dh[j] for j in range(3))
    psih = np.where(s2 > 0, -num / np.where(s2 > 0, s2, 1.0), 0.0)
    psi = np.real(sfft.ifftn(psih, workers=get_threads()))
    outside = grid.radius(c) > rad
    if outside.any():
        psi -= psi[outside].mean()
        psi[outside] = 0.0
    grad = np.real(np.stack([sfft.ifftn(1j * s[j] * sfft.fftn(psi)) for j in range(3)]))
    fit = np.linalg.norm(grad - D) / nD
    if fit > fit_tol:
        raise ValueError(f"gauge fit residual {fit:.2e} above {fit_tol}")
    return ScalarField(grid, psi.astype(complex), rad, tuple(c))


# ---------------------------------------------------------------- q

def q_truth(pair: ScenarioPair) -> np.ndarray:
    _, _, q1, q2 = pair.extended()
    return q1 - q2


def sample_q_oracle(pair: ScenarioPair) -> FourierSampleSet:
    grid = pair.half.mirror()
    w = ball_weights(grid, pair.ball) / grid.cell_volume
    dual = DualGrid(grid)
    v = forward_transform(q_truth(pair) * w, grid)
    mask = dual.axis_mask()
    full = v.copy()
    v[mask] = 0.0
    return FourierSampleSet(dual, "q", v, mask, np.zeros_like(mask), "oracle", {"full": full})


def cross_eta(h, xi_norm, g23):
    """x3 frequency ``(2/h) sqrt(1 - h^2|xi|^2/4) gamma2_3`` of the reflected cross terms."""
    return 2.0 / h * np.sqrt(1.0 - h * h * xi_norm ** 2 / 4.0) * g23


def q_ladders(dual: DualGrid, ladder: Sequence[float] = DEFAULT_LADDER, cells: float = 2.5) -> np.ndarray:
    """Per-node h ladders, scaled so the finest rung resolves the cross-term oscillation.

    The rung ``h_j`` is chosen so that the cross frequency equals
    ``eta_max min(ladder)/ladder_j`` with ``eta_max = 2 pi/(cells dx3)``. The
    returned array has shape ``(len(ladder),) + dims``; axis nodes hold NaN.
    """
    xi = dual.nodes()
    nrm = np.sqrt(np.sum(xi ** 2, 0))
    lat = np.hypot(xi[0], xi[1])
    g23 = np.where(nrm > 0, lat / np.where(nrm > 0, nrm, 1.0), 0.0)
    eta_max = 2 * np.pi / (cells * dual.grid.spacing[2])
    out = []
    lad = np.asarray(ladder, float)
    for l in lad:
        eta = eta_max * lad.min() / l
        with np.errstate(divide="ignore", invalid="ignore"):
            h = 2.0 / np.sqrt((eta / np.where(g23 > 0, g23, np.nan)) ** 2 + nrm ** 2)
        out.append(h)
    return np.stack(out)


def q_pairing_fast(pair: ScenarioPair, hs: np.ndarray) -> np.ndarray:
    """q-pairings with amplitude-level reflected CGOs for a pair with zero common ``A``.

    With ``A1 = A2 = 0`` the amplitudes are 1 and
    ``u1 conj(u2) = e^{i x.xi} + e^{i x~.xi} - e^{i(x'.xi' + eta x3)} - e^{i(x'.xi' - eta x3)}``
    exactly, so the pairing over ``B-`` is a sum of per-layer 2D transforms. ``hs``
    holds one ``h`` per dual node (NaN on the axis).
    """
    A1, A2, _, _ = pair.extended()
    if np.any(A1) or np.any(A2):
        raise ValueError("fast q pairing needs zero common A; use q_pairing_slow")
    half = pair.half
    grid = half.mirror()
    dq = (pair.first.q.values - pair.second.q.values) * half_ball_weights(half, pair.ball)
    n1, n2, m = half.dims
    x3 = half.axes()[2]
    # per-layer lateral transforms on the dual lateral frequencies
    xi = grid.wavenumbers()
    sh = np.exp(1j * (half.origin[0] * xi[0][..., 0] + half.origin[1] * xi[1][..., 0]))
    lay = sh[..., None] * sfft.ifft2(dq, axes=(0, 1), workers=get_threads()) * (n1 * n2)
    xi3 = xi[2][0, 0, :]
    main = np.einsum("abk,kc->abc", lay, 2 * np.cos(np.outer(x3, xi3)))
    nodes = DualGrid(grid).nodes()
    nrm = np.sqrt(np.sum(nodes ** 2, 0))
    lat = np.hypot(nodes[0], nodes[1])
    g23 = np.where(nrm > 0, lat / np.where(nrm > 0, nrm, 1.0), 0.0)
    eta = cross_eta(hs, nrm, g23)
    ok = np.isfinite(eta)
    eta = np.where(ok, eta, 0.0)
    cross = np.zeros(grid.dims, complex)
    for kk in range(m):
        cross += lay[:, :, kk, None] * (2 * np.cos(eta * x3[kk]))
    out = main - cross
    out[~ok] = np.nan
    return out


def q_pairing_slow(pair: ScenarioPair, xi, h: float, common_A: Optional[np.ndarray] = None) -> complex:
    """One q-pairing by building the reflected CGO pair on the mirror grid.

    ``common_A`` (mirror grid, defaults to ``A1~``) is used for both factors, with
    ``g = exp(-(Phi1 + conj(Phi2)))`` on the first one.
    """
    xi = np.asarray(xi, float)
    g1, g2 = C.special_gammas(xi)
    spec = C.make_zeta_pair(h, xi, g1, g2)
    A1, A2, q1, q2 = pair.extended()
    grid = pair.half.mirror()
    A = A1 if common_A is None else common_A
    s1 = Scenario(pair.first.k, VectorField(grid, A), ScalarField(grid, q1), pair.ball, (0, 1, 0, 1), (0, 1, 0, 1))
    s2 = Scenario(pair.second.k, VectorField(grid, A), ScalarField(grid, q2), pair.ball, (0, 1, 0, 1), (0, 1, 0, 1))
    t1 = C.solve_transport(s1.A, spec, which=1)
    t2 = C.solve_transport(s2.A, spec, which=2)
    log_g = -(t1.phi + t2.phi.conj())
    sol1 = C.build_amplitude(spec, t1, s1, log_g, 1)
    sol2 = C.build_amplitude(spec, t2, s2, None, 2)
    u1 = C.ReflectedCGO(sol1, pair.half)
    u2 = C.ReflectedCGO(sol2, pair.half)
    Ah = A[..., : pair.half.dims[2]]
    return pairing_integral(u1, u2, Ah, Ah, pair.first.q.values, pair.second.q.values, pair.ball, trace_tol=1e-8)


def sample_q_measurement(pair: ScenarioPair, ladder: Sequence[float] = DEFAULT_LADDER, order: Optional[float] = None,
                         cells: float = 2.5, flag_tol: float = 1e-3) -> FourierSampleSet:
    """``F[q1~ - q2~]`` on the dual grid from the q-pairing ladder.

    With ``order=None`` the finest rung is returned: the remainder-free pairing
    differs from the limit only by cross terms that decay faster than any power
    of h, so a power-law extrapolation amplifies them. A numeric ``order``
    applies two-rung Richardson extrapolation with that rate.
    A node is flagged when its ladder differences do not shrink monotonically
    and the last difference still exceeds ``flag_tol`` times the largest sample.
    """
    dual = DualGrid(pair.half.mirror())
    hs = q_ladders(dual, ladder, cells)
    vals = np.stack([q_pairing_fast(pair, h) for h in hs])
    mask = dual.axis_mask()
    with np.errstate(invalid="ignore"):
        if order is None:
            lim = vals[-1].copy()
        else:
            a, b = hs[-2] ** order, hs[-1] ** order
            lim = (a * vals[-1] - b * vals[-2]) / (a - b)
        d = np.abs(np.diff(vals, axis=0))
        mono = np.all(d[1:] <= d[:-1] * (1 + 1e-12), axis=0)
    scale = np.nanmax(np.abs(vals[-1]))
    flagged = ~mono & (d[-1] > flag_tol * scale) & ~mask
    lim[mask] = 0.0
    return FourierSampleSet(dual, "q", lim, mask, flagged, "measurement",
                            {"ladder_last": vals[-1], "h_min": float(np.nanmin(hs)), "order": order})


def recover_q(samples: FourierSampleSet, max_flagged: float = 0.1):
    """Inverse transform of q samples with the axis line filled; returns ``(ScalarField, info)``."""
    if samples.kind != "q":
        raise ValueError("recover_q needs q samples")
    if samples.flagged_fraction > max_flagged:
        raise ValueError(f"{samples.flagged_fraction:.1%} of samples flagged (limit {max_flagged:.0%})")
    valid = samples.valid
    v = _fill_axis(samples.values[None], valid)[0]
    info = {"flagged_fraction": samples.flagged_fraction, "axis_fill_error": None}
    full = samples.meta.get("full")
    if full is not None:
        m = ~valid
        den = np.linalg.norm(full)
        info["axis_fill_error"] = float(np.linalg.norm((v - full)[m]) / den) if den > 0 else 0.0
    return ScalarField(samples.dual.grid, inverse_transform(v, samples.dual.grid)), info


# ---------------------------------------------------------------- pipeline

@dataclass
class ReconResult:
    curl_field: VectorField
    q_field: Optional[ScalarField]
    rel_err_curl: float
    rel_err_q: Optional[float]
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"rel_err_curl": self.rel_err_curl, "rel_err_q": self.rel_err_q}
        out.update(self.metrics)
        return out

    def write(self, outdir) -> dict:
        from pathlib import Path
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_field(out / "curl.msf", self.curl_field)
        if self.q_field is not None:
            write_field(out / "q.msf", self.q_field)
        js = self.to_json()
        write_json(out / "recon_metrics.json", js)
        return js


def rel_l2(got: np.ndarray, truth: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    w = 1.0 if weights is None else weights
    den = np.sqrt(np.sum(w * np.abs(truth) ** 2))
    num = np.sqrt(np.sum(w * np.abs(got - truth) ** 2))
    return float(num / den) if den > 0 else float(num)


def align_pair(pair: ScenarioPair) -> tuple:
    """Gauge-align the second scenario onto the first; returns ``(aligned_pair, psi)`` on the half grid."""
    A1, A2 = pair.first.A, pair.second.A
    psi = gauge_align(VectorField(A1.grid, A1.values.real), VectorField(A2.grid, A2.values.real), pair.ball)
    s2 = pair.second
    aligned = Scenario(s2.k, VectorField(A1.grid, A1.values.real.copy()), s2.q, s2.support_ball,
                       s2.gamma1_patch, s2.gamma2_patch, dict(s2.meta))
    return ScenarioPair(pair.first, aligned), psi


def reconstruct(pair: ScenarioPair, mode: str = "oracle", ladder: Sequence[float] = DEFAULT_LADDER,
                order: Optional[float] = None) -> ReconResult:
    """Curl from oracle A samples; q from ``mode`` samples after gauge alignment.

    When the curls differ, alignment fails and the q step is skipped
    (``q_field`` and ``rel_err_q`` are None, ``metrics["q_status"]`` says why).

    Curl samples always come from oracle mode: measurement-mode A samples need a
    full CGO build per node and are exposed per node through
    :func:`fourier_sample_A`.
    """
    grid = pair.half.mirror()
    wB = ball_weights(grid, pair.ball)
    sa = sample_A_oracle(pair)
    curl, cinfo = recover_curl(sa)
    truth_c = curl_truth(pair)
    mB = wB[None] > 0
    num = np.linalg.norm((curl.values - truth_c) * mB)
    den = np.linalg.norm(truth_c * mB)
    rel_c = float(num / den) if den > 0 else float(np.linalg.norm(curl.values * mB))
    A1e, A2e, _, _ = pair.extended()
    dA = np.linalg.norm((A2e - A1e) * mB)
    null_ratio = float(np.linalg.norm(curl.values * mB) * pair.ball[1] / dA) if dA > 0 else 0.0
    metrics = {"mode": mode, "axis_fill_error": cinfo["axis_fill_error"], "coverage": cinfo["coverage"],
               "curl_null_ratio": null_ratio,
               "dual_dims": list(grid.dims), "flagged_fraction": None, "q_axis_fill_error": None}
    try:
        aligned, psi = align_pair(pair)
    except ValueError as e:
        # different curls: the q step has no aligned pair to work on
        metrics["q_status"] = f"skipped: {e}"
        return ReconResult(curl, None, rel_c, None, metrics)
    sq = sample_q_oracle(aligned) if mode == "oracle" else sample_q_measurement(aligned, ladder, order)
    qf, qinfo = recover_q(sq)
    rel_q = rel_l2(qf.values, q_truth(aligned), wB)
    metrics.update({"q_status": "recovered", "flagged_fraction": qinfo["flagged_fraction"],
                    "q_axis_fill_error": qinfo["axis_fill_error"]})
    return ReconResult(curl, qf, rel_c, rel_q, metrics)
