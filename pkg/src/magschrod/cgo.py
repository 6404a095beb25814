"""Complex geometrical optics (CGO) solutions.

A CGO solution of ``(L_{A,q} - k^2) u = 0`` has the form
``u = exp(x.zeta / h) (a + r)`` with ``zeta.zeta = 0``. The amplitude is
``a = g exp(Phi)`` where ``Phi`` solves the transport equation
``zeta0.grad Phi = -i zeta0.A_sharp`` for the mollified potential
``A_sharp = A * psi_eps`` with ``eps = h^(1/3)``, and ``r`` is a small remainder.

Amplitudes are carried in logarithmic form (value, gradient, Laplacian), so
derivatives of ``a`` are exact products instead of differentiated exponentials.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import j0

from .config import get_threads
from .fields import Grid3, Scenario, ScalarField, VectorField, mollify, spectral_divergence, spectral_gradient
from .io import write_field, write_json


# ---------------------------------------------------------------- zeta pairs

@dataclass(frozen=True)
class CGOSpec:
    """Frequencies of one CGO pair sharing ``(h, xi, gamma1, gamma2)``."""

    h: float
    xi: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    epsilon: float

    @property
    def root(self) -> float:
        return float(np.sqrt(1.0 - self.h ** 2 * np.dot(self.xi, self.xi) / 4.0))

    def zeta(self, which: int) -> np.ndarray:
        return self.zeta1 if which == 1 else self.zeta2

    def zeta0(self, which: int) -> np.ndarray:
        """``h -> 0`` limit: ``gamma1 + i gamma2`` or ``-gamma1 + i gamma2``."""
        s = 1.0 if which == 1 else -1.0
        return s * self.gamma1 + 1j * self.gamma2

    def cross_frequency(self) -> float:
        """Third component ``(2/h) sqrt(1 - h^2|xi|^2/4) gamma2_3`` of the reflected cross terms."""
        return 2.0 / self.h * self.root * self.gamma2[2]

    def same_family(self, other: "CGOSpec") -> bool:
        return (self.h == other.h and np.array_equal(self.xi, other.xi)
                and np.array_equal(self.gamma1, other.gamma1) and np.array_equal(self.gamma2, other.gamma2))


def make_zeta_pair(h: float, xi, gamma1, gamma2, tol: float = 1e-10) -> CGOSpec:
    """``zeta1 = i h xi/2 + gamma1 + i s gamma2``, ``zeta2 = -i h xi/2 - gamma1 + i s gamma2``.

    ``s = sqrt(1 - h^2 |xi|^2 / 4)``. Both are isotropic and
    ``(zeta1 + conj(zeta2)) / h = i xi``.
    """
    xi = np.asarray(xi, float)
    g1 = np.asarray(gamma1, float)
    g2 = np.asarray(gamma2, float)
    if h <= 0:
        raise ValueError("h must be positive")
    for v, name in ((g1, "gamma1"), (g2, "gamma2")):
        if abs(np.linalg.norm(v) - 1.0) > tol:
            raise ValueError(f"{name} must be a unit vector")
    for a, b in ((g1, g2), (g1, xi), (g2, xi)):
        if abs(np.dot(a, b)) > tol * max(1.0, np.linalg.norm(b)):
            raise ValueError("gamma1, gamma2, xi must be pairwise orthogonal")
    if h * np.linalg.norm(xi) >= 2.0:
        raise ValueError("h |xi| must be below 2")
    s = np.sqrt(1.0 - h * h * np.dot(xi, xi) / 4.0)
    z1 = 0.5j * h * xi + g1 + 1j * s * g2
    z2 = -0.5j * h * xi - g1 + 1j * s * g2
    return CGOSpec(float(h), xi, g1, g2, z1, z2, float(h) ** (1.0 / 3.0))


def special_gammas(xi, sign: int = 1):
    """``gamma1 = (-xi2, xi1, 0)/|xi'|`` and ``gamma2 = sign * (xi/|xi|) x gamma1``.

    Then ``gamma1_3 = 0`` and ``gamma2_3 = sign |xi'| / |xi| != 0``. Frequencies on
    the x3-axis have no such pair.
    """
    xi = np.asarray(xi, float)
    lat = np.hypot(xi[0], xi[1])
    if lat == 0:
        raise ValueError("xi on the x3-axis has no admissible gamma pair")
    g1 = np.array([-xi[1], xi[0], 0.0]) / lat
    g2 = sign * np.cross(xi / np.linalg.norm(xi), g1)
    return g1, g2


# ---------------------------------------------------------------- Cauchy transform

def cauchy_multiplier(s1: np.ndarray, s2: np.ndarray, L: float) -> np.ndarray:
    """Fourier transform of ``1/(pi z)`` truncated to ``|z| < L``.

    ``-2i (1 - J0(rho L)) / (s1 + i s2)``, which tends to 0 at the origin.
    """
    den = s1 + 1j * s2
    rho = np.abs(den)
    out = np.zeros(np.broadcast(s1, s2).shape, complex)
    nz = rho > 0
    out[nz] = -2j * (1.0 - j0(rho[nz] * L)) / den[nz]
    return out


def _freqs(n: int, h: float, odd_order: bool = True) -> np.ndarray:
    k = 2 * np.pi * sfft.fftfreq(n, h)
    if odd_order and n % 2 == 0:
        k[n // 2] = 0.0
    return k


def cauchy_transform(f2d: np.ndarray, spacing, truncation: Optional[float] = None) -> np.ndarray:
    """``N^{-1} f (x) = (1/pi) int f(x - s) / (s1 + i s2) ds`` on a 2D grid.

    The kernel is truncated beyond the grid diagonal and the convolution is done
    by FFT on a zero-padded grid, so the result is exact convolution for band
    limited data and ``d_zbar N^{-1} f = f`` inside the grid.

    Raises
    ------
    ValueError
        If ``f`` does not vanish on the outer ring of the grid.
    """
    f = np.asarray(f2d, complex)
    edge = np.concatenate([f[0], f[-1], f[:, 0], f[:, -1]])
    scale = np.abs(f).max()
    if scale == 0:
        return np.zeros_like(f)
    if np.abs(edge).max() > 1e-12 * scale:
        raise ValueError("insufficient padding: data must vanish on the grid boundary")
    n1, n2 = f.shape
    h1, h2 = spacing
    ext = np.array([(n1 - 1) * h1, (n2 - 1) * h2])
    L = 1.0001 * float(np.hypot(*ext)) if truncation is None else float(truncation)
    m1 = sfft.next_fast_len(int(np.ceil((ext[0] + L) / h1)) + 2)
    m2 = sfft.next_fast_len(int(np.ceil((ext[1] + L) / h2)) + 2)
    s1 = _freqs(m1, h1)[:, None]
    s2 = _freqs(m2, h2)[None, :]
    mult = cauchy_multiplier(s1, s2, L)
    big = sfft.ifft2(mult * sfft.fft2(f, s=(m1, m2), workers=get_threads()), workers=get_threads())
    return big[:n1, :n2]


def dbar(u: np.ndarray, spacing) -> np.ndarray:
    """Fourth-order central ``(d1 + i d2)/2``; two boundary rows are left as NaN."""
    def d(a, h, ax):
        out = np.full(a.shape, np.nan + 0j)
        sl = lambda s: tuple(slice(None) if i != ax else s for i in range(2))
        out[sl(slice(2, -2))] = (-a[sl(slice(4, None))] + 8 * a[sl(slice(3, -1))]
                                 - 8 * a[sl(slice(1, -3))] + a[sl(slice(0, -4))]) / (12 * h)
        return out
    return 0.5 * (d(u, spacing[0], 0) + 1j * d(u, spacing[1], 1))


# ---------------------------------------------------------------- transport

@dataclass
class LogField:
    """A complex field ``L`` with its gradient and Laplacian; stands for ``exp(L)``."""

    grid: Grid3
    value: np.ndarray
    grad: np.ndarray
    lap: np.ndarray

    @classmethod
    def zero(cls, grid: Grid3) -> "LogField":
        z = np.zeros(grid.dims, complex)
        return cls(grid, z, np.zeros((3,) + grid.dims, complex), z.copy())

    def __add__(self, other: "LogField") -> "LogField":
        return LogField(self.grid, self.value + other.value, self.grad + other.grad, self.lap + other.lap)

    def __neg__(self) -> "LogField":
        return LogField(self.grid, -self.value, -self.grad, -self.lap)

    def conj(self) -> "LogField":
        return LogField(self.grid, np.conj(self.value), np.conj(self.grad), np.conj(self.lap))

    def exp(self) -> np.ndarray:
        return np.exp(self.value)


@dataclass
class Transport:
    """Solution ``Phi`` of ``zeta0.grad Phi = -i zeta0.A_used``."""

    phi: LogField
    zeta0: np.ndarray
    A_used: np.ndarray
    epsilon: Optional[float]
    truncation: float

    @property
    def Phi(self) -> ScalarField:
        return ScalarField(self.phi.grid, self.phi.value)

    def residual(self) -> float:
        """``max |zeta0.grad Phi + i zeta0.A_used|`` relative to ``max |A_used|``."""
        r = np.einsum("j,j...->...", self.zeta0, self.phi.grad) + 1j * np.einsum("j,j...->...", self.zeta0, self.A_used)
        return float(np.abs(r).max() / max(np.abs(self.A_used).max(), 1e-300))


def frame_dbar_solve(rhs: np.ndarray, grid: Grid3, zeta0) -> tuple:
    """Solve ``zeta0.grad Phi = rhs`` with the decaying (Cauchy) normalization.

    ``zeta0 = alpha + i beta`` with orthonormal real ``alpha, beta``. In the
    frame ``z = x.alpha + i x.beta`` the operator is ``2 d_zbar``, so
    ``Phi = N^{-1}(rhs / 2)`` slice by slice. The slices are handled all at once
    by a 3D FFT whose multiplier depends on ``(s.alpha, s.beta)`` only.

    Returns ``(LogField, truncation)``.
    """
    zeta0 = np.asarray(zeta0, complex)
    alpha, beta = zeta0.real, zeta0.imag
    h = np.array(grid.spacing)
    n = np.array(grid.dims)
    ext = (n - 1) * h
    L = 1.0001 * float(np.linalg.norm(ext))
    m = [sfft.next_fast_len(int(np.ceil((e + L) / hj)) + 2) for e, hj in zip(ext, h)]
    s = [_freqs(mj, hj).reshape([-1 if i == j else 1 for i in range(3)]) for j, (mj, hj) in enumerate(zip(m, h))]
    sa = sum(alpha[j] * s[j] for j in range(3))
    sb = sum(beta[j] * s[j] for j in range(3))
    mult = 0.5 * cauchy_multiplier(sa, sb, L)
    w = get_threads()
    ph = mult * sfft.fftn(np.asarray(rhs, complex), s=m, workers=w)
    crop = tuple(slice(0, k) for k in n)
    val = sfft.ifftn(ph, workers=w)[crop]
    grad = np.stack([sfft.ifftn(1j * s[j] * ph, workers=w)[crop] for j in range(3)])
    s2 = [(2 * np.pi * sfft.fftfreq(mj, hj)).reshape([-1 if i == j else 1 for i in range(3)]) ** 2
          for j, (mj, hj) in enumerate(zip(m, h))]
    lap = sfft.ifftn(-(s2[0] + s2[1] + s2[2]) * ph, workers=w)[crop]
    return LogField(grid, val, grad, lap), L


def solve_transport(A: VectorField, spec: CGOSpec, use_mollified: bool = True, which: int = 1) -> Transport:
    """``Phi`` (mollified, ``eps = h^(1/3)``) or ``Phi0`` (``use_mollified=False``).

    ``which`` selects ``zeta1`` (1) or ``zeta2`` (2).
    """
    zeta0 = spec.zeta0(which)
    Av = np.real(A.values)
    eps = None
    if use_mollified:
        eps = spec.epsilon
        Av = np.real(mollify(VectorField(A.grid, Av), eps)[0].values)
    if not np.any(Av):
        return Transport(LogField.zero(A.grid), zeta0, Av, eps, 0.0)
    rhs = -1j * np.einsum("j,j...->...", zeta0, Av)
    phi, L = frame_dbar_solve(rhs, A.grid, zeta0)
    return Transport(phi, zeta0, Av, eps, L)


# ---------------------------------------------------------------- amplitudes

@dataclass
class CGOSolution:
    """``u = exp(x.zeta/h) m`` with ``m = a (+ r)`` and ``a = g exp(Phi)``."""

    spec: CGOSpec
    which: int
    log_a: LogField
    transport: Transport
    residual_sup: float
    log_g: Optional[LogField] = None
    remainder: Optional[ScalarField] = None
    remainder_norm: Optional[float] = None
    transport0: Optional[Transport] = None
    meta: dict = field(default_factory=dict)

    @property
    def zeta(self) -> np.ndarray:
        return self.spec.zeta(self.which)

    @property
    def grid(self) -> Grid3:
        return self.log_a.grid

    @property
    def amplitude(self) -> ScalarField:
        return ScalarField(self.grid, self.log_a.exp())

    @property
    def Phi(self) -> ScalarField:
        return self.transport.Phi

    @property
    def Phi0(self) -> Optional[ScalarField]:
        return None if self.transport0 is None else self.transport0.Phi

    def factor(self, with_remainder: bool = True):
        """``m`` and ``grad m`` (without the exponential weight)."""
        a = self.log_a.exp()
        m = a.copy()
        gm = a * self.log_a.grad
        if with_remainder and self.remainder is not None:
            r = self.remainder.values
            m = m + r
            gm = gm + spectral_gradient(r, self.grid)
        return m, gm

    def phase(self) -> np.ndarray:
        x = self.grid.mesh()
        return sum(x[j] * self.zeta[j] for j in range(3)) / self.spec.h


def _potential_terms(scenario: Scenario, adjoint: bool):
    g = scenario.A.grid
    A = np.real(scenario.A.values)
    q = np.conj(scenario.q.values) if adjoint else scenario.q.values
    p = -1j * spectral_divergence(A.astype(complex), g) + np.sum(A * A, axis=0) + q
    return A, p


def conjugated_apply_log(log_a: LogField, zeta, h: float, A, p, k: float) -> np.ndarray:
    """``h^2 L_zeta a`` for ``a = exp(log_a)``, using exact derivatives of ``log_a``."""
    G = log_a.grad
    zg = np.einsum("j,j...->...", zeta, G)
    za = np.einsum("j,j...->...", zeta, A)
    ag = np.sum(A * G, axis=0)
    gg = np.sum(G * G, axis=0)
    bracket = (-h * h * (log_a.lap + gg) - 2 * h * zg - 2j * h * za - 2j * h * h * ag + h * h * (p - k * k))
    return log_a.exp() * bracket


def build_amplitude(spec: CGOSpec, transport: Transport, scenario: Scenario, log_g: Optional[LogField] = None,
                    which: int = 1, domain: Optional[np.ndarray] = None, g_tol: float = 1e-6) -> CGOSolution:
    """``a = g exp(Phi)`` and ``residual_sup = max_domain |h^2 L_zeta a|``.

    ``which = 2`` builds the factor for the adjoint equation (``q`` conjugated).
    ``log_g`` must satisfy ``zeta0.grad log g = 0``; it is checked against
    ``g_tol`` relative to ``max |grad log g|``.
    """
    grid = scenario.A.grid
    log_a = transport.phi
    if log_g is not None:
        zg = np.einsum("j,j...->...", transport.zeta0, log_g.grad)
        scale = max(np.abs(log_g.grad).max(), 1.0)
        if np.abs(zg).max() > g_tol * scale:
            raise ValueError(f"g violates zeta0.grad g = 0 (residual {np.abs(zg).max() / scale:.2e})")
        log_a = log_a + log_g
    A, p = _potential_terms(scenario, adjoint=(which == 2))
    res = conjugated_apply_log(log_a, spec.zeta(which), spec.h, A, p, scenario.k)
    dom = np.ones(grid.dims, bool) if domain is None else domain
    sol = CGOSolution(spec, which, log_a, transport, float(np.abs(res[dom]).max()), log_g)
    sol.meta["residual"] = res
    return sol


def make_cgo(scenario: Scenario, spec: CGOSpec, which: int = 1, log_g: Optional[LogField] = None,
             domain: Optional[np.ndarray] = None, use_mollified: bool = True,
             with_phi0: bool = False) -> CGOSolution:
    """Transport plus amplitude in one call; ``with_phi0`` also stores the unmollified ``Phi0``."""
    tr = solve_transport(scenario.A, spec, use_mollified, which)
    sol = build_amplitude(spec, tr, scenario, log_g, which, domain)
    if with_phi0:
        sol.transport0 = solve_transport(scenario.A, spec, False, which)
    return sol


def ball_mask(grid: Grid3, ball) -> np.ndarray:
    center, radius = ball
    return grid.radius(center) <= radius


# ---------------------------------------------------------------- remainder

class ConjugatedOperator:
    """``P r = h^2 e^{-x.zeta/h} (L_{A,q} - k^2) e^{x.zeta/h} r`` with periodic spectral derivatives."""

    def __init__(self, grid: Grid3, zeta, h: float, A: np.ndarray, p: np.ndarray, k: float):
        self.grid, self.zeta, self.h, self.A, self.p, self.k = grid, np.asarray(zeta, complex), h, A, p, k
        s = [_freqs(n, d).reshape([-1 if i == j else 1 for i in range(3)])
             for j, (n, d) in enumerate(zip(grid.dims, grid.spacing))]
        self.s = s
        ssq = sum((2 * np.pi * sfft.fftfreq(n, d)).reshape([-1 if i == j else 1 for i in range(3)]) ** 2
                  for j, (n, d) in enumerate(zip(grid.dims, grid.spacing)))
        zs = sum(self.zeta[j] * s[j] for j in range(3))
        self.symbol = h * h * ssq - 2j * h * zs - h * h * k * k
        self.ssq = ssq
        self.zeta_s = zs
        self.c0 = -2j * h * np.einsum("j,j...->...", self.zeta, A) + h * h * (p - k * k)

    def _grad(self, r):
        rh = sfft.fftn(r, workers=get_threads())
        return rh, [sfft.ifftn(1j * self.s[j] * rh, workers=get_threads()) for j in range(3)]

    def apply(self, r: np.ndarray) -> np.ndarray:
        h = self.h
        rh, gr = self._grad(r)
        lead = sfft.ifftn((h * h * self.ssq - 2j * h * self.zeta_s) * rh, workers=get_threads())
        return lead - 2j * h * h * sum(self.A[j] * gr[j] for j in range(3)) + self.c0 * r

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        h = self.h
        wh = sfft.fftn(w, workers=get_threads())
        lead = sfft.ifftn((h * h * self.ssq - 2j * h * self.zeta_s).conj() * wh, workers=get_threads())
        # (c A.grad)^* w = -div(conj(c) A w) with c = -2i h^2 and real A
        div = spectral_divergence(self.A * w, self.grid)
        return lead - 2j * h * h * div + np.conj(self.c0) * w

    def precondition(self, lam: float):
        d = 1.0 / (np.abs(self.symbol) ** 2 + lam)
        return lambda v: sfft.ifftn(d * sfft.fftn(v, workers=get_threads()), workers=get_threads())


def h1_scl_norm(r: np.ndarray, grid: Grid3, h: float, domain: Optional[np.ndarray] = None) -> float:
    """``(||r||^2 + ||h grad r||^2)^(1/2)`` over ``domain``."""
    dom = np.ones(grid.dims, bool) if domain is None else domain
    g = spectral_gradient(r, grid)
    tot = np.sum(np.abs(r[dom]) ** 2) + h * h * np.sum(np.abs(g[:, dom]) ** 2)
    return float(np.sqrt(tot * grid.cell_volume))


def min_admissible_h(grid: Grid3, cells: float = 4.0) -> float:
    """Smallest ``h`` with ``cells`` nodes per wavelength ``2 pi h`` of the CGO oscillation."""
    return cells * max(grid.spacing) / (2 * np.pi)


def solve_remainder(sol: CGOSolution, scenario: Scenario, reg: Optional[float] = None,
                    domain: Optional[np.ndarray] = None, tol: float = 1e-8, maxiter: int = 400):
    """Damped least-squares remainder of ``P r = -h^2 L_zeta a`` on ``domain``.

    Solves ``(P^* P + reg) r = -P^* b`` by preconditioned CG with
    ``b = 1_domain h^2 L_zeta a`` and ``reg = h^2`` by default.

    Returns
    -------
    r : ScalarField
    norm : float
        ``||r||_{H^1_scl(domain)}``.
    info : dict
        Iterations, final residual, and ``||P r + b|| / ||b||``.
    """
    spec = sol.spec
    grid = sol.grid
    h = spec.h
    hmin = min_admissible_h(grid)
    if h < hmin:
        raise ValueError(f"h={h:g} under-resolves the CGO oscillation; minimum admissible h is {hmin:.4g}")
    lam = h * h if reg is None else reg
    dom = np.ones(grid.dims, bool) if domain is None else domain
    b = np.where(dom, sol.meta["residual"], 0.0)
    if not np.any(b):
        r = np.zeros(grid.dims, complex)
        sol.remainder, sol.remainder_norm = ScalarField(grid, r), 0.0
        return sol.remainder, 0.0, {"iterations": 0, "relative_equation_residual": 0.0}
    A, p = _potential_terms(scenario, adjoint=(sol.which == 2))
    op = ConjugatedOperator(grid, sol.zeta, h, A, p, scenario.k)
    shape = grid.dims
    n = int(np.prod(shape))
    normal = LinearOperator((n, n), dtype=complex,
                            matvec=lambda v: (op.adjoint(op.apply(v.reshape(shape))) + lam * v.reshape(shape)).ravel())
    pre = op.precondition(lam)
    M = LinearOperator((n, n), dtype=complex, matvec=lambda v: pre(v.reshape(shape)).ravel())
    rhs = -op.adjoint(b).ravel()
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(normal, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    r = x.reshape(shape)
    eq = np.linalg.norm(op.apply(r) + b) / np.linalg.norm(b)
    norm = h1_scl_norm(r, grid, h, dom)
    sol.remainder, sol.remainder_norm = ScalarField(grid, r), norm
    return sol.remainder, norm, {"iterations": count[0], "cg_info": int(info), "relative_equation_residual": float(eq),
                                 "rhs_l2": float(np.linalg.norm(b[dom]) * np.sqrt(grid.cell_volume))}


def solvability_constant(sol: CGOSolution, domain: Optional[np.ndarray] = None) -> float:
    """``C`` in ``||r||_{H^1_scl} <= (C/h) ||h^2 L_zeta a||_2`` for the computed remainder."""
    if sol.remainder_norm is None:
        raise ValueError("remainder not computed")
    dom = np.ones(sol.grid.dims, bool) if domain is None else domain
    b2 = np.linalg.norm(sol.meta["residual"][dom]) * np.sqrt(sol.grid.cell_volume)
    return float(sol.spec.h * sol.remainder_norm / b2) if b2 > 0 else 0.0


def amplitude_gradient_sup(sol: CGOSolution, domain: Optional[np.ndarray] = None) -> float:
    dom = np.ones(sol.grid.dims, bool) if domain is None else domain
    ga = np.abs(sol.log_a.exp())[None] * np.abs(sol.log_a.grad)
    return float(np.sqrt(np.sum(ga ** 2, axis=0))[dom].max())


# ---------------------------------------------------------------- reflected pairs

def mirror_index(grid: Grid3) -> np.ndarray:
    """x3 indices of the reflected nodes ``x~ = (x1, x2, -x3)`` of the lower half inside the mirror grid."""
    m = grid.lower_half().dims[2]
    return 2 * (m - 1) - np.arange(m)


@dataclass
class ReflectedCGO:
    """``u(x) = u~(x) - u~(x~)`` on the lower half, from a CGO ``u~`` on the mirror grid."""

    solution: CGOSolution
    half: Grid3

    def parts(self, with_remainder: bool = True):
        """``(phase, m)`` at ``x`` and at ``x~``, each restricted to the lower half grid.

        ``u = exp(phase) m - exp(phase~) m~``. Keeping the exponent separate lets
        callers combine two CGOs before exponentiating.
        """
        m, _ = self.solution.factor(with_remainder)
        ph = self.solution.phase()
        n3 = self.half.dims[2]
        j = mirror_index(self.solution.grid)
        return (ph[..., :n3], m[..., :n3]), (ph[..., j], m[..., j])

    def values(self, with_remainder: bool = True) -> ScalarField:
        (p, m), (pt, mt) = self.parts(with_remainder)
        u = np.exp(p) * m - np.exp(pt) * mt
        u[..., -1] = 0.0  # x = x~ on the plane; exact by construction
        return ScalarField(self.half, u)

    def gradient(self, with_remainder: bool = True) -> np.ndarray:
        """``grad u`` from the factor derivatives: ``e^{x.zeta/h}(zeta m/h + grad m)`` minus its reflection."""
        sol = self.solution
        m, gm = sol.factor(with_remainder)
        g = np.exp(sol.phase())[None] * (sol.zeta[:, None, None, None] * m[None] / sol.spec.h + gm)
        n3 = self.half.dims[2]
        j = mirror_index(sol.grid)
        refl = g[..., j]
        refl[2] *= -1.0
        return g[..., :n3] - refl


def reflected_pair(scenario_ext: Scenario, spec1: CGOSpec, spec2: CGOSpec, log_g1: Optional[LogField] = None,
                   log_g2: Optional[LogField] = None, domain: Optional[np.ndarray] = None,
                   remainder: bool = False, use_mollified: bool = True):
    """Reflected CGOs ``u1`` for ``(A~, q~)`` and ``u2`` for the adjoint ``(A~, conj(q~))``.

    ``scenario_ext`` lives on the mirror grid with even/even/odd ``A`` and even
    ``q``. Returns two :class:`ReflectedCGO` objects on the lower half grid; both
    vanish on ``x3 = 0`` node-exactly.
    """
    if not spec1.same_family(spec2):
        raise ValueError("spec1 and spec2 must share (h, xi, gamma1, gamma2)")
    grid = scenario_ext.A.grid
    if not grid.mirror_ready:
        raise ValueError("scenario must live on a mirror grid")
    half = grid.lower_half()
    out = []
    for which, spec, lg in ((1, spec1, log_g1), (2, spec2, log_g2)):
        sol = make_cgo(scenario_ext, spec, which, lg, domain, use_mollified)
        if remainder:
            solve_remainder(sol, scenario_ext, domain=domain)
        out.append(ReflectedCGO(sol, half))
    return tuple(out)


def phase_product(spec: CGOSpec, grid: Grid3) -> np.ndarray:
    """``exp(x.zeta1/h) exp(x.conj(zeta2)/h)``, which equals ``exp(i x.xi)``."""
    x = grid.mesh()
    z = spec.zeta1 + np.conj(spec.zeta2)
    return np.exp(sum(x[j] * z[j] for j in range(3)) / spec.h)


def cgo_manifest(sol: CGOSolution, files: Optional[dict] = None) -> dict:
    """JSON-ready summary of one CGO build."""
    s = sol.spec
    return {"h": s.h, "xi": s.xi.tolist(), "gamma1": s.gamma1.tolist(), "gamma2": s.gamma2.tolist(),
            "which": sol.which, "epsilon": s.epsilon, "residual_sup": sol.residual_sup,
            "remainder_norm": sol.remainder_norm, "transport_truncation": sol.transport.truncation,
            "files": dict(files or {})}


def write_cgo(sol: CGOSolution, outdir, stem: str = "cgo") -> dict:
    """Write amplitude and Phi as MSFLD1 files plus a JSON manifest; return the manifest."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"amplitude": f"{stem}_amplitude.msf", "Phi": f"{stem}_Phi.msf"}
    write_field(out / files["amplitude"], sol.amplitude)
    write_field(out / files["Phi"], sol.Phi)
    if sol.remainder is not None:
        files["remainder"] = f"{stem}_remainder.msf"
        write_field(out / files["remainder"], sol.remainder)
    man = cgo_manifest(sol, files)
    write_json(out / f"{stem}.json", man)
    return man
