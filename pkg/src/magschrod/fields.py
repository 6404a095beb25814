"""Uniform grids, complex fields, spectral utilities and potential generators.

Arrays are indexed ``[i1, i2, i3]`` with ``x_j = origin[j] + i_j * spacing[j]``.
Vector fields carry their components along a leading axis of length 3.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

ODD_TOL = 1e-12


@dataclass(frozen=True)
class Grid3:
    """Uniform tensor grid on a box.

    Parameters
    ----------
    origin : tuple of float
        Coordinates of node ``(0, 0, 0)``.
    spacing : tuple of float
        Positive node spacing per axis.
    dims : tuple of int
        Number of nodes per axis, at least 2.
    """

    origin: tuple
    spacing: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.dims) != 3:
            raise ValueError("Grid3 needs three origin, spacing and dims entries")
        if min(self.spacing) <= 0:
            raise ValueError("grid spacing must be positive")
        if min(self.dims) < 2:
            raise ValueError("grid dims must be at least 2 per axis")

    @classmethod
    def cube(cls, n: int, half_width: float, n3: Optional[int] = None) -> "Grid3":
        """Centered cube ``[-w, w]^3`` with ``n`` nodes per axis (``n3`` along x3)."""
        n3 = n if n3 is None else n3
        h = 2.0 * half_width / (n - 1)
        return cls((-half_width,) * 2 + (-(n3 - 1) * h / 2,), (h, h, h), (n, n, n3))

    @property
    def shape(self) -> tuple:
        return self.dims

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extent(self) -> np.ndarray:
        return np.array([(n - 1) * s for n, s in zip(self.dims, self.spacing)])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def axes(self) -> list:
        return [o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.dims)]

    def mesh(self) -> tuple:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        x1, x2, x3 = self.axes()
        c = np.asarray(center, float)
        return np.sqrt((x1[:, None, None] - c[0]) ** 2 + (x2[None, :, None] - c[1]) ** 2
                       + (x3[None, None, :] - c[2]) ** 2)

    def wavenumbers(self) -> list:
        """Angular FFT frequencies per axis, broadcastable against the grid."""
        out = []
        for j, (n, s) in enumerate(zip(self.dims, self.spacing)):
            kj = 2 * np.pi * sfft.fftfreq(n, s)
            shape = [1, 1, 1]
            shape[j] = n
            out.append(kj.reshape(shape))
        return out

    @property
    def plane_index(self) -> Optional[int]:
        """Index of the node layer on x3 = 0, or None if there is none."""
        i = -self.origin[2] / self.spacing[2]
        ii = int(round(i))
        if 0 <= ii < self.dims[2] and abs(i - ii) < 1e-9:
            return ii
        return None

    @property
    def mirror_ready(self) -> bool:
        """True when x -> (x1, x2, -x3) maps nodes onto nodes."""
        p = self.plane_index
        return p is not None and 2 * p == self.dims[2] - 1

    @property
    def is_lower_half(self) -> bool:
        """True when the last x3 layer is the plane x3 = 0."""
        return self.plane_index == self.dims[2] - 1

    def lower_half(self) -> "Grid3":
        if not self.mirror_ready:
            raise ValueError("grid is not mirror_ready")
        return Grid3(self.origin, self.spacing, self.dims[:2] + (self.plane_index + 1,))

    def mirror(self) -> "Grid3":
        if not self.is_lower_half:
            raise ValueError("grid does not end on the plane x3 = 0")
        return Grid3(self.origin, self.spacing, self.dims[:2] + (2 * self.dims[2] - 1,))

    def same_as(self, other: "Grid3") -> bool:
        return (self.dims == other.dims
                and np.allclose(self.origin, other.origin, atol=1e-12)
                and np.allclose(self.spacing, other.spacing, rtol=1e-12))


@dataclass
class ScalarField:
    """Complex scalar samples on a grid, with optional compact-support metadata."""

    grid: Grid3
    values: np.ndarray
    support_radius: Optional[float] = None
    support_center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.dims:
            raise ValueError(f"values shape {self.values.shape} != grid dims {self.grid.dims}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    rank = 1

    def with_values(self, values) -> "ScalarField":
        return replace(self, values=values)


@dataclass
class VectorField:
    """Complex 3-vector samples; ``values`` has shape ``(3, *grid.dims)``."""

    grid: Grid3
    values: np.ndarray
    support_radius: Optional[float] = None
    support_center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (3,) + self.grid.dims:
            raise ValueError(f"values shape {self.values.shape} != (3,)+{self.grid.dims}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    rank = 3

    def with_values(self, values) -> "VectorField":
        return replace(self, values=values)

    def component(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[j])


def zeros_like_grid(grid: Grid3, rank: int = 1):
    if rank == 1:
        return ScalarField(grid, np.zeros(grid.dims, complex))
    return VectorField(grid, np.zeros((3,) + grid.dims, complex))


def support_ok(fld, tol: float = 0.0) -> bool:
    """Check the declared support ball against the stored values."""
    if fld.support_radius is None:
        return True
    outside = fld.grid.radius(fld.support_center) > fld.support_radius
    vals = fld.values if fld.values.ndim == 3 else np.abs(fld.values).max(axis=0)
    return bool(np.all(np.abs(vals[outside]) <= tol))


# ---------------------------------------------------------------- spectral calculus

def spectral_derivative(values: np.ndarray, grid: Grid3, axis: int, order: int = 1) -> np.ndarray:
    """Periodic spectral derivative of a 3D array along ``axis``."""
    n = grid.dims[axis]
    kj = 2 * np.pi * sfft.fftfreq(n, grid.spacing[axis])
    if order % 2 == 1 and n % 2 == 0:
        kj[n // 2] = 0.0
    mult = (1j * kj) ** order
    shape = [1, 1, 1]
    shape[axis] = n
    vh = sfft.fft(values, axis=axis)
    return sfft.ifft(vh * mult.reshape(shape), axis=axis)


def spectral_gradient(values: np.ndarray, grid: Grid3) -> np.ndarray:
    return np.stack([spectral_derivative(values, grid, j) for j in range(3)])


def spectral_divergence(vec: np.ndarray, grid: Grid3) -> np.ndarray:
    return sum(spectral_derivative(vec[j], grid, j) for j in range(3))


def spectral_curl(vec: np.ndarray, grid: Grid3) -> np.ndarray:
    d = lambda c, a: spectral_derivative(vec[c], grid, a)
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def spectral_laplacian(values: np.ndarray, grid: Grid3) -> np.ndarray:
    k1, k2, k3 = grid.wavenumbers()
    return sfft.ifftn(-(k1 ** 2 + k2 ** 2 + k3 ** 2) * sfft.fftn(values))


def fd_derivative(values: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    """Second-order centered difference (one-sided at the box faces)."""
    return np.gradient(values, grid.spacing[axis], axis=axis, edge_order=2)


def fd_divergence(vec: np.ndarray, grid: Grid3) -> np.ndarray:
    return sum(fd_derivative(vec[j], grid, j) for j in range(3))


def fd_curl(vec: np.ndarray, grid: Grid3) -> np.ndarray:
    d = lambda c, a: fd_derivative(vec[c], grid, a)
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def lipschitz_estimate(fld) -> float:
    """Sampled Lipschitz constant from nearest-neighbour differences."""
    vals = fld.values if fld.values.ndim == 4 else fld.values[None]
    best = 0.0
    for j in range(3):
        d = np.abs(np.diff(vals, axis=j + 1)) / fld.grid.spacing[j]
        best = max(best, float(d.max()))
    return best


def apply_magnetic(A: np.ndarray, q: np.ndarray, w: np.ndarray, grid: Grid3) -> np.ndarray:
    """Spectral evaluation of ``L_{A,q} w = sum_j (-i d_j + A_j)^2 w + q w``.

    Exact for periodic band-limited data; use on compactly supported inputs.
    """
    out = q * w
    for j in range(3):
        t = -1j * spectral_derivative(w, grid, j) + A[j] * w
        out = out + (-1j * spectral_derivative(t, grid, j) + A[j] * t)
    return out


# ---------------------------------------------------------------- reflection

def reflect_extend(fld, parity: Sequence[str]):
    """Even/odd extension across x3 = 0 of a field given on the lower half grid.

    Parameters
    ----------
    fld : ScalarField or VectorField
        Samples on a grid whose last x3 layer is the plane x3 = 0.
    parity : sequence of {"even", "odd"}
        One entry per component.

    Returns
    -------
    Field of the same kind on the mirror grid. Restricting it to x3 <= 0
    returns the input unchanged.
    """
    grid = fld.grid
    if not grid.is_lower_half:
        raise ValueError("reflect_extend needs a half grid ending on x3 = 0 (mirror_ready layout)")
    vals = fld.values if fld.values.ndim == 4 else fld.values[None]
    if len(parity) != vals.shape[0]:
        raise ValueError("one parity entry per component is required")
    m = grid.dims[2] - 1
    out = np.empty(vals.shape[:3] + (2 * m + 1,), complex)
    for c, par in enumerate(parity):
        v = vals[c]
        if par == "odd":
            scale = np.abs(v).max()
            if scale > 0 and np.abs(v[:, :, m]).max() > ODD_TOL * scale:
                raise ValueError(f"component {c} does not vanish on x3 = 0; odd extension rejected")
            sign = -1.0
        elif par == "even":
            sign = 1.0
        else:
            raise ValueError(f"unknown parity {par!r}")
        out[c, :, :, : m + 1] = v
        out[c, :, :, m + 1:] = sign * v[:, :, m - 1::-1]
    g2 = grid.mirror()
    if fld.values.ndim == 3:
        return ScalarField(g2, out[0], fld.support_radius, fld.support_center)
    return VectorField(g2, out, fld.support_radius, fld.support_center)


def restrict_lower(fld):
    """Restrict a mirror-grid field to its x3 <= 0 half."""
    g = fld.grid.lower_half()
    n3 = g.dims[2]
    return type(fld)(g, fld.values[..., :n3].copy(), fld.support_radius, fld.support_center)


# ---------------------------------------------------------------- mollification

def bump(r: np.ndarray) -> np.ndarray:
    """Standard bump exp(-1/(1-r^2)) on r < 1, zero outside."""
    out = np.zeros_like(np.asarray(r, float))
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def mollifier_kernel(grid: Grid3, epsilon: float) -> np.ndarray:
    """Bump kernel of radius epsilon sampled on grid offsets, unit discrete mass."""
    half = [int(np.ceil(epsilon / s)) for s in grid.spacing]
    ax = [s * np.arange(-m, m + 1) for s, m in zip(grid.spacing, half)]
    r = np.sqrt(ax[0][:, None, None] ** 2 + ax[1][None, :, None] ** 2 + ax[2][None, None, :] ** 2)
    psi = bump(r / epsilon)
    return psi / (psi.sum() * grid.cell_volume)


def mollify(A: VectorField, epsilon: float):
    """Split ``A = A_sharp + A_flat`` with ``A_sharp = A * psi_epsilon``.

    Raises
    ------
    ValueError
        If epsilon is below twice the largest grid spacing.
    """
    thresh = 2.0 * max(A.grid.spacing)
    if epsilon < thresh:
        raise ValueError(f"epsilon={epsilon:g} below resolvable threshold {thresh:g}")
    ker = mollifier_kernel(A.grid, epsilon) * A.grid.cell_volume
    vals = A.values if A.values.ndim == 4 else A.values[None]
    sharp = np.stack([fftconvolve(v, ker, mode="same") for v in vals])
    if A.values.ndim == 3:
        sharp = sharp[0]
    flat = A.values - sharp
    sr = None if A.support_radius is None else A.support_radius + epsilon
    return (type(A)(A.grid, sharp, sr, A.support_center),
            type(A)(A.grid, flat, sr, A.support_center))


# ---------------------------------------------------------------- potentials

def _ef(s):
    return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= -1, 1 for t >= 1."""
    u = np.clip((np.asarray(t, float) + 1.0) / 2.0, 0.0, 1.0)
    a, b = _ef(u), _ef(1.0 - u)
    return a / (a + b)


def smooth_step_derivs(t: np.ndarray):
    """Values and first two t-derivatives of :func:`smooth_step`."""
    u = np.clip((np.asarray(t, float) + 1.0) / 2.0, 0.0, 1.0)
    a, b = _ef(u), _ef(1.0 - u)

    def d1(s, e):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s > 0, e / np.where(s > 0, s, 1.0) ** 2, 0.0)

    def d2(s, e):
        with np.errstate(divide="ignore", invalid="ignore"):
            ss = np.where(s > 0, s, 1.0)
            return np.where(s > 0, e * (1.0 / ss ** 4 - 2.0 / ss ** 3), 0.0)

    da, c = d1(u, a), d1(1.0 - u, b)
    dda, cc = d2(u, a), d2(1.0 - u, b)
    den = a + b
    num = da * b + a * c
    s0 = a / den
    s1 = num / den ** 2
    s2 = (dda * b - a * cc) / den ** 2 - 2.0 * num * (da - c) / den ** 3
    return s0, 0.5 * s1, 0.25 * s2


def smooth_step_deriv(t: np.ndarray) -> np.ndarray:
    """Derivative of :func:`smooth_step` with respect to t."""
    return smooth_step_derivs(t)[1]


def _check_support(grid: Grid3, center, radius: float, ball) -> None:
    if ball is None:
        return
    bc, br = np.asarray(ball[0], float), float(ball[1])
    reach = np.linalg.norm(np.asarray(center, float) - bc) + radius + max(grid.spacing)
    if reach > br:
        raise ValueError(f"support reaches {reach:.4g} beyond ball radius {br:.4g}")


def make_potential(kind: str, grid: Grid3, ball=None, **p):
    """Synthetic potential generator.

    Parameters
    ----------
    kind : {"gaussian_bump", "smoothed_indicator", "gradient_field"}
    grid : Grid3
    ball : (center, radius), optional
        Support ball B; the requested support must fit with a one-cell margin.
    **p
        ``gaussian_bump``: amplitude (scalar or 3-vector), center, sigma, cutoff
        (support radius, default 4.5 sigma).
        ``smoothed_indicator``: center, radius, width.
        ``gradient_field``: amplitude, center, radius, sigma of the radial bump psi, and
        width (cutoff band as a fraction of radius, default 0.15).

    Returns
    -------
    ScalarField or VectorField; for ``gradient_field`` the pair ``(grad_psi, psi)``.
    """
    c = np.asarray(p.get("center", (0.0, 0.0, 0.0)), float)
    r = grid.radius(c)
    if kind == "gaussian_bump":
        sigma = float(p["sigma"])
        cutoff = float(p.get("cutoff", 4.5 * sigma))
        _check_support(grid, c, cutoff, ball)
        width = 0.25 * cutoff
        prof = np.exp(-r ** 2 / (2 * sigma ** 2)) * smooth_step((cutoff - width - r) / width)
        amp = np.asarray(p.get("amplitude", 1.0))
        if amp.ndim == 0:
            return ScalarField(grid, complex(amp) * prof, cutoff, tuple(c))
        return VectorField(grid, amp.astype(complex)[:, None, None, None] * prof, cutoff, tuple(c))
    if kind == "smoothed_indicator":
        rad, width = float(p["radius"]), float(p["width"])
        _check_support(grid, c, rad + width, ball)
        return ScalarField(grid, smooth_step((rad - r) / width), rad + width, tuple(c))
    if kind == "gradient_field":
        # psi = amplitude * exp(-r^2/(2 sigma^2)) * smooth cutoff vanishing beyond radius
        rad = float(p["radius"])
        sigma = float(p.get("sigma", rad / 8.0))
        amp = float(p.get("amplitude", 1.0))
        _check_support(grid, c, rad, ball)
        width = float(p.get("width", 0.15)) * rad
        t = (rad - width - r) / width
        gauss = np.exp(-r ** 2 / (2 * sigma ** 2))
        cut = smooth_step(t)
        psi = amp * gauss * cut
        dpsi = amp * gauss * (-r / sigma ** 2 * cut - smooth_step_deriv(t) / width)
        x = grid.mesh()
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = [np.where(r > 0, (x[j] - c[j]) / r, 0.0) for j in range(3)]
        grad = np.stack([dpsi * u for u in unit])
        return (VectorField(grid, grad, rad, tuple(c)), ScalarField(grid, psi, rad, tuple(c)))
    raise ValueError(f"unknown potential kind {kind!r}")


# ---------------------------------------------------------------- scenario

@dataclass
class Scenario:
    """Wavenumber, potentials, support ball and boundary patches.

    Patches are rectangles ``(x1_min, x1_max, x2_min, x2_max)`` on x3 = 0.
    """

    k: float
    A: VectorField
    q: ScalarField
    support_ball: tuple
    gamma1_patch: tuple
    gamma2_patch: tuple
    meta: dict = field(default_factory=dict)

    def validate(self, tol: float = 1e-12) -> None:
        if not self.k > 0:
            raise ValueError("wavenumber k must be positive")
        if np.any(self.q.values.imag > tol):
            raise ValueError("Im q must be <= 0")
        if np.abs(self.A.values.imag).max() > tol:
            raise ValueError("A must be real-valued")
        c, rad = np.asarray(self.support_ball[0], float), float(self.support_ball[1])
        outside = self.A.grid.radius(c) > rad
        if np.abs(self.A.values[:, outside]).max(initial=0) > tol or \
                np.abs(self.q.values[outside]).max(initial=0) > tol:
            raise ValueError("potentials must be supported in the ball B")
        for name in ("gamma1_patch", "gamma2_patch"):
            if not patch_meets_outside(getattr(self, name), self.support_ball):
                raise ValueError(f"{name} has no part on the plane outside the closed ball")

    @property
    def has_potentials(self) -> bool:
        return bool(np.any(self.A.values != 0) or np.any(self.q.values != 0))


def patch_meets_outside(patch, ball) -> bool:
    """Whether a plane rectangle contains points outside the closed ball."""
    x1a, x1b, x2a, x2b = patch
    if not (x1b > x1a and x2b > x2a):
        return False
    c, rad = np.asarray(ball[0], float), float(ball[1])
    disk2 = rad ** 2 - c[2] ** 2
    if disk2 <= 0:
        return True
    # farthest rectangle corner from the disk center
    far = max((x - c[0]) ** 2 + (y - c[1]) ** 2 for x in (x1a, x1b) for y in (x2a, x2b))
    return far > disk2
