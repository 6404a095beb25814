"""Outgoing free-space Green function, resolvent convolution and far-field tools.

The resolvent ``(-Delta - k^2 - i0)^{-1}`` is applied as a discrete convolution
with the Green function truncated at the box diameter. The truncated kernel has
a closed-form Fourier transform with no singularity, which makes the discrete
convolution spectrally accurate for smooth sources and targets inside the box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import map_coordinates

from .fields import Grid3, ScalarField, VectorField
from .io import write_csv

FOUR_PI = 4.0 * np.pi


class SingularityError(ValueError):
    """Raised when the Green function is evaluated on its diagonal."""


def workers() -> int:
    from .config import get_threads
    return get_threads()


def green_eval(k: float, x, y) -> np.ndarray:
    """``exp(ik|x-y|) / (4 pi |x-y|)`` for points given along the last axis."""
    d = np.asarray(x, float) - np.asarray(y, float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r == 0):
        raise SingularityError("green_eval: x = y")
    return np.exp(1j * k * r) / (FOUR_PI * r)


def truncated_kernel_ft(k: float, L: float, s: np.ndarray) -> np.ndarray:
    """Fourier transform of ``G0 * 1{|x| < L}`` at radial frequency ``s``.

    Closed form ``[-1 + e^{ikL}(cos sL - i k sin(sL)/s)] / (k^2 - s^2)`` with its
    removable limits at ``s = 0`` and ``s = k``.
    """
    s = np.asarray(s, float)
    eikl = np.exp(1j * k * L)
    out = np.empty(s.shape, complex)
    small = s < 1e-12
    near = np.abs(s - k) < 1e-8 * max(k, 1.0)
    reg = ~(small | near)
    sr = s[reg]
    out[reg] = (-1.0 + eikl * (np.cos(sr * L) - 1j * k * np.sin(sr * L) / sr)) / (k * k - sr * sr)
    out[small] = (-1.0 + eikl * (1.0 - 1j * k * L)) / (k * k)
    # l'Hopital at s = k
    dnum = eikl * (-L * np.sin(k * L) - 1j * k * (L * np.cos(k * L) / k - np.sin(k * L) / k ** 2))
    out[near] = dnum / (-2.0 * k)
    return out


def _offset_index(n: int, m: int) -> np.ndarray:
    """Indices of offsets -(n-1)..(n-1) inside a length-m periodic array."""
    return np.r_[0:n, m - n + 1:m]


@dataclass
class GreenKernel:
    """Spectral form of the truncated Green function on a zero-padded grid.

    ``spectral_kernel`` lives on ``pad_dims`` (at least ``2N - 1`` per axis);
    linear convolution of box data with it reproduces ``G0 * phi`` inside the box.
    """

    k: float
    grid: Grid3
    pad_dims: tuple
    spectral_kernel: np.ndarray
    truncation: float
    period: tuple

    @classmethod
    def build(cls, k: float, grid: Grid3, period_factor: Optional[float] = None) -> "GreenKernel":
        """Precompute the kernel for wavenumber ``k`` on ``grid``.

        Parameters
        ----------
        period_factor : float, optional
            Period of the auxiliary transform grid in units of the box extent.
            Must be at least ``1 + L/D`` per axis; chosen automatically if omitted.
        """
        if not k > 0:
            raise ValueError("k must be positive")
        n = np.array(grid.dims)
        hs = np.array(grid.spacing)
        ext = grid.extent
        L = 1.0001 * grid.diameter
        need = ext + L + 2 * hs
        if period_factor is not None:
            req = float(np.max(need / ext))
            if period_factor < req:
                raise ValueError(f"insufficient padding: period_factor {period_factor:g} < required {req:.4g}")
            need = period_factor * ext
        m = [sfft.next_fast_len(int(np.ceil(p / h))) for p, h in zip(need, hs)]
        s2 = np.zeros(m)
        for j in range(3):
            sj = 2 * np.pi * sfft.fftfreq(m[j], hs[j])
            shape = [1, 1, 1]
            shape[j] = m[j]
            s2 = s2 + (sj ** 2).reshape(shape)
        kh = truncated_kernel_ft(k, L, np.sqrt(s2))
        del s2
        kr = sfft.ifftn(kh, overwrite_x=True, workers=workers())
        del kh
        q = [sfft.next_fast_len(2 * int(nj) - 1) for nj in n]
        idx = [_offset_index(int(nj), mj) for nj, mj in zip(n, m)]
        dst = [_offset_index(int(nj), qj) for nj, qj in zip(n, q)]
        small = kr[np.ix_(*idx)]
        del kr
        pad = np.zeros(q, complex)
        pad[np.ix_(*dst)] = small
        spec = sfft.fftn(pad, overwrite_x=True, workers=workers())
        return cls(float(k), grid, tuple(q), spec, L, tuple(mj * h for mj, h in zip(m, hs)))

    def pad_wavenumbers(self) -> list:
        out = []
        for j, (qj, h) in enumerate(zip(self.pad_dims, self.grid.spacing)):
            kj = 2 * np.pi * sfft.fftfreq(qj, h)
            if qj % 2 == 0:
                kj[qj // 2] = 0.0
            shape = [1, 1, 1]
            shape[j] = qj
            out.append(kj.reshape(shape))
        return out


_CACHE: dict = {}


def get_kernel(k: float, grid: Grid3) -> GreenKernel:
    """Cached :meth:`GreenKernel.build` keyed by wavenumber and grid geometry."""
    key = (float(k), grid.spacing, grid.dims)
    ker = _CACHE.get(key)
    if ker is None:
        if len(_CACHE) >= 2:
            _CACHE.pop(next(iter(_CACHE)))
        ker = GreenKernel.build(k, grid)
        _CACHE[key] = ker
    return ker


def convolve(kernel: GreenKernel, arr: np.ndarray, gradient: bool = False):
    """Apply the truncated Green convolution to a box array.

    Returns ``u`` or ``(u, grad_u)`` with ``grad_u`` of shape ``(3, *dims)``.
    """
    n = kernel.grid.dims
    w = workers()
    pad = np.zeros(kernel.pad_dims, complex)
    pad[: n[0], : n[1], : n[2]] = arr
    ph = sfft.fftn(pad, overwrite_x=True, workers=w)
    ph *= kernel.spectral_kernel
    u = sfft.ifftn(ph, workers=w)[: n[0], : n[1], : n[2]].copy()
    if not gradient:
        return u
    grads = []
    for kj in kernel.pad_wavenumbers():
        grads.append(sfft.ifftn(ph * (1j * kj), workers=w)[: n[0], : n[1], : n[2]].copy())
    return u, np.stack(grads)


def resolvent_apply(kernel: GreenKernel, phi: ScalarField, gradient: bool = False):
    """``u = G0 * phi`` sampled on the grid of ``phi``.

    Raises
    ------
    ValueError
        If ``phi`` does not live on the kernel's grid (the kernel padding is
        sized for that box only).
    """
    if not kernel.grid.same_as(phi.grid):
        raise ValueError("phi grid differs from the kernel grid; rebuild the kernel for this box")
    out = convolve(kernel, phi.values, gradient)
    if gradient:
        return ScalarField(phi.grid, out[0]), VectorField(phi.grid, out[1])
    return ScalarField(phi.grid, out)


_D2_6 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


def fd_laplacian6(u: np.ndarray, grid: Grid3) -> np.ndarray:
    """Sixth-order centered Laplacian; the 3-cell rim of the output is invalid."""
    out = np.zeros_like(u)
    for ax in range(3):
        acc = np.zeros_like(u)
        for off, c in zip(range(-3, 4), _D2_6):
            acc += c * np.roll(u, -off, axis=ax)
        out += acc / grid.spacing[ax] ** 2
    return out


def helmholtz_residual(u: ScalarField, phi: ScalarField, k: float, margin: int = 3) -> float:
    """``||(-Delta - k^2) u - phi|| / ||phi||`` over the interior (``margin`` cells)."""
    m = max(margin, 3)
    r = -fd_laplacian6(u.values, u.grid) - k * k * u.values - phi.values
    sl = (slice(m, -m),) * 3
    return float(np.linalg.norm(r[sl]) / np.linalg.norm(phi.values[sl]))


# ---------------------------------------------------------------- sphere sampling

def sphere_mesh(n_theta: int = 16, n_phi: int = 32):
    """Gauss-Legendre in cos(theta) times uniform phi.

    Returns directions ``(n, 3)``, theta, phi and quadrature weights summing to 4 pi.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    th = np.arccos(x)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = np.repeat(w[:, None] * (2 * np.pi / n_phi), n_phi, axis=1)
    st = np.sin(T)
    dirs = np.stack([st * np.cos(P), st * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs, T.ravel(), P.ravel(), W.ravel()


class FieldSampler:
    """Callable evaluating a grid field at arbitrary points by cubic splines."""

    def __init__(self, fld: ScalarField, order: int = 3):
        self.grid = fld.grid
        self.order = order
        self._re = np.ascontiguousarray(fld.values.real)
        self._im = np.ascontiguousarray(fld.values.imag)

    def inside(self, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        lo = np.array(g.origin)
        hi = lo + g.extent
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        idx = (np.asarray(pts, float) - np.array(g.origin)) / np.array(g.spacing)
        c = idx.reshape(-1, 3).T
        re = map_coordinates(self._re, c, order=self.order, mode="nearest")
        im = map_coordinates(self._im, c, order=self.order, mode="nearest")
        return (re + 1j * im).reshape(np.shape(pts)[:-1])


def _as_callable(u) -> tuple:
    if isinstance(u, ScalarField):
        s = FieldSampler(u)
        return s, s.inside, min(u.grid.spacing)
    return u, None, None


@dataclass
class FarField:
    """Far-field pattern samples on a sphere mesh."""

    directions: np.ndarray
    amplitude: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    remainder: Optional[np.ndarray] = None
    radii: tuple = ()

    def __post_init__(self):
        nrm = np.linalg.norm(self.directions, axis=1)
        if np.max(np.abs(nrm - 1)) > 1e-12:
            raise ValueError("far-field directions must be unit vectors")
        if not np.all(np.isfinite(self.amplitude)):
            raise ValueError("far-field amplitude must be finite")

    def to_csv(self, path) -> None:
        write_csv(path, ["theta", "phi", "re_a", "im_a"],
                  zip(self.theta, self.phi, self.amplitude.real, self.amplitude.imag))


def far_field_extract(u, k: float, radii: Sequence[float], mesh=(16, 32),
                      center=(0.0, 0.0, 0.0), min_gap: Optional[float] = None) -> FarField:
    """Estimate the far-field pattern ``a`` from samples on two spheres.

    ``a`` is matched to the leading term ``e^{ik s} a / s`` at the outer radius;
    the difference between the two radii estimates the ``O(1/s^2)`` remainder.

    Parameters
    ----------
    u : ScalarField or callable
        Field, or a function of points ``(..., 3)``.
    radii : (r_inner, r_outer)
    """
    r1, r2 = sorted(float(r) for r in radii)
    fn, inside, h = _as_callable(u)
    gap = min_gap if min_gap is not None else (2 * h if h else 0.0)
    if r2 - r1 < max(gap, 1e-12):
        raise ValueError(f"radii {r1:g}, {r2:g} closer than {gap:g}")
    dirs, th, ph, w = sphere_mesh(*mesh)
    c = np.asarray(center, float)
    a = []
    for r in (r1, r2):
        pts = c + r * dirs
        if inside is not None and not np.all(inside(pts)):
            raise ValueError(f"sphere of radius {r:g} leaves the grid")
        a.append(r * np.exp(-1j * k * r) * fn(pts))
    rem = np.abs(a[0] - a[1]) * (1 / r2) / (1 / r1 - 1 / r2)
    return FarField(dirs, a[1], th, ph, w, rem, (r1, r2))


def far_field_deviation(u: Callable, k: float, far: FarField, radii: Sequence[float],
                        center=(0.0, 0.0, 0.0)):
    """L2-over-sphere-mesh deviation ``||u(s xhat) - e^{iks} a(xhat)/s||`` per radius.

    Returns the deviations and the fitted log-log slope.
    """
    dev = []
    c = np.asarray(center, float)
    for s in radii:
        vals = u(c + s * far.directions)
        d = vals - np.exp(1j * k * s) * far.amplitude / s
        dev.append(float(np.sqrt(np.sum(far.weights * np.abs(d) ** 2) / np.sum(far.weights))))
    slope = float(np.polyfit(np.log(radii), np.log(dev), 1)[0])
    return np.array(dev), slope


def radiation_monitor(u, k: float, radii: Sequence[float], center=(0.0, 0.0, 0.0),
                      outgoing: bool = True, mesh=(16, 32)) -> list:
    """Sphere norms ``||u||`` and ``||d_r u - (+-) i k u||`` along a radius ladder.

    Radii whose sphere leaves the grid are reported as truncated records.
    """
    fn, inside, h = _as_callable(u)
    dirs, _, _, w = sphere_mesh(*mesh)
    c = np.asarray(center, float)
    sign = 1.0 if outgoing else -1.0
    out = []
    for s in radii:
        delta = 0.5 * h if h else 1e-4 * s
        if inside is not None and not np.all(inside(c + (s + delta) * dirs)):
            out.append({"radius": float(s), "truncated": True,
                        "warning": "sphere exceeds grid; record dropped"})
            continue
        vals = fn(c + s * dirs)
        dr = (fn(c + (s + delta) * dirs) - fn(c + (s - delta) * dirs)) / (2 * delta)
        area = s * s
        out.append({"radius": float(s), "truncated": False,
                    "norm_u": float(np.sqrt(area * np.sum(w * np.abs(vals) ** 2))),
                    "norm_radiation": float(np.sqrt(area * np.sum(w * np.abs(dr - sign * 1j * k * vals) ** 2)))})
    return out
