"""Curl and q reconstruction from Fourier samples of the pairing identity.

Run: python demos/03_reconstruct.py
"""
import numpy as np

from magschrod import recon as R
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField, make_potential

g = Grid3.cube(48, 1.6, n3=47).lower_half()
ball = ((0.0, 0.0, 0.0), 1.3)


def scenario(A=None, q=None):
    A = VectorField(g, np.zeros((3,) + g.dims)) if A is None else A
    q = ScalarField(g, np.zeros(g.dims, complex)) if q is None else q
    return Scenario(2.0, A, q, ball, (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))


# different magnetic fields: the curl is recovered, q is skipped
A2 = make_potential("gaussian_bump", g, None, amplitude=(0.6, -0.4, 0.3), sigma=0.15,
                    center=(0.1, 0.0, -0.7), cutoff=0.65)
res = R.reconstruct(R.ScenarioPair(scenario(), scenario(VectorField(g, A2.values.real))))
print(f"curl error {res.rel_err_curl:.2%}; q step: {res.metrics['q_status']}")

# same field up to a gauge: curl vanishes, q is recovered after alignment
x = g.mesh()
d = [x[0], x[1], x[2] + 0.65]
r2 = sum(e * e for e in d)
t = np.clip(1 - r2 / 0.62 ** 2, 0, None)
ga = np.exp(-r2 / 0.08)
grad = VectorField(g, np.stack([ga * (-t ** 8 / 0.04 - 16 * t ** 7 / 0.62 ** 2) * e for e in d]))
q2 = make_potential("gaussian_bump", g, None, amplitude=2 - 1j, sigma=0.15, center=(0.1, -0.1, -0.6), cutoff=0.65)
pair = R.ScenarioPair(scenario(), scenario(grad, q2))
for mode in ("oracle", "measurement"):
    res = R.reconstruct(pair, mode)
    print(f"{mode:>11}: curl null ratio {res.metrics['curl_null_ratio']:.1e}, q error {res.rel_err_q:.2%}")
