"""CGO amplitudes for a Lipschitz (cone) magnetic potential.

The sup-norm of L_zeta a shrinks roughly like h^{4/3}; the remainder is
solved by damped least squares. Run: python demos/02_cgo.py
"""
import numpy as np

from magschrod import cgo as C
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField

g = Grid3.cube(48, 2.0)
cone = np.clip(1 - g.radius(), 0, None)
A = VectorField(g, np.stack([0.4 * cone, -0.25 * cone, 0.3 * cone]))
sc = Scenario(0.3, A, ScalarField(g, np.zeros(g.dims, complex)), ((0, 0, 0), 1.3), (-1, 1, -1, 1), (-1, 1, -1, 1))
dom = g.radius() <= 1.3
xi = [0.3, 0.2, 0.0]

hs = np.array([0.4, 0.2, 0.1])
res, rem = [], []
for h in hs:
    spec = C.make_zeta_pair(h, xi, *C.special_gammas(xi))
    sol = C.make_cgo(sc, spec, domain=dom)
    _, nrm, info = C.solve_remainder(sol, sc, domain=dom)
    res.append(sol.residual_sup)
    rem.append(nrm)
    print(f"h={h:.2f}  ||L_zeta a||_inf={sol.residual_sup:.3e}  ||r||_H1scl={nrm:.3e}")

lh = np.log(hs)
print(f"residual slope {np.polyfit(lh, np.log(res), 1)[0]:.2f}, remainder slope {np.polyfit(lh, np.log(rem), 1)[0]:.2f}")
