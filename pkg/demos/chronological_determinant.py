"""
Chronological products and masked determinants
===============================================

A time-ordered determinant ``det(<alpha_k, v_l> 1[t_k > s_l])`` written as a
product of wedge and contraction operators on the exterior algebra. Ties in
the time labels are broken consistently, so strict and weak masks both work.
"""

import numpy as np

from fermidet.grassmann import Multivector, car_defect, chrono_masked_det

rng = np.random.default_rng(0)

# The anticommutation relations hold to rounding on a random multivector.
N = 5
m = Multivector.random(N, rng)
a = rng.normal(size=N) + 1j * rng.normal(size=N)
u = rng.normal(size=N) + 1j * rng.normal(size=N)
print("CAR defect:", car_defect(a, u, m))

# Random row/column vectors and integer times, so ties are common.
n = 4
alphas = rng.normal(size=(n, N)) + 1j * rng.normal(size=(n, N))
vs = rng.normal(size=(n, N)) + 1j * rng.normal(size=(n, N))
rows = rng.integers(0, 3, n).astype(float)
cols = rng.integers(0, 3, n).astype(float)
print("row times", rows, "column times", cols)

# Compare the operator product with an LU determinant of the masked matrix.
for strict in (True, False):
    mask = rows[:, None] > cols[None, :] if strict else rows[:, None] >= cols[None, :]
    lu = np.linalg.det((alphas @ vs.T) * mask)
    chrono = chrono_masked_det(list(alphas), list(vs), list(rows), list(cols), strict)
    print(f"strict={strict}: chrono {chrono:.6f}  LU {lu:.6f}  diff {abs(chrono - lu):.1e}")
