"""
Splitting the covariance into infrared and ultraviolet parts
============================================================

A cutoff in Matsubara frequency splits ``C = C_< + C_>``. The ultraviolet part
carries the jump at equal times and its decay constant falls like ``1/Omega``.
The infrared Gram constant grows only logarithmically in ``Omega``.
"""

import numpy as np

from fermidet.covariance import metal1d
from fermidet.scales import SMOOTH_DECAY, STRICT_BUMP, decay_constant, gram_constant_ir, scale_split, uv_decay_check

model = metal1d(beta=4.0)

# The two pieces add up to the full covariance (on-site, several times).
split = scale_split(model, STRICT_BUMP, 8.0)
tau = np.array([-1.0, -1e-9, 1e-9, 1.0])
print("ir(0) :", np.round(split.ir(tau)[:, 0].real, 4))
print("uv(0) :", np.round(split.uv(tau)[:, 0].real, 4))
print("sum error:", np.abs(split.ir(tau) + split.uv(tau) - split.full(tau)).max())

# Ultraviolet decay constants halve when Omega doubles.
res = uv_decay_check(model, [8, 16, 32, 64])
for r in res["ratios"]:
    print(f"alpha(2 Omega)/alpha(Omega) at Omega={r['Omega']:g}: {r['ratio']:.3f}")

# Infrared Gram constant against ln Omega.
for O in (4, 16, 64, 256):
    g = gram_constant_ir(model, SMOOTH_DECAY, O)
    print(f"Omega={O:4d}: gamma^2 = {g.gamma_sq:.3f}  (explicit bound {g.bound_rhs:.2f})")

# Full decay constant: grows with beta for a metal, flat for an insulator.
for b in (4.0, 16.0):
    print(f"beta={b:4g}: metal alpha_C = {decay_constant(metal1d(beta=b)).value:.3f}")
