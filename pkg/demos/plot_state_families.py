"""
Entanglement witnesses for the sampled families
===============================================

Draw a few states from every family and look at the smallest eigenvalue
of the partial transpose. Negative means entangled; bound entangled
Horodecki states stay positive even though they are entangled.
"""

import numpy as np

from entformer.linalg import is_npt
from entformer.sampler import allowed_groups, horodecki_state, make_rng, sample_states

###############################################################################
# Smallest partial-transpose eigenvalue per family

for dims in [(2, 2), (2, 3), (3, 3)]:
    print(f"dims {dims[0]}x{dims[1]}")
    for group in allowed_groups(dims):
        rho, params = sample_states(group, dims, make_rng(0), 1000)
        _, lam = is_npt(rho, dims)
        print(f"  {group.value:<16} min {lam.min():+.4f}  max {lam.max():+.4f}")

###############################################################################
# Sweep the Horodecki parameter: NPT switches on just above alpha = 4

alphas = np.linspace(2, 5, 13)
_, lam = is_npt(horodecki_state(alphas), (3, 3))
for a, l in zip(alphas, lam):
    print(f"alpha {a:.2f}  lambda_min {l:+.5f}")
