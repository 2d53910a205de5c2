"""
Changing the jump intensity with a Doleans-Dade weight
=======================================================

Under the reference law the points arrive at rate lambda.  Reweighting by
L_T makes them arrive at rate rho * lambda; a quick check on event counts.
"""

import numpy as np

from switchbsde.mpp import CompensatorSpec, KernelField, doleans_weights, simulate_paths, simulate_path_under_kernel

comp = CompensatorSpec.constant(1.5, weights=(0.6, 0.4))
kern = KernelField.constant([2.0, 0.5])
K = 50_000

ref = simulate_paths(comp, 1.0, seed=5, n_paths=K)
L = doleans_weights(ref, comp, kern)
counts = np.array([len(x) for x in ref])
print("E[L_T] = %.4f +- %.4f" % (L.mean(), L.std() / np.sqrt(K)))

# %% expected count under the new law: (2 * 0.6 + 0.5 * 0.4) * 1.5 = 2.1
direct = np.array([len(simulate_path_under_kernel(comp, kern, 1.0, seed=6, index=i)) for i in range(K)])
print("reweighted mean count: %.4f" % np.mean(L * counts))
print("direct mean count:     %.4f" % direct.mean())
