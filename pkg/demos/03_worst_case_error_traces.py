# Worst-case error along the CG path on a longer chain.
#
# No ground truth here: CG and Jacobi-preconditioned CG both run for a fixed
# number of iterations on every distinct state of a chain, and we watch
# sigma(w_m) fall. At length scale 1 the system is extremely ill conditioned.

import numpy as np

from steinpcg.bench import LargeNConfig, large_n_study

study = large_n_study(LargeNConfig(mcmc_iters=4000, lengthscale=1.0, criterion="fixed", max_iters=2000))
print(f"N = {study.N} distinct nodes, acceptance rate {study.acceptance_rate:.3f}")
print(" m      sigma CG      sigma Jacobi")
for m in (1, 2, 5, 10, 20, 50, 100, 500, 1000, 2000):
    print(f"{m:5d}  {study.cg.sigma[m]:.5e}  {study.pcg.sigma[m]:.5e}")

ratio = study.pcg.sigma[1:51] / study.cg.sigma[1:51]
print(f"best early ratio sigma_Jacobi / sigma_CG over m <= 50: {ratio.min():.3f}")

# write the traces for plotting elsewhere
study.to_csv("traces.csv")
