# Posterior means from MCMC output by solving a Stein equation.
#
# We simulate a small Bayesian logistic regression, run random-walk
# Metropolis, keep the distinct states and weight them by w = K_p^{-1} 1.
# The weighted average is compared with the plain MCMC average.

import numpy as np

from steinpcg import (
    KernelAction,
    SolveConfig,
    SteinKernel,
    cg,
    dense_solve,
    distinct_prefix,
    estimate_with_bound,
    generate_logistic_data,
    point_estimate,
    rwmh_sample,
)

target = generate_logistic_data(d=4, n_data=1000, seed=0)
print("true parameter:", target.true_param)

chain = rwmh_sample(target, step=0.1, n_iters=5000, seed=1)
print(f"acceptance rate {chain.acceptance_rate:.3f}")

# rejected proposals repeat the current state; K_p would be singular with
# repeated nodes, so only the first occurrence of each state is kept
nodes = distinct_prefix(chain, 400, target)
print(f"{nodes.N} distinct nodes out of {chain.n_iters} iterations")

# for comparison: the unweighted average of the same nodes
print("plain MCMC mean over the same nodes:", nodes.X.mean(axis=0).round(3))

kernel = SteinKernel(lengthscale=0.1)

## Direct solve (fine for a few thousand nodes)
sol = dense_solve(nodes, kernel)
for i in range(4):
    print(f"E[x{i + 1}] ~= {point_estimate(nodes.X[:, i], sol.w):+.4f}")
print(f"worst-case error sigma(w) = {sol.sigma:.4g}")

## Matrix-free conjugate gradient
# the same numbers without ever holding the N x N matrix
action = KernelAction(nodes, kernel, bandwidth=64)
trace = cg(action, config=SolveConfig(criterion="ground-truth", reference_sigma=sol.sigma))
est = estimate_with_bound(nodes.X[:, 0], action, trace)
print(f"CG stopped after {trace.iterations} iterations: E[x1] ~= {est.value:+.4f}, sigma = {est.sigma:.4g}")

# sigma(w_m) falls towards its minimum (1^T K_p^{-1} 1)^{-1/2}
for m in (1, 2, 5, 10, trace.iterations):
    print(f"  m = {m:3d}   sigma = {trace.sigma[m]:.5g}")
