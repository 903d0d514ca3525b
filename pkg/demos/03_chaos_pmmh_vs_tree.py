"""Parameter inference for a noisy chaotic attractor: PMMH against the tree.

The likelihood is unchanged when a or c flips sign, so the posterior has four
symmetric modes. A random-walk PMMH chain with a small step settles into one
of them. The tree partitions the prior box and keeps mass in several.

This takes a few minutes. Run: python3 demos/03_chaos_pmmh_vs_tree.py [budget]
"""

import sys

import numpy as np

from inftree import RunConfig, Sampler, generate_synthetic, model_from_dataset

budget = int(float(sys.argv[1])) if len(sys.argv) > 1 else 50_000_000
model = model_from_dataset(generate_synthetic("chaos", seed=0, n_steps=50))
quadrants = [(sa, sc) for sa in (1, -1) for sc in (1, -1)]

chain = Sampler(RunConfig(experiment="chaos", algorithm="pmmh", budget=budget, seed=0),
                model=model).run().chain
theta = chain.samples()
late = theta[len(theta) // 2:]
print(f"PMMH: {len(theta)} steps, {chain.n_accepted} accepted, final theta {np.round(chain.theta, 2)}")
for sa, sc in quadrants:
    share = np.mean((np.sign(late[:, 0]) == sa) & (np.sign(late[:, 2]) == sc))
    print(f"  sign(a) = {sa:+d}, sign(c) = {sc:+d}: {share:.1%} of the second half")

tree = Sampler(RunConfig(experiment="chaos", algorithm="it", budget=budget, seed=0),
               model=model).run().tree
x, w = tree.flatten_measure()
print(f"tree: {tree.n_leaves} leaves, log Z-hat = {tree.log_ml:.1f}")
for sa, sc in quadrants:
    share = w[(np.sign(x[:, 0]) == sa) & (np.sign(x[:, 2]) == sc)].sum()
    print(f"  sign(a) = {sa:+d}, sign(c) = {sc:+d}: {share:.1%} of the weight")
