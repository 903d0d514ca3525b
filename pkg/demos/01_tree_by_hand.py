"""Build an inference tree by hand on a model whose evidence is known.

The prior is N(0, 1) and ten observations are Gaussian around the unknown
mean, so log Z has a closed form. We split the unit interval once, put a few
importance-sampling runs in each half, and watch the root estimate combine
them. Then we let the adaptive sampler do the same thing on its own.

Run: python3 demos/01_tree_by_hand.py
"""

import numpy as np

from inftree import InferenceTree, RunConfig, Sampler, generate_synthetic, is_run, model_from_dataset
from inftree.reparam import split_rect
from inftree.tree import node_sigma2

model = model_from_dataset(generate_synthetic("conjugate", seed=0))
print(f"closed-form log Z = {model.log_evidence:.5f}")

rng = np.random.default_rng(0)
tree = InferenceTree(dim=1)
tree.add_runs(tree.root, [is_run(model, tree.root.rect, 10, rng) for _ in range(4)])
print(f"root only:  log Z-hat = {tree.log_ml:.5f}, ESS = {tree.ess:.1f}")

# the posterior sits in the upper half of z, so give that half most of the effort
left, right = split_rect(tree.root.rect, 0, 0.5)
tree.split(tree.root, 0, 0.5,
           [is_run(model, left, 10, rng) for _ in range(2)],
           [is_run(model, right, 10, rng) for _ in range(8)])
for name, node in (("root", tree.root), ("left", tree.root.left), ("right", tree.root.right)):
    print(f"{name:>5}: M = {node.M:2d}, c = {node.c:.3f}, log omega = {node.log_omega:9.4f}, "
          f"sigma^2 = {node_sigma2(node):.3e}")
print(f"after split: log Z-hat = {tree.log_ml:.5f}")

# the adaptive sampler: one-sample runs, one run per refinement
cfg = RunConfig(experiment="conjugate", budget=2000, seed=1,
                base={"batch_size": 1, "runs_per_refinement": 1})
s = Sampler(cfg, model=model).run()
print(f"adaptive, 2000 evaluations: log Z-hat = {s.tree.log_ml:.5f} with "
      f"{s.tree.n_leaves} leaves (max depth {s.tree.max_depth()})")
print(f"posterior mean: estimate {s.tree.estimate(lambda x: x[:, 0]):.4f}, "
      f"exact {model.posterior_mean:.4f}")
