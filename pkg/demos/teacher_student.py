"""
A teacher fills the hole the labeled data leaves
================================================

Train TD3+BC and its teacher-student variant on the carved pointmass data
from ``data_pipeline.py`` and compare their normalized scores. Then look at
the discrepancy weights the teacher assigns to the labeled actions.

Takes a few minutes on one core.

    python3 demos/teacher_student.py
"""

from dataclasses import replace

import numpy as np

from ludor.algos import kappa_cosine
from ludor.data import CarveSpec
from ludor.harness import ExperimentSpec, LabeledRecipe, build_labeled, data_seeds, train_seed
from ludor.nn import mlp_apply

STEPS = 4000

spec = ExperimentSpec(
    env="pointmass-2d",
    algo="ludor-td3bc",
    labeled=LabeledRecipe(carves=(CarveSpec(dim=0, removal_ratio=1.0),)),
    seeds=(0,),
    max_timesteps=STEPS,
    eval_freq=500,
    n_episodes=10,
).with_overrides(hidden=(64, 64))

# plain TD3+BC sees only the carved labeled set
_, base_scores, _ = train_seed(replace(spec, algo="td3bc"), 0)

# the student also gets a teacher cloned from 1% of an expert set
nets, scores, teacher_scores = train_seed(spec, 0)

print("step   td3bc  student  teacher")
for k, (b, s, t) in enumerate(zip(base_scores, scores, teacher_scores)):
    print(f"{k * spec.eval_freq:>5d}  {b:6.1f}  {s:7.1f}  {t:7.1f}")

# kappa = 1 + cos(a, teacher(s)) on the labeled transitions; noisy actions
# that point away from the teacher's choice get down-weighted
labeled = build_labeled(spec.env, spec.labeled, 0)
teacher = mlp_apply(nets["teacher"], labeled.states)
kappa = kappa_cosine(labeled.actions, teacher).values
print(f"labeled generation seed {data_seeds(0)[0]}, {len(labeled)} transitions")
print(f"mean kappa {kappa.mean():.3f}")
counts, edges = np.histogram(kappa, bins=[0.0, 1.0, 1.5, 1.9, 2.0])
for lo, hi, c in zip(edges[:-1], edges[1:], counts):
    print(f"  kappa in [{lo}, {hi}]: {c / len(kappa):6.1%}")
