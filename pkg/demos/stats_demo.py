"""Repeated-measures ANOVA and Bonferroni posthoc on a 3-subject 2 x 2 design."""

import numpy as np

from usgait.stats import RmDesign, bonferroni_posthoc, rm_two_way_anova

values = np.array([[4.9, 4.0, 5.2, 4.7],
                   [3.8, 2.7, 4.0, 3.5],
                   [4.6, 3.8, 5.4, 4.4]]).reshape(3, 2, 2)
design = RmDesign(values, ("s1", "s2", "s3"), ("task_specific", "task_invariant"),
                  ("intensity", "intensity_plus_temporal"))

for e in rm_two_way_anova(design).effects:
    print(f"{e.name:22s} F({e.dof},{e.error_dof}) = {e.F:8.3f}  p = {e.p:.4f}")
print()
for r in bonferroni_posthoc(design):
    print(f"{r.label:60s} t = {r.t:7.3f}  p_adj = {r.p_adj:.4f} {r.tier}")
