"""Too few controls: the control operator degenerates under refinement.

Two coupled strings with a single control channel on the first one.
The smallest singular value of the control operator, observed on the
lower quarter of the spectrum, shrinks markedly at each grid refinement;
with one channel per string it shrinks only by the basis scaling.
"""

import numpy as np

from robinsync import BoxDomain, CouplingSpec, SystemInstance, noncontrollability_probe

A = np.array([[1.0, 0.5], [0.5, 1.0]])
d = BoxDomain.interval(1.0, 26)
levels = [26, 51, 101]
for label, D in (("one channel", [[1.0], [0.0]]), ("two channels", np.eye(2))):
    sys = SystemInstance(CouplingSpec(A, np.zeros((2, 2)), D), d)
    probe = noncontrollability_probe(sys, None, levels)
    print(label)
    for lv in probe.levels:
        print(f"  nodes {lv.nodes[0]:4d}: sigma_min {lv.sigma_min:.3e}, "
              f"null-control residual / free norm {lv.residual / lv.free_norm:.2e}")
    print("  shrink factors:", np.round(probe.decay_ratios, 2))
