"""Which synchronized state is reached, and does it depend on the control?

Four components in two groups, with the control acting only on the
complement of the group means.  When the coupling leaves the span of the
group-mean functionals invariant, the group means evolve on their own and
two different controls reach the same state.  A generic compatible
coupling breaks this, and the state reached depends on the control.
"""

import numpy as np

from robinsync import (BoxDomain, CouplingSpec, GroupPartition, SolverConfig,
                       State, SystemInstance, biorthogonal_family,
                       build_control_matrix, compare_state_independence,
                       estimate_check, kernel_basis, symmetric_similarity)

part = GroupPartition((0, 2, 4))
couplings = {
    'invariant': np.array([[2, -1, 0.5, 0.5], [-1, 2, 0.5, 0.5],
                           [0.5, 0.5, 1, 0], [0.5, 0.5, 0, 1.0]]),
    'generic': np.array([[2, -1, 0.3, 0.7], [0.4, 0.6, 0.9, 0.1],
                         [1.0, 0.2, 1, 0], [-0.3, 1.5, 0.4, 0.6]]),
}
B = np.zeros((4, 4))
family = biorthogonal_family(symmetric_similarity(B), kernel_basis(part))
D = build_control_matrix(part, family)
d = BoxDomain.interval(1.0, 51)
x = d.coords[0]
init = State(np.stack([np.cos(np.pi * x), -np.cos(np.pi * x) + 0.1,
                       np.sin(np.pi * x) ** 2, 0 * x]), np.zeros((4, 51)))

for name, A in couplings.items():
    sys = SystemInstance(CouplingSpec(A, B, D), d)
    r = compare_state_independence(sys, part, family, init,
                                   SolverConfig(4.0), SolverConfig(3.0, 1e-9, 100))
    print(f"{name:9s}: discrepancy between two controls {r.discrepancy:.2e} "
          f"[{r.status}]")

sys = SystemInstance(CouplingSpec(couplings['generic'], B, D), d)
sync = State(np.stack([np.cos(np.pi * x)] * 2 + [x * x] * 2), np.zeros((4, 51)))
trans = State(np.stack([np.sin(np.pi * x) ** 2, -np.sin(np.pi * x) ** 2,
                        np.cos(2 * np.pi * x), -np.cos(2 * np.pi * x)]),
              np.zeros((4, 51)))
est = estimate_check(sys, part, family, sync, trans, 4.0)
for s, r in zip(est.scales, est.ratios):
    print(f"transverse scale {s:5.3f}: deviation / ||C_p data|| = {r:.4f}")
