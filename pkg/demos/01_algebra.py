"""Matrix-level conditions for synchronization by groups.

Four components split into two groups {1, 2} and {3, 4}.  We build the
synchronization matrix, test a coupling matrix for the block row-sum
condition, reduce it, and check the rank condition for the canonical
control matrix.
"""

import numpy as np

from robinsync import (GroupPartition, build_control_matrix, build_sync_matrix,
                       check_cp_compatibility, kernel_basis, rank_condition,
                       reduce_matrix)

part = GroupPartition((0, 2, 4))
C = build_sync_matrix(part)
print("C_p =\n", C.entries)
print("kernel basis =\n", kernel_basis(part).vectors)

A = np.array([[1, 2, 0, 0], [2, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1.]])
rep = check_cp_compatibility(A, part)
print("\nA compatible:", rep.compatible)
print("coefficients (A e_r = sum_s alpha[s, r] e_s):\n", rep.coefficients)
print("reduced A =\n", reduce_matrix(A, C))

# a diagonal matrix with unequal entries inside a group breaks the condition
bad = check_cp_compatibility(np.diag([1.0, 2, 1, 1]), part)
print("\ndiag(1,2,1,1) compatible:", bad.compatible,
      "worst block", bad.worst_pair, "spread", bad.violation)

D = build_control_matrix(part)
print("\ncanonical D =\n", D)
print("rank(C_p D) =", rank_condition(C, D).rank_CpD, "target", part.N - part.p)
