"""Matrix-level conditions for synchronization by groups.

Everything here is a pure function of small dense matrices.  The
central object is the synchronization matrix ``C_p`` of a group
division ``0 = n_0 < n_1 < ... < n_p = N``: a block-diagonal stack of
consecutive-difference blocks whose kernel is spanned by the group
indicator vectors ``e_1, ..., e_p``.

Conventions
-----------
* Block indices ``r, s`` are zero-based in code.
* A :class:`SimilarityCertificate` stores ``B = P @ B_hat @ inv(P)``.
  Constructions that the literature writes with the inverse convention
  (``B_hat = P B P^{-1}``) use ``inv(cert.P)`` internally.
* Numerical rank counts singular values above ``RANK_TOL * sigma_max``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import (DegenerateFamilyError, DimensionError,
                         IncompatibleMatrixError, NotDiagonalizable,
                         NotRealSpectrum, PartitionError)

__all__ = [
    'RANK_TOL', 'COND_MAX',
    'GroupPartition', 'SyncMatrix', 'KernelBasis', 'CouplingSpec',
    'ReducedSystem', 'CompatibilityReport', 'RankReport',
    'SimilarityCertificate', 'BiorthogonalFamily', 'InvarianceReport',
    'KalmanReport',
    'build_sync_matrix', 'kernel_basis', 'check_cp_compatibility',
    'zero_sum_condition', 'block_local_condition', 'reduce_matrix',
    'reduce_system', 'build_control_matrix', 'rank_condition',
    'numerical_rank', 'symmetric_similarity', 'reduced_similarity',
    'reduced_by_formula', 'biorthogonal_family', 'invariance_coefficients',
    'two_group_kalman',
]

RANK_TOL = 1e-8
COND_MAX = 1e8


@dataclass(frozen=True)
class GroupPartition:
    """Division of ``N`` components into ``p`` consecutive groups.

    Parameters
    ----------
    breakpoints : sequence of int
        ``n_0, ..., n_p`` with ``n_0 = 0`` and ``n_p = N``.
    allow_singletons : bool
        Accept groups of size one.  By default every group must hold at
        least two components.
    """

    breakpoints: tuple
    allow_singletons: bool = False

    def __post_init__(self):
        try:
            bp = tuple(int(b) for b in self.breakpoints)
        except (TypeError, ValueError) as exc:
            raise PartitionError(f"breakpoints must be integers: {exc}")
        object.__setattr__(self, 'breakpoints', bp)
        if len(bp) < 2:
            raise PartitionError("need at least two breakpoints (0 and N)")
        if bp[0] != 0:
            raise PartitionError(f"first breakpoint must be 0, got {bp[0]}")
        sizes = np.diff(bp)
        if np.any(sizes <= 0):
            raise PartitionError(f"breakpoints must increase strictly: {bp}")
        min_size = 1 if self.allow_singletons else 2
        if np.any(sizes < min_size):
            raise PartitionError(
                f"every group needs at least {min_size} components, "
                f"sizes are {tuple(int(s) for s in sizes)}")

    @classmethod
    def from_string(cls, text, allow_singletons=False):
        """Parse ``"0,2,4"``."""
        try:
            bp = [int(tok) for tok in text.replace(' ', '').split(',') if tok]
        except ValueError as exc:
            raise PartitionError(f"cannot parse partition {text!r}: {exc}")
        return cls(tuple(bp), allow_singletons=allow_singletons)

    @classmethod
    def uniform(cls, N, p, allow_singletons=False):
        """Split ``N`` components into ``p`` groups of (nearly) equal size."""
        bp = np.linspace(0, N, p + 1).round().astype(int)
        return cls(tuple(bp), allow_singletons=allow_singletons)

    @property
    def N(self):
        return self.breakpoints[-1]

    @property
    def p(self):
        return len(self.breakpoints) - 1

    @property
    def sizes(self):
        return tuple(int(s) for s in np.diff(self.breakpoints))

    def group_slice(self, r):
        """Index slice of group ``r`` (zero-based)."""
        return slice(self.breakpoints[r], self.breakpoints[r + 1])

    def __str__(self):
        return ','.join(str(b) for b in self.breakpoints)


@dataclass(frozen=True)
class KernelBasis:
    """Group indicator vectors, one row per group."""

    vectors: np.ndarray
    partition: GroupPartition

    @property
    def p(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class SyncMatrix:
    """The ``(N - p) x N`` synchronization matrix ``C_p``."""

    entries: np.ndarray
    partition: GroupPartition

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __matmul__(self, other):
        return self.entries @ np.asarray(other)

    def __rmatmul__(self, other):
        return np.asarray(other) @ self.entries

    @property
    def T(self):
        return self.entries.T


@dataclass(frozen=True)
class CouplingSpec:
    """Internal coupling ``A``, boundary coupling ``B`` and control matrix ``D``.

    ``D`` may have zero columns (no control).  ``strict=False`` skips the
    full-column-rank check on ``D`` (reduced systems may carry more
    channels than components).
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    strict: bool = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        D = np.asarray(self.D, dtype=float)
        N = A.shape[0]
        if D.ndim == 1:
            D = D.reshape(N, -1) if D.size else np.zeros((N, 0))
        if A.shape != (N, N) or B.shape != (N, N) or D.shape[0] != N:
            raise DimensionError(
                f"inconsistent coupling shapes A{A.shape} B{B.shape} D{D.shape}")
        if self.strict:
            if D.shape[1] > N:
                raise DimensionError(f"D has {D.shape[1]} > N = {N} columns")
            if D.shape[1] and numerical_rank(D) < D.shape[1]:
                raise DimensionError("D must have full column rank")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'B', B)
        object.__setattr__(self, 'D', D)

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def M(self):
        return self.D.shape[1]

    def transposed(self):
        """Couplings of the adjoint system (``A^T``, ``B^T``, no control)."""
        return CouplingSpec(self.A.T.copy(), self.B.T.copy(),
                            np.zeros((self.N, 0)))


@dataclass(frozen=True)
class ReducedSystem:
    """Reduced couplings satisfying ``C_p A = A_red C_p`` etc."""

    A_red: np.ndarray
    B_red: np.ndarray
    D_red: np.ndarray

    def as_coupling(self):
        return CouplingSpec(self.A_red, self.B_red, self.D_red, strict=False)


@dataclass(frozen=True)
class CompatibilityReport:
    """Outcome of the block row-sum test.

    ``coefficients[s, r]`` is the common sum over columns of group ``r``
    for rows of group ``s``, so that ``M e_r = sum_s coefficients[s, r] e_s``
    when compatible.
    """

    compatible: bool
    coefficients: np.ndarray
    violation: float
    worst_pair: tuple

    def __bool__(self):
        return self.compatible


@dataclass(frozen=True)
class RankReport:
    rank_CpD: int
    target: int

    @property
    def satisfies(self):
        return self.rank_CpD == self.target

    def __bool__(self):
        return self.satisfies


@dataclass(frozen=True)
class SimilarityCertificate:
    """Witness that ``B = P @ B_hat @ inv(P)`` with ``B_hat`` symmetric."""

    P: np.ndarray
    B_hat: np.ndarray
    residual: float

    @property
    def P_inv(self):
        return np.linalg.inv(self.P)

    def reconstruct(self):
        return self.P @ self.B_hat @ self.P_inv


@dataclass(frozen=True)
class BiorthogonalFamily:
    """Rows ``E_1..E_p`` with ``(E_r, e_s) = delta_rs``."""

    vectors: np.ndarray
    source: np.ndarray = field(repr=False, default=None)

    @property
    def p(self):
        return self.vectors.shape[0]

    def gram(self, basis):
        return self.vectors @ basis.vectors.T


@dataclass(frozen=True)
class InvarianceReport:
    invariant: bool
    coefficients: np.ndarray
    residual: float

    def __bool__(self):
        return self.invariant


@dataclass(frozen=True)
class KalmanReport:
    L: np.ndarray
    Lambda: np.ndarray
    Lambda_hat: np.ndarray
    D_hat: np.ndarray
    rank: int


def numerical_rank(X, tol=RANK_TOL):
    """Count singular values above ``tol * sigma_max``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.size == 0:
        return 0
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _as_partition(partition):
    if isinstance(partition, GroupPartition):
        return partition
    if isinstance(partition, str):
        return GroupPartition.from_string(partition)
    return GroupPartition(tuple(partition))


def _square(M, N=None, name='M'):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    if N is not None and M.shape[0] != N:
        raise DimensionError(f"{name} must be {N}x{N}, got {M.shape}")
    return M


def build_sync_matrix(partition):
    """Assemble ``C_p`` for a group division.

    Examples
    --------
    >>> build_sync_matrix(GroupPartition((0, 2, 4))).entries
    array([[ 1., -1.,  0.,  0.],
           [ 0.,  0.,  1., -1.]])
    """
    partition = _as_partition(partition)
    N, p = partition.N, partition.p
    C = np.zeros((N - p, N))
    row = 0
    for r in range(p):
        lo, hi = partition.breakpoints[r], partition.breakpoints[r + 1]
        for i in range(lo, hi - 1):
            C[row, i] = 1.0
            C[row, i + 1] = -1.0
            row += 1
    return SyncMatrix(C, partition)


def kernel_basis(partition):
    """Indicator vectors ``e_r`` spanning ``Ker(C_p)``."""
    partition = _as_partition(partition)
    E = np.zeros((partition.p, partition.N))
    for r in range(partition.p):
        E[r, partition.group_slice(r)] = 1.0
    return KernelBasis(E, partition)


def _block_row_sums(M, partition):
    # S[i, r] = sum of row i over the columns of group r
    return np.stack([M[:, partition.group_slice(r)].sum(axis=1)
                     for r in range(partition.p)], axis=1)


def check_cp_compatibility(M, partition, tol=1e-9):
    """Row-sum condition by blocks.

    ``M`` is compatible when, for every block pair ``(s, r)``, the sums of
    ``M[i, group r]`` agree across all rows ``i`` of group ``s``.  The
    spread is measured against ``tol * ||M||_2``.
    """
    partition = _as_partition(partition)
    M = _square(M, partition.N)
    p = partition.p
    S = _block_row_sums(M, partition)
    coeffs = np.zeros((p, p))
    spread = np.zeros((p, p))
    for s in range(p):
        block = S[partition.group_slice(s)]
        coeffs[s] = block.mean(axis=0)
        spread[s] = block.max(axis=0) - block.min(axis=0)
    worst = np.unravel_index(np.argmax(spread), spread.shape)
    violation = float(spread[worst])
    scale = np.linalg.norm(M, 2) if M.size else 0.0
    return CompatibilityReport(compatible=violation <= tol * scale,
                               coefficients=coeffs, violation=violation,
                               worst_pair=(int(worst[0]), int(worst[1])))


def zero_sum_condition(M, partition, tol=1e-9):
    """True when ``M e_r = 0`` for every group (all block-row sums vanish)."""
    partition = _as_partition(partition)
    M = _square(M, partition.N)
    S = _block_row_sums(M, partition)
    scale = np.linalg.norm(M, 2)
    return bool(np.abs(S).max(initial=0.0) <= tol * scale)


def block_local_condition(M, partition, tol=1e-9):
    """True when ``M e_r`` is supported on the coordinates of group ``r``."""
    partition = _as_partition(partition)
    M = _square(M, partition.N)
    S = _block_row_sums(M, partition)
    scale = np.linalg.norm(M, 2)
    worst = 0.0
    for r in range(partition.p):
        outside = np.ones(partition.N, dtype=bool)
        outside[partition.group_slice(r)] = False
        worst = max(worst, np.abs(S[outside, r]).max(initial=0.0))
    return bool(worst <= tol * scale)


def reduce_matrix(M, C, tol=1e-9):
    """Reduced matrix ``M_red`` with ``C_p M = M_red C_p``.

    Uses the right inverse ``M_red = C M C^T (C C^T)^{-1}``, which is the
    unique solution once ``M`` is compatible.

    Raises
    ------
    IncompatibleMatrixError
        Carrying the worst-violating block pair.
    """
    if not isinstance(C, SyncMatrix):
        raise TypeError("C must be a SyncMatrix")
    Cm = C.entries
    M = _square(M, Cm.shape[1])
    report = check_cp_compatibility(M, C.partition, tol)
    if not report.compatible:
        s, r = report.worst_pair
        raise IncompatibleMatrixError(
            f"matrix is not C_p-compatible: block-row sums of block "
            f"({s}, {r}) differ by {report.violation:.3e}",
            worst_pair=report.worst_pair, violation=report.violation)
    if Cm.shape[0] == 0:
        return np.zeros((0, 0))
    G = Cm @ Cm.T
    X = Cm @ M @ Cm.T
    # G symmetric: M_red = X G^{-1}  <=>  G M_red^T = X^T
    return scipy.linalg.solve(G, X.T, assume_a='pos').T


def reduce_system(coupling, C, tol=1e-9):
    """Apply :func:`reduce_matrix` to ``A`` and ``B``; ``D_red = C_p D``."""
    return ReducedSystem(A_red=reduce_matrix(coupling.A, C, tol),
                         B_red=reduce_matrix(coupling.B, C, tol),
                         D_red=C.entries @ coupling.D)


def build_control_matrix(partition, family=None):
    """Control matrix ``D`` whose transpose kills a ``p``-dimensional space.

    With ``family=None`` the canonical choice ``D = C_p^T`` is returned, so
    ``Ker(D^T) = Ker(C_p)``.  Given a :class:`BiorthogonalFamily`, the
    columns of ``D`` are an orthonormal basis of ``span(E)^perp`` and
    ``Ker(D^T) = span(E)``.
    """
    partition = _as_partition(partition)
    if family is None:
        return build_sync_matrix(partition).entries.T.copy()
    E = np.atleast_2d(np.asarray(getattr(family, 'vectors', family),
                                 dtype=float))
    if E.shape != (partition.p, partition.N):
        raise DegenerateFamilyError(
            f"family must hold {partition.p} vectors of length "
            f"{partition.N}, got shape {E.shape}")
    if numerical_rank(E) != partition.p:
        raise DegenerateFamilyError("family vectors are linearly dependent")
    return scipy.linalg.null_space(E, rcond=RANK_TOL)


def rank_condition(C, D, tol=RANK_TOL):
    """Check ``rank(C_p D) = N - p``."""
    Cm = np.asarray(C.entries if isinstance(C, SyncMatrix) else C, float)
    D = np.asarray(D, dtype=float).reshape(Cm.shape[1], -1)
    return RankReport(rank_CpD=numerical_rank(Cm @ D, tol),
                      target=Cm.shape[0])


def symmetric_similarity(B, tol=1e-9, cond_max=COND_MAX):
    """Certify that ``B`` is similar to a real symmetric matrix.

    Symmetric input short-circuits to ``P = I``.  Otherwise ``B`` is
    eigendecomposed; the certificate is ``P = eigenvectors`` (unit
    columns) and ``B_hat = diag(eigenvalues)``.

    Raises
    ------
    NotRealSpectrum
        An eigenvalue has imaginary part above ``tol * ||B||``.
    NotDiagonalizable
        The eigenvector matrix has condition number above ``cond_max``.
    """
    B = _square(B, name='B')
    n = B.shape[0]
    scale = max(np.linalg.norm(B, 2), np.finfo(float).tiny)
    if np.linalg.norm(B - B.T, 2) <= tol * scale:
        B_hat = B if np.array_equal(B, B.T) else 0.5 * (B + B.T)
        return SimilarityCertificate(np.eye(n), B_hat,
                                     float(np.linalg.norm(B - B_hat, 2)))
    w, V = np.linalg.eig(B)
    if np.any(np.abs(w.imag) > tol * scale):
        raise NotRealSpectrum(
            f"eigenvalues {w[np.abs(w.imag) > tol * scale]} are not real")
    w = w.real
    V = np.real_if_close(V, tol=1e6).real
    V = V / np.linalg.norm(V, axis=0)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_max:
        raise NotDiagonalizable(
            f"eigenvector matrix condition number {cond:.3e} exceeds "
            f"{cond_max:.1e}")
    order = np.argsort(w, kind='stable')
    P, B_hat = V[:, order], np.diag(w[order])
    residual = np.linalg.norm(B - P @ np.linalg.solve(P.T, B_hat.T).T, 2)
    return SimilarityCertificate(P, B_hat, float(residual))


def _sym_sqrt(G, inverse=False):
    w, Q = np.linalg.eigh(0.5 * (G + G.T))
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("matrix is not positive definite")
    d = w ** (-0.5 if inverse else 0.5)
    return (Q * d) @ Q.T


def reduced_similarity(cert, C, tol=1e-9):
    """Certificate for the reduced boundary matrix.

    With ``B = P B_hat P^{-1}`` and ``G = C P P^T C^T``, the reduced
    matrix is ``X G^{-1}`` where ``X = C P B_hat P^T C^T``; it equals
    ``G^{1/2} S G^{-1/2}`` with the symmetric ``S = G^{-1/2} X G^{-1/2}``.
    The returned certificate has ``P = G^{1/2}`` and ``B_hat = S``, and
    its residual is measured against :func:`reduce_matrix`.
    """
    B = cert.reconstruct()
    report = check_cp_compatibility(B, C.partition, tol)
    if not report.compatible:
        raise IncompatibleMatrixError(
            f"B is not C_p-compatible (spread {report.violation:.3e})",
            worst_pair=report.worst_pair, violation=report.violation)
    Cm, P = C.entries, cert.P
    CP = Cm @ P
    G = CP @ CP.T
    X = CP @ cert.B_hat @ CP.T
    G_half, G_mhalf = _sym_sqrt(G), _sym_sqrt(G, inverse=True)
    S = G_mhalf @ X @ G_mhalf
    S = 0.5 * (S + S.T)
    B_red = reduce_matrix(B, C, tol=max(tol, 1e-6))
    recon = G_half @ S @ G_mhalf
    return SimilarityCertificate(G_half, S,
                                 float(np.linalg.norm(B_red - recon, 2)))


def reduced_by_formula(cert, C):
    """``C P B_hat P^T C^T (C P P^T C^T)^{-1}``, the direct formula."""
    CP = C.entries @ cert.P
    G = CP @ CP.T
    X = CP @ cert.B_hat @ CP.T
    return scipy.linalg.solve(G, X.T, assume_a='pos').T


def biorthogonal_family(cert, basis):
    """Family ``E_r = Q^T Q e_r`` (``Q = P^{-1}``), normalized so ``(E_r, e_s) = delta_rs``.

    ``span{E_r}`` is invariant under ``B^T`` whenever ``B`` is
    ``C_p``-compatible, because ``Q^T Q`` intertwines ``B`` and ``B^T``.
    """
    Q = cert.P_inv
    e = basis.vectors
    E = e @ Q.T @ Q
    G = E @ e.T
    if numerical_rank(G) < basis.p:
        raise DegenerateFamilyError(
            "Gram matrix (E_r, e_s) is singular; certificate is corrupt")
    E = np.linalg.solve(G, E)
    return BiorthogonalFamily(E, source=cert.P)


def invariance_coefficients(M, family, tol=1e-9):
    """Least-squares fit of ``M^T E_r = sum_s c[r, s] E_s``.

    ``invariant`` holds when the fit residual is at most
    ``tol * ||M|| * ||E||`` (spectral norms).
    """
    E = np.asarray(family.vectors, dtype=float)
    M = _square(M, E.shape[1])
    target = E @ M  # row r is (M^T E_r)^T
    cT, *_ = np.linalg.lstsq(E.T, target.T, rcond=None)
    c = cT.T
    residual = float(np.linalg.norm(c @ E - target, 2))
    scale = np.linalg.norm(M, 2) * np.linalg.norm(E, 2)
    return InvarianceReport(invariant=residual <= tol * scale,
                            coefficients=c, residual=residual)


def two_group_kalman(cert, basis, D2, tol=RANK_TOL):
    """Projected two-state boundary system and its Kalman rank.

    With ``Q = P^{-1}`` (so ``B_hat = Q B Q^{-1}``): ``L_ij = (Q e_i, Q e_j)``,
    ``Lambda_ij = (B_hat Q e_i, Q e_j)``, ``Lambda_hat = L^{-1/2} Lambda L^{-1/2}``
    and ``D_hat = L^{-1/2} D2``.  ``rank`` is the numerical rank of
    ``[D_hat | Lambda_hat D_hat]``.
    """
    if basis.p != 2:
        raise DimensionError(f"two-group test needs p = 2, got p = {basis.p}")
    D2 = np.asarray(D2, dtype=float).reshape(-1)
    if D2.shape != (2,):
        raise DimensionError("D2 must be a 2-vector")
    if not np.any(D2):
        raise ValueError("D2 must be nonzero")
    Qe = cert.P_inv @ basis.vectors.T  # columns Q e_i
    L = Qe.T @ Qe
    Lam = Qe.T @ cert.B_hat @ Qe
    Lam = 0.5 * (Lam + Lam.T)
    L_mhalf = _sym_sqrt(L, inverse=True)
    Lam_hat = L_mhalf @ Lam @ L_mhalf
    D_hat = L_mhalf @ D2
    K = np.column_stack([D_hat, Lam_hat @ D_hat])
    return KalmanReport(L=L, Lambda=Lam, Lambda_hat=Lam_hat, D_hat=D_hat,
                        rank=numerical_rank(K, tol))
