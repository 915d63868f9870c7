"""Discrete min-norm boundary control (a discrete HUM).

The control is expanded in piecewise-linear hat functions of time that
vanish at ``t = 0`` and ``t = T``, one family per boundary node and
channel.  Because the scheme is linear, the control-to-final-state map
is a dense matrix whose columns are final states of runs from zero data;
all columns are integrated together as one batch.  A null control is the
Tychonoff-regularized least-squares solution

    min ||c||^2 + (1/eps) ||Lam c - target||^2,   target = -free final state,

computed on the Gramian ``Lam Lam^T + eps I``.  Final states are
measured in the discrete ``H^1 x L^2`` (energy) norm by default.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .algebra import (build_sync_matrix, check_cp_compatibility,
                      rank_condition, reduce_system)
from .exceptions import (DimensionError, IncompatibleMatrixError,
                         RankConditionError, SynthesisError)
from .wave import (DEFAULT_CFL, ControlSignal, State, SystemInstance,
                   _check_cfl, _integrate, time_grid)

__all__ = [
    'ControlBasis', 'ControlOperator', 'SynthesisResult',
    'assemble_control_operator', 'free_final_state', 'solve_null_control',
    'synthesize_sync_control', 'neumann_to_robin_lift', 'gramian_spectrum',
    'default_knots', 'modal_observation', 'observation_matrix',
]


@dataclass(frozen=True)
class ControlBasis:
    """Hat functions on ``n_knots`` interior knots of ``[0, T]``.

    Coefficient ``(j, b, m)`` (knot, boundary node, channel) sits at flat
    index ``(j * n_boundary + b) * M + m``.
    """

    n_knots: int
    n_boundary: int
    M: int
    T: float

    def __post_init__(self):
        if self.n_knots < 0 or self.n_boundary < 0 or self.M < 0:
            raise ValueError("basis sizes must be non-negative")

    @classmethod
    def for_system(cls, sys, T, n_knots=None):
        if n_knots is None:
            n_knots = default_knots(sys.domain, T)
        return cls(int(n_knots), sys.domain.n_boundary, sys.M, float(T))

    @property
    def K(self):
        return self.n_knots * self.n_boundary * self.M

    @property
    def knots(self):
        return np.linspace(0.0, self.T, self.n_knots + 2)[1:-1]

    def hat_matrix(self, dt, n_steps):
        """Hat values at the step times, ``(n_steps + 1, n_knots)``."""
        t = dt * np.arange(n_steps + 1)
        h = self.T / (self.n_knots + 1)
        return np.clip(1.0 - np.abs(t[:, None] - self.knots[None]) / h,
                       0.0, None)

    def signal(self, coeffs, dt, n_steps=None):
        """Sampled :class:`ControlSignal` for a coefficient vector."""
        if n_steps is None:
            n_steps = int(round(self.T / dt))
        c = np.asarray(coeffs, dtype=float).reshape(
            self.n_knots, self.n_boundary, self.M)
        samples = np.einsum('kj,jbm->kbm', self.hat_matrix(dt, n_steps), c)
        return ControlSignal(samples, dt, self.T)


def default_knots(domain, T):
    """One knot per grid spacing in time, i.e. ``round(T / dx)``.

    Never finer than half a grid spacing, which keeps the basis below
    twice the grid Nyquist frequency.
    """
    dx = min(domain.spacing)
    return max(1, min(int(round(T / dx)), int(2 * T / dx)))


def _h1_factor(domain):
    """Upper factor ``R`` with ``R^T R = K + W`` (discrete ``H^1`` Gram)."""
    S = domain.stiffness.toarray() + np.diag(domain.weights)
    return scipy.linalg.cholesky(S, lower=False)


def observation_matrix(sys, kind='energy'):
    """Rows mapping a raw stacked state ``(U, V)`` to norm coordinates.

    Parameters
    ----------
    kind : {'energy', 'l2'} or float
        ``'energy'`` measures ``U`` in the discrete ``H^1`` norm and ``V``
        in ``L^2``; ``'l2'`` uses ``L^2`` for both.  A float selects the
        low-mode ``H^1 x L^2`` coordinates of :func:`modal_observation`
        with that frequency fraction.
    """
    d, N = sys.domain, sys.N
    sw = np.sqrt(d.weights)
    if kind == 'l2':
        return np.diag(np.tile(sw, 2 * N))
    if kind == 'energy':
        R = _h1_factor(d)
        return scipy.linalg.block_diag(*([R] * N), *([np.diag(sw)] * N))
    if np.isscalar(kind) and not isinstance(kind, str):
        return modal_observation(sys, float(kind))
    raise ValueError(f"unknown observation {kind!r}")


def modal_observation(sys, fraction=0.25):
    """Rows mapping a raw stacked state to low-mode ``H^1 x L^2`` coordinates.

    Requires symmetric ``A`` and ``B``.  Keeps eigenmodes of the discrete
    operator with frequency at most ``fraction`` times the largest one,
    so the number of kept modes grows with grid refinement.
    """
    A, B = sys.coupling.A, sys.coupling.B
    if not (np.allclose(A, A.T) and np.allclose(B, B.T)):
        raise ValueError("modal observation needs symmetric A and B")
    d = sys.domain
    N = sys.N
    K = d.stiffness.toarray()
    G = np.zeros(d.n_nodes)
    G[d.boundary_nodes] = d.boundary_weights
    S = np.kron(np.eye(N), K) + np.kron(A, np.diag(d.weights)) \
        + np.kron(B, np.diag(G))
    sw = np.tile(np.sqrt(d.weights), N)
    lam, Q = np.linalg.eigh(S / sw[:, None] / sw[None, :])
    omega = np.sqrt(np.clip(lam, 0.0, None))
    keep = omega <= fraction * omega.max()
    Qk = Q[:, keep] * sw[:, None]
    top = np.sqrt(1.0 + omega[keep] ** 2)[:, None] * Qk.T
    zero = np.zeros_like(Qk.T)
    return np.block([[top, zero], [zero, Qk.T]])


@dataclass
class ControlOperator:
    """Control-to-final-state matrix for a :class:`ControlBasis`.

    ``matrix`` maps coefficients to the raw stacked final state
    ``(W(T).ravel(), W'(T).ravel())``; :meth:`observe` turns any raw
    stacked state into the coordinates in which norms are taken.
    """

    matrix: np.ndarray
    basis: ControlBasis
    system: SystemInstance = field(repr=False)
    dt: float
    n_steps: int
    observation: np.ndarray = field(repr=False)

    def observe(self, raw):
        return self.observation @ raw

    @property
    def observed(self):
        return self.observe(self.matrix)

    def apply(self, coeffs):
        return self.matrix @ coeffs


@dataclass
class SynthesisResult:
    """A synthesized control and the numbers that certify it.

    ``residual_final`` is the observed norm of the achieved final state
    (always reported); ``target_norm`` is that of the uncontrolled one.
    """

    control: ControlSignal
    coefficients: np.ndarray
    residual_final: float
    target_norm: float
    control_norm: float
    gramian_spectrum: np.ndarray
    context: dict = field(default_factory=dict, repr=False)

    @property
    def relative_residual(self):
        if self.target_norm == 0.0:
            return 0.0 if self.residual_final == 0.0 else np.inf
        return self.residual_final / self.target_norm


def _stack(U, V):
    return np.concatenate([U.reshape(U.shape[0], -1),
                           V.reshape(V.shape[0], -1)], axis=1)


def assemble_control_operator(red_sys, basis, T, dt=None,
                              cfl_factor=DEFAULT_CFL, observation='energy',
                              batch_size=512):
    """Assemble the control operator column by column.

    Each column is the final state from zero data under one unit basis
    coefficient; columns are integrated in batches of ``batch_size``.

    Parameters
    ----------
    observation : str, float or array
        Passed to :func:`observation_matrix`, or an explicit matrix acting
        on raw stacked states.
    """
    if basis.K == 0:
        raise SynthesisError("control basis is empty (K = 0)")
    d = red_sys.domain
    if dt is None:
        dt, n_steps = time_grid(d, T, cfl_factor)
    else:
        n_steps = int(round(T / dt))
    _check_cfl(d, dt, cfl_factor)
    hats = basis.hat_matrix(dt, n_steps)
    N, n, nb, M = red_sys.N, d.n_nodes, basis.n_boundary, basis.M
    cols = np.empty((2 * N * n, basis.K))
    for start in range(0, basis.K, batch_size):
        idx = np.arange(start, min(start + batch_size, basis.K))
        j, rem = np.divmod(idx, nb * M)
        b, m = np.divmod(rem, M)
        ctrl = np.zeros((n_steps + 1, idx.size, nb, M))
        ctrl[:, np.arange(idx.size), b, m] = hats[:, j]
        zero = np.zeros((idx.size, N, n))
        _, Us, Vs, _ = _integrate(red_sys.coupling, d, zero, zero, dt,
                                  n_steps, ctrl, snapshot_every=0,
                                  record_boundary=False)
        cols[:, idx] = _stack(Us[-1], Vs[-1]).T
    if isinstance(observation, str) or np.isscalar(observation):
        observation = observation_matrix(red_sys, observation)
    return ControlOperator(cols, basis, red_sys, dt, n_steps, observation)


def free_final_state(red_sys, init, T, dt=None, cfl_factor=DEFAULT_CFL):
    """Stacked ``(W(T), W'(T))`` of the uncontrolled run."""
    d = red_sys.domain
    if dt is None:
        dt, n_steps = time_grid(d, T, cfl_factor)
    else:
        n_steps = int(round(T / dt))
    _, Us, Vs, _ = _integrate(red_sys.coupling, d, init.U[None],
                              init.V[None], dt, n_steps, None,
                              snapshot_every=0, record_boundary=False)
    return _stack(Us[-1], Vs[-1])[0]


def _cg(G, y, tol, max_iter):
    history = []

    def cb(xk):
        history.append(float(np.linalg.norm(G @ xk - y)))

    x, info = scipy.sparse.linalg.cg(G, y, rtol=tol, atol=0.0,
                                     maxiter=max_iter, callback=cb)
    if info != 0:
        raise SynthesisError(
            f"conjugate gradient did not converge in {max_iter} iterations "
            f"(last residual {history[-1] if history else np.nan:.3e})",
            residual_history=history)
    return x


def solve_null_control(op, target, eps=1e-8, method='direct', cg_tol=1e-12,
                       max_iter=None):
    """Tychonoff-regularized least-squares control reaching ``target``.

    Parameters
    ----------
    op : ControlOperator
    target : array
        Raw stacked final state to reach, normally ``-free_final_state``.
    eps : float
        Regularization weight.
    method : {'direct', 'cg'}
        Cholesky solve of the Gramian, or conjugate gradients on it.
    """
    target = np.asarray(target, dtype=float)
    Lam = op.observed
    y = op.observe(target)
    if not np.any(y):
        c = np.zeros(op.basis.K)
    else:
        m, K = Lam.shape
        if method == 'direct':
            if m <= K:
                G = Lam @ Lam.T + eps * np.eye(m)
                c = Lam.T @ scipy.linalg.solve(G, y, assume_a='pos')
            else:
                G = Lam.T @ Lam + eps * np.eye(K)
                c = scipy.linalg.solve(G, Lam.T @ y, assume_a='pos')
        elif method == 'cg':
            G = Lam @ Lam.T + eps * np.eye(m)
            c = Lam.T @ _cg(G, y, cg_tol, max_iter or 10 * m)
        else:
            raise ValueError(f"unknown method {method!r}")
    achieved = Lam @ c - y
    control = op.basis.signal(c, op.dt, op.n_steps)
    return SynthesisResult(
        control=control, coefficients=c,
        residual_final=float(np.linalg.norm(achieved)),
        target_norm=float(np.linalg.norm(y)),
        control_norm=control.norm(op.system.domain),
        gramian_spectrum=gramian_spectrum(op))


def gramian_spectrum(op):
    """Singular values of the observed control operator, descending."""
    Lam = op.observed if isinstance(op, ControlOperator) else np.asarray(op)
    if Lam.size == 0:
        return np.zeros(0)
    return np.linalg.svd(Lam, compute_uv=False)


def synthesize_sync_control(full_sys, partition, init, T, eps=1e-8,
                            n_knots=None, method='direct', dt=None,
                            cfl_factor=DEFAULT_CFL, observation='energy',
                            tol=1e-9, max_iter=None):
    """Control that synchronizes ``full_sys`` by groups at time ``T``.

    The reduced system for ``W = C_p U`` is null-controlled and the
    resulting ``H`` is returned unchanged for the full system.

    Raises
    ------
    IncompatibleMatrixError
        ``A`` or ``B`` fails the row-sum condition by blocks.
    RankConditionError
        ``rank(C_p D) != N - p``.
    """
    C = build_sync_matrix(partition)
    for name, Mx in (('A', full_sys.coupling.A), ('B', full_sys.coupling.B)):
        rep = check_cp_compatibility(Mx, C.partition, tol)
        if not rep.compatible:
            raise IncompatibleMatrixError(
                f"{name} is not C_p-compatible: block ({rep.worst_pair[0]}, "
                f"{rep.worst_pair[1]}) spread {rep.violation:.3e}",
                worst_pair=rep.worst_pair, violation=rep.violation)
    rk = rank_condition(C, full_sys.coupling.D)
    if not rk.satisfies:
        raise RankConditionError(
            f"rank condition rank(C_pD) = N-p fails: rank(C_pD) = "
            f"{rk.rank_CpD}, N-p = {rk.target}")
    reduced = reduce_system(full_sys.coupling, C, tol)
    red_sys = SystemInstance(reduced.as_coupling(), full_sys.domain,
                             check_well_posed=full_sys.check_well_posed)
    if dt is None:
        dt, n_steps = time_grid(full_sys.domain, T, cfl_factor)
    init_red = init.project(C.entries)
    context = {'partition': C.partition, 'init': init, 'T': float(T),
               'reduced': reduced, 'eps': eps, 'dt': dt}
    basis = ControlBasis.for_system(red_sys, T, n_knots)
    free = free_final_state(red_sys, init_red, T, dt, cfl_factor)
    if not np.any(free):
        n_steps = int(round(T / dt))
        result = SynthesisResult(
            control=basis.signal(np.zeros(basis.K), dt, n_steps),
            coefficients=np.zeros(basis.K), residual_final=0.0,
            target_norm=0.0, control_norm=0.0,
            gramian_spectrum=np.zeros(0))
    else:
        op = assemble_control_operator(red_sys, basis, T, dt, cfl_factor,
                                       observation)
        result = solve_null_control(op, -free, eps, method, max_iter=max_iter)
    result.context.update(context)
    return result


def neumann_to_robin_lift(H_neumann, fwd_trace, D, B):
    """Robin control ``H = H_neumann + D^{-1} B U`` on the boundary.

    ``fwd_trace`` is the run of the Neumann system (``B = 0``) under
    ``H_neumann``; its boundary trace must cover every step.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if D.shape[0] != D.shape[1]:
        raise DimensionError("lift needs a square control matrix (M = N)")
    if abs(np.linalg.cond(D)) > 1e12:
        raise np.linalg.LinAlgError("control matrix D is singular")
    Ub = fwd_trace.boundary_U  # (n_steps + 1, N, n_b)
    n = min(Ub.shape[0], H_neumann.samples.shape[0])
    DinvB = np.linalg.solve(D, B)
    lift = np.einsum('ij,kjb->kbi', DinvB, Ub[:n])
    samples = H_neumann.samples[:n] + lift
    return ControlSignal(samples, H_neumann.dt, H_neumann.T)
