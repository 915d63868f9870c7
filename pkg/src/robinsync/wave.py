"""Finite-difference simulation of coupled wave systems with Robin boundary.

The system is

    U'' - Laplace(U) + A U = 0          in the box,
    d_nu U + B U = D H                  on its boundary,

for ``N`` components on an interval or an axis-aligned rectangle with
unit wave speed.  Space is discretized with second-order centered
differences; the Robin condition is closed with a ghost node on every
face.  Eliminating the ghosts gives the weighted form

    W U'' = -K U - W (A U) - G (B U - D H),

with ``W`` the trapezoid weights, ``K`` the (symmetric) stiffness matrix
and ``G`` the trapezoid weights of the boundary faces.  Time integration
is velocity Verlet (leapfrog with half-step velocities).

Arrays are laid out as ``(N, n_nodes)`` with the spatial grid flattened
in C order.  Internal routines accept an extra leading batch axis so
that many independent runs share one loop.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .algebra import CouplingSpec, symmetric_similarity
from .exceptions import BlowUpError, CFLViolation, DimensionError

__all__ = [
    'BoxDomain', 'SystemInstance', 'State', 'ControlSignal',
    'SimulationTrace', 'time_grid', 'step', 'simulate', 'simulate_adjoint',
    'energy', 'pairing', 'boundary_work', 'duality_residual',
    'robin_via_neumann', 'mean_zero', 'state_norm', 'robin_compatible',
]

DEFAULT_CFL = 0.5
_CHECK_EVERY = 64


@dataclass(frozen=True)
class BoxDomain:
    """Interval or rectangle ``[0, L_1] x [0, L_2]`` with a uniform grid.

    Parameters
    ----------
    lengths : tuple of float
        Extent per axis; its length sets the dimension (1 or 2).
    grid_nodes : tuple of int
        Node count per axis, at least 8 each.
    """

    lengths: tuple
    grid_nodes: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        nodes = tuple(int(v) for v in np.atleast_1d(self.grid_nodes))
        if len(lengths) not in (1, 2) or len(nodes) != len(lengths):
            raise DimensionError(
                f"need 1 or 2 axes with matching node counts, got "
                f"lengths={lengths} nodes={nodes}")
        if any(v <= 0 for v in lengths):
            raise DimensionError(f"lengths must be positive: {lengths}")
        if any(n < 8 for n in nodes):
            raise DimensionError(f"need at least 8 nodes per axis: {nodes}")
        object.__setattr__(self, 'lengths', lengths)
        object.__setattr__(self, 'grid_nodes', nodes)

    @classmethod
    def interval(cls, length, nodes):
        return cls((length,), (nodes,))

    @property
    def dim(self):
        return len(self.lengths)

    @property
    def spacing(self):
        return tuple(L / (n - 1) for L, n in zip(self.lengths, self.grid_nodes))

    @property
    def n_nodes(self):
        return int(np.prod(self.grid_nodes))

    @property
    def diameter(self):
        return float(np.hypot.reduce(self.lengths)) if self.dim > 1 \
            else self.lengths[0]

    @property
    def h_eff(self):
        """Spacing entering the CFL bound (``dx`` in 1D, ``dx/sqrt(2)`` in 2D)."""
        return min(self.spacing) / np.sqrt(self.dim)

    @cached_property
    def axes(self):
        return tuple(np.linspace(0.0, L, n)
                     for L, n in zip(self.lengths, self.grid_nodes))

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(dim, n_nodes)``."""
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh])

    @cached_property
    def _axis_ops(self):
        ops = []
        for n, h in zip(self.grid_nodes, self.spacing):
            w = np.full(n, h)
            w[[0, -1]] = 0.5 * h
            main = np.full(n, 2.0 / h)
            main[[0, -1]] = 1.0 / h
            off = np.full(n - 1, -1.0 / h)
            K = sp.diags([off, main, off], [-1, 0, 1], format='csr')
            g = np.zeros(n)
            g[[0, -1]] = 1.0
            ops.append((w, K, g))
        return ops

    @cached_property
    def weights(self):
        """Trapezoid weights of the interior quadrature."""
        if self.dim == 1:
            return self._axis_ops[0][0].copy()
        (wx, _, _), (wy, _, _) = self._axis_ops
        return np.kron(wx, wy)

    @cached_property
    def stiffness(self):
        if self.dim == 1:
            return self._axis_ops[0][1]
        (wx, Kx, _), (wy, Ky, _) = self._axis_ops
        K = sp.kron(Kx, sp.diags(wy)) + sp.kron(sp.diags(wx), Ky)
        return K.tocsr()

    @cached_property
    def _gamma_full(self):
        if self.dim == 1:
            return self._axis_ops[0][2].copy()
        (wx, _, gx), (wy, _, gy) = self._axis_ops
        return np.kron(gx, wy) + np.kron(wx, gy)

    @cached_property
    def boundary_nodes(self):
        """Flat indices of nodes on the boundary, increasing."""
        return np.flatnonzero(self._gamma_full > 0)

    @cached_property
    def boundary_weights(self):
        """Trapezoid weights of the boundary quadrature (two ones in 1D)."""
        return self._gamma_full[self.boundary_nodes].copy()

    @property
    def n_boundary(self):
        return self.boundary_nodes.size

    @cached_property
    def _boundary_scale(self):
        return self.boundary_weights / self.weights[self.boundary_nodes]

    def laplacian(self, U):
        """Discrete Laplacian with homogeneous Neumann closure, last axis."""
        flat = U.reshape(-1, self.n_nodes)
        out = -(self.stiffness @ flat.T).T / self.weights
        return out.reshape(U.shape)

    def integrate(self, f):
        """Trapezoid integral over the last axis."""
        return np.asarray(f) @ self.weights

    def field(self, func):
        """Evaluate ``func(*coords)`` on the flattened grid."""
        return np.asarray(func(*self.coords), dtype=float) * np.ones(
            self.n_nodes)

    def check_geometry(self, x0=None):
        """Multiplier condition ``(x - x0, nu) > 0`` on all faces (center ``x0``)."""
        center = np.asarray(x0 if x0 is not None
                            else [0.5 * L for L in self.lengths])
        for k, L in enumerate(self.lengths):
            if not (0.0 < center[k] < L):
                return False
        return True


@dataclass(frozen=True)
class SystemInstance:
    """A coupling together with the domain it lives on.

    ``B`` must be similar to a real symmetric matrix; this is checked at
    construction unless ``check_well_posed=False``.
    """

    coupling: CouplingSpec
    domain: BoxDomain
    check_well_posed: bool = True

    def __post_init__(self):
        if self.check_well_posed:
            symmetric_similarity(self.coupling.B, tol=1e-9)

    @property
    def N(self):
        return self.coupling.N

    @property
    def M(self):
        return self.coupling.M

    def adjoint(self):
        return SystemInstance(self.coupling.transposed(), self.domain,
                              self.check_well_posed)

    def with_coupling(self, coupling):
        return SystemInstance(coupling, self.domain, self.check_well_posed)


@dataclass
class State:
    """Displacement ``U`` and velocity ``V``, each ``(N, n_nodes)``, at time ``t``."""

    U: np.ndarray
    V: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if self.U.shape != self.V.shape:
            raise DimensionError(
                f"U{self.U.shape} and V{self.V.shape} differ in shape")

    @classmethod
    def zeros(cls, N, domain, t=0.0):
        z = np.zeros((N, domain.n_nodes))
        return cls(z, z.copy(), t)

    @property
    def N(self):
        return self.U.shape[0]

    def stacked(self):
        return np.concatenate([self.U.ravel(), self.V.ravel()])

    def project(self, R):
        """Apply a ``(k, N)`` matrix componentwise: ``(R U, R V)``."""
        R = np.atleast_2d(R)
        return State(R @ self.U, R @ self.V, self.t)

    def __add__(self, other):
        return State(self.U + other.U, self.V + other.V, self.t)

    def __mul__(self, c):
        return State(c * self.U, c * self.V, self.t)

    __rmul__ = __mul__


@dataclass
class ControlSignal:
    """Boundary control sampled on the time grid.

    ``samples[k, b, m]`` is channel ``m`` at boundary node ``b`` and time
    ``k * dt``.  Steps beyond the stored samples, and samples past
    ``T``, are treated as zero.
    """

    samples: np.ndarray
    dt: float
    T: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3:
            raise DimensionError("control samples must be (time, node, channel)")
        t = self.dt * np.arange(self.samples.shape[0])
        outside = t > self.T * (1 + 1e-12) + 1e-14
        if np.any(self.samples[outside]):
            raise ValueError("control must vanish outside its support [0, T]")

    @classmethod
    def zeros(cls, domain, M, dt, T):
        n = int(round(T / dt)) + 1
        return cls(np.zeros((n, domain.n_boundary, M)), dt, T)

    @classmethod
    def from_function(cls, domain, M, dt, T, func):
        """``func(t, boundary_coords) -> (n_boundary, M)`` array."""
        n = int(round(T / dt)) + 1
        xb = domain.coords[:, domain.boundary_nodes]
        out = np.zeros((n, domain.n_boundary, M))
        for k in range(n):
            out[k] = np.asarray(func(k * dt, xb)).reshape(domain.n_boundary, M)
        return cls(out, dt, T)

    @property
    def M(self):
        return self.samples.shape[2]

    @property
    def times(self):
        return self.dt * np.arange(self.samples.shape[0])

    def at(self, k):
        if 0 <= k < self.samples.shape[0]:
            return self.samples[k]
        return np.zeros(self.samples.shape[1:])

    def norm(self, domain):
        """Discrete ``L^2(0, T; L^2(boundary))`` norm (trapezoid in time and space)."""
        sq = np.einsum('kbm,b->k', self.samples ** 2, domain.boundary_weights)
        wt = np.full(sq.size, self.dt)
        wt[[0, -1]] *= 0.5
        return float(np.sqrt(wt @ sq))

    def __add__(self, other):
        n = max(len(self.samples), len(other.samples))
        a = np.zeros((n,) + self.samples.shape[1:])
        a[:len(self.samples)] += self.samples
        a[:len(other.samples)] += other.samples
        return ControlSignal(a, self.dt, max(self.T, other.T))

    def __mul__(self, c):
        return ControlSignal(c * self.samples, self.dt, self.T)

    __rmul__ = __mul__


@dataclass
class SimulationTrace:
    """Snapshots of a run plus the boundary trace at every step.

    Attributes
    ----------
    times : (n_snap,) array
    U, V : (n_snap, N, n_nodes) arrays
    boundary_times : (n_steps + 1,) array
    boundary_U : (n_steps + 1, N, n_boundary) array
    energy : (n_snap,) array or None
    """

    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    boundary_times: np.ndarray
    boundary_U: np.ndarray
    dt: float
    system: SystemInstance = field(repr=False)
    energy: np.ndarray = None

    @property
    def domain(self):
        return self.system.domain

    def state(self, i=-1):
        return State(self.U[i], self.V[i], float(self.times[i]))

    @property
    def final(self):
        return self.state(-1)

    def project(self, R):
        """Componentwise projection ``R U`` of all snapshots, ``(n_snap, k, n)``."""
        return np.einsum('kn,snx->skx', np.atleast_2d(R), self.U), \
            np.einsum('kn,snx->skx', np.atleast_2d(R), self.V)


def mean_zero(state, domain):
    """Subtract each component's spatial mean from ``U`` and ``V``."""
    vol = domain.weights.sum()
    mu = domain.integrate(state.U) / vol
    mv = domain.integrate(state.V) / vol
    return State(state.U - mu[:, None], state.V - mv[:, None], state.t)


def robin_compatible(domain, G, B):
    """1D profile ``G + B G(0) psi_0 - B G(L) psi_1`` meeting ``d_nu U + B U = 0``.

    ``G`` is an ``(N, n_nodes)`` array sampled from functions with zero
    slope at both ends (cosine series, say); ``psi_0`` and ``psi_1`` are
    cubic bumps carrying unit slope at one end and vanishing, with their
    slope, at the other.
    """
    if domain.dim != 1:
        raise DimensionError("robin_compatible is 1D only")
    G = np.atleast_2d(np.asarray(G, dtype=float))
    B = np.atleast_2d(B)
    L = domain.lengths[0]
    x = domain.axes[0]
    psi0 = x * (1.0 - x / L) ** 2
    psi1 = -(L - x) * (x / L) ** 2
    return G + np.outer(B @ G[:, 0], psi0) - np.outer(B @ G[:, -1], psi1)


def state_norm(U, V, domain):
    """``sqrt(int |U|^2 + |V|^2)`` with trapezoid weights; trailing axes ``(N, n)``."""
    sq = (np.asarray(U) ** 2 + np.asarray(V) ** 2) @ domain.weights
    return np.sqrt(np.sum(sq, axis=-1))


def time_grid(domain, T, cfl_factor=DEFAULT_CFL, dt=None, even=True):
    """Pick ``(dt, n_steps)`` with ``n_steps * dt == T``.

    Without ``dt`` the step is the largest value not exceeding
    ``cfl_factor * h_eff`` that divides ``T`` into an (even) integer
    number of steps.
    """
    if dt is None:
        n = int(np.ceil(T / (cfl_factor * domain.h_eff) - 1e-9))
        if even and n % 2:
            n += 1
        n = max(n, 1)
        return T / n, n
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return float(dt), n


def _check_cfl(domain, dt, cfl_factor):
    limit = cfl_factor * domain.h_eff
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(
            f"dt={dt:.4g} exceeds CFL limit {limit:.4g} "
            f"(cfl_factor={cfl_factor}, h_eff={domain.h_eff:.4g})")


class _Operator:
    """Right-hand side ``U'' = F(U, H)`` for a batch ``(batch, N, n)``."""

    def __init__(self, coupling, domain):
        self.A = coupling.A
        self.B = coupling.B
        self.D = coupling.D
        self.domain = domain
        self.bidx = domain.boundary_nodes
        self.bscale = domain._boundary_scale
        self.has_A = bool(np.any(self.A))
        self.has_B = bool(np.any(self.B))

    def __call__(self, U, H=None):
        acc = self.domain.laplacian(U)
        if self.has_A:
            acc -= np.einsum('ij,bjn->bin', self.A, U)
        flux = None
        if self.has_B:
            flux = np.einsum('ij,bjk->bik', self.B, U[..., self.bidx])
        if H is not None and self.D.shape[1]:
            dh = np.einsum('im,bkm->bik', self.D, H)
            flux = -dh if flux is None else flux - dh
        if flux is not None:
            acc[..., self.bidx] -= self.bscale * flux
        return acc


def _integrate(coupling, domain, U0, V0, dt, n_steps, control=None,
               snapshot_every=1, record_boundary=True):
    """Velocity-Verlet loop over a batch.

    ``control`` is ``None`` or an array ``(n_t, batch, n_boundary, M)``
    (steps past ``n_t`` see zero control).  Returns snapshot indices,
    ``U`` and ``V`` snapshots ``(n_snap, batch, N, n)`` and the boundary
    trace ``(n_steps + 1, batch, N, n_b)`` (or ``None``).
    """
    F = _Operator(coupling, domain)
    U = np.array(U0, dtype=float, copy=True)
    V = np.array(V0, dtype=float, copy=True)
    n_t = 0 if control is None else control.shape[0]

    def H(k):
        return control[k] if k < n_t else None

    every = snapshot_every if snapshot_every else n_steps or 1
    snap_idx = [0]
    snaps_U, snaps_V = [U.copy()], [V.copy()]
    bidx = domain.boundary_nodes
    btrace = None
    if record_boundary:
        btrace = np.empty((n_steps + 1,) + U.shape[:-1] + (bidx.size,))
        btrace[0] = U[..., bidx]
    half = 0.5 * dt
    acc = F(U, H(0))
    for k in range(1, n_steps + 1):
        V += half * acc
        U += dt * V
        acc = F(U, H(k))
        V += half * acc
        if record_boundary:
            btrace[k] = U[..., bidx]
        if k % _CHECK_EVERY == 0 or k == n_steps:
            if not (np.isfinite(U).all() and np.isfinite(V).all()):
                raise BlowUpError(f"non-finite state at step {k}", step=k)
        if k % every == 0 or k == n_steps:
            snap_idx.append(k)
            snaps_U.append(U.copy())
            snaps_V.append(V.copy())
    return (np.asarray(snap_idx), np.stack(snaps_U), np.stack(snaps_V),
            btrace)


def step(state, sys, control_slice, dt, control_next=None,
         cfl_factor=DEFAULT_CFL):
    """Advance one velocity-Verlet step.

    Parameters
    ----------
    state : State
    sys : SystemInstance
    control_slice : (n_boundary, M) array or None
        Boundary control at ``state.t``.
    dt : float
    control_next : (n_boundary, M) array, optional
        Control at ``state.t + dt``; defaults to ``control_slice``.
    """
    _check_cfl(sys.domain, dt, cfl_factor)
    if control_slice is not None and control_next is None:
        control_next = control_slice
    ctrl = None
    if control_slice is not None:
        ctrl = np.stack([control_slice, control_next])[:, None]
    _, Us, Vs, _ = _integrate(sys.coupling, sys.domain, state.U[None],
                              state.V[None], dt, 1, ctrl,
                              record_boundary=False)
    return State(Us[-1, 0], Vs[-1, 0], state.t + dt)


def _control_array(control, sys, dt, n_steps):
    if control is None or sys.M == 0:
        return None
    if abs(control.dt - dt) > 1e-12 * dt:
        raise ValueError(f"control dt={control.dt} differs from step dt={dt}")
    if control.samples.shape[1:] != (sys.domain.n_boundary, sys.M):
        raise DimensionError(
            f"control samples {control.samples.shape[1:]} do not match "
            f"(n_boundary, M) = {(sys.domain.n_boundary, sys.M)}")
    return control.samples[:n_steps + 1, None]


def simulate(sys, init, control=None, T=None, snapshot_every=1, dt=None,
             cfl_factor=DEFAULT_CFL, compute_energy=True):
    """Run the controlled system from ``init`` over ``[0, T]``.

    The time step is taken from ``control`` when given, else from ``dt``,
    else chosen from ``cfl_factor``.  Runs are deterministic.

    Returns
    -------
    SimulationTrace
    """
    domain = sys.domain
    if init.U.shape != (sys.N, domain.n_nodes):
        raise DimensionError(
            f"initial state {init.U.shape} does not match "
            f"(N, n_nodes) = {(sys.N, domain.n_nodes)}")
    if T is None:
        if control is None:
            raise ValueError("need T or a control signal")
        T = control.T
    if dt is None and control is not None:
        dt = control.dt
    if dt is None:
        dt, n_steps = time_grid(domain, T, cfl_factor)
    else:
        n_steps = max(int(np.ceil(T / dt - 1e-9)), 1)
    _check_cfl(domain, dt, cfl_factor)
    ctrl = _control_array(control, sys, dt, n_steps)
    idx, Us, Vs, bt = _integrate(sys.coupling, domain, init.U[None],
                                 init.V[None], dt, n_steps, ctrl,
                                 snapshot_every)
    trace = SimulationTrace(times=init.t + dt * idx, U=Us[:, 0], V=Vs[:, 0],
                            boundary_times=init.t + dt * np.arange(n_steps + 1),
                            boundary_U=bt[:, 0], dt=dt, system=sys)
    if compute_energy:
        trace.energy = np.array([energy(trace.state(i), sys)
                                 for i in range(len(idx))])
    return trace


def simulate_adjoint(sys, init, T, snapshot_every=1, dt=None,
                     cfl_factor=DEFAULT_CFL):
    """Solve the adjoint system (``A^T``, ``B^T``, homogeneous Robin)."""
    return simulate(sys.adjoint(), init, None, T, snapshot_every, dt,
                    cfl_factor)


def energy(state, sys):
    """Discrete energy.

    ``E = 1/2 sum_k (int |V_k|^2 + |grad U_k|^2) + 1/2 int (A U, U)
    + 1/2 int_boundary (B U, U)``; the gradient term is the edge
    quadrature ``U^T K U`` matching the scheme.
    """
    d = sys.domain
    U, V = state.U, state.V
    kin = np.sum((V ** 2) @ d.weights)
    grad = np.sum(U * (d.stiffness @ U.T).T)
    pot = np.sum((U * (sys.coupling.A @ U)) @ d.weights)
    Ub = U[:, d.boundary_nodes]
    bnd = np.sum((Ub * (sys.coupling.B @ Ub)) @ d.boundary_weights)
    return float(0.5 * (kin + grad + pot + bnd))


def pairing(fwd_state, adj_state, domain):
    """``int (U', Phi) - (U, Phi')`` with trapezoid weights."""
    return float(np.sum((fwd_state.V * adj_state.U
                         - fwd_state.U * adj_state.V) @ domain.weights))


def _trapezoid_weights(n, dt):
    w = np.full(n, dt)
    if n == 1:
        return np.zeros(1)
    w[[0, -1]] *= 0.5
    return w


def boundary_work(adj, control, D, n_steps=None):
    """``int_0^t int_boundary (D H, Phi)`` by trapezoid in time and on faces."""
    domain = adj.domain
    Phi_b = adj.boundary_U
    n = Phi_b.shape[0] if n_steps is None else n_steps + 1
    H = np.stack([control.at(k) for k in range(n)])  # (n, n_b, M)
    DH = np.einsum('im,kbm->kib', np.asarray(D).reshape(Phi_b.shape[1], -1), H)
    per_step = np.einsum('kib,kib,b->k', DH, Phi_b[:n], domain.boundary_weights)
    return float(_trapezoid_weights(n, adj.dt) @ per_step)


def duality_residual(fwd, adj, control, D):
    """Defect in the weak-solution identity at the final snapshot.

    ``|<<(U', -U), (Phi, Phi')>>(t) - <<(U_1, -U_0), (Phi_0, Phi_1)>>
    - int_0^t int_boundary (D H, Phi)|``.
    """
    if fwd.domain != adj.domain:
        raise DimensionError("forward and adjoint grids differ")
    if abs(fwd.dt - adj.dt) > 1e-14 * fwd.dt or \
            fwd.boundary_U.shape[0] != adj.boundary_U.shape[0]:
        raise DimensionError("forward and adjoint time grids differ")
    d = fwd.domain
    lhs = pairing(fwd.final, adj.final, d) - pairing(fwd.state(0),
                                                     adj.state(0), d)
    return abs(lhs - boundary_work(adj, control, D))


def robin_via_neumann(sys, eigenpair, control=None, T=None, init=None,
                      source_trace=None, dt=None, cfl_factor=DEFAULT_CFL,
                      snapshot_every=1, eig_tol=1e-9):
    """Projection ``phi = (e, U)`` computed through a Neumann problem.

    For an eigenpair ``B^T e = lam e`` the function ``psi = exp(lam h) phi``
    with ``h(x) = x^2/L - x`` (so ``h' = nu`` at both ends) solves

        psi'' - psi_xx + 2 lam h' psi_x + lam (h'' - lam h'^2) psi
            = -exp(lam h) (e, A U),
        d_nu psi = exp(lam h) (e, D H).

    This is integrated with its own centered scheme and mapped back.
    The source ``(e, A U)`` is ``mu * phi`` when ``A^T e = mu e``;
    otherwise it is read from ``source_trace`` (every step), which is
    produced by a direct simulation if not supplied.

    Returns
    -------
    SimulationTrace
        Single-component trace of ``phi``.
    """
    d = sys.domain
    if d.dim != 1:
        raise DimensionError("Robin-via-Neumann transform is 1D only")
    lam, e = eigenpair
    lam = float(lam)
    e = np.asarray(e, dtype=float).reshape(-1)
    B, A = sys.coupling.B, sys.coupling.A
    scale = max(1.0, np.linalg.norm(B, 2)) * np.linalg.norm(e)
    if np.linalg.norm(B.T @ e - lam * e) > eig_tol * scale:
        raise ValueError("(lam, e) is not an eigenpair of B^T")
    if init is None:
        init = State.zeros(sys.N, d)
    if T is None:
        T = control.T
    if dt is None and control is not None:
        dt = control.dt
    if dt is None:
        dt, n_steps = time_grid(d, T, cfl_factor)
    else:
        n_steps = max(int(np.ceil(T / dt - 1e-9)), 1)
    _check_cfl(d, dt, cfl_factor)

    L = d.lengths[0]
    x = d.axes[0]
    hx = x * x / L - x
    dh = 2.0 * x / L - 1.0
    d2h = 2.0 / L
    wgt = np.exp(lam * hx)
    zeroth = lam * (d2h - lam * dh ** 2)
    dx = d.spacing[0]
    bidx = d.boundary_nodes
    bscale = d._boundary_scale

    Ae = A.T @ e
    mu = float(Ae @ e / (e @ e))
    closed = np.linalg.norm(Ae - mu * e) <= eig_tol * max(
        1.0, np.linalg.norm(A, 2)) * np.linalg.norm(e)
    src = None
    if not closed:
        if source_trace is None:
            source_trace = simulate(sys, init, control, T, 1, dt, cfl_factor,
                                    compute_energy=False)
        if source_trace.U.shape[0] != n_steps + 1:
            raise DimensionError("source_trace must hold every time step")
        src = np.einsum('i,kin->kn', Ae, source_trace.U)

    De = sys.coupling.D.T @ e if sys.M else None

    def flux(k):
        # d_nu psi on the boundary nodes; h vanishes there
        if control is None or De is None:
            return np.zeros(bidx.size)
        return control.at(k) @ De

    def rhs(psi, k):
        g = flux(k)
        acc = -(d.stiffness @ psi) / d.weights
        acc[bidx] += bscale * g
        if lam != 0.0:
            psi_x = np.empty_like(psi)
            psi_x[1:-1] = (psi[2:] - psi[:-2]) / (2 * dx)
            psi_x[0] = -g[0]
            psi_x[-1] = g[1]
            acc -= 2.0 * lam * dh * psi_x + zeroth * psi
        if closed:
            if mu != 0.0:
                acc -= mu * psi
        else:
            acc -= wgt * src[k]
        return acc

    psi = wgt * (e @ init.U)
    vel = wgt * (e @ init.V)
    every = snapshot_every or n_steps
    snaps = [(0, psi.copy(), vel.copy())]
    btr = np.empty((n_steps + 1, 1, bidx.size))
    btr[0, 0] = psi[bidx] / wgt[bidx]
    acc = rhs(psi, 0)
    half = 0.5 * dt
    for k in range(1, n_steps + 1):
        vel += half * acc
        psi += dt * vel
        acc = rhs(psi, k)
        vel += half * acc
        btr[k, 0] = psi[bidx] / wgt[bidx]
        if k % every == 0 or k == n_steps:
            if not np.isfinite(psi).all():
                raise BlowUpError(f"non-finite state at step {k}", step=k)
            snaps.append((k, psi.copy(), vel.copy()))
    idx = np.array([s[0] for s in snaps])
    phi = np.stack([s[1] / wgt for s in snaps])[:, None]
    phid = np.stack([s[2] / wgt for s in snaps])[:, None]
    scalar = SystemInstance(CouplingSpec([[mu]], [[lam]], np.zeros((1, 0))),
                            d, check_well_posed=False)
    return SimulationTrace(times=init.t + dt * idx, U=phi, V=phid,
                           boundary_times=init.t + dt * np.arange(n_steps + 1),
                           boundary_U=btr, dt=dt, system=scalar)
