"""End-to-end checks of synchronization by groups.

Controlled runs of the full system are measured against the reduced
objective (``C_p U`` vanishing after ``T``), the synchronizable state
``u_r = (E_r, U)`` is extracted and compared with the decoupled system it
should obey, and control authority is probed by grid refinement of the
control operator's singular values.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .algebra import (GroupPartition, KernelBasis, build_sync_matrix,
                      check_cp_compatibility, invariance_coefficients,
                      kernel_basis, numerical_rank)
from .control import (ControlBasis, SynthesisResult,
                      assemble_control_operator, free_final_state,
                      gramian_spectrum, solve_null_control,
                      synthesize_sync_control)
from .wave import (DEFAULT_CFL, BoxDomain, ControlSignal, State,
                   SystemInstance, simulate, state_norm, time_grid)

__all__ = [
    'VerificationReport', 'SolverConfig', 'IndependenceResult',
    'EstimateResult', 'ProbeLevel', 'ProbeResult',
    'verify_synchronization', 'extract_sync_state', 'reconstruct_from_sync',
    'solve_decoupled_states', 'compare_state_independence',
    'estimate_check', 'noncontrollability_probe', 'smooth_bump',
    'group_mean_family',
]


@dataclass
class VerificationReport:
    """Recorded numbers of a verification run.

    Pass flags are recomputed from ``errors`` and ``thresholds`` on
    every access; nothing else feeds them.
    """

    sync_error: float
    times: np.ndarray
    sync_series: np.ndarray
    state_traces: np.ndarray
    errors: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    @property
    def passed(self):
        out = {}
        for name, limit in self.thresholds.items():
            value = self.sync_error if name == 'sync_error' \
                else self.errors.get(name, np.inf)
            out[name] = bool(np.isfinite(value) and value <= limit)
        return out

    @property
    def ok(self):
        return all(self.passed.values())

    def to_keyvalue(self):
        lines = [f"sync_error = {self.sync_error:.17g}"]
        lines += [f"{k} = {v:.17g}" for k, v in sorted(self.errors.items())]
        lines += [f"threshold.{k} = {v:.17g}"
                  for k, v in sorted(self.thresholds.items())]
        lines += [f"pass.{k} = {str(v).lower()}"
                  for k, v in sorted(self.passed.items())]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SolverConfig:
    """One admissible way of synthesizing a control."""

    T: float
    eps: float = 1e-8
    n_knots: int = None
    observation: object = 'energy'


@dataclass
class IndependenceResult:
    discrepancy: float
    invariant: bool
    status: str
    residuals: tuple


@dataclass
class EstimateResult:
    scales: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    zero_data_lhs: float

    @property
    def ratios(self):
        return self.lhs / self.rhs

    @property
    def constant(self):
        return float(np.max(self.ratios))

    @property
    def spread(self):
        r = self.ratios
        return float(r.max() / r.min())


@dataclass
class ProbeLevel:
    nodes: tuple
    sigma_min: float
    gramian_min: float
    residual: float
    free_norm: float
    n_observed: int


@dataclass
class ProbeResult:
    levels: list
    null_vector: np.ndarray

    @property
    def sigma_min(self):
        return np.array([lv.sigma_min for lv in self.levels])

    @property
    def decay_ratios(self):
        s = self.sigma_min
        return s[:-1] / s[1:]


def smooth_bump(domain):
    """Centered bump ``prod_k sin^2(pi x_k / L_k)``, amplitude 1."""
    out = np.ones(domain.n_nodes)
    for xk, L in zip(domain.coords, domain.lengths):
        out *= np.sin(np.pi * xk / L) ** 2
    return out


def group_mean_family(partition):
    """Family ``E_r = e_r / |group r|`` (biorthogonal to the kernel basis)."""
    from .algebra import BiorthogonalFamily
    e = kernel_basis(partition).vectors
    return BiorthogonalFamily(e / e.sum(axis=1, keepdims=True),
                              source=np.eye(e.shape[1]))


def _family_vectors(family):
    return np.atleast_2d(np.asarray(getattr(family, 'vectors', family), float))


def extract_sync_state(trace, family):
    """``u_r(t, x) = (E_r, U(t, x))`` as ``(n_snap, p, n_nodes)`` arrays.

    Returns ``(u, u_t)``: displacement and velocity projections.
    """
    E = _family_vectors(family)
    return (np.einsum('rn,tnx->trx', E, trace.U),
            np.einsum('rn,tnx->trx', E, trace.V))


def reconstruct_from_sync(u, basis):
    """``sum_r u_r e_r`` for ``u`` of shape ``(..., p, n_nodes)``."""
    e = basis.vectors if isinstance(basis, KernelBasis) else np.asarray(basis)
    return np.einsum('...rx,rn->...nx', u, e)


def solve_decoupled_states(alpha, beta, init_proj, domain, T_obs, dt=None,
                           snapshot_every=1, cfl_factor=DEFAULT_CFL):
    """Run the ``p``-component system with couplings ``alpha``, ``beta`` and no control."""
    from .algebra import CouplingSpec
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    p = alpha.shape[0]
    sys = SystemInstance(CouplingSpec(alpha, beta, np.zeros((p, 0))),
                         domain, check_well_posed=False)
    return simulate(sys, init_proj, None, T_obs, snapshot_every, dt,
                    cfl_factor, compute_energy=False)


def _series_norm(U, V, domain):
    return np.array([state_norm(U[i], V[i], domain) for i in range(len(U))])


def verify_synchronization(full_sys, partition, result, T_obs=None,
                           init=None, T=None, threshold=1e-3, family=None,
                           snapshot_every=1):
    """Simulate the full system under ``result.control`` and measure ``C_p U``.

    ``sync_error`` is the largest ``||C_p (U, U')(t)|| / ||C_p (U, U')(0)||``
    over snapshots with ``t`` in ``[T, T_obs]`` (default ``T_obs = 1.5 T``).
    If ``C_p`` kills the initial data the full initial norm is the
    denominator instead.  ``init`` and ``T`` default to the values stored
    by :func:`synthesize_sync_control`.
    """
    ctx = result.context if isinstance(result, SynthesisResult) else {}
    control = result.control if isinstance(result, SynthesisResult) \
        else result
    init = ctx['init'] if init is None else init
    T = ctx.get('T', control.T) if T is None else float(T)
    T_obs = 1.5 * T if T_obs is None else float(T_obs)
    d = full_sys.domain
    C = build_sync_matrix(partition)
    Cm = C.entries
    tr = simulate(full_sys, init, control, T_obs, snapshot_every,
                  dt=control.dt, compute_energy=False)
    W = np.einsum('kn,tnx->tkx', Cm, tr.U)
    Wt = np.einsum('kn,tnx->tkx', Cm, tr.V)
    series = _series_norm(W, Wt, d)
    denom = series[0]
    if denom <= 1e-14 * max(state_norm(init.U, init.V, d), 1e-300):
        denom = state_norm(init.U, init.V, d)
    if denom == 0.0:
        denom = 1.0
    series = series / denom
    window = tr.times >= T * (1 - 1e-12)
    sync_error = float(series[window].max())
    family = group_mean_family(C.partition) if family is None else family
    u, u_t = extract_sync_state(tr, family)
    basis = kernel_basis(C.partition)
    recon = reconstruct_from_sync(u, basis)
    recon_err = max(state_norm(tr.U[i] - recon[i], 0 * recon[i], d)
                    for i in np.flatnonzero(window))
    errors = {
        'reconstruction_error': float(recon_err / max(
            state_norm(init.U, 0 * init.U, d), 1e-300)),
        'synthesis_residual': float(getattr(result, 'relative_residual',
                                            np.nan)),
    }
    return VerificationReport(sync_error=sync_error, times=tr.times,
                              sync_series=series, state_traces=u,
                              errors=errors,
                              thresholds={'sync_error': threshold})


def _controlled_sync_state(full_sys, partition, init, config, T_obs, family):
    res = synthesize_sync_control(full_sys, partition, init, config.T,
                                  eps=config.eps, n_knots=config.n_knots,
                                  observation=config.observation)
    tr = simulate(full_sys, init, res.control, T_obs, 1,
                  dt=res.control.dt, compute_energy=False)
    return tr, extract_sync_state(tr, family), res


def compare_state_independence(full_sys, partition, family, init, config_a,
                               config_b, T_obs=None, tol=1e-9):
    """Discrepancy of ``(E_r, U)`` between two admissible controls.

    Returns the largest ``||(u1, u1') - (u2, u2')||`` over ``[0, T_obs]``
    relative to the largest ``||(u1, u1')||``.  ``status`` is
    ``'certified'`` when ``span{E_r}`` is invariant under ``A^T`` and
    ``B^T`` and ``D^T`` annihilates it; otherwise ``'conditional'`` (the
    number is reported but independence is not claimed).
    """
    A, B, D = full_sys.coupling.A, full_sys.coupling.B, full_sys.coupling.D
    E = _family_vectors(family)
    inv_a = invariance_coefficients(A, family, tol)
    inv_b = invariance_coefficients(B, family, tol)
    annihilated = np.linalg.norm(E @ D) <= tol * max(
        np.linalg.norm(E) * np.linalg.norm(D), 1e-300)
    invariant = bool(inv_a.invariant and inv_b.invariant and annihilated)
    if T_obs is None:
        T_obs = 1.5 * max(config_a.T, config_b.T)
    d = full_sys.domain
    dt, _ = time_grid(d, max(config_a.T, config_b.T))
    cfgs = []
    for cfg in (config_a, config_b):
        # both runs on one time step so the series line up
        n = max(1, int(round(cfg.T / dt)))
        cfgs.append(SolverConfig(n * dt, cfg.eps, cfg.n_knots,
                                 cfg.observation))
    out = [_controlled_sync_state(full_sys, partition, init, c, T_obs, family)
           for c in cfgs]
    (tr1, (u1, v1), r1), (tr2, (u2, v2), r2) = out
    n = min(len(tr1.times), len(tr2.times))
    diff = _series_norm(u1[:n] - u2[:n], v1[:n] - v2[:n], d)
    ref = _series_norm(u1[:n], v1[:n], d).max()
    discrepancy = float(diff.max() / ref) if ref > 0 else float(diff.max())
    status = 'certified' if invariant else 'conditional'
    return IndependenceResult(discrepancy, invariant, status,
                              (r1.relative_residual, r2.relative_residual))


def estimate_check(full_sys, partition, family, init_sync, init_transverse,
                   T, scales=(1.0, 0.5, 0.25, 0.125), eps=1e-8, n_knots=None,
                   observation='energy'):
    """Ratio ``||(u, u')(T) - (phi, phi')(T)|| / ||C_p (U0, U1)||`` over scales.

    Initial data is ``init_sync + s * init_transverse``.  ``phi`` solves
    the decoupled system with the block row-sum coefficients of ``A`` and
    ``B`` from the projected initial data.  ``zero_data_lhs`` is the
    left-hand side at ``s = 0``.
    """
    C = build_sync_matrix(partition)
    part = C.partition
    alpha = check_cp_compatibility(full_sys.coupling.A, part).coefficients
    beta = check_cp_compatibility(full_sys.coupling.B, part).coefficients
    E = _family_vectors(family)
    d = full_sys.domain

    def lhs_rhs(s):
        init = init_sync + init_transverse * s
        res = synthesize_sync_control(full_sys, part, init, T, eps,
                                      n_knots, observation=observation)
        dt = res.control.dt
        tr = simulate(full_sys, init, res.control, T, 0, dt=dt,
                      compute_energy=False)
        u, u_t = extract_sync_state(tr, E)
        phi = solve_decoupled_states(alpha, beta, init.project(E), d, T,
                                     dt=dt, snapshot_every=0)
        lhs = state_norm(u[-1] - phi.U[-1], u_t[-1] - phi.V[-1], d)
        W = init.project(C.entries)
        return lhs, state_norm(W.U, W.V, d)

    scales = np.asarray(scales, dtype=float)
    pairs = np.array([lhs_rhs(s) for s in scales])
    zero_lhs, _ = lhs_rhs(0.0)
    return EstimateResult(scales, pairs[:, 0], pairs[:, 1], float(zero_lhs))


def noncontrollability_probe(full_sys, partition, levels, T=None, eps=1e-8,
                             n_knots=None, observation=0.25):
    """Smallest singular value of the control operator per grid level.

    Each level is a node count (1D) or node tuple; the domain lengths of
    ``full_sys`` are kept.  ``partition=None`` probes the full system
    (plain null control).  The special data is ``U = 0``, ``U' = e theta``
    with ``D^T e = 0`` and ``theta`` :func:`smooth_bump`; when ``D^T`` has
    no kernel the first unit vector is used.  Also reported is the
    ``sigma_min^2`` of the Gramian.
    """
    cp = full_sys.coupling
    if partition is None:
        Cm = np.eye(cp.N)
    else:
        Cm = build_sync_matrix(partition).entries
    D = cp.D
    ker = scipy.linalg.null_space(D.T) if D.shape[1] else np.eye(cp.N)
    e = ker[:, 0] if ker.shape[1] else np.eye(cp.N)[0]
    e = e * np.sign(e[np.argmax(np.abs(e))])
    if T is None:
        T = 4.0 * full_sys.domain.diameter
    out = []
    for lv in levels:
        nodes = (lv,) if np.isscalar(lv) else tuple(lv)
        d = BoxDomain(full_sys.domain.lengths, nodes)
        sys = SystemInstance(full_sys.coupling, d, full_sys.check_well_posed)
        if partition is None:
            red = sys
        else:
            from .algebra import reduce_system
            red = SystemInstance(
                reduce_system(cp, build_sync_matrix(partition)).as_coupling(),
                d, full_sys.check_well_posed)
        theta = smooth_bump(d)
        init = State(np.zeros((cp.N, d.n_nodes)), np.outer(e, theta))
        init_red = init.project(Cm)
        dt, _ = time_grid(d, T)
        free = free_final_state(red, init_red, T, dt)
        basis = ControlBasis.for_system(red, T, n_knots)
        if basis.K == 0:
            from .control import observation_matrix
            obs = observation_matrix(red, observation)
            y = obs @ free
            out.append(ProbeLevel(nodes, 0.0, 0.0, float(np.linalg.norm(y)),
                                  float(np.linalg.norm(y)), obs.shape[0]))
            continue
        op = assemble_control_operator(red, basis, T, dt,
                                       observation=observation)
        res = solve_null_control(op, -free, eps)
        sv = res.gramian_spectrum
        m = op.observation.shape[0]
        smin = float(sv[m - 1]) if sv.size >= m else 0.0
        out.append(ProbeLevel(nodes, smin, smin ** 2, res.residual_final,
                              res.target_norm, m))
    return ProbeResult(out, e)
