"""Command-line entry point: ``robinsync {analyze,simulate,synthesize,verify,probe}``.

Exit codes: 0 success, 2 matrix conditions violated, 3 synthesis or
verification residual above threshold, 4 config or dimension error,
5 simulation blow-up.  The config schema is documented in README.md.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .algebra import (CouplingSpec, GroupPartition, biorthogonal_family,
                      build_control_matrix, build_sync_matrix,
                      check_cp_compatibility, kernel_basis, rank_condition,
                      symmetric_similarity, zero_sum_condition)
from .control import synthesize_sync_control
from .exceptions import (BlowUpError, CFLViolation, DimensionError,
                         MatrixConditionError, PartitionError, SynthesisError)
from .verify import noncontrollability_probe, verify_synchronization
from .wave import BoxDomain, State, SystemInstance, simulate

EXIT_OK, EXIT_MATRIX, EXIT_RESIDUAL, EXIT_CONFIG, EXIT_BLOWUP = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    return sec


def _matrix(value, N, name):
    M = np.asarray(value, dtype=float)
    if M.ndim != 2 or M.shape != (N, N):
        raise ConfigError(f"system.{name} must be {N}x{N}, got shape {M.shape}")
    return M


@dataclass
class ExperimentConfig:
    """Parsed experiment description; see README.md for the JSON schema."""

    lengths: tuple
    nodes: tuple
    N: int
    partition: GroupPartition
    A: np.ndarray
    B: np.ndarray
    D_mode: object
    T: float = None
    T_obs: float = None
    cfl_factor: float = 0.5
    knots: int = None
    eps: float = 1e-8
    max_cg_iter: int = None
    method: str = 'direct'
    residual_threshold: float = 1e-3
    out_dir: str = 'out'
    snapshot_every: int = 10
    init: dict = field(default_factory=dict)
    probe_levels: tuple = None
    probe_fraction: float = 0.25
    probe_reduced: bool = False

    @classmethod
    def from_dict(cls, raw):
        dom = _section(raw, 'domain')
        tim = _section(raw, 'time')
        sysb = _section(raw, 'system')
        ctl = _section(raw, 'control')
        out = _section(raw, 'output')
        prb = _section(raw, 'probe')
        try:
            lengths = tuple(float(v) for v in dom.get('lengths', [1.0]))
            nodes = dom.get('nodes', [101])
            nodes = tuple(int(v) for v in (nodes if isinstance(nodes, list)
                                           else [nodes]))
            dim = int(dom.get('dim', len(lengths)))
            if not (len(lengths) == len(nodes) == dim):
                raise ConfigError("domain.dim, lengths and nodes disagree")
            if 'N' not in sysb:
                raise ConfigError("system.N is required")
            N = int(sysb['N'])
            part = sysb.get('partition', [0, N])
            partition = (GroupPartition.from_string(part)
                         if isinstance(part, str)
                         else GroupPartition(tuple(part)))
            if partition.N != N:
                raise ConfigError(
                    f"partition ends at {partition.N} but N = {N}")
            A = _matrix(sysb.get('A', np.zeros((N, N))), N, 'A')
            B = _matrix(sysb.get('B', np.zeros((N, N))), N, 'B')
            D_mode = sysb.get('D', 'canonical')
            if isinstance(D_mode, str):
                if D_mode not in ('canonical', 'family', 'identity', 'none'):
                    raise ConfigError(f"unknown system.D mode {D_mode!r}")
            else:
                D_mode = np.asarray(D_mode, dtype=float)
                if D_mode.ndim != 2 or D_mode.shape[0] != N:
                    raise ConfigError(
                        f"system.D rows must have N = {N} rows, got {D_mode.shape}")
            levels = prb.get('levels')
            return cls(
                lengths=lengths, nodes=nodes, N=N, partition=partition,
                A=A, B=B, D_mode=D_mode,
                T=None if tim.get('T') is None else float(tim['T']),
                T_obs=None if tim.get('T_obs') is None else float(tim['T_obs']),
                cfl_factor=float(tim.get('cfl_factor', 0.5)),
                knots=None if ctl.get('knots') is None else int(ctl['knots']),
                eps=float(ctl.get('eps', 1e-8)),
                max_cg_iter=(None if ctl.get('max_cg_iter') is None
                             else int(ctl['max_cg_iter'])),
                method=str(ctl.get('method', 'direct')),
                residual_threshold=float(ctl.get('residual_threshold', 1e-3)),
                out_dir=str(out.get('directory', 'out')),
                snapshot_every=int(out.get('snapshot_every', 10)),
                init=dict(raw.get('init', {})),
                probe_levels=None if levels is None else tuple(levels),
                probe_fraction=float(prb.get('fraction', 0.25)),
                probe_reduced=bool(prb.get('reduced', False)),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(raw)

    def domain(self):
        return BoxDomain(self.lengths, self.nodes)

    def control_matrix(self):
        mode = self.D_mode
        if isinstance(mode, np.ndarray):
            return mode
        if mode == 'canonical':
            return build_control_matrix(self.partition)
        if mode == 'family':
            cert = symmetric_similarity(self.B)
            fam = biorthogonal_family(cert, kernel_basis(self.partition))
            return build_control_matrix(self.partition, fam)
        if mode == 'identity':
            return np.eye(self.N)
        return np.zeros((self.N, 0))

    def system(self):
        coupling = CouplingSpec(self.A, self.B, self.control_matrix())
        return SystemInstance(coupling, self.domain())

    def horizon(self, domain):
        return 4.0 * domain.diameter if self.T is None else self.T

    def initial_state(self, domain, rng):
        """Initial data from the ``init`` block (see README.md)."""
        U = self._profiles(self.init.get('U', 'default'), domain, rng, 'U')
        V = self._profiles(self.init.get('V', 0.0), domain, rng, 'V')
        return State(U, V)

    def _profiles(self, spec, domain, rng, name):
        N, x = self.N, domain.coords
        if spec == 'default':
            spec = [{'cos': i + 1, 'amp': 1.0} for i in range(N)]
        if not isinstance(spec, list):
            spec = [spec] * N
        if len(spec) != N:
            raise ConfigError(f"init.{name} needs {N} entries")
        out = np.zeros((N, domain.n_nodes))
        for i, s in enumerate(spec):
            out[i] = _profile(s, domain, x, rng, f"init.{name}[{i}]")
        return out


def _profile(s, domain, x, rng, where):
    if isinstance(s, (int, float)):
        return np.full(domain.n_nodes, float(s))
    if not isinstance(s, dict):
        raise ConfigError(f"{where}: expected number or object")
    amp = float(s.get('amp', 1.0))
    if 'cos' in s:
        k = float(s['cos'])
        out = np.ones(domain.n_nodes)
        for xk, L in zip(x, domain.lengths):
            out *= np.cos(k * np.pi * xk / L)
        return amp * out
    if 'bump' in s:
        out = np.ones(domain.n_nodes)
        for xk, L in zip(x, domain.lengths):
            out *= np.sin(np.pi * xk / L) ** 2
        return amp * float(s['bump']) * out
    if 'random' in s:
        n_modes = int(s['random'])
        out = np.zeros(domain.n_nodes)
        for k in range(n_modes):
            term = np.ones(domain.n_nodes)
            for xk, L in zip(x, domain.lengths):
                term *= np.cos(k * np.pi * xk / L)
            out += rng.standard_normal() / (1 + k) * term
        return amp * out
    raise ConfigError(f"{where}: unknown profile keys {sorted(s)}")


def _write_kv(path, items):
    with open(path, 'w') as fh:
        for k, v in items:
            if isinstance(v, (float, np.floating)):
                v = '%.17g' % v
            fh.write(f"{k} = {v}\n")


def cmd_analyze(cfg, out, rng):
    part = cfg.partition
    C = build_sync_matrix(part)
    D = cfg.control_matrix()
    items = [('N', cfg.N), ('p', part.p), ('partition', str(part))]
    for name, M in (('A', cfg.A), ('B', cfg.B)):
        rep = check_cp_compatibility(M, part)
        items += [(f'{name}.compatible', str(rep.compatible).lower()),
                  (f'{name}.violation', rep.violation),
                  (f'{name}.zero_sum', str(bool(zero_sum_condition(M, part))).lower())]
        if rep.compatible:
            items += [(f'{name}.coefficients',
                       json.dumps(rep.coefficients.tolist()))]
    rk = rank_condition(C, D)
    items += [('D.columns', D.shape[1]), ('rank_CpD', rk.rank_CpD),
              ('rank_target', rk.target),
              ('rank_condition', str(rk.satisfies).lower())]
    try:
        cert = symmetric_similarity(cfg.B)
        items += [('B.similar_to_symmetric', 'true'),
                  ('B.similarity_residual', cert.residual)]
    except MatrixConditionError as exc:
        items += [('B.similar_to_symmetric', 'false'),
                  ('B.similarity_error', type(exc).__name__)]
    _write_kv(out / 'analysis.txt', items)
    for k, v in items:
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_simulate(cfg, out, rng):
    sys_ = cfg.system()
    d = sys_.domain
    init = cfg.initial_state(d, rng)
    tr = simulate(sys_, init, None, cfg.horizon(d), cfg.snapshot_every,
                  cfl_factor=cfg.cfl_factor)
    io.write_trace(out / 'trace.csv', tr)
    io.write_energy(out / 'energy.csv', tr)
    print(f"wrote {len(tr.times)} snapshots to {out / 'trace.csv'}")
    return EXIT_OK


def _synthesize(cfg, rng):
    sys_ = cfg.system()
    d = sys_.domain
    init = cfg.initial_state(d, rng)
    method = 'cg' if cfg.max_cg_iter is not None else cfg.method
    res = synthesize_sync_control(sys_, cfg.partition, init, cfg.horizon(d),
                                  eps=cfg.eps, n_knots=cfg.knots,
                                  method=method, cfl_factor=cfg.cfl_factor,
                                  max_iter=cfg.max_cg_iter)
    return sys_, res


def _write_result(out, res):
    io.write_control(out / 'control.csv', res.control)
    io.write_spectrum(out / 'spectrum.csv', res.gramian_spectrum)
    _write_kv(out / 'synthesis.txt', [
        ('residual_final', res.residual_final),
        ('target_norm', res.target_norm),
        ('relative_residual', res.relative_residual),
        ('control_norm', res.control_norm),
        ('n_coefficients', res.coefficients.size)])


def cmd_synthesize(cfg, out, rng):
    _, res = _synthesize(cfg, rng)
    _write_result(out, res)
    print(f"relative residual {res.relative_residual:.3e}, "
          f"control norm {res.control_norm:.6g}")
    return (EXIT_OK if res.relative_residual <= cfg.residual_threshold
            else EXIT_RESIDUAL)


def cmd_verify(cfg, out, rng):
    sys_, res = _synthesize(cfg, rng)
    _write_result(out, res)
    rep = verify_synchronization(sys_, cfg.partition, res, T_obs=cfg.T_obs,
                                 threshold=cfg.residual_threshold)
    (out / 'report.txt').write_text(rep.to_keyvalue())
    io.write_series(out / 'sync_error.csv', ['t', 'sync_error'],
                    [rep.times, rep.sync_series])
    print(f"sync_error {rep.sync_error:.3e} "
          f"({'pass' if rep.ok else 'fail'})")
    return EXIT_OK if rep.ok else EXIT_RESIDUAL


def cmd_probe(cfg, out, rng):
    sys_ = cfg.system()
    levels = cfg.probe_levels or tuple(
        int(round((n - 1) * f)) + 1 for f in (0.25, 0.5, 1.0)
        for n in cfg.nodes[:1])
    part = cfg.partition if cfg.probe_reduced else None
    pr = noncontrollability_probe(sys_, part, levels, T=cfg.T, eps=cfg.eps,
                                  n_knots=cfg.knots,
                                  observation=cfg.probe_fraction)
    lv = pr.levels
    io.write_series(out / 'sigma_min.csv',
                    ['level', 'nodes', 'sigma_min', 'gramian_min',
                     'residual', 'free_norm'],
                    [np.arange(len(lv)), [l.nodes[0] for l in lv],
                     [l.sigma_min for l in lv], [l.gramian_min for l in lv],
                     [l.residual for l in lv], [l.free_norm for l in lv]])
    for i, l in enumerate(lv):
        print(f"level {i} nodes {l.nodes}: sigma_min {l.sigma_min:.4e}, "
              f"residual {l.residual:.4e} / free {l.free_norm:.4e}")
    return EXIT_OK


COMMANDS = {'analyze': cmd_analyze, 'simulate': cmd_simulate,
            'synthesize': cmd_synthesize, 'verify': cmd_verify,
            'probe': cmd_probe}


def build_parser():
    ap = argparse.ArgumentParser(
        prog='robinsync',
        description="Synchronization by groups for coupled Robin wave systems.")
    ap.add_argument('command', choices=sorted(COMMANDS))
    ap.add_argument('--config', required=True, help="JSON experiment config")
    ap.add_argument('--out', default=None,
                    help="output directory (overrides output.directory)")
    ap.add_argument('--threads', type=int, default=None,
                    help="BLAS thread limit")
    ap.add_argument('--seed', type=int, default=0,
                    help="seed for random initial profiles")
    return ap


def run(command, cfg, out, seed=0):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    return COMMANDS[command](cfg, out, rng)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        out = args.out or cfg.out_dir
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return run(args.command, cfg, out, args.seed)
        return run(args.command, cfg, out, args.seed)
    except MatrixConditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MATRIX
    except SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESIDUAL
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ConfigError, DimensionError, PartitionError, CFLViolation,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
