"""CSV readers and writers; every number is written with 17 significant digits."""

import csv
from pathlib import Path

import numpy as np

from .algebra import GroupPartition
from .wave import ControlSignal

FMT = '%.17g'

__all__ = ['write_matrix', 'read_matrix', 'parse_partition', 'write_trace',
           'write_energy', 'write_control', 'read_control', 'write_spectrum',
           'read_spectrum', 'write_series']


def _fmt(x):
    return FMT % x


def write_matrix(path, M):
    """One matrix row per line, comma separated."""
    np.savetxt(path, np.atleast_2d(M), fmt=FMT, delimiter=',')


def read_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=',', ndmin=2))


def parse_partition(text, allow_singletons=False):
    """Breakpoints ``"0,2,4"`` to a :class:`GroupPartition`."""
    return GroupPartition.from_string(text, allow_singletons=allow_singletons)


def write_trace(path, trace):
    """Columns ``t,comp,node,U,V``, one row per snapshot, component and node."""
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['t', 'comp', 'node', 'U', 'V'])
        n_comp, n_nodes = trace.U.shape[1:]
        for i, t in enumerate(trace.times):
            for c in range(n_comp):
                for x in range(n_nodes):
                    w.writerow([_fmt(t), c, x, _fmt(trace.U[i, c, x]),
                                _fmt(trace.V[i, c, x])])


def write_energy(path, trace):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['t', 'E'])
        for t, e in zip(trace.times, trace.energy):
            w.writerow([_fmt(t), _fmt(e)])


def write_control(path, control):
    """Columns ``t,boundary_node,channel,value``."""
    s = control.samples
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['t', 'boundary_node', 'channel', 'value'])
        for k in range(s.shape[0]):
            t = _fmt(k * control.dt)
            for b in range(s.shape[1]):
                for m in range(s.shape[2]):
                    w.writerow([t, b, m, _fmt(s[k, b, m])])


def read_control(path, T=None):
    """Inverse of :func:`write_control`; ``T`` defaults to the last time."""
    data = np.genfromtxt(path, delimiter=',', names=True, ndmin=1)
    t = np.unique(data['t'])
    nb = int(data['boundary_node'].max()) + 1
    M = int(data['channel'].max()) + 1
    samples = np.zeros((t.size, nb, M))
    k = np.searchsorted(t, data['t'])
    samples[k, data['boundary_node'].astype(int),
            data['channel'].astype(int)] = data['value']
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return ControlSignal(samples, dt, float(t[-1]) if T is None else T)


def write_spectrum(path, values):
    """One value per line."""
    np.savetxt(path, np.asarray(values, dtype=float).reshape(-1), fmt=FMT)


def read_spectrum(path):
    return np.loadtxt(path, ndmin=1)


def write_series(path, header, columns):
    """Generic CSV with named columns of equal length."""
    cols = [np.asarray(c) for c in columns]
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating))
                        else v for v in row])
