import numpy as np
import pytest

from robinsync import (BoxDomain, ControlSignal, CouplingSpec, State,
                       SystemInstance, boundary_work, duality_residual,
                       energy, robin_compatible, robin_via_neumann, simulate,
                       simulate_adjoint, step)
from robinsync.exceptions import (BlowUpError, CFLViolation, DimensionError,
                                  NotDiagonalizable)
from robinsync.wave import mean_zero, state_norm, time_grid


def make_sys(A, B, D=None, nodes=51, length=1.0):
    A = np.atleast_2d(A)
    N = A.shape[0]
    D = np.zeros((N, 0)) if D is None else D
    return SystemInstance(CouplingSpec(A, B, D), BoxDomain.interval(length, nodes))


def smooth_bump(t, T):
    return np.sin(np.pi * np.clip(t / T, 0, 1)) ** 4


class TestBoxDomain:
    def test_spacing_and_quadrature(self):
        d = BoxDomain.interval(2.0, 21)
        assert d.spacing == (0.1,)
        assert d.weights.sum() == pytest.approx(2.0)
        assert d.n_boundary == 2
        np.testing.assert_allclose(d.boundary_weights, [1.0, 1.0])

    def test_rectangle(self):
        d = BoxDomain((1.0, 2.0), (11, 21))
        assert d.dim == 2 and d.n_nodes == 231
        assert d.weights.sum() == pytest.approx(2.0)
        # perimeter by face trapezoid
        assert d.boundary_weights.sum() == pytest.approx(6.0)
        assert d.h_eff == pytest.approx(0.1 / np.sqrt(2))
        assert d.check_geometry()

    @pytest.mark.parametrize("lengths,nodes", [((1.0,), (7,)), ((-1.0,), (9,)),
                                               ((1.0, 1.0, 1.0), (9, 9, 9))])
    def test_invalid(self, lengths, nodes):
        with pytest.raises(DimensionError):
            BoxDomain(lengths, nodes)

    def test_laplacian_of_quadratic(self):
        d = BoxDomain.interval(1.0, 41)
        x = d.coords[0]
        lap = d.laplacian(x ** 2)
        np.testing.assert_allclose(lap[1:-1], 2.0, atol=1e-9)


class TestSystemInstance:
    def test_rejects_defective_B(self):
        with pytest.raises(NotDiagonalizable):
            make_sys(np.zeros((2, 2)), np.array([[0.0, 1], [0, 0]]))

    def test_adjoint_transposes(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((2, 2))
        sys = make_sys(A, np.eye(2), np.eye(2))
        adj = sys.adjoint()
        np.testing.assert_array_equal(adj.coupling.A, A.T)
        assert adj.M == 0
        np.testing.assert_array_equal(adj.adjoint().coupling.A, A)


class TestControlSignal:
    def test_support_enforced(self):
        with pytest.raises(ValueError):
            ControlSignal(np.ones((5, 2, 1)), 0.5, 1.0)

    def test_zero_beyond_samples(self):
        d = BoxDomain.interval(1.0, 11)
        c = ControlSignal.zeros(d, 1, 0.1, 1.0)
        assert c.at(100).shape == (2, 1) and not c.at(100).any()

    def test_norm_of_constant(self):
        d = BoxDomain.interval(1.0, 11)
        c = ControlSignal(np.ones((11, 2, 1)), 0.1, 1.0)
        # two boundary points, unit weight each, over one time unit
        assert c.norm(d) == pytest.approx(np.sqrt(2.0))


class TestStep:
    def test_constant_is_steady_for_neumann(self):
        sys = make_sys(np.zeros((1, 1)), np.zeros((1, 1)))
        s = State(np.full((1, 51), 3.0), np.zeros((1, 51)))
        out = step(s, sys, None, 0.01)
        np.testing.assert_array_equal(out.U, s.U)
        np.testing.assert_array_equal(out.V, s.V)
        assert out.t == pytest.approx(0.01)

    def test_cfl_violation(self):
        sys = make_sys(np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(CFLViolation):
            step(State.zeros(1, sys.domain), sys, None, 0.1)

    def test_reversibility(self):
        sys = make_sys([[1.0]], [[0.5]])
        x = sys.domain.coords[0]
        s0 = State(np.cos(np.pi * x)[None], np.sin(np.pi * x)[None])
        s = s0
        dt, k = 0.01, 50
        for _ in range(k):
            s = step(s, sys, None, dt)
        s = State(s.U, -s.V)
        for _ in range(k):
            s = step(s, sys, None, dt)
        np.testing.assert_allclose(s.U, s0.U, atol=1e-12 * k)
        np.testing.assert_allclose(-s.V, s0.V, atol=1e-12 * k)

    def test_standing_mode_period(self):
        errors = []
        for n in (41, 81):
            sys = make_sys([[0.0]], [[0.0]], nodes=n)
            x = sys.domain.coords[0]
            init = State(np.cos(np.pi * x)[None], np.zeros((1, n)))
            # period 2L = 2 for the first cosine mode
            tr = simulate(sys, init, None, 2.0, snapshot_every=0,
                          cfl_factor=0.25)
            errors.append(np.abs(tr.U[-1] - init.U).max())
        assert errors[1] < errors[0] / 3


class TestSimulate:
    def test_zero_data_zero_control(self):
        sys = make_sys(np.eye(2), np.eye(2), np.eye(2))
        tr = simulate(sys, State.zeros(2, sys.domain),
                      ControlSignal.zeros(sys.domain, 2, 0.01, 1.0))
        assert not tr.U.any() and not tr.V.any()
        assert tr.times[0] == 0 and np.all(np.diff(tr.times) > 0)

    def test_first_snapshot_is_init(self):
        sys = make_sys([[1.0]], [[0.0]])
        x = sys.domain.coords[0]
        init = State(np.cos(np.pi * x)[None], np.zeros((1, 51)))
        tr = simulate(sys, init, None, 0.5)
        np.testing.assert_array_equal(tr.U[0], init.U)

    def test_decoupled_equivalence(self):
        A = np.diag([1.0, 3.0])
        B = np.diag([0.5, 2.0])
        D = np.eye(2)
        d = BoxDomain.interval(1.0, 51)
        x = d.coords[0]
        U0 = np.stack([np.cos(np.pi * x), x ** 2])
        V0 = np.stack([np.sin(x), np.zeros_like(x)])
        dt, _ = time_grid(d, 1.0)
        ctrl = ControlSignal.from_function(
            d, 2, dt, 1.0, lambda t, xb: smooth_bump(t, 1.0) * np.ones((2, 2)))
        full = simulate(SystemInstance(CouplingSpec(A, B, D), d),
                        State(U0, V0), ctrl)
        for k in range(2):
            one = SystemInstance(CouplingSpec(A[k:k + 1, k:k + 1],
                                              B[k:k + 1, k:k + 1], [[1.0]]), d)
            c1 = ControlSignal(ctrl.samples[:, :, k:k + 1], dt, 1.0)
            tr = simulate(one, State(U0[k:k + 1], V0[k:k + 1]), c1)
            assert np.abs(full.U[:, k] - tr.U[:, 0]).max() <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(4)
        A = np.array([[1.0, 0.3], [-0.2, 2.0]])
        B = np.array([[0.5, 0.1], [0.1, 1.0]])
        d = BoxDomain.interval(1.0, 31)
        sys = SystemInstance(CouplingSpec(A, B, np.eye(2)), d)
        dt, n = time_grid(d, 1.0)
        s1 = State(rng.standard_normal((2, 31)), rng.standard_normal((2, 31)))
        s2 = State(rng.standard_normal((2, 31)), rng.standard_normal((2, 31)))
        h1 = rng.standard_normal((n + 1, 2, 2))
        h2 = rng.standard_normal((n + 1, 2, 2))
        a, b = 0.7, -1.3
        run = lambda s, h: simulate(sys, s, ControlSignal(h, dt, 1.0)).U
        lhs = run(s1 * a + s2 * b, a * h1 + b * h2)
        rhs = a * run(s1, h1) + b * run(s2, h2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())

    def test_blow_up_detected(self):
        sys = make_sys([[-1e6]], [[0.0]])
        x = sys.domain.coords[0]
        with pytest.raises(BlowUpError) as err:
            simulate(sys, State(np.cos(np.pi * x)[None], np.zeros((1, 51))),
                     None, 200.0, snapshot_every=0)
        assert err.value.step is not None

    def test_shape_mismatch(self):
        sys = make_sys(np.eye(2), np.eye(2))
        with pytest.raises(DimensionError):
            simulate(sys, State.zeros(1, sys.domain), None, 1.0)

    def test_two_dimensional_energy(self):
        d = BoxDomain((1.0, 1.0), (21, 21))
        sys = SystemInstance(CouplingSpec([[1.0]], [[0.0]], np.zeros((1, 0))), d)
        x, y = d.coords
        init = State((np.cos(np.pi * x) * np.cos(np.pi * y))[None],
                     np.zeros((1, d.n_nodes)))
        tr = simulate(sys, init, None, 1.0, snapshot_every=5)
        E = tr.energy
        assert np.abs(E - E[0]).max() <= 1e-2 * E[0]


class TestAdjoint:
    def test_symmetric_case_equals_forward(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        B = np.array([[1.0, 0.2], [0.2, 0.5]])
        sys = make_sys(A, B, np.eye(2))
        x = sys.domain.coords[0]
        init = State(np.stack([np.cos(np.pi * x), x]), np.zeros((2, 51)))
        fwd = simulate(sys, init, None, 1.0)
        adj = simulate_adjoint(sys, init, 1.0)
        np.testing.assert_allclose(adj.U, fwd.U, atol=1e-12)

    def test_zero_data(self):
        sys = make_sys(np.eye(2), np.eye(2))
        assert not simulate_adjoint(sys, State.zeros(2, sys.domain), 1.0).U.any()

    def test_double_transpose(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((2, 2))
        sys = make_sys(A, np.eye(2))
        back = sys.adjoint().adjoint()
        np.testing.assert_array_equal(back.coupling.A, A)
        x = sys.domain.coords[0]
        init = State(np.stack([np.cos(np.pi * x), x]), np.zeros((2, 51)))
        np.testing.assert_array_equal(simulate(back, init, None, 0.5).U,
                                      simulate(sys, init, None, 0.5).U)


class TestEnergy:
    def test_zero_state(self):
        sys = make_sys(np.eye(2), np.eye(2))
        assert energy(State.zeros(2, sys.domain), sys) == 0

    def test_constant_state_boundary_term(self):
        B = np.array([[2.0, 0.5], [0.5, 1.0]])
        sys = make_sys(np.zeros((2, 2)), B)
        c = np.array([1.0, -2.0])
        s = State(np.outer(c, np.ones(51)), np.zeros((2, 51)))
        # gradient vanishes; boundary measure is two points of weight one
        assert energy(s, sys) == pytest.approx(0.5 * c @ (2 * B) @ c)

    def test_conservation(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        B = np.array([[1.0, 0.3], [0.3, 0.5]])
        sys = make_sys(A, B, nodes=101)
        x = sys.domain.coords[0]
        U0 = robin_compatible(sys.domain, np.stack([np.cos(np.pi * x),
                                                    0.5 * np.cos(2 * np.pi * x)]), B)
        dt = 0.25 * sys.domain.spacing[0]
        tr = simulate(sys, State(U0, np.zeros_like(U0)), None, 4.0, dt=dt)
        E = tr.energy
        assert np.abs(E - E[0]).max() <= 1e-4 * E[0]


class TestDuality:
    def _setup(self, n):
        d = BoxDomain.interval(1.0, n)
        A = np.array([[1.0, 0.4], [0.4, 2.0]])
        B = np.array([[0.5, 0.2], [0.2, 1.0]])
        D = np.array([[1.0], [0.5]])
        sys = SystemInstance(CouplingSpec(A, B, D), d)
        T = 2.0
        dt, _ = time_grid(d, T)
        ctrl = ControlSignal.from_function(
            d, 1, dt, T, lambda t, xb: np.array([smooth_bump(t, T) * np.cos(2 * t),
                                                 smooth_bump(t, T)]))
        x = d.coords[0]
        P0 = robin_compatible(d, np.stack([np.cos(np.pi * x),
                                           np.cos(2 * np.pi * x)]), B.T)
        return sys, ctrl, State(P0, np.zeros_like(P0)), D, T, dt

    def test_zero_control_zero_data(self):
        sys, ctrl, adj0, D, T, dt = self._setup(41)
        zero = ControlSignal(0 * ctrl.samples, dt, T)
        fwd = simulate(sys, State.zeros(2, sys.domain), zero, T)
        adj = simulate_adjoint(sys, adj0, T, dt=dt)
        assert duality_residual(fwd, adj, zero, D) == 0.0

    def test_identity_holds(self):
        sys, ctrl, adj0, D, T, dt = self._setup(101)
        fwd = simulate(sys, State.zeros(2, sys.domain), ctrl, T)
        adj = simulate_adjoint(sys, adj0, T, dt=dt)
        work = boundary_work(adj, ctrl, D)
        assert abs(work) > 1e-2
        assert duality_residual(fwd, adj, ctrl, D) <= 1e-6 * abs(work)

    def test_mismatched_grids(self):
        sys, ctrl, adj0, D, T, dt = self._setup(41)
        fwd = simulate(sys, State.zeros(2, sys.domain), ctrl, T)
        adj = simulate_adjoint(sys, adj0, T, dt=dt / 2)
        with pytest.raises(DimensionError):
            duality_residual(fwd, adj, ctrl, D)


class TestRobinViaNeumann:
    def _run(self, lam, n, T=2.0):
        sys = make_sys([[0.0]], [[lam]], [[1.0]], nodes=n)
        d = sys.domain
        dt, _ = time_grid(d, T)
        ctrl = ControlSignal.from_function(
            d, 1, dt, T, lambda t, xb: np.array([smooth_bump(t, T),
                                                 -0.5 * smooth_bump(t, T) * np.cos(3 * t)]))
        direct = simulate(sys, State.zeros(1, d), ctrl, T)
        trans = robin_via_neumann(sys, (lam, [1.0]), ctrl, T)
        return np.abs(direct.U[:, 0] - trans.U[:, 0]).max()

    def test_identity_transform(self):
        assert self._run(0.0, 51) <= 1e-12

    @pytest.mark.parametrize("lam", [-1.0, 2.0])
    def test_second_order(self, lam):
        e1, e2 = self._run(lam, 51), self._run(lam, 101)
        assert 3.0 <= e1 / e2 <= 5.0

    def test_coupled_eigenprojection(self):
        A = np.array([[1.0, 0.3], [0.3, 2.0]])
        B = np.array([[1.0, 0.5], [0.5, 1.0]])
        errs = []
        for n in (51, 101):
            sys = make_sys(A, B, np.eye(2), nodes=n)
            d = sys.domain
            dt, _ = time_grid(d, 1.5)
            ctrl = ControlSignal.from_function(
                d, 2, dt, 1.5, lambda t, xb: smooth_bump(t, 1.5) * np.array([[1.0, 0.2], [0.3, -1.0]]))
            direct = simulate(sys, State.zeros(2, d), ctrl, 1.5)
            e = np.array([1.0, 1.0]) / np.sqrt(2)
            trans = robin_via_neumann(sys, (1.5, e), ctrl, 1.5)
            errs.append(np.abs(np.einsum('n,snx->sx', e, direct.U)
                               - trans.U[:, 0]).max())
        assert errs[0] / errs[1] >= 3.0

    def test_rejects_non_eigenpair(self):
        sys = make_sys(np.eye(2), np.array([[1.0, 0.5], [0.5, 1.0]]), np.eye(2))
        with pytest.raises(ValueError):
            robin_via_neumann(sys, (1.0, [1.0, 0.0]), None, 1.0)


class TestHelpers:
    def test_mean_zero(self):
        d = BoxDomain.interval(1.0, 21)
        x = d.coords[0]
        s = mean_zero(State((x + 2)[None], np.ones((1, 21))), d)
        assert abs(d.integrate(s.U)[0]) < 1e-14
        assert abs(d.integrate(s.V)[0]) < 1e-14

    def test_robin_compatible_boundary_condition(self):
        d = BoxDomain.interval(1.0, 401)
        x = d.coords[0]
        B = np.array([[2.0]])
        U = robin_compatible(d, np.cos(np.pi * x)[None], B)[0]
        h = d.spacing[0]
        # one-sided second-order slopes at both ends
        left = -(-3 * U[0] + 4 * U[1] - U[2]) / (2 * h)
        right = (3 * U[-1] - 4 * U[-2] + U[-3]) / (2 * h)
        assert left + 2.0 * U[0] == pytest.approx(0.0, abs=1e-4)
        assert right + 2.0 * U[-1] == pytest.approx(0.0, abs=1e-4)

    def test_state_norm(self):
        d = BoxDomain.interval(1.0, 11)
        assert state_norm(np.ones((1, 11)), np.zeros((1, 11)), d) == pytest.approx(1.0)

    def test_time_grid_divides(self):
        d = BoxDomain.interval(1.0, 101)
        dt, n = time_grid(d, 4.0)
        assert n % 2 == 0 and dt * n == pytest.approx(4.0)
        assert dt <= 0.5 * d.h_eff
        with pytest.raises(ValueError):
            time_grid(d, 1.0, dt=0.3)
