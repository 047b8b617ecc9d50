import numpy as np
import pytest
from scipy.linalg import expm

from pdflow import _kernels_py
from pdflow.costs import LocalCost, Problem
from pdflow.digraph import Digraph, spectral_data
from pdflow.dynamics import (
    Gains, IntegratorConfig, State, _kernel_args, auto_horizon, csv_header, delta_map, equilibrium,
    initial_state, integrate, jacobian, linear_block, projectors, read_csv, slowest_rate, split,
    vector_field, write_csv,
)

try:
    from pdflow import _kernels as compiled
except ImportError:  # pragma: no cover
    compiled = None


def k2_setup(m=1):
    sd = spectral_data(Digraph(np.array([[0.0, 1], [1, 0]])))
    p = Problem([LocalCost(H=np.eye(m)), LocalCost(H=np.eye(m))])
    return p, sd


class TestTypes:
    @pytest.mark.parametrize("kw", [dict(alpha=0, beta=1), dict(alpha=1, beta=0), dict(alpha=1, beta=1, gamma=-1)])
    def test_gains_validation(self, kw):
        with pytest.raises(ValueError):
            Gains(**kw)

    def test_state_shapes(self):
        with pytest.raises(ValueError):
            State(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_eta_round_trip(self):
        s = State(np.arange(6.0).reshape(3, 2), -np.arange(6.0).reshape(3, 2))
        t = State.from_eta(s.eta, 3, 2)
        np.testing.assert_array_equal(t.x, s.x)
        np.testing.assert_array_equal(t.z, s.z)

    @pytest.mark.parametrize("kw", [dict(method="euler"), dict(dt=0), dict(T=-1), dict(record_stride=0)])
    def test_integrator_validation(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)


class TestVectorField:
    def test_two_node_hand_example(self):
        p, sd = k2_setup()
        d = vector_field(State([[1.0], [-1.0]], [[0.0], [0.0]]), Gains(1, 1, 0), sd, p)
        np.testing.assert_allclose(d.x.ravel(), [-2, 2])
        np.testing.assert_allclose(d.z.ravel(), [2, -2])

    def test_zero_at_equilibrium(self, problem, sd):
        g = Gains(5, 1, 0.3)
        eq = equilibrium(problem, sd, g, initial_state(problem, 0))
        d = vector_field(eq, g, sd, problem)
        assert max(np.abs(d.x).max(), np.abs(d.z).max()) <= 1e-12

    def test_consensus_invariant_without_cost(self, problem, sd):
        s = State(np.tile([1.0, -2, 3, 0.5], (5, 1)), np.zeros((5, 4)))
        d = vector_field(s, Gains(5, 1, 0), sd, problem)
        assert max(np.abs(d.x).max(), np.abs(d.z).max()) <= 1e-14

    def test_linear_block_consistency(self, sd):
        g = Gains(2.0, 0.7, 0.0)
        p = Problem([LocalCost(H=np.eye(3))] * 5)
        rng = np.random.default_rng(0)
        s = State(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
        d = vector_field(s, g, sd, p)
        np.testing.assert_allclose(linear_block(g, sd, 3) @ s.eta, d.eta, atol=1e-13)

    def test_linear_block_unit_gains(self):
        _, sd = k2_setup()
        A = linear_block(Gains(1, 1), sd)
        L = sd.L
        np.testing.assert_array_equal(A, np.block([[-L, -L], [L, np.zeros((2, 2))]]))

    def test_linear_block_stable_for_certified_gains(self, sd):
        ev = np.linalg.eigvals(linear_block(Gains(5, 1), sd, 4))
        assert ev.real.max() <= 1e-10

    def test_lure_decomposition(self, problem, sd):
        g = Gains(5, 1, 0.4)
        rng = np.random.default_rng(1)
        eq = equilibrium(problem, sd, g, State(np.zeros((5, 4)), np.zeros((5, 4))))
        for _ in range(10):
            s = State(rng.uniform(-2, 2, (5, 4)), rng.uniform(-2, 2, (5, 4)))
            e = s - eq
            lin = linear_block(g, sd, 4) @ e.eta
            nl = np.concatenate([-g.gamma * delta_map(problem, sd, eq.x, e.x).ravel(), np.zeros(20)])
            np.testing.assert_allclose(vector_field(s, g, sd, problem).eta, lin + nl, atol=1e-12)

    def test_jacobian_finite_difference(self, problem, sd):
        g = Gains(5, 1, 0.4)
        rng = np.random.default_rng(2)
        s = State(rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, (5, 4)))
        J = jacobian(s, g, sd, problem)
        h = 1e-6
        Jfd = np.empty_like(J)
        for k in range(40):
            e = np.zeros(40)
            e[k] = h
            fp = vector_field(State.from_eta(s.eta + e, 5, 4), g, sd, problem).eta
            fm = vector_field(State.from_eta(s.eta - e, 5, 4), g, sd, problem).eta
            Jfd[:, k] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(J, Jfd, atol=1e-6)


class TestDeltaMap:
    def test_zero(self, problem, sd):
        np.testing.assert_array_equal(delta_map(problem, sd, np.zeros((5, 4)), np.zeros((5, 4))), 0)

    def test_quadratic_is_linear(self, sd):
        rng = np.random.default_rng(0)
        Hs = [np.diag(rng.uniform(-1, 2, 2)) for _ in range(5)]
        p = Problem([LocalCost(H=H) for H in Hs])
        y = rng.normal(size=(5, 2))
        expect = np.array([Hs[i] @ y[i] / sd.r[i] for i in range(5)])
        np.testing.assert_allclose(delta_map(p, sd, rng.normal(size=(5, 2)), y), expect, atol=1e-12)

    def test_matches_scaled_gradient_difference(self, problem, sd):
        from pdflow.costs import scaled_grad

        rng = np.random.default_rng(1)
        ys = rng.uniform(-1, 1, (5, 4))
        yt = rng.uniform(-1, 1, (5, 4))
        expect = np.array([scaled_grad(c, sd.r[i], ys[i] + yt[i]) - scaled_grad(c, sd.r[i], ys[i])
                           for i, c in enumerate(problem.costs)])
        np.testing.assert_allclose(delta_map(problem, sd, ys, yt), expect, atol=1e-12)

    def test_flat_and_batched_inputs(self, problem, sd):
        rng = np.random.default_rng(2)
        Y = rng.uniform(-1, 1, (3, 5, 4))
        batch = delta_map(problem, sd, np.zeros(20), Y)
        for t in range(3):
            np.testing.assert_allclose(delta_map(problem, sd, np.zeros(20), Y[t].ravel()), batch[t].ravel())


class TestProjectors:
    @pytest.mark.parametrize("m", [1, 3])
    def test_algebra(self, sd, m):
        Pi, Pp = projectors(sd, m)
        np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-12)
        np.testing.assert_allclose(Pi + Pp, np.eye(5 * m), atol=1e-12)
        assert not np.allclose(Pi, Pi.T)

    def test_consensus_fixed(self, sd):
        Pi, _ = projectors(sd, 2)
        v = np.tile([1.5, -0.5], 5)
        np.testing.assert_allclose(Pi @ v, v, atol=1e-14)

    def test_balanced_is_uniform_average(self):
        _, sd = k2_setup()
        Pi, _ = projectors(sd, 1)
        np.testing.assert_allclose(Pi, np.full((2, 2), 0.5))

    def test_split_matches_dense(self, sd):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5, 3))
        Pi, Pp = projectors(sd, 3)
        bar, perp = split(sd, X)
        np.testing.assert_allclose(bar.ravel(), Pi @ X.ravel(), atol=1e-14)
        np.testing.assert_allclose(perp.ravel(), Pp @ X.ravel(), atol=1e-14)


class TestIntegration:
    def test_stationary_at_equilibrium(self, problem, sd):
        g = Gains(5, 1, 0.2)
        eq = equilibrium(problem, sd, g, initial_state(problem, 0))
        tr = integrate(problem, sd, g, eq, IntegratorConfig(dt=1e-3, T=1.0))
        assert np.abs(tr.X - eq.x).max() <= 1e-10
        assert np.abs(tr.Z - eq.z).max() <= 1e-10

    def test_rk4_order_against_matrix_exponential(self, sd):
        g = Gains(5, 1, 0)
        p = Problem([LocalCost(H=np.eye(1))] * 5)
        s0 = initial_state(p, 0)
        exact = expm(linear_block(g, sd, 1) * 2.0) @ s0.eta
        errs = []
        for dt in (0.02, 0.01, 0.005):
            tr = integrate(p, sd, g, s0, IntegratorConfig(dt=dt, T=2.0))
            errs.append(np.linalg.norm(tr.final.eta - exact))
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        assert all(14 < q < 18 for q in ratios), ratios

    def test_conservation(self, problem, sd):
        tr = integrate(problem, sd, Gains(5, 1, 0.0), initial_state(problem, 3),
                       IntegratorConfig(dt=1e-3, T=5.0, record_stride=50))
        za = tr.obs["z_avg"]
        assert np.abs(za - za[0]).max() <= 1e-9

    def test_record_stride_and_final_step(self, problem, sd):
        tr = integrate(problem, sd, Gains(5, 1, 0), initial_state(problem, 0, 1.0),
                       IntegratorConfig(dt=1e-2, T=1.05, record_stride=10))
        assert tr.times[0] == 0.0
        assert tr.times[-1] == pytest.approx(1.05)
        assert np.all(np.diff(tr.times) > 0)

    def test_divergence_reported(self, problem, sd):
        tr = integrate(problem, sd, Gains(5, 1, 0.5), initial_state(problem, 0, 1.0), IntegratorConfig(T=5.0))
        assert tr.diverged
        assert 0 < tr.blowup_time < 5.0
        assert np.all(np.isfinite(tr.X))
        assert not tr.converged()

    @pytest.mark.parametrize("method", ["rk45", "lsoda"])
    def test_adaptive_agrees_with_rk4(self, problem, sd, method):
        g = Gains(5, 1, 0.01)
        s0 = initial_state(problem, 1, 1.0)
        ref = integrate(problem, sd, g, s0, IntegratorConfig(dt=1e-3, T=3.0))
        tr = integrate(problem, sd, g, s0, IntegratorConfig(method=method, T=3.0, rtol=1e-10, atol=1e-12))
        assert tr.times[-1] == pytest.approx(3.0)
        np.testing.assert_allclose(tr.final.eta, ref.final.eta, atol=1e-7)

    def test_adaptive_divergence(self, problem, sd):
        tr = integrate(problem, sd, Gains(5, 1, 0.5), initial_state(problem, 0, 1.0),
                       IntegratorConfig(method="rk45", T=5.0))
        assert tr.diverged and tr.blowup_time is not None

    def test_rejects_bad_initial_state(self, problem, sd):
        with pytest.raises(ValueError):
            integrate(problem, sd, Gains(5, 1), State(np.zeros((4, 4)), np.zeros((4, 4))))
        with pytest.raises(ValueError):
            integrate(problem, sd, Gains(5, 1), State(np.full((5, 4), np.nan), np.zeros((5, 4))))

    def test_deterministic(self, problem, sd):
        a = integrate(problem, sd, Gains(5, 1, 0.01), initial_state(problem, 4), IntegratorConfig(T=0.5))
        b = integrate(problem, sd, Gains(5, 1, 0.01), initial_state(problem, 4), IntegratorConfig(T=0.5))
        np.testing.assert_array_equal(a.X, b.X)


@pytest.mark.skipif(compiled is None, reason="compiled kernels not built")
class TestBackends:
    def test_vector_field_identical(self, problem, sd):
        args = _kernel_args(problem, sd, Gains(5, 1, 0.3))
        rng = np.random.default_rng(0)
        X, Z = rng.uniform(-3, 3, (2, 5, 4))
        a = compiled.vector_field(*args, X, Z)
        b = _kernels_py.vector_field(*args, X, Z)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-13, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-13, atol=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 0.05, 0.5])
    def test_rk4_identical(self, problem, sd, gamma):
        args = _kernel_args(problem, sd, Gains(5, 1, gamma))
        s0 = initial_state(problem, 2, 1.0)
        a = compiled.rk4(*args, s0.x, s0.z, 1e-3, 1500, 7, 1e9)
        b = _kernels_py.rk4(*args, s0.x, s0.z, 1e-3, 1500, 7, 1e9)
        np.testing.assert_array_equal(a[2], b[2])
        assert a[3:] == b[3:]
        np.testing.assert_allclose(a[0], b[0], rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-10)

    def test_pure_python_switch(self):
        import os
        import subprocess
        import sys

        env = dict(os.environ, PDFLOW_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "import pdflow; print(pdflow.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"


class TestHorizon:
    def test_slowest_rate_positive(self, problem, sd):
        g = Gains(5, 1, 0)
        eq = equilibrium(problem, sd, g, initial_state(problem, 0))
        assert slowest_rate(problem, sd, g, eq) > 0

    def test_auto_horizon_reaches_tolerance(self, problem, sd):
        g = Gains(5, 1, 0)
        s0 = initial_state(problem, 0, 1.0)
        T = auto_horizon(problem, sd, g, s0)
        tr = integrate(problem, sd, g, s0, IntegratorConfig(T=T, record_stride=1000))
        assert tr.converged(1e-6)


class TestCSV:
    def test_header(self):
        assert csv_header(2, 1) == ["t", "x_1_1", "x_2_1", "z_1_1", "z_2_1", "V", "f_x", "xLx", "zLz", "err_norm"]

    def test_round_trip_exact(self, tmp_path, problem, sd):
        tr = integrate(problem, sd, Gains(5, 1, 0.01), initial_state(problem, 0),
                       IntegratorConfig(T=0.2, record_stride=20))
        path = tmp_path / "t.csv"
        write_csv(tr, path)
        t, X, Z = read_csv(path)
        np.testing.assert_array_equal(t, tr.times)
        np.testing.assert_array_equal(X, tr.X)
        np.testing.assert_array_equal(Z, tr.Z)
