import math

import numpy as np
import pytest

from conftest import random_config
from fptx import net
from fptx.errors import KinkCrossingError, NonGenericError
from fptx.jacobians import (LayerKind, LayerPoint, analytic_jacobian,
                            fd_jacobian_for_point, finite_difference_jacobian,
                            jacobian_kernel_checks, layer_apply, vec)
from fptx.tensor import induced_norm

INF = math.inf


def random_point(rng, kind, d=4, n=3, hidden=6):
    cfg = random_config(rng, d=d, hidden=hidden)
    return {
        LayerKind.CENTRING: lambda: LayerPoint.centring(rng.standard_normal(d)),
        LayerKind.RMSNORM: lambda: LayerPoint.rmsnorm(rng.standard_normal(d)),
        LayerKind.LAYERNORM: lambda: LayerPoint.layernorm(rng.standard_normal(d)),
        LayerKind.AFFINE: lambda: LayerPoint.affine(
            rng.standard_normal((hidden, d)), rng.standard_normal(hidden),
            rng.standard_normal(d)),
        LayerKind.TLP: lambda: LayerPoint.tlp(cfg, rng.standard_normal(d)),
        LayerKind.SIMSCORES: lambda: LayerPoint.simscores(cfg, rng.standard_normal((d, n))),
        LayerKind.SOFTMAX: lambda: LayerPoint.softmax(rng.standard_normal(n)),
        LayerKind.ATTENTION: lambda: LayerPoint.attention(cfg, rng.standard_normal((d, n))),
        LayerKind.MATMUL: lambda: LayerPoint.matmul(
            rng.standard_normal((3, 4)), rng.standard_normal((4, 2))),
    }[kind]()


def rel_frob(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


class TestClosedFormValues:
    def test_rms_at_ones(self):
        jac = analytic_jacobian(LayerPoint.rmsnorm(np.ones(2)))
        assert np.allclose(jac, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)

    def test_softmax_at_zero(self):
        jac = analytic_jacobian(LayerPoint.softmax(np.zeros(2)))
        assert np.allclose(jac, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)

    def test_centring_is_projector(self, rng):
        jac = analytic_jacobian(LayerPoint.centring(rng.standard_normal(5)))
        assert np.allclose(jac, np.eye(5) - np.ones((5, 5)) / 5)


class TestFiniteDifferenceOracle:
    def test_linear_map_recovers_matrix(self, rng):
        a = rng.standard_normal((4, 5))
        jac = finite_difference_jacobian(lambda x: a @ x, rng.standard_normal(5))
        assert np.max(np.abs(jac - a)) < 1e-10

    def test_richardson_consistency_softmax(self, rng):
        # steps large enough that truncation, not cancellation, dominates:
        # halving the step must shrink the residual (roughly 4x)
        s = rng.standard_normal(5)
        f = lambda v: net.softmax(v)
        j1 = finite_difference_jacobian(f, s, step=1e-3)
        j2 = finite_difference_jacobian(f, s, step=5e-4)
        analytic = analytic_jacobian(LayerPoint.softmax(s))
        assert rel_frob(analytic, j1) < 1e-5
        assert rel_frob(analytic, j2) < 1e-6
        r1 = np.linalg.norm(j1 - analytic)
        r2 = np.linalg.norm(j2 - analytic)
        assert r2 < r1

    def test_layernorm_product_form_oracle(self):
        # independent evaluation of the chain-rule product; at d = 2 the
        # normalization Jacobian vanishes identically, so the comparison
        # there is absolute
        x = np.array([1.0, 3.0])
        c = x - x.mean()
        nc = np.linalg.norm(c)
        j_r = (math.sqrt(2) / nc) * (np.eye(2) - np.outer(c, c) / nc**2)
        j_c = np.eye(2) - np.ones((2, 2)) / 2
        oracle = j_r @ j_c
        fd = finite_difference_jacobian(lambda v: net.layer_norm(v), x)
        assert np.max(np.abs(oracle - fd)) < 1e-8
        assert np.max(np.abs(oracle - analytic_jacobian(LayerPoint.layernorm(x)))) < 1e-14

        x3 = np.array([0.5, -1.0, 2.0])
        c = x3 - x3.mean()
        nc = np.linalg.norm(c)
        j_r = (math.sqrt(3) / nc) * (np.eye(3) - np.outer(c, c) / nc**2)
        j_c = np.eye(3) - np.ones((3, 3)) / 3
        oracle = j_r @ j_c
        fd = finite_difference_jacobian(lambda v: net.layer_norm(v), x3)
        assert rel_frob(oracle, fd) < 1e-8
        assert rel_frob(oracle, analytic_jacobian(LayerPoint.layernorm(x3))) < 1e-13

    def test_kink_detection(self, rng):
        d, hid = 3, 4
        cfg = random_config(rng, d=d, hidden=hid)
        x = rng.standard_normal(d)
        # place one pre-activation entry exactly on the kink
        y = cfg.a1 @ x + cfg.b1
        b1 = cfg.b1.copy()
        b1[0] -= y[0]
        cfg2 = net.TransformerConfig(cfg.a1, b1, cfg.a2, cfg.b2,
                                     cfg.wq, cfg.wk, cfg.wv)
        pt = LayerPoint.tlp(cfg2, x)
        with pytest.raises((KinkCrossingError, NonGenericError)):
            fd_jacobian_for_point(pt)


class TestAnalyticAgainstFiniteDifferences:
    @pytest.mark.parametrize("kind", list(LayerKind))
    def test_kind(self, rng, kind):
        done = 0
        while done < 25:
            pt = random_point(rng, kind)
            try:
                ja = analytic_jacobian(pt)
                jf = fd_jacobian_for_point(pt)
            except (NonGenericError, KinkCrossingError):
                continue
            done += 1
            assert rel_frob(ja, jf) < 1e-5

    def test_attention_with_documented_step(self, rng):
        for _ in range(5):
            cfg = random_config(rng, d=3, hidden=4)
            x = rng.standard_normal((3, 3))
            pt = LayerPoint.attention(cfg, x)
            step = 1e-6 * (1.0 + induced_norm(x, 1, INF))
            ja = analytic_jacobian(pt)
            jf = fd_jacobian_for_point(pt, step=step)
            assert rel_frob(ja, jf) < 1e-6


class TestStructure:
    def test_attention_block_lower_triangular(self, rng):
        d, n = 3, 4
        cfg = random_config(rng, d=d)
        jac = analytic_jacobian(LayerPoint.attention(cfg, rng.standard_normal((d, n))))
        for t in range(1, n + 1):
            upper = jac[(t - 1) * d: t * d, t * d:]
            assert np.array_equal(upper, np.zeros_like(upper))

    def test_tlp_locally_constant(self, rng):
        cfg = random_config(rng, d=4, hidden=6)
        while True:
            x = rng.standard_normal(4)
            pre = cfg.a1 @ x + cfg.b1
            if np.min(np.abs(pre)) > 1e-2:
                break
        j1 = analytic_jacobian(LayerPoint.tlp(cfg, x))
        # a perturbation small enough to keep the sign pattern
        xh = x + 1e-4 * rng.standard_normal(4)
        assert np.array_equal(np.sign(cfg.a1 @ xh + cfg.b1), np.sign(pre))
        j2 = analytic_jacobian(LayerPoint.tlp(cfg, xh))
        assert np.array_equal(j1, j2)

    def test_matmul_layout(self, rng):
        x = rng.standard_normal((3, 4))
        y = rng.standard_normal((4, 2))
        jac = analytic_jacobian(LayerPoint.matmul(x, y))
        assert jac.shape == (6, 3 * 4 + 4 * 2)
        assert np.array_equal(jac[:, :12], np.kron(y.T, np.eye(3)))
        assert np.array_equal(jac[:, 12:], np.kron(np.eye(2), x))

    def test_vec_is_column_major(self):
        m = np.array([[1.0, 3.0], [2.0, 4.0]])
        assert np.array_equal(vec(m), [1.0, 2.0, 3.0, 4.0])


class TestGenericityGuards:
    def test_zero_vector_rms(self):
        with pytest.raises(NonGenericError, match="x != 0"):
            analytic_jacobian(LayerPoint.rmsnorm(np.zeros(3)))

    def test_constant_layernorm(self):
        with pytest.raises(NonGenericError, match="centring"):
            analytic_jacobian(LayerPoint.layernorm(np.full(4, 2.5)))

    def test_tlp_near_kink(self, rng):
        cfg = random_config(rng, d=3, hidden=4)
        x = rng.standard_normal(3)
        y = cfg.a1 @ x + cfg.b1
        b1 = cfg.b1.copy()
        b1[1] -= y[1] - 1e-14
        cfg2 = net.TransformerConfig(cfg.a1, b1, cfg.a2, cfg.b2,
                                     cfg.wq, cfg.wk, cfg.wv)
        with pytest.raises(NonGenericError, match="ReLU"):
            analytic_jacobian(LayerPoint.tlp(cfg2, x))


class TestKernelChecks:
    def test_rms_kernel(self, rng):
        x = rng.standard_normal(6)
        out = jacobian_kernel_checks(LayerPoint.rmsnorm(x))
        assert out["J_times_x"] <= 1e-12
        assert out["spectral_norm"] == pytest.approx(
            math.sqrt(6) / np.linalg.norm(x), rel=1e-8)

    def test_centring_kernel(self, rng):
        out = jacobian_kernel_checks(LayerPoint.centring(rng.standard_normal(5)))
        assert out["J_times_ones"] <= 1e-12
        assert out["spectral_norm"] == pytest.approx(1.0, rel=1e-10)

    def test_layernorm_kernel(self, rng):
        x = rng.standard_normal(5)
        out = jacobian_kernel_checks(LayerPoint.layernorm(x))
        c = x - x.mean()
        assert out["J_times_x"] <= 1e-12
        assert out["J_times_ones"] <= 1e-12
        assert out["spectral_norm"] == pytest.approx(
            math.sqrt(5) / np.linalg.norm(c), rel=1e-8)

    def test_softmax_kernel_and_row_sums(self, rng):
        s = rng.standard_normal(6)
        out = jacobian_kernel_checks(LayerPoint.softmax(s))
        psi = net.softmax(s)
        assert out["J_times_ones"] <= 1e-12
        assert out["row_sums"] <= 1e-12
        assert out["spectral_norm"] <= np.max(psi) * (1 + 1e-10)


class TestLemmaNormBounds:
    def test_softmax_infinity_norm_exact(self, rng):
        for _ in range(10):
            s = rng.standard_normal(6)
            psi = net.softmax(s)
            jac = analytic_jacobian(LayerPoint.softmax(s))
            expected = 2.0 * float(np.max(psi * (1 - psi)))
            assert induced_norm(jac, INF, INF) == pytest.approx(expected, rel=1e-12)
            assert induced_norm(jac, 1, INF) == pytest.approx(expected / 2, rel=1e-12)
            assert induced_norm(jac, 1, 1) == pytest.approx(expected, rel=1e-12)

    def test_rms_norm_bounds(self, rng):
        for _ in range(10):
            x = rng.standard_normal(5)
            nx = np.linalg.norm(x)
            jac = analytic_jacobian(LayerPoint.rmsnorm(x))
            lead = math.sqrt(5) / nx
            bound_1inf = lead * max(1 - np.min(np.abs(x)) ** 2 / nx**2,
                                    np.max(np.abs(x)) ** 2 / nx**2)
            bound_inf = lead * (1 + np.max(np.abs(x))
                                * (np.sum(np.abs(x)) - 2 * np.min(np.abs(x))) / nx**2)
            assert induced_norm(jac, 1, INF) <= bound_1inf * (1 + 1e-12)
            assert induced_norm(jac, INF, INF) <= bound_inf * (1 + 1e-12)
            assert induced_norm(jac, 1, 1) == pytest.approx(
                induced_norm(jac, INF, INF), rel=1e-12)

    def test_centring_norms_exact(self, rng):
        d = 6
        jac = analytic_jacobian(LayerPoint.centring(rng.standard_normal(d)))
        assert induced_norm(jac, 1, INF) == pytest.approx(1 - 1 / d, rel=1e-12)
        assert induced_norm(jac, 1, 1) == pytest.approx(2 * (1 - 1 / d), rel=1e-12)
        assert induced_norm(jac, INF, INF) == pytest.approx(2 * (1 - 1 / d), rel=1e-12)

    def test_simscores_norm_bounds(self, rng):
        d, n = 4, 3
        cfg = random_config(rng, d=d)
        x = rng.standard_normal((d, n))
        jac = analytic_jacobian(LayerPoint.simscores(cfg, x))
        b = cfg.wk.T @ cfg.wq / math.sqrt(d)
        # for the diagonal pairs the identity factor ||I||_{q*,p*} equals 1
        # and the score-vector term carries the dual norm p/(p-1)
        for p, q, dual in [(1, 1, INF), (INF, INF, 1), (2, 2, 2)]:
            lhs = induced_norm(jac, p, q)
            rhs = (np.linalg.norm(b @ x[:, -1], ord=dual)
                   + induced_norm(x.T @ b, p, q))
            assert lhs <= rhs * (1 + 1e-12)

    def test_layernorm_norm_bounds(self, rng):
        for _ in range(10):
            x = rng.standard_normal(5)
            c = x - x.mean()
            nc = np.linalg.norm(c)
            jac = analytic_jacobian(LayerPoint.layernorm(x))
            lead = math.sqrt(5) / nc
            assert induced_norm(jac, 1, INF) <= lead * (
                1 - 1 / 5 + np.max(np.abs(c)) ** 2 / nc**2) * (1 + 1e-12)
            assert induced_norm(jac, INF, INF) <= lead * (
                2 - 2 / 5 + np.max(np.abs(c)) * np.sum(np.abs(c)) / nc**2) * (1 + 1e-12)


class TestLayerApply:
    @pytest.mark.parametrize("kind", list(LayerKind))
    def test_consistent_shapes(self, rng, kind):
        pt = random_point(rng, kind)
        try:
            jac = analytic_jacobian(pt)
        except NonGenericError:
            return
        out = layer_apply(pt)
        assert jac.shape[0] == np.asarray(out).size
