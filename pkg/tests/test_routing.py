"""Routing module: STEBS closed forms, Gumbel relaxation, mode baselines."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dmvfn.tensor as T
from dmvfn.tensor import Tensor
from dmvfn.routing import (
    RoutingMode, RoutingNet, routing_logits, stebs_sample, stebs_probabilities,
    gumbel_sample, make_routing, tau_schedule,
)

from oracles import gradcheck, tensors


def logit(p):
    return float(np.log(p / (1.0 - p)))


class TestStebsClosedForms:
    def test_equal_logits_beta_half(self):
        v = Tensor(np.full(9, 0.7, dtype=np.float64))
        _, w = stebs_sample(v, 0.5, np.random.default_rng(0))
        np.testing.assert_allclose(w.data, 0.5, atol=1e-6)

    def test_two_block_direct_evaluation(self):
        v = Tensor(np.array([logit(0.9), logit(0.1)]))
        _, w = stebs_sample(v, 0.5, np.random.default_rng(0))
        np.testing.assert_allclose(w.data, [0.9, 0.1], atol=1e-6)

    def test_clamp_fires_at_one(self):
        # sigmoid(40) is exactly 1.0 in float64
        v = Tensor(np.array([40.0, logit(0.1), logit(0.1)]))
        _, w = stebs_sample(v, 0.8, np.random.default_rng(0))
        np.testing.assert_allclose(w.data, [1.0, 0.2, 0.2], atol=1e-6)

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            stebs_sample(Tensor(np.zeros(3)), 0.0, np.random.default_rng(0))


class TestStebsSampling:
    def test_monte_carlo_rate(self):
        v = Tensor(np.zeros((10_000, 9), dtype=np.float32))
        samples, w = stebs_sample(v, 0.5, np.random.default_rng(1234))
        np.testing.assert_allclose(w.data, 0.5, atol=1e-6)
        rates = samples.data.mean(axis=0)
        assert (rates >= 0.48).all() and (rates <= 0.52).all()

    def test_ste_gradient_identity_on_hand_built_graph(self):
        w = Tensor(np.array([0.3, 0.6, 0.9]), requires_grad=True)
        v = T.ste_bernoulli(w, np.random.default_rng(0))
        coeff = Tensor(np.array([2.0, -5.0, 0.25]))
        T.sum_all(T.mul(v, coeff)).backward()
        np.testing.assert_array_equal(w.grad, coeff.data)

    def test_gradcheck_through_normalization(self):
        rng = np.random.default_rng(2)
        logits, = tensors(rng.standard_normal((2, 5)) * 0.5)

        def forward():
            sig = T.sigmoid(logits)
            total = T.sum_axis(sig, 1)
            w = T.minimum_scalar(T.mul_scalar(T.div(sig, total), 0.5 * 5), 1.0)
            return T.mean_all(T.mul(w, w))

        gradcheck(forward, [logits])

    def test_budget_sum_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.standard_normal(9) * 3
            for beta in (0.3, 0.5, 0.8):
                w = stebs_probabilities(logits, beta)
                assert w.sum() <= beta * 9 + 1e-9
                if (w < 1.0).all():
                    assert w.sum() == pytest.approx(beta * 9, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_w_monotone_in_beta(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal(9) * 2
        grid = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
        sums = [stebs_probabilities(logits, b).sum() for b in grid]
        prev_w = stebs_probabilities(logits, grid[0])
        for b in grid[1:]:
            w = stebs_probabilities(logits, b)
            assert (w >= prev_w - 1e-12).all()
            prev_w = w
        assert all(s2 >= s1 - 1e-12 for s1, s2 in zip(sums, sums[1:]))


class TestGumbel:
    def test_symmetry_point(self):
        for tau in (0.1, 1.0, 5.0):
            rng = _FixedGumbel(1.0)
            v = gumbel_sample(Tensor(np.zeros(4)), tau, rng)
            np.testing.assert_allclose(v.data, 0.5, atol=1e-12)

    def test_low_temperature_limits(self):
        rng = _FixedGumbel(0.0)
        v_hi = gumbel_sample(Tensor(np.full(3, 2.0)), 1e-3, rng)
        v_lo = gumbel_sample(Tensor(np.full(3, 0.0)), 1e-3, rng)
        np.testing.assert_allclose(v_hi.data, 1.0, atol=1e-9)
        np.testing.assert_allclose(v_lo.data, 0.0, atol=1e-9)

    def test_scalar_evaluation(self):
        rng = _FixedGumbel(0.5)
        v = gumbel_sample(Tensor(np.array([1.0])), 1.0, rng)  # logit + noise = 1.5
        assert float(v.data[0]) == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-7)

    def test_open_interval_and_complement(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal(64) * 4
        noise = rng.gumbel(size=64)
        v = gumbel_sample(Tensor(logits), 0.7, _FixedGumbel(noise))
        # second call sees logits + noise replaced by 2 - (logits + noise)
        v_swapped = gumbel_sample(Tensor(2.0 - logits - 2.0 * noise), 0.7, _FixedGumbel(noise))
        assert (v.data > 0).all() and (v.data < 1).all()
        np.testing.assert_allclose(v.data + v_swapped.data, 1.0, atol=1e-9)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            gumbel_sample(Tensor(np.zeros(3)), 0.0, np.random.default_rng(0))

    def test_gradcheck(self):
        logits, = tensors(np.random.default_rng(6).standard_normal(5))
        noise = np.random.default_rng(7).gumbel(size=5)
        gradcheck(lambda: T.mean_all(gumbel_sample(logits, 0.9, _FixedGumbel(noise))), [logits])

    def test_tau_schedule_endpoints(self):
        assert tau_schedule(0, 100, 5.0, 0.1) == pytest.approx(5.0)
        assert tau_schedule(100, 100, 5.0, 0.1) == pytest.approx(0.1)
        mid = tau_schedule(50, 100, 5.0, 0.1)
        assert 0.1 < mid < 5.0


class _FixedGumbel:
    """rng stand-in yielding predetermined 'Gumbel' noise."""

    def __init__(self, values):
        self.values = values

    def gumbel(self, size=None):
        return np.broadcast_to(np.asarray(self.values, dtype=np.float64), size).copy()


class TestRoutingNet:
    def make(self, seed=0, n=9):
        return RoutingNet(np.random.default_rng(seed), n_blocks=n)

    def test_zero_init_head_gives_zero_logits(self):
        net = self.make()
        rng = np.random.default_rng(1)
        prev = Tensor(rng.random((2, 3, 32, 32)).astype(np.float32))
        cur = Tensor(rng.random((2, 3, 32, 32)).astype(np.float32))
        logits = routing_logits(net, prev, cur)
        assert logits.shape == (2, 9)
        np.testing.assert_array_equal(logits.data, 0.0)

    def test_per_sample_rows_independent(self):
        net = self.make()
        for p in net.params():
            p.tensor.data = np.random.default_rng(2).standard_normal(p.tensor.shape).astype(np.float32) * 0.1
        rng = np.random.default_rng(3)
        a = rng.random((1, 3, 16, 16)).astype(np.float32)
        b = rng.random((1, 3, 16, 16)).astype(np.float32)
        batched = routing_logits(net, Tensor(np.concatenate([a, a])), Tensor(np.concatenate([b, b])))
        single = routing_logits(net, Tensor(a), Tensor(b))
        np.testing.assert_allclose(batched.data[0], single.data[0], atol=1e-6)
        np.testing.assert_allclose(batched.data[1], single.data[0], atol=1e-6)

    def test_frame_shape_mismatch(self):
        net = self.make()
        with pytest.raises(Exception):
            routing_logits(net, Tensor(np.zeros((1, 3, 16, 16))), Tensor(np.zeros((1, 3, 16, 12))))

    def test_gradcheck_through_stack(self):
        net = RoutingNet(np.random.default_rng(4), n_blocks=3, widths=(3, 4))
        leaves = []
        for p in net.params():
            p.tensor.data = p.tensor.data.astype(np.float64)
            if p.tensor.data.size and "head" in p.name:
                p.tensor.data = np.random.default_rng(5).standard_normal(p.tensor.shape) * 0.3
            leaves.append(p.tensor)
        rng = np.random.default_rng(6)
        prev, cur = tensors(rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8)))
        leaves += [prev, cur]
        gradcheck(lambda: T.mean_all(T.sigmoid(routing_logits(net, prev, cur))),
                  leaves, max_coords=12)


class TestMakeRouting:
    def frames(self, seed=0, n=2):
        rng = np.random.default_rng(seed)
        return (Tensor(rng.random((n, 3, 16, 16)).astype(np.float32)),
                Tensor(rng.random((n, 3, 16, 16)).astype(np.float32)))

    def test_always_on(self):
        net = RoutingNet(np.random.default_rng(0), 9)
        prev, cur = self.frames()
        r = make_routing(RoutingMode(kind="always_on"), net, prev, cur, "infer", np.random.default_rng(0))
        np.testing.assert_array_equal(r.v.data, 1.0)
        np.testing.assert_array_equal(r.w, 1.0)

    def test_random_seeded_reproducible(self):
        net = RoutingNet(np.random.default_rng(0), 9)
        prev, cur = self.frames()
        r1 = make_routing(RoutingMode(kind="random", p=0.5), net, prev, cur, "infer", np.random.default_rng(77))
        r2 = make_routing(RoutingMode(kind="random", p=0.5), net, prev, cur, "infer", np.random.default_rng(77))
        np.testing.assert_array_equal(r1.v.data, r2.v.data)
        assert set(np.unique(r1.v.data)) <= {0.0, 1.0}

    def test_stebs_phases(self):
        net = RoutingNet(np.random.default_rng(0), 9)
        prev, cur = self.frames()
        rt = make_routing(RoutingMode(kind="stebs", beta=0.5), net, prev, cur, "train", np.random.default_rng(1))
        assert rt.v.requires_grad
        assert set(np.unique(rt.v.data)) <= {0.0, 1.0}
        ri = make_routing(RoutingMode(kind="stebs", beta=0.5), net, prev, cur, "infer", np.random.default_rng(1))
        assert not ri.v.requires_grad
        np.testing.assert_allclose(ri.w, 0.5, atol=1e-6)  # zero logits -> w = beta

    def test_stebs_deterministic_inference_switch(self):
        net = RoutingNet(np.random.default_rng(0), 9)
        prev, cur = self.frames()
        mode = RoutingMode(kind="stebs", beta=0.8, deterministic_infer=True)
        r1 = make_routing(mode, net, prev, cur, "infer", np.random.default_rng(1))
        r2 = make_routing(mode, net, prev, cur, "infer", np.random.default_rng(999))
        np.testing.assert_array_equal(r1.v.data, r2.v.data)
        np.testing.assert_array_equal(r1.v.data, (r1.w > 0.5).astype(np.float32))

    def test_gumbel_phases(self):
        net = RoutingNet(np.random.default_rng(0), 9)
        prev, cur = self.frames()
        rt = make_routing(RoutingMode(kind="gumbel"), net, prev, cur, "train", np.random.default_rng(2), tau=2.0)
        assert ((rt.v.data > 0) & (rt.v.data < 1)).all()
        ri = make_routing(RoutingMode(kind="gumbel"), net, prev, cur, "infer", np.random.default_rng(2))
        assert set(np.unique(ri.v.data)) <= {0.0, 1.0}

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            RoutingMode(kind="sometimes")
        with pytest.raises(ValueError):
            RoutingMode(beta=-0.5)
        with pytest.raises(ValueError):
            RoutingMode(tau_start=0.1, tau_end=1.0)
        with pytest.raises(ValueError):
            RoutingMode(p=1.5)
