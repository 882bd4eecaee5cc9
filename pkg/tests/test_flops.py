"""FLOPs ledger identities and usage-rate statistics."""

import numpy as np
import pytest

from dmvfn.flops import (
    conv2d_flops, transposed_conv2d_flops, linear_flops,
    block_flops, routing_net_flops, model_ledger, usage_rate,
)
from dmvfn.net import DmvfnModel, DmvfnConfig, MvfbConfig
from dmvfn.routing import RoutingMode
from dmvfn.data import ClipRecord, SynthConfig, gen_moving_shapes


class TestPrimitives:
    def test_hand_counted_single_conv(self):
        assert conv2d_flops(1, 1, 3, 8, 8) == 2 * 9 * 64 == 1152

    def test_bias_accounting(self):
        assert conv2d_flops(1, 1, 3, 8, 8, bias=True) == 1152 + 64
        assert linear_flops(32, 9) == 2 * 32 * 9
        assert linear_flops(32, 9, bias=True) == 2 * 32 * 9 + 9

    def test_transposed_counts_per_input_position(self):
        assert transposed_conv2d_flops(2, 5, 4, 16, 16, 32, 32) == 2 * 16 * 2 * 5 * 256


def make_model(width_scale=0.25, **kw):
    return DmvfnModel(DmvfnConfig(width_scale=width_scale, **kw), seed=0)


class TestLedger:
    def test_dynamic_identities(self):
        model = make_model()
        ledger = model_ledger(model, 64, 64)
        n = model.n_blocks
        assert ledger.dynamic(np.ones(n)) == ledger.total_static
        assert ledger.dynamic(np.ones(n)) == ledger.super_static + ledger.routing
        assert ledger.dynamic(np.zeros(n)) == ledger.routing

    def test_monotone_in_selected_set(self):
        model = make_model()
        ledger = model_ledger(model, 64, 64)
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = (rng.random(9) < 0.5).astype(int)
            base = ledger.dynamic(v)
            grow = v.copy()
            off = np.flatnonzero(grow == 0)
            if off.size:
                grow[off[0]] = 1
                assert ledger.dynamic(grow) > base

    def test_expected_cost_monotone_in_beta(self):
        from dmvfn.routing import stebs_probabilities
        model = make_model()
        ledger = model_ledger(model, 64, 64)
        rng = np.random.default_rng(1)
        for _ in range(10):
            logits = rng.standard_normal(9) * 2
            costs = [ledger.expected(stebs_probabilities(logits, b))
                     for b in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)]
            assert all(c2 >= c1 - 1e-9 for c1, c2 in zip(costs, costs[1:]))

    def test_spatial_path_off_reduces_cost(self):
        on = model_ledger(make_model(), 64, 64)
        off = model_ledger(make_model(spatial_path=False), 64, 64)
        assert off.super_static < on.super_static

    def test_routing_net_within_budget(self):
        # the routing net must stay below a fifth of the super network
        for h, w in [(64, 64), (128, 128)]:
            ledger = model_ledger(make_model(width_scale=1.0), h, w)
            assert ledger.routing <= ledger.super_static / 5

    def test_block_detail_keys(self):
        layers = block_flops(MvfbConfig(scale=4, motion_width=16, spatial_width=8), 64, 64)
        assert "merge.tconv" in layers and "motion0.conv" in layers
        assert all(v > 0 for v in layers.values())
        no_path = block_flops(MvfbConfig(scale=4, motion_width=16, spatial_width=8,
                                         spatial_path=False), 64, 64)
        assert "spatial0.conv" not in no_path

    def test_text_report(self):
        ledger = model_ledger(make_model(), 64, 64)
        text = ledger.to_text()
        assert "super network static" in text and "routing" in text


def tiny_clips(n, frames=2, size=8):
    rng = np.random.default_rng(7)
    out = []
    for i in range(n):
        fr = [rng.random((3, size, size)).astype(np.float32) for _ in range(frames)]
        out.append(ClipRecord(fr, name=f"c{i}", motion_bin="slow" if i % 2 else "fast"))
    return out


class TestUsageRate:
    def test_always_on_rates_are_one(self):
        model = make_model(width_scale=0.1)
        stats = usage_rate(model, tiny_clips(5), RoutingMode(kind="always_on"))
        np.testing.assert_array_equal(stats.rates["all"], 1.0)

    def test_random_half_rates_near_half(self):
        model = make_model(width_scale=0.1)
        clips = tiny_clips(10_000)
        stats = usage_rate(model, clips, RoutingMode(kind="random", p=0.5),
                           rng=np.random.default_rng(11))
        assert (stats.rates["all"] >= 0.48).all()
        assert (stats.rates["all"] <= 0.52).all()
        assert stats.counts["all"] == 10_000

    def test_motion_subset_keys(self):
        model = make_model(width_scale=0.1)
        stats = usage_rate(model, tiny_clips(6), RoutingMode(kind="always_on"), by="motion")
        assert set(stats.rates) == {"all", "slow", "fast"}
        assert stats.counts["slow"] + stats.counts["fast"] == stats.counts["all"]

    def test_interval_subset_keys(self):
        model = make_model(width_scale=0.1)
        clips = list(gen_moving_shapes(SynthConfig(num_clips=3, frames=7, seed=0)))
        stats = usage_rate(model, clips, RoutingMode(kind="always_on"), by="interval")
        assert {"interval_1", "interval_3", "interval_5", "all"} <= set(stats.rates)

    def test_rates_in_unit_interval(self):
        model = make_model(width_scale=0.1)
        stats = usage_rate(model, tiny_clips(20, size=16), RoutingMode(kind="stebs", beta=0.5),
                           rng=np.random.default_rng(3))
        assert (stats.rates["all"] >= 0.0).all() and (stats.rates["all"] <= 1.0).all()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            usage_rate(make_model(width_scale=0.1), [], RoutingMode(kind="always_on"))

    def test_csv_format(self):
        model = make_model(width_scale=0.1)
        stats = usage_rate(model, tiny_clips(2), RoutingMode(kind="always_on"))
        lines = stats.to_csv().splitlines()
        assert lines[0] == "subset,block,usage_rate_x100,n"
        assert len(lines) == 1 + model.n_blocks
