import numpy as np
import pytest

from panoctx.attention import HsaConfig, PsaConfig, hsa_forward, nonlocal_forward, psa_forward, random_weights
from panoctx.audit import (
    AffinityLedger,
    Hsa,
    HsaNoPool,
    NonLocal,
    Psa,
    active_ledger,
    analytic_counts,
    measured_counts,
)
from panoctx.errors import GeometryError
from panoctx.tensor import FeatureMap, Tensor


class TestAnalyticCounts:
    def test_nonlocal_flagship_figure(self):
        assert analytic_counts(64, 128, NonLocal()) == 67_108_864

    def test_segmented_without_pooling(self):
        assert analytic_counts(64, 128, HsaNoPool(4)) == 16_777_216

    def test_segmented_with_strip_pooling(self):
        assert analytic_counts(64, 128, Hsa(4, 2, 16)) == 262_144

    def test_pyramid(self):
        assert analytic_counts(64, 128, Psa(((3, 3), (4, 4), (6, 6)))) == 8192 * 61

    def test_divisibility_violation(self):
        with pytest.raises(GeometryError):
            analytic_counts(10, 16, HsaNoPool(4))
        with pytest.raises(GeometryError):
            analytic_counts(10, 16, Hsa(3, 1, 4))

    def test_positive_extents_required(self):
        with pytest.raises(GeometryError):
            analytic_counts(0, 16, NonLocal())

    def test_reduction_ordering(self):
        # Hsa < HsaNoPool < NonLocal whenever ph*pw < H*W/N
        for he, we, n, ph, pw in [(64, 128, 4, 2, 16), (8, 16, 2, 2, 4), (16, 16, 4, 1, 8)]:
            hsa = analytic_counts(he, we, Hsa(n, ph, pw))
            nopool = analytic_counts(he, we, HsaNoPool(n))
            full = analytic_counts(he, we, NonLocal())
            assert ph * pw < (he * we) // n
            assert hsa < nopool < full


class TestMeasuredCounts:
    def test_nonlocal_example(self):
        rng = np.random.default_rng(0)
        f = FeatureMap(Tensor(rng.standard_normal((8, 8, 16))))
        w = random_weights(8, rng=rng)
        ledger = measured_counts(lambda: nonlocal_forward(f, w))
        assert ledger.affinity_entries == 16_384 == analytic_counts(8, 16, NonLocal())
        assert ledger.peak_live_entries == 16_384
        # MACs: entries * reduced (affinity product) + entries * channels (aggregation)
        assert ledger.attention_macs == 16_384 * 1 + 16_384 * 8

    def test_hsa_example(self):
        rng = np.random.default_rng(1)
        f = FeatureMap(Tensor(rng.standard_normal((8, 8, 16))))
        w = random_weights(8, rng=rng)
        cfg = HsaConfig(segments=4, pooled_h=2, pooled_w=4)
        ledger = measured_counts(lambda: hsa_forward(f, cfg, w))
        assert ledger.affinity_entries == 1_024 == analytic_counts(8, 16, Hsa(4, 2, 4))
        # one segment's map lives at a time
        assert ledger.peak_live_entries == 1_024 // 4

    def test_psa_example(self):
        rng = np.random.default_rng(2)
        f = FeatureMap(Tensor(rng.standard_normal((8, 12, 12))))
        cfg = PsaConfig(scales=((3, 3), (4, 4)))
        ws = [random_weights(8, rng=rng) for _ in cfg.scales]
        ledger = measured_counts(lambda: psa_forward(f, cfg, ws))
        assert ledger.affinity_entries == 3_600 == analytic_counts(12, 12, Psa(cfg.scales))
        assert ledger.peak_live_entries == 144 * 16

    @pytest.mark.parametrize("kind", ["nonlocal", "hsa", "psa"])
    def test_counting_only_equals_materialized(self, kind):
        rng = np.random.default_rng(3)
        f = FeatureMap(Tensor(rng.standard_normal((8, 8, 16))))
        w = random_weights(8, rng=rng)
        runs = {
            "nonlocal": lambda: nonlocal_forward(f, w),
            "hsa": lambda: hsa_forward(f, HsaConfig(2, 2, 8), w),
            "psa": lambda: psa_forward(f, PsaConfig(scales=((2, 2), (3, 4))), [w, w]),
        }
        real = measured_counts(runs[kind])
        counted = measured_counts(runs[kind], counting_only=True)
        assert real.affinity_entries == counted.affinity_entries
        assert real.attention_macs == counted.attention_macs
        assert real.peak_live_entries == counted.peak_live_entries

    def test_counting_only_returns_shaped_zeros(self):
        rng = np.random.default_rng(4)
        f = FeatureMap(Tensor(rng.standard_normal((8, 8, 16))))
        w = random_weights(8, rng=rng)
        with AffinityLedger(counting_only=True):
            out = nonlocal_forward(f, w)
        assert out.values.shape == (8, 8, 16)
        assert np.all(out.values.data == 0.0)


class TestLedgerMechanics:
    def test_counters_accumulate_and_reset(self):
        ledger = AffinityLedger()
        ledger.open_map(10)
        ledger.open_map(5)
        assert ledger.peak_live_entries == 15
        ledger.close_map(5)
        ledger.open_map(3)
        assert ledger.affinity_entries == 18
        assert ledger.peak_live_entries == 15
        ledger.add_macs(7)
        ledger.reset()
        assert ledger.affinity_entries == 0
        assert ledger.attention_macs == 0
        assert ledger.peak_live_entries == 0

    def test_active_ledger_scoping(self):
        assert active_ledger() is None
        with AffinityLedger() as outer:
            assert active_ledger() is outer
            with AffinityLedger(counting_only=True) as inner:
                assert active_ledger() is inner
            assert active_ledger() is outer
        assert active_ledger() is None

    def test_no_counting_without_ledger(self):
        rng = np.random.default_rng(5)
        f = FeatureMap(Tensor(rng.standard_normal((4, 4, 8))))
        out = nonlocal_forward(f, random_weights(4, rng=rng))
        assert np.all(np.isfinite(out.values.data))
