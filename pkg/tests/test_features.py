"""Feature selector parsing, dimension table, and extraction laws."""

import dataclasses

import numpy as np
import pytest

from gpae.arch import TAP_BLOCKS
from gpae.errors import InvalidConfigError
from gpae.features import FeatureSelector, embedding_dim, extract
from gpae.frontend import MelSpec

from oracles import global_mean_loops

DIMS_ALPHA_1 = {
    "L": 128,
    "M_B": 472,
    "M_SE": 560,
    "H_Clf1": 960,
    "H_Clf2": 1280,
    "H_Clf3": 527,
    "M_B+L": 600,
    "M_B+M_SE": 1032,
    "M_B+H_Clf1": 1432,
    "M_B+H_Clf2": 1752,
    "M_B+H_Clf3": 999,
}


class TestSelector:
    def test_parse_joined_string(self):
        sel = FeatureSelector.parse("M_B+L")
        assert sel.parts == ("M_B", "L")
        assert str(sel) == "M_B+L"

    def test_unknown_part_rejected(self):
        with pytest.raises(InvalidConfigError, match="unknown feature part"):
            FeatureSelector.parse("M_B+bogus")

    def test_duplicates_rejected(self):
        with pytest.raises(InvalidConfigError, match="duplicate"):
            FeatureSelector.parse("L+L")

    def test_empty_rejected(self):
        with pytest.raises(InvalidConfigError):
            FeatureSelector(())


class TestDimensions:
    @pytest.mark.parametrize("selector,expected", sorted(DIMS_ALPHA_1.items()))
    def test_alpha_one_dimension_table(self, selector, expected):
        assert embedding_dim(1.0, FeatureSelector.parse(selector)) == expected

    def test_block_features_scale_with_width(self):
        assert embedding_dim(2.0, FeatureSelector.parse("M_B")) == 944

    def test_low_level_is_width_independent(self):
        for alpha in (0.37, 0.1, 1.0, 4.0):
            assert embedding_dim(alpha, FeatureSelector.parse("L")) == 128

    @pytest.mark.parametrize("selector", ["L", "M_B", "M_SE", "H_Clf1", "M_B+L", "M_SE+H_Clf3"])
    def test_static_dim_matches_extraction(self, mn01_model, rng, selector):
        sel = FeatureSelector.parse(selector)
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        emb = extract(mn01_model.trace(mel), mel, sel)
        assert emb.dim == embedding_dim(0.1, sel)


class TestExtraction:
    def test_constant_block5_map_pools_to_constant(self, mn01_model, rng):
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        trace = mn01_model.trace(mel)
        c = 2.5
        patched = dataclasses.replace(
            trace,
            block_outputs={
                **trace.block_outputs,
                5: np.full_like(trace.block_outputs[5], c),
            },
        )
        emb = extract(patched, mel, FeatureSelector.parse("M_B"))
        n5 = mn01_model.spec.block_out_channels(5)
        np.testing.assert_allclose(emb.values[:n5], c, rtol=1e-6)

    def test_concatenation_law(self, mn01_model, rng):
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        trace = mn01_model.trace(mel)
        joint = extract(trace, mel, FeatureSelector.parse("M_B+L"))
        parts = np.concatenate([
            extract(trace, mel, FeatureSelector.parse("M_B")).values,
            extract(trace, mel, FeatureSelector.parse("L")).values,
        ])
        np.testing.assert_array_equal(joint.values, parts)

    def test_selector_order_controls_layout(self, mn01_model, rng):
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        trace = mn01_model.trace(mel)
        ab = extract(trace, mel, FeatureSelector.parse("M_B+L")).values
        ba = extract(trace, mel, FeatureSelector.parse("L+M_B")).values
        np.testing.assert_array_equal(ab, np.concatenate([ba[128:], ba[:128]]))

    def test_pooling_matches_double_loop_mean(self, mn01_model, rng):
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        trace = mn01_model.trace(mel)
        emb = extract(trace, mel, FeatureSelector.parse("M_B"))
        want = np.concatenate(
            [global_mean_loops(trace.block_outputs[i]) for i in TAP_BLOCKS]
        )
        np.testing.assert_allclose(emb.values, want, rtol=1e-5, atol=1e-6)

    def test_block_features_invariant_under_spatial_permutation(self, mn01_model, rng):
        mel = MelSpec(rng.normal(size=(6, 128)).astype(np.float32))
        trace = mn01_model.trace(mel)
        shuffled = {}
        for i, out in trace.block_outputs.items():
            c, h, w = out.shape
            flat = out.reshape(c, h * w)
            shuffled[i] = flat[:, rng.permutation(h * w)].reshape(c, h, w)
        patched = dataclasses.replace(trace, block_outputs=shuffled)
        sel = FeatureSelector.parse("M_B")
        np.testing.assert_allclose(
            extract(trace, mel, sel).values,
            extract(patched, mel, sel).values,
            rtol=1e-5, atol=1e-6,
        )
