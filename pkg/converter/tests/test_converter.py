"""Converter tests: fold identities, manifest mapping, round trip, parity.

The engine is exercised only through its external surfaces (model files,
embedding files, the command line) to keep the tool/engine boundary clean.
"""

import json
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from convert import ConversionError, convert, fold_batchnorm, main
from reference import (
    DEFAULT_FRONTEND,
    SAMPLE_RATE,
    SourceBatchNorm,
    UnitPlan,
    conv2d_shift_add,
    read_embedding_file,
    read_model_file,
    scene_logits,
    write_model_file,
)

ALPHA = 0.1


def run_engine(*args):
    return subprocess.run(
        [sys.executable, "-m", "gpae.cli", *args],
        capture_output=True, text=True,
    )


def write_float32_wav(path, samples):
    payload = np.asarray(samples, dtype="<f4").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 3, 1, SAMPLE_RATE, SAMPLE_RATE * 4, 4, 32,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def synthetic_checkpoint(alpha, rng, naming="default"):
    """Random checkpoint with live BN statistics; returns (tensors, manifest).

    Statistics stay in the regime real checkpoints live in (activations near
    unit scale); wildly scaled layers compound float32 drift across the
    16-layer depth and would measure precision, not conversion correctness.
    """
    plan = UnitPlan(alpha)
    shapes = plan.tensor_shapes()
    tensors, mapping = {}, {}
    for k, unit in enumerate(plan.conv_units):
        w_shape = shapes[f"{unit}.weight"]
        cout = w_shape[0]
        if naming == "default":
            names = {
                "conv": f"{unit}.conv.weight",
                "gamma": f"{unit}.bn.weight",
                "beta": f"{unit}.bn.bias",
                "mean": f"{unit}.bn.running_mean",
                "var": f"{unit}.bn.running_var",
            }
        else:
            names = {
                "conv": f"features.{k}.0.weight",
                "gamma": f"features.{k}.1.weight",
                "beta": f"features.{k}.1.bias",
                "mean": f"features.{k}.1.running_mean",
                "var": f"features.{k}.1.running_var",
            }
            mapping[unit] = {
                "conv": names["conv"],
                "bn": {"gamma": names["gamma"], "beta": names["beta"],
                       "mean": names["mean"], "var": names["var"]},
            }
        fan_in = int(np.prod(w_shape[1:]))
        tensors[names["conv"]] = rng.uniform(
            -1, 1, w_shape).astype(np.float32) * np.sqrt(6.0 / fan_in) * 0.5
        tensors[names["gamma"]] = rng.uniform(0.9, 1.1, cout).astype(np.float32)
        tensors[names["beta"]] = rng.normal(0, 0.02, cout).astype(np.float32)
        tensors[names["mean"]] = rng.normal(0, 0.02, cout).astype(np.float32)
        tensors[names["var"]] = rng.uniform(0.9, 1.1, cout).astype(np.float32)
    for k, unit in enumerate(plan.fc_units):
        w_shape = shapes[f"{unit}.weight"]
        if naming == "default":
            names = {"weight": f"{unit}.weight", "bias": f"{unit}.bias"}
        else:
            names = {"weight": f"heads.{k}.weight", "bias": f"heads.{k}.bias"}
            mapping[unit] = names
        tensors[names["weight"]] = rng.uniform(
            -1, 1, w_shape).astype(np.float32) * np.sqrt(6.0 / w_shape[1]) * 0.5
        tensors[names["bias"]] = rng.normal(0, 0.05, w_shape[0]).astype(np.float32)
    manifest = {"mapping": mapping} if mapping else None
    return tensors, manifest


class TestBatchNormFold:
    def test_identity_bn_preserves_weights(self, rng=np.random.default_rng(0)):
        w = rng.normal(size=(4, 3, 1, 1))
        ones, zeros = np.ones(4), np.zeros(4)
        folded, shift = fold_batchnorm(w, ones, zeros, zeros, ones, eps=0.0)
        np.testing.assert_array_equal(folded, w.astype(np.float32))
        np.testing.assert_array_equal(shift, np.zeros(4, dtype=np.float32))

    def test_gamma_two_doubles_weight(self):
        w = np.array([[[[1.5]]]])
        folded, shift = fold_batchnorm(w, [2.0], [0.0], [0.0], [1.0], eps=0.0)
        assert folded[0, 0, 0, 0] == np.float32(3.0)
        assert shift[0] == 0.0

    def test_fold_matches_unfused_batchnorm(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(5, 3, 3, 3))
        gamma = rng.uniform(0.5, 2.0, 5)
        beta = rng.normal(size=5)
        mean = rng.normal(size=5)
        var = rng.uniform(0.2, 3.0, 5)
        eps = 1e-5
        x = rng.normal(size=(3, 6, 7))
        unfused = SourceBatchNorm(gamma, beta, mean, var, eps)(
            conv2d_shift_add(x, w)
        )
        folded, shift = fold_batchnorm(w, gamma, beta, mean, var, eps)
        fused = conv2d_shift_add(x, folded.astype(np.float64)) + shift[:, None, None]
        np.testing.assert_allclose(fused, unfused, rtol=1e-6, atol=1e-6)


class TestConversion:
    def test_engine_accepts_converted_model(self, tmp_path):
        rng = np.random.default_rng(10)
        tensors, manifest = synthetic_checkpoint(ALPHA, rng, naming="torchvision")
        ckpt = tmp_path / "ckpt.pt"
        torch.save({k: torch.from_numpy(v) for k, v in tensors.items()}, ckpt)
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps(manifest))
        out = tmp_path / "model.gpae"
        code = main(["--checkpoint", str(ckpt), "--alpha", str(ALPHA),
                     "--out", str(out), "--manifest", str(manifest_path)])
        assert code == 0

        wav = tmp_path / "probe.wav"
        write_float32_wav(wav, 0.1 * np.random.default_rng(1).normal(size=8000))
        emb = tmp_path / "emb.gpav"
        result = run_engine("embed", "--model", str(out), "--features", "H_Clf3",
                            "--out", str(emb), str(wav))
        assert result.returncode == 0, result.stderr
        selector, vectors, _ = read_embedding_file(emb)
        assert selector == "H_Clf3"
        assert vectors.shape == (1, 527)

    def test_default_naming_needs_no_manifest(self, tmp_path):
        rng = np.random.default_rng(11)
        tensors, manifest = synthetic_checkpoint(ALPHA, rng, naming="default")
        assert manifest is None
        ckpt = tmp_path / "ckpt.pt"
        torch.save({k: torch.from_numpy(v) for k, v in tensors.items()}, ckpt)
        out = tmp_path / "model.gpae"
        assert main(["--checkpoint", str(ckpt), "--alpha", str(ALPHA),
                     "--out", str(out)]) == 0
        config, converted = read_model_file(out)
        assert config["alpha"] == ALPHA
        assert len(converted) == len(UnitPlan(ALPHA).tensor_shapes())

    def test_identity_bn_checkpoint_round_trips_bit_identically(self, tmp_path):
        engine_model = tmp_path / "engine.gpae"
        result = run_engine("init-weights", "--alpha", str(ALPHA), "--seed", "42",
                            "--out", str(engine_model))
        assert result.returncode == 0, result.stderr
        config, tensors = read_model_file(engine_model)

        source = {}
        plan = UnitPlan(ALPHA)
        for unit in plan.conv_units:
            cout = tensors[f"{unit}.weight"].shape[0]
            source[f"{unit}.conv.weight"] = torch.from_numpy(tensors[f"{unit}.weight"])
            source[f"{unit}.bn.weight"] = torch.from_numpy(tensors[f"{unit}.bn.gamma"])
            source[f"{unit}.bn.bias"] = torch.from_numpy(tensors[f"{unit}.bn.beta"])
            source[f"{unit}.bn.running_mean"] = torch.zeros(cout)
            source[f"{unit}.bn.running_var"] = torch.ones(cout)
        for unit in plan.fc_units:
            source[f"{unit}.weight"] = torch.from_numpy(tensors[f"{unit}.weight"])
            source[f"{unit}.bias"] = torch.from_numpy(tensors[f"{unit}.bias"])
        ckpt = tmp_path / "synthetic.pt"
        torch.save(source, ckpt)

        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps({
            "bn_eps": 0.0,
            "frontend": config["frontend"],
            "se_gate": config["se_gate"],
            "padding": config["padding"],
        }))
        converted = tmp_path / "converted.gpae"
        assert main(["--checkpoint", str(ckpt), "--alpha", str(ALPHA),
                     "--out", str(converted), "--manifest", str(manifest_path)]) == 0
        assert converted.read_bytes() == engine_model.read_bytes()

    def test_engine_logits_match_reference_forward(self, tmp_path):
        rng = np.random.default_rng(20)
        tensors, _ = synthetic_checkpoint(ALPHA, rng, naming="default")
        ckpt = tmp_path / "ckpt.pt"
        torch.save({k: torch.from_numpy(v) for k, v in tensors.items()}, ckpt)
        out = tmp_path / "model.gpae"
        assert main(["--checkpoint", str(ckpt), "--alpha", str(ALPHA),
                     "--out", str(out)]) == 0

        samples = (0.2 * np.random.default_rng(7).normal(size=SAMPLE_RATE)).astype(
            np.float32
        )
        wav = tmp_path / "fixed.wav"
        write_float32_wav(wav, samples)
        emb = tmp_path / "logits.gpav"
        result = run_engine("embed", "--model", str(out), "--features", "H_Clf3",
                            "--out", str(emb), str(wav))
        assert result.returncode == 0, result.stderr
        _, engine_logits, _ = read_embedding_file(emb)

        plan = UnitPlan(ALPHA)
        conv_weights, batchnorms, fc_weights = {}, {}, {}
        for unit in plan.conv_units:
            conv_weights[unit] = tensors[f"{unit}.conv.weight"]
            batchnorms[unit] = SourceBatchNorm(
                tensors[f"{unit}.bn.weight"], tensors[f"{unit}.bn.bias"],
                tensors[f"{unit}.bn.running_mean"], tensors[f"{unit}.bn.running_var"],
                eps=1e-5,
            )
        for unit in plan.fc_units:
            fc_weights[unit] = (tensors[f"{unit}.weight"], tensors[f"{unit}.bias"])
        reference = scene_logits(plan, conv_weights, batchnorms, fc_weights,
                                 samples, DEFAULT_FRONTEND)
        np.testing.assert_allclose(engine_logits[0], reference, rtol=1e-4, atol=1e-6)


class TestErrors:
    def test_partial_mapping_lists_missing_units(self, tmp_path):
        rng = np.random.default_rng(12)
        tensors, manifest = synthetic_checkpoint(ALPHA, rng, naming="torchvision")
        del manifest["mapping"]["clf2"]
        with pytest.raises(ConversionError, match="clf2"):
            convert(tensors, ALPHA, manifest)

    def test_missing_source_tensor_named(self, tmp_path):
        rng = np.random.default_rng(13)
        tensors, _ = synthetic_checkpoint(ALPHA, rng, naming="default")
        del tensors["clf3.bias"]
        with pytest.raises(ConversionError, match="clf3.bias"):
            convert(tensors, ALPHA, None)

    def test_shape_mismatch_reports_both_shapes(self):
        rng = np.random.default_rng(14)
        tensors, _ = synthetic_checkpoint(0.1, rng, naming="default")
        tensors["clf3.weight"] = tensors["clf3.weight"][:, :64]
        with pytest.raises(ConversionError, match=r"\(527, 64\).*\(527, 128\)"):
            convert(tensors, 0.1, None)

    def test_inconsistent_alpha_rejected(self):
        # A width-0.1 checkpoint converted as width 0.2 cannot line up: the
        # first divergence (an expand conv that only exists at 0.2) is named.
        rng = np.random.default_rng(14)
        tensors, _ = synthetic_checkpoint(0.1, rng, naming="default")
        with pytest.raises(ConversionError):
            convert(tensors, 0.2, None)

    def test_cli_reports_data_errors(self, tmp_path):
        missing = tmp_path / "nope.pt"
        code = main(["--checkpoint", str(missing), "--alpha", "0.1",
                     "--out", str(tmp_path / "x.gpae")])
        assert code == 2


class TestFormatWriter:
    def test_writer_reader_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        tensors = {
            "a.weight": rng.normal(size=(2, 3)).astype(np.float32),
            "b.bias": rng.normal(size=4).astype(np.float32),
        }
        config = {"alpha": 0.5, "frontend": dict(DEFAULT_FRONTEND),
                  "se_gate": "hard_sigmoid", "padding": "symmetric-half-kernel"}
        path = tmp_path / "t.gpae"
        write_model_file(path, config, tensors, ["a.weight", "b.bias"])
        got_config, got = read_model_file(path)
        assert got_config == config
        for name in tensors:
            np.testing.assert_array_equal(got[name], tensors[name])
