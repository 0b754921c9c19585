#!/usr/bin/env python3
"""Convert pre-trained PyTorch checkpoints into the portable model format.

Reads a checkpoint (a state dict of tensors), folds every batch-norm into its
convolution, and writes a model file the inference engine can load:

    weight' = (gamma / sigma) * W        sigma = sqrt(var + eps)
    shift   = beta - gamma * mean / sigma

The folded weight goes into the ``<unit>.weight`` tensor; the mandatory BN
slots carry the residual affine (``bn.gamma`` = 1, ``bn.beta`` = shift).

Source tensor names are resolved through a JSON manifest (``--manifest``)
mapping each target unit onto checkpoint tensor names; without a manifest the
default naming convention below is assumed:

    <unit>.conv.weight, <unit>.bn.weight, <unit>.bn.bias,
    <unit>.bn.running_mean, <unit>.bn.running_var        (conv + BN units)
    <unit>.weight, <unit>.bias                           (SE / linear units)

Usage:
    convert.py --checkpoint ckpt.pt --alpha 1.0 --out model.gpae
               [--manifest manifest.json]
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from reference import (
    DEFAULT_FRONTEND,
    PADDING_CONVENTION,
    UnitPlan,
    write_model_file,
)

DEFAULT_BN_EPS = 1e-5


class ConversionError(Exception):
    pass


def fold_batchnorm(weight, gamma, beta, mean, var, eps):
    """Fold BN statistics into a convolution kernel; returns (weight', shift)."""
    weight = np.asarray(weight, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    sigma = np.sqrt(var + eps)
    scale = gamma / sigma
    folded = weight * scale[(slice(None),) + (None,) * (weight.ndim - 1)]
    shift = beta - gamma * mean / sigma
    return folded.astype(np.float32), shift.astype(np.float32)


def default_conv_mapping(unit: str) -> dict:
    return {
        "conv": f"{unit}.conv.weight",
        "bn": {
            "gamma": f"{unit}.bn.weight",
            "beta": f"{unit}.bn.bias",
            "mean": f"{unit}.bn.running_mean",
            "var": f"{unit}.bn.running_var",
        },
    }


def default_fc_mapping(unit: str) -> dict:
    return {"weight": f"{unit}.weight", "bias": f"{unit}.bias"}


def load_checkpoint(path) -> dict[str, np.ndarray]:
    import torch

    loaded = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(loaded, dict) and "state_dict" in loaded:
        loaded = loaded["state_dict"]
    if not isinstance(loaded, dict):
        raise ConversionError(f"{path}: expected a state dict, got {type(loaded)}")
    tensors = {}
    for name, value in loaded.items():
        if hasattr(value, "detach"):
            tensors[name] = value.detach().cpu().numpy()
        else:
            tensors[name] = np.asarray(value)
    return tensors


def _fetch(source: dict[str, np.ndarray], name: str, target: str,
           expected_shape: tuple[int, ...]) -> np.ndarray:
    if name not in source:
        raise ConversionError(
            f"checkpoint tensor {name!r} (mapped to {target}) not found"
        )
    tensor = np.asarray(source[name], dtype=np.float64)
    if tuple(tensor.shape) != expected_shape:
        raise ConversionError(
            f"{target}: source tensor {name!r} has shape {tuple(tensor.shape)}, "
            f"expected {expected_shape}"
        )
    return tensor


def convert(source: dict[str, np.ndarray], alpha: float,
            manifest: dict | None = None) -> tuple[dict, dict[str, np.ndarray], list[str]]:
    """Produce (config, target tensors, canonical order) for one checkpoint."""
    manifest = manifest or {}
    plan = UnitPlan(alpha)
    shapes = plan.tensor_shapes()
    mapping = manifest.get("mapping", {})
    bn_eps = float(manifest.get("bn_eps", DEFAULT_BN_EPS))

    missing_units = [
        unit for unit in list(plan.conv_units) + list(plan.fc_units)
        if "mapping" in manifest and unit not in mapping
    ]
    if missing_units:
        raise ConversionError(
            f"manifest mapping does not cover unit(s): {', '.join(missing_units)}"
        )

    tensors: dict[str, np.ndarray] = {}
    for unit in plan.conv_units:
        entry = mapping.get(unit, default_conv_mapping(unit))
        if "conv" not in entry or "bn" not in entry:
            raise ConversionError(f"mapping for {unit} needs 'conv' and 'bn' entries")
        cout = shapes[f"{unit}.weight"][0]
        weight = _fetch(source, entry["conv"], f"{unit}.weight", shapes[f"{unit}.weight"])
        bn = entry["bn"]
        gamma = _fetch(source, bn["gamma"], f"{unit}.bn.gamma", (cout,))
        beta = _fetch(source, bn["beta"], f"{unit}.bn.beta", (cout,))
        mean = _fetch(source, bn["mean"], f"{unit}.bn mean", (cout,))
        var = _fetch(source, bn["var"], f"{unit}.bn var", (cout,))
        folded, shift = fold_batchnorm(weight, gamma, beta, mean, var,
                                       float(entry.get("eps", bn_eps)))
        tensors[f"{unit}.weight"] = folded
        tensors[f"{unit}.bn.gamma"] = np.ones(cout, dtype=np.float32)
        tensors[f"{unit}.bn.beta"] = shift
    for unit in plan.fc_units:
        entry = mapping.get(unit, default_fc_mapping(unit))
        if "weight" not in entry or "bias" not in entry:
            raise ConversionError(f"mapping for {unit} needs 'weight' and 'bias' entries")
        tensors[f"{unit}.weight"] = _fetch(
            source, entry["weight"], f"{unit}.weight", shapes[f"{unit}.weight"]
        ).astype(np.float32)
        tensors[f"{unit}.bias"] = _fetch(
            source, entry["bias"], f"{unit}.bias", shapes[f"{unit}.bias"]
        ).astype(np.float32)

    config = {
        "alpha": float(alpha),
        "frontend": manifest.get("frontend", dict(DEFAULT_FRONTEND)),
        "se_gate": manifest.get("se_gate", "hard_sigmoid"),
        "padding": manifest.get("padding", PADDING_CONVENTION),
    }
    return config, tensors, list(shapes)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--alpha", type=float, required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--manifest", help="JSON name-mapping manifest")
    args = parser.parse_args(argv)

    try:
        manifest = None
        if args.manifest:
            with open(args.manifest) as fh:
                manifest = json.load(fh)
        source = load_checkpoint(args.checkpoint)
        config, tensors, order = convert(source, args.alpha, manifest)
        write_model_file(args.out, config, tensors, order)
    except (ConversionError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    total = sum(t.size for t in tensors.values())
    print(f"wrote {len(tensors)} tensors ({total:,} values) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
