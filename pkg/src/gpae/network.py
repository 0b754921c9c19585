"""Inference engine for the width-scalable CNN.

The network consumes a 1-channel 2D map with frequency as the first spatial
axis and time as the second. Batch-norm is folded into the preceding
convolution once at load time; all feature maps are float32. Convolutions
use fixed symmetric padding of kernel//2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arch import ArchSpec
from .errors import InvalidConfigError, ModelIntegrityError, NumericFailureError
from .frontend import AudioClip, FrontendConfig, MelSpec, compute_melspec

SE_GATES = ("hard_sigmoid", "sigmoid")


def relu(x):
    return np.maximum(x, 0)


def relu6(x):
    return np.clip(x, 0, 6)


def hardswish(x):
    return x * np.clip(x + 3, 0, 6) / 6


def hard_sigmoid(x):
    return np.clip(x + 3, 0, 6) / 6


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


_ACTIVATIONS = {"relu": relu, "hardswish": hardswish}


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, groups: int = 1) -> np.ndarray:
    """2D convolution over a (channels, freq, time) map, padding kernel//2."""
    cout, cin_g, kh, kw = weight.shape
    cin = x.shape[0]
    if cin != cin_g * groups or cout % groups != 0:
        raise ModelIntegrityError(
            f"conv shape mismatch: input {cin} channels, weight {weight.shape}, "
            f"groups {groups}"
        )
    padded = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    if groups == 1:
        out = np.einsum("cftij,ocij->oft", windows, weight, optimize=True)
    elif groups == cin and cin_g == 1:
        out = np.einsum("cftij,cij->cft", windows, weight[:, 0], optimize=True)
    else:
        cout_g = cout // groups
        out = np.concatenate(
            [
                np.einsum(
                    "cftij,ocij->oft",
                    windows[g * cin_g:(g + 1) * cin_g],
                    weight[g * cout_g:(g + 1) * cout_g],
                    optimize=True,
                )
                for g in range(groups)
            ],
            axis=0,
        )
    if bias is not None:
        out = out + bias[:, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


@dataclass(frozen=True)
class WeightIssue:
    kind: str  # "missing" | "extra" | "shape"
    name: str
    expected: tuple[int, ...] | None = None
    actual: tuple[int, ...] | None = None

    def __str__(self) -> str:
        if self.kind == "missing":
            return f"missing tensor {self.name} (expected shape {self.expected})"
        if self.kind == "extra":
            return f"unexpected tensor {self.name}"
        return f"tensor {self.name} has shape {self.actual}, expected {self.expected}"


def _conv_unit(shapes, name, cin, cout, kernel):
    shapes[f"{name}.weight"] = (cout, cin, kernel, kernel)
    shapes[f"{name}.bn.gamma"] = (cout,)
    shapes[f"{name}.bn.beta"] = (cout,)


def expected_shapes(spec: ArchSpec) -> dict[str, tuple[int, ...]]:
    """Every tensor the architecture requires, in canonical order."""
    shapes: dict[str, tuple[int, ...]] = {}
    _conv_unit(shapes, "in_conv", 1, spec.scaled_in_conv_out, 3)
    head_in = spec.scaled_in_conv_out
    for block in spec.blocks:
        i = block.index
        cin = spec.block_in_channels(i)
        exp = spec.block_expansion(i)
        cout = spec.block_out_channels(i)
        if spec.block_has_expand(i):
            _conv_unit(shapes, f"b{i}.expand", cin, exp, 1)
        shapes[f"b{i}.depthwise.weight"] = (exp, 1, block.kernel, block.kernel)
        shapes[f"b{i}.depthwise.bn.gamma"] = (exp,)
        shapes[f"b{i}.depthwise.bn.beta"] = (exp,)
        se = spec.block_se_bottleneck(i)
        if se is not None:
            shapes[f"b{i}.se.fc1.weight"] = (se, exp)
            shapes[f"b{i}.se.fc1.bias"] = (se,)
            shapes[f"b{i}.se.fc2.weight"] = (exp, se)
            shapes[f"b{i}.se.fc2.bias"] = (exp,)
        _conv_unit(shapes, f"b{i}.project", exp, cout, 1)
        head_in = cout
    _conv_unit(shapes, "clf1", head_in, spec.scaled_clf1_out, 1)
    shapes["clf2.weight"] = (spec.scaled_clf2_out, spec.scaled_clf1_out)
    shapes["clf2.bias"] = (spec.scaled_clf2_out,)
    shapes["clf3.weight"] = (spec.clf3_out, spec.scaled_clf2_out)
    shapes["clf3.bias"] = (spec.clf3_out,)
    return shapes


def validate_weights(spec: ArchSpec, weights: dict[str, np.ndarray]) -> list[WeightIssue]:
    """Report every missing, extra, or mis-shaped tensor. Empty iff valid."""
    expected = expected_shapes(spec)
    issues = []
    for name, shape in expected.items():
        if name not in weights:
            issues.append(WeightIssue("missing", name, expected=shape))
        elif tuple(weights[name].shape) != shape:
            issues.append(
                WeightIssue("shape", name, expected=shape, actual=tuple(weights[name].shape))
            )
    for name in weights:
        if name not in expected:
            issues.append(WeightIssue("extra", name))
    return issues


def conv_unit_names(spec: ArchSpec) -> list[str]:
    """Names of all conv+BN units, in forward order."""
    units = ["in_conv"]
    for block in spec.blocks:
        i = block.index
        if spec.block_has_expand(i):
            units.append(f"b{i}.expand")
        units.append(f"b{i}.depthwise")
        units.append(f"b{i}.project")
    units.append("clf1")
    return units


def fold_batchnorm(spec: ArchSpec, weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Fold each BN scale/shift into its convolution: W' = gamma * W, b' = beta."""
    folded: dict[str, np.ndarray] = {}
    for unit in conv_unit_names(spec):
        gamma = weights[f"{unit}.bn.gamma"].astype(np.float32)
        folded[f"{unit}.weight"] = (
            weights[f"{unit}.weight"].astype(np.float32) * gamma[:, None, None, None]
        )
        folded[f"{unit}.bias"] = weights[f"{unit}.bn.beta"].astype(np.float32)
    for name, tensor in weights.items():
        if ".bn." not in name and name not in folded:
            folded[name] = tensor.astype(np.float32)
    return folded


@dataclass(frozen=True)
class ActivationTrace:
    """All internal activations the feature taps draw from."""

    block_outputs: dict[int, np.ndarray]
    se_bottlenecks: dict[int, np.ndarray]
    clf1: np.ndarray
    clf2: np.ndarray
    clf3: np.ndarray


def _check_finite(x: np.ndarray, where: str):
    if not np.isfinite(x).all():
        raise NumericFailureError(f"non-finite activation in {where}")


def _forward_folded(spec: ArchSpec, folded: dict[str, np.ndarray], mel: MelSpec,
                    se_gate: str) -> ActivationTrace:
    gate_fn = hard_sigmoid if se_gate == "hard_sigmoid" else sigmoid
    x = np.ascontiguousarray(mel.frames.T)[None, :, :]  # (1, n_mels, T)
    x = hardswish(conv2d(x, folded["in_conv.weight"], folded["in_conv.bias"], stride=2))

    block_outputs: dict[int, np.ndarray] = {}
    se_bottlenecks: dict[int, np.ndarray] = {}
    for block in spec.blocks:
        i = block.index
        act = _ACTIVATIONS[block.activation]
        shortcut = x
        if spec.block_has_expand(i):
            x = act(conv2d(x, folded[f"b{i}.expand.weight"], folded[f"b{i}.expand.bias"]))
        x = act(
            conv2d(
                x,
                folded[f"b{i}.depthwise.weight"],
                folded[f"b{i}.depthwise.bias"],
                stride=block.stride,
                groups=x.shape[0],
            )
        )
        if block.se_bottleneck is not None:
            squeeze = x.mean(axis=(1, 2))
            bottleneck = relu(
                folded[f"b{i}.se.fc1.weight"] @ squeeze + folded[f"b{i}.se.fc1.bias"]
            )
            gate = gate_fn(
                folded[f"b{i}.se.fc2.weight"] @ bottleneck + folded[f"b{i}.se.fc2.bias"]
            )
            se_bottlenecks[i] = bottleneck
            x = x * gate[:, None, None]
        x = conv2d(x, folded[f"b{i}.project.weight"], folded[f"b{i}.project.bias"])
        if spec.block_has_residual(i):
            x = x + shortcut
        _check_finite(x, f"block {i}")
        block_outputs[i] = x

    x = hardswish(conv2d(x, folded["clf1.weight"], folded["clf1.bias"]))
    clf1 = x.mean(axis=(1, 2))
    clf2 = hardswish(folded["clf2.weight"] @ clf1 + folded["clf2.bias"])
    clf3 = folded["clf3.weight"] @ clf2 + folded["clf3.bias"]
    for vec, where in ((clf1, "clf1"), (clf2, "clf2"), (clf3, "clf3")):
        _check_finite(vec, where)
    return ActivationTrace(block_outputs, se_bottlenecks, clf1, clf2, clf3)


def forward(spec: ArchSpec, weights: dict[str, np.ndarray], mel: MelSpec,
            se_gate: str = "hard_sigmoid") -> ActivationTrace:
    """Run one forward pass, returning the full activation trace."""
    if se_gate not in SE_GATES:
        raise InvalidConfigError(f"se_gate must be one of {SE_GATES}, got {se_gate!r}")
    issues = validate_weights(spec, weights)
    if issues:
        raise ModelIntegrityError(
            f"{len(issues)} weight problem(s), first: {issues[0]}"
        )
    return _forward_folded(spec, fold_batchnorm(spec, weights), mel, se_gate)


class Model:
    """A loaded network: architecture, raw tensors, and its frontend config.

    Folding happens once here, so any number of trace() calls share the
    prepared inference tensors. Instances are immutable in practice and safe
    to share across threads.
    """

    def __init__(self, spec: ArchSpec, weights: dict[str, np.ndarray],
                 frontend: FrontendConfig = FrontendConfig(),
                 se_gate: str = "hard_sigmoid"):
        if se_gate not in SE_GATES:
            raise InvalidConfigError(f"se_gate must be one of {SE_GATES}, got {se_gate!r}")
        issues = validate_weights(spec, weights)
        if issues:
            raise ModelIntegrityError(
                f"{len(issues)} weight problem(s), first: {issues[0]}"
            )
        self.spec = spec
        self.weights = weights
        self.frontend = frontend
        self.se_gate = se_gate
        self._folded = fold_batchnorm(spec, weights)

    def melspec(self, clip: AudioClip) -> MelSpec:
        return compute_melspec(clip, self.frontend)

    def trace(self, mel: MelSpec) -> ActivationTrace:
        return _forward_folded(self.spec, self._folded, mel, self.se_gate)
