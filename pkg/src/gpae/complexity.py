"""Analytic parameter and multiply-accumulate accounting.

Conventions:
  * one multiply-add = one MAC;
  * batch-norm is folded into the preceding convolution and contributes no
    MACs, but its scale/shift pair is counted as parameters;
  * activations, pooling, residual adds and the SE gating multiply are free;
  * SE fully-connected layers run on the pooled channel vector, so each
    contributes ``in * out`` MACs per forward pass;
  * "per 10 seconds" means one forward pass over a 1001-frame spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import ArchSpec, conv_out_size
from .frontend import N_MELS

FRAMES_PER_10S = 1001


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    macs: int


@dataclass(frozen=True)
class ComplexityReport:
    alpha: float
    per_layer: tuple[LayerCost, ...]
    total_params: int
    total_macs: int
    input_frames: int


def _conv_cost(name, cin, cout, kernel, out_positions, groups=1, with_bn=True):
    weight = kernel * kernel * (cin // groups) * cout
    params = weight + (2 * cout if with_bn else cout)
    macs = out_positions * kernel * kernel * (cin // groups) * cout
    return LayerCost(name, params, macs)


def _linear_cost(name, cin, cout):
    return LayerCost(name, cin * cout + cout, cin * cout)


def _se_cost(name, channels, bottleneck):
    params = (channels * bottleneck + bottleneck) + (bottleneck * channels + channels)
    macs = channels * bottleneck + bottleneck * channels
    return LayerCost(name, params, macs)


def layer_plan(spec: ArchSpec, input_frames: int, n_mels: int = N_MELS) -> list[LayerCost]:
    """Enumerate every parameterized layer with its cost for one forward pass."""
    plan: list[LayerCost] = []
    freq, time = n_mels, input_frames

    freq = conv_out_size(freq, 3, 2)
    time = conv_out_size(time, 3, 2)
    plan.append(_conv_cost("in_conv", 1, spec.scaled_in_conv_out, 3, freq * time))
    head_in = spec.scaled_in_conv_out

    for block in spec.blocks:
        i = block.index
        cin = spec.block_in_channels(i)
        exp = spec.block_expansion(i)
        cout = spec.block_out_channels(i)
        if spec.block_has_expand(i):
            plan.append(_conv_cost(f"b{i}.expand", cin, exp, 1, freq * time))
        freq = conv_out_size(freq, block.kernel, block.stride)
        time = conv_out_size(time, block.kernel, block.stride)
        plan.append(
            _conv_cost(f"b{i}.depthwise", exp, exp, block.kernel, freq * time, groups=exp)
        )
        se = spec.block_se_bottleneck(i)
        if se is not None:
            plan.append(_se_cost(f"b{i}.se", exp, se))
        plan.append(_conv_cost(f"b{i}.project", exp, cout, 1, freq * time))
        head_in = cout

    plan.append(_conv_cost("clf1", head_in, spec.scaled_clf1_out, 1, freq * time))
    plan.append(_linear_cost("clf2", spec.scaled_clf1_out, spec.scaled_clf2_out))
    plan.append(_linear_cost("clf3", spec.scaled_clf2_out, spec.clf3_out))
    return plan


def count_params(spec: ArchSpec) -> int:
    """Total learnable parameters, batch-norm counted as its scale/shift pair."""
    return sum(layer.params for layer in layer_plan(spec, input_frames=1))


def count_macs(spec: ArchSpec, input_frames: int = FRAMES_PER_10S) -> int:
    """Multiply-accumulates for one forward pass over ``input_frames`` frames."""
    if input_frames < 1:
        raise ValueError(f"input_frames must be >= 1, got {input_frames}")
    return sum(layer.macs for layer in layer_plan(spec, input_frames))


def complexity_report(spec: ArchSpec, input_frames: int = FRAMES_PER_10S) -> ComplexityReport:
    plan = tuple(layer_plan(spec, input_frames))
    return ComplexityReport(
        alpha=spec.alpha,
        per_layer=plan,
        total_params=sum(l.params for l in plan),
        total_macs=sum(l.macs for l in plan),
        input_frames=input_frames,
    )
