"""Loop-nest reference kernels and the instrumented MAC counter.

Everything here favors obviousness over speed: plain Python loops over
float64 scalars, one counter increment per multiply-accumulate. Only fit for
tiny inputs; the fast engine is checked against these kernels, and the
analytic MAC count is checked against the instrumented forward pass.

Kernels operate on explicitly zero-padded inputs, so border positions perform
(and count) the full kernel's worth of multiplies — the same convention the
analytic count uses.
"""

from __future__ import annotations

import numpy as np

from .arch import ArchSpec
from .frontend import MelSpec


class MacCounter:
    def __init__(self):
        self.count = 0

    def add(self, n: int = 1):
        self.count += n


def _pad2d(x, ph, pw):
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    out[:, ph:ph + h, pw:pw + w] = x
    return out


def conv2d_loops(x, weight, bias=None, stride=1, groups=1,
                 counter: MacCounter | None = None):
    """Direct convolution; same padding/stride semantics as the fast kernel."""
    counter = counter if counter is not None else MacCounter()
    cout, cin_g, kh, kw = weight.shape
    cin, h, w = x.shape
    assert cin == cin_g * groups and cout % groups == 0
    padded = _pad2d(np.asarray(x, dtype=np.float64), kh // 2, kw // 2)
    oh = (h + 2 * (kh // 2) - kh) // stride + 1
    ow = (w + 2 * (kw // 2) - kw) // stride + 1
    cout_g = cout // groups
    out = np.zeros((cout, oh, ow))
    for o in range(cout):
        g = o // cout_g
        for y in range(oh):
            for z in range(ow):
                acc = 0.0 if bias is None else float(bias[o])
                for ci in range(cin_g):
                    c = g * cin_g + ci
                    for i in range(kh):
                        for j in range(kw):
                            acc += padded[c, y * stride + i, z * stride + j] \
                                * float(weight[o, ci, i, j])
                            counter.add()
                out[o, y, z] = acc
    return out


def linear_loops(weight, x, bias=None, counter: MacCounter | None = None):
    counter = counter if counter is not None else MacCounter()
    n_out, n_in = weight.shape
    out = np.zeros(n_out)
    for o in range(n_out):
        acc = 0.0 if bias is None else float(bias[o])
        for i in range(n_in):
            acc += float(weight[o, i]) * float(x[i])
            counter.add()
        out[o] = acc
    return out


def _relu_s(v):
    return v if v > 0 else 0.0


def _hardswish_s(v):
    return v * min(max(v + 3.0, 0.0), 6.0) / 6.0


def _hard_sigmoid_s(v):
    return min(max(v + 3.0, 0.0), 6.0) / 6.0


def _sigmoid_s(v):
    return 1.0 / (1.0 + np.exp(-v))


_SCALAR_ACT = {"relu": _relu_s, "hardswish": _hardswish_s}


def se_loops(x, fc1_w, fc1_b, fc2_w, fc2_b, gate: str = "hard_sigmoid",
             counter: MacCounter | None = None):
    """Squeeze-excite: pool, bottleneck FC + ReLU, gate FC, channel gating.

    Returns (gated map, bottleneck vector). Pooling and the gating multiply
    are not counted as MACs.
    """
    counter = counter if counter is not None else MacCounter()
    squeeze = np.asarray(x, dtype=np.float64).mean(axis=(1, 2))
    bottleneck = linear_loops(fc1_w, squeeze, fc1_b, counter)
    bottleneck = np.array([_relu_s(v) for v in bottleneck])
    gate_s = _hard_sigmoid_s if gate == "hard_sigmoid" else _sigmoid_s
    gates = linear_loops(fc2_w, bottleneck, fc2_b, counter)
    gates = np.array([gate_s(v) for v in gates])
    return x * gates[:, None, None], bottleneck


def _apply_act(x, name):
    fn = _SCALAR_ACT[name]
    return np.vectorize(fn)(x)


def forward_loops(spec: ArchSpec, weights: dict[str, np.ndarray], mel: MelSpec,
                  se_gate: str = "hard_sigmoid",
                  counter: MacCounter | None = None):
    """Loop-nest forward pass mirroring the fast engine layer for layer.

    Returns (block_outputs, se_bottlenecks, clf1, clf2, clf3).
    """
    counter = counter if counter is not None else MacCounter()

    def folded(unit):
        gamma = np.asarray(weights[f"{unit}.bn.gamma"], dtype=np.float64)
        w = np.asarray(weights[f"{unit}.weight"], dtype=np.float64)
        return w * gamma[:, None, None, None], np.asarray(
            weights[f"{unit}.bn.beta"], dtype=np.float64
        )

    x = np.asarray(mel.frames, dtype=np.float64).T[None, :, :]
    w, b = folded("in_conv")
    x = _apply_act(conv2d_loops(x, w, b, stride=2, counter=counter), "hardswish")

    block_outputs, se_bottlenecks = {}, {}
    for block in spec.blocks:
        i = block.index
        shortcut = x
        if spec.block_has_expand(i):
            w, b = folded(f"b{i}.expand")
            x = _apply_act(conv2d_loops(x, w, b, counter=counter), block.activation)
        w, b = folded(f"b{i}.depthwise")
        x = _apply_act(
            conv2d_loops(x, w, b, stride=block.stride, groups=x.shape[0], counter=counter),
            block.activation,
        )
        if block.se_bottleneck is not None:
            x, bottleneck = se_loops(
                x,
                weights[f"b{i}.se.fc1.weight"],
                weights[f"b{i}.se.fc1.bias"],
                weights[f"b{i}.se.fc2.weight"],
                weights[f"b{i}.se.fc2.bias"],
                gate=se_gate,
                counter=counter,
            )
            se_bottlenecks[i] = bottleneck
        w, b = folded(f"b{i}.project")
        x = conv2d_loops(x, w, b, counter=counter)
        if spec.block_has_residual(i):
            x = x + shortcut
        block_outputs[i] = x

    w, b = folded("clf1")
    x = _apply_act(conv2d_loops(x, w, b, counter=counter), "hardswish")
    clf1 = x.mean(axis=(1, 2))
    clf2 = _apply_act(
        linear_loops(weights["clf2.weight"], clf1, weights["clf2.bias"], counter),
        "hardswish",
    )
    clf3 = linear_loops(weights["clf3.weight"], clf2, weights["clf3.bias"], counter)
    return block_outputs, se_bottlenecks, clf1, clf2, clf3


def instrumented_mac_oracle(spec: ArchSpec, weights: dict[str, np.ndarray],
                            mel: MelSpec) -> int:
    """MACs actually performed by a loop-nest forward pass."""
    counter = MacCounter()
    forward_loops(spec, weights, mel, counter=counter)
    return counter.count
