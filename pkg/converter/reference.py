"""Self-contained reference machinery for the checkpoint converter.

Deliberately independent of the inference engine package: the architecture
table, channel rounding, file formats, mel frontend and forward pass are all
reimplemented here from the documented byte layouts and layer conventions.
Parity with the engine is asserted through files in the converter tests.

The forward pass here runs unfused (convolution, then explicit batch-norm)
in float64, which is what makes it a useful pre-fold oracle.
"""

from __future__ import annotations

import json
import struct

import numpy as np

SAMPLE_RATE = 32000
MODEL_MAGIC = b"GPAE"
EMBEDDING_MAGIC = b"GPAV"
FORMAT_VERSION = 1

# (kernel, expansion, out_channels, se_bottleneck, stride, activation)
BASE_BLOCKS = (
    (3, 16, 16, None, 1, "relu"),
    (3, 64, 24, None, 2, "relu"),
    (3, 72, 24, None, 1, "relu"),
    (5, 72, 40, 24, 2, "relu"),
    (5, 120, 40, 32, 1, "relu"),
    (5, 120, 40, 32, 1, "relu"),
    (3, 240, 80, None, 2, "hardswish"),
    (3, 200, 80, None, 1, "hardswish"),
    (3, 184, 80, None, 1, "hardswish"),
    (3, 184, 80, None, 1, "hardswish"),
    (3, 480, 112, 120, 1, "hardswish"),
    (3, 672, 112, 168, 1, "hardswish"),
    (5, 672, 160, 168, 2, "hardswish"),
    (5, 960, 160, 240, 1, "hardswish"),
    (5, 960, 160, 240, 1, "hardswish"),
)
IN_CONV_OUT = 16
CLF1_OUT = 960
CLF2_OUT = 1280
N_CLASSES = 527

DEFAULT_FRONTEND = {
    "n_mels": 128,
    "win_samples": 800,
    "hop_samples": 320,
    "fft_size": 1024,
    "mel_fmin_hz": 0.0,
    "mel_fmax_hz": 16000.0,
    "log_floor": 1e-5,
    "norm_shift": 0.0,
    "norm_scale": 1.0,
}
PADDING_CONVENTION = "symmetric-half-kernel"


def round_channels(value: float, divisor: int = 8) -> int:
    rounded = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * value:
        rounded += divisor
    return rounded


class UnitPlan:
    """Resolved conv/fc units of one width-scaled network, in file order."""

    def __init__(self, alpha: float):
        if not 0 < alpha <= 8:
            raise ValueError(f"alpha must be in (0, 8], got {alpha}")
        self.alpha = float(alpha)
        scale = lambda base: round_channels(base * alpha)  # noqa: E731

        self.conv_units: dict[str, dict] = {}
        self.fc_units: dict[str, dict] = {}
        self.blocks = []

        cin = scale(IN_CONV_OUT)
        self.conv_units["in_conv"] = {"cin": 1, "cout": cin, "kernel": 3,
                                      "stride": 2, "groups": 1}
        for idx, (kernel, exp_base, out_base, se_base, stride, act) in enumerate(
                BASE_BLOCKS, start=1):
            exp = scale(exp_base)
            cout = scale(out_base)
            se = None if se_base is None else scale(se_base)
            has_expand = exp != cin
            if has_expand:
                self.conv_units[f"b{idx}.expand"] = {
                    "cin": cin, "cout": exp, "kernel": 1, "stride": 1, "groups": 1,
                }
            self.conv_units[f"b{idx}.depthwise"] = {
                "cin": exp, "cout": exp, "kernel": kernel, "stride": stride,
                "groups": exp,
            }
            if se is not None:
                self.fc_units[f"b{idx}.se.fc1"] = {"cin": exp, "cout": se}
                self.fc_units[f"b{idx}.se.fc2"] = {"cin": se, "cout": exp}
            self.conv_units[f"b{idx}.project"] = {
                "cin": exp, "cout": cout, "kernel": 1, "stride": 1, "groups": 1,
            }
            self.blocks.append({
                "index": idx, "kernel": kernel, "stride": stride, "activation": act,
                "expand": has_expand, "se": se, "residual": stride == 1 and cin == cout,
            })
            cin = cout
        self.conv_units["clf1"] = {"cin": cin, "cout": scale(CLF1_OUT), "kernel": 1,
                                   "stride": 1, "groups": 1}
        self.fc_units["clf2"] = {"cin": scale(CLF1_OUT), "cout": scale(CLF2_OUT)}
        self.fc_units["clf3"] = {"cin": scale(CLF2_OUT), "cout": N_CLASSES}

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every target tensor with its shape, in canonical file order."""
        shapes: dict[str, tuple[int, ...]] = {}

        def conv_unit(name):
            unit = self.conv_units[name]
            shapes[f"{name}.weight"] = (
                unit["cout"], unit["cin"] // unit["groups"], unit["kernel"],
                unit["kernel"],
            )
            shapes[f"{name}.bn.gamma"] = (unit["cout"],)
            shapes[f"{name}.bn.beta"] = (unit["cout"],)

        def fc_unit(name):
            unit = self.fc_units[name]
            shapes[f"{name}.weight"] = (unit["cout"], unit["cin"])
            shapes[f"{name}.bias"] = (unit["cout"],)

        conv_unit("in_conv")
        for block in self.blocks:
            i = block["index"]
            if block["expand"]:
                conv_unit(f"b{i}.expand")
            conv_unit(f"b{i}.depthwise")
            if block["se"] is not None:
                fc_unit(f"b{i}.se.fc1")
                fc_unit(f"b{i}.se.fc2")
            conv_unit(f"b{i}.project")
        conv_unit("clf1")
        fc_unit("clf2")
        fc_unit("clf3")
        return shapes


# --- model / embedding file I/O -------------------------------------------


def write_model_file(path, config: dict, tensors: dict[str, np.ndarray],
                     order: list[str]):
    parts = [MODEL_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(order)))
    for name in order:
        tensor = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_model_file(path):
    """(config, tensors-in-file-order); minimal validation, trusted inputs."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (config_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = json.loads(data[pos:pos + config_len].decode("utf-8"))
    pos += config_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=n,
                                      offset=pos).reshape(dims).copy()
        pos += 4 * n
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return config, tensors


def read_embedding_file(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    (sel_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    selector = data[pos:pos + sel_len].decode("utf-8")
    pos += sel_len
    dim, count = struct.unpack_from("<II", data, pos)
    pos += 8
    has_ts = data[pos]
    pos += 1
    timestamps = None
    if has_ts:
        timestamps = np.frombuffer(data, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
    vectors = np.frombuffer(data, dtype="<f4", count=dim * count,
                            offset=pos).reshape(count, dim).copy()
    return selector, vectors, timestamps


# --- frontend and unfused forward pass ------------------------------------


def logmel_frames(samples: np.ndarray, cfg: dict = DEFAULT_FRONTEND) -> np.ndarray:
    """Centered log-mel spectrogram, float64, (frames, n_mels)."""
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    win, hop, nfft = cfg["win_samples"], cfg["hop_samples"], cfg["fft_size"]
    pad = win // 2
    if n > pad:
        padded = np.concatenate(
            [samples[1:pad + 1][::-1], samples, samples[-pad - 1:-1][::-1]]
        )
    else:
        padded = np.zeros(n + 2 * pad)
        padded[pad:pad + n] = samples
        if n > 1:
            padded[pad - (n - 1):pad] = samples[1:][::-1]
            padded[pad + n:pad + n + (n - 1)] = samples[:-1][::-1]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points = from_mel(np.linspace(to_mel(cfg["mel_fmin_hz"]),
                                  to_mel(cfg["mel_fmax_hz"]), cfg["n_mels"] + 2))
    bins = np.arange(nfft // 2 + 1) * SAMPLE_RATE / nfft
    fb = np.zeros((cfg["n_mels"], nfft // 2 + 1))
    for m in range(cfg["n_mels"]):
        lo, mid, hi = points[m], points[m + 1], points[m + 2]
        fb[m] = np.clip(np.minimum((bins - lo) / (mid - lo), (hi - bins) / (hi - mid)),
                        0.0, None)

    n_frames = n // hop + 1
    out = np.zeros((n_frames, cfg["n_mels"]))
    for t in range(n_frames):
        frame = padded[t * hop:t * hop + win] * window
        spectrum = np.fft.rfft(frame, n=nfft)
        out[t] = (np.log(fb @ (spectrum.real ** 2 + spectrum.imag ** 2)
                         + cfg["log_floor"]) - cfg["norm_shift"]) / cfg["norm_scale"]
    return out


def conv2d_shift_add(x, weight, stride=1, groups=1):
    """Convolution as a sum of kernel-offset contributions (padding k//2)."""
    cout, cin_g, kh, kw = weight.shape
    cin, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((cin, h + 2 * ph, w + 2 * pw))
    padded[:, ph:ph + h, pw:pw + w] = x
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    cout_g = cout // groups
    for i in range(kh):
        for j in range(kw):
            sub = padded[:, i:i + stride * (oh - 1) + 1:stride,
                         j:j + stride * (ow - 1) + 1:stride]
            if groups == 1:
                out += np.tensordot(weight[:, :, i, j], sub, axes=([1], [0]))
            elif groups == cin and cin_g == 1:
                out += weight[:, 0, i, j][:, None, None] * sub
            else:
                for g in range(groups):
                    out[g * cout_g:(g + 1) * cout_g] += np.tensordot(
                        weight[g * cout_g:(g + 1) * cout_g, :, i, j],
                        sub[g * cin_g:(g + 1) * cin_g], axes=([1], [0]),
                    )
    return out


def _relu(x):
    return np.maximum(x, 0.0)


def _hardswish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _hard_sigmoid(x):
    return np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


_ACT = {"relu": _relu, "hardswish": _hardswish}


class SourceBatchNorm:
    """Inference batch-norm with raw statistics, applied unfused."""

    def __init__(self, gamma, beta, mean, var, eps):
        self.gamma = np.asarray(gamma, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        self.eps = float(eps)

    def __call__(self, x):
        sigma = np.sqrt(self.var + self.eps)
        shaped = (slice(None),) + (None,) * (x.ndim - 1)
        return (x - self.mean[shaped]) * (self.gamma / sigma)[shaped] + self.beta[shaped]


def forward_logits(plan: UnitPlan, conv_weights: dict, batchnorms: dict,
                   fc_weights: dict, mel_frames: np.ndarray,
                   se_gate: str = "hard_sigmoid") -> np.ndarray:
    """Unfused float64 forward pass returning the 527 output logits.

    conv_weights: unit -> conv kernel; batchnorms: unit -> SourceBatchNorm;
    fc_weights: unit -> (weight, bias).
    """
    gate = _hard_sigmoid if se_gate == "hard_sigmoid" else _sigmoid

    def conv_bn(unit_name, x, activation):
        unit = plan.conv_units[unit_name]
        y = conv2d_shift_add(x, np.asarray(conv_weights[unit_name], dtype=np.float64),
                             stride=unit["stride"], groups=unit["groups"])
        y = batchnorms[unit_name](y)
        return _ACT[activation](y) if activation else y

    x = np.asarray(mel_frames, dtype=np.float64).T[None, :, :]
    x = conv_bn("in_conv", x, "hardswish")
    for block in plan.blocks:
        i = block["index"]
        shortcut = x
        if block["expand"]:
            x = conv_bn(f"b{i}.expand", x, block["activation"])
        x = conv_bn(f"b{i}.depthwise", x, block["activation"])
        if block["se"] is not None:
            fc1_w, fc1_b = fc_weights[f"b{i}.se.fc1"]
            fc2_w, fc2_b = fc_weights[f"b{i}.se.fc2"]
            squeeze = x.mean(axis=(1, 2))
            bottleneck = _relu(np.asarray(fc1_w, np.float64) @ squeeze
                               + np.asarray(fc1_b, np.float64))
            gates = gate(np.asarray(fc2_w, np.float64) @ bottleneck
                         + np.asarray(fc2_b, np.float64))
            x = x * gates[:, None, None]
        x = conv_bn(f"b{i}.project", x, None)
        if block["residual"]:
            x = x + shortcut
    x = conv_bn("clf1", x, "hardswish")
    clf1 = x.mean(axis=(1, 2))
    w2, b2 = fc_weights["clf2"]
    clf2 = _hardswish(np.asarray(w2, np.float64) @ clf1 + np.asarray(b2, np.float64))
    w3, b3 = fc_weights["clf3"]
    return np.asarray(w3, np.float64) @ clf2 + np.asarray(b3, np.float64)


def scene_logits(plan: UnitPlan, conv_weights, batchnorms, fc_weights,
                 samples: np.ndarray, frontend: dict = DEFAULT_FRONTEND,
                 se_gate: str = "hard_sigmoid") -> np.ndarray:
    """Scene protocol (10 s zero-padded frames, averaged) over the logits tap."""
    samples = np.asarray(samples, dtype=np.float64)
    frame_len = 10 * SAMPLE_RATE
    n_frames = max(1, -(-len(samples) // frame_len))
    outputs = []
    for k in range(n_frames):
        segment = samples[k * frame_len:(k + 1) * frame_len]
        if len(segment) < frame_len:
            segment = np.pad(segment, (0, frame_len - len(segment)))
        mel = logmel_frames(segment.astype(np.float32).astype(np.float64), frontend)
        outputs.append(forward_logits(plan, conv_weights, batchnorms, fc_weights,
                                      mel.astype(np.float32), se_gate))
    return np.mean(np.stack(outputs), axis=0)
