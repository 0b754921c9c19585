"""Portable binary formats for models and embeddings, plus random init.

Model file ("GPAE"):

    magic           4 bytes  b"GPAE"
    format_version  u32
    config_len      u32
    config          UTF-8 JSON: alpha, frontend, se_gate, padding
    tensor_count    u32
    per tensor:     name_len u32, name UTF-8, rank u32, dims u32[rank],
                    payload f32[prod(dims)]

Embedding file ("GPAV"):

    magic           4 bytes  b"GPAV"
    format_version  u32
    selector_len    u32
    selector        UTF-8 selector string
    dim             u32
    count           u32
    has_timestamps  u8
    timestamps      f64[count]            (only when has_timestamps == 1)
    payload         f32[count * dim]      row-major

All multi-byte values are little-endian. Loading never crashes on malformed
bytes: every defect maps to a typed error carrying a byte offset (format
problems) or the offending tensor name (integrity problems).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .arch import ArchSpec, build_arch
from .errors import FormatError, InvalidConfigError, ModelIntegrityError
from .frontend import FrontendConfig
from .network import SE_GATES, Model, expected_shapes, validate_weights

MODEL_MAGIC = b"GPAE"
EMBEDDING_MAGIC = b"GPAV"
FORMAT_VERSION = 1
PADDING_CONVENTION = "symmetric-half-kernel"

_MAX_RANK = 8


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def text(self, n: int, what: str) -> str:
        at = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", at) from None

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} trailing byte(s) after payload", self.pos
            )


def _config_dict(alpha: float, frontend: FrontendConfig, se_gate: str) -> dict:
    return {
        "alpha": alpha,
        "frontend": asdict(frontend),
        "se_gate": se_gate,
        "padding": PADDING_CONVENTION,
    }


def _encode_config(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_model(path, spec: ArchSpec, weights: dict[str, np.ndarray],
               frontend: FrontendConfig = FrontendConfig(),
               se_gate: str = "hard_sigmoid"):
    """Serialize a validated model. Tensor order follows the canonical layout."""
    issues = validate_weights(spec, weights)
    if issues:
        raise ModelIntegrityError(f"refusing to save invalid weights: {issues[0]}")
    parts = [MODEL_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config = _encode_config(_config_dict(spec.alpha, frontend, se_gate))
    parts.append(struct.pack("<I", len(config)))
    parts.append(config)
    order = list(expected_shapes(spec))
    parts.append(struct.pack("<I", len(order)))
    for name in order:
        tensor = np.ascontiguousarray(weights[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)


def _interpret_config(config, offset: int) -> tuple[float, FrontendConfig, str]:
    if not isinstance(config, dict):
        raise FormatError("config must be a JSON object", offset)
    try:
        alpha = float(config["alpha"])
        frontend = FrontendConfig(**config["frontend"])
        se_gate = config["se_gate"]
    except (KeyError, TypeError, ValueError, InvalidConfigError) as exc:
        raise FormatError(f"bad config contents: {exc}", offset) from None
    if not isinstance(se_gate, str) or se_gate not in SE_GATES:
        raise FormatError(f"unknown se_gate {se_gate!r}", offset)
    return alpha, frontend, se_gate


def read_model_file(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a model file into (config dict, tensor map) without validation
    against any architecture. Raises typed errors on malformed input."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.data[:4]
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", 0)
    reader.pos = 4
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    config_len = reader.u32("config length")
    config_at = reader.pos
    raw_config = reader.text(config_len, "config")
    try:
        config = json.loads(raw_config)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc.msg}", config_at) from None

    count = reader.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32("tensor name length")
        name = reader.text(name_len, "tensor name")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", reader.pos)
        rank = reader.u32(f"rank of {name}")
        if rank > _MAX_RANK:
            raise FormatError(f"tensor {name} has implausible rank {rank}", reader.pos - 4)
        dims = tuple(reader.u32(f"dim of {name}") for _ in range(rank))
        n_values = 1
        for d in dims:
            n_values *= d
        payload_bytes = n_values * 4
        if reader.pos + payload_bytes > len(reader.data):
            raise ModelIntegrityError(
                f"tensor {name}: declared shape {dims} needs {payload_bytes} bytes, "
                f"only {len(reader.data) - reader.pos} remain"
            )
        raw = reader.take(payload_bytes, f"payload of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    reader.done()
    return config, tensors


def load_model(path) -> Model:
    """Load and fully validate a model file."""
    config, tensors = read_model_file(path)
    alpha, frontend, se_gate = _interpret_config(config, offset=12)
    try:
        spec = build_arch(alpha)
    except InvalidConfigError as exc:
        raise FormatError(f"bad config contents: {exc}", 12) from None
    issues = validate_weights(spec, tensors)
    if issues:
        raise ModelIntegrityError(
            f"model does not match its declared architecture "
            f"(alpha={alpha}): {issues[0]}"
        )
    return Model(spec, tensors, frontend=frontend, se_gate=se_gate)


def random_init(spec: ArchSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform weights; BN identity; zero biases. Seeded."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(spec).items():
        if name.endswith(".bn.gamma"):
            weights[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bn.beta") or name.endswith(".bias"):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            weights[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return weights


@dataclass(frozen=True)
class EmbeddingFileData:
    selector: str
    vectors: np.ndarray  # (count, dim) float32
    timestamps: np.ndarray | None  # (count,) float64, or None


def save_embeddings(path, vectors: np.ndarray, selector: str,
                    timestamps: np.ndarray | None = None):
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise InvalidConfigError(f"expected (count, dim) vectors, got {vectors.shape}")
    count, dim = vectors.shape
    if timestamps is not None and len(timestamps) != count:
        raise InvalidConfigError("one timestamp per embedding required")
    encoded = selector.encode("utf-8")
    parts = [
        EMBEDDING_MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(encoded)),
        encoded,
        struct.pack("<I", dim),
        struct.pack("<I", count),
        struct.pack("<B", 0 if timestamps is None else 1),
    ]
    if timestamps is not None:
        parts.append(np.ascontiguousarray(timestamps, dtype="<f8").tobytes())
    parts.append(vectors.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_embeddings(path) -> EmbeddingFileData:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.data[:4]
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}", 0)
    reader.pos = 4
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    selector = reader.text(reader.u32("selector length"), "selector")
    dim = reader.u32("dim")
    count = reader.u32("count")
    has_ts = reader.u8("timestamp flag")
    if has_ts not in (0, 1):
        raise FormatError(f"timestamp flag must be 0 or 1, got {has_ts}", reader.pos - 1)
    timestamps = None
    if has_ts:
        raw = reader.take(8 * count, "timestamps")
        timestamps = np.frombuffer(raw, dtype="<f8").copy()
    raw = reader.take(4 * dim * count, "embedding payload")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim).copy()
    reader.done()
    return EmbeddingFileData(selector=selector, vectors=vectors, timestamps=timestamps)
