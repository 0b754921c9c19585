"""Feature taps: assembling embeddings from internal activations.

Six tap points are available:

  L       time-averaged log-mel spectrogram (128 dims, width-independent)
  M_B     globally average-pooled outputs of blocks 5, 11, 13 and 15
  M_SE    squeeze-excite bottleneck vectors of the same four blocks
  H_Clf1  pooled output of the head convolution
  H_Clf2  penultimate linear layer (after its activation)
  H_Clf3  the 527 output logits

A selector is an ordered, duplicate-free combination of these; its parts are
concatenated in the listed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import TAP_BLOCKS, ArchSpec, build_arch
from .errors import InvalidConfigError, InvalidInputError
from .frontend import N_MELS, MelSpec
from .network import ActivationTrace

PART_NAMES = ("L", "M_B", "M_SE", "H_Clf1", "H_Clf2", "H_Clf3")


@dataclass(frozen=True)
class FeatureSelector:
    parts: tuple[str, ...]

    def __post_init__(self):
        if not self.parts:
            raise InvalidConfigError("feature selector must name at least one part")
        unknown = [p for p in self.parts if p not in PART_NAMES]
        if unknown:
            raise InvalidConfigError(
                f"unknown feature part(s) {unknown}; valid parts: {', '.join(PART_NAMES)}"
            )
        if len(set(self.parts)) != len(self.parts):
            raise InvalidConfigError(f"duplicate parts in selector {self.parts}")

    @classmethod
    def parse(cls, text: str) -> "FeatureSelector":
        """Parse a '+'-joined selector string such as "M_B+L"."""
        return cls(tuple(part.strip() for part in text.split("+")))

    def __str__(self) -> str:
        return "+".join(self.parts)


DEFAULT_SELECTOR = FeatureSelector(("M_B", "L"))


@dataclass(frozen=True)
class Embedding:
    """Fixed-length vector tagged with the selector that produced it."""

    values: np.ndarray
    selector: FeatureSelector

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "values", values)
        if not np.isfinite(values).all():
            raise InvalidInputError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)


def low_level_features(spec: MelSpec) -> Embedding:
    """L tap: per-band mean of the log-mel spectrogram over time."""
    # float64 accumulation keeps the mean of identical frames bit-exact
    return Embedding(spec.frames.mean(axis=0, dtype=np.float64), FeatureSelector(("L",)))


def part_dim(spec: ArchSpec, part: str) -> int:
    if part == "L":
        return N_MELS
    if part == "M_B":
        return sum(spec.block_out_channels(i) for i in TAP_BLOCKS)
    if part == "M_SE":
        return sum(spec.block_se_bottleneck(i) for i in TAP_BLOCKS)
    if part == "H_Clf1":
        return spec.scaled_clf1_out
    if part == "H_Clf2":
        return spec.scaled_clf2_out
    if part == "H_Clf3":
        return spec.clf3_out
    raise InvalidConfigError(f"unknown feature part {part!r}")


def embedding_dim(alpha: float, selector: FeatureSelector) -> int:
    """Embedding dimensionality for a width multiplier, without a forward pass."""
    spec = build_arch(alpha)
    return sum(part_dim(spec, part) for part in selector.parts)


def _part_values(trace: ActivationTrace, spec_mel: MelSpec, part: str) -> np.ndarray:
    if part == "L":
        return spec_mel.frames.mean(axis=0, dtype=np.float64)
    if part == "M_B":
        return np.concatenate(
            [trace.block_outputs[i].mean(axis=(1, 2), dtype=np.float64)
             for i in TAP_BLOCKS]
        )
    if part == "M_SE":
        missing = [i for i in TAP_BLOCKS if i not in trace.se_bottlenecks]
        if missing:
            raise InvalidInputError(
                f"trace has no SE bottleneck for block(s) {missing}"
            )
        return np.concatenate([trace.se_bottlenecks[i] for i in TAP_BLOCKS])
    if part == "H_Clf1":
        return trace.clf1
    if part == "H_Clf2":
        return trace.clf2
    if part == "H_Clf3":
        return trace.clf3
    raise InvalidConfigError(f"unknown feature part {part!r}")


def extract(trace: ActivationTrace, spec_mel: MelSpec,
            selector: FeatureSelector) -> Embedding:
    """Concatenate the selected tap points, in selector order."""
    values = np.concatenate(
        [np.asarray(_part_values(trace, spec_mel, p), dtype=np.float32)
         for p in selector.parts]
    )
    return Embedding(values, selector)
