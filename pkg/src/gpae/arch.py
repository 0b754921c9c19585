"""Width-scalable MobileNetV3 architecture description.

The baseline layout (width multiplier 1.0): a stride-2 input convolution,
fifteen mobile inverted bottleneck blocks (some carrying squeeze-excitation),
and a classification head made of a 1x1 convolution with global pooling
followed by two linear layers ending in 527 output logits. Every channel
width except the 527-way output scales with the width multiplier ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidConfigError

# Baseline block table: (kernel, expansion, out_channels, se_bottleneck, stride, activation).
# Blocks 1-6 use ReLU, 7-15 use hard-swish.
_BASE_BLOCKS = (
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

#: Block indices whose outputs / SE bottlenecks feed the mid-level taps.
TAP_BLOCKS = (5, 11, 13, 15)

MAX_ALPHA = 8.0


def round_channels(value: float, divisor: int = 8) -> int:
    """Round a scaled channel count to a hardware-friendly width.

    Nearest multiple of ``divisor`` with a floor of ``divisor``; bumped up one
    step whenever plain rounding would lose more than 10% of ``value``.
    """
    rounded = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * value:
        rounded += divisor
    return rounded


@dataclass(frozen=True)
class BlockSpec:
    """One inverted bottleneck block, holding baseline (unscaled) widths."""

    index: int
    kernel: int
    expansion_channels: int
    out_channels: int
    se_bottleneck: int | None
    stride: int
    activation: str


@dataclass(frozen=True)
class ArchSpec:
    """A concrete width-scaled network: baseline widths plus ``alpha``.

    ``scale()`` maps any baseline width to its scaled value; accessors below
    expose the resolved per-layer widths everything downstream consumes.
    """

    alpha: float
    blocks: tuple[BlockSpec, ...]
    in_conv_out: int = IN_CONV_OUT
    clf1_out: int = CLF1_OUT
    clf2_out: int = CLF2_OUT
    clf3_out: int = N_CLASSES  # never scaled

    def scale(self, base: int) -> int:
        return round_channels(base * self.alpha)

    @property
    def scaled_in_conv_out(self) -> int:
        return self.scale(self.in_conv_out)

    @property
    def scaled_clf1_out(self) -> int:
        return self.scale(self.clf1_out)

    @property
    def scaled_clf2_out(self) -> int:
        return self.scale(self.clf2_out)

    def block_in_channels(self, index: int) -> int:
        """Scaled input width of block ``index`` (1-based)."""
        if index == 1:
            return self.scaled_in_conv_out
        return self.scale(self.blocks[index - 2].out_channels)

    def block_out_channels(self, index: int) -> int:
        return self.scale(self.blocks[index - 1].out_channels)

    def block_expansion(self, index: int) -> int:
        return self.scale(self.blocks[index - 1].expansion_channels)

    def block_se_bottleneck(self, index: int) -> int | None:
        base = self.blocks[index - 1].se_bottleneck
        return None if base is None else self.scale(base)

    def block_has_expand(self, index: int) -> bool:
        """The expand convolution is skipped when it would be a no-op."""
        return self.block_expansion(index) != self.block_in_channels(index)

    def block_has_residual(self, index: int) -> bool:
        block = self.blocks[index - 1]
        return block.stride == 1 and (
            self.block_in_channels(index) == self.block_out_channels(index)
        )


def build_arch(alpha: float) -> ArchSpec:
    """Instantiate the scaled network description for a width multiplier."""
    if not isinstance(alpha, (int, float)) or isinstance(alpha, bool):
        raise InvalidConfigError(f"alpha must be a number, got {alpha!r}")
    if not (0 < alpha <= MAX_ALPHA):
        raise InvalidConfigError(f"alpha must be in (0, {MAX_ALPHA}], got {alpha}")
    blocks = tuple(
        BlockSpec(
            index=i + 1,
            kernel=kernel,
            expansion_channels=expansion,
            out_channels=out,
            se_bottleneck=se,
            stride=stride,
            activation=act,
        )
        for i, (kernel, expansion, out, se, stride, act) in enumerate(_BASE_BLOCKS)
    )
    return ArchSpec(alpha=float(alpha), blocks=blocks)


def conv_out_size(size: int, kernel: int, stride: int) -> int:
    """Output extent of a convolution with fixed symmetric padding kernel//2."""
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1
