"""Shape propagation and parameter census for the 3D U-Net block table.

Shapes are (H, W, D, C). Nothing here builds tensors or trains anything;
the training hyperparameters ride along as inert metadata.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

PUBLISHED_TOTAL_PARAMETERS = 19_077_636


class SpecInconsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    index: int
    kernel: int
    stride: tuple[int, int, int] = (1, 1, 1)
    has_maxpool: bool = False
    activation: str | None = "ReLU"
    batch_norm: bool = True
    repeat: int = 1
    in_channels: int = 1
    out_channels: int = 1
    is_upconv: bool = False
    concat_channels: int = 0

    def __post_init__(self):
        if self.repeat < 1:
            raise ValueError(f"block {self.index}: repeat must be >= 1")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError(f"block {self.index}: channels must be positive")
        if self.stride not in ((1, 1, 1), (2, 2, 1)):
            raise ValueError(f"block {self.index}: stride must be 1 or 2x2x1, got {self.stride}")

    @property
    def output_channels(self) -> int:
        return self.out_channels + self.concat_channels


@dataclass
class TrainingMetadata:
    dropout: float = 0.15
    l2: float = 0.1
    optimizer: str = "Adam"
    learning_rate: float = 0.001
    batch_size: int = 3
    iterations: int = 100_000
    loss: str = "softmax cross-entropy with logits"


@dataclass
class NetSpec:
    blocks: list[BlockSpec]
    input_shape: tuple[int, int, int, int] = (64, 64, 64, 1)
    metadata: TrainingMetadata = field(default_factory=TrainingMetadata)


def default_network() -> NetSpec:
    conv = dict(kernel=3, activation="ReLU", batch_norm=True, repeat=2)
    pool = dict(kernel=3, stride=(2, 2, 1), has_maxpool=True, activation=None, batch_norm=False)
    up = dict(kernel=2, stride=(2, 2, 1), activation="ReLU", batch_norm=True, is_upconv=True)
    blocks = [
        BlockSpec(1, in_channels=1, out_channels=64, **conv),
        BlockSpec(2, in_channels=64, out_channels=64, **pool),
        BlockSpec(3, in_channels=64, out_channels=128, **conv),
        BlockSpec(4, in_channels=128, out_channels=128, **pool),
        BlockSpec(5, in_channels=128, out_channels=256, **conv),
        BlockSpec(6, in_channels=256, out_channels=256, **pool),
        BlockSpec(7, in_channels=256, out_channels=512, **conv),
        BlockSpec(8, in_channels=512, out_channels=512, concat_channels=256, **up),
        BlockSpec(9, in_channels=768, out_channels=256, **conv),
        BlockSpec(10, in_channels=256, out_channels=256, concat_channels=128, **up),
        BlockSpec(11, in_channels=384, out_channels=128, **conv),
        BlockSpec(12, in_channels=128, out_channels=128, concat_channels=64, **up),
        BlockSpec(13, in_channels=192, out_channels=64, **conv),
        BlockSpec(14, kernel=1, activation="Softmax", batch_norm=False, in_channels=64, out_channels=2),
    ]
    return NetSpec(blocks)


def block_output_shape(block: BlockSpec, shape):
    h, w, d, c = shape
    if c != block.in_channels:
        raise SpecInconsistencyError(
            f"block {block.index} expects {block.in_channels} input channels, receives {c}"
        )
    sh, sw, sd = block.stride
    if block.has_maxpool:
        h, w, d = h // sh, w // sw, d // sd
    elif block.is_upconv:
        h, w, d = h * sh, w * sw, d * sd
    elif block.stride != (1, 1, 1):
        raise SpecInconsistencyError(f"block {block.index}: strided plain convolution is not modelled")
    return (h, w, d, block.output_channels)


def propagate_shapes(net: NetSpec, input_shape=None):
    """List of (input shape, output shape) per block."""
    shape = tuple(input_shape or net.input_shape)
    pairs = []
    for block in net.blocks:
        out = block_output_shape(block, shape)
        pairs.append((shape, out))
        shape = out
    return pairs


@dataclass
class ParameterCensus:
    per_block: list[tuple[int, int]]
    conv_bias: bool
    bn_params_per_channel: int

    @property
    def total(self) -> int:
        return sum(n for _, n in self.per_block)

    @property
    def delta_to_published(self) -> int:
        return self.total - PUBLISHED_TOTAL_PARAMETERS


def block_parameters(block: BlockSpec, conv_bias=True, bn_params_per_channel=0) -> int:
    if block.has_maxpool:
        return 0
    k3 = block.kernel ** 3
    bn = bn_params_per_channel * block.out_channels if block.batch_norm else 0
    bias = block.out_channels if conv_bias else 0
    if block.is_upconv:
        return k3 * block.in_channels * block.out_channels + bias + bn
    total = 0
    cin = block.in_channels
    for _ in range(block.repeat):
        total += k3 * cin * block.out_channels + bias + bn
        cin = block.out_channels
    return total


def count_parameters(net: NetSpec, conv_bias: bool = True, bn_params_per_channel: int = 0) -> ParameterCensus:
    if bn_params_per_channel not in (0, 2, 4):
        raise ValueError("bn_params_per_channel must be 0, 2 or 4")
    propagate_shapes(net)
    per_block = [(b.index, block_parameters(b, conv_bias, bn_params_per_channel)) for b in net.blocks]
    return ParameterCensus(per_block, conv_bias, bn_params_per_channel)


def census_all_conventions(net: NetSpec):
    """Censuses for every (bias, BN) convention, closest to the published total first."""
    out = [count_parameters(net, bias, bn) for bias, bn in itertools.product((False, True), (0, 2, 4))]
    return sorted(out, key=lambda c: (abs(c.delta_to_published), not c.conv_bias, c.bn_params_per_channel))


def _fmt_shape(shape):
    h, w, d, c = shape
    return f"{h}x{w}x{d}x{c}"


def format_table(net: NetSpec) -> str:
    census = count_parameters(net)
    rows = [("block", "kernel", "stride", "pool", "act", "bn", "rep", "input", "output", "params")]
    for (shape_in, shape_out), block, (_, n) in zip(propagate_shapes(net), net.blocks, census.per_block):
        out = _fmt_shape(shape_out)
        if block.concat_channels:
            h, w, d, _ = shape_out
            out = f"{h}x{w}x{d}x({block.out_channels}+{block.concat_channels})"
        rows.append((
            str(block.index), f"{block.kernel}^3", "x".join(map(str, block.stride)),
            "yes" if block.has_maxpool else "no", block.activation or "-",
            "yes" if block.batch_norm else "no", str(block.repeat),
            _fmt_shape(shape_in), out, f"{n:,}",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(wd) for cell, wd in zip(row, widths)).rstrip() for row in rows]
    lines.append("")
    lines.append(f"published total parameters: {PUBLISHED_TOTAL_PARAMETERS:,}")
    for c in census_all_conventions(net):
        lines.append(
            f"bias={'yes' if c.conv_bias else 'no ':3s} bn_per_channel={c.bn_params_per_channel}  "
            f"total={c.total:>12,}  delta={c.delta_to_published:+,}"
        )
    return "\n".join(lines)
