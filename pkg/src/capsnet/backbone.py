"""Convolutional backbone: a plain stem plus stages of bottleneck blocks.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted prefixes
("stage2.block0.conv1.w"), and batch-norm running statistics live in a
parallel ``dict[str, RunningStats]``.  Layer objects hold only shapes and
names, so a forward pass always reads the current tensors, and the
optimizer can swap parameter tensors without touching the layers.

Block width plans, given a stage width f:

* ``standard``          1x1 f/4 -> 3x3 f/4 -> 1x1 f   (classic bottleneck)
* ``wide/quarter_half`` 1x1 f/4 -> 3x3 f/2 -> 1x1 f   (widened middle conv)
* ``wide/half_double``  1x1 f/2 -> 3x3 f/2 -> 1x1 2f  (widened throughout)

Every block carries a projection skip (1x1 conv + BN) regardless of shape,
and optionally a squeeze-excite gate on the residual branch before the add.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .attention import default_se_ratio, se_block, validate_se_ratio
from .errors import ConfigError
from .initializers import he_normal
from .ops import RunningStats
from .tensor import Tensor

BLOCK_VARIANTS = ("wide", "standard")
WIDE_PLANS = ("quarter_half", "half_double")


def block_widths(f: int, variant: str, wide_plan: str = "quarter_half") -> tuple[int, int, int]:
    """Channel widths (reduce, spatial, output) of one bottleneck block."""
    if variant == "standard":
        if f % 4:
            raise ConfigError(f"standard bottleneck needs a stage width divisible by 4, got {f}")
        return (f // 4, f // 4, f)
    if variant == "wide":
        if wide_plan == "quarter_half":
            if f % 4:
                raise ConfigError(f"wide bottleneck needs a stage width divisible by 4, got {f}")
            return (f // 4, f // 2, f)
        if wide_plan == "half_double":
            if f % 2:
                raise ConfigError(f"wide bottleneck needs an even stage width, got {f}")
            return (f // 2, f // 2, 2 * f)
        raise ConfigError(f"wide_plan must be one of {WIDE_PLANS}, got {wide_plan!r}")
    raise ConfigError(f"block variant must be one of {BLOCK_VARIANTS}, got {variant!r}")


def _init_conv(rng, params: dict, name: str, kh: int, kw: int, cin: int, cout: int,
               dtype, bias: bool = False) -> None:
    params[name + ".w"] = Tensor(
        he_normal(rng, (kh, kw, cin, cout), dtype=dtype), requires_grad=True)
    if bias:
        params[name + ".b"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def _init_bn(params: dict, stats: dict, name: str, c: int, dtype) -> None:
    params[name + ".gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
    params[name + ".beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
    stats[name] = RunningStats(c, dtype=dtype)


def _bn(params: dict, stats: dict, name: str, x, training: bool):
    return ops.batch_norm(x, params[name + ".gamma"], params[name + ".beta"],
                          stats[name], training)


class Stem:
    """Stack of stride-1 same-padded 3x3 convolutions with ReLU."""

    def __init__(self, prefix: str, in_channels: int, widths: tuple[int, ...]):
        if not widths:
            raise ConfigError("stem needs at least one conv width")
        self.prefix = prefix
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.out_channels = self.widths[-1]

    def init(self, rng, params: dict, dtype) -> None:
        cin = self.in_channels
        for i, w in enumerate(self.widths):
            _init_conv(rng, params, f"{self.prefix}.conv{i}", 3, 3, cin, w, dtype, bias=True)
            cin = w

    def __call__(self, params: dict, x):
        for i in range(len(self.widths)):
            name = f"{self.prefix}.conv{i}"
            x = ops.relu(ops.add(ops.conv2d(x, params[name + ".w"]), params[name + ".b"]))
        return x


class Bottleneck:
    """1x1 reduce -> 3x3 (carries the stride) -> 1x1 expand, SE, skip, ReLU."""

    def __init__(self, prefix: str, in_channels: int, f: int, stride: int,
                 variant: str = "wide", wide_plan: str = "quarter_half",
                 use_se: bool = True, se_ratio: Optional[int] = None):
        self.prefix = prefix
        self.in_channels = in_channels
        self.stride = stride
        self.widths = block_widths(f, variant, wide_plan)
        self.out_channels = self.widths[2]
        self.use_se = use_se
        ratio = se_ratio if se_ratio is not None else default_se_ratio(self.out_channels)
        self.se_ratio = validate_se_ratio(self.out_channels, ratio) if use_se else None

    def init(self, rng, params: dict, stats: dict, dtype) -> None:
        c1, c2, c3 = self.widths
        p = self.prefix
        _init_conv(rng, params, f"{p}.conv1", 1, 1, self.in_channels, c1, dtype)
        _init_bn(params, stats, f"{p}.bn1", c1, dtype)
        _init_conv(rng, params, f"{p}.conv2", 3, 3, c1, c2, dtype)
        _init_bn(params, stats, f"{p}.bn2", c2, dtype)
        _init_conv(rng, params, f"{p}.conv3", 1, 1, c2, c3, dtype)
        _init_bn(params, stats, f"{p}.bn3", c3, dtype)
        if self.use_se:
            hidden = c3 // self.se_ratio
            params[f"{p}.se.w1"] = Tensor(
                he_normal(rng, (c3, hidden), dtype=dtype), requires_grad=True)
            params[f"{p}.se.b1"] = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
            params[f"{p}.se.w2"] = Tensor(
                he_normal(rng, (hidden, c3), dtype=dtype), requires_grad=True)
            params[f"{p}.se.b2"] = Tensor(np.zeros(c3, dtype=dtype), requires_grad=True)
        _init_conv(rng, params, f"{p}.proj", 1, 1, self.in_channels, c3, dtype)
        _init_bn(params, stats, f"{p}.projbn", c3, dtype)

    def __call__(self, params: dict, stats: dict, x, training: bool):
        p = self.prefix
        y = ops.conv2d(x, params[f"{p}.conv1.w"], stride=1, padding="same")
        y = ops.relu(_bn(params, stats, f"{p}.bn1", y, training))
        y = ops.conv2d(y, params[f"{p}.conv2.w"], stride=self.stride, padding="same")
        y = ops.relu(_bn(params, stats, f"{p}.bn2", y, training))
        y = ops.conv2d(y, params[f"{p}.conv3.w"], stride=1, padding="same")
        y = _bn(params, stats, f"{p}.bn3", y, training)
        if self.use_se:
            y = se_block(y, params[f"{p}.se.w1"], params[f"{p}.se.b1"],
                         params[f"{p}.se.w2"], params[f"{p}.se.b2"])
        skip = ops.conv2d(x, params[f"{p}.proj.w"], stride=self.stride, padding="same")
        skip = _bn(params, stats, f"{p}.projbn", skip, training)
        return ops.relu(ops.add(y, skip))


class Stage:
    """``depth`` bottleneck blocks; only the first may change resolution."""

    def __init__(self, prefix: str, in_channels: int, f: int, depth: int,
                 first_stride: int, **block_kwargs):
        if depth < 1:
            raise ConfigError(f"stage depth must be >= 1, got {depth}")
        self.prefix = prefix
        self.blocks: list[Bottleneck] = []
        cin = in_channels
        for i in range(depth):
            block = Bottleneck(f"{prefix}.block{i}", cin, f,
                               first_stride if i == 0 else 1, **block_kwargs)
            self.blocks.append(block)
            cin = block.out_channels
        self.out_channels = cin

    def init(self, rng, params: dict, stats: dict, dtype) -> None:
        for block in self.blocks:
            block.init(rng, params, stats, dtype)

    def __call__(self, params: dict, stats: dict, x, training: bool):
        for block in self.blocks:
            x = block(params, stats, x, training)
        return x


class Backbone:
    """Stem followed by three stages; stages 2 and 3 halve the resolution."""

    def __init__(self, in_channels: int, stem_widths: tuple[int, ...],
                 stage_widths: tuple[int, int, int], stage_depths: tuple[int, int, int],
                 variant: str = "wide", wide_plan: str = "quarter_half",
                 use_se: bool = True, se_ratio: Optional[int] = None):
        if len(stage_widths) != 3 or len(stage_depths) != 3:
            raise ConfigError("backbone expects exactly 3 stages")
        self.stem = Stem("stem", in_channels, stem_widths)
        kwargs = dict(variant=variant, wide_plan=wide_plan, use_se=use_se, se_ratio=se_ratio)
        self.stages: list[Stage] = []
        cin = self.stem.out_channels
        for s, (f, depth) in enumerate(zip(stage_widths, stage_depths), start=1):
            stage = Stage(f"stage{s}", cin, f, depth, first_stride=1 if s == 1 else 2, **kwargs)
            self.stages.append(stage)
            cin = stage.out_channels
        self.out_channels = cin

    def init(self, rng, params: dict, stats: dict, dtype) -> None:
        self.stem.init(rng, params, dtype)
        for stage in self.stages:
            stage.init(rng, params, stats, dtype)

    def __call__(self, params: dict, stats: dict, x, training: bool):
        x = self.stem(params, x)
        for stage in self.stages:
            x = stage(params, stats, x, training)
        return x


def parameter_count(params: dict) -> int:
    return int(sum(t.size for t in params.values()))
