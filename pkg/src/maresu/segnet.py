"""Toy multi-stage attention ResU-Net: forward pass, parameter counts, weight files.

Topology for a spec with stage widths ``w0..w3``:

* stem: 3x3 conv ``in_channels -> w0`` + ReLU at full resolution;
* encoder stage ``i``: ``stage_depths[i]`` basic residual blocks. The first
  block of each stage has stride 2 and a 1x1 stride-2 projection shortcut,
  so stage ``i`` (0-based) outputs ``(h / 2^(i+1), w / 2^(i+1))`` maps;
* one attention block on every encoder stage output (the skip paths);
* decoder step ``j`` (4 steps): nearest 2x upsample, concatenate the
  attended skip at that resolution (the stem output for the last step),
  then two 3x3 conv + ReLU;
* head: 1x1 conv ``w0 -> num_classes``.

No normalization layers are used. Tensors are ``(h, w, channels)`` float64
arrays; conv kernels are ``(kh, kw, c_in, c_out)``.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import memtrack
from .attention import (
    AttentionBlockParams,
    AttentionDims,
    FlopMethod,
    ProjectionWeights,
    attention_block_forward,
    flop_count,
)
from .errors import CorruptionError, FormatError, ParameterError, ShapeError, VersionError
from .numerics import Rng

NUM_STAGES = 4
RESNET18_DEPTHS = (2, 2, 2, 2)
RESNET34_DEPTHS = (3, 4, 6, 3)

MAGIC = b"MARU"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 3
    stage_widths: tuple[int, ...] = (8, 16, 32, 64)
    stage_depths: tuple[int, ...] = RESNET18_DEPTHS
    num_classes: int = 6
    attention_dk_ratio: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        if len(self.stage_widths) != NUM_STAGES or len(self.stage_depths) != NUM_STAGES:
            raise ParameterError(f"need exactly {NUM_STAGES} stage widths and depths")
        if min(self.stage_widths) < 1 or min(self.stage_depths) < 1:
            raise ParameterError("stage widths and depths must be positive")
        if self.in_channels < 1:
            raise ParameterError(f"in_channels must be positive, got {self.in_channels}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.attention_dk_ratio < 1:
            raise ParameterError(f"attention_dk_ratio must be >= 1, got {self.attention_dk_ratio}")

    @classmethod
    def resnet18_like(cls, stage_widths=(8, 16, 32, 64), **kw) -> "NetworkSpec":
        return cls(stage_widths=stage_widths, stage_depths=RESNET18_DEPTHS, **kw)

    @classmethod
    def resnet34_like(cls, stage_widths=(8, 16, 32, 64), **kw) -> "NetworkSpec":
        return cls(stage_widths=stage_widths, stage_depths=RESNET34_DEPTHS, **kw)

    def attention_dk(self, stage: int) -> int:
        return max(1, self.stage_widths[stage] // self.attention_dk_ratio)


@dataclass
class ImageTensor:
    """``h x w x channels`` image; :attr:`matrix` is the ``h*w x channels`` view."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ShapeError(f"image must be h x w x channels, got shape {self.data.shape}")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def matrix(self) -> np.ndarray:
        return self.data.reshape(self.h * self.w, self.channels)


def expected_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Every tensor name and shape a network built from ``spec`` carries, in order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(prefix, k, c_in, c_out):
        shapes[f"{prefix}.kernel"] = (k, k, c_in, c_out)
        shapes[f"{prefix}.bias"] = (c_out,)

    widths = spec.stage_widths
    conv("stem", 3, spec.in_channels, widths[0])
    c_in = widths[0]
    for i, (width, depth) in enumerate(zip(widths, spec.stage_depths)):
        for b in range(depth):
            conv(f"enc{i}.block{b}.conv1", 3, c_in if b == 0 else width, width)
            conv(f"enc{i}.block{b}.conv2", 3, width, width)
            if b == 0:
                conv(f"enc{i}.block{b}.shortcut", 1, c_in, width)
        c_in = width
    for i, width in enumerate(widths):
        dk = spec.attention_dk(i)
        shapes[f"skip{i}.w_q"] = (width, dk)
        shapes[f"skip{i}.w_k"] = (width, dk)
        shapes[f"skip{i}.w_v"] = (width, width)
        shapes[f"skip{i}.gamma_p"] = (1,)
        shapes[f"skip{i}.gamma_c"] = (1,)
    c_in = widths[-1]
    for j, skip_width, out_width in _decoder_plan(spec):
        conv(f"dec{j}.conv1", 3, c_in + skip_width, out_width)
        conv(f"dec{j}.conv2", 3, out_width, out_width)
        c_in = out_width
    conv("head", 1, c_in, spec.num_classes)
    return shapes


def _decoder_plan(spec: NetworkSpec):
    """(step, skip width, output width); the last step fuses the stem output."""
    widths = spec.stage_widths
    skips = [widths[2], widths[1], widths[0], widths[0]]
    return [(j, skips[j], skips[j]) for j in range(NUM_STAGES)]


def shape_checksum(shapes: dict[str, tuple[int, ...]]) -> int:
    text = ";".join(f"{name}:{'x'.join(map(str, dims))}" for name, dims in shapes.items())
    return zlib.crc32(text.encode("utf-8"))


@dataclass
class NetworkWeights:
    spec: NetworkSpec
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = expected_shapes(self.spec)
        if list(self.tensors) != list(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"tensor names do not match spec (missing {missing}, unexpected {extra})")
        for name, dims in expected.items():
            t = np.ascontiguousarray(self.tensors[name], dtype=np.float64)
            if t.shape != dims:
                raise ShapeError(f"tensor {name} has shape {t.shape}, spec requires {dims}")
            self.tensors[name] = t
        self.shape_checksum = shape_checksum(expected)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def checksum(self) -> str:
        """SHA-256 over tensor names, shapes and float64 payloads."""
        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode("utf-8"))
            h.update(np.asarray(t.shape, dtype="<i8").tobytes())
            h.update(t.astype("<f8").tobytes())
        return h.hexdigest()

    def attention_blocks(self) -> list[AttentionBlockParams]:
        blocks = []
        for i in range(NUM_STAGES):
            proj = ProjectionWeights(self[f"skip{i}.w_q"], self[f"skip{i}.w_k"], self[f"skip{i}.w_v"])
            blocks.append(
                AttentionBlockParams(
                    proj,
                    gamma_p=float(self[f"skip{i}.gamma_p"][0]),
                    gamma_c=float(self[f"skip{i}.gamma_c"][0]),
                )
            )
        return blocks

    @property
    def decoder_steps(self) -> int:
        return len({name.split(".")[0] for name in self.tensors if name.startswith("dec")})

    def with_gammas(self, gamma_p: float, gamma_c: float) -> "NetworkWeights":
        tensors = {k: v.copy() for k, v in self.tensors.items()}
        for i in range(NUM_STAGES):
            tensors[f"skip{i}.gamma_p"][0] = gamma_p
            tensors[f"skip{i}.gamma_c"][0] = gamma_c
        return NetworkWeights(self.spec, tensors)


def build_network(spec: NetworkSpec, seed: int = 0, gamma: float = 0.0) -> NetworkWeights:
    """Seeded weights, uniform in ``[-a, a]`` with ``a = sqrt(1 / fan_in)``.

    Attention gammas are set to ``gamma`` (0 by default, an identity skip).
    """
    rng = Rng(seed)
    tensors = {}
    shapes = expected_shapes(spec)
    for name, dims in shapes.items():
        if name.endswith((".gamma_p", ".gamma_c")):
            tensors[name] = np.full(dims, float(gamma))
            continue
        owner = name.rsplit(".", 1)[0]
        if name.endswith(".bias"):
            kdims = shapes[f"{owner}.kernel"]
            fan_in = kdims[0] * kdims[1] * kdims[2]
        elif name.endswith(".kernel"):
            fan_in = dims[0] * dims[1] * dims[2]
        else:
            fan_in = dims[0]
        a = np.sqrt(1.0 / fan_in)
        tensors[name] = rng.generator.uniform(-a, a, size=dims)
    return NetworkWeights(spec, tensors)


def zero_network(spec: NetworkSpec) -> NetworkWeights:
    return NetworkWeights(spec, {name: np.zeros(dims) for name, dims in expected_shapes(spec).items()})


def param_count(weights: NetworkWeights) -> int:
    return sum(int(t.size) for t in weights.tensors.values())


def attention_flops(spec: NetworkSpec, h: int, w: int) -> int:
    """LAM plus channel-attention operation count summed over the four skip stages."""
    _check_spatial(h, w)
    total = 0
    for i, width in enumerate(spec.stage_widths):
        sh, sw = h >> (i + 1), w >> (i + 1)
        dims = AttentionDims.spatial(sh, sw, c=width, d_k=spec.attention_dk(i), d_v=width)
        total += flop_count(FlopMethod.LAM, dims) + flop_count(FlopMethod.CHANNEL, dims)
    return total


# -- layers ----------------------------------------------------------------


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """'Same'-padded 2-D convolution (cross-correlation) of an ``h x w x c`` map."""
    kh, kw, c_in, c_out = kernel.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {x.shape[2]}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((ph, ph), (pw, pw), (0, 0))) if ph or pw else x
    windows = sliding_window_view(padded, (kh, kw), axis=(0, 1))[::stride, ::stride]
    oh, ow = windows.shape[:2]
    # windows: (oh, ow, c_in, kh, kw) -> im2col rows
    cols = memtrack.note("im2col", windows.reshape(oh * ow, c_in * kh * kw), per_row=True)
    flat_kernel = kernel.transpose(2, 0, 1, 3).reshape(c_in * kh * kw, c_out)
    return (cols @ flat_kernel + bias).reshape(oh, ow, c_out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def upsample2x(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=0).repeat(2, axis=1)


def _conv(weights, prefix, x, stride=1):
    return conv2d(x, weights[f"{prefix}.kernel"], weights[f"{prefix}.bias"], stride)


def _residual_block(weights, prefix, x, stride):
    y = relu(_conv(weights, f"{prefix}.conv1", x, stride))
    y = _conv(weights, f"{prefix}.conv2", y)
    shortcut = _conv(weights, f"{prefix}.shortcut", x, stride) if stride != 1 else x
    return relu(y + shortcut)


def _check_spatial(h: int, w: int):
    if h % 16 or w % 16 or h < 16 or w < 16:
        raise ShapeError(
            f"spatial size {h}x{w} must be a positive multiple of 16; pad the image to "
            f"{-(-h // 16) * 16}x{-(-w // 16) * 16}"
        )


def encode(weights: NetworkWeights, img: ImageTensor) -> tuple[np.ndarray, list[np.ndarray]]:
    """Stem output and the four encoder stage outputs."""
    spec = weights.spec
    if img.channels != spec.in_channels:
        raise ShapeError(f"image has {img.channels} channels, network expects {spec.in_channels}")
    _check_spatial(img.h, img.w)
    stem = relu(_conv(weights, "stem", img.data))
    x = stem
    stages = []
    for i, depth in enumerate(spec.stage_depths):
        for b in range(depth):
            x = _residual_block(weights, f"enc{i}.block{b}", x, stride=2 if b == 0 else 1)
        stages.append(x)
    return stem, stages


def attend_skip(x: np.ndarray, block: AttentionBlockParams) -> np.ndarray:
    h, w, c = x.shape
    return attention_block_forward(x.reshape(h * w, c), block).reshape(h, w, c)


def forward(weights: NetworkWeights, img: ImageTensor, skips: str = "attention") -> ImageTensor:
    """Per-pixel class logits with the same spatial size as ``img``.

    ``skips="plain"`` bypasses the attention blocks (raw U-Net skips).
    """
    if skips not in ("attention", "plain"):
        raise ParameterError(f"skips must be 'attention' or 'plain', got {skips!r}")
    stem, stages = encode(weights, img)
    if skips == "attention":
        stages = [attend_skip(s, blk) for s, blk in zip(stages, weights.attention_blocks())]
    fused = [stages[2], stages[1], stages[0], stem]
    x = stages[3]
    for j in range(NUM_STAGES):
        x = np.concatenate([upsample2x(x), fused[j]], axis=2)
        x = relu(_conv(weights, f"dec{j}.conv1", x))
        x = relu(_conv(weights, f"dec{j}.conv2", x))
    return ImageTensor(_conv(weights, "head", x))


def predict_labels(weights: NetworkWeights, img: ImageTensor) -> np.ndarray:
    """Argmax class map, ``h x w`` integers."""
    return forward(weights, img).data.argmax(axis=2)


# -- weight files ----------------------------------------------------------
#
# All integers little-endian:
#   b"MARU" | u16 version
#   spec:   u32 in_channels | 4 x u32 widths | 4 x u32 depths | u32 classes | u32 dk_ratio
#   u32 tensor count, then per tensor:
#           u16 name length | utf-8 name | u8 rank | rank x u32 dims | f64 payload
#   u32 CRC-32 of the canonical shape listing


def save_weights(weights: NetworkWeights, path) -> None:
    spec = weights.spec
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack(
            "<I4I4III",
            spec.in_channels,
            *spec.stage_widths,
            *spec.stage_depths,
            spec.num_classes,
            spec.attention_dk_ratio,
        ),
        struct.pack("<I", len(weights.tensors)),
    ]
    for name, t in weights.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(t.astype("<f8").tobytes())
    parts.append(struct.pack("<I", weights.shape_checksum))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise CorruptionError(f"file truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path) -> NetworkWeights:
    r = _Reader(Path(path).read_bytes())
    if r.data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {r.data[:4]!r}, expected {MAGIC!r}")
    r.pos = 4
    (version,) = r.unpack("<H", "format version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    fields = r.unpack("<I4I4III", "network spec")
    try:
        spec = NetworkSpec(
            in_channels=fields[0],
            stage_widths=fields[1:5],
            stage_depths=fields[5:9],
            num_classes=fields[9],
            attention_dk_ratio=fields[10],
        )
    except ParameterError as exc:
        raise FormatError(f"{path}: invalid network spec: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name length of tensor #{i}")
        name = r.take(name_len, f"name of tensor #{i}").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B", f"rank of tensor {name}")
        dims = r.unpack(f"<{rank}I", f"dims of tensor {name}")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(8 * size, f"payload of tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    (stored,) = r.unpack("<I", "shape checksum")
    if r.pos != len(r.data):
        raise CorruptionError(f"{path}: {len(r.data) - r.pos} trailing bytes after checksum")
    try:
        weights = NetworkWeights(spec, tensors)
    except ShapeError as exc:
        raise CorruptionError(f"{path}: {exc}") from exc
    if stored != weights.shape_checksum:
        raise CorruptionError(f"{path}: shape checksum {stored:#010x} != {weights.shape_checksum:#010x}")
    return weights
