"""Multi-stage network with a fused 1x1 head over upsampled stage outputs."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    NUM_CLASSES,
    ConvParams,
    ShapeError,
    conv2d,
    conv2d_vjp,
    maxpool2,
    maxpool2_vjp,
    pixel_softmax_xent,
    relu,
    relu_vjp,
    softmax,
)
from .upsample import upsample_bilinear, upsample_vjp

INPUT_CHANNELS = 3
SIZE_MULTIPLE = 16


@dataclass(frozen=True)
class StageSpec:
    filter_count: int
    filter_size: int
    pool: int = 1
    tapped: bool = False

    def __post_init__(self):
        if self.filter_count < 1:
            raise ValueError(f"filter_count must be positive, got {self.filter_count}")
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ValueError(f"filter_size must be odd, got {self.filter_size}")
        if self.pool not in (1, 2):
            raise ValueError(f"pool must be 1 or 2, got {self.pool}")


@dataclass(frozen=True)
class NetworkSpec:
    stages: tuple[StageSpec, ...]
    fusion_classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("network needs at least one stage")
        if not self.stages[-1].tapped:
            raise ValueError("the last stage must be tapped")

    @property
    def fusion_input_channels(self) -> int:
        return sum(s.filter_count for s in self.stages if s.tapped)

    @property
    def tapped_indices(self):
        return [i for i, s in enumerate(self.stages) if s.tapped]

    def to_text(self) -> str:
        lines = ["# conv <filters> <size> <pool> [tap]"]
        for s in self.stages:
            lines.append(f"conv {s.filter_count} {s.filter_size} {s.pool}" + (" tap" if s.tapped else ""))
        lines.append(f"classes {self.fusion_classes}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        """Parse the line format written by `to_text`.

        Blank lines and `#` comments are ignored; errors name the line.
        """
        stages = []
        classes = NUM_CLASSES
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "conv" and len(parts) in (4, 5):
                    if len(parts) == 5 and parts[4] != "tap":
                        raise ValueError(f"expected 'tap', got {parts[4]!r}")
                    stages.append(StageSpec(int(parts[1]), int(parts[2]), int(parts[3]), len(parts) == 5))
                elif parts[0] == "classes" and len(parts) == 2:
                    classes = int(parts[1])
                else:
                    raise ValueError(f"unrecognised line {line!r}")
            except ValueError as e:
                raise SpecParseError(lineno, str(e)) from None
        if not stages:
            raise SpecParseError(0, "no conv stages")
        try:
            return cls(tuple(stages), classes)
        except ValueError as e:
            raise SpecParseError(lineno, str(e)) from None


class SpecParseError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def full_network() -> NetworkSpec:
    return NetworkSpec((
        StageSpec(50, 5, 2, True),
        StageSpec(70, 5, 2, True),
        StageSpec(100, 3, 2, True),
        StageSpec(150, 3, 2, False),
        StageSpec(100, 3, 1, False),
        StageSpec(70, 3, 1, False),
        StageSpec(70, 3, 1, True),
    ))


def reduced_network(widths=(8, 12, 16, 24, 16, 12, 12)) -> NetworkSpec:
    """Same sizes, pools and taps as `full_network` with fewer filters."""
    return NetworkSpec(tuple(
        StageSpec(w, s.filter_size, s.pool, s.tapped)
        for w, s in zip(widths, full_network().stages)
    ))


def receptive_field(spec: NetworkSpec) -> int:
    r = 1
    for s in reversed(spec.stages):
        r = s.pool * r + (s.filter_size - 1)
    return r


def receptive_field_trace(spec: NetworkSpec) -> list[int]:
    """Unit counts from the last stage back to the input: [R(m), ..., R(0)]."""
    r = [1]
    for s in reversed(spec.stages):
        r.append(s.pool * r[-1] + (s.filter_size - 1))
    return r


def stage_extents(spec: NetworkSpec, height: int, width: int):
    out = []
    for s in spec.stages:
        height //= s.pool
        width //= s.pool
        out.append((height, width, s.filter_count))
    return out


@dataclass
class ParamSet:
    """Named filter/bias arrays (`stage<i>.w`, `stage<i>.b`, `fusion.w`, `fusion.b`)."""

    arrays: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.arrays.items()}
        for k, v in self.arrays.items():
            if self.velocity[k].shape != v.shape:
                raise ShapeError(f"momentum buffer {k} has shape {self.velocity[k].shape}, expected {v.shape}")

    def conv(self, name: str) -> ConvParams:
        return ConvParams(self.arrays[f"{name}.w"], self.arrays[f"{name}.b"], "same")

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.arrays.items()},
                        {k: v.copy() for k, v in self.velocity.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.arrays.items()},
                        {k: v.astype(dtype) for k, v in self.velocity.items()})

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype


def param_shapes(spec: NetworkSpec) -> dict[str, tuple]:
    shapes = {}
    cin = INPUT_CHANNELS
    for i, s in enumerate(spec.stages, 1):
        shapes[f"stage{i}.w"] = (s.filter_count, s.filter_size, s.filter_size, cin)
        shapes[f"stage{i}.b"] = (s.filter_count,)
        cin = s.filter_count
    shapes["fusion.w"] = (spec.fusion_classes, 1, 1, spec.fusion_input_channels)
    shapes["fusion.b"] = (spec.fusion_classes,)
    return shapes


def init_params(spec: NetworkSpec, seed: int, dtype=np.float64) -> ParamSet:
    """Uniform weights on [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        count, kh, kw, cin = shape
        a = np.sqrt(6.0 / (kh * kw * cin + kh * kw * count))
        arrays[name] = rng.uniform(-a, a, size=shape).astype(dtype)
    return ParamSet(arrays)


@dataclass
class ForwardCache:
    image: np.ndarray
    stage_inputs: list
    pre_relu: list
    pool_index: list
    stage_outputs: list
    factors: list  # upsample factor per tapped stage, in tap order
    stack: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def check_input(spec: NetworkSpec, image: np.ndarray):
    if image.ndim != 3 or image.shape[2] != INPUT_CHANNELS:
        raise ShapeError(f"image must be H x W x {INPUT_CHANNELS}, got {image.shape}")
    h, w = image.shape[:2]
    total_pool = int(np.prod([s.pool for s in spec.stages]))
    mult = max(SIZE_MULTIPLE, total_pool)
    if h % mult or w % mult or h == 0 or w == 0:
        raise ShapeError(f"image extents {h}x{w} must be positive multiples of {mult}")


def forward(spec: NetworkSpec, params: ParamSet, image: np.ndarray, keep_intermediates: bool = False):
    """Return (probs, cache). probs has the stage-1 output resolution and 128 channels."""
    check_input(spec, image)
    img = image.astype(params.dtype, copy=False)
    x = img
    inputs, pre, pools, outs = [], [], [], []
    for i, s in enumerate(spec.stages, 1):
        inputs.append(x)
        z = conv2d(x, params.conv(f"stage{i}"))
        pre.append(z)
        a = relu(z)
        if s.pool == 2:
            a, idx = maxpool2(a)
        else:
            idx = None
        pools.append(idx)
        outs.append(a)
        x = a
    th, tw = outs[0].shape[:2]
    ups, factors = [], []
    for i in spec.tapped_indices:
        f = th // outs[i].shape[0]
        if outs[i].shape[0] * f != th or outs[i].shape[1] * f != tw:
            raise ShapeError(f"stage {i + 1} output {outs[i].shape[:2]} does not divide {(th, tw)}")
        factors.append(f)
        ups.append(upsample_bilinear(outs[i], f))
    stack = np.concatenate(ups, axis=2)
    logits = conv2d(stack, params.conv("fusion"))
    probs = softmax(logits)
    cache = None
    if keep_intermediates:
        cache = ForwardCache(image=img, stage_inputs=inputs, pre_relu=pre, pool_index=pools,
                             stage_outputs=outs, factors=factors, stack=stack, logits=logits,
                             probs=probs)
    return probs, cache


def backward(spec: NetworkSpec, params: ParamSet, cache: ForwardCache | None, labels: np.ndarray,
             drop_tap=(), drop_chain=()):
    """Loss and gradients for every named parameter.

    `drop_tap` / `drop_chain` name stage indices (0-based) whose fusion-head
    path or next-stage path is cut from the gradient; used to check that
    branch gradients add.
    """
    if cache is None:
        raise ValueError("backward needs the cache from forward(..., keep_intermediates=True)")
    loss, g_logits = pixel_softmax_xent(cache.logits, labels)
    grads = {}
    g_stack, grads["fusion.w"], grads["fusion.b"] = conv2d_vjp(cache.stack, params.conv("fusion"), g_logits)

    tap_grads = {}
    offset = 0
    for i, f in zip(spec.tapped_indices, cache.factors):
        c = spec.stages[i].filter_count
        tap_grads[i] = upsample_vjp(g_stack[:, :, offset:offset + c], f)
        offset += c

    g_chain = None
    for i in range(len(spec.stages) - 1, -1, -1):
        g = np.zeros_like(cache.stage_outputs[i])
        if g_chain is not None and i not in drop_chain:
            g += g_chain
        if i in tap_grads and i not in drop_tap:
            g += tap_grads[i]
        if cache.pool_index[i] is not None:
            g = maxpool2_vjp(cache.pool_index[i], g)
        g = relu_vjp(cache.pre_relu[i], g)
        name = f"stage{i + 1}"
        g_chain, grads[f"{name}.w"], grads[f"{name}.b"] = conv2d_vjp(
            cache.stage_inputs[i], params.conv(name), g, need_input_grad=i > 0)
    return loss, grads


# checkpoint files: b"BXCKPT\0\0", u32 version, u32 spec length, spec text,
# u32 array count, then per array: u32 name length, name, u32 rank,
# u32 extents, little-endian float32 data
CKPT_MAGIC = b"BXCKPT\x00\x00"
CKPT_VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, params: ParamSet):
    desc = spec.to_text().encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(params.arrays)))
        for name in sorted(params.arrays):
            arr = params.arrays[name]
            bname = name.encode()
            fh.write(struct.pack("<I", len(bname)) + bname)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(CKPT_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, dlen = take("<II")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    spec = NetworkSpec.from_text(data[pos:pos + dlen].decode())
    pos += dlen
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape))
        if pos + 4 * n > len(data):
            raise CheckpointError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).astype(dtype)
        pos += 4 * n
    expected = param_shapes(spec)
    if {k: v.shape for k, v in arrays.items()} != expected:
        raise CheckpointError(f"{path}: arrays do not match the stored network spec")
    return spec, ParamSet(arrays)
