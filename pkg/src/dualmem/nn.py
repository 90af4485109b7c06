"""Learnable building blocks on top of :mod:`dualmem.tensor`.

Blocks are pure functions of ``(inputs, parameters)``; the only mutable
object here is the optimizer state, owned by a single trainer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, InputError, ShapeError
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

CONV2D_STRIDES = (1, 2, 4)
CONV3D_KERNELS = ((1, 1, 1), (1, 2, 2), (2, 4, 4), (4, 8, 8))


# ----------------------------
# Token grids
# ----------------------------

@dataclass(frozen=True)
class TokenGrid:
    """Token set ``tokens[N, C]`` with one ``(t, y, x)`` position per token."""

    tokens: Tensor
    positions: np.ndarray
    extents: Tuple[int, int]

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.int64)
        object.__setattr__(self, "positions", pos)
        if self.tokens.ndim != 2:
            raise ShapeError(f"token grid needs tokens[N, C], got {self.tokens.shape}")
        if pos.shape != (self.tokens.shape[0], 3):
            raise ShapeError(f"{self.tokens.shape[0]} tokens but positions {pos.shape}")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise InputError("token positions must be unique within a grid")

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.positions, self.extents)

    def as_map(self) -> Tensor:
        """Tokens reshaped to ``[H, W, C]`` (row-major grid order)."""
        h, w = self.extents
        return T.reshape(self.tokens, (h, w, self.channels))


def grid_positions(h: int, w: int, t: int = 0) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([np.full(h * w, t), ys.reshape(-1), xs.reshape(-1)], axis=1).astype(np.int64)


# ----------------------------
# Parameter registry
# ----------------------------

class Module:
    """Owns Parameters and sub-Modules; attribute order defines registry order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(prefix + name, value)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise CheckpointError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def _walk(name: str, value) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        init: str = "xavier",
    ) -> None:
        if init == "xavier":
            w = _xavier(rng, c_in, c_out)
        elif init == "zeros":
            w = np.zeros((c_in, c_out))
        elif init == "identity":
            if c_in != c_out:
                raise ConfigError("identity init needs c_in == c_out")
            w = np.eye(c_in)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.c_in, self.c_out = c_in, c_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"linear expects {self.c_in} channels, got {x.shape[-1]}")
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5) -> None:
        self.gain = Parameter(np.ones(c))
        self.bias = Parameter(np.zeros(c))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Mlp(Module):
    """Two-layer GELU MLP."""

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: np.random.Generator) -> None:
        self.fc1 = Linear(c_in, hidden, rng)
        self.fc2 = Linear(hidden, c_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


# ----------------------------
# 3D rotary position embedding
# ----------------------------

def rope3d_tables(positions: np.ndarray, head_dim: int, base: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(cos[N, D], signed_sin[N, D], partner[D])`` for rotating ``D = head_dim`` channels.

    Channels split into three equal chunks for the (t, y, x) axes; inside a
    chunk, channel ``i`` pairs with ``i + half``.
    """
    if head_dim % 6:
        raise ConfigError(f"head dim {head_dim} is not divisible by 6")
    if base <= 1.0:
        raise ConfigError(f"rotary frequency base must be > 1, got {base}")
    pos = np.asarray(positions, dtype=np.float64)
    d_axis = head_dim // 3
    half = d_axis // 2
    theta = base ** (-np.arange(half) / half)
    cos_parts, sin_parts, partner, sign = [], [], [], []
    for axis in range(3):
        ang = pos[:, axis : axis + 1] * theta[None, :]
        c, s = np.cos(ang), np.sin(ang)
        cos_parts.append(np.concatenate([c, c], axis=1))
        sin_parts.append(np.concatenate([s, s], axis=1))
        off = axis * d_axis
        partner.extend(range(off + half, off + d_axis))
        partner.extend(range(off, off + half))
        sign.extend([-1.0] * half + [1.0] * half)
    cos = np.concatenate(cos_parts, axis=1)
    signed_sin = np.concatenate(sin_parts, axis=1) * np.asarray(sign)[None, :]
    return cos, signed_sin, np.asarray(partner, dtype=np.int64)


def rope3d_apply(x: Tensor, positions: np.ndarray, base: float = 100.0) -> Tensor:
    """Rotate ``x[..., N, D]`` by the 3D rotary embedding of ``positions[N, 3]``."""
    x = T.as_tensor(x)
    cos, ssin, partner = rope3d_tables(positions, x.shape[-1], base)
    if cos.shape[0] != x.shape[-2]:
        raise ShapeError(f"{x.shape[-2]} tokens but {cos.shape[0]} positions")
    cos = cos.astype(x.dtype)
    ssin = ssin.astype(x.dtype)
    return x * cos + T.take(x, partner, axis=-1) * ssin


# ----------------------------
# Attention
# ----------------------------

class MultiHeadSelfAttention(Module):
    """Multi-head self-attention with 3D rotary positions.

    Only the leading ``rotary_dim`` channels of each head are rotated (by
    default the largest multiple of 6 not above the head dim); the remaining
    channels pass through unrotated.
    """

    def __init__(
        self,
        c: int,
        head_dim: int,
        rng: np.random.Generator,
        rope_base: float = 100.0,
        rotary_dim: Optional[int] = None,
    ) -> None:
        if head_dim <= 0 or c % head_dim:
            raise ConfigError(f"channels {c} not divisible by head dim {head_dim}")
        if rotary_dim is None:
            rotary_dim = head_dim - head_dim % 6
        if rotary_dim <= 0 or rotary_dim % 6 or rotary_dim > head_dim:
            raise ConfigError(f"rotary dim {rotary_dim} must be a positive multiple of 6 <= {head_dim}")
        self.qkv = Linear(c, 3 * c, rng)
        self.proj = Linear(c, c, rng)
        self.c = c
        self.head_dim = head_dim
        self.rotary_dim = rotary_dim
        self.heads = c // head_dim
        self.rope_base = rope_base

    def _rotate(self, x: Tensor, positions: np.ndarray) -> Tensor:
        if self.rotary_dim == self.head_dim:
            return rope3d_apply(x, positions, self.rope_base)
        r = self.rotary_dim
        rotated = rope3d_apply(T.take(x, np.arange(r), axis=-1), positions, self.rope_base)
        rest = T.take(x, np.arange(r, self.head_dim), axis=-1)
        return T.concat([rotated, rest], axis=-1)

    def attention(self, x: Tensor, positions: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Return ``(weights[H, N, N], values[H, N, Dh])``."""
        n = x.shape[0]
        qkv = T.reshape(self.qkv(x), (n, 3, self.heads, self.head_dim))
        qkv = T.transpose(qkv, (1, 2, 0, 3))
        q = self._rotate(qkv[0], positions)
        k = self._rotate(qkv[1], positions)
        scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(self.head_dim))
        return T.softmax(scores, axis=-1), qkv[2]

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        weights, v = self.attention(x, positions)
        out = T.transpose(T.matmul(weights, v), (1, 0, 2))
        return self.proj(T.reshape(out, (x.shape[0], self.c)))


class AttentionBlock(Module):
    """Pre-norm residual self-attention followed by a residual GELU MLP."""

    def __init__(
        self,
        c: int,
        head_dim: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        self.norm1 = LayerNorm(c)
        self.attn = MultiHeadSelfAttention(c, head_dim, rng, rope_base)
        self.norm2 = LayerNorm(c)
        self.mlp = Mlp(c, mlp_ratio * c, c, rng)
        self.c = c

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        if x.shape[-1] != self.c:
            raise ShapeError(f"block expects {self.c} channels, got {x.shape[-1]}")
        h = x + self.attn(self.norm1(x), positions)
        return h + self.mlp(self.norm2(h))


def self_attention_block(tokens: TokenGrid, params: AttentionBlock) -> TokenGrid:
    return tokens.with_tokens(params(tokens.tokens, tokens.positions))


class TransformerStack(Module):
    def __init__(
        self,
        n_layers: int,
        c: int,
        head_dim: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        if n_layers < 1:
            raise ConfigError(f"need at least one attention layer, got {n_layers}")
        self.blocks = [AttentionBlock(c, head_dim, rng, mlp_ratio, rope_base) for _ in range(n_layers)]

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        for block in self.blocks:
            x = block(x, positions)
        return x


# ----------------------------
# Non-overlapping window convolutions
# ----------------------------

class WindowConv(Module):
    """Convolution whose kernel equals its stride, over ``x[*extents, C]``.

    Inputs are edge-replicated up to a multiple of the window, so every output
    extent is ``ceil(extent / window)``.
    """

    def __init__(
        self,
        window: Sequence[int],
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        init: str = "xavier",
    ) -> None:
        self.window = tuple(int(w) for w in window)
        fan_in = int(np.prod(self.window)) * c_in
        if init == "identity":
            if c_in != c_out:
                raise ConfigError("identity init needs c_in == c_out")
            w = np.tile(np.eye(c_in), (int(np.prod(self.window)), 1)) / np.prod(self.window)
        elif init == "xavier":
            w = _xavier(rng, fan_in, c_out)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out))
        self.c_in, self.c_out = c_in, c_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape[-1]}")
        rows, out = T.window_partition(x, self.window)
        y = T.matmul(rows, self.weight) + self.bias
        return T.reshape(y, out + (self.c_out,))


class StridedConv2d(WindowConv):
    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, init: str = "xavier") -> None:
        if stride not in CONV2D_STRIDES:
            raise ConfigError(f"unsupported stride {stride}; expected one of {CONV2D_STRIDES}")
        super().__init__((stride, stride), c_in, c_out, rng, init)
        self.stride = stride


class StridedConv3d(WindowConv):
    def __init__(self, c: int, kernel: Sequence[int], rng: np.random.Generator, init: str = "xavier") -> None:
        kernel = tuple(int(k) for k in kernel)
        if kernel not in CONV3D_KERNELS:
            raise ConfigError(f"unsupported 3D kernel {kernel}; expected one of {CONV3D_KERNELS}")
        super().__init__(kernel, c, c, rng, init)
        self.kernel = kernel


def conv2d_strided(x: Tensor, params: StridedConv2d) -> Tensor:
    return params(x)


def conv3d_strided(x: Tensor, params: StridedConv3d) -> Tensor:
    return params(x)


class PatchEmbed(Module):
    """Image ``[H, W, C_in]`` -> token grid of ``(H/P) x (W/P)`` tokens."""

    def __init__(self, patch: int, c_in: int, c: int, rng: np.random.Generator) -> None:
        self.patch = patch
        self.conv = WindowConv((patch, patch), c_in, c, rng)

    def __call__(self, image: Tensor, t: int = 0) -> TokenGrid:
        image = T.as_tensor(image)
        h, w = image.shape[:2]
        if image.ndim != 3 or h % self.patch or w % self.patch:
            raise InputError(f"image {image.shape} not divisible by patch size {self.patch}")
        grid = self.conv(image)
        gh, gw = grid.shape[:2]
        tokens = T.reshape(grid, (gh * gw, self.conv.c_out))
        return TokenGrid(tokens, grid_positions(gh, gw, t), (gh, gw))


def patch_embed(image: Tensor, params: PatchEmbed) -> TokenGrid:
    return params(image)


# ----------------------------
# AdamW with linear warmup + cosine decay
# ----------------------------

@dataclass
class OptimizerState:
    base_lr: float
    warmup_steps: int
    total_steps: int
    weight_decay: float = 0.05
    betas: Tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    rejected: int = 0

    def lr_at(self, step: int) -> float:
        warm = min(step / self.warmup_steps, 1.0) if self.warmup_steps > 0 else 1.0
        progress = min(step / self.total_steps, 1.0) if self.total_steps > 0 else 0.0
        return self.base_lr * warm * 0.5 * (1.0 + math.cos(math.pi * progress))

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": v.copy() for k, v in self.m.items()}
        out.update({f"v.{k}": v.copy() for k, v in self.v.items()})
        return out

    def scalars(self) -> Dict[str, float]:
        return {
            "base_lr": self.base_lr,
            "warmup_steps": self.warmup_steps,
            "total_steps": self.total_steps,
            "weight_decay": self.weight_decay,
            "beta1": self.betas[0],
            "beta2": self.betas[1],
            "eps": self.eps,
            "step": self.step,
        }

    @classmethod
    def restore(cls, scalars: Mapping[str, float], buffers: Mapping[str, np.ndarray]) -> "OptimizerState":
        state = cls(
            base_lr=float(scalars["base_lr"]),
            warmup_steps=int(scalars["warmup_steps"]),
            total_steps=int(scalars["total_steps"]),
            weight_decay=float(scalars["weight_decay"]),
            betas=(float(scalars["beta1"]), float(scalars["beta2"])),
            eps=float(scalars["eps"]),
            step=int(scalars["step"]),
        )
        for key, arr in buffers.items():
            kind, _, name = key.partition(".")
            (state.m if kind == "m" else state.v)[name] = np.array(arr)
        return state


def optimizer_step(
    params: Mapping[str, Parameter],
    grads: Mapping[Tensor, np.ndarray],
    state: OptimizerState,
) -> bool:
    """One decoupled-weight-decay Adam update in place.

    Returns ``False`` (and leaves parameters and moments untouched) when any
    gradient is non-finite. Parameters without a gradient are skipped.
    """
    live = [(name, p, grads[p]) for name, p in params.items() if p in grads]
    if not all(np.all(np.isfinite(g)) for _, _, g in live):
        state.rejected += 1
        logger.warning("non-finite gradient at step %d; update rejected", state.step)
        return False

    lr = state.lr_at(state.step)
    b1, b2 = state.betas
    t = state.step + 1
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p, g in live:
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if p.ndim >= 2:
            update = update + state.weight_decay * p.data
        p.data = p.data - lr * update
    state.step = t
    return True


class AdamW:
    """Owner of an :class:`OptimizerState` bound to a module's registry."""

    def __init__(
        self,
        module: Module,
        lr: float,
        total_steps: int,
        warmup_steps: Optional[int] = None,
        weight_decay: float = 0.05,
        betas: Tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
    ) -> None:
        if warmup_steps is None:
            warmup_steps = int(round(0.05 * total_steps))
        self.params = dict(module.named_parameters())
        self.state = OptimizerState(lr, warmup_steps, total_steps, weight_decay, betas, eps)

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> bool:
        return optimizer_step(self.params, grads, self.state)

    @property
    def lr(self) -> float:
        return self.state.lr_at(self.state.step)
