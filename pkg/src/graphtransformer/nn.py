"""Parameter containers and the small layers shared by encoder and decoder."""
from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NEG_INF = -1e9


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{k}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


def normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return ad.parameter(rng.normal(0.0, std, size=shape))


def zeros(shape) -> Tensor:
    return ad.parameter(np.zeros(shape))


def ones(shape) -> Tensor:
    return ad.parameter(np.ones(shape))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = xavier(rng, d_in, d_out)
        self.bias = zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = ones(d)
        self.beta = zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, rng, d_model: int, d_ff: int):
        self.fc1 = Linear(rng, d_model, d_ff)
        self.fc2 = Linear(rng, d_ff, d_model)

    def __call__(self, x, dropout=0.0, stream=None):
        h = ad.relu(self.fc1(x))
        h = ad.dropout(h, dropout, stream, self.training)
        return self.fc2(h)


class CharCNN(Module):
    """Character embeddings -> width-``k`` convolution -> max over time -> linear."""

    def __init__(self, rng, n_chars: int, char_dim: int = 32, filters: int = 256, width: int = 3,
                 out_dim: int = 128, pad_id: int = 0):
        self.char_emb = normal(rng, (n_chars, char_dim), 0.1)
        self.conv_w = xavier(rng, width * char_dim, filters, shape=(width, char_dim, filters))
        self.conv_b = zeros(filters)
        self.out = Linear(rng, filters, out_dim)
        self.width = width
        self.pad_id = pad_id

    def __call__(self, char_ids: Sequence[Sequence[int]]) -> Tensor:
        """Encode a list of words given as char-id lists; returns ``[len(words), out_dim]``."""
        lengths = np.array([max(len(c), self.width) for c in char_ids])
        lmax = int(lengths.max())
        ids = np.full((len(char_ids), lmax), self.pad_id, dtype=np.int64)
        for i, c in enumerate(char_ids):
            ids[i, : len(c)] = c
        x = ad.embedding_lookup(self.char_emb, ids)
        h = ad.conv1d(x, self.conv_w, self.conv_b)
        pooled = ad.max_pool1d(h, lengths - self.width + 1)
        return self.out(pooled)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, d] -> [..., H, T, d/H]"""
    *lead, t, d = x.shape
    x = x.reshape(*lead, t, heads, d // heads)
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return x.transpose(axes)


def merge_heads(x: Tensor) -> Tensor:
    """[..., H, T, dh] -> [..., T, H*dh]"""
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    x = x.transpose(axes)
    *lead, t, h, dh = x.shape
    return x.reshape(*lead, t, h * dh)


class MultiHeadAttention(Module):
    """Standard scaled dot-product multi-head attention with split projection/attend steps for caching."""

    def __init__(self, rng, d_model: int, heads: int):
        self.w_q = xavier(rng, d_model, d_model)
        self.w_k = xavier(rng, d_model, d_model)
        self.w_v = xavier(rng, d_model, d_model)
        self.out = Linear(rng, d_model, d_model)
        self.heads = heads
        self.d_head = d_model // heads

    def project_kv(self, kv: Tensor) -> tuple[Tensor, Tensor]:
        return split_heads(kv @ self.w_k, self.heads), split_heads(kv @ self.w_v, self.heads)

    def attend(self, q_in: Tensor, k: Tensor, v: Tensor, blocked: np.ndarray | None) -> tuple[Tensor, Tensor]:
        """``blocked``: boolean array broadcastable to ``[B, 1, Tq, Tk]``."""
        q = split_heads(q_in @ self.w_q, self.heads)
        scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(self.d_head)
        if blocked is not None:
            scores = ad.masked_fill(scores, blocked, NEG_INF)
        attn = ad.softmax(scores, axis=-1)
        return self.out(merge_heads(attn @ v)), attn

    def __call__(self, q_in: Tensor, kv_in: Tensor, blocked=None):
        k, v = self.project_kv(kv_in)
        return self.attend(q_in, k, v, blocked)
