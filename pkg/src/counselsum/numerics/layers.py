"""Learned layers: dense, GRU cell, (bi)LSTM, scaled dot-product attention.

Parameters are plain Tensors initialised uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
from a seeded Rng, so a fixed seed reproduces every weight bit-for-bit.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, concat, sigmoid, softmax, stack_rows, tanh


def uniform_param(rng: Rng, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class Dense:
    """Affine map x -> x @ w + b."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, zero_init: bool = False):
        if zero_init:
            self.w = Tensor(np.zeros((d_in, d_out)), requires_grad=True)
            self.b = Tensor(np.zeros(d_out), requires_grad=True)
        else:
            self.w = uniform_param(rng, (d_in, d_out), d_in)
            self.b = uniform_param(rng, (d_out,), d_in)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named_params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class GruCell:
    """Standard gated recurrent unit: h' = (1 - z) * h + z * h_cand."""

    def __init__(self, rng: Rng, d_in: int, d_h: int):
        self.d_in, self.d_h = d_in, d_h
        fan = d_in + d_h
        for gate in ("z", "r", "h"):
            setattr(self, f"w_{gate}", uniform_param(rng, (d_in, d_h), fan))
            setattr(self, f"u_{gate}", uniform_param(rng, (d_h, d_h), fan))
            setattr(self, f"b_{gate}", uniform_param(rng, (d_h,), fan))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape != (self.d_in,) or h.shape != (self.d_h,):
            raise ValueError(f"gru_cell shape mismatch: x{x.shape}, h{h.shape}")
        z = sigmoid(x @ self.w_z + h @ self.u_z + self.b_z)
        r = sigmoid(x @ self.w_r + h @ self.u_r + self.b_r)
        cand = tanh(x @ self.w_h + (r * h) @ self.u_h + self.b_h)
        return (1.0 - z) * h + z * cand

    def named_params(self, prefix: str):
        out = []
        for gate in ("z", "r", "h"):
            out += [(f"{prefix}.w_{gate}", getattr(self, f"w_{gate}")),
                    (f"{prefix}.u_{gate}", getattr(self, f"u_{gate}")),
                    (f"{prefix}.b_{gate}", getattr(self, f"b_{gate}"))]
        return out


class LstmCell:
    def __init__(self, rng: Rng, d_in: int, d_h: int):
        self.d_in, self.d_h = d_in, d_h
        fan = d_in + d_h
        for gate in ("i", "f", "o", "g"):
            setattr(self, f"w_{gate}", uniform_param(rng, (d_in, d_h), fan))
            setattr(self, f"u_{gate}", uniform_param(rng, (d_h, d_h), fan))
            setattr(self, f"b_{gate}", uniform_param(rng, (d_h,), fan))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        i = sigmoid(x @ self.w_i + h @ self.u_i + self.b_i)
        f = sigmoid(x @ self.w_f + h @ self.u_f + self.b_f)
        o = sigmoid(x @ self.w_o + h @ self.u_o + self.b_o)
        g = tanh(x @ self.w_g + h @ self.u_g + self.b_g)
        c_next = f * c + i * g
        return o * tanh(c_next), c_next

    def named_params(self, prefix: str):
        out = []
        for gate in ("i", "f", "o", "g"):
            out += [(f"{prefix}.w_{gate}", getattr(self, f"w_{gate}")),
                    (f"{prefix}.u_{gate}", getattr(self, f"u_{gate}")),
                    (f"{prefix}.b_{gate}", getattr(self, f"b_{gate}"))]
        return out


class BiLstm:
    """Bidirectional LSTM returning per-position [forward ; backward] states."""

    def __init__(self, rng: Rng, d_in: int, d_h: int):
        self.d_h = d_h
        self.fwd = LstmCell(rng, d_in, d_h)
        self.bwd = LstmCell(rng, d_in, d_h)

    def _run(self, cell: LstmCell, rows: list[Tensor]) -> list[Tensor]:
        h = Tensor(np.zeros(self.d_h))
        c = Tensor(np.zeros(self.d_h))
        states = []
        for x in rows:
            h, c = cell(x, h, c)
            states.append(h)
        return states

    def __call__(self, xs: Tensor) -> Tensor:
        n = xs.shape[0]
        rows = [xs[i] for i in range(n)]
        fwd_states = self._run(self.fwd, rows)
        bwd_states = self._run(self.bwd, rows[::-1])[::-1]
        return stack_rows([concat([f, b], axis=0) for f, b in zip(fwd_states, bwd_states)])

    def named_params(self, prefix: str):
        return self.fwd.named_params(f"{prefix}.fwd") + self.bwd.named_params(f"{prefix}.bwd")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> tuple[Tensor, Tensor]:
    """Attention(q, k, v) with optional boolean mask over key positions.

    mask may be a length-m vector or a (t, m) matrix; True marks positions
    that may be attended. Excluded positions receive -inf logits ahead of the
    softmax. Returns (output t x d_v, weights t x m).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape[-1] != k.shape[0]:
            raise ValueError(f"mask length {m.shape} does not match {k.shape[0]} keys")
        if not m.any(axis=-1).all():
            raise ValueError("empty attention support: all key positions masked")
    logits = (q @ k.T) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(logits, axis=-1, mask=mask)
    return weights @ v, weights


def cross_entropy(probs: Tensor, targets: Sequence[int], pad_id: int) -> Tensor:
    """Mean negative log-probability of targets over non-pad positions."""
    targets = list(targets)
    if probs.shape[0] != len(targets):
        raise ValueError(f"{probs.shape[0]} rows vs {len(targets)} targets")
    live = [i for i, t in enumerate(targets) if t != pad_id]
    if not live:
        raise ValueError("cross_entropy: no non-pad target positions")
    from .tensor import take_at

    picked = take_at(probs, live, [targets[i] for i in live])
    return -(picked.log().mean())
