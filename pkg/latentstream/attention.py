#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Softmax and ReLU-kernel linear attention

The functional operations take ``... x N x d`` tensors, any leading axes
(batch, heads) are carried through. The ``nn.Module`` wrappers at the bottom
own projection matrices stored as ``d_in x d_out`` so that a projection is
``x @ W``.
"""

import math
import logging
from dataclasses import dataclass, field

import torch
from torch import nn
from einops import rearrange

from latentstream.exception import ShapeError
from latentstream.tensor import matmul, relu, rms_norm, softmax

logger = logging.getLogger(__name__)

EPS_DENOM = 1e-6
ROPE_BASE = 10000.0


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Projection weights of one attention layer

    ``Wq``, ``Wk``, ``Wv`` and ``Wo`` are ``d_model x d_model`` matrices used
    as ``x @ W``.
    """
    d_model: int
    n_heads: int
    Wq: torch.Tensor
    Wk: torch.Tensor
    Wv: torch.Tensor
    Wo: torch.Tensor
    eps_denom: float = EPS_DENOM

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ShapeError("d_model=%d is not divisible by n_heads=%d"
                             % (self.d_model, self.n_heads))
        if self.eps_denom <= 0:
            raise ValueError("eps_denom must be positive")
        for name in ('Wq', 'Wk', 'Wv', 'Wo'):
            w = getattr(self, name)
            if tuple(w.shape) != (self.d_model, self.d_model):
                raise ShapeError("%s has shape %s, expected %s"
                                 % (name, tuple(w.shape),
                                    (self.d_model, self.d_model)))

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class RopeConfig:
    """Rotary embedding configuration, one integer position per token"""
    positions: tuple = field(default_factory=tuple)
    base: float = ROPE_BASE

    def __post_init__(self):
        if any(p < 0 for p in self.positions):
            raise ValueError("RoPE positions must be non-negative")

    @classmethod
    def sequential(cls, n, start=0, base=ROPE_BASE):
        return cls(positions=tuple(range(start, start + n)), base=base)


def _check_qkv(q, k, v):
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError("q and k feature dims differ: %d != %d"
                         % (q.shape[-1], k.shape[-1]))
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError("k and v token counts differ: %d != %d"
                         % (k.shape[-2], v.shape[-2]))
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ShapeError("Leading dims of q, k, v differ: %s, %s, %s"
                         % (tuple(q.shape), tuple(k.shape), tuple(v.shape)))


def standard_attention(q, k, v):
    """Scaled dot-product attention ``softmax(q kᵀ / sqrt(d)) v``

    ``q`` may hold a different number of tokens than ``k``/``v`` (cross
    attention).

    Raises
    ------
    ShapeError
        If the feature dims of q and k or the token counts of k and v
        disagree.
    """
    _check_qkv(q, k, v)
    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    return torch.matmul(softmax(scores, axis=-1), v)


def linear_attention(q, k, v, eps_denom=EPS_DENOM, q_denom=None,
                     k_denom=None):
    """ReLU-kernel linear attention in the factored order

    Computes, per query ``q``::

        o = (sum_i v_i phi(k_i)ᵀ) phi(q) / ((sum_j phi(k_j))ᵀ phi(q) + eps)

    with ``phi = relu``. The ``d x d_v`` key/value summary is formed first so
    the cost is linear in the number of tokens.

    Parameters
    ----------
    q, k, v : torch.Tensor
        ``... x N x d`` queries/keys and ``... x N x d_v`` values.
    eps_denom : float
        Guard added to the denominator.
    q_denom, k_denom : torch.Tensor, optional
        Queries and keys for the denominator summary. The fusion branch passes
        the pre-rotary q and k here while the numerator sees rotated ones.
        Default to ``q`` and ``k``.

    Returns
    -------
    torch.Tensor
        ``... x N x d_v``
    """
    _check_qkv(q, k, v)
    q_denom = q if q_denom is None else q_denom
    k_denom = k if k_denom is None else k_denom
    if q_denom.shape != q.shape or k_denom.shape != k.shape:
        raise ShapeError("Denominator q/k must match the numerator shapes")

    kv = torch.einsum('...nd,...ne->...de', relu(k), v)
    num = torch.einsum('...nd,...de->...ne', relu(q), kv)

    k_sum = relu(k_denom).sum(dim=-2)
    den = torch.einsum('...nd,...d->...n', relu(q_denom), k_sum) + eps_denom
    return num / den.unsqueeze(-1)


def qk_norm(q, k, eps=1e-6):
    """Per-token RMS normalization of queries and keys"""
    return rms_norm(q, axis=-1, eps=eps), rms_norm(k, axis=-1, eps=eps)


def attention_output(o, params):
    """Normalize the attention output, then project it by ``Wo``"""
    return matmul(rms_norm(o, axis=-1), params.Wo)


def _rope_angles(positions, dim, base, dtype, device):
    inv_freq = 1.0 / (base ** (torch.arange(0, dim, 2, dtype=torch.float64)
                               / dim))
    pos = torch.as_tensor(positions, dtype=torch.float64)
    angles = torch.outer(pos, inv_freq)
    return (angles.cos().to(dtype=dtype, device=device),
            angles.sin().to(dtype=dtype, device=device))


def rope_apply(x, cfg):
    """Rotate consecutive feature pairs of ``x`` by position-dependent angles

    Parameters
    ----------
    x : torch.Tensor
        ``... x N x d`` with even ``d``.
    cfg : RopeConfig
        ``N`` positions.

    Raises
    ------
    ShapeError
        If ``d`` is odd or the number of positions differs from ``N``.
    """
    n, d = x.shape[-2], x.shape[-1]
    if d % 2:
        raise ShapeError("RoPE needs an even head dim, got %d" % d)
    if len(cfg.positions) != n:
        raise ShapeError("%d RoPE positions for %d tokens"
                         % (len(cfg.positions), n))

    cos, sin = _rope_angles(cfg.positions, d, cfg.base, x.dtype, x.device)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return rotated.flatten(-2)


def split_heads(x, n_heads):
    return rearrange(x, '... n (h d) -> ... h n d', h=n_heads)


def merge_heads(x):
    return rearrange(x, '... h n d -> ... n (h d)')


def standard_attention_madds(n_q, n_k, d):
    """Modeled multiply-adds of softmax attention (scores and weighting)"""
    return 2 * n_q * n_k * d


def linear_attention_madds(n, d, d_v=None):
    """Modeled multiply-adds of factored linear attention"""
    d_v = d if d_v is None else d_v
    return 2 * n * d * d_v + 2 * n * d


def init_matrix(d_in, d_out, generator=None, zero=False):
    """``d_in x d_out`` parameter, N(0, 1/d_in) or zeros"""
    w = torch.empty(d_in, d_out)
    if zero:
        return nn.Parameter(w.zero_())
    return nn.Parameter(w.normal_(0.0, d_in ** -0.5, generator=generator))


class _Projections(nn.Module):
    def __init__(self, d_model, n_heads, generator=None, eps_denom=EPS_DENOM):
        super().__init__()
        if d_model % n_heads:
            raise ShapeError("d_model=%d is not divisible by n_heads=%d"
                             % (d_model, n_heads))
        self.d_model = d_model
        self.n_heads = n_heads
        self.eps_denom = eps_denom
        self.wq = init_matrix(d_model, d_model, generator)
        self.wk = init_matrix(d_model, d_model, generator)
        self.wv = init_matrix(d_model, d_model, generator)
        self.wo = init_matrix(d_model, d_model, generator)

    def params(self):
        """View of the weights as `AttentionParams` (no copy)"""
        return AttentionParams(self.d_model, self.n_heads, self.wq, self.wk,
                               self.wv, self.wo, self.eps_denom)


class SoftmaxAttention(_Projections):
    """Multi-head softmax attention, used for self- and cross-attention

    Self-attention applies qk-norm and rotary embeddings over the given
    positions; cross-attention (``context`` given) applies qk-norm only.
    """

    def forward(self, x, context=None, positions=None):
        src = x if context is None else context
        q = split_heads(torch.matmul(x, self.wq), self.n_heads)
        k = split_heads(torch.matmul(src, self.wk), self.n_heads)
        v = split_heads(torch.matmul(src, self.wv), self.n_heads)
        q, k = qk_norm(q, k)
        if context is None and positions is not None:
            rope = RopeConfig(positions=tuple(positions))
            q, k = rope_apply(q, rope), rope_apply(k, rope)
        o = merge_heads(standard_attention(q, k, v))
        return torch.matmul(o, self.wo)


class LinearAttention(_Projections):
    """Multi-head linear attention with the fusion-branch ordering

    qk-norm, then the denominator summary on the un-rotated q and k, then
    rotary embeddings for the numerator. ``numerator_pre_rope=True`` feeds the
    un-rotated q and k to the numerator as well. The merged output is
    normalized before ``Wo``.
    """

    def __init__(self, d_model, n_heads, generator=None, eps_denom=EPS_DENOM,
                 numerator_pre_rope=False):
        super().__init__(d_model, n_heads, generator, eps_denom)
        self.numerator_pre_rope = numerator_pre_rope

    def forward(self, x, positions=None):
        return linear_attention_block(x, self.params(), positions,
                                      self.numerator_pre_rope)


def linear_attention_block(x, params, positions=None,
                           numerator_pre_rope=False):
    """Project, normalize, rotate and attend with `linear_attention`

    Parameters
    ----------
    x : torch.Tensor
        ``... x N x d_model`` sequence.
    params : AttentionParams
    positions : sequence of int, optional
        Rotary positions, default ``0..N-1``.
    numerator_pre_rope : bool
        Use un-rotated q, k in the numerator too.
    """
    n = x.shape[-2]
    q = split_heads(torch.matmul(x, params.Wq), params.n_heads)
    k = split_heads(torch.matmul(x, params.Wk), params.n_heads)
    v = split_heads(torch.matmul(x, params.Wv), params.n_heads)
    q, k = qk_norm(q, k)

    rope = RopeConfig(positions=tuple(range(n)) if positions is None
                      else tuple(positions))
    if numerator_pre_rope:
        q_num, k_num = q, k
    else:
        q_num, k_num = rope_apply(q, rope), rope_apply(k, rope)

    o = linear_attention(q_num, k_num, v, params.eps_denom,
                         q_denom=q, k_denom=k)
    return attention_output(merge_heads(o), params)
