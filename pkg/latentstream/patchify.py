#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Variable-rate patch embedding

A patch of rate ``(pt, ph, pw)`` covers ``pt`` frames and a ``ph x pw``
spatial block of a ``C x f x h x w`` latent. Regions that are not multiples of
the rate are replicate-padded at their far edges. Patches are flattened in
``(c, pt, ph, pw)`` order and tokens are emitted frame-major, then row-major.
"""

import io
import json
import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange, repeat

from latentstream.err import errcheck
from latentstream.exception import ShapeError, PatchRateError
from latentstream.latent import VideoLatent
from latentstream.tensor import read_ytf, write_ytf

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class PatchRate:
    """Temporal, height and width downsampling factors"""
    pt: int
    ph: int
    pw: int

    def __post_init__(self):
        for v in (self.pt, self.ph, self.pw):
            if int(v) != v or v < 1:
                raise PatchRateError("Patch rates must be positive integers, "
                                     "got %s" % (self.as_tuple(),))

    def __iter__(self):
        return iter(self.as_tuple())

    def __str__(self):
        return "(%d,%d,%d)" % self.as_tuple()

    def as_tuple(self):
        return (self.pt, self.ph, self.pw)

    @property
    def volume(self):
        return self.pt * self.ph * self.pw

    @classmethod
    def parse(cls, value):
        """Build a rate from ``"1,2,2"``, a sequence or a `PatchRate`"""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            value = value.strip('()[] ').split(',')
        try:
            pt, ph, pw = (int(v) for v in value)
        except (TypeError, ValueError):
            raise PatchRateError("Cannot read a patch rate from %r" % (value,))
        return cls(pt, ph, pw)


BASE_RATE = PatchRate(1, 2, 2)


@dataclass(frozen=True, eq=False)
class PatchWeights:
    """Linear patch embedding at one rate

    ``kernel`` is ``d_out x (C*pt*ph*pw)`` and ``bias`` is ``d_out``, so a
    token is ``kernel @ patch + bias``. ``base`` names the rate these weights
    were interpolated from, if any.
    """
    rate: PatchRate
    kernel: torch.Tensor
    bias: torch.Tensor
    base: PatchRate = None

    def __post_init__(self):
        if self.kernel.dim() != 2:
            raise ShapeError("Patch kernel must be a matrix")
        if self.kernel.shape[1] % self.rate.volume:
            raise ShapeError("Kernel input width %d is not a multiple of the "
                             "patch volume %d" % (self.kernel.shape[1],
                                                  self.rate.volume))
        if tuple(self.bias.shape) != (self.kernel.shape[0],):
            raise ShapeError("Bias must have %d entries"
                             % self.kernel.shape[0])
        errcheck(self.kernel.detach(), 'nonfinite')

    @property
    def channels(self):
        return self.kernel.shape[1] // self.rate.volume

    @property
    def d_out(self):
        return self.kernel.shape[0]

    def save(self, prefix):
        """Write ``<prefix>.ytf``, ``<prefix>.bias.ytf`` and a JSON sidecar"""
        write_ytf(prefix + '.ytf', self.kernel)
        write_ytf(prefix + '.bias.ytf', self.bias)
        sidecar = {'rate': list(self.rate.as_tuple()),
                   'base': list((self.base or self.rate).as_tuple())}
        with io.open(prefix + '.json', 'w', encoding='utf-8') as f:
            json.dump(sidecar, f)

    @classmethod
    def load(cls, prefix):
        with io.open(prefix + '.json', encoding='utf-8') as f:
            sidecar = json.load(f)
        rate = PatchRate.parse(sidecar['rate'])
        base = PatchRate.parse(sidecar['base'])
        return cls(rate, read_ytf(prefix + '.ytf'),
                   read_ytf(prefix + '.bias.ytf'),
                   None if base == rate else base)


@dataclass(eq=False)
class TokenSequence:
    """Patch tokens with per-token provenance

    Attributes
    ----------
    tokens : torch.Tensor
        ``N x d`` (or ``B x N x d``) token values.
    ages : torch.Tensor
        ``N`` int64 source frame ages, 0 marks the predicted chunk.
    rates : torch.Tensor
        ``N x 3`` int64 patch rates.
    index : torch.Tensor
        ``N x 3`` int64 (frame, row, column) patch index within the source
        region.
    """
    tokens: torch.Tensor
    ages: torch.Tensor
    rates: torch.Tensor
    index: torch.Tensor

    def __post_init__(self):
        n = self.tokens.shape[-2]
        if not (len(self.ages) == len(self.rates) == len(self.index) == n):
            raise ShapeError("Token meta lengths disagree with %d tokens" % n)

    def __len__(self):
        return self.tokens.shape[-2]

    @property
    def n_predicted(self):
        return int((self.ages == 0).sum())

    def predicted_mask(self):
        return self.ages == 0

    def validate(self):
        """Raise ShapeError unless predicted tokens sit contiguously at the
        tail"""
        n_pred = self.n_predicted
        if n_pred and not bool((self.ages[len(self) - n_pred:] == 0).all()):
            raise ShapeError("Predicted tokens are not contiguous at the tail")
        return self

    def with_tokens(self, tokens):
        return TokenSequence(tokens, self.ages, self.rates, self.index)

    def detach(self):
        return self.with_tokens(self.tokens.detach())

    @classmethod
    def empty(cls, d_model, batch_shape=(), dtype=torch.float32):
        long = torch.int64
        return cls(torch.zeros(tuple(batch_shape) + (0, d_model), dtype=dtype),
                   torch.zeros(0, dtype=long), torch.zeros(0, 3, dtype=long),
                   torch.zeros(0, 3, dtype=long))

    @classmethod
    def concat(cls, seqs):
        seqs = list(seqs)
        if not seqs:
            raise ShapeError("Cannot concatenate zero token sequences")
        return cls(torch.cat([s.tokens for s in seqs], dim=-2),
                   torch.cat([s.ages for s in seqs]),
                   torch.cat([s.rates for s in seqs]),
                   torch.cat([s.index for s in seqs]))


def _ceil_div(a, b):
    return -(-a // b)


def token_count(frames, h, w, rate):
    """Number of tokens a ``frames x h x w`` region yields at ``rate``

    Examples
    --------
    >>> token_count(1, 16, 16, PatchRate(1, 8, 8))
    4
    """
    rate = PatchRate.parse(rate)
    return (_ceil_div(frames, rate.pt) * _ceil_div(h, rate.ph) *
            _ceil_div(w, rate.pw))


def _region_tensor(region):
    return region.data if isinstance(region, VideoLatent) else region


def pad_to_rate(x, rate):
    """Replicate-pad the trailing ``f x h x w`` axes of ``x`` to multiples of
    ``rate``"""
    f, h, w = x.shape[-3:]
    pads = [(-d) % r for d, r in zip((f, h, w), rate.as_tuple())]
    if not any(pads):
        return x
    errcheck(((f, h, w), rate.as_tuple()), 'padding')
    lead = x.shape[:-4]
    flat = x.reshape((-1,) + tuple(x.shape[-4:]))
    padded = F.pad(flat, (0, pads[2], 0, pads[1], 0, pads[0]),
                   mode='replicate')
    return padded.reshape(tuple(lead) + tuple(padded.shape[-4:]))


def extract_patches(x, rate):
    """``... C x f x h x w`` → ``... N x (C*pt*ph*pw)`` after padding"""
    x = pad_to_rate(x, rate)
    return rearrange(x,
                     '... c (f pt) (h ph) (w pw) -> ... (f h w) (c pt ph pw)',
                     pt=rate.pt, ph=rate.ph, pw=rate.pw)


def fold_patches(patches, rate, shape):
    """Inverse of `extract_patches` for a region of ``shape = (C, f, h, w)``

    Padding introduced by `extract_patches` is cropped away.
    """
    c, f, h, w = shape
    gf, gh, gw = (_ceil_div(f, rate.pt), _ceil_div(h, rate.ph),
                  _ceil_div(w, rate.pw))
    if patches.shape[-2] != gf * gh * gw:
        raise ShapeError("%d tokens cannot cover a %s region at rate %s"
                         % (patches.shape[-2], tuple(shape), rate))
    if patches.shape[-1] != c * rate.volume:
        raise ShapeError("Patch width %d does not match %d channels at rate %s"
                         % (patches.shape[-1], c, rate))
    x = rearrange(patches,
                  '... (f h w) (c pt ph pw) -> ... c (f pt) (h ph) (w pw)',
                  f=gf, h=gh, w=gw, c=c, pt=rate.pt, ph=rate.ph, pw=rate.pw)
    return x[..., :f, :h, :w]


def patch_index(frames, h, w, rate):
    """``N x 3`` (frame, row, column) grid index for a region"""
    gf, gh, gw = (_ceil_div(frames, rate.pt), _ceil_div(h, rate.ph),
                  _ceil_div(w, rate.pw))
    grid = torch.stack(torch.meshgrid(torch.arange(gf), torch.arange(gh),
                                      torch.arange(gw), indexing='ij'), dim=-1)
    return grid.reshape(-1, 3)


def patchify(region, rate, weights, age=0):
    """Embed a latent region into tokens at ``rate``

    Parameters
    ----------
    region : VideoLatent or torch.Tensor
        ``C x f x h x w`` data, leading batch axes allowed.
    rate : PatchRate
    weights : PatchWeights
        Must be at ``rate`` and for ``C`` channels.
    age : int
        Frame age recorded in the token meta (0 for the predicted chunk).

    Returns
    -------
    TokenSequence

    Raises
    ------
    PatchRateError
        If the weights are for a different rate.
    ShapeError
        If the weights expect a different channel count.

    Examples
    --------
    >>> import torch
    >>> w = PatchWeights(BASE_RATE, torch.eye(4), torch.zeros(4))
    >>> len(patchify(torch.zeros(1, 1, 4, 4), BASE_RATE, w))
    4
    """
    rate = PatchRate.parse(rate)
    if weights.rate != rate:
        raise PatchRateError("Weights are for rate %s, not %s"
                             % (weights.rate, rate))
    x = _region_tensor(region)
    if x.shape[-4] != weights.channels:
        raise ShapeError("Region has %d channels, weights expect %d"
                         % (x.shape[-4], weights.channels))

    patches = extract_patches(x, rate)
    tokens = torch.matmul(patches, weights.kernel.t()) + weights.bias

    f, h, w = x.shape[-3:]
    index = patch_index(f, h, w, rate)
    n = index.shape[0]
    return TokenSequence(tokens,
                         torch.full((n,), int(age), dtype=torch.int64),
                         torch.tensor([rate.as_tuple()] * n,
                                      dtype=torch.int64).reshape(n, 3),
                         index)


def unpatchify(tokens, rate, weights, shape):
    """Least-squares inverse of `patchify`

    Parameters
    ----------
    tokens : TokenSequence or torch.Tensor
        ``... x N x d`` tokens.
    rate : PatchRate
    weights : PatchWeights
    shape : tuple
        ``(C, f, h, w)`` of the region to rebuild.

    Returns
    -------
    torch.Tensor
        ``... x C x f x h x w`` region.
    """
    rate = PatchRate.parse(rate)
    if weights.rate != rate:
        raise PatchRateError("Weights are for rate %s, not %s"
                             % (weights.rate, rate))
    t = tokens.tokens if isinstance(tokens, TokenSequence) else tokens
    patches = torch.matmul(t - weights.bias,
                           torch.linalg.pinv(weights.kernel).t())
    return fold_patches(patches, rate, shape)


def interpolate_patch_weights(base, target):
    """Derive weights for a coarser rate from base weights

    Every base kernel tap is repeated over its ``target / base`` ratio grid
    and divided by the ratio volume. A ``target`` patch then responds to its
    input exactly as the base kernel responds to the block-mean pooled input,
    so constant inputs give identical tokens at both rates.

    Raises
    ------
    PatchRateError
        If a target factor is smaller than, or not a multiple of, the base
        factor.
    """
    target = PatchRate.parse(target)
    if target == base.rate:
        return base

    ratios = []
    for b, t in zip(base.rate.as_tuple(), target.as_tuple()):
        if t < b or t % b:
            raise PatchRateError("Cannot interpolate rate %s to %s"
                                 % (base.rate, target))
        ratios.append(t // b)
    rt, rh, rw = ratios

    k = rearrange(base.kernel, 'd (c t h w) -> d c t h w', c=base.channels,
                  t=base.rate.pt, h=base.rate.ph, w=base.rate.pw)
    k = repeat(k, 'd c t h w -> d c (t rt) (h rh) (w rw)',
               rt=rt, rh=rh, rw=rw) / (rt * rh * rw)
    kernel = rearrange(k, 'd c t h w -> d (c t h w)')
    return PatchWeights(target, kernel, base.bias, base.base or base.rate)
