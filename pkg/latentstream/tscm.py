#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Temporal-spatial-channel history compression

History frames are addressed by *age*: the most recent history frame has age
1 and, for a history of ``L`` frames, the initial frame has age ``L``. Two
branches compress them:

* the spatial branch patchifies each retained frame at a rate chosen by its
  age (the ladder), dropping old frames by temporal sampling;
* the channel branch patchifies the retained frames at ``(8, 4, 4)`` into 96
  channel tokens which every DiT block fuses in through linear attention.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch

from latentstream.attention import linear_attention_block
from latentstream.err import errcheck
from latentstream.exception import (ConfigError, MissingWeightsError,
                                    ShapeError)
from latentstream.patchify import (BASE_RATE, PatchRate, PatchWeights,
                                   TokenSequence, patchify, token_count)

logger = logging.getLogger(__name__)

DEFAULT_BUCKETS = ((1, 2, PatchRate(1, 2, 2)),
                   (3, 6, PatchRate(1, 4, 4)),
                   (7, 23, PatchRate(1, 8, 8)))
CHANNEL_RATE = PatchRate(8, 4, 4)
CHANNEL_DIM = 96


@dataclass(frozen=True)
class LadderSchedule:
    """Per-age patch rates for the spatial history branch

    Parameters
    ----------
    buckets : tuple of (int, int, PatchRate)
        Inclusive age ranges covering ``1..window_before_sampling``.
    initial_frame_rate : PatchRate
        Rate of the initial frame, which is always kept.
    temporal_sample_rate : Fraction
        Keep probability of ages beyond the window.
    window_before_sampling : int
        Ages up to this one are never dropped.
    sampling_horizon : int
        Number of ages past the window that are eligible for sampling; older
        frames (apart from the initial one) are dropped.
    beyond_window_rate : PatchRate
        Rate of sampled frames past the window.
    stratified_sampling : bool
        Draw past-window ages with stratified rather than independent
        sampling, which caps the sampled count at ``ceil(n * rate)``.
    """
    buckets: tuple = DEFAULT_BUCKETS
    initial_frame_rate: PatchRate = BASE_RATE
    temporal_sample_rate: Fraction = Fraction(1, 32)
    window_before_sampling: int = 23
    sampling_horizon: int = 32
    beyond_window_rate: PatchRate = PatchRate(1, 8, 8)
    stratified_sampling: bool = True

    def __post_init__(self):
        buckets = tuple((int(lo), int(hi), PatchRate.parse(rate))
                        for lo, hi, rate in self.buckets)
        object.__setattr__(self, 'buckets', buckets)
        object.__setattr__(self, 'temporal_sample_rate',
                           Fraction(self.temporal_sample_rate))
        for name in ('initial_frame_rate', 'beyond_window_rate'):
            object.__setattr__(self, name,
                               PatchRate.parse(getattr(self, name)))

        if not 0 < self.temporal_sample_rate <= 1:
            raise ConfigError("temporal_sample_rate must lie in (0, 1]")
        if self.sampling_horizon < 0:
            raise ConfigError("sampling_horizon must be non-negative")

        expected = 1
        for lo, hi, _ in buckets:
            if lo != expected or hi < lo:
                raise ConfigError("Ladder buckets must cover ages 1..%d "
                                  "without gaps or overlap"
                                  % self.window_before_sampling)
            expected = hi + 1
        if expected - 1 != self.window_before_sampling:
            raise ConfigError("Ladder buckets end at age %d, window is %d"
                              % (expected - 1, self.window_before_sampling))

    @property
    def window(self):
        return self.window_before_sampling

    @property
    def saturation_history(self):
        """History length from which the retained frame set stops growing"""
        return self.window_before_sampling + 1 + self.sampling_horizon

    def rate_for_age(self, age):
        for lo, hi, rate in self.buckets:
            if lo <= age <= hi:
                return rate
        return self.beyond_window_rate

    def rates(self):
        """All rates the schedule can emit"""
        return sorted({r for _, _, r in self.buckets} |
                      {self.initial_frame_rate, self.beyond_window_rate})

    def to_dict(self):
        return {'buckets': [[lo, hi, list(r.as_tuple())]
                            for lo, hi, r in self.buckets],
                'initial_frame_rate': list(self.initial_frame_rate.as_tuple()),
                'temporal_sample_rate': str(self.temporal_sample_rate),
                'window': self.window_before_sampling,
                'sampling_horizon': self.sampling_horizon,
                'beyond_window_rate': list(self.beyond_window_rate.as_tuple()),
                'stratified_sampling': self.stratified_sampling}

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        kwargs = {}
        renames = {'window': 'window_before_sampling'}
        known = {'buckets', 'initial_frame_rate', 'temporal_sample_rate',
                 'window', 'window_before_sampling', 'sampling_horizon',
                 'beyond_window_rate', 'stratified_sampling'}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError("Unknown ladder keys: %s"
                              % ', '.join(sorted(unknown)))
        for key, value in doc.items():
            kwargs[renames.get(key, key)] = value
        if 'buckets' in kwargs:
            kwargs['buckets'] = tuple(tuple(b) for b in kwargs['buckets'])
        return cls(**kwargs)


def temporal_sample(ages, rate, rng_seed, stratified=False):
    """Randomly keep ages beyond the window

    By default every age is kept independently with probability ``rate``.

    With ``stratified=True`` and ``1/rate`` an integer ``B``, the ages
    (sorted ascending) are split into consecutive blocks of ``B`` and one slot
    out of ``B`` is drawn per block; the age at that slot is kept if the
    block has one there. Each age still has probability ``rate`` of being
    kept, but no more than ``ceil(len(ages) * rate)`` ages survive. Other
    rates fall back to independent draws.

    Parameters
    ----------
    ages : iterable of int
    rate : Fraction, float or str
        Keep probability in (0, 1], e.g. ``"1/32"``.
    rng_seed : int
    stratified : bool

    Returns
    -------
    list of int
        Kept ages, ascending.

    Examples
    --------
    >>> temporal_sample([24, 25, 26], 1, rng_seed=0)
    [24, 25, 26]
    """
    rate = Fraction(rate)
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1], got %s" % rate)
    ages = sorted(ages)
    if not ages or rate == 1:
        return ages

    rng = np.random.default_rng(rng_seed)
    inverse = 1 / rate
    if stratified and inverse.denominator == 1:
        block = int(inverse)
        kept = []
        for start in range(0, len(ages), block):
            group = ages[start:start + block]
            slot = int(rng.integers(block))
            if slot < len(group):
                kept.append(group[slot])
        return kept

    keep = rng.random(len(ages)) < float(rate)
    return [a for a, k in zip(ages, keep) if k]


def assign_ladder_buckets(history_len, sched, seed=0):
    """Rates for the retained frames of a ``history_len`` frame history

    Returns
    -------
    list of (int, PatchRate)
        ``(age, rate)`` pairs ordered oldest first: the initial frame, then
        sampled ages past the window, then the window ages.

    Examples
    --------
    >>> [(a, str(r)) for a, r in assign_ladder_buckets(3, LadderSchedule())]
    [(3, '(1,2,2)'), (2, '(1,2,2)'), (1, '(1,2,2)')]
    """
    if history_len < 1:
        raise ValueError("history_len must be at least 1")

    window_end = min(history_len - 1, sched.window_before_sampling)
    horizon_end = min(history_len - 1,
                      sched.window_before_sampling + sched.sampling_horizon)
    eligible = range(sched.window_before_sampling + 1, horizon_end + 1)
    sampled = temporal_sample(eligible, sched.temporal_sample_rate, seed,
                              stratified=sched.stratified_sampling)

    assignment = [(history_len, sched.initial_frame_rate)]
    assignment.extend((age, sched.beyond_window_rate)
                      for age in sorted(sampled, reverse=True))
    assignment.extend((age, sched.rate_for_age(age))
                      for age in range(window_end, 0, -1))
    return assignment


def spatial_compression_assignment(history_len, sched):
    """Ladder rates for every history frame, without temporal sampling"""
    if history_len < 1:
        raise ValueError("history_len must be at least 1")
    assignment = [(history_len, sched.initial_frame_rate)]
    assignment.extend((age, sched.rate_for_age(age))
                      for age in range(history_len - 1, 0, -1))
    return assignment


def uniform_assignment(history_len, rate=BASE_RATE, max_age=None):
    """Every frame (or the ``max_age`` most recent ones) at a single rate"""
    if history_len < 1:
        raise ValueError("history_len must be at least 1")
    oldest = history_len if max_age is None else min(history_len, max_age)
    return [(age, rate) for age in range(oldest, 0, -1)]


def assignment_token_count(assignment, h, w):
    return sum(token_count(1, h, w, rate) for _, rate in assignment)


def ladder_budget(h, w, sched):
    """Spatial token count of a saturated history"""
    return assignment_token_count(
        assign_ladder_buckets(sched.saturation_history, sched), h, w)


@dataclass(frozen=True, eq=False)
class ChannelBranchConfig:
    """The ``(8, 4, 4)`` channel branch and one block's fusion projections

    ``fc_down`` is ``d_model x channels`` and ``fc_up`` is
    ``channels x d_model``; ``patch_weights`` embeds history volumes into
    ``channels`` features.
    """
    rate: PatchRate = CHANNEL_RATE
    channels: int = CHANNEL_DIM
    fc_down: torch.Tensor = None
    fc_up: torch.Tensor = None
    patch_weights: PatchWeights = None

    def __post_init__(self):
        object.__setattr__(self, 'rate', PatchRate.parse(self.rate))
        if self.fc_down is not None and self.fc_down.shape[1] != self.channels:
            raise ShapeError("fc_down must output %d channels" % self.channels)
        if self.fc_up is not None:
            if self.fc_up.shape[0] != self.channels:
                raise ShapeError("fc_up must take %d channels"
                                 % self.channels)
            if (self.fc_down is not None and
                    self.fc_up.shape[1] != self.fc_down.shape[0]):
                raise ShapeError("fc_up must restore d_model=%d"
                                 % self.fc_down.shape[0])
        if self.patch_weights is not None:
            if self.patch_weights.rate != self.rate:
                raise ShapeError("Channel patch weights are for rate %s"
                                 % self.patch_weights.rate)
            if self.patch_weights.d_out != self.channels:
                raise ShapeError("Channel patch weights emit %d features"
                                 % self.patch_weights.d_out)


@dataclass(eq=False)
class CompressedContext:
    """History compressed by both branches

    Attributes
    ----------
    spatial_tokens : TokenSequence
        Ladder tokens, oldest first.
    channel_tokens : torch.Tensor
        ``... x M x 96`` channel-branch tokens.
    frame_ages_used : list of int
        Ages of the retained frames, oldest first.
    """
    spatial_tokens: TokenSequence
    channel_tokens: torch.Tensor
    frame_ages_used: list = field(default_factory=list)

    def __post_init__(self):
        errcheck(self.channel_tokens.detach(), 'nonfinite')

    @property
    def n_tokens(self):
        return len(self.spatial_tokens)

    def detach(self):
        return CompressedContext(self.spatial_tokens.detach(),
                                 self.channel_tokens.detach(),
                                 list(self.frame_ages_used))

    @classmethod
    def empty(cls, d_model, channels=CHANNEL_DIM, batch_shape=(),
              dtype=torch.float32):
        return cls(TokenSequence.empty(d_model, batch_shape, dtype),
                   torch.zeros(tuple(batch_shape) + (0, channels),
                               dtype=dtype))


def compress_history_spatial(history, sched, weights_by_rate, seed=0,
                             assignment=None):
    """Patchify every retained history frame at its ladder rate

    Parameters
    ----------
    history : VideoLatent
        ``L`` frames, index 0 being the initial frame.
    sched : LadderSchedule
    weights_by_rate : mapping of PatchRate to PatchWeights
    seed : int
        Temporal-sampling seed.
    assignment : list of (int, PatchRate), optional
        Precomputed ``(age, rate)`` pairs, overriding the ladder.

    Returns
    -------
    TokenSequence

    Raises
    ------
    MissingWeightsError
        If a needed rate has no weights.
    """
    n_frames = history.f
    if assignment is None:
        assignment = assign_ladder_buckets(n_frames, sched, seed)

    for _, rate in assignment:
        if rate not in weights_by_rate:
            raise MissingWeightsError(rate)

    seqs = [patchify(history.frames(n_frames - age), rate,
                     weights_by_rate[rate], age=age)
            for age, rate in assignment]
    return TokenSequence.concat(seqs)


def compress_history_channel(history, cfg, ages=None):
    """Embed history volumes at the channel-branch rate

    Parameters
    ----------
    history : VideoLatent
    cfg : ChannelBranchConfig
        Must carry ``patch_weights``.
    ages : list of int, optional
        Restrict to these frame ages (oldest first); defaults to every frame.

    Returns
    -------
    torch.Tensor
        ``... x M x channels``; the frame axis is replicate-padded to a
        multiple of ``cfg.rate.pt``.
    """
    if cfg.patch_weights is None:
        raise MissingWeightsError(cfg.rate)
    data = history.data
    if ages is not None:
        idx = torch.tensor([history.f - a for a in ages], dtype=torch.int64)
        data = data.index_select(-3, idx)

    tokens = patchify(data, cfg.rate, cfg.patch_weights).tokens
    if tokens.shape[-1] != cfg.channels:
        raise ShapeError("Channel branch emitted %d features, expected %d"
                         % (tokens.shape[-1], cfg.channels))
    return tokens


def fuse_tscm(z_l, z_linear, cfg, attn, numerator_pre_rope=False):
    """Fuse channel tokens into the predicted-frame tokens of one block

    The predicted tokens (age 0) are projected down to the channel width,
    appended to ``z_linear`` and mixed by linear attention; the last ``N_l``
    rows are projected back up and added to the predicted tokens. History
    rows pass through untouched.

    Parameters
    ----------
    z_l : TokenSequence
        Block tokens after cross-attention, predicted tokens at the tail.
    z_linear : torch.Tensor or None
        ``... x M x channels`` channel tokens.
    cfg : ChannelBranchConfig
        Supplies ``fc_down`` and ``fc_up``.
    attn : AttentionParams
        Linear-attention weights at the channel width.

    Returns
    -------
    torch.Tensor
        Token values shaped like ``z_l.tokens``.

    Raises
    ------
    ShapeError
        If ``z_l`` holds no predicted tokens.
    """
    n_l = z_l.validate().n_predicted
    if n_l == 0:
        raise ShapeError("fuse_tscm needs at least one predicted token")

    tokens = z_l.tokens
    history, pred = tokens[..., :-n_l, :], tokens[..., -n_l:, :]
    down = torch.matmul(pred, cfg.fc_down)

    if z_linear is None:
        z_linear = down.new_zeros(down.shape[:-2] + (0, cfg.channels))
    elif z_linear.shape[:-2] != down.shape[:-2]:
        z_linear = z_linear.expand(down.shape[:-2] + z_linear.shape[-2:])

    seq = torch.cat([z_linear.to(down.dtype), down], dim=-2)
    fused = linear_attention_block(seq, attn,
                                   numerator_pre_rope=numerator_pre_rope)
    out = torch.matmul(fused[..., -n_l:, :], cfg.fc_up) + pred
    return torch.cat([history, out], dim=-2)
