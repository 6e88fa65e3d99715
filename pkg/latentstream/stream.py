#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Chunked autoregressive generation

A `GenerationSession` grows a video one chunk at a time. Before every chunk
the history (initial frames plus every chunk so far) is turned into context
tokens by a `ContextStrategy`:

``full``
    every history frame at ``(1, 2, 2)``;
``sliding:w``
    the frames of the last ``w`` chunks at ``(1, 2, 2)``;
``spatial``
    every history frame at its ladder rate;
``tscm``
    the ladder with temporal sampling plus the channel branch.

`bench_context` tabulates the context size and the modeled attention cost
of each strategy per block.
"""

import io
import os
import json
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import pandas as pd
import torch

from latentstream.actions import render_action_text
from latentstream.attention import (linear_attention_madds,
                                    standard_attention_madds)
from latentstream.exception import CheckpointError, ConfigError
from latentstream.latent import VideoLatent
from latentstream.model import (ActionEmbeddingCache, DitModel,
                                build_text_embedding, embed_text_toy)
from latentstream.patchify import BASE_RATE, token_count
from latentstream.tensor import write_ytf
from latentstream.training import DiffusionSchedule, euler_sample
from latentstream.tscm import (CHANNEL_RATE, LadderSchedule,
                               assign_ladder_buckets, assignment_token_count,
                               spatial_compression_assignment,
                               uniform_assignment)
from latentstream.util import derive_seed, safe_md5

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ('full', 'sliding', 'spatial', 'tscm')
BENCH_COLUMNS = ['strategy', 'block_index', 'context_tokens', 'attn_madds',
                 'wall_ms']
MANIFEST_FILENAME = 'session.json'


@dataclass(frozen=True)
class ContextStrategy:
    """How history frames become context tokens

    ``window`` counts chunks and is only used by ``sliding``.
    """
    kind: str
    window: int = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError("Unknown context strategy %r" % self.kind)
        if self.kind == 'sliding':
            if self.window is None or int(self.window) != self.window or \
                    self.window < 1:
                raise ConfigError("A sliding window needs w >= 1")
        elif self.window is not None:
            raise ConfigError("Only the sliding strategy takes a window")

    @classmethod
    def parse(cls, text):
        """Read ``full``, ``sliding:<w>``, ``spatial`` or ``tscm``

        Examples
        --------
        >>> ContextStrategy.parse('sliding:4').window
        4
        """
        if isinstance(text, cls):
            return text
        kind, _, arg = text.strip().lower().partition(':')
        if kind == 'sliding':
            try:
                return cls(kind, int(arg))
            except ValueError:
                raise ConfigError("Cannot read a window from %r" % text)
        if arg:
            raise ConfigError("Strategy %r takes no argument" % kind)
        return cls(kind)

    @property
    def name(self):
        if self.kind == 'sliding':
            return 'sliding:%d' % self.window
        return self.kind

    @property
    def channel(self):
        return self.kind == 'tscm'

    def assignment(self, history_len, sched, chunk_frames, seed=0):
        """``(age, rate)`` pairs of the retained history frames"""
        if self.kind == 'full':
            return uniform_assignment(history_len, BASE_RATE)
        if self.kind == 'sliding':
            return uniform_assignment(history_len, BASE_RATE,
                                      max_age=self.window * chunk_frames)
        if self.kind == 'spatial':
            return spatial_compression_assignment(history_len, sched)
        return assign_ladder_buckets(history_len, sched, seed)


def build_context(model, history, strategy, sched=None, seed=0):
    """Compress ``history`` with ``strategy``; None for an empty history"""
    if history is None or history.f == 0:
        return None
    sched = LadderSchedule() if sched is None else sched
    assignment = strategy.assignment(history.f, sched, model.cfg.chunk_frames,
                                     seed)
    return model.compress_context(history, sched, seed, assignment,
                                  channel=strategy.channel)


def history_frames(block_index, chunk_frames, init_frames=1):
    """History length before generating 1-based ``block_index``"""
    return init_frames + (block_index - 1) * chunk_frames


def context_token_count(strategy, history_len, cfg, sched=None, seed=0):
    """Spatial context tokens and channel tokens for a history length

    Returns
    -------
    tuple
        ``(context_tokens, channel_tokens)``
    """
    if history_len == 0:
        return 0, 0
    sched = LadderSchedule() if sched is None else sched
    assignment = strategy.assignment(history_len, sched, cfg.chunk_frames,
                                     seed)
    n_ctx = assignment_token_count(assignment, cfg.height, cfg.width)
    n_channel = 0
    if strategy.channel:
        n_channel = token_count(len(assignment), cfg.height, cfg.width,
                                CHANNEL_RATE)
    return n_ctx, n_channel


def attention_madds(n_ctx, n_channel, cfg, channel=False):
    """Modeled attention multiply-adds of one forward pass

    Softmax self-attention over context plus predicted tokens in every
    block, plus the linear-attention fusion over channel and predicted
    tokens when ``channel`` is set.
    """
    n_pred = token_count(cfg.chunk_frames, cfg.height, cfg.width, BASE_RATE)
    n = n_ctx + n_pred
    per_block = standard_attention_madds(n, n, cfg.d_model)
    if channel:
        per_block += linear_attention_madds(n_channel + n_pred,
                                            cfg.channel_dim)
    return cfg.depth * per_block


def _first_block(frames, cfg, init_frames):
    block = 1
    while history_frames(block, cfg.chunk_frames, init_frames) < frames:
        block += 1
    return block


def window_saturation_block(strategy, cfg, sched=None, init_frames=1):
    """First block whose history covers the never-dropped window, or None

    From this block the ladder only grows by temporally sampled frames past
    the window; for a fixed seed the retained set can only gain frames, so
    ``tscm`` counts are non-decreasing and reach their final value by
    `saturation_block`.
    """
    sched = LadderSchedule() if sched is None else sched
    if strategy.kind in ('full', 'spatial'):
        return None
    if strategy.kind == 'sliding':
        return saturation_block(strategy, cfg, sched, init_frames)
    return _first_block(sched.window + 1, cfg, init_frames)


def saturation_block(strategy, cfg, sched=None, init_frames=1):
    """First block from which the context size is constant for every seed

    None for strategies that never stop growing.
    """
    sched = LadderSchedule() if sched is None else sched
    if strategy.kind in ('full', 'spatial'):
        return None
    if strategy.kind == 'sliding':
        return _first_block(strategy.window * cfg.chunk_frames, cfg,
                            init_frames)
    return _first_block(sched.saturation_history, cfg, init_frames)


@dataclass(frozen=True)
class BenchRecord:
    strategy: str
    block_index: int
    context_tokens: int
    attn_madds: int
    wall_ms: float

    def __post_init__(self):
        if self.wall_ms < 0:
            raise ValueError("wall_ms must be non-negative")


def chunk_noise(cfg, seed, index, dtype=torch.float32):
    """Starting noise of chunk ``index`` in a session seeded with ``seed``"""
    gen = torch.Generator().manual_seed(derive_seed(seed, 'chunk', index))
    return torch.randn(cfg.chunk_shape, generator=gen,
                       dtype=torch.float64).to(dtype)


@dataclass(eq=False)
class GenerationSession:
    """State of a chunked generation run

    Attributes
    ----------
    model : DitModel
    strategy : ContextStrategy
    seed : int
    event : str
        Current event description.
    ladder : LadderSchedule
    steps : int
        Denoising steps per chunk.
    init : VideoLatent or None
        Initial frame(s) for image-to-world generation.
    cache : ActionEmbeddingCache
    chunks : list of VideoLatent
    records : list of BenchRecord
    events : list of (int, str)
        Chunk index at which each event description took effect.
    """
    model: DitModel
    strategy: ContextStrategy
    seed: int = 0
    event: str = ''
    ladder: LadderSchedule = field(default_factory=LadderSchedule)
    steps: int = 4
    init: VideoLatent = None
    cache: ActionEmbeddingCache = None
    chunks: list = field(default_factory=list)
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    event_part: torch.Tensor = None

    def __post_init__(self):
        cfg = self.model.cfg
        self.strategy = ContextStrategy.parse(self.strategy)
        if self.cache is None:
            self.cache = ActionEmbeddingCache(cfg.d_text, cfg.action_length)
        if self.init is not None:
            expected = (cfg.channels, cfg.height, cfg.width)
            got = (self.init.C, self.init.h, self.init.w)
            if got != expected:
                raise CheckpointError("Initial latent is %s, the model "
                                      "expects C, h, w = %s"
                                      % (self.init.shape, expected))
        if self.event_part is None:
            switch_event(self, self.event)

    def history(self):
        parts = ([] if self.init is None else [self.init]) + self.chunks
        return VideoLatent.concat(parts) if parts else None


def switch_event(session, event):
    """Embed a new event description; later chunks follow it"""
    cfg = session.model.cfg
    session.event = event
    session.event_part = embed_text_toy(event, cfg.d_text, cfg.event_length)
    session.events.append((len(session.chunks), event))
    logger.info("event from chunk %d: %r", len(session.chunks), event)


def generate_chunk(session, action=None, steps=None):
    """Generate and append the next chunk

    Parameters
    ----------
    session : GenerationSession
    action : (HumanToken, CameraToken), optional
    steps : int, optional
        Overrides ``session.steps``.

    Returns
    -------
    torch.Tensor
        The new ``C x f x h x w`` chunk.
    """
    model = session.model
    index = len(session.chunks)
    steps = session.steps if steps is None else steps
    dtype = model.patch_kernel.dtype

    start = time.perf_counter()
    history = session.history()
    ctx = build_context(model, history, session.strategy, session.ladder,
                        derive_seed(session.seed, 'ctx', index))
    text = build_text_embedding(session.event, [action] if action else [],
                                session.cache, event_part=session.event_part)
    noise = chunk_noise(model.cfg, session.seed, index, dtype)
    with torch.no_grad():
        chunk = euler_sample(model, noise, DiffusionSchedule.uniform(steps),
                             text, ctx)
    wall_ms = (time.perf_counter() - start) * 1000

    n_ctx = 0 if ctx is None else ctx.n_tokens
    n_channel = 0 if ctx is None else ctx.channel_tokens.shape[-2]
    session.records.append(BenchRecord(
        session.strategy.name, index + 1, n_ctx,
        attention_madds(n_ctx, n_channel, model.cfg,
                        session.strategy.channel), wall_ms))
    session.chunks.append(VideoLatent(chunk))
    return chunk


def run_session(session, n_chunks, actions=(), out_dir=None, events=None):
    """Generate ``n_chunks`` chunks, optionally writing them to ``out_dir``

    The i-th chunk uses ``actions[i]``, the last action repeating.
    ``events`` maps a chunk number of this run to an event description that
    takes effect from that chunk on. With an output directory every chunk is
    written as ``chunk_<i>.ytf`` next to a ``session.json`` manifest.
    """
    events = {} if events is None else dict(events)
    if n_chunks < 1:
        raise ValueError("n_chunks must be at least 1")
    actions = list(actions)
    first = len(session.chunks)
    used = []
    for i in range(n_chunks):
        if i in events:
            switch_event(session, events[i])
        action = actions[min(i, len(actions) - 1)] if actions else None
        used.append(action)
        generate_chunk(session, action)

    if out_dir is not None:
        write_session(session, out_dir, first, used)
    return session


def write_session(session, out_dir, first=0, actions=()):
    os.makedirs(out_dir, exist_ok=True)
    files, md5s = [], {}
    for i, chunk in enumerate(session.chunks):
        name = 'chunk_%03d.ytf' % i
        fp = os.path.join(out_dir, name)
        write_ytf(fp, chunk.data)
        with io.open(fp, 'rb') as f:
            md5s[name] = safe_md5(f)
        files.append(name)

    manifest = {
        'seed': session.seed,
        'strategy': session.strategy.name,
        'steps': session.steps,
        'events': [[i, e] for i, e in session.events],
        'actions': [None if a is None else render_action_text(*a)
                    for a in actions],
        'first_chunk': first,
        'files': files,
        'md5': md5s,
    }
    with io.open(os.path.join(out_dir, MANIFEST_FILENAME), 'w',
                 encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
    logger.info("wrote %d chunks to %s", len(files), out_dir)


def _bench_strategy(strategy, n_blocks, cfg, sched, model, seed, measure):
    records = []
    for block in range(1, n_blocks + 1):
        hist_len = history_frames(block, cfg.chunk_frames)
        n_ctx, n_channel = context_token_count(strategy, hist_len, cfg, sched,
                                               seed)
        madds = attention_madds(n_ctx, n_channel, cfg, strategy.channel)

        wall_ms = 0.0
        if measure:
            gen = torch.Generator().manual_seed(derive_seed(seed, 'bench',
                                                            block))
            history = VideoLatent(torch.randn(
                (cfg.channels, hist_len, cfg.height, cfg.width),
                generator=gen))
            noisy = torch.randn(cfg.chunk_shape, generator=gen)
            start = time.perf_counter()
            with torch.no_grad():
                ctx = build_context(model, history, strategy, sched, seed)
                model(noisy, 0.5, None, ctx)
            wall_ms = (time.perf_counter() - start) * 1000
        records.append(BenchRecord(strategy.name, block, n_ctx, madds,
                                   wall_ms))
    return records


def bench_context(strategies, n_blocks, cfg, sched=None, model=None, seed=0,
                  measure=True, workers=1):
    """Context size and attention cost per block for each strategy

    Parameters
    ----------
    strategies : sequence of ContextStrategy or str
    n_blocks : int
        At least 2.
    cfg : DitConfig
    sched : LadderSchedule, optional
    model : DitModel, optional
        Timed model, built from ``cfg`` when needed.
    seed : int
    measure : bool
        Time a forward pass per block; ``wall_ms`` is 0 otherwise.
    workers : int
        Strategies run on this many threads.

    Returns
    -------
    pandas.DataFrame
        `BENCH_COLUMNS`, ordered by strategy then block.
    """
    if n_blocks < 2:
        raise ValueError("n_blocks must be at least 2")
    strategies = [ContextStrategy.parse(s) for s in strategies]
    sched = LadderSchedule() if sched is None else sched
    if measure and model is None:
        model = DitModel(cfg, seed)

    args = (n_blocks, cfg, sched, model, seed, measure)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _bench_strategy(s, *args),
                                    strategies))
    else:
        results = [_bench_strategy(s, *args) for s in strategies]

    rows = [[getattr(r, c) for c in BENCH_COLUMNS]
            for records in results for r in records]
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
