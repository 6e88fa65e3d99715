#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Toy video diffusion transformer

The predicted chunk is patchified at ``(1, 2, 2)`` and appended to the
compressed history tokens. Every block runs self-attention over the whole
sequence, cross-attention to the text embedding, fusion of the channel-branch
tokens and an MLP. Timestep modulation (shift, scale, gate) only applies to
the predicted tokens; history frames are clean and pass with the identity
modulation. The velocity of the predicted chunk is read off the tail tokens.
"""

import io
import os
import json
import math
import logging
import threading
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn
from einops import rearrange

from latentstream.actions import all_action_pairs, render_action_text
from latentstream.attention import (EPS_DENOM, LinearAttention,
                                    SoftmaxAttention, init_matrix)
from latentstream.err import errcheck
from latentstream.exception import (CheckpointError, ConfigError,
                                    DiffusionError, ShapeError)
from latentstream.latent import VideoLatent
from latentstream.patchify import (BASE_RATE, PatchWeights, TokenSequence,
                                   fold_patches, interpolate_patch_weights,
                                   patchify)
from latentstream.tensor import read_ytf, rms_norm, write_ytf
from latentstream.tscm import (CHANNEL_DIM, CHANNEL_RATE, ChannelBranchConfig,
                               CompressedContext, assign_ladder_buckets,
                               compress_history_channel,
                               compress_history_spatial, fuse_tscm)
from latentstream.util import derive_seed

logger = logging.getLogger(__name__)

CONFIG_FILENAME = 'config.json'


@dataclass(frozen=True)
class DitConfig:
    """Shape of the toy model

    Parameters
    ----------
    channels : int
        Latent channels ``C``.
    chunk_frames : int
        Frames generated per autoregressive step.
    height, width : int
        Latent spatial size.
    d_model, n_heads, depth : int
        Transformer width, heads and number of blocks (``depth`` may be 0).
    d_text : int
        Text embedding width.
    mlp_ratio : int
    t_embed_dim : int
        Sinusoidal timestep embedding width.
    channel_dim, channel_heads : int
        Width and heads of the channel-branch linear attention.
    event_length, action_length : int
        Rows of the event and per-action text embeddings.
    eps_denom : float
        Linear-attention denominator guard.
    numerator_pre_rope : bool
        Feed un-rotated q and k to the linear-attention numerator.
    """
    channels: int = 8
    chunk_frames: int = 4
    height: int = 16
    width: int = 16
    d_model: int = 64
    n_heads: int = 4
    depth: int = 4
    d_text: int = 32
    mlp_ratio: int = 4
    t_embed_dim: int = 64
    channel_dim: int = CHANNEL_DIM
    channel_heads: int = 4
    event_length: int = 16
    action_length: int = 8
    eps_denom: float = EPS_DENOM
    numerator_pre_rope: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.type is int or f.type == 'int':
                value = getattr(self, f.name)
                floor = 0 if f.name == 'depth' else 1
                if int(value) != value or value < floor:
                    raise ConfigError("DitConfig.%s must be an integer >= %d, "
                                      "got %r" % (f.name, floor, value))
        if self.d_model % self.n_heads:
            raise ConfigError("d_model=%d is not divisible by n_heads=%d"
                              % (self.d_model, self.n_heads))
        if self.channel_dim % self.channel_heads:
            raise ConfigError("channel_dim=%d is not divisible by "
                              "channel_heads=%d"
                              % (self.channel_dim, self.channel_heads))
        if (self.d_model // self.n_heads) % 2 or \
                (self.channel_dim // self.channel_heads) % 2:
            raise ConfigError("Rotary embeddings need even head dims")
        if self.t_embed_dim % 2:
            raise ConfigError("t_embed_dim must be even")
        if self.eps_denom <= 0:
            raise ConfigError("eps_denom must be positive")

    @property
    def chunk_shape(self):
        return (self.channels, self.chunk_frames, self.height, self.width)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError("Unknown model keys: %s"
                              % ', '.join(sorted(unknown)))
        return cls(**doc)


def embed_text_toy(text, d_text, length):
    """Deterministic stand-in for a text encoder

    Whitespace-separated tokens are embedded as unit-variance pseudo-random
    rows seeded from the whole text, the token and its position; rows past
    the last token are zero.

    Returns
    -------
    torch.Tensor
        ``length x d_text`` float32.

    Examples
    --------
    >>> embed_text_toy('', 4, 2)
    tensor([[0., 0., 0., 0.],
            [0., 0., 0., 0.]])
    """
    out = np.zeros((length, d_text), dtype=np.float32)
    for i, tok in enumerate(text.split()[:length]):
        rng = np.random.default_rng(derive_seed('text', text, i, tok))
        out[i] = rng.standard_normal(d_text)
    return torch.from_numpy(out)


class ActionEmbeddingCache:
    """Embeddings of canonical action texts, computed once

    ``hits`` and ``misses`` count lookups answered from and added to the
    cache.
    """

    def __init__(self, d_text, length):
        self.d_text = d_text
        self.length = length
        self.hits = 0
        self.misses = 0
        self._store = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def __contains__(self, text):
        return text in self._store

    def get(self, text):
        with self._lock:
            if text in self._store:
                self.hits += 1
                return self._store[text]
            self.misses += 1
            emb = embed_text_toy(text, self.d_text, self.length)
            self._store[text] = emb
            return emb

    def lookup(self, human, camera):
        return self.get(render_action_text(human, camera))

    def prewarm(self):
        """Embed every action pair; returns the cache size"""
        for h, c in all_action_pairs():
            self.lookup(h, c)
        return len(self)


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    """Event and action embeddings, concatenated along the token axis"""
    event_part: torch.Tensor
    action_part: torch.Tensor

    def __post_init__(self):
        if self.event_part.shape[-1] != self.action_part.shape[-1]:
            raise ShapeError("Event and action embeddings differ in width")

    @property
    def combined(self):
        return torch.cat([self.event_part, self.action_part], dim=-2)

    def with_actions(self, action_part):
        return TextEmbedding(self.event_part, action_part)


def build_text_embedding(event, actions, cache, event_length=16,
                         event_part=None):
    """Embed an event description and a list of action pairs

    Parameters
    ----------
    event : str
    actions : sequence of (HumanToken, CameraToken)
    cache : ActionEmbeddingCache
    event_length : int
    event_part : torch.Tensor, optional
        Reuse an already embedded event.
    """
    if event_part is None:
        event_part = embed_text_toy(event, cache.d_text, event_length)
    parts = [cache.lookup(h, c) for h, c in actions]
    if parts:
        action_part = torch.cat(parts, dim=0)
    else:
        action_part = torch.zeros(0, cache.d_text, dtype=event_part.dtype)
    return TextEmbedding(event_part, action_part)


def mask_fuse(z, z_c, mask):
    """Select condition entries where the mask is 1 and noise elsewhere

    Parameters
    ----------
    z, z_c : torch.Tensor
        ``... x C x f x h x w`` noise and zero-padded condition latents.
    mask : torch.Tensor
        ``1 x f x h x w`` binary mask, broadcast over leading axes.

    Returns
    -------
    VideoLatent

    Raises
    ------
    ShapeError
        If the latents differ in shape.
    MaskError
        If the mask is not binary.
    """
    z = z.data if isinstance(z, VideoLatent) else z
    z_c = z_c.data if isinstance(z_c, VideoLatent) else z_c
    if z.shape != z_c.shape:
        raise ShapeError("Noise %s and condition %s latents differ"
                         % (tuple(z.shape), tuple(z_c.shape)))
    errcheck(mask, 'nonbinary')
    mask = mask.to(z.dtype).expand(tuple(z.shape[:-4]) + (1,) +
                                   tuple(z.shape[-3:]))
    return VideoLatent(torch.where(mask.bool(), z_c, z), mask)


def timestep_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embedding of ``t`` in [0, 1], scaled to 1000 steps"""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) *
                      torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64).unsqueeze(-1) * 1000.0 * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1).to(t.dtype)


class TimestepEmbedder(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(),
                                 nn.Linear(dim, dim))

    def forward(self, t):
        return self.mlp(timestep_embedding(t, self.dim))


def modulate(x, shift, scale):
    return x * (1 + scale) + shift


class TscmFusion(nn.Module):
    """Per-block projections and linear attention of the channel branch"""

    def __init__(self, d_model, channels=CHANNEL_DIM, n_heads=4,
                 eps_denom=EPS_DENOM, numerator_pre_rope=False):
        super().__init__()
        self.fc_down = init_matrix(d_model, channels)
        self.fc_up = init_matrix(channels, d_model, zero=True)
        self.attn = LinearAttention(channels, n_heads, eps_denom=eps_denom,
                                    numerator_pre_rope=numerator_pre_rope)

    def config(self):
        return ChannelBranchConfig(channels=self.fc_down.shape[1],
                                   fc_down=self.fc_down, fc_up=self.fc_up)

    def forward(self, seq, z_linear):
        return fuse_tscm(seq, z_linear, self.config(), self.attn.params(),
                         self.attn.numerator_pre_rope)


class DitBlock(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d = cfg.d_model
        self.self_attn = SoftmaxAttention(d, cfg.n_heads,
                                          eps_denom=cfg.eps_denom)
        self.cross_attn = SoftmaxAttention(d, cfg.n_heads,
                                           eps_denom=cfg.eps_denom)
        self.fusion = TscmFusion(d, cfg.channel_dim, cfg.channel_heads,
                                 cfg.eps_denom, cfg.numerator_pre_rope)
        self.mlp = nn.Sequential(nn.Linear(d, d * cfg.mlp_ratio),
                                 nn.GELU(approximate='tanh'),
                                 nn.Linear(d * cfg.mlp_ratio, d))
        self.adaLN = nn.Sequential(nn.SiLU(),
                                   nn.Linear(cfg.t_embed_dim, 6 * d))
        nn.init.zeros_(self.adaLN[-1].weight)
        nn.init.zeros_(self.adaLN[-1].bias)

    def forward(self, seq, text, z_linear, t_embed, positions=None,
                fuse=True):
        """Run one block

        Parameters
        ----------
        seq : TokenSequence
            History tokens followed by the predicted tokens.
        text : torch.Tensor or None
            ``... x L x d_model`` projected text tokens.
        z_linear : torch.Tensor or None
            Channel-branch tokens.
        t_embed : torch.Tensor
            ``... x t_embed_dim`` timestep embedding.
        positions : sequence of int, optional
            Rotary positions, default ``0..N-1``.
        fuse : bool
            Run the channel-branch fusion.

        Returns
        -------
        TokenSequence
        """
        seq.validate()
        x = seq.tokens
        if positions is None:
            positions = range(len(seq))

        # identity modulation on history rows
        pred = seq.predicted_mask().to(x.dtype).unsqueeze(-1)
        mods = rearrange(self.adaLN(t_embed), '... (six d) -> six ... d',
                         six=6).unsqueeze(-2) * pred
        shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp = mods
        gate_msa = gate_msa + (1 - pred)
        gate_mlp = gate_mlp + (1 - pred)

        h = modulate(rms_norm(x), shift_msa, scale_msa)
        x = x + gate_msa * self.self_attn(h, positions=positions)

        if text is not None and text.shape[-2]:
            x = x + self.cross_attn(rms_norm(x), context=text)

        if fuse:
            x = self.fusion(seq.with_tokens(x), z_linear)

        h = modulate(rms_norm(x), shift_mlp, scale_mlp)
        x = x + gate_mlp * self.mlp(h)
        return seq.with_tokens(x)


def _expand_to(t, batch_shape):
    if t.shape[:-2] == tuple(batch_shape):
        return t
    return t.expand(tuple(batch_shape) + tuple(t.shape[-2:]))


class DitModel(nn.Module):
    """Velocity-predicting transformer over a predicted chunk and history

    Parameters
    ----------
    cfg : DitConfig
    seed : int
        Initialization seed; the global torch RNG is left untouched.
    """

    def __init__(self, cfg=None, seed=0):
        super().__init__()
        self.cfg = cfg = DitConfig() if cfg is None else cfg
        self.seed = seed
        vol = BASE_RATE.volume

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.patch_kernel = nn.Parameter(
                init_matrix(cfg.channels * vol, cfg.d_model).detach()
                .t().contiguous())
            self.patch_bias = nn.Parameter(torch.zeros(cfg.d_model))
            ch_vol = CHANNEL_RATE.volume
            self.channel_kernel = nn.Parameter(
                init_matrix(cfg.channels * ch_vol, cfg.channel_dim).detach()
                .t().contiguous())
            self.channel_bias = nn.Parameter(torch.zeros(cfg.channel_dim))
            self.t_embedder = TimestepEmbedder(cfg.t_embed_dim)
            self.text_proj = nn.Linear(cfg.d_text, cfg.d_model)
            self.blocks = nn.ModuleList([DitBlock(cfg)
                                         for _ in range(cfg.depth)])
            self.final_adaLN = nn.Sequential(
                nn.SiLU(), nn.Linear(cfg.t_embed_dim, 2 * cfg.d_model))
            self.head = nn.Linear(cfg.d_model, cfg.channels * vol)
            for layer in (self.final_adaLN[-1], self.head):
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)

    def patch_weights(self, rate=BASE_RATE):
        base = PatchWeights(BASE_RATE, self.patch_kernel, self.patch_bias)
        return interpolate_patch_weights(base, rate)

    def weights_by_rate(self, rates):
        return {r: self.patch_weights(r) for r in rates}

    def channel_branch(self):
        """Channel-branch patch embedding (block projections excluded)"""
        return ChannelBranchConfig(
            channels=self.cfg.channel_dim,
            patch_weights=PatchWeights(CHANNEL_RATE, self.channel_kernel,
                                       self.channel_bias))

    def compress_context(self, history, sched, seed=0, assignment=None,
                         channel=True):
        """Compress a history latent into a `CompressedContext`

        Parameters
        ----------
        history : VideoLatent
        sched : LadderSchedule
        seed : int
            Temporal-sampling seed.
        assignment : list of (int, PatchRate), optional
            ``(age, rate)`` pairs replacing the ladder.
        channel : bool
            Run the channel branch over the retained frames.
        """
        if assignment is None:
            assignment = assign_ladder_buckets(history.f, sched, seed)
        weights = self.weights_by_rate({r for _, r in assignment})
        spatial = compress_history_spatial(history, sched, weights, seed,
                                           assignment)
        ages = [age for age, _ in assignment]

        if channel:
            z_linear = compress_history_channel(history,
                                                self.channel_branch(), ages)
        else:
            z_linear = spatial.tokens.new_zeros(
                tuple(spatial.tokens.shape[:-2]) + (0, self.cfg.channel_dim))
        errcheck(spatial, 'emptyctx')
        return CompressedContext(spatial, z_linear, ages)

    def _text_tokens(self, text, batch_shape):
        if text is None:
            return None
        emb = text.combined if isinstance(text, TextEmbedding) else text
        if emb.shape[-2] == 0:
            return None
        return _expand_to(self.text_proj(emb.to(self.patch_kernel.dtype)),
                          batch_shape)

    def forward(self, noisy, t, text=None, ctx=None, fuse=True):
        """Predict the velocity of a noisy chunk

        Parameters
        ----------
        noisy : VideoLatent or torch.Tensor
            ``... x C x f x h x w`` noisy chunk.
        t : float or torch.Tensor
            Noise level in [0, 1], scalar or one per leading index.
        text : TextEmbedding or torch.Tensor, optional
        ctx : CompressedContext, optional
        fuse : bool
            Run the channel-branch fusion in every block.

        Returns
        -------
        torch.Tensor
            Velocity, shaped like the noisy chunk.

        Raises
        ------
        DiffusionError
            If ``t`` leaves [0, 1].
        ShapeError
            If the chunk or the context do not fit the model.
        """
        x = noisy.data if isinstance(noisy, VideoLatent) else noisy
        if x.dim() < 4 or x.shape[-4] != self.cfg.channels:
            raise ShapeError("Expected a %d-channel latent, got %s"
                             % (self.cfg.channels, tuple(x.shape)))
        t = torch.as_tensor(t, dtype=x.dtype)
        if bool(((t < 0) | (t > 1)).any()):
            raise DiffusionError("Timestep must lie in [0, 1], got %s"
                                 % t.tolist())
        batch_shape = tuple(x.shape[:-4])

        pred = patchify(x, BASE_RATE, self.patch_weights())
        seq = pred
        z_linear = None
        if ctx is not None:
            hist = ctx.spatial_tokens
            if hist.tokens.shape[-1] != self.cfg.d_model:
                raise ShapeError("Context tokens have width %d, model %d"
                                 % (hist.tokens.shape[-1], self.cfg.d_model))
            hist = hist.with_tokens(_expand_to(hist.tokens.to(x.dtype),
                                               batch_shape))
            seq = TokenSequence.concat([hist, pred])
            z_linear = ctx.channel_tokens.to(x.dtype)

        text_tokens = self._text_tokens(text, batch_shape)
        t_embed = self.t_embedder(t)
        for block in self.blocks:
            seq = block(seq, text_tokens, z_linear, t_embed, fuse=fuse)

        out = seq.tokens[..., -len(pred):, :]
        shift, scale = rearrange(self.final_adaLN(t_embed),
                                 '... (two d) -> two ... d', two=2)
        out = self.head(modulate(rms_norm(out), shift.unsqueeze(-2),
                                 scale.unsqueeze(-2)))
        return fold_patches(out, BASE_RATE, tuple(x.shape[-4:]))


def model_forward(model, noisy, t, text=None, ctx=None, fuse=True):
    return model(noisy, t, text, ctx, fuse=fuse)


def dit_block_forward(tokens, text_emb, z_linear, t_embed, block,
                      positions=None, fuse=True):
    return block(tokens, text_emb, z_linear, t_embed, positions, fuse)


def save_checkpoint(model, out_dir):
    """Write ``config.json`` and one YTF file per parameter to ``out_dir``"""
    os.makedirs(out_dir, exist_ok=True)
    with io.open(os.path.join(out_dir, CONFIG_FILENAME), 'w',
                 encoding='utf-8') as f:
        json.dump(model.cfg.to_dict(), f, indent=2, sort_keys=True)
    for name, value in model.state_dict().items():
        write_ytf(os.path.join(out_dir, name + '.ytf'), value)
    logger.info("saved checkpoint with %d tensors to %s",
                len(model.state_dict()), out_dir)


def load_checkpoint(in_dir):
    """Rebuild a `DitModel` written by `save_checkpoint`

    Raises
    ------
    CheckpointError
        If the config is missing or invalid, or a tensor is missing or has
        the wrong shape.
    """
    config_fp = os.path.join(in_dir, CONFIG_FILENAME)
    try:
        with io.open(config_fp, encoding='utf-8') as f:
            cfg = DitConfig.from_dict(json.load(f))
    except (OSError, ValueError) as e:
        raise CheckpointError("Cannot read %s: %s" % (config_fp, e))

    model = DitModel(cfg)
    state = {}
    for name, value in model.state_dict().items():
        fp = os.path.join(in_dir, name + '.ytf')
        if not os.path.exists(fp):
            raise CheckpointError("Checkpoint is missing tensor %r" % name)
        tensor = read_ytf(fp)
        if tensor.shape != value.shape:
            raise CheckpointError("Tensor %r has shape %s, config implies %s"
                                  % (name, tuple(tensor.shape),
                                     tuple(value.shape)))
        state[name] = tensor
    model.load_state_dict(state)
    return model
