#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Rectified-flow training and score-difference distillation

Conventions: ``x_t = (1 - t) x0 + t noise`` with velocity target
``noise - x0``, so ``alpha_t = 1 - t`` and ``sigma_t = t``. Sampling integrates
the velocity from ``t = 1`` down to ``t = 0`` with Euler steps.

The distillation path keeps three copies of a pretrained model: the few-step
generator, a fake model that keeps fitting the generator's samples and the
frozen real model. The generator is pushed along ``s_fake - s_real``, the
difference of the two score estimates at a re-noised generator sample.
"""

import copy
import time
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
import torch
from torch import nn
from tqdm import tqdm

from latentstream.exception import ConfigError, DiffusionError
from latentstream.latent import VideoLatent
from latentstream.model import (ActionEmbeddingCache, TextEmbedding,
                                build_text_embedding, mask_fuse)
from latentstream.tscm import LadderSchedule
from latentstream.util import derive_seed

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['step', 'task_tag', 'loss', 'grad_norm', 'wall_ms']
T2V = 'T2V'
I2V = 'I2V'


@dataclass(frozen=True)
class DiffusionSchedule:
    """Decreasing noise levels visited by a sampler

    ``steps`` holds values in (0, 1]; sampling ends at ``t = 0``.
    """
    steps: tuple = (1.0, 0.75, 0.5, 0.25)

    def __post_init__(self):
        steps = tuple(float(t) for t in self.steps)
        if not steps:
            raise DiffusionError("A schedule needs at least one step")
        if any(not 0 < t <= 1 for t in steps):
            raise DiffusionError("Schedule steps must lie in (0, 1]")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise DiffusionError("Schedule steps must strictly decrease")
        object.__setattr__(self, 'steps', steps)

    def __len__(self):
        return len(self.steps)

    @classmethod
    def uniform(cls, n, shift=1.0):
        """``n`` evenly spaced levels from 1, warped by ``s t / (1 + (s-1) t)``

        Examples
        --------
        >>> DiffusionSchedule.uniform(4).steps
        (1.0, 0.75, 0.5, 0.25)
        """
        if n < 1:
            raise DiffusionError("n must be at least 1")
        if shift <= 0:
            raise DiffusionError("shift must be positive")
        t = np.linspace(1.0, 0.0, n + 1)[:-1]
        t = shift * t / (1 + (shift - 1) * t)
        return cls(tuple(float(v) for v in t))

    def transitions(self):
        """``(t, t_next)`` pairs ending at 0"""
        return list(zip(self.steps, self.steps[1:] + (0.0,)))

    @staticmethod
    def alpha(t):
        return 1 - t

    @staticmethod
    def sigma(t):
        return t


RECTIFIED_FLOW = DiffusionSchedule()


def _t_like(t, x):
    """Broadcast a scalar or per-sample ``t`` against ``x``"""
    t = torch.as_tensor(t, dtype=x.dtype)
    if t.dim() == 0:
        return t
    return t.reshape(tuple(t.shape) + (1,) * (x.dim() - t.dim()))


def _check_t(t):
    t = torch.as_tensor(t)
    if bool(((t < 0) | (t > 1)).any()):
        raise DiffusionError("t must lie in [0, 1], got %s" % t.tolist())


def rf_interpolate(x0, noise, t):
    """``(1 - t) x0 + t noise``

    Raises
    ------
    DiffusionError
        If ``t`` leaves [0, 1].
    """
    _check_t(t)
    if x0.shape != noise.shape:
        raise DiffusionError("x0 and noise differ in shape")
    t = _t_like(t, x0)
    return (1 - t) * x0 + t * noise


def uniform_t_sampler(batch, generator=None):
    """Noise levels uniform on (0, 1]"""
    return 1 - torch.rand(batch, generator=generator, dtype=torch.float64)


def logit_normal_t_sampler(batch, generator=None, mean=0.0, std=1.0):
    """Noise levels ``sigmoid(N(mean, std))``, concentrated around 0.5"""
    return torch.sigmoid(mean + std * torch.randn(batch, generator=generator,
                                                  dtype=torch.float64))


T_SAMPLERS = {'uniform': uniform_t_sampler,
              'logit_normal': logit_normal_t_sampler}


def _call(model, x, t, text, ctx):
    if isinstance(text, TextEmbedding):
        text = text.combined
    return model(x, t, text, ctx)


def _named_grads(model, loss):
    if not isinstance(model, nn.Module):
        return {}
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    if not named or not loss.requires_grad:
        return {n: torch.zeros_like(p) for n, p in named}
    grads = torch.autograd.grad(loss, [p for _, p in named],
                                allow_unused=True)
    return {n: torch.zeros_like(p) if g is None else g
            for (n, p), g in zip(named, grads)}


def rf_loss(model, x0, text=None, ctx=None, t_sampler=uniform_t_sampler,
            seed=0, condition=None):
    """Rectified-flow loss and its parameter gradients

    Parameters
    ----------
    model : callable
        ``model(x_t, t, text, ctx)`` returning a velocity; an ``nn.Module``
        gets its gradients computed.
    x0 : torch.Tensor
        ``B x C x f x h x w`` clean batch.
    text : TextEmbedding or torch.Tensor, optional
    ctx : CompressedContext, optional
    t_sampler : callable
        ``t_sampler(batch, generator)``.
    seed : int
        Seeds the noise levels and the noise.
    condition : VideoLatent, optional
        Image-to-video condition: masked entries of ``x_t`` are replaced by
        the condition and dropped from the loss.

    Returns
    -------
    tuple
        ``(loss, grads)``: the detached per-sample squared error summed over
        entries and averaged over the batch, and a dict of gradients keyed by
        parameter name.
    """
    gen = torch.Generator().manual_seed(int(seed))
    t = t_sampler(x0.shape[0], gen).to(x0.dtype)
    noise = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    noise = noise.to(x0.dtype)
    x_t = rf_interpolate(x0, noise, t)

    weight = None
    if condition is not None:
        fused = mask_fuse(x_t, condition.data.expand_as(x_t), condition.mask)
        x_t, weight = fused.data, 1 - fused.mask

    err = (_call(model, x_t, t, text, ctx) - (noise - x0)).pow(2)
    if weight is not None:
        err = err * weight
    loss = err.flatten(1).sum(dim=1).mean()
    return loss.detach(), _named_grads(model, loss)


def forward_diffuse(x, t, noise, sched=RECTIFIED_FLOW):
    """``alpha_t x + sigma_t noise``"""
    _check_t(t)
    t = _t_like(t, x)
    return sched.alpha(t) * x + sched.sigma(t) * noise


def score_from_pred(z_t, x0_hat, t, sched=RECTIFIED_FLOW):
    """Score ``-(z_t - alpha_t x0_hat) / sigma_t**2`` of an x0 prediction

    Raises
    ------
    DiffusionError
        If ``sigma_t`` is 0.
    """
    t = _t_like(t, z_t)
    sigma = sched.sigma(t)
    if bool((torch.as_tensor(sigma) == 0).any()):
        raise DiffusionError("The score is undefined at sigma_t = 0")
    return -(z_t - sched.alpha(t) * x0_hat) / sigma ** 2


def x0_from_velocity(x_t, v, t):
    return x_t - _t_like(t, x_t) * v


def predict_x0(model, z_t, t, text=None, ctx=None):
    return x0_from_velocity(z_t, _call(model, z_t, t, text, ctx), t)


@dataclass(eq=False)
class ModelTriplet:
    """Generator, fake model and frozen real model"""
    generator: nn.Module
    fake_model: nn.Module
    real_model: nn.Module

    def __post_init__(self):
        cfgs = {repr(getattr(m, 'cfg', None))
                for m in (self.generator, self.fake_model, self.real_model)}
        if len(cfgs) != 1:
            raise ConfigError("Triplet models must share one config")
        self.real_model.requires_grad_(False)

    @classmethod
    def from_foundation(cls, model):
        """Three independent copies of a pretrained model"""
        return cls(copy.deepcopy(model), copy.deepcopy(model),
                   copy.deepcopy(model))


def dmd_generator_grad(generated, t_sampler, triplet, text=None, ctx=None,
                       seed=0, sched=RECTIFIED_FLOW, normalize=False):
    """Generator gradients of the distribution-matching objective

    ``generated`` is re-noised to a sampled level, both score models are
    evaluated there without gradient, and ``s_fake - s_real`` is pushed back
    through ``generated`` into the generator parameters.

    Parameters
    ----------
    generated : torch.Tensor
        Generator samples still attached to the generator graph.
    t_sampler : callable
    triplet : ModelTriplet
    text, ctx : optional
        Conditioning shared by both score models.
    seed : int
    sched : DiffusionSchedule
    normalize : bool
        Replace the score difference by ``(x0_fake - x0_real)`` divided per
        sample by the mean absolute gap between ``generated`` and
        ``x0_real``.

    Returns
    -------
    tuple
        ``(surrogate_loss, grads)``; grads keyed by generator parameter name.
    """
    gen = torch.Generator().manual_seed(int(seed))
    t = t_sampler(generated.shape[0], gen).to(generated.dtype)
    noise = torch.randn(generated.shape, generator=gen,
                        dtype=torch.float64).to(generated.dtype)

    with torch.no_grad():
        x = generated.detach()
        z_t = forward_diffuse(x, t, noise, sched)
        x0_real = predict_x0(triplet.real_model, z_t, t, text, ctx)
        x0_fake = predict_x0(triplet.fake_model, z_t, t, text, ctx)
        if normalize:
            scale = (x - x0_real).abs().flatten(1).mean(dim=1)
            scale = _t_like(scale.clamp_min(1e-8), x)
            direction = (x0_fake - x0_real) / scale
        else:
            direction = (score_from_pred(z_t, x0_fake, t, sched) -
                         score_from_pred(z_t, x0_real, t, sched))
        target = x - direction

    loss = 0.5 * (generated - target).pow(2).flatten(1).sum(dim=1).mean()
    return loss.detach(), _named_grads(triplet.generator, loss)


def _total_norm(tensors):
    return torch.linalg.vector_norm(
        torch.stack([torch.linalg.vector_norm(g) for g in tensors]))


def apply_grads(model, grads, optimizer=None, max_norm=None):
    """Install ``grads`` as ``.grad`` and optionally step ``optimizer``

    Returns
    -------
    float
        Total gradient norm before clipping.
    """
    params = []
    for name, p in model.named_parameters():
        if name in grads:
            p.grad = grads[name].detach().clone()
            params.append(p)
    if not params:
        return 0.0
    if max_norm is None:
        norm = _total_norm([p.grad for p in params])
    else:
        norm = nn.utils.clip_grad_norm_(params, max_norm)
    if optimizer is not None:
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
    return float(norm)


def fake_model_update(triplet, generated, optimizer=None, text=None,
                      ctx=None, t_sampler=uniform_t_sampler, seed=0,
                      max_norm=None):
    """One denoising step of the fake model on generator samples

    Returns
    -------
    tuple
        ``(loss, grads)`` computed before the optimizer step.
    """
    loss, grads = rf_loss(triplet.fake_model, generated.detach(), text, ctx,
                          t_sampler, seed)
    apply_grads(triplet.fake_model, grads, optimizer, max_norm)
    return loss, grads


def euler_sample(model, noise, sched, text=None, ctx=None, truncate=False,
                 condition=None):
    """Integrate the velocity from ``t = 1`` to 0

    Parameters
    ----------
    model : callable
    noise : torch.Tensor
    sched : DiffusionSchedule
    text, ctx : optional
    truncate : bool
        Only the last step records gradients.
    condition : VideoLatent, optional
        Masked entries are held at the condition after every step.
    """
    x = noise
    transitions = sched.transitions()
    grad_enabled = torch.is_grad_enabled()
    for i, (t, t_next) in enumerate(transitions):
        last = i == len(transitions) - 1
        with torch.set_grad_enabled(grad_enabled and (last or not truncate)):
            if condition is not None:
                x = mask_fuse(x, condition.data.expand_as(x),
                              condition.mask).data
            v = _call(model, x, t, text, ctx)
            x = x + (t_next - t) * v
    if condition is not None:
        x = mask_fuse(x, condition.data.expand_as(x), condition.mask).data
    return x


@dataclass(eq=False)
class RolloutTrace:
    """Chunks generated by a rollout and the contexts they saw

    ``barriers[i]`` is True when the history context ``i`` was built from
    did not require gradients, so nothing flows back into earlier chunks.
    """
    chunks: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    barriers: list = field(default_factory=list)

    def __len__(self):
        return len(self.chunks)


def self_forcing_rollout(generator, init_chunk=None, actions=(), n_chunks=1,
                         few_steps=4, seed=0, ladder=None, event='',
                         cache=None, truncate=True, barrier=True):
    """Generate chunks conditioned on the generator's own history

    Parameters
    ----------
    generator : DitModel
    init_chunk : VideoLatent, optional
        First history frames; without one the first chunk has no context.
    actions : sequence of (HumanToken, CameraToken)
        One pair per chunk, the last pair repeating.
    n_chunks : int
    few_steps : int
    seed : int
    ladder : LadderSchedule, optional
    event : str
    cache : ActionEmbeddingCache, optional
    truncate : bool
        Back-propagate through the last denoising step of each chunk only.
    barrier : bool
        Detach generated chunks before they become history. Without the
        barrier, gradients of later chunks reach earlier ones through their
        contexts.

    Returns
    -------
    RolloutTrace
    """
    if n_chunks < 1:
        raise ValueError("n_chunks must be at least 1")
    cfg = generator.cfg
    ladder = LadderSchedule() if ladder is None else ladder
    cache = ActionEmbeddingCache(cfg.d_text, cfg.action_length) \
        if cache is None else cache
    sched = DiffusionSchedule.uniform(few_steps)
    event_part = build_text_embedding(event, [], cache,
                                      cfg.event_length).event_part
    actions = list(actions)

    history = None if init_chunk is None else init_chunk.detach()
    trace = RolloutTrace()
    for i in range(n_chunks):
        ctx = None
        if history is not None:
            if barrier:
                history = history.detach()
            ctx = generator.compress_context(history, ladder,
                                             seed=derive_seed(seed, 'ctx', i))
        step_actions = [actions[min(i, len(actions) - 1)]] if actions else []
        text = build_text_embedding(event, step_actions, cache,
                                    event_part=event_part)

        gen = torch.Generator().manual_seed(derive_seed(seed, 'chunk', i))
        noise = torch.randn(cfg.chunk_shape, generator=gen,
                            dtype=torch.float64)
        noise = noise.to(generator.patch_kernel.dtype)
        chunk = euler_sample(generator, noise, sched, text, ctx, truncate)

        trace.chunks.append(chunk)
        trace.contexts.append(ctx)
        trace.barriers.append(history is None or
                              not history.data.requires_grad)
        latent = VideoLatent(chunk.detach() if barrier else chunk)
        history = latent if history is None else \
            VideoLatent.concat([history, latent])
    return trace


def alternating_schedule(step):
    """Task of a training step: text-to-video on even, image-to-video on odd

    Examples
    --------
    >>> [alternating_schedule(s) for s in range(4)]
    ['T2V', 'I2V', 'T2V', 'I2V']
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    return T2V if step % 2 == 0 else I2V


def first_frame_condition(x0):
    """Image-to-video condition that preserves the first frame of ``x0``"""
    mask = torch.zeros(tuple(x0.shape[:-4]) + (1,) + tuple(x0.shape[-3:]),
                       dtype=x0.dtype)
    mask[..., 0, :, :] = 1
    return VideoLatent(x0 * mask, mask)


def make_memorization_dataset(n, shape, seed=0):
    """``n`` samples of ``shape = (C, f, h, w)``, constant over each frame of
    each channel"""
    c, f, h, w = shape
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, c, f, 1, 1)).astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(
        np.broadcast_to(values, (n, c, f, h, w))))


def make_two_mode_dataset(n, shape, seed=0, spread=0.1):
    """``n`` samples split between two constant modes at -1 and +1"""
    rng = np.random.default_rng(seed)
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = signs.reshape((n,) + (1,) * len(shape)) + \
        spread * rng.standard_normal((n,) + tuple(shape))
    return torch.from_numpy(x.astype(np.float32))


def sample_mmd(x, y):
    """Squared maximum mean discrepancy under a Gaussian kernel

    The bandwidth is the median pairwise distance of the pooled samples.
    """
    x = x.detach().flatten(1).to(torch.float64)
    y = y.detach().flatten(1).to(torch.float64)
    pooled = torch.cat([x, y])
    d2 = torch.cdist(pooled, pooled).pow(2)
    off = d2[~torch.eye(len(pooled), dtype=torch.bool)]
    bandwidth2 = off.median().clamp_min(1e-12)
    k = torch.exp(-d2 / (2 * bandwidth2))
    n = len(x)
    kxx, kyy, kxy = k[:n, :n], k[n:, n:], k[:n, n:]
    return float((kxx.mean() + kyy.mean() - 2 * kxy.mean()).clamp_min(0))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    lr: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    t_sampler: str = 'logit_normal'
    alternate: bool = True
    max_grad_norm: float = 10.0

    def __post_init__(self):
        if self.t_sampler not in T_SAMPLERS:
            raise ConfigError("Unknown t_sampler %r" % self.t_sampler)
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps, batch_size and lr must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return _from_dict(cls, doc, 'training')


@dataclass(frozen=True)
class DistillConfig:
    iterations: int = 100
    fake_updates_per_generator: int = 5
    teacher_steps: int = 20
    generator_steps: int = 4
    lr: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    normalize: bool = True
    max_grad_norm: float = 10.0

    def __post_init__(self):
        if self.fake_updates_per_generator < 0:
            raise ConfigError("fake_updates_per_generator must be >= 0")
        if min(self.teacher_steps, self.generator_steps, self.batch_size) < 1:
            raise ConfigError("Step counts and batch_size must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return _from_dict(cls, doc, 'distill')


def _from_dict(cls, doc, section):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError("Unknown %s keys: %s"
                          % (section, ', '.join(sorted(unknown))))
    return cls(**doc)


def train_toy(model, data, cfg=None, text=None, progress=False):
    """Fit ``model`` to ``data`` with the rectified-flow loss

    Parameters
    ----------
    model : DitModel
    data : torch.Tensor
        ``n x C x f x h x w`` training set, sampled in batches.
    cfg : TrainConfig
    text : TextEmbedding, optional
    progress : bool
        Show a tqdm bar.

    Returns
    -------
    list of dict
        One log row per step (`LOG_COLUMNS`).
    """
    cfg = TrainConfig() if cfg is None else cfg
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sampler = T_SAMPLERS[cfg.t_sampler]
    rng = np.random.default_rng(cfg.seed)
    data = data.to(model.patch_kernel.dtype)

    rows = []
    for step in tqdm(range(cfg.steps), desc='train', disable=not progress):
        start = time.perf_counter()
        if len(data) > cfg.batch_size:
            idx = torch.from_numpy(rng.choice(len(data), cfg.batch_size,
                                              replace=False))
            batch = data.index_select(0, idx)
        else:
            batch = data
        tag = alternating_schedule(step) if cfg.alternate else T2V
        condition = first_frame_condition(batch) if tag == I2V else None

        loss, grads = rf_loss(model, batch, text, None, sampler,
                              derive_seed(cfg.seed, 'train', step), condition)
        norm = apply_grads(model, grads, optimizer, cfg.max_grad_norm)
        rows.append({'step': step, 'task_tag': tag, 'loss': float(loss),
                     'grad_norm': norm,
                     'wall_ms': (time.perf_counter() - start) * 1000})
        logger.debug("step %d %s loss %.5f", step, tag, float(loss))
    return rows


def distill_toy(teacher, cfg=None, text=None, progress=False):
    """Distill ``teacher`` into a few-step generator

    Every ``fake_updates_per_generator + 1`` iterations end with one
    generator update; the others update the fake model on fresh generator
    samples.

    Returns
    -------
    tuple
        ``(ModelTriplet, list of log rows)``
    """
    cfg = DistillConfig() if cfg is None else cfg
    triplet = ModelTriplet.from_foundation(teacher)
    gen_opt = torch.optim.Adam(triplet.generator.parameters(), lr=cfg.lr)
    fake_opt = torch.optim.Adam(triplet.fake_model.parameters(), lr=cfg.lr)
    sched = DiffusionSchedule.uniform(cfg.generator_steps)
    shape = (cfg.batch_size,) + teacher.cfg.chunk_shape
    dtype = teacher.patch_kernel.dtype
    period = cfg.fake_updates_per_generator + 1

    rows = []
    for it in tqdm(range(cfg.iterations), desc='distill',
                   disable=not progress):
        start = time.perf_counter()
        seed = derive_seed(cfg.seed, 'distill', it)
        gen = torch.Generator().manual_seed(seed)
        noise = torch.randn(shape, generator=gen,
                            dtype=torch.float64).to(dtype)

        if it % period == period - 1:
            tag = 'generator'
            generated = euler_sample(triplet.generator, noise, sched, text,
                                     truncate=True)
            loss, grads = dmd_generator_grad(generated, uniform_t_sampler,
                                             triplet, text, seed=seed,
                                             normalize=cfg.normalize)
            norm = apply_grads(triplet.generator, grads, gen_opt,
                               cfg.max_grad_norm)
        else:
            tag = 'fake'
            with torch.no_grad():
                generated = euler_sample(triplet.generator, noise, sched,
                                         text)
            loss, grads = fake_model_update(triplet, generated, fake_opt,
                                            text, seed=seed,
                                            max_norm=cfg.max_grad_norm)
            norm = float(_total_norm(grads.values())) if grads else 0.0
        rows.append({'step': it, 'task_tag': tag, 'loss': float(loss),
                     'grad_norm': norm,
                     'wall_ms': (time.perf_counter() - start) * 1000})
    return triplet, rows


def sample_teacher(teacher, n, steps=20, seed=0, text=None):
    """``n`` chunks from ``teacher`` with a ``steps``-step Euler sampler"""
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn((n,) + teacher.cfg.chunk_shape, generator=gen,
                        dtype=torch.float64).to(teacher.patch_kernel.dtype)
    with torch.no_grad():
        return euler_sample(teacher, noise, DiffusionSchedule.uniform(steps),
                            text)


def write_log_csv(rows, fp):
    pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(fp, index=False)
