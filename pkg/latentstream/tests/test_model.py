#!/usr/bin/env python

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

import os
import json
import threading
from tempfile import TemporaryDirectory
from unittest import TestCase, main

import numpy as np
import numpy.testing as npt
import torch

from latentstream.actions import HumanToken, CameraToken
from latentstream.exception import (ConfigError, CheckpointError,
                                    DiffusionError, MaskError, ShapeError)
from latentstream.latent import VideoLatent
from latentstream.model import (DitConfig, DitModel, DitBlock, TscmFusion,
                                ActionEmbeddingCache, TextEmbedding,
                                embed_text_toy, build_text_embedding,
                                mask_fuse, timestep_embedding, modulate,
                                model_forward, dit_block_forward,
                                save_checkpoint, load_checkpoint)
from latentstream.patchify import (BASE_RATE, PatchRate, TokenSequence,
                                   patchify)
from latentstream.tscm import LadderSchedule


TINY = DitConfig(channels=2, chunk_frames=2, height=4, width=4, d_model=16,
                 n_heads=2, depth=2, d_text=8, t_embed_dim=8, channel_dim=16,
                 channel_heads=2, event_length=4, action_length=2)


def randomize(model, seed=0, scale=0.1):
    """Perturb every parameter so that zero-initialized layers take part"""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen,
                                       dtype=torch.float64).to(p.dtype))
    return model


class DitConfigTests(TestCase):
    def test_defaults(self):
        cfg = DitConfig()
        self.assertEqual(cfg.chunk_shape, (8, 4, 16, 16))
        self.assertEqual(cfg.channel_dim, 96)
        self.assertFalse(cfg.numerator_pre_rope)

    def test_dict_round_trip(self):
        self.assertEqual(DitConfig.from_dict(TINY.to_dict()), TINY)

    def test_invalid(self):
        for kwargs in ({'channels': 0}, {'depth': -1}, {'d_model': 10},
                       {'channel_dim': 10}, {'d_model': 12, 'n_heads': 4},
                       {'t_embed_dim': 7}, {'eps_denom': 0},
                       {'chunk_frames': 1.5}):
            with self.assertRaises(ConfigError):
                DitConfig(**kwargs)
        with self.assertRaises(ConfigError):
            DitConfig.from_dict({'widht': 3})

    def test_zero_depth_allowed(self):
        self.assertEqual(DitConfig(depth=0).depth, 0)


class TextEmbeddingTests(TestCase):
    def test_toy_embedding(self):
        emb = embed_text_toy('walk into the forest', 6, 8)
        self.assertEqual(tuple(emb.shape), (8, 6))
        self.assertEqual(emb.dtype, torch.float32)
        self.assertGreater(float(emb[3].abs().sum()), 0.)
        npt.assert_equal(emb[4:].numpy(), np.zeros((4, 6)))
        npt.assert_equal(emb.numpy(),
                         embed_text_toy('walk into the forest', 6, 8).numpy())

    def test_truncated(self):
        emb = embed_text_toy('a b c d e', 3, 2)
        self.assertEqual(tuple(emb.shape), (2, 3))

    def test_text_sensitive(self):
        a = embed_text_toy('rain falls', 4, 2)
        b = embed_text_toy('rain stops', 4, 2)
        self.assertGreater(float((a[0] - b[0]).abs().max()), 0.)

    def test_cache_counts(self):
        cache = ActionEmbeddingCache(4, 2)
        first = cache.lookup(HumanToken.FORWARD, CameraToken.RIGHT)
        again = cache.lookup(HumanToken.FORWARD, CameraToken.RIGHT)
        self.assertIs(first, again)
        self.assertEqual((cache.hits, cache.misses), (1, 1))
        self.assertEqual(len(cache), 1)
        self.assertIn('Camera moves forward (W). Camera turns right (→).',
                      cache)

    def test_prewarm(self):
        cache = ActionEmbeddingCache(4, 2)
        self.assertEqual(cache.prewarm(), 72)
        cache.lookup(HumanToken.BACKWARD, CameraToken.STILL)
        self.assertEqual(cache.misses, 72)
        self.assertEqual(cache.hits, 1)

    def test_cache_threads(self):
        cache = ActionEmbeddingCache(4, 2)

        def work():
            for _ in range(20):
                cache.lookup(HumanToken.LEFT, CameraToken.UP)

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(cache.misses, 1)
        self.assertEqual(cache.hits, 79)

    def test_build(self):
        cache = ActionEmbeddingCache(8, 2)
        text = build_text_embedding(
            'a storm', [(HumanToken.FORWARD, CameraToken.LEFT),
                        (HumanToken.RIGHT, CameraToken.STILL)], cache, 4)
        self.assertEqual(tuple(text.event_part.shape), (4, 8))
        self.assertEqual(tuple(text.action_part.shape), (4, 8))
        self.assertEqual(tuple(text.combined.shape), (8, 8))

        empty = build_text_embedding('a storm', [], cache, 4,
                                     event_part=text.event_part)
        self.assertIs(empty.event_part, text.event_part)
        self.assertEqual(tuple(empty.combined.shape), (4, 8))
        self.assertEqual(tuple(text.with_actions(
            torch.zeros(1, 8)).combined.shape), (5, 8))

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            TextEmbedding(torch.zeros(2, 3), torch.zeros(1, 4))


class MaskFuseTests(TestCase):
    def test_select(self):
        z = torch.zeros(2, 3, 2, 2)
        z_c = torch.ones(2, 3, 2, 2)
        mask = torch.zeros(1, 3, 2, 2)
        mask[:, 0] = 1
        fused = mask_fuse(z, z_c, mask)
        npt.assert_equal(fused.data[:, 0].numpy(), np.ones((2, 2, 2)))
        npt.assert_equal(fused.data[:, 1:].numpy(), np.zeros((2, 2, 2, 2)))
        npt.assert_equal(fused.mask.numpy(), mask.numpy())

    def test_matches_formula(self):
        gen = torch.Generator().manual_seed(0)
        z = torch.randn(3, 2, 2, 3, 3, generator=gen)
        z_c = torch.randn(3, 2, 2, 3, 3, generator=gen)
        mask = (torch.rand(1, 2, 3, 3, generator=gen) > 0.5).float()
        fused = mask_fuse(VideoLatent(z), z_c, mask)
        npt.assert_allclose(fused.data.numpy(),
                            (mask * z_c + (1 - mask) * z).numpy())
        self.assertEqual(tuple(fused.mask.shape), (3, 1, 2, 3, 3))

    def test_errors(self):
        with self.assertRaises(ShapeError):
            mask_fuse(torch.zeros(2, 1, 2, 2), torch.zeros(2, 2, 2, 2),
                      torch.zeros(1, 1, 2, 2))
        with self.assertRaises(MaskError):
            mask_fuse(torch.zeros(2, 1, 2, 2), torch.zeros(2, 1, 2, 2),
                      torch.full((1, 1, 2, 2), 0.3))


class TimestepTests(TestCase):
    def test_embedding(self):
        emb = timestep_embedding(torch.tensor([0., 0.5]), 8)
        self.assertEqual(tuple(emb.shape), (2, 8))
        npt.assert_allclose(emb[0].numpy(), [1.] * 4 + [0.] * 4)
        npt.assert_allclose(emb[1, 0].item(), np.cos(500.), rtol=1e-5)

    def test_modulate(self):
        x = torch.ones(2)
        npt.assert_equal(modulate(x, torch.tensor(1.), torch.tensor(2.))
                         .numpy(), [4., 4.])


class DitModelTests(TestCase):
    def test_zero_init_output(self):
        model = DitModel(TINY)
        noisy = torch.randn(TINY.chunk_shape)
        out = model(noisy, 0.5)
        self.assertEqual(tuple(out.shape), TINY.chunk_shape)
        npt.assert_equal(out.detach().numpy(), np.zeros(TINY.chunk_shape))

    def test_seeded_init(self):
        a, b, c = DitModel(TINY, 3), DitModel(TINY, 3), DitModel(TINY, 4)
        state = torch.get_rng_state()
        DitModel(TINY, 5)
        self.assertTrue(torch.equal(state, torch.get_rng_state()))
        for (name, pa), pb in zip(a.named_parameters(), b.parameters()):
            npt.assert_equal(pa.detach().numpy(), pb.detach().numpy())
        self.assertFalse(torch.equal(a.patch_kernel, c.patch_kernel))

    def test_batched_matches_single(self):
        model = randomize(DitModel(TINY, 1), 1).double()
        gen = torch.Generator().manual_seed(2)
        x = torch.randn((3,) + TINY.chunk_shape, generator=gen,
                        dtype=torch.float64)
        t = torch.tensor([0.2, 0.5, 0.9], dtype=torch.float64)
        batched = model(x, t)
        for i in range(3):
            npt.assert_allclose(batched[i].detach().numpy(),
                                model(x[i], t[i]).detach().numpy(),
                                atol=1e-10)

    def test_context_changes_output(self):
        model = randomize(DitModel(TINY, 1), 1).double()
        gen = torch.Generator().manual_seed(3)
        history = VideoLatent(torch.randn(2, 5, 4, 4, generator=gen,
                                          dtype=torch.float64))
        ctx = model.compress_context(history, LadderSchedule())
        x = torch.randn(TINY.chunk_shape, generator=gen, dtype=torch.float64)
        with_ctx = model(x, 0.5, None, ctx)
        ctx2 = model.compress_context(
            VideoLatent(history.data + 1.), LadderSchedule())
        self.assertGreater(float((with_ctx - model(x, 0.5, None, ctx2))
                                 .abs().max()), 0.)
        self.assertGreater(float((with_ctx - model(x, 0.5)).abs().max()), 0.)

    def test_fuse_flag(self):
        model = randomize(DitModel(TINY, 1), 1).double()
        gen = torch.Generator().manual_seed(4)
        history = VideoLatent(torch.randn(2, 9, 4, 4, generator=gen,
                                          dtype=torch.float64))
        ctx = model.compress_context(history, LadderSchedule())
        x = torch.randn(TINY.chunk_shape, generator=gen, dtype=torch.float64)
        self.assertGreater(float((model_forward(model, x, 0.5, None, ctx) -
                                  model(x, 0.5, None, ctx, fuse=False))
                                 .abs().max()), 0.)

    def test_text_changes_output(self):
        model = randomize(DitModel(TINY, 1), 1).double()
        cache = ActionEmbeddingCache(TINY.d_text, TINY.action_length)
        x = torch.randn(TINY.chunk_shape, dtype=torch.float64)
        a = build_text_embedding(
            'sunny', [(HumanToken.FORWARD, CameraToken.STILL)], cache,
            TINY.event_length)
        b = build_text_embedding(
            'sunny', [(HumanToken.BACKWARD, CameraToken.STILL)], cache,
            TINY.event_length)
        self.assertGreater(float((model(x, 0.5, a) - model(x, 0.5, b))
                                 .abs().max()), 0.)

    def test_compress_context(self):
        cfg = DitConfig(channels=2, height=16, width=16, d_model=16,
                        n_heads=2, depth=1)
        model = DitModel(cfg)
        history = VideoLatent(torch.randn(2, 24, 16, 16))
        ctx = model.compress_context(history, LadderSchedule())
        self.assertEqual(ctx.n_tokens, 324)
        self.assertEqual(tuple(ctx.channel_tokens.shape), (48, 96))
        self.assertEqual(ctx.frame_ages_used, list(range(24, 0, -1)))

        spatial_only = model.compress_context(history, LadderSchedule(),
                                              channel=False)
        self.assertEqual(tuple(spatial_only.channel_tokens.shape), (0, 96))

    def test_patch_weights(self):
        model = DitModel(TINY)
        self.assertEqual(model.patch_weights().rate, BASE_RATE)
        w = model.patch_weights((1, 4, 4))
        self.assertEqual(w.rate, PatchRate(1, 4, 4))
        self.assertEqual(tuple(w.kernel.shape), (16, 2 * 16))
        self.assertEqual(set(model.weights_by_rate(
            [BASE_RATE, PatchRate(1, 8, 8)])), {BASE_RATE,
                                                 PatchRate(1, 8, 8)})

    def test_errors(self):
        model = DitModel(TINY)
        with self.assertRaises(DiffusionError):
            model(torch.zeros(TINY.chunk_shape), 1.5)
        with self.assertRaises(DiffusionError):
            model(torch.zeros((2,) + TINY.chunk_shape),
                  torch.tensor([0.5, -0.1]))
        with self.assertRaises(ShapeError):
            model(torch.zeros(3, 2, 4, 4), 0.5)
        other = DitModel(DitConfig(channels=2, chunk_frames=2, height=4,
                                   width=4, d_model=32, n_heads=2, depth=1))
        ctx = other.compress_context(VideoLatent(torch.zeros(2, 3, 4, 4)),
                                     LadderSchedule())
        with self.assertRaises(ShapeError):
            model(torch.zeros(TINY.chunk_shape), 0.5, None, ctx)

    def test_gradients_reach_history(self):
        model = randomize(DitModel(TINY, 1), 1).double()
        history = VideoLatent(torch.randn(2, 3, 4, 4, dtype=torch.float64,
                                          requires_grad=True))
        ctx = model.compress_context(history, LadderSchedule())
        model(torch.randn(TINY.chunk_shape, dtype=torch.float64), 0.5, None,
              ctx).sum().backward()
        self.assertGreater(float(history.data.grad.abs().sum()), 0.)


class DitBlockTests(TestCase):
    def test_block_keeps_meta(self):
        block = DitBlock(TINY)
        gen = torch.Generator().manual_seed(0)
        w = DitModel(TINY).patch_weights()
        hist = patchify(torch.randn(2, 1, 4, 4, generator=gen), BASE_RATE, w,
                        age=1)
        pred = patchify(torch.randn(2, 2, 4, 4, generator=gen), BASE_RATE, w)
        seq = TokenSequence.concat([hist, pred])
        out = dit_block_forward(seq, None, torch.zeros(0, 16),
                                torch.zeros(TINY.t_embed_dim), block)
        self.assertEqual(tuple(out.tokens.shape), tuple(seq.tokens.shape))
        npt.assert_equal(out.ages.numpy(), seq.ages.numpy())

    def test_fusion_starts_as_identity(self):
        fusion = TscmFusion(16, 12, 2)
        seq = TokenSequence(torch.randn(3, 16), torch.tensor([1, 0, 0]),
                            torch.ones(3, 3, dtype=torch.int64),
                            torch.zeros(3, 3, dtype=torch.int64))
        out = fusion(seq, torch.randn(4, 12))
        npt.assert_allclose(out.detach().numpy(), seq.tokens.numpy())


class CheckpointTests(TestCase):
    def test_round_trip(self):
        model = randomize(DitModel(TINY, 2), 2)
        x = torch.randn(TINY.chunk_shape)
        with TemporaryDirectory() as tmp:
            save_checkpoint(model, tmp)
            with open(os.path.join(tmp, 'config.json')) as f:
                self.assertEqual(json.load(f)['d_model'], 16)
            loaded = load_checkpoint(tmp)
        self.assertEqual(loaded.cfg, TINY)
        npt.assert_equal(loaded(x, 0.3).detach().numpy(),
                         model(x, 0.3).detach().numpy())

    def test_missing_tensor(self):
        with TemporaryDirectory() as tmp:
            save_checkpoint(DitModel(TINY), tmp)
            os.remove(os.path.join(tmp, 'head.weight.ytf'))
            with self.assertRaises(CheckpointError):
                load_checkpoint(tmp)

    def test_bad_config(self):
        with TemporaryDirectory() as tmp:
            with self.assertRaises(CheckpointError):
                load_checkpoint(tmp)
            with open(os.path.join(tmp, 'config.json'), 'w') as f:
                json.dump({'layers': 3}, f)
            with self.assertRaises(CheckpointError):
                load_checkpoint(tmp)

    def test_shape_mismatch(self):
        with TemporaryDirectory() as tmp:
            save_checkpoint(DitModel(TINY), tmp)
            cfg = TINY.to_dict()
            cfg['d_model'] = 32
            with open(os.path.join(tmp, 'config.json'), 'w') as f:
                json.dump(cfg, f)
            with self.assertRaises(CheckpointError):
                load_checkpoint(tmp)


if __name__ == '__main__':
    main()
