#!/usr/bin/env python

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

import math
from unittest import TestCase, main

import numpy as np
import numpy.testing as npt
import torch

from latentstream.attention import (AttentionParams, RopeConfig,
                                    standard_attention, linear_attention,
                                    rope_apply, split_heads, merge_heads,
                                    standard_attention_madds,
                                    linear_attention_madds, init_matrix,
                                    SoftmaxAttention, LinearAttention,
                                    linear_attention_block)
from latentstream.exception import ShapeError
from latentstream.tensor import count_madds


def kernel_matrix_oracle(q, k, v, eps):
    """Explicit N x N ReLU kernel, normalized per query"""
    kern = torch.relu(q) @ torch.relu(k).transpose(-1, -2)
    return (kern @ v) / (kern.sum(dim=-1, keepdim=True) + eps)


class LinearAttentionTests(TestCase):
    def test_matches_kernel_oracle(self):
        rng = np.random.default_rng(0)
        gen = torch.Generator().manual_seed(0)
        for _ in range(200):
            n = int(rng.integers(1, 33))
            d = int(rng.integers(1, 17))
            q, k, v = (torch.randn(n, d, generator=gen, dtype=torch.float64)
                       for _ in range(3))
            obs = linear_attention(q, k, v, 1e-6)
            exp = kernel_matrix_oracle(q, k, v, 1e-6)
            npt.assert_allclose(obs.numpy(), exp.numpy(), atol=1e-6)

    def test_batched_heads(self):
        gen = torch.Generator().manual_seed(1)
        q, k, v = (torch.randn(2, 3, 5, 4, generator=gen,
                               dtype=torch.float64) for _ in range(3))
        npt.assert_allclose(linear_attention(q, k, v).numpy(),
                            kernel_matrix_oracle(q, k, v, 1e-6).numpy(),
                            atol=1e-10)

    def test_all_negative_keys(self):
        q = torch.ones(3, 2, dtype=torch.float64)
        k = -torch.ones(3, 2, dtype=torch.float64)
        v = torch.ones(3, 2, dtype=torch.float64)
        npt.assert_equal(linear_attention(q, k, v).numpy(), np.zeros((3, 2)))

    def test_single_token_returns_value(self):
        q = torch.tensor([[1., 2.]], dtype=torch.float64)
        k = torch.tensor([[3., 1.]], dtype=torch.float64)
        v = torch.tensor([[0.5, -4.]], dtype=torch.float64)
        npt.assert_allclose(linear_attention(q, k, v, 1e-12).numpy(),
                            v.numpy(), rtol=1e-9)

    def test_separate_denominator(self):
        gen = torch.Generator().manual_seed(2)
        q, k, v = (torch.randn(6, 4, generator=gen, dtype=torch.float64)
                   for _ in range(3))
        q2, k2 = q.abs(), k.abs()
        obs = linear_attention(q, k, v, 1e-6, q_denom=q2, k_denom=k2)
        num = (torch.relu(q) @ torch.relu(k).T) @ v
        den = (q2 @ k2.T).sum(dim=-1, keepdim=True) + 1e-6
        npt.assert_allclose(obs.numpy(), (num / den).numpy(), atol=1e-10)
        with self.assertRaises(ShapeError):
            linear_attention(q, k, v, q_denom=q[:2])

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            linear_attention(torch.ones(3, 4), torch.ones(3, 5),
                             torch.ones(3, 4))
        with self.assertRaises(ShapeError):
            linear_attention(torch.ones(3, 4), torch.ones(3, 4),
                             torch.ones(2, 4))
        with self.assertRaises(ShapeError):
            standard_attention(torch.ones(3, 4), torch.ones(3, 5),
                               torch.ones(3, 4))


class StandardAttentionTests(TestCase):
    def test_uniform_scores(self):
        q = torch.zeros(2, 4)
        k = torch.randn(5, 4)
        v = torch.arange(10.).reshape(5, 2)
        npt.assert_allclose(standard_attention(q, k, v).numpy(),
                            np.tile(v.numpy().mean(axis=0), (2, 1)),
                            rtol=1e-6)

    def test_cross_attention_shape(self):
        out = standard_attention(torch.randn(3, 8), torch.randn(7, 8),
                                 torch.randn(7, 2))
        self.assertEqual(tuple(out.shape), (3, 2))

    def test_reference(self):
        gen = torch.Generator().manual_seed(3)
        q, k, v = (torch.randn(4, 6, generator=gen, dtype=torch.float64)
                   for _ in range(3))
        scores = q @ k.T / math.sqrt(6)
        exp = torch.softmax(scores, dim=-1) @ v
        npt.assert_allclose(standard_attention(q, k, v).numpy(),
                            exp.numpy(), atol=1e-12)


class CostTests(TestCase):
    def test_linear_scaling(self):
        d = 64
        counts = {}
        for n in (256, 512):
            x = torch.randn(n, d)
            counts[n] = (count_madds(linear_attention, x, x, x)[1],
                         count_madds(standard_attention, x, x, x)[1])
        lin = counts[512][0] / counts[256][0]
        std = counts[512][1] / counts[256][1]
        self.assertAlmostEqual(lin, 2.0, delta=0.1)
        self.assertAlmostEqual(std, 4.0, delta=0.4)

    def test_modeled_costs(self):
        self.assertEqual(standard_attention_madds(10, 10, 4), 800)
        self.assertEqual(linear_attention_madds(10, 4), 2 * 10 * 16 + 80)
        self.assertEqual(linear_attention_madds(512, 64) /
                         linear_attention_madds(256, 64), 2.0)


class RopeTests(TestCase):
    def test_position_zero_identity(self):
        x = torch.randn(1, 8, dtype=torch.float64)
        npt.assert_allclose(rope_apply(x, RopeConfig((0,))).numpy(),
                            x.numpy())

    def test_norm_preserved(self):
        x = torch.randn(5, 8, dtype=torch.float64)
        out = rope_apply(x, RopeConfig.sequential(5))
        npt.assert_allclose(out.norm(dim=-1).numpy(), x.norm(dim=-1).numpy(),
                            rtol=1e-12)

    def test_relative_positions(self):
        gen = torch.Generator().manual_seed(4)
        q = torch.randn(1, 6, generator=gen, dtype=torch.float64)
        k = torch.randn(1, 6, generator=gen, dtype=torch.float64)

        def dot(m, n):
            return float((rope_apply(q, RopeConfig((m,))) *
                          rope_apply(k, RopeConfig((n,)))).sum())
        self.assertAlmostEqual(dot(3, 1), dot(12, 10), places=10)
        self.assertAlmostEqual(dot(0, 5), dot(7, 12), places=10)

    def test_errors(self):
        with self.assertRaises(ShapeError):
            rope_apply(torch.ones(2, 3), RopeConfig.sequential(2))
        with self.assertRaises(ShapeError):
            rope_apply(torch.ones(2, 4), RopeConfig.sequential(3))
        with self.assertRaises(ValueError):
            RopeConfig((-1,))

    def test_sequential(self):
        self.assertEqual(RopeConfig.sequential(3, start=2).positions,
                         (2, 3, 4))


class ModuleTests(TestCase):
    def test_heads_round_trip(self):
        x = torch.randn(2, 5, 12)
        h = split_heads(x, 3)
        self.assertEqual(tuple(h.shape), (2, 3, 5, 4))
        npt.assert_equal(merge_heads(h).numpy(), x.numpy())

    def test_init_matrix(self):
        w = init_matrix(4, 6, zero=True)
        self.assertEqual(tuple(w.shape), (4, 6))
        self.assertEqual(float(w.abs().sum()), 0.)
        self.assertTrue(w.requires_grad)
        gen = torch.Generator().manual_seed(0)
        a = init_matrix(4, 6, torch.Generator().manual_seed(0))
        b = init_matrix(4, 6, gen)
        npt.assert_equal(a.detach().numpy(), b.detach().numpy())

    def test_params_validation(self):
        with self.assertRaises(ShapeError):
            AttentionParams(6, 4, *[torch.eye(6)] * 4)
        with self.assertRaises(ShapeError):
            AttentionParams(4, 2, torch.eye(3), torch.eye(4), torch.eye(4),
                            torch.eye(4))
        with self.assertRaises(ValueError):
            AttentionParams(4, 2, *[torch.eye(4)] * 4, eps_denom=0)
        self.assertEqual(AttentionParams(4, 2, *[torch.eye(4)] * 4).head_dim,
                         2)

    def test_softmax_attention_module(self):
        attn = SoftmaxAttention(16, 4, torch.Generator().manual_seed(0))
        x = torch.randn(2, 7, 16)
        self.assertEqual(tuple(attn(x, positions=range(7)).shape), (2, 7, 16))
        ctx = torch.randn(2, 3, 16)
        self.assertEqual(tuple(attn(x, context=ctx).shape), (2, 7, 16))
        with self.assertRaises(ShapeError):
            SoftmaxAttention(10, 4)

    def test_linear_attention_module(self):
        attn = LinearAttention(16, 2, torch.Generator().manual_seed(0))
        x = torch.randn(5, 16)
        out = attn(x)
        npt.assert_allclose(out.detach().numpy(),
                            linear_attention_block(x, attn.params())
                            .detach().numpy())
        self.assertEqual(tuple(out.shape), (5, 16))

    def test_numerator_rope_flag_same_at_origin(self):
        gen = torch.Generator().manual_seed(5)
        a = LinearAttention(8, 2, gen)
        x = torch.randn(4, 8)
        zeros = [0] * 4
        pre = linear_attention_block(x, a.params(), zeros, True)
        post = linear_attention_block(x, a.params(), zeros, False)
        npt.assert_allclose(pre.detach().numpy(), post.detach().numpy(),
                            atol=1e-6)
        rotated = linear_attention_block(x, a.params(), None, False)
        self.assertGreater(float((rotated - pre).abs().max()), 0.)


if __name__ == '__main__':
    main()
