#!/usr/bin/env python

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

import os
from tempfile import TemporaryDirectory
from unittest import TestCase, main

import numpy as np
import numpy.testing as npt
import torch

from latentstream.err import errstate
from latentstream.exception import ShapeError, PatchRateError
from latentstream.latent import VideoLatent
from latentstream.patchify import (PatchRate, PatchWeights, TokenSequence,
                                   BASE_RATE, token_count, pad_to_rate,
                                   extract_patches, fold_patches, patchify,
                                   unpatchify, interpolate_patch_weights)


def random_weights(rate, channels, d, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return PatchWeights(rate,
                        torch.randn(d, channels * rate.volume, generator=gen,
                                    dtype=dtype),
                        torch.randn(d, generator=gen, dtype=dtype))


class PatchRateTests(TestCase):
    def test_parse(self):
        self.assertEqual(PatchRate.parse('1,4,4'), PatchRate(1, 4, 4))
        self.assertEqual(PatchRate.parse('(1, 8, 8)'), PatchRate(1, 8, 8))
        self.assertEqual(PatchRate.parse([2, 2, 2]), PatchRate(2, 2, 2))
        self.assertIs(PatchRate.parse(BASE_RATE), BASE_RATE)
        self.assertEqual(str(BASE_RATE), '(1,2,2)')
        self.assertEqual(PatchRate(1, 4, 4).volume, 16)

    def test_invalid(self):
        with self.assertRaises(PatchRateError):
            PatchRate(0, 2, 2)
        with self.assertRaises(PatchRateError):
            PatchRate.parse('a,b,c')
        with self.assertRaises(PatchRateError):
            PatchRate.parse([1, 2])

    def test_ordering(self):
        self.assertLess(PatchRate(1, 2, 2), PatchRate(1, 4, 4))


class TokenCountTests(TestCase):
    def test_counts(self):
        self.assertEqual(token_count(1, 16, 16, BASE_RATE), 64)
        self.assertEqual(token_count(2, 16, 16, (1, 4, 4)), 32)
        self.assertEqual(token_count(1, 16, 16, (1, 8, 8)), 4)
        self.assertEqual(token_count(1, 15, 17, BASE_RATE), 8 * 9)
        self.assertEqual(token_count(3, 4, 4, (2, 2, 2)), 8)


class ExtractFoldTests(TestCase):
    def test_fold_inverts_extract(self):
        x = torch.randn(2, 3, 5, 6)
        for rate in (BASE_RATE, PatchRate(1, 4, 4), PatchRate(2, 2, 2)):
            patches = extract_patches(x, rate)
            npt.assert_equal(fold_patches(patches, rate, x.shape).numpy(),
                             x.numpy())

    def test_patch_layout(self):
        x = torch.arange(16.).reshape(1, 1, 4, 4)
        patches = extract_patches(x, BASE_RATE)
        npt.assert_equal(patches[0].numpy(), [0., 1., 4., 5.])
        npt.assert_equal(patches[1].numpy(), [2., 3., 6., 7.])
        npt.assert_equal(patches[2].numpy(), [8., 9., 12., 13.])

    def test_replicate_padding(self):
        x = torch.arange(3.).reshape(1, 1, 1, 3)
        padded = pad_to_rate(x, PatchRate(1, 2, 4))
        self.assertEqual(tuple(padded.shape), (1, 1, 2, 4))
        npt.assert_equal(padded[0, 0].numpy(), [[0., 1., 2., 2.],
                                                [0., 1., 2., 2.]])

    def test_padding_reported(self):
        x = torch.zeros(1, 1, 3, 3)
        with errstate(padding='raise'):
            with self.assertRaises(PatchRateError):
                pad_to_rate(x, BASE_RATE)
            self.assertEqual(pad_to_rate(torch.zeros(1, 1, 4, 4), BASE_RATE)
                             .shape[-1], 4)

    def test_fold_errors(self):
        with self.assertRaises(ShapeError):
            fold_patches(torch.zeros(3, 4), BASE_RATE, (1, 1, 4, 4))
        with self.assertRaises(ShapeError):
            fold_patches(torch.zeros(4, 5), BASE_RATE, (1, 1, 4, 4))


class PatchifyTests(TestCase):
    def test_tokens_and_meta(self):
        w = random_weights(PatchRate(1, 4, 4), 2, 8)
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        seq = patchify(x, PatchRate(1, 4, 4), w, age=5)
        self.assertEqual(len(seq), 12)
        self.assertEqual(tuple(seq.tokens.shape), (12, 8))
        npt.assert_equal(seq.ages.numpy(), [5] * 12)
        npt.assert_equal(seq.rates.numpy(), [[1, 4, 4]] * 12)
        npt.assert_equal(seq.index[5].numpy(), [1, 0, 1])

        patches = extract_patches(x, PatchRate(1, 4, 4))
        npt.assert_allclose(seq.tokens.numpy(),
                            (patches @ w.kernel.T + w.bias).numpy())

    def test_video_latent_input(self):
        w = random_weights(BASE_RATE, 1, 4)
        x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        npt.assert_equal(patchify(VideoLatent(x), BASE_RATE, w).tokens
                         .numpy(), patchify(x, BASE_RATE, w).tokens.numpy())

    def test_batched(self):
        w = random_weights(BASE_RATE, 2, 4)
        x = torch.randn(3, 2, 1, 4, 4, dtype=torch.float64)
        seq = patchify(x, BASE_RATE, w)
        self.assertEqual(tuple(seq.tokens.shape), (3, 4, 4))
        self.assertEqual(len(seq.ages), 4)

    def test_errors(self):
        w = random_weights(BASE_RATE, 2, 4)
        with self.assertRaises(PatchRateError):
            patchify(torch.zeros(2, 1, 4, 4), (1, 4, 4), w)
        with self.assertRaises(ShapeError):
            patchify(torch.zeros(3, 1, 4, 4), BASE_RATE, w)

    def test_unpatchify_inverts(self):
        # a wide kernel is injective, so the least-squares inverse is exact
        w = random_weights(BASE_RATE, 2, 16)
        x = torch.randn(2, 3, 6, 4, dtype=torch.float64)
        seq = patchify(x, BASE_RATE, w)
        npt.assert_allclose(unpatchify(seq, BASE_RATE, w, x.shape).numpy(),
                            x.numpy(), atol=1e-8)


class InterpolationTests(TestCase):
    def test_constant_input_matches(self):
        base = random_weights(BASE_RATE, 3, 6)
        x = torch.ones(3, 1, 16, 16, dtype=torch.float64) * \
            torch.tensor([0.5, -1., 2.], dtype=torch.float64).view(3, 1, 1, 1)
        ref = patchify(x, BASE_RATE, base).tokens[0]
        for target in ((1, 4, 4), (1, 8, 8), (2, 4, 4)):
            w = interpolate_patch_weights(base, target)
            self.assertEqual(w.base, BASE_RATE)
            tokens = patchify(x.repeat(1, 2, 1, 1), target, w).tokens
            npt.assert_allclose(tokens.numpy(),
                                ref.expand_as(tokens).numpy(), atol=1e-10)

    def test_identity_rate(self):
        base = random_weights(BASE_RATE, 1, 2)
        self.assertIs(interpolate_patch_weights(base, BASE_RATE), base)

    def test_chained_base(self):
        base = random_weights(BASE_RATE, 1, 2)
        mid = interpolate_patch_weights(base, (1, 4, 4))
        self.assertEqual(interpolate_patch_weights(mid, (1, 8, 8)).base,
                         BASE_RATE)

    def test_bad_ratio(self):
        base = random_weights(PatchRate(1, 4, 4), 1, 2)
        with self.assertRaises(PatchRateError):
            interpolate_patch_weights(base, BASE_RATE)
        with self.assertRaises(PatchRateError):
            interpolate_patch_weights(base, (1, 6, 6))


class PatchWeightsTests(TestCase):
    def test_validation(self):
        with self.assertRaises(ShapeError):
            PatchWeights(BASE_RATE, torch.zeros(4), torch.zeros(4))
        with self.assertRaises(ShapeError):
            PatchWeights(BASE_RATE, torch.zeros(4, 5), torch.zeros(4))
        with self.assertRaises(ShapeError):
            PatchWeights(BASE_RATE, torch.zeros(4, 8), torch.zeros(3))
        self.assertEqual(PatchWeights(BASE_RATE, torch.zeros(4, 8),
                                      torch.zeros(4)).channels, 2)

    def test_save_load(self):
        base = random_weights(BASE_RATE, 2, 3, dtype=torch.float32)
        w = interpolate_patch_weights(base, (1, 4, 4))
        with TemporaryDirectory() as tmp:
            prefix = os.path.join(tmp, 'w')
            w.save(prefix)
            loaded = PatchWeights.load(prefix)
        self.assertEqual(loaded.rate, PatchRate(1, 4, 4))
        self.assertEqual(loaded.base, BASE_RATE)
        npt.assert_equal(loaded.kernel.numpy(), w.kernel.numpy())
        npt.assert_equal(loaded.bias.numpy(), w.bias.numpy())


class TokenSequenceTests(TestCase):
    def make(self, ages):
        n = len(ages)
        return TokenSequence(torch.zeros(n, 2), torch.tensor(ages),
                             torch.ones(n, 3, dtype=torch.int64),
                             torch.zeros(n, 3, dtype=torch.int64))

    def test_validate(self):
        seq = self.make([3, 1, 0, 0])
        self.assertEqual(seq.n_predicted, 2)
        self.assertIs(seq.validate(), seq)
        with self.assertRaises(ShapeError):
            self.make([0, 1, 0]).validate()

    def test_concat_and_empty(self):
        empty = TokenSequence.empty(2)
        self.assertEqual(len(empty), 0)
        seq = TokenSequence.concat([empty, self.make([1]), self.make([0])])
        npt.assert_equal(seq.ages.numpy(), [1, 0])
        with self.assertRaises(ShapeError):
            TokenSequence.concat([])

    def test_meta_mismatch(self):
        with self.assertRaises(ShapeError):
            TokenSequence(torch.zeros(2, 2), torch.zeros(3),
                          torch.zeros(2, 3), torch.zeros(2, 3))


if __name__ == '__main__':
    main()
