#!/usr/bin/env python

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

import io
import os
from tempfile import TemporaryDirectory
from unittest import TestCase, main

import numpy as np
import numpy.testing as npt
import torch

from latentstream.err import errstate
from latentstream.exception import (ShapeError, NonFiniteError,
                                    YtfFormatError)
from latentstream.tensor import (matmul, svd_thin, rms_norm, relu, softmax,
                                 finite_diff_grad, count_madds, write_ytf,
                                 read_ytf)


class MatmulTests(TestCase):
    def test_values(self):
        a = torch.tensor([[1., 2.], [3., 4.]])
        b = torch.tensor([[5., 6.], [7., 8.]])
        npt.assert_equal(matmul(a, b).numpy(), [[19., 22.], [43., 50.]])

    def test_batched(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(3, 4, 5, generator=gen, dtype=torch.float64)
        b = torch.randn(5, 2, generator=gen, dtype=torch.float64)
        npt.assert_allclose(matmul(a, b).numpy(), (a @ b).numpy(),
                            atol=1e-12)

    def test_dtype_promotion(self):
        out = matmul(torch.ones(2, 2, dtype=torch.float32),
                     torch.ones(2, 2, dtype=torch.float64))
        self.assertEqual(out.dtype, torch.float64)

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            matmul(torch.ones(2, 3), torch.ones(2, 3))
        with self.assertRaises(ShapeError):
            matmul(torch.ones(3), torch.ones(3, 1))

    def test_nonfinite(self):
        a = torch.tensor([[float('inf')]])
        with self.assertRaises(NonFiniteError):
            matmul(a, torch.ones(1, 1))
        with errstate(nonfinite='ignore'):
            self.assertTrue(torch.isinf(matmul(a, torch.ones(1, 1))).all())


class SvdTests(TestCase):
    def test_reconstruct(self):
        gen = torch.Generator().manual_seed(1)
        m = torch.randn(7, 4, generator=gen, dtype=torch.float64)
        f = svd_thin(m)
        self.assertEqual(tuple(f.U.shape), (7, 4))
        self.assertEqual(tuple(f.Vt.shape), (4, 4))
        self.assertEqual(f.rank, 4)
        npt.assert_allclose(f.reconstruct().numpy(), m.numpy(), atol=1e-12)

    def test_orthonormal(self):
        gen = torch.Generator().manual_seed(2)
        f = svd_thin(torch.randn(5, 6, generator=gen, dtype=torch.float64))
        npt.assert_allclose((f.U.T @ f.U).numpy(), np.eye(5), atol=1e-12)
        npt.assert_allclose((f.Vt @ f.Vt.T).numpy(), np.eye(5), atol=1e-12)
        s = f.S.numpy()
        self.assertTrue((np.diff(s) <= 0).all())
        self.assertTrue((s >= 0).all())

    def test_dtype_kept(self):
        self.assertEqual(svd_thin(torch.eye(3)).S.dtype, torch.float32)

    def test_rank_deficient(self):
        m = torch.tensor([[1., 2.], [2., 4.]], dtype=torch.float64)
        npt.assert_allclose(svd_thin(m).S.numpy(), [5., 0.], atol=1e-12)

    def test_bad_input(self):
        with self.assertRaises(ShapeError):
            svd_thin(torch.ones(3))
        with self.assertRaises(ShapeError):
            svd_thin(torch.ones(0, 3))
        with self.assertRaises(NonFiniteError):
            svd_thin(torch.tensor([[float('nan')]]))


class ElementwiseTests(TestCase):
    def test_rms_norm(self):
        x = torch.tensor([[3., 4.]], dtype=torch.float64)
        npt.assert_allclose(rms_norm(x, eps=1e-12).numpy(),
                            x.numpy() / np.sqrt(12.5), rtol=1e-9)
        with self.assertRaises(ValueError):
            rms_norm(x, eps=0)

    def test_relu(self):
        npt.assert_equal(relu(torch.tensor([-1., 0., 2.])).numpy(),
                         [0., 0., 2.])

    def test_softmax_stable(self):
        out = softmax(torch.tensor([1000., 1000.]))
        npt.assert_allclose(out.numpy(), [0.5, 0.5])
        out = softmax(torch.tensor([[0., np.log(3.)]]), axis=1)
        npt.assert_allclose(out.numpy(), [[0.25, 0.75]], rtol=1e-6)

    def test_nonfinite(self):
        bad = torch.tensor([1., float('nan')])
        for op in (rms_norm, relu, softmax):
            with self.assertRaises(NonFiniteError, msg=op.__name__):
                op(bad)
            with errstate(nonfinite='ignore'):
                self.assertTrue(bool(torch.isnan(op(bad)).any()))


class FiniteDiffTests(TestCase):
    def test_quadratic(self):
        x = torch.tensor([1., -2., 0.5], dtype=torch.float64)
        grad = finite_diff_grad(lambda v: (v ** 2).sum() + v[0] * v[1], x)
        npt.assert_allclose(grad.numpy(), [2 - 2., -4 + 1., 1.], atol=1e-8)

    def test_step_range(self):
        with self.assertRaises(ValueError):
            finite_diff_grad(lambda v: v.sum(), torch.ones(1), h=1.)


class CountMaddsTests(TestCase):
    def test_matmul_count(self):
        result, madds = count_madds(torch.matmul, torch.ones(4, 5),
                                    torch.ones(5, 6))
        self.assertEqual(madds, 4 * 5 * 6)
        self.assertEqual(tuple(result.shape), (4, 6))


class YtfTests(TestCase):
    def test_header(self):
        buf = io.BytesIO()
        write_ytf(buf, torch.arange(6.).reshape(2, 3))
        header, payload = buf.getvalue().split(b'\n', 1)
        self.assertEqual(header, b'{"shape":[2,3],"dtype":"f32"}')
        self.assertEqual(len(payload), 24)
        self.assertEqual(payload[4:8], np.float32(1).tobytes())

    def test_read_back(self):
        buf = io.BytesIO()
        x = torch.tensor([[1.5, -2.25, 3.]], dtype=torch.float64)
        write_ytf(buf, x)
        buf.seek(0)
        out = read_ytf(buf)
        self.assertEqual(out.dtype, torch.float32)
        npt.assert_equal(out.numpy(), x.numpy())

    def test_scalar_and_empty(self):
        for x in (torch.tensor(2.), torch.zeros(0, 3)):
            buf = io.BytesIO()
            write_ytf(buf, x)
            buf.seek(0)
            self.assertEqual(tuple(read_ytf(buf).shape), tuple(x.shape))

    def test_read_path(self):
        with TemporaryDirectory() as tmp:
            good = os.path.join(tmp, 'x.ytf')
            write_ytf(good, torch.ones(2, 2))
            npt.assert_equal(read_ytf(good).numpy(), np.ones((2, 2)))
            bad = os.path.join(tmp, 'x.npy')
            np.save(bad, np.ones(3))
            with self.assertRaisesRegex(YtfFormatError,
                                        'x.npy is not a YTF file'):
                read_ytf(bad)

    def test_malformed(self):
        for data in (b'not json\n', b'{"shape":[2]}\n' + b'\0' * 8,
                     b'{"shape":[2],"dtype":"f64"}\n' + b'\0' * 16,
                     b'{"shape":[3],"dtype":"f32"}\n' + b'\0' * 8,
                     b'{"shape":[-1],"dtype":"f32"}\n'):
            with self.assertRaises(YtfFormatError):
                read_ytf(io.BytesIO(data))


if __name__ == '__main__':
    main()
