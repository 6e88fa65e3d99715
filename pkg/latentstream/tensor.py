#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
"""Dense numerical kernel

Thin wrappers around torch and scipy that every other module is built on:
matrix products with 64-bit accumulation, thin SVD, RMS normalization, the
finite-difference oracle used by the tests and the YTF tensor file format.

The YTF format is a UTF-8 JSON header line followed by a raw little-endian
float32 payload::

    {"shape":[2,3],"dtype":"f32"}\\n<24 bytes>
"""

import io
import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch
from torch.utils.flop_counter import FlopCounterMode

from latentstream.err import errcheck
from latentstream.exception import (ShapeError, ConvergenceError,
                                    YtfFormatError)
from latentstream.util import is_ytf_file

logger = logging.getLogger(__name__)

YTF_DTYPE = 'f32'


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Thin singular value decomposition ``M = U diag(S) Vt``

    Attributes
    ----------
    U : torch.Tensor
        ``m x r`` matrix with orthonormal columns.
    S : torch.Tensor
        ``r`` non-increasing, non-negative singular values.
    Vt : torch.Tensor
        ``r x n`` matrix with orthonormal rows.
    """
    U: torch.Tensor
    S: torch.Tensor
    Vt: torch.Tensor

    @property
    def rank(self):
        return self.S.shape[0]

    def reconstruct(self):
        return matmul(self.U * self.S, self.Vt)


def matmul(a, b):
    """Matrix product accumulated in 64-bit and stored in the input dtype

    Parameters
    ----------
    a : torch.Tensor
        ``... x m x k`` tensor.
    b : torch.Tensor
        ``k x n`` or ``... x k x n`` tensor.

    Returns
    -------
    torch.Tensor
        ``... x m x n`` product.

    Raises
    ------
    ShapeError
        If the inner dimensions disagree or an operand is not at least 2-D.

    Examples
    --------
    >>> import torch
    >>> from latentstream.tensor import matmul
    >>> matmul(torch.tensor([[1., 2.], [3., 4.]]), torch.tensor([[0.], [1.]]))
    tensor([[2.],
            [4.]])
    """
    if a.dim() < 2 or b.dim() < 2:
        raise ShapeError("matmul operands must be at least 2-D, got %s and %s"
                         % (tuple(a.shape), tuple(b.shape)))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("Inner dimensions disagree: %s x %s"
                         % (tuple(a.shape), tuple(b.shape)))

    dtype = torch.promote_types(a.dtype, b.dtype)
    out = torch.matmul(a.to(torch.float64), b.to(torch.float64)).to(dtype)
    errcheck(out, 'nonfinite')
    return out


def svd_thin(m):
    """Thin SVD of a matrix

    The decomposition is computed in 64-bit with LAPACK ``gesdd`` and retried
    with the slower but more robust ``gesvd`` driver if it fails to converge.

    Parameters
    ----------
    m : torch.Tensor
        ``m x n`` matrix with ``m, n >= 1``.

    Returns
    -------
    SvdFactors
        Factors in the dtype of ``m``.

    Raises
    ------
    ShapeError
        If ``m`` is not a non-empty matrix.
    ConvergenceError
        If neither LAPACK driver converges.

    Examples
    --------
    >>> import torch
    >>> from latentstream.tensor import svd_thin
    >>> svd_thin(torch.diag(torch.tensor([3., 0.]))).S
    tensor([3., 0.])
    """
    if m.dim() != 2 or 0 in m.shape:
        raise ShapeError("svd_thin expects a non-empty matrix, got %s"
                         % (tuple(m.shape),))
    errcheck(m, 'nonfinite')

    arr = m.detach().cpu().to(torch.float64).numpy()
    try:
        u, s, vt = scipy.linalg.svd(arr, full_matrices=False,
                                    lapack_driver='gesdd')
    except np.linalg.LinAlgError:
        logger.info("gesdd did not converge, retrying with gesvd")
        try:
            u, s, vt = scipy.linalg.svd(arr, full_matrices=False,
                                        lapack_driver='gesvd')
        except np.linalg.LinAlgError as e:
            raise ConvergenceError("SVD did not converge: %s" % e)

    def _cast(x):
        return torch.from_numpy(np.ascontiguousarray(x)).to(m.dtype)

    return SvdFactors(U=_cast(u), S=_cast(s), Vt=_cast(vt))


def rms_norm(x, axis=-1, eps=1e-6):
    """RMS-normalize ``x`` along ``axis``: ``x / sqrt(mean(x**2) + eps)``

    Raises
    ------
    ValueError
        If ``eps`` is not positive.
    """
    if eps <= 0:
        raise ValueError("eps must be positive, got %r" % eps)
    out = x * torch.rsqrt(x.pow(2).mean(dim=axis, keepdim=True) + eps)
    errcheck(out, 'nonfinite')
    return out


def relu(x):
    out = torch.relu(x)
    errcheck(out, 'nonfinite')
    return out


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``"""
    out = torch.softmax(x, dim=axis)
    errcheck(out, 'nonfinite')
    return out


def finite_diff_grad(f, x, h=1e-3):
    """Central-difference gradient of a scalar function

    Every coordinate is perturbed in 64-bit; only meant as a test oracle.

    Parameters
    ----------
    f : callable
        Maps a tensor shaped like ``x`` to a scalar (python float or 0-d
        tensor).
    x : torch.Tensor
        Point to differentiate at.
    h : float
        Step, within [1e-5, 1e-2].

    Returns
    -------
    torch.Tensor
        Gradient estimate, same shape and dtype as ``x``.
    """
    if not 1e-5 <= h <= 1e-2:
        raise ValueError("h must lie in [1e-5, 1e-2], got %r" % h)

    base = x.detach().to(torch.float64).clone()
    flat = base.view(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(f(base.to(x.dtype)))
            flat[i] = orig - h
            down = float(f(base.to(x.dtype)))
            flat[i] = orig
            grad[i] = (up - down) / (2 * h)
    return grad.view_as(base).to(x.dtype)


def count_madds(fn, *args, **kwargs):
    """Count the multiply-adds issued by the matrix products of ``fn``

    Returns
    -------
    tuple
        ``(result of fn, multiply-add count)``
    """
    counter = FlopCounterMode(display=False)
    with counter:
        result = fn(*args, **kwargs)
    return result, counter.get_total_flops() // 2


def write_ytf(fp, tensor):
    """Write a tensor in YTF format

    Parameters
    ----------
    fp : str or binary file handle
        Destination.
    tensor : torch.Tensor or numpy.ndarray
        Values, stored as little-endian float32.
    """
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().numpy()
    arr = np.ascontiguousarray(tensor, dtype='<f4')
    header = json.dumps({'shape': list(arr.shape), 'dtype': YTF_DTYPE},
                        separators=(',', ':'))

    if hasattr(fp, 'write'):
        fp.write(header.encode('utf-8') + b'\n')
        fp.write(arr.tobytes())
    else:
        with io.open(fp, 'wb') as f:
            write_ytf(f, arr)


def read_ytf(fp):
    """Read a YTF tensor

    Parameters
    ----------
    fp : str or binary file handle
        Source.

    Returns
    -------
    torch.Tensor
        float32 tensor.

    Raises
    ------
    YtfFormatError
        If a named file is not a YTF file, the header is malformed or the
        payload size disagrees with it.
    """
    if not hasattr(fp, 'read'):
        if not is_ytf_file(fp):
            raise YtfFormatError("%s is not a YTF file" % fp)
        with io.open(fp, 'rb') as f:
            return read_ytf(f)

    line = fp.readline()
    try:
        header = json.loads(line.decode('utf-8'))
        shape = [int(s) for s in header['shape']]
        dtype = header['dtype']
    except (ValueError, KeyError, TypeError, UnicodeDecodeError):
        raise YtfFormatError("Malformed YTF header: %r" % line[:80])

    if dtype != YTF_DTYPE:
        raise YtfFormatError("Unsupported YTF dtype: %r" % dtype)
    if any(s < 0 for s in shape):
        raise YtfFormatError("Negative axis length in %r" % shape)

    payload = fp.read()
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise YtfFormatError("Payload holds %d bytes, header implies %d"
                             % (len(payload), expected))

    arr = np.frombuffer(payload, dtype='<f4').reshape(shape)
    return torch.from_numpy(arr.astype(np.float32))
