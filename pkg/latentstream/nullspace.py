#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
r"""Separable blur operator and its range/null-space projections

``A`` blurs the last two axes of an ``H x W`` image with a banded height
matrix ``A_H`` and a banded width matrix ``A_W``, ``A x = A_H x A_Wᵀ``. Both
are stored as thin SVD factors and ``A⁺`` inverts only the singular values
above a threshold. ``B = A⁺ A`` keeps the low-frequency part of an image and
``I - B`` the detail that ``A`` cannot see.

Examples
--------
>>> import torch
>>> from latentstream.nullspace import SeparableOperator2D, project_null
>>> op = SeparableOperator2D([0.1, 0.8, 0.1], [0.2, 0.6, 0.2], 8, 8)
>>> bool(project_null(op, torch.ones(8, 8)).abs().max() < 1e-4)
True
"""

import io
import json
import logging

import numpy as np
import scipy.linalg
import torch
from torch import nn

from latentstream.exception import ConfigError, ShapeError
from latentstream.tensor import svd_thin

logger = logging.getLogger(__name__)

PINV_THRESHOLD = 1e-6
DEFAULT_KERNEL_H = (0.1, 0.8, 0.1)
DEFAULT_KERNEL_W = (0.2, 0.6, 0.2)


def build_banded(kernel, n):
    """``n x n`` matrix with ``A[i, j] = kernel[j - i + len(kernel) // 2]``

    Entries whose column falls outside ``0..n-1`` are dropped, so boundary
    rows sum to less than the kernel.

    Parameters
    ----------
    kernel : sequence of float
        Odd-length kernel.
    n : int

    Returns
    -------
    numpy.ndarray
        float64 matrix.

    Raises
    ------
    ShapeError
        If the kernel is empty or has even length.

    Examples
    --------
    >>> build_banded([0.1, 0.8, 0.1], 3)
    array([[0.8, 0.1, 0. ],
           [0.1, 0.8, 0.1],
           [0. , 0.1, 0.8]])
    """
    kernel = np.asarray(kernel, dtype=np.float64).ravel()
    if len(kernel) == 0 or len(kernel) % 2 == 0:
        raise ShapeError("Kernel length must be odd, got %d" % len(kernel))
    if n < 1:
        raise ShapeError("n must be positive")
    r = len(kernel) // 2

    col = np.zeros(n)
    row = np.zeros(n)
    below = kernel[r::-1][:n]
    above = kernel[r:][:n]
    col[:len(below)] = below
    row[:len(above)] = above
    return scipy.linalg.toeplitz(col, row)


class SeparableOperator2D(nn.Module):
    """Separable 2-D blur with an SVD pseudo-inverse

    Parameters
    ----------
    kernel_h, kernel_w : sequence of float
        Odd-length height and width kernels.
    H, W : int
        Image size.
    threshold : float
        Singular values at or below it are not inverted.
    dtype : torch.dtype

    Attributes
    ----------
    U_H, S_H, Vt_H, S_pinv_H, U_W, S_W, Vt_W, S_pinv_W : torch.Tensor
        Factors of ``A_H`` and ``A_W`` and their thresholded reciprocals.
    """

    def __init__(self, kernel_h=DEFAULT_KERNEL_H, kernel_w=DEFAULT_KERNEL_W,
                 H=544, W=960, threshold=PINV_THRESHOLD, dtype=torch.float32):
        super().__init__()
        if threshold < 0:
            raise ValueError("threshold must be non-negative")
        self.H, self.W = int(H), int(W)
        self.kernel_h = tuple(float(k) for k in kernel_h)
        self.kernel_w = tuple(float(k) for k in kernel_w)
        self.threshold = threshold

        for axis, kernel, n in (('H', self.kernel_h, self.H),
                                ('W', self.kernel_w, self.W)):
            factors = svd_thin(torch.from_numpy(build_banded(kernel, n)))
            s = factors.S
            s_pinv = torch.where(s > threshold, 1 / s, torch.zeros_like(s))
            self.register_buffer('U_' + axis, factors.U.to(dtype))
            self.register_buffer('S_' + axis, s.to(dtype))
            self.register_buffer('Vt_' + axis, factors.Vt.to(dtype))
            self.register_buffer('S_pinv_' + axis, s_pinv.to(dtype))
            logger.debug("A_%s: %d of %d singular values inverted", axis,
                         int((s > threshold).sum()), n)

    @classmethod
    def from_spec(cls, spec, H, W, dtype=torch.float32):
        """Build from ``{"kernel_h": [...], "kernel_w": [...],
        "threshold": 1e-6}``; missing keys take the defaults"""
        unknown = set(spec) - {'kernel_h', 'kernel_w', 'threshold'}
        if unknown:
            raise ConfigError("Unknown kernel spec keys: %s"
                              % ', '.join(sorted(unknown)))
        return cls(spec.get('kernel_h', DEFAULT_KERNEL_H),
                   spec.get('kernel_w', DEFAULT_KERNEL_W), H, W,
                   spec.get('threshold', PINV_THRESHOLD), dtype)

    @property
    def rank(self):
        """``(rank A_H, rank A_W)`` after thresholding"""
        return (int((self.S_pinv_H != 0).sum()),
                int((self.S_pinv_W != 0).sum()))

    def _check(self, x):
        if x.dim() < 2 or tuple(x.shape[-2:]) != (self.H, self.W):
            raise ShapeError("Expected trailing dims (%d, %d), got %s"
                             % (self.H, self.W, tuple(x.shape)))

    def forward(self, x):
        """``A_H x A_Wᵀ``"""
        self._check(x)
        x = x.to(self.U_H.dtype)
        x_h = x.movedim(-2, -1)
        x_h = torch.matmul(x_h, self.Vt_H.T)
        x_h = torch.matmul(x_h, torch.diag(self.S_H))
        x_h = torch.matmul(x_h, self.U_H.T)
        x_h = x_h.movedim(-1, -2)

        x_hw = torch.matmul(x_h, self.Vt_W.T)
        x_hw = torch.matmul(x_hw, torch.diag(self.S_W))
        return torch.matmul(x_hw, self.U_W.T)

    def pinv(self, y):
        """``A_H⁺ y A_W⁺ᵀ``"""
        self._check(y)
        y = y.to(self.U_W.dtype)
        y_w = torch.matmul(y, self.U_W)
        y_w = torch.matmul(y_w, torch.diag(self.S_pinv_W))
        y_w = torch.matmul(y_w, self.Vt_W)

        y_hw = y_w.movedim(-2, -1)
        y_hw = torch.matmul(y_hw, self.U_H)
        y_hw = torch.matmul(y_hw, torch.diag(self.S_pinv_H))
        y_hw = torch.matmul(y_hw, self.Vt_H)
        return y_hw.movedim(-1, -2)

    def dense_matrices(self):
        """``(A_H, A_W)`` rebuilt from the factors"""
        return ((self.U_H * self.S_H) @ self.Vt_H,
                (self.U_W * self.S_W) @ self.Vt_W)


def op_apply(op, x):
    return op(x)


def op_pinv_apply(op, y):
    return op.pinv(y)


def _flat(op, x):
    op._check(x)
    return x.reshape((-1, op.H, op.W))


def project_range(op, z):
    """``A⁺ A z``, the part of ``z`` that survives the blur"""
    flat = _flat(op, z)
    return op.pinv(op(flat)).reshape(z.shape)


def project_null(op, x):
    """``x - A⁺ A x``, the part of ``x`` the blur annihilates"""
    flat = _flat(op, x).to(op.U_H.dtype)
    return (flat - op.pinv(op(flat))).reshape(x.shape)


def blend_stages(op, coarse, refined):
    """Low frequencies of ``coarse`` plus high frequencies of ``refined``"""
    if coarse.shape != refined.shape:
        raise ShapeError("Stage outputs differ in shape: %s vs %s"
                         % (tuple(coarse.shape), tuple(refined.shape)))
    return project_range(op, coarse) + project_null(op, refined)


def dense_apply(op, x):
    """Reference ``A_H x A_Wᵀ`` with the rebuilt dense matrices"""
    a_h, a_w = op.dense_matrices()
    return a_h @ x.to(a_h.dtype) @ a_w.T


def load_kernel_spec(fp):
    """Read a kernel spec JSON file"""
    with io.open(fp, encoding='utf-8') as f:
        try:
            spec = json.load(f)
        except ValueError as e:
            raise ConfigError("Cannot parse kernel spec %s: %s" % (fp, e))
    if not isinstance(spec, dict):
        raise ConfigError("Kernel spec must be a JSON object")
    return spec
