#!/usr/bin/env python
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

from dataclasses import dataclass, field

import torch

from latentstream.err import errcheck
from latentstream.exception import ShapeError


@dataclass(eq=False)
class VideoLatent:
    """A ``C x f x h x w`` latent with its binary condition mask

    Parameters
    ----------
    data : torch.Tensor
        ``C x f x h x w`` values, optionally with leading batch axes.
    mask : torch.Tensor, optional
        ``1 x f x h x w`` (or batched) mask, 1 marks preserved condition
        entries. Defaults to all zeros.

    Raises
    ------
    ShapeError
        If data is not at least 4-D or the mask does not broadcast.
    MaskError
        If the mask holds values other than 0 and 1.
    """
    data: torch.Tensor
    mask: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.data.dim() < 4:
            raise ShapeError("VideoLatent data must be C x f x h x w, got %s"
                             % (tuple(self.data.shape),))
        if self.mask is None:
            self.mask = torch.zeros(self.data.shape[:-4] + (1,) +
                                    self.data.shape[-3:],
                                    dtype=self.data.dtype)
        if (self.mask.dim() != self.data.dim() or self.mask.shape[-4] != 1 or
                self.mask.shape[-3:] != self.data.shape[-3:]):
            raise ShapeError("Mask shape %s does not fit data shape %s"
                             % (tuple(self.mask.shape),
                                tuple(self.data.shape)))
        errcheck(self.mask, 'nonbinary')

    @classmethod
    def zeros(cls, channels, frames, height, width, dtype=torch.float32):
        return cls(torch.zeros(channels, frames, height, width, dtype=dtype))

    @property
    def C(self):
        return self.data.shape[-4]

    @property
    def f(self):
        return self.data.shape[-3]

    @property
    def h(self):
        return self.data.shape[-2]

    @property
    def w(self):
        return self.data.shape[-1]

    @property
    def shape(self):
        return tuple(self.data.shape)

    def frames(self, start, stop=None):
        """Frames ``start:stop`` as a new latent"""
        stop = start + 1 if stop is None else stop
        return VideoLatent(self.data[..., start:stop, :, :],
                           self.mask[..., start:stop, :, :])

    def detach(self):
        return VideoLatent(self.data.detach(), self.mask.detach())

    @classmethod
    def concat(cls, latents):
        """Concatenate latents along the frame axis"""
        latents = list(latents)
        if not latents:
            raise ShapeError("Cannot concatenate zero latents")
        return cls(torch.cat([lt.data for lt in latents], dim=-3),
                   torch.cat([lt.mask for lt in latents], dim=-3))
