#!/usr/bin/env python
r"""
Quick start
===========

.. currentmodule:: latentstream

latentstream generates long latent videos chunk by chunk with a small
diffusion transformer whose history is compressed into a bounded number of
tokens. The model, the compression schedule and a generation session are
available at the package level.

Functions
---------

.. autosummary::
   :toctree: generated/

   load_checkpoint
   run_session

Examples
--------
Generate two chunks with a freshly initialized model:

>>> from latentstream import DitModel, DitConfig, GenerationSession
>>> from latentstream import run_session
>>> model = DitModel(DitConfig(depth=1))
>>> session = GenerationSession(model, 'tscm', seed=7)
>>> len(run_session(session, 2).chunks)
2

Reload a checkpoint written by ``latentstream train-toy``:

>>> from latentstream import load_checkpoint
>>> model = load_checkpoint('path/to/checkpoint') # doctest: +SKIP
"""
# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

from .latent import VideoLatent
from .model import DitConfig, DitModel, load_checkpoint, save_checkpoint
from .tscm import LadderSchedule
from .stream import ContextStrategy, GenerationSession, run_session
from .util import __version__

__author__ = "The latentstream Development Team"
__copyright__ = "Copyright 2025-2026, The latentstream Development Team"
__credits__ = ["The latentstream Development Team"]
__license__ = "BSD"

__all__ = ['VideoLatent', 'DitConfig', 'DitModel', 'LadderSchedule',
           'ContextStrategy', 'GenerationSession', 'run_session',
           'load_checkpoint', 'save_checkpoint', '__version__']
