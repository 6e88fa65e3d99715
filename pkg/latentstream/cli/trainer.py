# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import logging
import os
import sys

import click

from latentstream.cli import cli
from latentstream.cli.util import (config_option, seed_option, quiet_option,
                                   load_config, merge_overrides)
from latentstream.model import DitConfig, DitModel, save_checkpoint
from latentstream.training import (TrainConfig, make_memorization_dataset,
                                   train_toy, write_log_csv)

logger = logging.getLogger(__name__)

LOG_FILENAME = 'train_log.csv'


@cli.command(name='train-toy')
@click.option('-o', '--output-dir', required=True,
              type=click.Path(file_okay=False, writable=True),
              help='Directory for the checkpoint and the training log')
@click.option('--samples', default=16, type=int, show_default=True,
              help='Size of the synthetic latent dataset')
@click.option('--steps', default=None, type=int,
              help='Optimizer steps [default: from config]')
@click.option('--lr', default=None, type=float,
              help='Learning rate [default: from config]')
@click.option('--t-sampler', default=None,
              type=click.Choice(['uniform', 'logit_normal']),
              help='Timestep distribution [default: from config]')
@config_option
@seed_option
@quiet_option
def train_toy_cmd(output_dir, samples, steps, lr, t_sampler, config_fp, seed,
                  quiet):
    """Train a toy diffusion transformer on a synthetic latent dataset.

    The model and schedule sizes come from the configuration; the dataset
    has one constant value per channel and frame so that it can be
    memorized.

    Example usage:

    Train for 500 steps and write the checkpoint to ``ckpt/``:

    $ latentstream train-toy -o ckpt --steps 500 --seed 0
    """
    config = load_config(config_fp)
    _train_toy(output_dir, samples, config,
               merge_overrides(config['training'], steps=steps, lr=lr,
                               t_sampler=t_sampler, seed=seed),
               progress=not quiet and sys.stderr.isatty())


def _train_toy(output_dir, samples, config, training, progress=False):
    """Train, save the checkpoint and the log; returns the model and rows"""
    cfg = DitConfig.from_dict(config.get('model', {}))
    train_cfg = TrainConfig.from_dict(training)
    model = DitModel(cfg, seed=train_cfg.seed)
    data = make_memorization_dataset(samples, cfg.chunk_shape, train_cfg.seed)

    rows = train_toy(model, data, train_cfg, progress=progress)
    save_checkpoint(model, output_dir)
    write_log_csv(rows, os.path.join(output_dir, LOG_FILENAME))
    logger.info("loss %.5f -> %.5f over %d steps", rows[0]['loss'],
                rows[-1]['loss'], len(rows))
    return model, rows
