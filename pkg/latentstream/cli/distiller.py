# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import os
import sys

import click

from latentstream.cli import cli
from latentstream.cli.util import (config_option, seed_option, quiet_option,
                                   load_config, merge_overrides)
from latentstream.model import load_checkpoint, save_checkpoint
from latentstream.training import (DistillConfig, distill_toy, sample_mmd,
                                   sample_teacher, write_log_csv)

LOG_FILENAME = 'distill_log.csv'


@cli.command(name='distill')
@click.option('-c', '--checkpoint', required=True,
              type=click.Path(exists=True, file_okay=False),
              help='Teacher checkpoint directory')
@click.option('-o', '--output-dir', required=True,
              type=click.Path(file_okay=False, writable=True),
              help='Directory for the distilled generator and the log')
@click.option('--iterations', default=None, type=int,
              help='Alternating updates [default: from config]')
@click.option('--generator-steps', default=None, type=int,
              help='Denoising steps of the generator [default: from config]')
@click.option('--eval-samples', default=32, type=int, show_default=True,
              help='Samples drawn from each model for the MMD report')
@config_option
@seed_option
@quiet_option
def distill_cmd(checkpoint, output_dir, iterations, generator_steps,
                eval_samples, config_fp, seed, quiet):
    """Distill a many-step checkpoint into a few-step generator.

    Prints the MMD between generator and teacher samples and the teacher's
    own two-draw MMD for reference.

    Example usage:

    $ latentstream distill -c ckpt -o gen --generator-steps 4
    """
    config = load_config(config_fp)
    distill = merge_overrides(config['distill'], iterations=iterations,
                              generator_steps=generator_steps, seed=seed)
    mmd, self_mmd = _distill(checkpoint, output_dir, distill, eval_samples,
                             progress=not quiet and sys.stderr.isatty())
    click.echo('generator MMD: %.6f' % mmd)
    click.echo('teacher self-MMD: %.6f' % self_mmd)


def _distill(checkpoint, output_dir, distill, eval_samples=32,
             progress=False):
    """Run the distillation and return ``(generator MMD, teacher MMD)``

    The teacher MMD compares two independent teacher draws and is the noise
    floor of the generator MMD.
    """
    teacher = load_checkpoint(checkpoint)
    cfg = DistillConfig.from_dict(distill)
    triplet, rows = distill_toy(teacher, cfg, progress=progress)
    save_checkpoint(triplet.generator, output_dir)
    write_log_csv(rows, os.path.join(output_dir, LOG_FILENAME))

    ref = sample_teacher(teacher, eval_samples, cfg.teacher_steps,
                         seed=cfg.seed + 1)
    ref2 = sample_teacher(teacher, eval_samples, cfg.teacher_steps,
                          seed=cfg.seed + 2)
    gen = sample_teacher(triplet.generator, eval_samples,
                         cfg.generator_steps, seed=cfg.seed + 3)
    return sample_mmd(gen, ref), sample_mmd(ref2, ref)
