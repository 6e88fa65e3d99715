# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import logging

import click

from latentstream.cli import cli
from latentstream.cli.util import parse_floats
from latentstream.exception import ShapeError
from latentstream.nullspace import (SeparableOperator2D, load_kernel_spec,
                                    project_null, project_range)
from latentstream.tensor import read_ytf, write_ytf

logger = logging.getLogger(__name__)


@cli.command(name='project-nullspace')
@click.option('-i', '--input', 'input_fp', required=True,
              type=click.Path(exists=True, dir_okay=False),
              help='YTF tensor whose last two axes are H x W')
@click.option('--kernel-h', default=None, callback=parse_floats,
              help='Height kernel, e.g. 0.1,0.8,0.1')
@click.option('--kernel-w', default=None, callback=parse_floats,
              help='Width kernel, e.g. 0.2,0.6,0.2')
@click.option('--kernel-json', 'kernel_fp', default=None,
              type=click.Path(exists=True, dir_okay=False),
              help='JSON kernel spec; --kernel-h/-w/--threshold override it')
@click.option('--threshold', default=None, type=float,
              help='Singular values at or below it are not inverted')
@click.option('-o', '--output-prefix', default=None,
              help='Output prefix [default: the input path without .ytf]')
def project_nullspace_cmd(input_fp, kernel_h, kernel_w, kernel_fp, threshold,
                          output_prefix):
    """Split a tensor into its blur-range and null-space parts.

    Writes ``<prefix>.range.ytf`` holding ``A⁺A x`` and
    ``<prefix>.null.ytf`` holding ``x - A⁺A x``; the two add up to the
    input.

    Example usage:

    $ latentstream project-nullspace -i x.ytf --kernel-h 0.1,0.8,0.1
    --kernel-w 0.2,0.6,0.2
    """
    spec = load_kernel_spec(kernel_fp) if kernel_fp else {}
    for key, value in (('kernel_h', kernel_h), ('kernel_w', kernel_w),
                       ('threshold', threshold)):
        if value is not None:
            spec[key] = value
    if output_prefix is None:
        output_prefix = input_fp[:-4] if input_fp.endswith('.ytf') \
            else input_fp
    for fp in _project_nullspace(input_fp, spec, output_prefix):
        click.echo(fp)


def _project_nullspace(input_fp, spec, output_prefix):
    """Write the range and null-space parts; returns both paths"""
    x = read_ytf(input_fp)
    if x.dim() < 2:
        raise ShapeError("%s has %d axes, at least 2 are needed"
                         % (input_fp, x.dim()))
    op = SeparableOperator2D.from_spec(spec, x.shape[-2], x.shape[-1])
    logger.info("operator rank %s for %s input", op.rank, tuple(x.shape))

    paths = (output_prefix + '.range.ytf', output_prefix + '.null.ytf')
    write_ytf(paths[0], project_range(op, x))
    write_ytf(paths[1], project_null(op, x))
    return paths
