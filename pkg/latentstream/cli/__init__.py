# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import logging
from importlib import import_module

import click

import latentstream
from latentstream.exception import LatentStreamException

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s: %(message)s'


@click.group(context_settings=dict(help_option_names=['-h', '--help']))
@click.version_option(version=latentstream.__version__)
@click.option('-v', '--verbose', count=True,
              help='Log progress (-v) or debugging detail (-vv)')
def cli(verbose):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv=None):
    """Run the command line and return its exit code

    0 on success, 1 on a usage error and 2 when the command fails.
    """
    try:
        rv = cli.main(args=argv, prog_name='latentstream',
                      standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    except (LatentStreamException, OSError, ValueError) as e:
        click.echo('Error: %s' % e, err=True)
        return 2
    return rv if isinstance(rv, int) else 0


import_module('latentstream.cli.trainer')
import_module('latentstream.cli.distiller')
import_module('latentstream.cli.generator')
import_module('latentstream.cli.context_bench')
import_module('latentstream.cli.action_quantizer')
import_module('latentstream.cli.nullspace_projector')
