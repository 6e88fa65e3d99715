# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import click

from latentstream.cli import cli
from latentstream.cli.util import config_option, seed_option, load_config
from latentstream.exception import ConfigError
from latentstream.model import DitConfig
from latentstream.stream import ContextStrategy, bench_context
from latentstream.tscm import LadderSchedule


def _parse_strategies(ctx, param, value):
    try:
        return [ContextStrategy.parse(s) for s in value.split(',') if s]
    except ConfigError as e:
        raise click.BadParameter(str(e))


@cli.command(name='bench-context')
@click.option('--strategies', default='full,tscm', show_default=True,
              callback=_parse_strategies,
              help='Comma separated: full, sliding:<w>, spatial, tscm')
@click.option('--blocks', default=12, type=int, show_default=True,
              help='Number of video blocks (chunks) to simulate')
@click.option('-o', '--out', 'output_fp', default=None,
              type=click.Path(dir_okay=False, writable=True),
              help='CSV destination [default: stdout]')
@click.option('--no-measure', is_flag=True, default=False,
              help='Skip the timed forward passes; wall_ms is 0')
@click.option('--workers', default=1, type=int, show_default=True,
              help='Strategies benchmarked in parallel threads')
@config_option
@seed_option
def bench_context_cmd(strategies, blocks, output_fp, no_measure, workers,
                      config_fp, seed):
    """Context tokens and attention cost per block for each strategy.

    Writes one CSV row per strategy and block with the columns
    strategy, block_index, context_tokens, attn_madds and wall_ms.

    Example usage:

    $ latentstream bench-context --strategies full,tscm --blocks 12
    --out bench.csv
    """
    if blocks < 2:
        raise click.BadParameter('at least 2 blocks are needed',
                                 param_hint='--blocks')
    config = load_config(config_fp)
    df = _bench_context(strategies, blocks, config, seed, not no_measure,
                        workers)
    if output_fp is None:
        click.echo(df.to_csv(index=False), nl=False)
    else:
        df.to_csv(output_fp, index=False)


def _bench_context(strategies, blocks, config, seed=0, measure=True,
                   workers=1):
    cfg = DitConfig.from_dict(config.get('model', {}))
    sched = LadderSchedule.from_dict(config.get('ladder', {}))
    return bench_context(strategies, blocks, cfg, sched, seed=seed,
                         measure=measure, workers=workers)
