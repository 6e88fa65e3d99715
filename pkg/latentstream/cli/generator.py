# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import click

from latentstream.actions import action_from_dict
from latentstream.cli import cli
from latentstream.cli.util import (config_option, seed_option, load_config,
                                   read_jsonl)
from latentstream.latent import VideoLatent
from latentstream.model import load_checkpoint
from latentstream.stream import GenerationSession, run_session
from latentstream.tensor import read_ytf
from latentstream.tscm import LadderSchedule


@cli.command(name='generate')
@click.option('-c', '--checkpoint', required=True,
              type=click.Path(exists=True, file_okay=False),
              help='Checkpoint directory written by train-toy or distill')
@click.option('-a', '--actions', 'actions_fp', default=None,
              type=click.Path(exists=True, dir_okay=False),
              help='JSON-lines action script, one entry per chunk')
@click.option('-n', '--chunks', default=None, type=int,
              help='Chunks to generate [default: one per action, at least 1]')
@click.option('--steps', default=4, type=int, show_default=True,
              help='Denoising steps per chunk')
@click.option('--strategy', default='tscm', show_default=True,
              help='Context strategy: full, sliding:<w>, spatial or tscm')
@click.option('--event', default='', help='Initial event description')
@click.option('--init', 'init_fp', default=None,
              type=click.Path(exists=True, dir_okay=False),
              help='YTF latent with the initial frame(s)')
@click.option('-o', '--output-dir', required=True,
              type=click.Path(file_okay=False, writable=True),
              help='Directory for chunk_<i>.ytf files and session.json')
@config_option
@seed_option
def generate_cmd(checkpoint, actions_fp, chunks, steps, strategy, event,
                 init_fp, output_dir, config_fp, seed):
    """Generate latent video chunk by chunk.

    Each action script line holds ``{"text": ...}``, ``{"human": "W",
    "camera": "→"}`` or a motion sample, optionally with an ``"event"`` that
    replaces the event description from that chunk on. The last action
    repeats when there are more chunks than actions.

    Example usage:

    $ latentstream generate -c ckpt -a actions.jsonl -n 6 --steps 4
    --seed 7 -o out
    """
    config = load_config(config_fp)
    script = read_jsonl(actions_fp) if actions_fp else []
    session = _generate(checkpoint, script, chunks, steps, strategy, event,
                        init_fp, output_dir, seed, config)
    click.echo('wrote %d chunks to %s' % (len(session.chunks), output_dir))


def parse_script(script, dead_zone_t, dead_zone_r):
    """Split script entries into per-chunk actions and event switches"""
    actions, events = [], {}
    for i, doc in enumerate(script):
        doc = dict(doc)
        if 'event' in doc:
            events[i] = doc.pop('event')
        actions.append(action_from_dict(doc, dead_zone_t, dead_zone_r)
                       if doc else None)
    return actions, events


def _generate(checkpoint, script, chunks, steps, strategy, event, init_fp,
              output_dir, seed, config):
    model = load_checkpoint(checkpoint)
    opts = config.get('actions', {})
    actions, events = parse_script(script, opts.get('dead_zone_t', 0.05),
                                   opts.get('dead_zone_r', 1.0))
    if chunks is None:
        chunks = max(len(actions), 1)
    init = VideoLatent(read_ytf(init_fp)) if init_fp else None

    session = GenerationSession(model, strategy, seed=seed, event=event,
                                ladder=LadderSchedule.from_dict(
                                    config.get('ladder', {})),
                                steps=steps, init=init)
    return run_session(session, chunks, actions, output_dir, events)
