# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import io
import json

import click

from latentstream.actions import (MotionSample, action_histogram,
                                  quantize_trajectory, render_action_text)
from latentstream.cli import cli
from latentstream.cli.util import config_option, load_config, read_jsonl
from latentstream.exception import ConfigError


@cli.command(name='quantize-actions')
@click.option('-i', '--input', 'input_fp', required=True,
              type=click.Path(exists=True, dir_okay=False),
              help='JSON-lines motion samples or camera-to-world poses')
@click.option('--window', default=None, type=int,
              help='Samples averaged per action [default: from config]')
@click.option('--dead-zone-t', default=None, type=float,
              help='Translation below this is ignored [default: from config]')
@click.option('--dead-zone-r', default=None, type=float,
              help='Rotation in degrees below this is ignored '
                   '[default: from config]')
@click.option('-o', '--output', 'output_fp', default=None,
              type=click.Path(dir_okay=False, writable=True),
              help='Destination [default: stdout]')
@click.option('--summary', is_flag=True, default=False,
              help='Write a CSV histogram of the actions instead')
@config_option
def quantize_actions_cmd(input_fp, window, dead_zone_t, dead_zone_r,
                         output_fp, summary, config_fp):
    """Turn camera motion into discrete keyboard and camera actions.

    Input lines hold a motion sample, ``{"translation": [dx, dy],
    "rotation": [yaw, pitch]}``, or a pose, ``{"c2w": [[...], ...]}``, in
    which case consecutive poses give the motion. Output lines hold
    ``human``, ``camera`` and the rendered ``text`` of each action.

    Example usage:

    $ latentstream quantize-actions -i poses.jsonl --window 4 -o
    actions.jsonl
    """
    opts = load_config(config_fp)['actions']
    window = opts.get('window', 1) if window is None else window
    if dead_zone_t is None:
        dead_zone_t = opts.get('dead_zone_t', 0.05)
    if dead_zone_r is None:
        dead_zone_r = opts.get('dead_zone_r', 1.0)

    result = _quantize_actions(read_jsonl(input_fp), window, dead_zone_t,
                               dead_zone_r, summary)
    if output_fp is None:
        click.echo(result, nl=False)
    else:
        with io.open(output_fp, 'w', encoding='utf-8') as f:
            f.write(result)


def motion_samples(records):
    """Motion samples from records that are all samples or all poses"""
    poses = ['c2w' in r for r in records]
    if any(poses) and not all(poses):
        raise ConfigError("Cannot mix poses and motion samples")
    if records and all(poses):
        return [MotionSample.from_pose_pair(a['c2w'], b['c2w'])
                for a, b in zip(records, records[1:])]
    return [MotionSample.from_dict(r) for r in records]


def _quantize_actions(records, window=1, dead_zone_t=0.05, dead_zone_r=1.0,
                      summary=False):
    """Quantized actions as JSON lines, or their histogram as CSV"""
    pairs = quantize_trajectory(motion_samples(records), window, dead_zone_t,
                                dead_zone_r)
    if summary:
        return action_histogram(pairs).to_csv(index=False)
    return ''.join(json.dumps({'human': h.value, 'camera': c.value,
                               'text': render_action_text(h, c)},
                              ensure_ascii=False) + '\n'
                   for h, c in pairs)
