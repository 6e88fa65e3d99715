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

from latentstream.exception import ConfigError
from latentstream.util import load_latentstream_config


config_option = click.option(
    '--config', 'config_fp', default=None,
    type=click.Path(exists=True, dir_okay=False),
    help='JSON file overriding the model, ladder, training, distill and '
         'actions settings')

seed_option = click.option('--seed', default=0, type=int, show_default=True,
                           help='Seed for every random draw')

quiet_option = click.option('-q', '--quiet', is_flag=True, default=False,
                            help='Hide progress bars')


def load_config(config_fp=None):
    """Layered configuration with ``config_fp`` applied last"""
    return load_latentstream_config((config_fp,) if config_fp else ())


def merge_overrides(section, **overrides):
    """``section`` updated with every override that is not None"""
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def read_jsonl(fp):
    """Records of a JSON-lines file, blank lines skipped

    Raises
    ------
    ConfigError
        With the line number of the first malformed record.
    """
    records = []
    with io.open(fp, encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError as e:
                raise ConfigError("%s:%d is not valid JSON: %s"
                                  % (fp, lineno, e))
            if not isinstance(doc, dict):
                raise ConfigError("%s:%d must hold a JSON object"
                                  % (fp, lineno))
            records.append(doc)
    return records


def parse_floats(ctx, param, value):
    """click callback for comma separated numbers"""
    if value is None:
        return None
    try:
        return tuple(float(v) for v in value.split(','))
    except ValueError:
        raise click.BadParameter("expected comma separated numbers, got %r"
                                 % value)
