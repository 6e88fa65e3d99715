#!/usr/bin/env python
# -*- coding: utf-8 -*-
# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import os
import io
import json
import inspect
import logging

from hashlib import md5, blake2b
from os import getenv
from os.path import abspath, dirname, exists, join

from latentstream.exception import ConfigError

__author__ = "The latentstream Development Team"
__copyright__ = "Copyright 2025-2026, The latentstream Development Team"
__credits__ = ["The latentstream Development Team"]
__license__ = "BSD"
__version__ = "0.1.0-dev"

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = ('model', 'ladder', 'training', 'distill', 'actions')


def load_latentstream_config(extra_fps=()):
    """Returns latentstream configuration read in from file.

    Layers are read least important first: the packaged defaults, the file
    named by ``LATENTSTREAM_CONFIG_FP``, ``~/.latentstream.json`` and finally
    any ``extra_fps`` (e.g. the ``--config`` option of the CLI).

    Parameters
    ----------
    extra_fps : iterable of str, optional
        Additional JSON files, most important last.

    Returns
    -------
    dict
        Mapping of section name to a dict of overrides.
    """
    config_fps = [join(get_latentstream_project_dir(), 'latentstream',
                       'support_files', 'latentstream_config.json')]

    config_env_fp = getenv('LATENTSTREAM_CONFIG_FP')
    if config_env_fp:
        config_fps.append(config_env_fp)

    home_dir = getenv('HOME')
    if home_dir:
        config_fps.append(join(home_dir, '.latentstream.json'))

    config_fps.extend(fp for fp in extra_fps if fp)

    config_files = []
    for config_fp in config_fps:
        if exists(config_fp):
            logger.debug("reading configuration layer %s", config_fp)
            config_files.append(io.open(config_fp, encoding='utf-8'))
        elif config_fp in extra_fps:
            raise ConfigError("Configuration file not found: %s" % config_fp)

    try:
        return parse_latentstream_config_files(config_files)
    finally:
        for f in config_files:
            f.close()


def get_latentstream_project_dir():
    """Returns the directory holding the latentstream package."""
    return dirname(dirname(abspath(__file__)))


def parse_latentstream_config_files(config_files):
    """Parses files in (ordered!) list of config_files.

    The order of files must be least important to most important. Values
    defined in earlier files are overwritten key by key, within each section,
    if the same values are defined in later files.
    """
    results = {section: {} for section in CONFIG_SECTIONS}
    for config_file in config_files:
        for section, values in parse_latentstream_config_file(
                config_file).items():
            results[section].update(values)

    return results


def parse_latentstream_config_file(config_file):
    """Parses a single JSON configuration file.

    Raises
    ------
    ConfigError
        If the document is not a JSON object of known sections.
    """
    try:
        doc = json.load(config_file)
    except ValueError as e:
        raise ConfigError("Malformed configuration: %s" % e)

    if not isinstance(doc, dict):
        raise ConfigError("Configuration must be a JSON object")

    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError("Unknown configuration sections: %s" %
                          ', '.join(sorted(unknown)))

    for section, values in doc.items():
        if not isinstance(values, dict):
            raise ConfigError("Section '%s' must be a JSON object" % section)
    return doc


def derive_seed(*parts):
    """Derive a stable 63-bit seed from arbitrary printable parts

    Examples
    --------
    >>> derive_seed(7, 'chunk', 0) == derive_seed(7, 'chunk', 0)
    True
    """
    digest = blake2b('\x1f'.join(str(p) for p in parts).encode('utf-8'),
                     digest_size=8).digest()
    return int.from_bytes(digest, 'little') & (2 ** 63 - 1)


def safe_md5(open_file, block_size=2 ** 20):
    """Computes an md5 sum of a binary file handle without loading it into
    memory
    """
    result = md5()
    if not hasattr(open_file, 'read'):
        raise TypeError("safe_md5 can only handle a file handle but recieved "
                        "%r." % type(open_file))

    data = open_file.read(block_size)
    while data:
        result.update(data)
        data = open_file.read(block_size)
    return result.hexdigest()


def get_data_path(fn):
    """Return path to filename ``fn`` in the data folder.

    During testing it is often necessary to load data files. This
    function returns the full path to files in the ``test_data`` subfolder of
    the module where ``get_data_path(fn)`` is called.

    Notes
    -----
    The requested path may not point to an existing file, as its
    existence is not checked.

    This method was adapted from scikit-bio, specifically `skbio.util.testing`.
    """
    callers_filename = inspect.getouterframes(inspect.currentframe())[1][1]
    path = os.path.dirname(os.path.abspath(callers_filename))
    data_path = os.path.join(path, 'test_data', fn)
    return data_path


def is_ytf_file(fp):
    """Guess if a file is a YTF tensor file.

    Parameters
    ----------
    fp : str
        File name

    Returns
    -------
    bool
        Whether the file starts with a YTF JSON header
    """
    with open(fp, 'rb') as f:
        return f.read(9) == b'{"shape":'
