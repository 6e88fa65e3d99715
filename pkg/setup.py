#!/usr/bin/env python
# -*- coding: utf-8 -*-

# ----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# ----------------------------------------------------------------------------

import sys

from setuptools import setup, find_packages
from setuptools.command.test import test as TestCommand

__author__ = "The latentstream Development Team"
__copyright__ = "Copyright 2025-2026, The latentstream Development Team"
__credits__ = ["The latentstream Development Team"]
__license__ = "BSD"
__version__ = "0.1.0-dev"


# derived from https://docs.pytest.org/en/3.8.0/goodpractices.html
class PyTest(TestCommand):
    user_options = [("pytest-args=", "a", "Arguments to pass to pytest")]

    def initialize_options(self):
        TestCommand.initialize_options(self)
        self.pytest_args = ""

    def run_tests(self):
        import shlex

        # import here, cause outside the eggs aren't loaded
        import pytest

        errno = pytest.main(shlex.split(self.pytest_args))
        sys.exit(errno)


long_description = """latentstream: long latent video from a small diffusion
transformer

Generates latent video chunk by chunk while the history is compressed into a
bounded number of context tokens, with toy training, few-step distillation,
an action vocabulary and a context-cost benchmark.
"""

classes = """
    Development Status :: 3 - Alpha
    License :: OSI Approved :: BSD License
    Topic :: Scientific/Engineering :: Artificial Intelligence
    Topic :: Software Development :: Libraries :: Python Modules
    Programming Language :: Python
    Programming Language :: Python :: 3.9
    Programming Language :: Python :: 3.10
    Programming Language :: Python :: 3.11
    Programming Language :: Python :: Implementation :: CPython
    Operating System :: OS Independent
    Operating System :: POSIX :: Linux
    Operating System :: MacOS :: MacOS X
"""
classifiers = [s.strip() for s in classes.split('\n') if s]

install_requires = ["click >= 7.0", "numpy >= 1.20", "scipy >= 1.6",
                    "pandas >= 1.2", "torch >= 2.1", "einops >= 0.6",
                    "tqdm >= 4.50"]

setup(name='latentstream',
      version=__version__,
      description='Compressed-context chunked latent video diffusion',
      long_description=long_description,
      license=__license__,
      author=__author__,
      packages=find_packages(),
      tests_require=['pytest',
                     'pytest-cov',
                     'flake8'],
      include_package_data=True,
      package_data={'latentstream': ['support_files/*.json',
                                     'tests/test_cli/test_data/*']},
      python_requires='>=3.9',
      install_requires=install_requires,
      extras_require={'test': ['pytest', 'pytest-cov', 'flake8']},
      classifiers=classifiers,
      cmdclass={"pytest": PyTest},
      entry_points='''
          [console_scripts]
          latentstream=latentstream.cli:main
      ''')
