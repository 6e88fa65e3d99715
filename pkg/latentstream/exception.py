#!/usr/bin/env python
"""Define latentstream exceptions"""

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

__author__ = "The latentstream Development Team"
__copyright__ = "Copyright 2025-2026, The latentstream Development Team"
__credits__ = ["The latentstream Development Team"]
__license__ = "BSD"


class LatentStreamException(Exception):
    pass


class ShapeError(LatentStreamException, ValueError):
    pass


class NonFiniteError(LatentStreamException):
    pass


class ConvergenceError(LatentStreamException):
    pass


class MaskError(LatentStreamException, ValueError):
    pass


class DiffusionError(LatentStreamException, ValueError):
    pass


class YtfFormatError(LatentStreamException):
    pass


class CheckpointError(LatentStreamException):
    pass


class ConfigError(LatentStreamException, ValueError):
    pass


class PatchRateError(LatentStreamException, ValueError):
    pass


class MissingWeightsError(LatentStreamException, KeyError):
    def __init__(self, rate):
        super(MissingWeightsError, self).__init__()
        self.rate = rate
        self.args = ("No patch weights available for rate %s." % (rate,),)

    def __str__(self):
        return self.args[0]


class ActionParseError(LatentStreamException, ValueError):
    def __init__(self, text, position, reason="unrecognized action text"):
        super(ActionParseError, self).__init__()
        self.text = text
        self.position = position
        snippet = text[position:position + 24]
        self.args = ("%s at position %d: %r" % (reason, position, snippet),)
