#!/usr/bin/env python

r"""Recoverable tensor errors

Some conditions are fatal in one setting and expected in another: a NaN
after a public operation is always a bug, while a region that needs padding
is routine for coarse history rates. Each such condition is a named error
type with a test and a state telling `errcheck` what to do when the test
fires.

nonfinite : 'raise'
    A tensor produced by a public operation holds NaN or Inf.

nonbinary : 'raise'
    A condition mask holds values other than 0 and 1.

padding : 'ignore'
    A region is not a multiple of its patch rate and was replicate-padded.

emptyctx : 'ignore'
    A context strategy kept no history tokens.

States are ``'raise'``, ``'ignore'``, ``'warn'``, ``'log'`` (a warning on the
``latentstream.err`` logger) and ``'call'`` (a function set with
`seterrcall`).

Examples
--------
>>> from latentstream.err import errstate, errcheck
>>> with errstate(padding='raise'):
...     errcheck(((1, 3, 3), (1, 2, 2)), 'padding')
Traceback (most recent call last):
...
PatchRateError: Region (1, 3, 3) is not a multiple of rate (1, 2, 2)
"""

# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------

import logging
import warnings
from contextlib import contextmanager
from dataclasses import dataclass

import torch

from latentstream.exception import (NonFiniteError, MaskError,
                                    PatchRateError, LatentStreamException)

logger = logging.getLogger(__name__)

STATES = frozenset(['raise', 'ignore', 'warn', 'log', 'call'])


def _test_nonfinite(t):
    return not bool(torch.isfinite(t).all())


def _test_nonbinary(m):
    return not bool(((m == 0) | (m == 1)).all())


def _test_padding(item):
    """``item`` is a ``(dims, rate)`` pair"""
    dims, rate = item
    return any(d % r for d, r in zip(dims, rate))


def _test_emptyctx(tokens):
    return len(tokens) == 0


def _describe_nonfinite(t):
    bad = int((~torch.isfinite(t)).sum())
    return "Tensor of shape %s holds %d NaN or Inf entries" % (
        tuple(t.shape), bad)


def _describe_padding(item):
    dims, rate = item
    return "Region %s is not a multiple of rate %s" % (tuple(dims),
                                                       tuple(rate))


@dataclass
class ErrorType:
    """A named condition and the responses available for it

    Parameters
    ----------
    message : str
        Fallback message.
    test : callable
        ``test(item)`` is True when the condition holds.
    exception : type
        Raised in state ``'raise'``.
    describe : callable, optional
        ``describe(item)`` builds an item-specific message.
    callback : callable, optional
        Called with the item in state ``'call'``.
    """
    message: str
    test: object
    exception: type = LatentStreamException
    describe: object = None
    callback: object = None

    def format(self, item):
        return self.message if self.describe is None else self.describe(item)


class ErrorProfile(object):
    """Registered error types and the state each one is in"""

    def __init__(self):
        self._types = {}
        self._state = {}

    def __contains__(self, errtype):
        return errtype in self._types

    def _require(self, errtype):
        if errtype not in self._types:
            raise KeyError("Unknown error type: %s" % errtype)
        return self._types[errtype]

    def register(self, errtype, msg, state, test, callback=None,
                 exception=LatentStreamException, describe=None):
        """Add an error type

        Raises
        ------
        KeyError
            If ``errtype`` is taken or ``state`` is not a known state.
        """
        if errtype in self:
            raise KeyError("Already registered: %s" % errtype)
        if state not in STATES:
            raise KeyError("Unknown state: %s" % state)
        self._types[errtype] = ErrorType(msg, test, exception, describe,
                                         callback)
        self._state[errtype] = state

    def unregister(self, errtype):
        """Remove an error type, returning its `ErrorType` and state"""
        kind = self._require(errtype)
        del self._types[errtype]
        return kind, self._state.pop(errtype)

    @property
    def state(self):
        return self._state

    @state.setter
    def state(self, new_state):
        if 'all' in new_state:
            updates = {err: new_state['all'] for err in self._state}
        else:
            updates = dict(new_state)
        for errtype, value in updates.items():
            if value not in STATES:
                raise KeyError("Unknown state type: %s" % value)
            self._require(errtype)
        self._state.update(updates)

    def test(self, item, *errtypes):
        """Respond to the first listed error type whose test fires

        Returns
        -------
        object
            An exception instance in state ``'raise'``, the callback result
            in state ``'call'``, None otherwise.
        """
        for errtype in errtypes or list(self._types):
            kind = self._types.get(errtype)
            if kind is not None and kind.test(item):
                return self._respond(errtype, kind, item)
        return None

    def _respond(self, errtype, kind, item):
        state = self._state[errtype]
        if state == 'raise':
            return kind.exception(kind.format(item))
        if state == 'warn':
            warnings.warn(kind.format(item))
        elif state == 'log':
            logger.warning("%s: %s", errtype, kind.format(item))
        elif state == 'call' and kind.callback is not None:
            return kind.callback(item)
        return None

    def setcall(self, errtype, func):
        """Replace the callback of ``errtype``, returning the previous one"""
        kind = self._require(errtype)
        old, kind.callback = kind.callback, func
        return old

    def getcall(self, errtype):
        return self._require(errtype).callback


__errprof = ErrorProfile()
__errprof.register('nonfinite', "Tensor contains NaN or Inf entries",
                   'raise', _test_nonfinite, exception=NonFiniteError,
                   describe=_describe_nonfinite)
__errprof.register('nonbinary', "Condition mask must only hold 0 and 1",
                   'raise', _test_nonbinary, exception=MaskError)
__errprof.register('padding', "Region is not a multiple of the patch rate",
                   'ignore', _test_padding, exception=PatchRateError,
                   describe=_describe_padding)
__errprof.register('emptyctx', "Context strategy kept no history tokens",
                   'ignore', _test_emptyctx)


def geterr():
    """Copy of the current state of every error type"""
    return __errprof.state.copy()


def seterr(**kwargs):
    """Set error states by type name, or all of them with ``all=``

    Returns
    -------
    dict
        The previous states, suitable for ``seterr(**old)``.

    See also
    --------
    errstate
    """
    old_state = __errprof.state.copy()
    __errprof.state = kwargs
    return old_state


def seterrcall(errtype, func):
    """Set the function state ``'call'`` runs for ``errtype``

    Raises
    ------
    KeyError
        If ``errtype`` is not registered.
    """
    return __errprof.setcall(errtype, func)


def geterrcall(errtype):
    return __errprof.getcall(errtype)


def errcheck(item, *errtypes):
    """Test ``item`` against ``errtypes`` (all types when none are given)

    An exception produced by state ``'raise'`` is raised here so that the
    traceback ends at the caller.
    """
    ret = __errprof.test(item, *errtypes)
    if isinstance(ret, Exception):
        raise ret
    return ret


@contextmanager
def errstate(**kwargs):
    """Apply `seterr` for the duration of a ``with`` block"""
    old_state = seterr(**kwargs)
    try:
        yield
    finally:
        seterr(**old_state)
