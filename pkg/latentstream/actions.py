#!/usr/bin/env python
# -*- coding: utf-8 -*-
# -----------------------------------------------------------------------------
# Copyright (c) 2025-2026, The latentstream Development Team.
#
# Distributed under the terms of the Modified BSD License.
#
# The full license is in the file COPYING.txt, distributed with this software.
# -----------------------------------------------------------------------------
r"""Action grammar

Continuous camera motion is quantized into a keyboard-style human movement
token and a mouse-style camera rotation token, each with a fixed sentence.
The pair renders to the action description fed to the text embedder.

Examples
--------
>>> from latentstream.actions import (HumanToken, CameraToken,
...                                   render_action_text, parse_action_text)
>>> render_action_text(HumanToken.FORWARD, CameraToken.RIGHT)
'Camera moves forward (W). Camera turns right (→).'
>>> parse_action_text('Camera  moves forward (W).Camera turns right (R).')
(<HumanToken.FORWARD: 'W'>, <CameraToken.RIGHT: '→'>)
"""

import re
import math
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from latentstream.exception import ActionParseError

logger = logging.getLogger(__name__)

DEAD_ZONE_T = 0.05
DEAD_ZONE_R = 1.0


class HumanToken(Enum):
    FORWARD = 'W'
    LEFT = 'A'
    BACKWARD = 'S'
    RIGHT = 'D'
    FORWARD_LEFT = 'W+A'
    FORWARD_RIGHT = 'W+D'
    BACKWARD_LEFT = 'S+A'
    BACKWARD_RIGHT = 'S+D'
    STILL = 'None'

    @property
    def sentence(self):
        return HUMAN_SENTENCES[self]

    @property
    def symbol(self):
        """Symbol shown inside the sentence parentheses"""
        return '·' if self is HumanToken.STILL else self.value


class CameraToken(Enum):
    RIGHT = '→'
    LEFT = '←'
    UP = '↑'
    DOWN = '↓'
    UP_RIGHT = '↑→'
    DOWN_RIGHT = '↓→'
    DOWN_LEFT = '↓←'
    STILL = '·'

    @property
    def sentence(self):
        return CAMERA_SENTENCES[self]

    @property
    def symbol(self):
        return self.value


HUMAN_SENTENCES = {
    HumanToken.FORWARD: 'Camera moves forward (W).',
    HumanToken.LEFT: 'Camera moves left (A).',
    HumanToken.BACKWARD: 'Camera moves backward (S).',
    HumanToken.RIGHT: 'Camera moves right (D).',
    HumanToken.FORWARD_LEFT: 'Camera moves forward and left (W+A).',
    HumanToken.FORWARD_RIGHT: 'Camera moves forward and right (W+D).',
    HumanToken.BACKWARD_RIGHT: 'Camera moves backward and right (S+D).',
    HumanToken.BACKWARD_LEFT: 'Camera moves backward and left (S+A).',
    HumanToken.STILL: 'Camera stands still (·).',
}

CAMERA_SENTENCES = {
    CameraToken.RIGHT: 'Camera turns right (→).',
    CameraToken.LEFT: 'Camera turns left (←).',
    CameraToken.UP: 'Camera tilts up (↑).',
    CameraToken.DOWN: 'Camera tilts down (↓).',
    CameraToken.UP_RIGHT: 'Camera tilts up and turns right (↑→).',
    CameraToken.DOWN_RIGHT: 'Camera tilts down and turns right (↓→).',
    CameraToken.DOWN_LEFT: 'Camera tilts down and turns left (↓←).',
    CameraToken.STILL: 'Camera remains still (·).',
}

_HUMAN_COMBOS = {
    ('W', None): HumanToken.FORWARD,
    ('S', None): HumanToken.BACKWARD,
    (None, 'D'): HumanToken.RIGHT,
    (None, 'A'): HumanToken.LEFT,
    ('W', 'A'): HumanToken.FORWARD_LEFT,
    ('W', 'D'): HumanToken.FORWARD_RIGHT,
    ('S', 'A'): HumanToken.BACKWARD_LEFT,
    ('S', 'D'): HumanToken.BACKWARD_RIGHT,
    (None, None): HumanToken.STILL,
}

_CAMERA_COMBOS = {
    (None, '→'): CameraToken.RIGHT,
    (None, '←'): CameraToken.LEFT,
    ('↑', None): CameraToken.UP,
    ('↓', None): CameraToken.DOWN,
    ('↑', '→'): CameraToken.UP_RIGHT,
    ('↓', '→'): CameraToken.DOWN_RIGHT,
    ('↓', '←'): CameraToken.DOWN_LEFT,
    (None, None): CameraToken.STILL,
}

_CAMERA_ALIASES = {'R': '→', 'L': '←', 'U': '↑', 'D': '↓', '.': '·'}
_HUMAN_ALIASES = {'.': '·', 'NONE': '·'}

_SENTENCE_RE = re.compile(r'\s*Camera\s+(?P<phrase>[A-Za-z]+(?:\s+[A-Za-z]+)*)'
                          r'\s*\(\s*(?P<symbol>[^()]*?)\s*\)\s*\.?')


def _phrase_key(sentence):
    m = _SENTENCE_RE.fullmatch(sentence)
    return ' '.join(m.group('phrase').lower().split())


_HUMAN_BY_PHRASE = {_phrase_key(s): t for t, s in HUMAN_SENTENCES.items()}
_CAMERA_BY_PHRASE = {_phrase_key(s): t for t, s in CAMERA_SENTENCES.items()}


@dataclass(frozen=True)
class MotionSample:
    """Camera motion over one window

    Translation in meters along the camera's right and forward axes, rotation
    in degrees (positive yaw turns right, positive pitch tilts up).
    """
    dx_right: float = 0.0
    dy_forward: float = 0.0
    dyaw: float = 0.0
    dpitch: float = 0.0

    def __post_init__(self):
        for name in ('dx_right', 'dy_forward', 'dyaw', 'dpitch'):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError("MotionSample.%s must be finite" % name)
            object.__setattr__(self, name, value)

    def __neg__(self):
        return MotionSample(-self.dx_right, -self.dy_forward, -self.dyaw,
                            -self.dpitch)

    @classmethod
    def from_dict(cls, doc):
        """Read ``{"translation": [dx, dy], "rotation": [yaw, pitch]}`` or the
        flat field names"""
        if 'translation' in doc or 'rotation' in doc:
            dx, dy = doc.get('translation', (0.0, 0.0))
            yaw, pitch = doc.get('rotation', (0.0, 0.0))
            return cls(dx, dy, yaw, pitch)
        return cls(**{k: doc[k] for k in ('dx_right', 'dy_forward', 'dyaw',
                                          'dpitch') if k in doc})

    def to_dict(self):
        return {'translation': [self.dx_right, self.dy_forward],
                'rotation': [self.dyaw, self.dpitch]}

    @classmethod
    def from_pose_pair(cls, c2w_a, c2w_b):
        """Relative motion between two 4x4 camera-to-world poses

        The translation and rotation are expressed in the frame of the first
        camera (x right, y down, z forward).
        """
        rel = np.linalg.inv(np.asarray(c2w_a, dtype=float)) @ \
            np.asarray(c2w_b, dtype=float)
        pitch, yaw, _ = Rotation.from_matrix(rel[:3, :3]).as_euler(
            'xyz', degrees=True)
        return cls(dx_right=rel[0, 3], dy_forward=rel[2, 3], dyaw=yaw,
                   dpitch=pitch)


def _axis(value, dead_zone, positive, negative):
    if value > dead_zone:
        return positive
    if value < -dead_zone:
        return negative
    return None


def quantize_translation(m, dead_zone=DEAD_ZONE_T):
    """Quantize translation into a `HumanToken`

    Examples
    --------
    >>> quantize_translation(MotionSample(0.7, 0.7), 0.1)
    <HumanToken.FORWARD_RIGHT: 'W+D'>
    """
    if dead_zone < 0:
        raise ValueError("dead_zone must be non-negative")
    forward = _axis(m.dy_forward, dead_zone, 'W', 'S')
    side = _axis(m.dx_right, dead_zone, 'D', 'A')
    return _HUMAN_COMBOS[(forward, side)]


def quantize_rotation(m, dead_zone_deg=DEAD_ZONE_R):
    """Quantize rotation into a `CameraToken`

    Up-and-left has no token; it resolves to whichever of pitch and yaw moved
    more, yaw on ties.
    """
    if dead_zone_deg < 0:
        raise ValueError("dead_zone_deg must be non-negative")
    vertical = _axis(m.dpitch, dead_zone_deg, '↑', '↓')
    horizontal = _axis(m.dyaw, dead_zone_deg, '→', '←')

    if (vertical, horizontal) not in _CAMERA_COMBOS:
        if abs(m.dpitch) > abs(m.dyaw):
            horizontal = None
        else:
            vertical = None
    return _CAMERA_COMBOS[(vertical, horizontal)]


def render_action_text(h, c):
    """Canonical action description of a token pair"""
    return '%s %s' % (HUMAN_SENTENCES[h], CAMERA_SENTENCES[c])


def _normalize_symbol(symbol, aliases):
    symbol = ''.join(symbol.split())
    if symbol.upper() in aliases:
        return aliases[symbol.upper()]
    return ''.join(aliases.get(ch.upper(), ch) for ch in symbol)


def parse_action_text(s):
    """Inverse of `render_action_text`

    Whitespace between words may vary, the trailing periods are optional and
    camera symbols may use the ASCII aliases R, L, U and D.

    Raises
    ------
    ActionParseError
        With the offset of the first character that could not be read.
    """
    pos = 0
    human = camera = None
    while pos < len(s) and (human is None or camera is None):
        if not s[pos:].strip():
            break
        m = _SENTENCE_RE.match(s, pos)
        if m is None:
            raise ActionParseError(s, pos + len(s[pos:]) - len(
                s[pos:].lstrip()))
        phrase = ' '.join(m.group('phrase').lower().split())
        symbol = m.group('symbol')

        if phrase in _HUMAN_BY_PHRASE and human is None:
            token = _HUMAN_BY_PHRASE[phrase]
            if _normalize_symbol(symbol, _HUMAN_ALIASES) != token.symbol:
                raise ActionParseError(s, m.start('symbol'),
                                       "symbol does not match movement")
            human = token
        elif phrase in _CAMERA_BY_PHRASE and camera is None:
            token = _CAMERA_BY_PHRASE[phrase]
            if _normalize_symbol(symbol, _CAMERA_ALIASES) != token.symbol:
                raise ActionParseError(s, m.start('symbol'),
                                       "symbol does not match rotation")
            camera = token
        else:
            raise ActionParseError(s, m.start('phrase'),
                                   "unexpected action phrase")
        pos = m.end()

    if s[pos:].strip():
        raise ActionParseError(s, pos, "trailing text")
    if human is None or camera is None:
        raise ActionParseError(s, len(s), "missing %s sentence"
                               % ('movement' if human is None else 'rotation'))
    return human, camera


def quantize_trajectory(samples, window=1, dead_zone_t=DEAD_ZONE_T,
                        dead_zone_r=DEAD_ZONE_R):
    """Average motion over consecutive windows and quantize each

    The final window may be shorter than ``window``.

    Returns
    -------
    list of (HumanToken, CameraToken)
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    samples = list(samples)
    pairs = []
    for start in range(0, len(samples), window):
        group = samples[start:start + window]
        arr = np.array([[s.dx_right, s.dy_forward, s.dyaw, s.dpitch]
                        for s in group])
        mean = MotionSample(*arr.mean(axis=0))
        pairs.append((quantize_translation(mean, dead_zone_t),
                      quantize_rotation(mean, dead_zone_r)))
    logger.debug("quantized %d samples into %d windows", len(samples),
                 len(pairs))
    return pairs


def all_action_pairs():
    """Every (HumanToken, CameraToken) pair, 9 x 8 of them"""
    return [(h, c) for h in HumanToken for c in CameraToken]


def action_histogram(pairs):
    """Frequency of each action pair

    Returns
    -------
    pandas.DataFrame
        Columns ``human, camera, count, fraction``, most frequent first.
    """
    counts = Counter((h.value, c.value) for h, c in pairs)
    total = sum(counts.values())
    df = pd.DataFrame([(h, c, n) for (h, c), n in counts.items()],
                      columns=['human', 'camera', 'count'])
    df['fraction'] = df['count'] / total if total else 0.0
    return df.sort_values(['count', 'human', 'camera'],
                          ascending=[False, True, True]).reset_index(drop=True)


def action_from_dict(doc, dead_zone_t=DEAD_ZONE_T, dead_zone_r=DEAD_ZONE_R):
    """Read one action script entry

    Accepts ``{"text": ...}`` with a rendered action description,
    ``{"human": "W", "camera": "→"}`` token values, or a motion sample as
    read by `MotionSample.from_dict`, which is quantized.

    Returns
    -------
    tuple of (HumanToken, CameraToken)
    """
    if 'text' in doc:
        return parse_action_text(doc['text'])
    if 'human' in doc or 'camera' in doc:
        try:
            return (HumanToken(doc.get('human', HumanToken.STILL.value)),
                    CameraToken(doc.get('camera', CameraToken.STILL.value)))
        except ValueError as e:
            raise ActionParseError(str(doc), 0, str(e))
    m = MotionSample.from_dict(doc)
    return quantize_translation(m, dead_zone_t), quantize_rotation(m,
                                                                   dead_zone_r)
