"""Structural interfaces shared by the model core, the scene generator and the evaluator."""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np


class SupervisedFrame(Protocol):
    """A frame with exact ground truth (world frame = first camera).

    ``scenegen.RenderedFrame`` satisfies it; training and evaluation only
    ever read these attributes.
    """

    image: np.ndarray
    depth: np.ndarray
    points_global: np.ndarray
    points_self: np.ndarray
    valid: np.ndarray
    dynamic: np.ndarray
    quat: np.ndarray
    trans: np.ndarray
    intrinsics: np.ndarray


Clip = Sequence[SupervisedFrame]
