"""Small configurations and scenes shared by the tests."""

from __future__ import annotations

import dataclasses
from functools import lru_cache
from typing import List

from dualmem.config import (
    DecoderConfig,
    EvalConfig,
    ModelConfig,
    PsmConfig,
    RunConfig,
    SceneConfig,
    TcaConfig,
    TdmConfig,
    TrainConfig,
)
from scenegen import RenderedFrame, generate_scene, render_sequence


def toy_config(frames: int = 6, **train) -> RunConfig:
    """16x16 images, 4x4 token grids, one layer everywhere."""
    return RunConfig(
        seed=0,
        model=ModelConfig(image_height=16, image_width=16, patch=4, dim=12, head_dim=6, encoder_layers=1, mlp_ratio=2),
        tca=TcaConfig(window=2, layers=1),
        tdm=TdmConfig(window=2, levels=2, channels=12, layers=1),
        psm=PsmConfig(capacity=4, channels=12, layers=1),
        decoder=DecoderConfig(stages=1),
        train=dataclasses.replace(TrainConfig(steps=2, stage2_steps=2, stage1_length=2, stage2_min=2, stage2_max=3), **train),
        scene=SceneConfig(width=16, height=16, frames=frames),
        eval=EvalConfig(recon_views=3, holdout=1),
    ).validate()


@lru_cache(maxsize=None)
def _frames(seed: int, frames: int) -> tuple:
    cfg = toy_config(frames=frames)
    return render_sequence(generate_scene(seed, cfg.scene)).frames


def toy_frames(seed: int = 0, frames: int = 6) -> List[RenderedFrame]:
    return list(_frames(seed, frames))
