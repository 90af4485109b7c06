"""Full model: frame encoder, aggregator, both memories and the decoder.

Every ablation variant builds the same parameter registry from the same
seed; variants differ only in which pieces the streaming loop wires in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import Decoder
from .nn import Module, PatchEmbed, TokenGrid, TransformerStack
from .psm import StructureEncoder
from .seeding import make_rng
from .tca import TemporalContextAggregator
from .tdm import DynamicsEncoder
from .tensor import Tensor


@dataclass(frozen=True)
class Wiring:
    use_tca: bool = True
    use_tdm: bool = True
    use_psm: bool = True
    unified: bool = False

    @classmethod
    def for_variant(cls, variant: str) -> "Wiring":
        return {
            "no_tca": cls(use_tca=False),
            "no_tdm": cls(use_tdm=False),
            "no_psm": cls(use_psm=False),
            "unified": cls(unified=True),
        }.get(variant, cls())

    @property
    def builds_motion(self) -> bool:
        return self.use_tdm or self.unified

    @property
    def motion_read(self) -> bool:
        return self.use_tdm and not self.unified


class FrameEncoder(Module):
    def __init__(self, patch: int, c: int, head_dim: int, layers: int, rng: np.random.Generator, mlp_ratio: int, rope_base: float) -> None:
        self.embed = PatchEmbed(patch, 3, c, rng)
        self.stack = TransformerStack(layers, c, head_dim, rng, mlp_ratio, rope_base)

    def __call__(self, image: Tensor) -> TokenGrid:
        grid = self.embed(image, t=0)
        return grid.with_tokens(self.stack(grid.tokens, grid.positions))


class DualMemoryModel(Module):
    def __init__(self, config: RunConfig) -> None:
        config.validate()
        m = config.model
        rng = make_rng(config.seed, "init")
        extents = (m.image_height // m.patch, m.image_width // m.patch)
        self.encoder = FrameEncoder(m.patch, m.dim, m.head_dim, m.encoder_layers, rng, m.mlp_ratio, m.rope_base)
        self.tca = TemporalContextAggregator(m.dim, m.head_dim, config.tca.layers, rng, m.mlp_ratio, m.rope_base)
        self.tdm = DynamicsEncoder(
            extents, config.tdm.levels, config.tdm.channels, m.head_dim, config.tdm.layers, rng,
            config.tdm.scale_correlation, m.mlp_ratio, m.rope_base,
        )
        self.psm = StructureEncoder(m.patch, config.psm.channels, m.head_dim, config.psm.layers, rng, m.mlp_ratio, m.rope_base)
        self.decoder = Decoder(
            m.dim, config.tdm.channels, config.psm.channels, m.head_dim, config.decoder.stages, m.patch, rng,
            config.decoder.fov_max_deg, m.mlp_ratio, m.rope_base,
        )
        self.config = config
        self.wiring = Wiring.for_variant(config.train.variant)
        self.grid_extents = extents

    @property
    def image_size(self):
        return self.config.model.image_height, self.config.model.image_width


def build_model(config: RunConfig) -> DualMemoryModel:
    T.set_default_dtype(config.model.dtype)
    return DualMemoryModel(config)
