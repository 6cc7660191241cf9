"""Planted-truth GAN dissection."""

from ._core import (
    World,
    __version__,
    ace,
    cli,
    dissect,
    frechet_distance,
    generate,
    intervene,
    load_world,
    optimize,
    repair,
    segment,
    world_from_yaml,
)

__all__ = [
    "World",
    "__version__",
    "ace",
    "cli",
    "dissect",
    "frechet_distance",
    "generate",
    "intervene",
    "load_world",
    "optimize",
    "repair",
    "segment",
    "world_from_yaml",
]
