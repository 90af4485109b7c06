"""Dataset export and import.

One directory per sequence::

    seq_0000/
      scene.json          poses, intrinsics, labels, layout digest
      rgb/000000.png      8-bit RGB
      gt/000000.dmck      points_global, points_self, depth, valid, dynamic, primitive, surface_uv
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image

from dualmem.codec import load_container, save_container
from dualmem.errors import InputError

from .render import RenderedFrame, SceneSequence

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_GT_FIELDS = ("points_global", "points_self", "depth", "valid", "dynamic", "primitive", "surface_uv")


def write_png(path: Path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_sequence(seq: SceneSequence, directory: Path) -> Path:
    directory = Path(directory)
    (directory / "rgb").mkdir(parents=True, exist_ok=True)
    (directory / "gt").mkdir(parents=True, exist_ok=True)
    frames_meta = []
    for f in seq.frames:
        name = f"{f.frame_index:06d}"
        write_png(directory / "rgb" / f"{name}.png", f.image)
        save_container(directory / "gt" / f"{name}.dmck", {k: getattr(f, k) for k in _GT_FIELDS}, {"frame": f.frame_index})
        frames_meta.append(
            {
                "index": f.frame_index,
                "quat": f.quat.tolist(),
                "trans": f.trans.tolist(),
                "intrinsics": f.intrinsics.tolist(),
                "dynamic_pixels": int(f.dynamic.sum()),
            }
        )
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "seed": seq.spec.seed,
        "digest": seq.spec.digest(),
        "width": seq.spec.width,
        "height": seq.spec.height,
        "fov_y": seq.spec.fov_y,
        "dynamic_objects": len(seq.spec.dynamics),
        "frames": frames_meta,
        "layout": seq.spec.to_dict(),
    }
    (directory / "scene.json").write_text(json.dumps(sidecar, indent=2))
    return directory


def load_sequence(directory: Path) -> List[RenderedFrame]:
    """Frames of an exported sequence, images decoded from PNG."""
    directory = Path(directory)
    sidecar_path = directory / "scene.json"
    if not sidecar_path.exists():
        raise InputError(f"{directory}: missing scene.json (not a sequence directory?)")
    sidecar = json.loads(sidecar_path.read_text())
    frames = []
    for meta in sidecar["frames"]:
        name = f"{meta['index']:06d}"
        png = directory / "rgb" / f"{name}.png"
        if not png.exists():
            raise InputError(f"{directory}: missing image {png.name}")
        arrays, _ = load_container(directory / "gt" / f"{name}.dmck")
        frames.append(
            RenderedFrame(
                frame_index=int(meta["index"]),
                image=read_png(png),
                quat=np.asarray(meta["quat"]),
                trans=np.asarray(meta["trans"]),
                intrinsics=np.asarray(meta["intrinsics"]),
                **{k: arrays[k] for k in _GT_FIELDS},
            )
        )
    return frames


def list_sequences(root: Path) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset directory not found: {root}")
    seqs = sorted(p for p in root.iterdir() if (p / "scene.json").exists())
    if not seqs:
        raise InputError(f"{root}: no sequence directories (expected */scene.json)")
    return seqs


def load_dataset(root: Path) -> List[List[RenderedFrame]]:
    return [load_sequence(p) for p in list_sequences(root)]


def save_dataset(sequences: Sequence[SceneSequence], root: Path) -> List[Path]:
    root = Path(root)
    out = [save_sequence(seq, root / f"seq_{i:04d}") for i, seq in enumerate(sequences)]
    logger.info("wrote %d sequences to %s", len(out), root)
    return out
