import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from sampler.trajectory import Trajectory

logger = logging.getLogger(__name__)


def write_pbm(traj: Trajectory, path: Union[str, Path]) -> None:
    """Plain P1 bitmap, one row per half-step, 1 = filled."""
    rows, N = traj.frames.shape
    lines = ["P1", f"# seed={traj.seed} index={traj.index} weights={traj.weights.to_json()}", f"{N} {rows}"]
    lines += [" ".join(str(int(b)) for b in frame) for frame in traj.frames]
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote {rows} frames of {N} sites to {path}")


def read_pbm(path: Union[str, Path]) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P1":
        raise ValueError(f"{path} is not a plain PBM file")
    width, height = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:3 + width * height]], dtype=np.uint8)
    return bits.reshape(height, width)


def render_png(traj: Trajectory, path: Union[str, Path], scale: int = 4) -> None:
    if scale < 1:
        raise ValueError("Scale must be a positive integer")
    pixels = ((1 - traj.frames) * 255).astype(np.uint8)
    img = Image.fromarray(pixels)
    img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    img.save(path)
