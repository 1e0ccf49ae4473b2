import json
import logging
from pathlib import Path
from typing import Dict, Union

from charges.schemas import H_TILDE, H_TILDE_TILDE, ChargeDensity, ChargeTower, CorrectionField, GluedDensity
from linalg.dump import dump_operator, load_operator
from linalg.operator import Operator
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_density(q: ChargeDensity, path: Union[str, Path]) -> None:
    dump_operator(q.op, path)
    with open(sidecar_path(path), "w") as f:
        json.dump(q.to_json(), f, indent=2)


def load_density(path: Union[str, Path]) -> ChargeDensity:
    op = load_operator(path)
    meta: Dict = {}
    side = sidecar_path(path)
    if side.exists():
        with open(side, "r") as f:
            meta = json.load(f)
    else:
        logger.warning(f"No sidecar next to {path}; assuming shift period 2, no gauge")
    if meta and meta.get("range") != op.sites:
        raise ValueError(f"Sidecar range {meta.get('range')} does not match operator range {op.sites}")
    return ChargeDensity(op, int(meta.get("shift_period", 2)), meta.get("gauge", "none"))


def save_tower(tower: ChargeTower, folder: Union[str, Path]) -> Dict[str, str]:
    """One operator file per density plus tower.json; returns the written file names."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    files = {"h": "h.op"}
    dump_operator(tower.h.op, folder / "h.op")
    for kind, field_ in ((H_TILDE, tower.h_tilde), (H_TILDE_TILDE, tower.h_tilde_tilde)):
        if field_ is not None:
            files[kind] = f"{kind}.op"
            dump_operator(field_.op, folder / files[kind])
    meta = {"weights": tower.weights.to_json(), "files": files, "checks": tower.checks}
    with open(folder / "tower.json", "w") as f:
        json.dump(meta, f, indent=2)
    logger.info(f"Saved charge tower to {folder}")
    return files


def load_tower(folder: Union[str, Path]) -> ChargeTower:
    folder = Path(folder)
    with open(folder / "tower.json", "r") as f:
        meta = json.load(f)
    wj = meta["weights"]
    weights = FaceWeights.parse(wj["alpha"], wj["beta"], wj["gamma"], wj["delta"])
    files = meta["files"]
    tower = ChargeTower(weights, GluedDensity(load_operator(folder / files["h"]), 1))
    for kind in (H_TILDE, H_TILDE_TILDE):
        if kind in files:
            field_ = CorrectionField(kind, GluedDensity(load_operator(folder / files[kind]), 1))
            setattr(tower, kind, field_)
    tower.checks = dict(meta.get("checks", {}))
    return tower


def glued_from_file(path: Union[str, Path]) -> GluedDensity:
    op: Operator = load_operator(path)
    if op.layout[0] not in (4, 16):
        raise ValueError(f"{path} does not hold a glued density (layout {op.layout})")
    return GluedDensity(op, 1 if op.layout[0] == 4 else 2)
