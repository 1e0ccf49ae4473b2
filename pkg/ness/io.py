import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from linalg.scalars import parse_rational
from model.schemas import BoundaryDriving, FaceWeights
from ness.schemas import (BANDS, BOUNDARY, TENSORS, ZERO, LevelSolution, NessPair, PatchMPA, band_position,
                          format_entry, level_slice)

logger = logging.getLogger(__name__)


def _parse_entry(text: str, exact: bool):
    return parse_rational(text) if exact else float(text)


# ============================================================
# ANSATZ FILES
# ============================================================
def mpa_to_json(mpa: PatchMPA, weights: Optional[FaceWeights] = None,
                driving: Optional[BoundaryDriving] = None) -> Dict:
    """Blocks keyed by (tensor, s, s', level, band); boundary vectors keyed by (tensor, s, s')."""
    blocks = []
    for name in TENSORS:
        for n in range(1, mpa.max_level + 1):
            for band in BANDS:
                if n == 1 and band != ZERO:
                    continue
                i, j = band_position(n, band)
                block = mpa.block(name, i, j)
                for s in (0, 1):
                    for t in (0, 1):
                        blocks.append({
                            "tensor": name, "s": s, "s_prime": t, "level": n, "band": band,
                            "entries": [[format_entry(v) for v in row] for row in block[s, t]],
                        })
    boundary = []
    for name in BOUNDARY:
        vec = mpa.tensors[name][:, :, level_slice(1)]
        for s in (0, 1):
            for t in (0, 1):
                boundary.append({"tensor": name, "s": s, "s_prime": t, "entries": [format_entry(v) for v in vec[s, t]]})
    return {
        "max_level": mpa.max_level,
        "exact": mpa.exact,
        "weights": weights.to_json() if weights is not None else None,
        "driving": driving.to_json() if driving is not None else None,
        "blocks": blocks,
        "boundary": boundary,
    }


def mpa_from_json(data: Dict) -> PatchMPA:
    exact = bool(data.get("exact", False))
    mpa = PatchMPA.zeros(int(data["max_level"]), exact)
    for b in data["blocks"]:
        i, j = band_position(int(b["level"]), b["band"])
        values = np.array([[_parse_entry(v, exact) for v in row] for row in b["entries"]],
                          dtype=object if exact else np.float64)
        mpa.tensors[b["tensor"]][b["s"], b["s_prime"], level_slice(i), level_slice(j)] = values
    for b in data["boundary"]:
        values = np.array([_parse_entry(v, exact) for v in b["entries"]], dtype=object if exact else np.float64)
        mpa.tensors[b["tensor"]][b["s"], b["s_prime"], level_slice(1)] = values
    return mpa


def save_mpa(mpa: PatchMPA, path: Union[str, Path], weights: Optional[FaceWeights] = None,
             driving: Optional[BoundaryDriving] = None) -> None:
    with open(path, "w") as f:
        json.dump(mpa_to_json(mpa, weights, driving), f, indent=2)
    logger.info(f"Saved ansatz up to level {mpa.max_level} to {path}")


def load_mpa(path: Union[str, Path]) -> PatchMPA:
    with open(path, "r") as f:
        return mpa_from_json(json.load(f))


# ============================================================
# TABLES
# ============================================================
def ness_frame(pair: NessPair) -> pd.DataFrame:
    rows = []
    for idx, (v, w) in enumerate(zip(pair.p, pair.p_prime)):
        rows.append({"configuration": format(idx, f"0{pair.N}b"), "p": format_entry(v), "p_prime": format_entry(w)})
    return pd.DataFrame(rows)


def save_ness_csv(pair: NessPair, path: Union[str, Path]) -> None:
    ness_frame(pair).to_csv(path, index=False)
    logger.info(f"Saved {len(pair.p)} steady-state probabilities to {path}")


def load_ness_csv(path: Union[str, Path]) -> NessPair:
    df = pd.read_csv(path, dtype=str)
    exact = not any(c in v for v in df["p"] for c in ".eEn")

    def column(name: str) -> np.ndarray:
        return np.array([_parse_entry(v, exact) for v in df[name]], dtype=object if exact else np.float64)

    return NessPair(column("p"), column("p_prime"), len(df["configuration"].iloc[0]))


def level_report_frame(reports: List[LevelSolution]) -> pd.DataFrame:
    rows = []
    for r in reports:
        row = {k: v for k, v in r.to_json().items() if k != "residuals"}
        row["max_residual"] = max(r.residuals.values()) if r.residuals else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def save_level_report(reports: List[LevelSolution], path: Union[str, Path]) -> None:
    level_report_frame(reports).to_csv(path, index=False)
    logger.info(f"Saved {len(reports)} level reports to {path}")
