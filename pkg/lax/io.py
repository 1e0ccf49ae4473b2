import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from sympy import Poly

from charges.io import sidecar_path
from lax.schemas import (ALGEBRAIC, PADE, POLYNOMIAL, RATIO, SERIES, TRANSFER, Intertwiner, LaxEntry,
                         LaxEntryTable, LaxSeries)
from linalg.dump import dump_series, load_series
from linalg.scalars import format_rational, parse_rational
from linalg.series import AlgebraicEntry, PowerSeries, RationalFunction, poly_from_strings, poly_to_strings
from model.schemas import FaceWeights

logger = logging.getLogger(__name__)


# ============================================================
# CLOSED FORMS ON THE WIRE
# ============================================================
def _rf_json(rf: RationalFunction) -> Dict:
    return {"numerator": poly_to_strings(rf.numerator), "denominator": poly_to_strings(rf.denominator)}


def _rf_parse(data: Dict) -> RationalFunction:
    return RationalFunction(poly_from_strings(data["numerator"]), poly_from_strings(data["denominator"]))


def entry_to_json(e: LaxEntry) -> Dict:
    out = {
        "row": e.key[0],
        "col": e.key[1],
        "name": e.name,
        "tag": e.tag,
        "series": [format_rational(c) for c in e.series.coefficients],
    }
    if e.tag == POLYNOMIAL:
        out["poly"] = poly_to_strings(e.form)
    elif e.tag in (PADE, RATIO, TRANSFER):
        out.update(_rf_json(e.form))
    elif e.tag == ALGEBRAIC:
        out.update({k: poly_to_strings(getattr(e.form, k)) for k in ("prefactor", "offset", "radicand", "denominator")})
    if e.tag == RATIO:
        out["base"] = e.base
        out["ratio"] = _rf_json(e.ratio)
    return out


def entry_from_json(data: Dict) -> LaxEntry:
    tag = data["tag"]
    key = (int(data["row"]), int(data["col"]))
    series = PowerSeries([parse_rational(c) for c in data["series"]])
    form: Union[Poly, RationalFunction, AlgebraicEntry, None] = None
    if tag == POLYNOMIAL:
        form = poly_from_strings(data["poly"])
    elif tag in (PADE, RATIO, TRANSFER):
        form = _rf_parse(data)
    elif tag == ALGEBRAIC:
        form = AlgebraicEntry(*(poly_from_strings(data[k]) for k in ("prefactor", "offset", "radicand", "denominator")))
    elif tag != SERIES:
        raise ValueError(f"Unknown entry tag {tag!r}")
    ratio = _rf_parse(data["ratio"]) if tag == RATIO else None
    return LaxEntry(key, data["name"], tag, series, form, data.get("base"), ratio)


# ============================================================
# TABLE FILES
# ============================================================
def save_table(table: LaxEntryTable, path: Union[str, Path]) -> None:
    data = {
        "weights": table.weights.to_json() if table.weights is not None else None,
        "order_solved": table.order_solved,
        "counts": table.counts(),
        "entries": [entry_to_json(e) for e in table.entries.values()],
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved {len(table.entries)} Lax entries to {path}")


def load_table(path: Union[str, Path]) -> LaxEntryTable:
    with open(path, "r") as f:
        data = json.load(f)
    wj = data.get("weights")
    weights = FaceWeights.parse(wj["alpha"], wj["beta"], wj["gamma"], wj["delta"]) if wj else None
    entries = [entry_from_json(e) for e in data["entries"]]
    table = LaxEntryTable(weights, {e.key: e for e in entries}, int(data["order_solved"]))
    if data.get("counts") and data["counts"] != table.counts():
        logger.warning(f"Stored counts {data['counts']} differ from the loaded entries {table.counts()}")
    return table


# ============================================================
# SERIES FILES
# ============================================================
def save_lax_series(lax: LaxSeries, path: Union[str, Path]) -> None:
    dump_series(lax.series, path)
    meta = {
        "order": lax.order,
        "support": sorted([list(k) for k in lax.support]),
        "free_parameters": {str(k): v for k, v in lax.free_parameters.items()},
        "relation": lax.relation,
    }
    with open(sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=2)


def load_lax_series(path: Union[str, Path]) -> LaxSeries:
    series = load_series(path)
    with open(sidecar_path(path), "r") as f:
        meta = json.load(f)
    support = frozenset((int(r), int(c)) for r, c in meta["support"])
    free = {int(k): int(v) for k, v in meta.get("free_parameters", {}).items()}
    return LaxSeries(series, support, free, meta.get("relation", LaxSeries.relation))


def save_intertwiners(found: List[Intertwiner], path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump([x.to_json() for x in found], f, indent=2)
