import json
import logging
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd

from diagnostics.schemas import DigitComplexityRecord, GrowthFit, SpacingRatioSet

logger = logging.getLogger(__name__)


def records_frame(records: List[DigitComplexityRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_json() for r in records])


def save_digit_scan(records: List[DigitComplexityRecord], fit: Optional[GrowthFit],
                    path: Union[str, Path]) -> None:
    """Records as CSV; the fit goes to a JSON file next to it."""
    path = Path(path)
    records_frame(records).to_csv(path, index=False)
    if fit is not None:
        with open(path.with_suffix(".fit.json"), "w") as f:
            json.dump(fit.to_json(), f, indent=2)
    logger.info(f"Saved {len(records)} digit-complexity records to {path}")


def save_spacing_ratios(ratios: SpacingRatioSet, path: Union[str, Path]) -> None:
    path = Path(path)
    pd.DataFrame({"real": ratios.ratios.real, "imag": ratios.ratios.imag}).to_csv(path, index=False)
    with open(path.with_suffix(".summary.json"), "w") as f:
        json.dump(ratios.to_json(), f, indent=2)
    logger.info(f"Saved {ratios.ratios.size} spacing ratios to {path}")
