import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import sympy

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"
FAILURE_REPORT_NAME = "failure_report.json"

EXACT = "exact"
FLOAT = "float"
DOMAINS = (EXACT, FLOAT)

SIMULATE = "simulate"
FIND_CHARGES = "find-charges"
VERIFY_CHARGES = "verify-charges"
LAX_BUILD = "lax-build"
LAX_VERIFY = "lax-verify"
NESS_BRUTE = "ness-brute"
NESS_MPA = "ness-mpa"
DIGIT_COMPLEXITY = "digit-complexity"
SPECTRUM = "spectrum"
SUBCOMMANDS = (SIMULATE, FIND_CHARGES, VERIFY_CHARGES, LAX_BUILD, LAX_VERIFY, NESS_BRUTE, NESS_MPA,
               DIGIT_COMPLEXITY, SPECTRUM)


NO_CHECKS = "checks_performed"


def failed_checks(checks: Dict[str, Any]) -> List[str]:
    return [k for k, v in checks.items() if isinstance(v, (bool, np.bool_)) and not v]


class CheckFailedError(RuntimeError):
    """A pipeline ran to the end but some of its declared checks did not pass."""

    def __init__(self, message: str, checks: Dict[str, Any]):
        super().__init__(message)
        self.checks = checks


@dataclass
class RunConfig:
    subcommand: str
    model: Optional[str] = None
    domain: str = EXACT
    seed: int = 0
    out: Optional[str] = None
    options: Dict[str, Any] = field(default_factory=dict)
    verbose: bool = False

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand {self.subcommand!r}")
        if self.domain not in DOMAINS:
            raise ValueError(f"Unknown numeric domain {self.domain!r}")

    @property
    def exact(self) -> bool:
        return self.domain == EXACT

    def out_dir(self) -> Path:
        """Manifest and failure report land next to the declared output."""
        if self.out is None:
            return Path(".")
        out = Path(self.out)
        return out if out.suffix == "" else out.parent

    def to_json(self) -> Dict:
        return asdict(self)


@dataclass
class RunResult:
    subcommand: str
    checks: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> List[str]:
        if not self.checks:
            return [NO_CHECKS]
        return failed_checks(self.checks)

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_json(self) -> Dict:
        checks = {k: bool(v) if isinstance(v, np.bool_) else v for k, v in self.checks.items()}
        return {"subcommand": self.subcommand, "passed": self.passed, "checks": checks,
                "outputs": self.outputs, "summary": self.summary}


def software_versions() -> Dict[str, str]:
    return {
        "package": VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "sympy": sympy.__version__,
    }


def _dump(data: Dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=str)
    return path


def write_manifest(config: RunConfig, result: Optional[RunResult] = None,
                   folder: Optional[Union[str, Path]] = None) -> Path:
    manifest = {
        "config": config.to_json(),
        "versions": software_versions(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if result is not None:
        manifest["result"] = result.to_json()
    path = _dump(manifest, Path(folder or config.out_dir()) / MANIFEST_NAME)
    logger.info(f"Wrote manifest to {path}")
    return path


def write_failure_report(config: RunConfig, error: BaseException, checks: Optional[Dict[str, Any]] = None,
                         folder: Optional[Union[str, Path]] = None) -> Path:
    checks = checks or {}
    report = {
        "subcommand": config.subcommand,
        "error_type": type(error).__name__,
        "message": str(error),
        "failed_checks": failed_checks(checks),
        "checks": checks,
    }
    path = _dump(report, Path(folder or config.out_dir()) / FAILURE_REPORT_NAME)
    logger.error(f"{config.subcommand} failed ({report['error_type']}): {error}; report at {path}")
    return path
