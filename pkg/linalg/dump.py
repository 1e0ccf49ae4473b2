import logging
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Tuple, Union

from linalg.operator import Operator
from linalg.scalars import COMPLEX, DOMAINS, EXACT, format_rational, parse_rational
from linalg.series import PowerSeries

logger = logging.getLogger(__name__)


def _format_value(v, domain: str) -> str:
    if domain == EXACT:
        return format_rational(v)
    if domain == COMPLEX:
        return f"{complex(v).real!r},{complex(v).imag!r}"
    return repr(float(v))


def _parse_value(text: str, domain: str):
    if domain == EXACT:
        return parse_rational(text)
    if domain == COMPLEX:
        re_, im_ = text.split(",")
        return complex(float(re_), float(im_))
    return float(text)


def dump_operator_lines(op: Operator) -> List[str]:
    lines = [f"dim={op.dim} domain={op.domain} layout={','.join(str(d) for d in op.layout)}"]
    for r, c, v in sorted(op.entries(), key=lambda e: (e[0], e[1])):
        lines.append(f"{r} {c} {_format_value(v, op.domain)}")
    return lines


def dump_operator(op: Operator, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_text("\n".join(dump_operator_lines(op)) + "\n")
    logger.info(f"Wrote {op.nnz} entries of a {op.dim}x{op.dim} operator to {path}")


def parse_operator_lines(lines: List[str]) -> Operator:
    header = dict(field.split("=", 1) for field in lines[0].split())
    dim = int(header["dim"])
    domain = header["domain"]
    if domain not in DOMAINS:
        raise ValueError(f"Unknown domain {domain!r}")
    layout = tuple(int(d) for d in header["layout"].split(",")) if "layout" in header else (dim,)
    entries: Dict[Tuple[int, int], object] = {}
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        r, c, v = line.split()
        entries[(int(r), int(c))] = _parse_value(v, domain)
    return Operator.from_entries(entries, layout, domain)


def load_operator(path: Union[str, Path]) -> Operator:
    return parse_operator_lines(Path(path).read_text().splitlines())


def dump_series(series: PowerSeries, path: Union[str, Path]) -> None:
    """Ordered coefficient records: 'order=<k>' followed by the coefficient's operator block or value."""
    out = [f"series order={series.order}"]
    for k, c in enumerate(series.coefficients):
        if isinstance(c, Operator):
            block = dump_operator_lines(c)
            out.append(f"coefficient {k} operator {len(block)}")
            out.extend(block)
        else:
            out.append(f"coefficient {k} scalar {format_rational(Fraction(c))}")
    Path(path).write_text("\n".join(out) + "\n")


def load_series(path: Union[str, Path]) -> PowerSeries:
    lines = Path(path).read_text().splitlines()
    order = int(lines[0].split("=")[1])
    coeffs = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[2] == "scalar":
            coeffs.append(parse_rational(parts[3]))
            i += 1
        else:
            n = int(parts[3])
            coeffs.append(parse_operator_lines(lines[i + 1:i + 1 + n]))
            i += 1 + n
    return PowerSeries(coeffs, order)
