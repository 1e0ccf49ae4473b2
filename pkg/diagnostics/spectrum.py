import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.spatial import cKDTree

from diagnostics.schemas import GINUE, POISSON, SpacingRatioSet
from linalg.operator import Operator

logger = logging.getLogger(__name__)

# ============================================================
# CONFIG
# ============================================================
# eigenvalues equal to this many decimals count as one
DEGENERACY_DECIMALS = 9
DENSE_LIMIT = 4096


def propagator_spectrum(U: Operator) -> np.ndarray:
    """Complex eigenvalues of the dense float propagator."""
    if U.dim > DENSE_LIMIT:
        raise ValueError(f"Dense spectrum limited to dim {DENSE_LIMIT}, got {U.dim}")
    return sla.eigvals(U.to_float())


def _distinct(spectrum: Sequence[complex], decimals: int) -> np.ndarray:
    z = np.asarray(spectrum, dtype=np.complex128)
    keys = np.round(z.real, decimals) + 1j * np.round(z.imag, decimals)
    _, first = np.unique(keys, return_index=True)
    return z[np.sort(first)]


def complex_spacing_ratios(spectrum: Sequence[complex], decimals: int = DEGENERACY_DECIMALS,
                           label: Optional[str] = None) -> SpacingRatioSet:
    """
    r_k = (z_nn - z_k) / (z_nnn - z_k) with nearest and next-nearest neighbours in the
    complex plane. Degenerate eigenvalues collapse to one representative; equal
    distances go to the lower index first.
    """
    z = _distinct(spectrum, decimals)
    if z.size < 3:
        raise ValueError(f"Need at least three distinct eigenvalues, got {z.size}")
    if z.size < len(spectrum):
        logger.info(f"Collapsed {len(spectrum) - z.size} degenerate eigenvalues")
    pts = np.column_stack([z.real, z.imag])
    dist, idx = cKDTree(pts).query(pts, k=3)
    nn, nnn = idx[:, 1].copy(), idx[:, 2].copy()
    swap = np.isclose(dist[:, 1], dist[:, 2], rtol=0, atol=10.0 ** -(decimals + 2)) & (nn > nnn)
    nn[swap], nnn[swap] = nnn[swap], nn[swap].copy()
    ratios = (z[nn] - z) / (z[nnn] - z)
    mag = np.abs(ratios)
    return SpacingRatioSet(ratios, float(mag.mean()), float(np.mean(ratios.real / mag)), float(mag.std()), label)


# ============================================================
# REFERENCE ENSEMBLES
# ============================================================
def reference_spectrum(kind: str, size: int, seed: int = 0) -> np.ndarray:
    """Uniform points in the unit disk (uncorrelated) or a complex Ginibre spectrum."""
    rng = np.random.default_rng(seed)
    if kind == POISSON:
        radius = np.sqrt(rng.random(size))
        angle = 2 * np.pi * rng.random(size)
        return radius * np.exp(1j * angle)
    if kind == GINUE:
        M = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / np.sqrt(2 * size)
        return sla.eigvals(M)
    raise ValueError(f"Unknown reference ensemble {kind!r}")
