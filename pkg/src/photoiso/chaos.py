"""Level unfolding and nearest-neighbour spacing statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .model import Eigensystem

logger = logging.getLogger(__name__)

SECTORS = ("even", "odd", "merged")


def unfold(energies, k: int = 2) -> np.ndarray:
    """Unfold a spectrum with a local mean spacing over ``2k+1`` levels.

    ``u[0] = 0`` and each step is the raw spacing divided by the local mean
    spacing of the window ``[max(1, i-k), min(n-1, i+k) + 1]`` (1-based).
    Near the edges the window is clipped, so edge steps are not unit even
    for a uniform ladder.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    e = np.asarray(energies, dtype=float).ravel()
    if not np.all(np.isfinite(e)):
        raise ValueError("energies must be finite")
    n = len(e)
    if n < 2 * k + 2:
        raise ValueError(f"need at least {2 * k + 2} levels for k={k}, got {n}")
    if np.any(np.diff(e) < 0):
        raise ValueError("energies must be sorted ascending")
    e = _split_degeneracies(e)

    i = np.arange(1, n)  # 1-based index of the lower level of each step
    j1 = np.maximum(1, i - k)
    j2 = np.minimum(n - 1, i + k)
    width = e[j2] - e[j1 - 1]  # e_{j2+1} - e_{j1} in 1-based terms
    steps = (2 * k + 1) * (e[1:] - e[:-1]) / width
    return np.concatenate([[0.0], np.cumsum(steps)])


def _split_degeneracies(e: np.ndarray) -> np.ndarray:
    dup = np.flatnonzero(np.diff(e) == 0)
    if len(dup) == 0:
        return e
    logger.warning("%d exact degeneracies; splitting by one ulp", len(dup))
    e = e.copy()
    for idx in dup:
        # nudge forward, cascading so order stays strict
        j = idx + 1
        while j < len(e) and e[j] <= e[j - 1]:
            e[j] = np.nextafter(e[j - 1], np.inf)
            j += 1
    return e


@dataclass(frozen=True)
class SpacingSample:
    band: tuple[float, float]
    k_local: int
    unfolded_levels: np.ndarray
    spacings: np.ndarray

    @classmethod
    def from_energies(cls, energies, k: int = 2, band=(-math.inf, math.inf)) -> "SpacingSample":
        u = unfold(energies, k)
        return cls(tuple(band), k, u, np.diff(u))

    @property
    def mean_spacing(self) -> float:
        return float(np.mean(self.spacings))

    @property
    def normalized(self) -> np.ndarray:
        return self.spacings / self.mean_spacing

    def __len__(self):
        return len(self.unfolded_levels)


# ---------------------------------------------------------------------------
# model distributions


def wigner_pdf(s, d: float = 1.0):
    s = np.asarray(s, dtype=float)
    if d <= 0:
        raise ValueError("D must be > 0")
    return (np.pi * s / (2 * d * d)) * np.exp(-np.pi * s * s / (4 * d * d))


def wigner_cdf(s, d: float = 1.0):
    s = np.asarray(s, dtype=float)
    return -np.expm1(-np.pi * s * s / (4 * d * d))


def poisson_pdf(s, d: float = 1.0):
    s = np.asarray(s, dtype=float)
    if d <= 0:
        raise ValueError("D must be > 0")
    return np.exp(-s / d) / d


def poisson_cdf(s, d: float = 1.0):
    return -np.expm1(-np.asarray(s, dtype=float) / d)


def sample_wigner(size: int, rng: np.random.Generator, d: float = 1.0) -> np.ndarray:
    """Wigner-distributed spacings (a Rayleigh law with scale ``d*sqrt(2/pi)``)."""
    return rng.rayleigh(d * math.sqrt(2 / math.pi), size)


def ks_distance(normalized_spacings, cdf) -> float:
    return float(stats.kstest(np.asarray(normalized_spacings), cdf).statistic)


# ---------------------------------------------------------------------------
# histograms and band comparison


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


def nnsd(spacings, bins=40, s_max: float | None = None) -> Histogram:
    """Density histogram of ``S/D``."""
    s = np.asarray(spacings, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empty spacing sample")
    if np.any(s < 0):
        raise ValueError("spacings must be nonnegative")
    mean = s.mean()
    x = s / mean if mean > 0 else s
    if s.size == 1:
        bins = 1
    rng = None if s_max is None else (0.0, float(s_max))
    if rng is not None and s.size > 1:
        x = x[x <= s_max]
    density, edges = np.histogram(x, bins=bins, range=rng, density=True)
    return Histogram(edges, density)


@dataclass
class BandReport:
    band: tuple[float, float]
    sector: str
    n_levels: int
    mean_spacing: float
    ks_wigner: float
    ks_poisson: float
    sample: SpacingSample = field(repr=False)

    @property
    def verdict(self) -> str:
        return "wigner-like" if self.ks_wigner < self.ks_poisson else "poisson-like"

    def to_dict(self) -> dict:
        return {
            "band": list(self.band),
            "sector": self.sector,
            "n_levels": self.n_levels,
            "n_spacings": self.n_levels - 1,
            "mean_spacing": self.mean_spacing,
            "ks_wigner": self.ks_wigner,
            "ks_poisson": self.ks_poisson,
            "verdict": self.verdict,
        }


def sector_energies(eigsys: Eigensystem, sector: str = "even") -> np.ndarray:
    if sector not in SECTORS:
        raise ValueError(f"sector must be one of {SECTORS}")
    e = np.asarray(eigsys.energies)
    if sector == "merged":
        return np.sort(e)
    if eigsys.parity is None:
        raise ValueError("eigensystem carries no parity labels")
    want = 1 if sector == "even" else -1
    return np.sort(e[np.asarray(eigsys.parity) == want])


def band_sample(energies, band, k: int = 2) -> SpacingSample:
    lo, hi = band
    e = np.asarray(energies)
    sel = e[(e >= lo) & (e < hi)]
    if sel.size == 0:
        raise ValueError(f"no levels in band [{lo}, {hi})")
    return SpacingSample.from_energies(sel, k, band=(lo, hi))


def band_compare(eigsys: Eigensystem | np.ndarray, bands, k: int = 2, sector: str = "even") -> list[BandReport]:
    """Spacing statistics for each ``(lo, hi)`` band (half-open, eV).

    ``eigsys`` may also be a plain sorted energy array, in which case
    ``sector`` is only used as a label.
    """
    if isinstance(eigsys, Eigensystem):
        energies = sector_energies(eigsys, sector)
    else:
        energies = np.sort(np.asarray(eigsys, dtype=float))
    reports = []
    for band in bands:
        smp = band_sample(energies, band, k)
        x = smp.normalized
        reports.append(
            BandReport(
                band=(float(band[0]), float(band[1])),
                sector=sector,
                n_levels=len(smp),
                mean_spacing=smp.mean_spacing,
                ks_wigner=ks_distance(x, wigner_cdf),
                ks_poisson=ks_distance(x, poisson_cdf),
                sample=smp,
            )
        )
    return reports


def write_nnsd_csv(path, hist: Histogram) -> Path:
    """Histogram with Wigner and Poisson reference curves at the bin centres."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s_over_d", "density", "wigner", "poisson"])
        for c, d in zip(hist.centers, hist.density):
            w.writerow([f"{c:.10g}", f"{d:.10g}", f"{float(wigner_pdf(c)):.10g}", f"{float(poisson_pdf(c)):.10g}"])
    return path


def write_report_json(path, reports, extra: dict | None = None) -> Path:
    path = Path(path)
    doc = {"schema": "photoiso.nnsd/1", "bands": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
