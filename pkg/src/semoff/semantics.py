"""Semantic-accuracy lookup and semantic rate.

The accuracy table maps (symbols per word, SNR in dB) to a sentence
similarity in [0, 1]. The packaged default is sampled from a logistic
surrogate; any table measured from a real semantic codec can be swapped in
through the same CSV format (header ``k,snr_db,eps``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, SemanticConfig

DEFAULT_K = (5, 10, 15, 20)
DEFAULT_SNR_DB = tuple(range(-10, 30, 5))


@dataclass(frozen=True)
class AccuracyTable:
    k_values: tuple
    snr_grid_db: np.ndarray
    eps: np.ndarray  # shape (len(k_values), len(snr_grid_db))

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        grid = np.asarray(self.snr_grid_db, dtype=float)
        if eps.shape != (len(self.k_values), len(grid)):
            raise ConfigError(f"accuracy table shape {eps.shape} does not match grid")
        if list(self.k_values) != sorted(set(self.k_values)) or np.any(np.diff(grid) <= 0):
            raise ConfigError("accuracy table axes must be strictly increasing")
        if np.any(eps < 0) or np.any(eps > 1) or not np.all(np.isfinite(eps)):
            raise ConfigError("accuracy values must lie in [0, 1]")
        if np.any(np.diff(eps, axis=1) < 0):
            raise ConfigError("accuracy must be non-decreasing in SNR")
        if np.any(np.diff(eps, axis=0) < 0):
            raise ConfigError("accuracy must be non-decreasing in k")
        eps.setflags(write=False)
        grid.setflags(write=False)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "snr_grid_db", grid)

    def row(self, k) -> np.ndarray:
        try:
            return self.eps[self.k_values.index(k)]
        except ValueError:
            raise ConfigError(f"k={k} not in accuracy table {self.k_values}") from None


@dataclass(frozen=True)
class SemanticSourceStats:
    avg_semantic_info_per_sentence: float
    avg_words_per_sentence: float
    symbols_per_word: int

    def __post_init__(self):
        if min(self.avg_semantic_info_per_sentence, self.avg_words_per_sentence,
               self.symbols_per_word) <= 0:
            raise ConfigError("semantic source statistics must be positive")

    @classmethod
    def from_config(cls, cfg: SemanticConfig) -> "SemanticSourceStats":
        return cls(cfg.avg_semantic_units, cfg.avg_words, cfg.k)


def logistic_eps(k: float, snr_db) -> np.ndarray:
    """Surrogate similarity curve: sigmoid in SNR, saturating in k."""
    eps_max = 1.0 - 0.5 / k
    midpoint = 12.0 - 0.4 * k
    return eps_max / (1.0 + np.exp(-0.3 * (np.asarray(snr_db, dtype=float) - midpoint)))


def logistic_table(k_values=DEFAULT_K, snr_grid_db=DEFAULT_SNR_DB) -> AccuracyTable:
    eps = np.array([logistic_eps(k, snr_grid_db) for k in k_values])
    return AccuracyTable(tuple(k_values), np.asarray(snr_grid_db, dtype=float), eps)


def write_table(table: AccuracyTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "snr_db", "eps"])
        for i, k in enumerate(table.k_values):
            for j, s in enumerate(table.snr_grid_db):
                w.writerow([k, f"{s:g}", f"{table.eps[i, j]:.6f}"])


def load_table(path: str | Path | None = None) -> AccuracyTable:
    """Read a ``k,snr_db,eps`` CSV. Rejects ragged grids and non-monotone tables."""
    if path is None or str(path) == "":
        text = resources.files("semoff").joinpath("data/accuracy_default.csv").read_text()
        source = "<default table>"
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"accuracy table not found: {path}")
        text = path.read_text()
        source = str(path)
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["k", "snr_db", "eps"]:
        raise ConfigError(f"{source}: header must be k,snr_db,eps")
    values: dict[tuple[int, float], float] = {}
    try:
        for r in rows[1:]:
            if not r:
                continue
            k, s, e = int(r[0]), float(r[1]), float(r[2])
            if (k, s) in values:
                raise ConfigError(f"{source}: duplicate node k={k}, snr_db={s}")
            values[(k, s)] = e
    except (ValueError, IndexError):
        raise ConfigError(f"{source}: malformed row {r!r}") from None
    ks = sorted({k for k, _ in values})
    grid = sorted({s for _, s in values})
    if len(values) != len(ks) * len(grid):
        raise ConfigError(f"{source}: grid is not rectangular")
    eps = np.array([[values[(k, s)] for s in grid] for k in ks])
    return AccuracyTable(tuple(ks), np.array(grid), eps)


def similarity(table: AccuracyTable, k: int, gamma: float) -> float:
    """Interpolated similarity at linear SNR ``gamma``; clamped at the grid edges."""
    if gamma < 0:
        raise ValueError("SNR must be non-negative")
    row = table.row(k)
    grid = table.snr_grid_db
    if gamma == 0.0:
        return float(row[0])
    snr_db = 10.0 * math.log10(gamma)
    # exact node hits return the stored value untouched
    idx = np.searchsorted(grid, snr_db)
    if idx < len(grid) and grid[idx] == snr_db:
        return float(row[idx])
    return float(np.interp(snr_db, grid, row))


def semantic_rate(stats: SemanticSourceStats, W: float, eps: float) -> float:
    """Semantic units per second carried over a subband of width ``W``."""
    if W <= 0:
        raise ValueError("bandwidth must be positive")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("similarity must lie in [0, 1]")
    return W * stats.avg_semantic_info_per_sentence * eps / (
        stats.avg_words_per_sentence * stats.symbols_per_word)
