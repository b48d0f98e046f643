import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from starcd.errors import CorrelationError

logger = logging.getLogger("starcd")

SYMMETRY_TOLERANCE = 1e-10
DIAGONAL_TOLERANCE = 1e-8


class FilterMode(Enum):
    BULK_ONLY = "bulk_only"
    BULK_AND_MARKET = "bulk_and_market"


@dataclass
class ReturnsMatrix:
    """Log-returns, one row per asset, one column per observation."""
    values: np.ndarray
    asset_labels: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise CorrelationError("Returns must be a 2-d assets x observations array")
        if len(self.asset_labels) != self.values.shape[0]:
            raise CorrelationError("Got {} labels for {} assets".format(len(self.asset_labels), self.values.shape[0]))
        if np.isnan(self.values).any():
            raise CorrelationError("Returns contain NaN after cleaning")

    @property
    def assets(self) -> int:
        return self.values.shape[0]

    @property
    def observations(self) -> int:
        return self.values.shape[1]

    @property
    def zero_variance(self) -> list[str]:
        flat = self.values.std(axis=1) == 0
        return [label for label, is_flat in zip(self.asset_labels, flat.tolist()) if is_flat]

    def drop_zero_variance(self) -> "ReturnsMatrix":
        keep = self.values.std(axis=1) > 0
        if not keep.all():
            logger.warning("Excluding zero-variance assets from the correlation: %s", ", ".join(self.zero_variance))
        return ReturnsMatrix(self.values[keep], [label for label, k in zip(self.asset_labels, keep.tolist()) if k])


def _price_frame(prices, labels: Optional[Sequence[str]]) -> pd.DataFrame:
    """Days as rows, assets as columns."""
    if isinstance(prices, pd.DataFrame):
        return prices.astype(float)
    array = np.asarray(prices, dtype=float)
    if array.ndim != 2:
        raise CorrelationError("Prices must be a 2-d assets x days array")
    if labels is None:
        labels = ["asset{}".format(i) for i in range(array.shape[0])]
    return pd.DataFrame(array.T, columns=list(labels))


def clean_and_log_returns(prices, labels: Optional[Sequence[str]] = None, max_missing: float = 0.1) -> ReturnsMatrix:
    """
    Forward-fill price gaps and turn prices into log-returns.

    :param prices: assets x days array with NaN gaps, or a DataFrame with one
                   column per asset as read by load_prices_csv.
    :param max_missing: series with a larger fraction of gaps are dropped.
    """
    frame = _price_frame(prices, labels)
    if len(frame) < 2:
        raise CorrelationError("Need at least two price observations")
    missing = frame.isna().mean()
    empty = frame.columns[missing >= 1.0]
    if len(empty):
        raise CorrelationError("Series {} have no prices at all".format(", ".join(map(str, empty))))
    dropped = [str(label) for label in frame.columns[missing > max_missing]]
    if dropped:
        logger.warning("Dropping %d series with more than %.0f%% missing observations: %s", len(dropped),
                       100 * max_missing, ", ".join(dropped))
        frame = frame.drop(columns=dropped)
    if frame.shape[1] == 0:
        raise CorrelationError("No series left after dropping the incomplete ones")
    first_missing = frame.iloc[0].isna()
    if first_missing.any():
        raise CorrelationError("Series {} start with a gap".format(", ".join(map(str, frame.columns[first_missing]))))
    frame = frame.ffill()
    if (frame <= 0).any().any():
        bad = frame.columns[(frame <= 0).any()]
        raise CorrelationError("Non-positive prices in {}".format(", ".join(map(str, bad))))
    returns = np.diff(np.log(frame.to_numpy()), axis=0).T
    return ReturnsMatrix(returns, [str(c) for c in frame.columns])


def load_prices_csv(source) -> pd.DataFrame:
    """Prices CSV: header row of tickers, one row per day, empty cell for a gap."""
    frame = pd.read_csv(source)
    first = frame.columns[0]
    # a leading date column is an index, not an asset
    if not pd.api.types.is_numeric_dtype(frame[first]):
        frame = frame.set_index(first)
    logger.debug("Loaded %d days of prices for %d assets", frame.shape[0], frame.shape[1])
    return frame.apply(pd.to_numeric, errors="raise")


def pearson_correlation(r: ReturnsMatrix) -> np.ndarray:
    if r.assets == 0:
        raise CorrelationError("No assets")
    flat = r.zero_variance
    if flat:
        raise CorrelationError("Zero-variance assets: {}".format(", ".join(flat)))
    c = np.corrcoef(r.values)
    c = np.clip((c + c.T) / 2, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


class MarchenkoPastur(NamedTuple):
    low: float
    high: float


@dataclass
class FilteredCorrelation:
    matrix: np.ndarray
    bulk_removed: int
    market_removed: bool
    mp_bounds: MarchenkoPastur
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    retained: np.ndarray = field(repr=False)

    def components(self, mask: np.ndarray) -> np.ndarray:
        """Sum of lambda v v^T over the eigenpairs selected by `mask`."""
        v = self.eigenvectors[:, mask]
        return (v * self.eigenvalues[mask]) @ v.T

    @property
    def removed_part(self) -> np.ndarray:
        return self.components(~self.retained)


def marchenko_pastur_bounds(assets: int, t_obs: int) -> MarchenkoPastur:
    q = np.sqrt(assets / t_obs)
    return MarchenkoPastur((1 - q) ** 2, (1 + q) ** 2)


def rmt_filter(c: np.ndarray, t_obs: int, mode: FilterMode = FilterMode.BULK_AND_MARKET) -> FilteredCorrelation:
    """
    Keep only the eigenmodes above the Marchenko-Pastur upper edge, optionally
    also dropping the largest (market) mode, and zero the diagonal.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise CorrelationError("Correlation matrix must be square, got shape {}".format(c.shape))
    assets = c.shape[0]
    if t_obs <= assets:
        raise CorrelationError("Need more observations ({}) than assets ({})".format(t_obs, assets))
    if np.abs(c - c.T).max() > SYMMETRY_TOLERANCE:
        raise CorrelationError("Correlation matrix is not symmetric")
    if assets and np.abs(np.diag(c) - 1.0).max() > DIAGONAL_TOLERANCE:
        raise CorrelationError("Correlation matrix needs a unit diagonal, got entries up to {:.6g} away from 1"
                               .format(np.abs(np.diag(c) - 1.0).max()))
    bounds = marchenko_pastur_bounds(assets, t_obs)
    values, vectors = np.linalg.eigh(c)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    retained = values > bounds.high
    bulk = int(np.count_nonzero(~retained))
    market = mode is FilterMode.BULK_AND_MARKET and bool(retained[0])
    if market:
        retained[0] = False
    result = FilteredCorrelation(None, bulk, market, bounds, values, vectors, retained)
    filtered = result.components(retained)
    filtered = (filtered + filtered.T) / 2
    np.fill_diagonal(filtered, 0.0)
    result.matrix = filtered
    logger.info("RMT filter: %d modes above lambda+=%.4f kept, %d bulk modes removed, market mode %s",
                int(retained.sum()), bounds.high, bulk, "removed" if market else "kept")
    return result
