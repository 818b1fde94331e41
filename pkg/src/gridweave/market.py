"""Rule-based layer-2/3 pricing and the distance-based local markets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


class PriceOrderError(ValueError):
    """Upstream prices leave no room for a local price band."""


def _band(hi, lo, spread):
    """Place a band of width ``spread * (hi - lo)`` centred inside ``[lo, hi]``.

    The clipping makes the ordering exact in floating point, not just to rounding.
    """
    hi = np.asarray(hi, dtype=float)
    lo = np.asarray(lo, dtype=float)
    if not 0.0 <= spread <= 1.0:
        raise ValueError(f"spread must be in [0, 1], got {spread}")
    width = hi - lo
    if np.any(width < 0):
        raise PriceOrderError("upstream sell price is below the buy price")
    margin = 0.5 * (1.0 - spread) * width
    buy = np.clip(lo + margin, lo, hi)
    sell = np.clip(hi - margin, buy, hi)
    return sell, buy


def price_policy_distributor(r_sd, r_bd, c_t, spread_m: float = 0.5):
    """Inter-microgrid prices ``(r_sm, r_bm)`` inside ``[r_bd, r_sd + c_t]``."""
    return _band(np.asarray(r_sd) + np.asarray(c_t), r_bd, spread_m)


def price_policy_microgrid(r_sm, r_bm, spread_h: float = 0.5):
    """Household-market prices ``(r_sh, r_bh)`` inside ``[r_bm, r_sm]``."""
    return _band(r_sm, r_bm, spread_h)


@dataclass(frozen=True)
class MarketOutcome:
    """Channel splits per household, columns ``imp1, imp2, imp3, exp1, exp2, exp3``."""

    channels: np.ndarray
    local_volume: np.ndarray  # per microgrid
    inter_volume: float

    @property
    def residual_up(self) -> np.ndarray:
        """Signed volume leaving the local market (+ import, - export)."""
        c = self.channels
        return (c[:, 1] + c[:, 2]) - (c[:, 4] + c[:, 5])


def clear_all(nets: np.ndarray, microgrid: np.ndarray, positions: np.ndarray,
              n_microgrids: int) -> MarketOutcome:
    chan, local, inter = kernels.clear_markets(np.asarray(nets, float)[None, :],
                                               microgrid, positions, n_microgrids)
    return MarketOutcome(chan[0], local[0], float(inter[0]))


def clear_local_market(nets: Sequence[float], positions: Sequence[float] | None = None
                       ) -> MarketOutcome:
    """Match shortages to surpluses inside one microgrid.

    Buyers go largest-shortage first and take from the nearest sellers (ties to
    the lower index). Unmatched volume shows up in ``imp3``/``exp3`` since a
    lone microgrid has no peers.
    """
    nets = np.asarray(nets, dtype=float)
    if positions is None:
        positions = np.arange(len(nets), dtype=float)
    return clear_all(nets, np.zeros(len(nets), dtype=np.int64), positions, 1)


def clear_inter_microgrid_market(residuals: Sequence[Sequence[float]]) -> list[np.ndarray]:
    """Trade residual household nets (one list per microgrid) between microgrids.

    Each microgrid's residuals must share a sign, as they do after local
    clearing. Returns per microgrid an ``(n, 4)`` array of
    ``imp2, imp3, exp2, exp3``.
    """
    mg_idx, flat = [], []
    for m, res in enumerate(residuals):
        res = np.asarray(res, dtype=float)
        if np.any(res > 0) and np.any(res < 0):
            raise ValueError(f"microgrid {m} has unmatched local trades")
        mg_idx.extend([m] * len(res))
        flat.extend(res)
    out = clear_all(np.asarray(flat), np.asarray(mg_idx, dtype=np.int64),
                    np.zeros(len(flat)), len(residuals))
    splits, start = [], 0
    for res in residuals:
        n = len(res)
        splits.append(out.channels[start:start + n][:, [1, 2, 4, 5]])
        start += n
    return splits
