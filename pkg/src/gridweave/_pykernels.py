"""Pure Python/numpy implementations of the hot kernels.

These define the semantics; ``_ckernels.pyx`` must agree with them exactly.
"""
from __future__ import annotations

import numpy as np

# channel layout of the (B, H, 6) output
IMP1, IMP2, IMP3, EXP1, EXP2, EXP3 = range(6)


def _greedy(need: dict[int, float], have: dict[int, float], loc) -> tuple[dict, dict, float]:
    """Match buyers (largest need first) to the nearest sellers.

    ``need``/``have`` map ids to positive volumes and are consumed in place.
    Returns per-id bought/sold volume and the total matched.
    """
    bought = {k: 0.0 for k in need}
    sold = {k: 0.0 for k in have}
    total = 0.0
    sellers = sorted(have)
    for b in sorted(need, key=lambda k: (-need[k], k)):
        rem = need[b]
        for s in sorted(sellers, key=lambda k: (abs(loc[b] - loc[k]), k)):
            if rem <= 0.0:
                break
            if have[s] <= 0.0:
                continue
            q = rem if rem < have[s] else have[s]
            bought[b] += q
            sold[s] += q
            total += q
            rem -= q
            have[s] -= q
        need[b] = rem
    return bought, sold, total


def clear_markets(net, mg, pos, n_mg):
    """Clear local then inter-microgrid markets for a batch of net positions.

    Returns ``(channels[B, H, 6], local_volume[B, n_mg], inter_volume[B])``.
    """
    net = np.ascontiguousarray(net, dtype=np.float64)
    mg = np.asarray(mg, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.float64)
    B, H = net.shape
    chan = np.zeros((B, H, 6))
    local_vol = np.zeros((B, n_mg))
    inter_vol = np.zeros(B)
    members = [[h for h in range(H) if mg[h] == m] for m in range(n_mg)]
    for r in range(B):
        row = net[r]
        res_short = [0.0] * H
        res_surp = [0.0] * H
        for m, hs in enumerate(members):
            need = {h: float(row[h]) for h in hs if row[h] > 0}
            have = {h: float(-row[h]) for h in hs if row[h] < 0}
            bought, sold, total = _greedy(need, have, pos)
            local_vol[r, m] = total
            for h, q in bought.items():
                chan[r, h, IMP1] = q
                res_short[h] = need[h]
            for h, q in sold.items():
                chan[r, h, EXP1] = q
                res_surp[h] = have[h]

        mg_short = [0.0] * n_mg
        mg_surp = [0.0] * n_mg
        for h in range(H):
            mg_short[mg[h]] += res_short[h]
            mg_surp[mg[h]] += res_surp[h]
        need = {m: mg_short[m] for m in range(n_mg) if mg_short[m] > 0}
        have = {m: mg_surp[m] for m in range(n_mg) if mg_surp[m] > 0}
        mg_loc = list(range(n_mg))
        bought, sold, total = _greedy(need, have, mg_loc)
        inter_vol[r] = total

        for h in range(H):
            m = mg[h]
            if res_short[h] > 0:
                matched, left = bought[m], need[m]
                _split(chan[r, h], IMP2, IMP3, res_short[h], matched, left, mg_short[m])
            elif res_surp[h] > 0:
                matched, left = sold[m], have[m]
                _split(chan[r, h], EXP2, EXP3, res_surp[h], matched, left, mg_surp[m])
    return chan, local_vol, inter_vol


def _split(out, i2, i3, residual, matched, left, total):
    """Pro-rata share of a microgrid's inter-microgrid match; exact at the extremes."""
    if left == 0.0:
        out[i2] = residual
    elif matched == 0.0:
        out[i3] = residual
    else:
        share = matched * residual / total
        out[i2] = share
        out[i3] = residual - share


def dp_backward(cost, eidx, knext):
    """Backward induction over a lattice.

    ``cost[t, u]`` is the stage cost of outcome ``u``; ``eidx[k, a]`` maps
    (state, action) to an outcome and ``knext[k, a]`` to the next state.
    Returns ``(value[T+1, K], policy[T, K])``; ties go to the lowest action.
    """
    cost = np.asarray(cost, dtype=np.float64)
    eidx = np.asarray(eidx, dtype=np.int64)
    knext = np.asarray(knext, dtype=np.int64)
    T = cost.shape[0]
    K = eidx.shape[0]
    value = np.zeros((T + 1, K))
    policy = np.zeros((T, K), dtype=np.int64)
    rows = np.arange(K)
    for t in range(T - 1, -1, -1):
        q = cost[t][eidx] + value[t + 1][knext]
        best = np.argmin(q, axis=1)
        policy[t] = best
        value[t] = q[rows, best]
    return value, policy
