"""Numba-compiled LSTM inner loops (optional fast path).

Same recurrences and gate layout [input, forget, output | cell] as the
numpy fallback in ops.lstm_sequence; the heavy per-timestep elementwise work
runs in nopython mode while the batched weight GEMMs stay outside.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def forward(xz, wh, b, gates, cells, tanhc, hs):
    bsz, t_len, h4 = xz.shape
    h = h4 // 4
    h3 = 3 * h
    hp = np.zeros((bsz, h), dtype=xz.dtype)
    cp = np.zeros((bsz, h), dtype=xz.dtype)
    for t in range(t_len):
        zh = np.dot(hp, wh)
        for i in range(bsz):
            for j in range(h):
                zi = xz[i, t, j] + zh[i, j] + b[j]
                zf = xz[i, t, h + j] + zh[i, h + j] + b[h + j]
                zo = xz[i, t, 2 * h + j] + zh[i, 2 * h + j] + b[2 * h + j]
                zg = xz[i, t, h3 + j] + zh[i, h3 + j] + b[h3 + j]
                ig = 1.0 / (1.0 + np.exp(-zi))
                fg = 1.0 / (1.0 + np.exp(-zf))
                og = 1.0 / (1.0 + np.exp(-zo))
                gg = np.tanh(zg)
                cc = fg * cp[i, j] + ig * gg
                tc = np.tanh(cc)
                gates[t, i, j] = ig
                gates[t, i, h + j] = fg
                gates[t, i, 2 * h + j] = og
                gates[t, i, h3 + j] = gg
                cells[t, i, j] = cc
                tanhc[t, i, j] = tc
                hs[i, t, j] = og * tc
                cp[i, j] = cc
                hp[i, j] = og * tc


@njit(cache=True)
def backward(g, gates, cells, tanhc, wht, dzs):
    t_len, bsz, h4 = gates.shape
    h = h4 // 4
    h3 = 3 * h
    dh = np.zeros((bsz, h), dtype=g.dtype)
    dc = np.zeros((bsz, h), dtype=g.dtype)
    dz = np.zeros((bsz, h4), dtype=g.dtype)
    for t in range(t_len - 1, -1, -1):
        for i in range(bsz):
            for j in range(h):
                ig = gates[t, i, j]
                fg = gates[t, i, h + j]
                og = gates[t, i, 2 * h + j]
                gg = gates[t, i, h3 + j]
                tc = tanhc[t, i, j]
                cprev = cells[t - 1, i, j] if t > 0 else 0.0
                dhij = dh[i, j] + g[i, t, j]
                do = dhij * tc
                dcij = dc[i, j] + dhij * og * (1.0 - tc * tc)
                dz[i, j] = dcij * gg * ig * (1.0 - ig)
                dz[i, h + j] = dcij * cprev * fg * (1.0 - fg)
                dz[i, 2 * h + j] = do * og * (1.0 - og)
                dz[i, h3 + j] = dcij * ig * (1.0 - gg * gg)
                dc[i, j] = dcij * fg
        dzt = np.dot(dz, wht)
        for i in range(bsz):
            for j in range(h):
                dh[i, j] = dzt[i, j]
            for j in range(h4):
                dzs[i, t, j] = dz[i, j]
