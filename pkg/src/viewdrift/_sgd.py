"""Numba kernels for the negative-sampling SGD trainer.

The inner loop owns its RNG (splitmix64 on a uint64 state) so a single-worker
run is bit-reproducible for a given seed, independent of numpy's global
state.  Kernels release the GIL; multi-worker training runs them concurrently
on shared parameter arrays without locks, so worker counts above one trade
exact reproducibility for throughput.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_DOT = 35.0  # |u.c| clamp; sigmoid saturates well before this
_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def worker_state(seed: int, worker: int) -> np.uint64:
    """Derive a per-worker uint64 RNG state from the run seed."""
    x = (seed * 0x9E3779B97F4A7C15 + (worker + 1) * 0xD1B54A32D192ED03) & _MASK64
    # one scramble round so adjacent seeds do not start adjacent
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return np.uint64(x ^ (x >> 31))


@njit(cache=True, inline="always")
def _next_u64(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, inline="always")
def _u01(z):
    # top 53 bits -> [0, 1)
    return (z >> np.uint64(11)) * _INV_2_53


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x > MAX_DOT:
        x = MAX_DOT
    elif x < -MAX_DOT:
        x = -MAX_DOT
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True, nogil=True)
def run_chunk(
    user_vecs,
    content_vecs,
    edge_users,
    edge_contents,
    noise_prob,
    noise_alias,
    negatives,
    rho0,
    lr_min,
    t_start,
    n_steps,
    t_total,
    state,
):
    """Run ``n_steps`` SGD updates starting at global step ``t_start``.

    Per step: draw an edge uniformly, take one positive update and
    ``negatives`` noise updates, applying gradients immediately (user and
    context rows read pre-update values within the step).  Returns the
    advanced RNG state so chunked runs continue one stream.
    """
    n_edges = edge_users.shape[0]
    n_users = user_vecs.shape[0]
    dim = user_vecs.shape[1]
    cgrad = np.empty(dim, dtype=np.float64)
    for s in range(n_steps):
        t = t_start + s
        lr = rho0 * (1.0 - t / t_total)
        if lr < lr_min:
            lr = lr_min
        state, z = _next_u64(state)
        k = int(_u01(z) * n_edges)
        ui = edge_users[k]
        ci = edge_contents[k]

        dot = 0.0
        for d in range(dim):
            dot += user_vecs[ui, d] * content_vecs[ci, d]
        g = lr * (1.0 - _sigmoid(dot))
        for d in range(dim):
            u_old = user_vecs[ui, d]
            user_vecs[ui, d] = u_old + g * content_vecs[ci, d]
            cgrad[d] = g * u_old

        for _ in range(negatives):
            state, z = _next_u64(state)
            j = int(_u01(z) * n_users)
            state, z = _next_u64(state)
            if _u01(z) < noise_prob[j]:
                un = j
            else:
                un = noise_alias[j]
            dot = 0.0
            for d in range(dim):
                dot += user_vecs[un, d] * content_vecs[ci, d]
            g = -lr * _sigmoid(dot)
            for d in range(dim):
                u_old = user_vecs[un, d]
                user_vecs[un, d] = u_old + g * content_vecs[ci, d]
                cgrad[d] += g * u_old

        for d in range(dim):
            content_vecs[ci, d] += cgrad[d]
    return state
