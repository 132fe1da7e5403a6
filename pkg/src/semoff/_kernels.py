"""Hot inner loops, JIT-compiled with numba when available.

Set ``SEMOFF_DISABLE_JIT=1`` to force the pure numpy/Python path (also used
automatically when numba is not installed). Both paths return identical
results; ``tests/test_kernels.py`` checks them against each other.
"""
from __future__ import annotations

import os

import numpy as np

_disabled = os.environ.get("SEMOFF_DISABLE_JIT", "").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA and not _disabled


def _gae_loop(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    adv = np.empty(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv


def _enumerate_loop(e_lc, e_ut, runs, off, lat, t_dl, base_viol, flops, remote_capacity, tau_max):
    """Scan every joint option index in lexicographic order (UE 0 most significant)."""
    n_ue, n_opt = e_lc.shape
    total = 1
    for _ in range(n_ue):
        total *= n_opt
    digits = np.zeros(n_ue, dtype=np.int64)
    best_feasible = -1
    best_energy = np.inf
    fallback = -1
    fallback_viol = np.iinfo(np.int64).max
    fallback_energy = np.inf
    for idx in range(total):
        rem = idx
        for i in range(n_ue - 1, -1, -1):
            digits[i] = rem % n_opt
            rem //= n_opt
        n_off = 0
        energy = 0.0
        viol = 0
        for i in range(n_ue):
            a = digits[i]
            energy += e_lc[i, a] + e_ut[i, a]
            viol += base_viol[i, a]
            if runs[i, a] and off[i, a]:
                n_off += 1
        if n_off > 0:
            t_rc = flops * n_off / remote_capacity
        else:
            t_rc = 0.0
        for i in range(n_ue):
            a = digits[i]
            if runs[i, a]:
                if off[i, a]:
                    t_total = lat[i, a] + t_rc + t_dl
                else:
                    t_total = lat[i, a]
                if t_total > tau_max:
                    viol += 1
        if viol == 0:
            if energy < best_energy:
                best_energy = energy
                best_feasible = idx
        elif viol < fallback_viol or (viol == fallback_viol and energy < fallback_energy):
            fallback_viol = viol
            fallback_energy = energy
            fallback = idx
    if best_feasible >= 0:
        return best_feasible, True
    return fallback, False


def _enumerate_numpy(e_lc, e_ut, runs, off, lat, t_dl, base_viol, flops, remote_capacity, tau_max):
    n_ue, n_opt = e_lc.shape
    total = n_opt ** n_ue
    idx = np.arange(total, dtype=np.int64)
    digits = np.empty((n_ue, total), dtype=np.int64)
    rem = idx.copy()
    for i in range(n_ue - 1, -1, -1):
        digits[i] = rem % n_opt
        rem //= n_opt
    rows = np.arange(n_ue)[:, None]
    energy = np.zeros(total)
    for i in range(n_ue):
        energy += e_lc[i, digits[i]] + e_ut[i, digits[i]]
    viol = base_viol[rows, digits].sum(axis=0)
    runs_j = runs[rows, digits]
    off_j = off[rows, digits]
    n_off = np.count_nonzero(runs_j & off_j, axis=0)
    t_rc = np.where(n_off > 0, flops * n_off / remote_capacity, 0.0)
    lat_j = lat[rows, digits]
    t_total = np.where(off_j, lat_j + t_rc + t_dl, lat_j)
    viol = viol + np.count_nonzero(runs_j & (t_total > tau_max), axis=0)
    feasible = viol == 0
    if feasible.any():
        masked = np.where(feasible, energy, np.inf)
        return int(np.argmin(masked)), True
    order = np.lexsort((idx, energy, viol))
    return int(order[0]), False


if USE_JIT:
    gae = njit(nogil=True)(_gae_loop)
    enumerate_joint = njit(nogil=True)(_enumerate_loop)
else:
    gae = _gae_loop
    enumerate_joint = _enumerate_numpy

gae_python = _gae_loop
enumerate_joint_numpy = _enumerate_numpy
