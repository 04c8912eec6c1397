"""Hot loops of the ACM evaluator, in two interchangeable implementations.

``numba_kernels`` are explicit loops compiled with ``@njit``; ``numpy_kernels``
are vectorized equivalents. The module-level names dispatch to numba unless it
is missing or disabled through ``ABACGEN_DISABLE_NUMBA``.

Bitsets are ``uint64`` word arrays with bit ``i`` of word ``i // 64`` holding
element ``i`` (little-endian bit order).
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import _accel


def words_for(nbits: int) -> int:
    return max(1, (nbits + 63) // 64)


def pack_rows(mask: np.ndarray) -> np.ndarray:
    """Pack a 2-D bool array row-wise into ``uint64`` words."""
    rows, nbits = mask.shape
    nwords = words_for(nbits)
    padded = np.zeros((rows, nwords * 64), dtype=bool)
    padded[:, :nbits] = mask
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)


def unpack_rows(words: np.ndarray, nbits: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :nbits].astype(bool)


# -- pure-numpy kernels ------------------------------------------------------

def _np_match_rows(codes: np.ndarray, rule_codes: np.ndarray) -> np.ndarray:
    """``out[r, i]`` is True iff entity ``i`` holds every value of rule ``r``."""
    out = np.empty((rule_codes.shape[0], codes.shape[0]), dtype=bool)
    for r in range(rule_codes.shape[0]):
        out[r] = (codes == rule_codes[r]).all(axis=1)
    return out


def _np_acm_block(sp, sd, op, od, ep, ed, s0, s1):
    n_o, n_e = op.shape[0], ep.shape[0]
    out = np.zeros((s1 - s0, n_o, n_e), dtype=np.uint8)
    # bound the temporary to ~4M words
    o_step = max(1, 4_000_000 // max(1, n_e * sp.shape[1]))
    for s in range(s0, s1):
        if not sp[s].any():
            continue
        for o0 in range(0, n_o, o_step):
            o1 = min(n_o, o0 + o_step)
            tp = sp[s] & op[o0:o1]
            permit = (tp[:, None, :] & ep[None, :, :]).any(axis=2)
            td = sd[s] & od[o0:o1]
            deny = (td[:, None, :] & ed[None, :, :]).any(axis=2)
            out[s - s0, o0:o1] = permit & ~deny
    return out


def _np_acm_tuples(sp, sd, op, od, ep, ed, si, oi, ei):
    permit = (sp[si] & op[oi] & ep[ei]).any(axis=1)
    deny = (sd[si] & od[oi] & ed[ei]).any(axis=1)
    return (permit & ~deny).astype(np.uint8)


numpy_kernels = SimpleNamespace(
    name="numpy",
    match_rows=_np_match_rows,
    acm_block=_np_acm_block,
    acm_tuples=_np_acm_tuples,
)


# -- loop kernels (compiled by numba when available) -------------------------

def _loop_match_rows(codes, rule_codes):
    n_rules, n_attrs = rule_codes.shape
    n = codes.shape[0]
    out = np.zeros((n_rules, n), dtype=np.bool_)
    for r in range(n_rules):
        for i in range(n):
            ok = True
            for j in range(n_attrs):
                if codes[i, j] != rule_codes[r, j]:
                    ok = False
                    break
            out[r, i] = ok
    return out


def _loop_acm_block(sp, sd, op, od, ep, ed, s0, s1):
    n_o = op.shape[0]
    n_e = ep.shape[0]
    wp = sp.shape[1]
    wd = sd.shape[1]
    out = np.zeros((s1 - s0, n_o, n_e), dtype=np.uint8)
    tp = np.empty(wp, dtype=np.uint64)
    td = np.empty(wd, dtype=np.uint64)
    for s in range(s0, s1):
        for o in range(n_o):
            any_permit = False
            for w in range(wp):
                tp[w] = sp[s, w] & op[o, w]
                if tp[w] != 0:
                    any_permit = True
            if not any_permit:
                continue
            for w in range(wd):
                td[w] = sd[s, w] & od[o, w]
            for e in range(n_e):
                permit = False
                for w in range(wp):
                    if tp[w] & ep[e, w] != 0:
                        permit = True
                        break
                if not permit:
                    continue
                deny = False
                for w in range(wd):
                    if td[w] & ed[e, w] != 0:
                        deny = True
                        break
                if not deny:
                    out[s - s0, o, e] = 1
    return out


def _loop_acm_tuples(sp, sd, op, od, ep, ed, si, oi, ei):
    n = si.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    for t in range(n):
        s, o, e = si[t], oi[t], ei[t]
        permit = False
        for w in range(sp.shape[1]):
            if sp[s, w] & op[o, w] & ep[e, w] != 0:
                permit = True
                break
        if not permit:
            continue
        deny = False
        for w in range(sd.shape[1]):
            if sd[s, w] & od[o, w] & ed[e, w] != 0:
                deny = True
                break
        if not deny:
            out[t] = 1
    return out


numba_kernels = SimpleNamespace(
    name="numba" if _accel.NUMBA_AVAILABLE else "python-loops",
    match_rows=_accel.njit(_loop_match_rows),
    acm_block=_accel.njit(_loop_acm_block),
    acm_tuples=_accel.njit(_loop_acm_tuples),
)

active = numba_kernels if _accel.USE_NUMBA else numpy_kernels


def match_rows(codes: np.ndarray, rule_codes: np.ndarray) -> np.ndarray:
    codes = np.ascontiguousarray(codes, dtype=np.int32)
    rule_codes = np.ascontiguousarray(rule_codes, dtype=np.int32)
    if codes.shape[1] == 0:
        return np.ones((rule_codes.shape[0], codes.shape[0]), dtype=bool)
    return active.match_rows(codes, rule_codes)


def acm_block(sp, sd, op, od, ep, ed, s0: int, s1: int) -> np.ndarray:
    return active.acm_block(sp, sd, op, od, ep, ed, s0, s1)


def acm_tuples(sp, sd, op, od, ep, ed, si, oi, ei) -> np.ndarray:
    return active.acm_tuples(sp, sd, op, od, ep, ed, si, oi, ei)
