"""Pooled crosspoint-queued switch.

Crosspoints are aggregated into w x r rectangular pools of shared capacity
w*r*B.  Arrivals contend for at most s_w writes per pool per slot; the r
outputs of a pool column resolve read contention jointly: each output
weighs every pool by the number of resident cells destined to it, and an
exact maximum-total-weight assignment (at most one pool per output, at
most s_r outputs per pool) decides who serves whom.  A matched output
serves the oldest cell destined to it in its matched pool (ties to the
lowest input), which keeps per-flow FIFO order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .core import ConfigError, SwitchConfig
from .metrics import (
    F_DROPUTIL,
    N_FSTATS,
    N_STATS,
    S_ARRIVALS,
    S_AUDIT,
    S_DELAY,
    S_DEPARTURES,
    S_DROPS,
    BlockResult,
    MetricsLedger,
    ledger_from_stats,
)


def pool_of(i: int, j: int, w: int, r: int) -> tuple[int, int]:
    """Pool coordinates {ceil(i/w), ceil(j/r)} for crosspoint (i, j), 1-based."""
    if i < 1 or j < 1:
        raise ConfigError(f"ports are 1-based, got ({i}, {j})")
    return (-(-i // w), -(-j // r))


@njit(cache=True, nogil=True)
def _solve_group(W, s_r):
    """Exact max-total-weight assignment of r outputs to pools.

    Each output takes at most one pool, each pool serves at most s_r
    outputs of the group, zero-weight choices count as unmatched.  Only an
    output's r heaviest pools can appear in some optimum (any optimum using
    a lighter pool can swap to an unused top pool), so the search runs over
    those shortlists with depth-first branch and bound; candidates are
    tried in ascending pool order and the first optimum found is kept, so
    ties resolve to the lexicographically smallest assignment.

    Returns (assign, total): assign[o] = pool index or -1.
    """
    npools, r = W.shape
    ncand = min(r, npools)
    cand = np.full((r, ncand), -1, dtype=np.int64)
    n_cand = np.zeros(r, dtype=np.int64)
    picked = np.zeros(npools, dtype=np.uint8)
    for o in range(r):
        for _slot in range(ncand):
            best_i = -1
            best_w = 0.0
            for i in range(npools):
                if picked[i]:
                    continue
                wi = W[i, o]
                if wi > best_w:
                    best_w = wi
                    best_i = i
            if best_i < 0:
                break
            picked[best_i] = 1
            cand[o, n_cand[o]] = best_i
            n_cand[o] += 1
        for k in range(n_cand[o]):
            picked[cand[o, k]] = 0
        # ascending pool order within the shortlist
        cand[o, : n_cand[o]] = np.sort(cand[o, : n_cand[o]])

    suffix_best = np.zeros(r + 1)
    for o in range(r - 1, -1, -1):
        mx = 0.0
        for k in range(n_cand[o]):
            wv = W[cand[o, k], o]
            if wv > mx:
                mx = wv
        suffix_best[o] = suffix_best[o + 1] + mx

    assign = np.full(r, -1, dtype=np.int64)
    best_assign = np.full(r, -1, dtype=np.int64)
    usage = np.zeros(npools, dtype=np.int64)
    choice = np.full(r, -1, dtype=np.int64)  # -1 before first option; n_cand = skip
    best_total = -1.0
    cur_total = 0.0
    depth = 0
    while depth >= 0:
        if depth == r:
            if cur_total > best_total:
                best_total = cur_total
                for o in range(r):
                    best_assign[o] = assign[o]
            depth -= 1
            continue
        # undo a previous choice at this depth before advancing
        k = choice[depth]
        if 0 <= k < n_cand[depth] and assign[depth] >= 0:
            usage[assign[depth]] -= 1
            cur_total -= W[assign[depth], depth]
            assign[depth] = -1
        # advance to next option
        k += 1
        choice[depth] = k
        if k > n_cand[depth]:
            choice[depth] = -1
            depth -= 1
            continue
        if cur_total + suffix_best[depth] <= best_total:
            # no branch below can beat the incumbent
            choice[depth] = -1
            depth -= 1
            continue
        if k == n_cand[depth]:
            depth += 1  # leave this output unmatched
            continue
        pool = cand[depth, k]
        if usage[pool] >= s_r:
            continue
        usage[pool] += 1
        cur_total += W[pool, depth]
        assign[depth] = pool
        depth += 1
    if best_total < 0.0:
        best_total = 0.0
    return best_assign, best_total


def solve_contention(weights: np.ndarray, s_r: int) -> tuple[np.ndarray, float]:
    """Exact contention resolution for one output group.

    ``weights[I, o]`` is pool I's weight for the group's o-th output.
    Returns (assign, total): assign[o] is the matched pool or -1.
    """
    W = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    if W.ndim != 2:
        raise ConfigError(f"weights must be 2-D (pools x outputs), got {W.shape}")
    if (W < 0).any():
        raise ConfigError("weights must be nonnegative")
    if s_r < 1:
        raise ConfigError(f"s_r must be >= 1, got {s_r}")
    assign, total = _solve_group(W, s_r)
    return assign, float(total)


def solve_contention_assignment(weights: np.ndarray, s_r: int) -> float:
    """Independent exact total via the Hungarian method on duplicated pools."""
    from scipy.optimize import linear_sum_assignment

    W = np.asarray(weights, dtype=np.float64)
    npools, r = W.shape
    cost = np.repeat(W.T, s_r, axis=1)  # r x (npools * s_r)
    rows, cols = linear_sum_assignment(cost, maximize=True)
    return float(cost[rows, cols].sum())


@njit(cache=True, nogil=True)
def _pcq_run(dst, slot0, N, B, w, r, s_w, s_r,
             q_seq, q_slot, q_head, q_count, next_seq,
             pool_count, wcount, outcount, writes, touched,
             collect, audit, stats, fstats, dep, Wbuf):
    T = dst.shape[0]
    PI = N // w
    PJ = N // r
    P = w * r * B
    dep_n = 0
    greedy = np.empty(r, dtype=np.int64)
    usage = np.empty(PI, dtype=np.int64)
    for trel in range(T):
        t = slot0 + trel

        # --- arrival phase: input-index order, per-pool write budget s_w
        n_touched = 0
        for i in range(N):
            j = dst[trel, i]
            if j < 0:
                continue
            seq = next_seq[i, j]
            next_seq[i, j] = seq + 1
            if collect:
                stats[S_ARRIVALS] += 1
            I = i // w
            J = j // r
            if writes[I, J] == 0:
                touched[n_touched] = I * PJ + J
                n_touched += 1
            if writes[I, J] >= s_w or pool_count[I, J] >= P:
                if collect:
                    stats[S_DROPS] += 1
                    fstats[F_DROPUTIL] += outcount[j] / (N * B)
                writes[I, J] += 1
                continue
            writes[I, J] += 1
            pos = (q_head[i, j] + q_count[i, j]) % q_seq.shape[2]
            q_seq[i, j, pos] = seq
            q_slot[i, j, pos] = t
            q_count[i, j] += 1
            pool_count[I, J] += 1
            wcount[I, j] += 1
            outcount[j] += 1
        for k in range(n_touched):
            writes[touched[k] // PJ, touched[k] % PJ] = 0

        # --- departure phase: per output group, weight = cells destined
        for J in range(PJ):
            j0 = J * r
            need_solver = False
            for o in range(r):
                j = j0 + o
                best_i = -1
                best_w = 0
                for I in range(PI):
                    c = wcount[I, j]
                    if c > best_w:
                        best_w = c
                        best_i = I
                greedy[o] = best_i
            if s_r < r:
                for I in range(PI):
                    usage[I] = 0
                for o in range(r):
                    if greedy[o] >= 0:
                        usage[greedy[o]] += 1
                        if usage[greedy[o]] > s_r:
                            need_solver = True
            if need_solver:
                for I in range(PI):
                    for o in range(r):
                        Wbuf[I, o] = wcount[I, j0 + o]
                assign, _total = _solve_group(Wbuf, s_r)
            else:
                assign = greedy
            for o in range(r):
                I = assign[o]
                if I < 0:
                    continue
                j = j0 + o
                # oldest cell destined to j in pool I: min arrival slot, then input
                sel = -1
                sel_slot = np.int64(2**62)
                for i in range(I * w, I * w + w):
                    if q_count[i, j] > 0:
                        s = q_slot[i, j, q_head[i, j]]
                        if s < sel_slot:
                            sel_slot = s
                            sel = i
                if sel < 0:
                    if collect:
                        stats[S_AUDIT] += 1  # matched output found no cell
                    continue
                h = q_head[sel, j]
                if collect:
                    stats[S_DEPARTURES] += 1
                    stats[S_DELAY] += t - q_slot[sel, j, h]
                dep[dep_n, 0] = sel
                dep[dep_n, 1] = j
                dep[dep_n, 2] = q_seq[sel, j, h]
                dep[dep_n, 3] = t
                dep_n += 1
                q_head[sel, j] = (h + 1) % q_seq.shape[2]
                q_count[sel, j] -= 1
                pool_count[I, J] -= 1
                wcount[I, j] -= 1
                outcount[j] -= 1

        if audit:
            for I in range(PI):
                for J in range(PJ):
                    if pool_count[I, J] > P:
                        stats[S_AUDIT] += 1
                    tot = 0
                    for i in range(I * w, I * w + w):
                        for j in range(J * r, J * r + r):
                            tot += q_count[i, j]
                    if tot != pool_count[I, J]:
                        stats[S_AUDIT] += 1
    return dep_n


class PcqSwitch:
    """w x r pooled fabric with generalized longest-queue-first service."""

    def __init__(self, config: SwitchConfig, audit: bool = False):
        if config.arch != "PCQ":
            raise ConfigError(f"PcqSwitch needs arch PCQ, got {config.arch!r}")
        self.config = config
        self.N, self.B = config.N, config.B
        self.w, self.r = config.w, config.r
        self.s_w, self.s_r = config.s_w, config.s_r
        self.audit = audit
        N, B, w, r = self.N, self.B, self.w, self.r
        P = w * r * B
        self.q_seq = np.zeros((N, N, P), dtype=np.int64)
        self.q_slot = np.zeros((N, N, P), dtype=np.int64)
        self.q_head = np.zeros((N, N), dtype=np.int64)
        self.q_count = np.zeros((N, N), dtype=np.int64)
        self.next_seq = np.ones((N, N), dtype=np.int64)
        self.pool_count = np.zeros((N // w, N // r), dtype=np.int64)
        self.wcount = np.zeros((N // w, N), dtype=np.int64)
        self.outcount = np.zeros(N, dtype=np.int64)
        self._writes = np.zeros((N // w, N // r), dtype=np.int64)
        self._touched = np.zeros(N, dtype=np.int64)
        self._wbuf = np.zeros((N // w, r), dtype=np.float64)
        self.stats = np.zeros(N_STATS, dtype=np.int64)
        self.fstats = np.zeros(N_FSTATS, dtype=np.float64)
        self.slot = 0

    def run_block(self, dst: np.ndarray, collect: bool = True) -> BlockResult:
        T = dst.shape[0]
        dep = np.empty((T * self.N, 4), dtype=np.int64)
        n = _pcq_run(dst, self.slot, self.N, self.B, self.w, self.r,
                     self.s_w, self.s_r,
                     self.q_seq, self.q_slot, self.q_head, self.q_count,
                     self.next_seq, self.pool_count, self.wcount, self.outcount,
                     self._writes, self._touched,
                     collect, self.audit, self.stats, self.fstats, dep, self._wbuf)
        slot0 = self.slot
        self.slot += T
        return BlockResult(slot0, T, dep[:n, 0], dep[:n, 1], dep[:n, 2], dep[:n, 3])

    def step(self, arrivals: list[tuple[int, int]] | None = None) -> BlockResult:
        """One slot with explicit 0-based (input, output) arrivals."""
        dst = np.full((1, self.N), -1, dtype=np.int64)
        for i, j in arrivals or []:
            dst[0, i] = j
        return self.run_block(dst)

    def occupancy(self) -> np.ndarray:
        return self.q_count.copy()

    def resident(self) -> int:
        return int(self.q_count.sum())

    def output_resident(self, j: int) -> int:
        """Cells currently buffered anywhere for 0-based output j."""
        return int(self.outcount[j])

    def ledger(self, order_violations: int = 0) -> MetricsLedger:
        return ledger_from_stats(self.stats, self.fstats, self.resident(),
                                 order_violations)
