"""Single-stage crosspoint-queued switch (longest-queue-first service) and
the output-queued reference with tail drop.

State lives in flat arrays so the per-slot loops can run as compiled
kernels; the wrapper classes own configuration, stream state, and metric
extraction.  Each slot is arrival phase then departure phase; LQF compares
occupancies after the arrivals of the same slot, and ties are broken
uniformly at random (or by lowest input index in `tie_break="index"` mode,
used for degeneracy co-simulations).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .core import SwitchConfig, _k_randint, derive_stream
from .metrics import (
    F_DROPUTIL,
    N_FSTATS,
    N_STATS,
    S_ARRIVALS,
    S_DELAY,
    S_DEPARTURES,
    S_DROPS,
    BlockResult,
    MetricsLedger,
    ledger_from_stats,
)


@njit(cache=True, nogil=True)
def _cq_lqf_run(dst, slot0, B, tie_break, rng_state,
                q_seq, q_slot, q_head, q_count, col_count, next_seq,
                collect, stats, fstats, dep, want_occ, occ_out):
    T, N = dst.shape
    dep_n = 0
    for trel in range(T):
        t = slot0 + trel
        for i in range(N):
            j = dst[trel, i]
            if j < 0:
                continue
            seq = next_seq[i, j]
            next_seq[i, j] = seq + 1
            if collect:
                stats[S_ARRIVALS] += 1
            if q_count[i, j] < B:
                pos = (q_head[i, j] + q_count[i, j]) % B
                q_seq[i, j, pos] = seq
                q_slot[i, j, pos] = t
                q_count[i, j] += 1
                col_count[j] += 1
            elif collect:
                stats[S_DROPS] += 1
                fstats[F_DROPUTIL] += col_count[j] / (N * B)
        for j in range(N):
            if col_count[j] == 0:
                if want_occ:
                    occ_out[trel, j] = 0
                continue
            best = -1
            best_cnt = 0
            ties = 0
            for i in range(N):
                c = q_count[i, j]
                if c > best_cnt:
                    best_cnt = c
                    best = i
                    ties = 1
                elif c == best_cnt and c > 0:
                    ties += 1
            if ties > 1 and tie_break == 0:
                pick = _k_randint(rng_state, ties)
                seen = 0
                for i in range(N):
                    if q_count[i, j] == best_cnt:
                        if seen == pick:
                            best = i
                            break
                        seen += 1
            h = q_head[best, j]
            if collect:
                stats[S_DEPARTURES] += 1
                stats[S_DELAY] += t - q_slot[best, j, h]
            dep[dep_n, 0] = best
            dep[dep_n, 1] = j
            dep[dep_n, 2] = q_seq[best, j, h]
            dep[dep_n, 3] = t
            dep_n += 1
            q_head[best, j] = (h + 1) % B
            q_count[best, j] -= 1
            col_count[j] -= 1
            if want_occ:
                occ_out[trel, j] = col_count[j]
    return dep_n


@njit(cache=True, nogil=True)
def _oq_run(dst, slot0, cap,
            q_in, q_seq, q_slot, q_head, q_count, next_seq,
            collect, stats, fstats, dep, want_occ, occ_out):
    T, N = dst.shape
    dep_n = 0
    for trel in range(T):
        t = slot0 + trel
        for i in range(N):
            j = dst[trel, i]
            if j < 0:
                continue
            seq = next_seq[i, j]
            next_seq[i, j] = seq + 1
            if collect:
                stats[S_ARRIVALS] += 1
            if q_count[j] < cap:
                pos = (q_head[j] + q_count[j]) % cap
                q_in[j, pos] = i
                q_seq[j, pos] = seq
                q_slot[j, pos] = t
                q_count[j] += 1
            elif collect:
                stats[S_DROPS] += 1
                fstats[F_DROPUTIL] += 1.0  # full queue by definition of the drop
        for j in range(N):
            if q_count[j] == 0:
                if want_occ:
                    occ_out[trel, j] = 0
                continue
            h = q_head[j]
            if collect:
                stats[S_DEPARTURES] += 1
                stats[S_DELAY] += t - q_slot[j, h]
            dep[dep_n, 0] = q_in[j, h]
            dep[dep_n, 1] = j
            dep[dep_n, 2] = q_seq[j, h]
            dep[dep_n, 3] = t
            dep_n += 1
            q_head[j] = (h + 1) % cap
            q_count[j] -= 1
            if want_occ:
                occ_out[trel, j] = q_count[j]
    return dep_n


_EMPTY_OCC = np.empty((0, 0), dtype=np.int64)


class CqLqfSwitch:
    """N x N crosspoint-buffered switch, longest-queue-first per output."""

    def __init__(self, config: SwitchConfig, tie_break: str = "random"):
        if config.arch not in ("CQ", "OQ"):
            raise ValueError(f"CqLqfSwitch needs a CQ config, got arch={config.arch!r}")
        self.config = config
        self.N, self.B = config.N, config.B
        self.tie_break = 0 if tie_break == "random" else 1
        self._rng = derive_stream(config.seed, "fabric:tie")
        N, B = self.N, self.B
        self.q_seq = np.zeros((N, N, B), dtype=np.int64)
        self.q_slot = np.zeros((N, N, B), dtype=np.int64)
        self.q_head = np.zeros((N, N), dtype=np.int64)
        self.q_count = np.zeros((N, N), dtype=np.int64)
        self.col_count = np.zeros(N, dtype=np.int64)
        self.next_seq = np.ones((N, N), dtype=np.int64)
        self.stats = np.zeros(N_STATS, dtype=np.int64)
        self.fstats = np.zeros(N_FSTATS, dtype=np.float64)
        self.slot = 0

    def run_block(self, dst: np.ndarray, collect: bool = True,
                  want_col_occ: bool = False) -> BlockResult:
        T = dst.shape[0]
        dep = np.empty((T * self.N, 4), dtype=np.int64)
        occ = np.empty((T, self.N), dtype=np.int64) if want_col_occ else _EMPTY_OCC
        n = _cq_lqf_run(dst, self.slot, self.B, self.tie_break, self._rng.state,
                        self.q_seq, self.q_slot, self.q_head, self.q_count,
                        self.col_count, self.next_seq,
                        collect, self.stats, self.fstats, dep,
                        want_col_occ, occ)
        slot0 = self.slot
        self.slot += T
        return BlockResult(slot0, T, dep[:n, 0], dep[:n, 1], dep[:n, 2], dep[:n, 3],
                           occ if want_col_occ else None)

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

    def load_queue(self, i: int, j: int, entries: list[tuple[int, int]]) -> None:
        """Replace queue (i, j) with (seq, arrival_slot) entries, head first."""
        if len(entries) > self.B:
            raise ValueError("more entries than buffer capacity")
        self.col_count[j] += len(entries) - self.q_count[i, j]
        self.q_head[i, j] = 0
        self.q_count[i, j] = len(entries)
        for k, (seq, slot) in enumerate(entries):
            self.q_seq[i, j, k] = seq
            self.q_slot[i, j, k] = slot

    def ledger(self, order_violations: int = 0) -> MetricsLedger:
        return ledger_from_stats(self.stats, self.fstats, self.resident(),
                                 order_violations)


class OqSwitch:
    """Output-queued reference: per-output FIFO of capacity N*B, tail drop."""

    def __init__(self, config: SwitchConfig):
        self.config = config
        self.N, self.B = config.N, config.B
        self.cap = config.N * config.B
        N, cap = self.N, self.cap
        self.q_in = np.zeros((N, cap), dtype=np.int64)
        self.q_seq = np.zeros((N, cap), dtype=np.int64)
        self.q_slot = np.zeros((N, cap), dtype=np.int64)
        self.q_head = np.zeros(N, dtype=np.int64)
        self.q_count = np.zeros(N, dtype=np.int64)
        self.next_seq = np.ones((N, N), dtype=np.int64)
        self.stats = np.zeros(N_STATS, dtype=np.int64)
        self.fstats = np.zeros(N_FSTATS, dtype=np.float64)
        self.slot = 0

    def run_block(self, dst: np.ndarray, collect: bool = True,
                  want_col_occ: bool = False) -> BlockResult:
        T = dst.shape[0]
        dep = np.empty((T * self.N, 4), dtype=np.int64)
        occ = np.empty((T, self.N), dtype=np.int64) if want_col_occ else _EMPTY_OCC
        n = _oq_run(dst, self.slot, self.cap,
                    self.q_in, self.q_seq, self.q_slot, self.q_head, self.q_count,
                    self.next_seq, collect, self.stats, self.fstats, dep,
                    want_col_occ, occ)
        slot0 = self.slot
        self.slot += T
        return BlockResult(slot0, T, dep[:n, 0], dep[:n, 1], dep[:n, 2], dep[:n, 3],
                           occ if want_col_occ else None)

    def step(self, arrivals: list[tuple[int, int]] | None = None) -> BlockResult:
        dst = np.full((1, self.N), -1, dtype=np.int64)
        for i, j in arrivals or []:
            dst[0, i] = j
        return self.run_block(dst)

    def occupancy(self) -> np.ndarray:
        return self.q_count.copy()

    def resident(self) -> int:
        return int(self.q_count.sum())

    def ledger(self, order_violations: int = 0) -> MetricsLedger:
        return ledger_from_stats(self.stats, self.fstats, self.resident(),
                                 order_violations)


def exact_cq_lqf_drop_rate(rates: np.ndarray, B: int) -> float:
    """Steady-state drop rate of the 2 x 2 LQF switch by brute-force chain.

    Enumerates the joint occupancy state (b11, b12, b21, b22), all arrival
    combinations, and both tie-break branches, then solves the stationary
    distribution.  Only practical for N = 2 and small B; serves as the
    independent oracle for the simulated drop rate.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (2, 2):
        raise ValueError("exact chain oracle supports N = 2 only")
    S = B + 1
    n_states = S**4

    def encode(b):
        return ((b[0] * S + b[1]) * S + b[2]) * S + b[3]

    # per-input arrival alternatives: (dst or -1, probability)
    alts = []
    for i in range(2):
        tot = rates[i].sum()
        alts.append([(-1, 1.0 - tot), (0, rates[i, 0]), (1, rates[i, 1])])

    P = np.zeros((n_states, n_states))
    drops_vec = np.zeros(n_states)
    for s in range(n_states):
        b0 = np.array([s // S**3 % S, s // S**2 % S, s // S % S, s % S], dtype=np.int64)
        for d0, p0 in alts[0]:
            if p0 == 0.0:
                continue
            for d1, p1 in alts[1]:
                if p1 == 0.0:
                    continue
                p = p0 * p1
                b = b0.copy()
                drops = 0
                for i, d in ((0, d0), (1, d1)):
                    if d < 0:
                        continue
                    k = i * 2 + d
                    if b[k] < B:
                        b[k] += 1
                    else:
                        drops += 1
                # departure per output; tie splits probability in half
                branches = [(b, p)]
                for j in range(2):
                    new_branches = []
                    for bb, pp in branches:
                        c0, c1 = bb[j], bb[2 + j]
                        if c0 == 0 and c1 == 0:
                            new_branches.append((bb, pp))
                        elif c0 > c1:
                            nb = bb.copy(); nb[j] -= 1
                            new_branches.append((nb, pp))
                        elif c1 > c0:
                            nb = bb.copy(); nb[2 + j] -= 1
                            new_branches.append((nb, pp))
                        else:
                            nb1 = bb.copy(); nb1[j] -= 1
                            nb2 = bb.copy(); nb2[2 + j] -= 1
                            new_branches.append((nb1, pp * 0.5))
                            new_branches.append((nb2, pp * 0.5))
                    branches = new_branches
                for bb, pp in branches:
                    P[s, encode(bb)] += pp
                drops_vec[s] += p * drops

    # stationary distribution: left eigenvector of P at eigenvalue 1
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    pi /= pi.sum()
    mean_drops = float(pi @ drops_vec)
    mean_arrivals = float(rates.sum())
    return mean_drops / mean_arrivals
