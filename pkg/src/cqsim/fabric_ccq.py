"""Two-stage chained crosspoint-queued switch.

A rotating load balancer spreads input i's cells over the crosspoints of
their destination column (crosspoint (i + t, j) at slot t), and the
crosspoints of each column form a circular daisy chain along which cells
deflect toward less-occupied predecessors.  Two schedulers keep per-flow
order despite the multi-path spreading:

* oldest-cell-first: cells carry their arrival slot; each output serves
  the minimum timestamp in its column (ties to the lowest crosspoint).
* counter-aligned round-robin: cells carry wait-counters; a cell may only
  leave when its counter equals the output's cycle counter, anticipatory
  counters are kept fresh by polling and by one-hop-per-slot alignment
  notifications, and deflected cells carry their counters with them (the
  counter drops by one when crossing the chain's wrap point, mirroring the
  increment notifications pick up there).

Queues hold cells sorted by tag.  Counters may run on unbounded integers
or modulo M (modular comparisons are made relative to the output's cycle
counter); with M at least N*B + ceil(K/N) + 1 the two modes produce
identical departures.
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
    S_IDLE,
    S_MAXDEFL,
    S_MAXSPAN,
    BlockResult,
    MetricsLedger,
    ledger_from_stats,
)

# cell record fields: order tag, per-flow sequence, arrival slot,
# original input, deflection count
_TAG, _SEQ, _SLOT, _ORIG, _DEFL = 0, 1, 2, 3, 4


def lb_route(i: int, t: int, N: int) -> int:
    """First-stage rotation: input i lands on intermediate port i + t (1-based)."""
    if not 1 <= i <= N:
        raise ConfigError(f"input port must be in [1, {N}], got {i}")
    return (i + t - 1) % N + 1


@njit(cache=True, nogil=True, inline="always")
def _rel(x, base, M):
    """Order key of counter x relative to the cycle counter (identity when
    unbounded).  The +2 slack keeps the one-below-base deflection transient
    inside the window."""
    if M <= 0:
        return x
    r = (x - base + 2) % M
    if r < 0:
        r += M
    return r


@njit(cache=True, nogil=True, inline="always")
def _winc(x, M):
    if M > 0:
        return (x + 1) % M
    return x + 1


@njit(cache=True, nogil=True, inline="always")
def _wdec(x, M):
    if M > 0:
        r = (x - 1) % M
        if r < 0:
            r += M
        return r
    return x - 1


@njit(cache=True, nogil=True, inline="always")
def _q_recenter(q, q_head, q_count, row, j):
    """Re-seat the occupied run mid-array so both ends have room."""
    cap2 = q.shape[2]
    h = q_head[row, j]
    c = q_count[row, j]
    nh = (cap2 - c) // 2
    if nh == h:
        return
    if nh < h:
        for k in range(c):
            for f in range(5):
                q[row, j, nh + k, f] = q[row, j, h + k, f]
    else:
        for k in range(c - 1, -1, -1):
            for f in range(5):
                q[row, j, nh + k, f] = q[row, j, h + k, f]
    q_head[row, j] = nh


@njit(cache=True, nogil=True, inline="always")
def _q_append(q, q_head, q_count, row, j, tag, seq, slot, orig, defl):
    cap2 = q.shape[2]
    if q_head[row, j] + q_count[row, j] >= cap2:
        _q_recenter(q, q_head, q_count, row, j)
    pos = q_head[row, j] + q_count[row, j]
    q[row, j, pos, _TAG] = tag
    q[row, j, pos, _SEQ] = seq
    q[row, j, pos, _SLOT] = slot
    q[row, j, pos, _ORIG] = orig
    q[row, j, pos, _DEFL] = defl
    q_count[row, j] += 1


@njit(cache=True, nogil=True, inline="always")
def _q_insert_sorted(q, q_head, q_count, row, j, tag, seq, slot, orig, defl, base, M):
    """Insert keeping tags non-decreasing; equal tags go behind existing ones.

    Shifts whichever side of the insertion point is shorter (deflected cells
    carry near-minimal tags, so this usually moves just the head pointer).
    """
    cap2 = q.shape[2]
    h = q_head[row, j]
    c = q_count[row, j]
    rt = _rel(tag, base, M)
    lo = 0
    hi = c
    while lo < hi:
        mid = (lo + hi) // 2
        if _rel(q[row, j, h + mid, _TAG], base, M) <= rt:
            lo = mid + 1
        else:
            hi = mid
    if 2 * lo <= c:
        if h == 0:
            _q_recenter(q, q_head, q_count, row, j)
            h = q_head[row, j]
            if h == 0:  # c == cap2 cannot happen (c <= B < 2B) but stay safe
                h = 1
                q_head[row, j] = 1
        for k in range(lo):
            for f in range(5):
                q[row, j, h - 1 + k, f] = q[row, j, h + k, f]
        h -= 1
        q_head[row, j] = h
    else:
        if h + c >= cap2:
            _q_recenter(q, q_head, q_count, row, j)
            h = q_head[row, j]
        for k in range(c, lo, -1):
            for f in range(5):
                q[row, j, h + k, f] = q[row, j, h + k - 1, f]
    q[row, j, h + lo, _TAG] = tag
    q[row, j, h + lo, _SEQ] = seq
    q[row, j, h + lo, _SLOT] = slot
    q[row, j, h + lo, _ORIG] = orig
    q[row, j, h + lo, _DEFL] = defl
    q_count[row, j] += 1


@njit(cache=True, nogil=True)
def _ccq_run(dst, slot0, B, K, M, lb, dr, rr_mode,
             q, q_head, q_count, col_count, next_seq,
             ant, pend_ca, pend_sn, A, R,
             new_ca, new_sn,
             collect, audit, stats, fstats, dep):
    T, N = dst.shape
    dep_n = 0
    out_ca = np.empty(N, dtype=np.int64)
    out_sn = np.empty(N, dtype=np.int64)
    snap = np.empty(N, dtype=np.int64)
    send = np.empty(N, dtype=np.int64)
    d_tag = np.empty(N, dtype=np.int64)
    d_seq = np.empty(N, dtype=np.int64)
    d_slot = np.empty(N, dtype=np.int64)
    d_orig = np.empty(N, dtype=np.int64)
    d_defl = np.empty(N, dtype=np.int64)

    for trel in range(T):
        t = slot0 + trel

        # --- arrival phase
        for i_in in range(N):
            j = dst[trel, i_in]
            if j < 0:
                continue
            row = (i_in + t) % N if lb else i_in
            seq = next_seq[i_in, j]
            next_seq[i_in, j] = seq + 1
            if collect:
                stats[S_ARRIVALS] += 1
            if q_count[row, j] < B:
                if rr_mode:
                    w = ant[row, j]
                    _q_append(q, q_head, q_count, row, j, w, seq, t, i_in, 0)
                    ant[row, j] = _winc(w, M)
                    ca = _winc(w, M) if row == N - 1 else w
                    new_ca[row, j] = ca
                    new_sn[row, j] = row
                else:
                    _q_append(q, q_head, q_count, row, j, t, seq, t, i_in, 0)
                col_count[j] += 1
            elif collect:
                stats[S_DROPS] += 1
                fstats[F_DROPUTIL] += col_count[j] / (N * B)

        # --- notification phase (counter alignment, RR only)
        if rr_mode:
            for j in range(N):
                for row in range(N):
                    if new_ca[row, j] >= 0:
                        # a fresh arrival notification preempts any pending relay
                        out_ca[row] = new_ca[row, j]
                        out_sn[row] = new_sn[row, j]
                        pend_ca[row, j] = -1
                        new_ca[row, j] = -1
                    elif pend_ca[row, j] >= 0:
                        c = pend_ca[row, j]
                        out_ca[row] = _winc(c, M) if row == N - 1 else c
                        out_sn[row] = pend_sn[row, j]
                        pend_ca[row, j] = -1
                    else:
                        out_ca[row] = -1
                        out_sn[row] = -1
                for row in range(N):
                    pred = row - 1 if row > 0 else N - 1
                    ca = out_ca[pred]
                    if ca < 0:
                        continue
                    sn = out_sn[pred]
                    if sn == row:
                        continue  # traversed the whole chain; discard
                    if _rel(ca, R[j], M) >= _rel(ant[row, j], R[j], M):
                        ant[row, j] = ca
                        pend_ca[row, j] = ca
                        pend_sn[row, j] = sn

        # --- departure phase
        if rr_mode:
            for j in range(N):
                budget = N if col_count[j] == 0 else N + K + 1
                served = False
                for _p in range(budget):
                    row = A[j]
                    if q_count[row, j] == 0:
                        rp1 = _winc(R[j], M)
                        if _rel(ant[row, j], R[j], M) < _rel(rp1, R[j], M):
                            ant[row, j] = rp1
                        A[j] = row + 1 if row + 1 < N else 0
                        if A[j] == 0:
                            R[j] = _winc(R[j], M)
                    else:
                        h = q_head[row, j]
                        if q[row, j, h, _TAG] == R[j]:
                            if collect:
                                stats[S_DEPARTURES] += 1
                                stats[S_DELAY] += t - q[row, j, h, _SLOT]
                            dep[dep_n, 0] = q[row, j, h, _ORIG]
                            dep[dep_n, 1] = j
                            dep[dep_n, 2] = q[row, j, h, _SEQ]
                            dep[dep_n, 3] = t
                            dep_n += 1
                            q_head[row, j] = h + 1
                            q_count[row, j] -= 1
                            if q_count[row, j] == 0:
                                q_head[row, j] = 0
                            col_count[j] -= 1
                            served = True
                            break  # batch semantics: stay at this crosspoint
                        A[j] = row + 1 if row + 1 < N else 0
                        if A[j] == 0:
                            R[j] = _winc(R[j], M)
                if collect and not served and col_count[j] > 0:
                    stats[S_IDLE] += 1
        else:
            for j in range(N):
                if col_count[j] == 0:
                    continue
                best_row = -1
                best_tag = 0
                for row in range(N):
                    if q_count[row, j] > 0:
                        tg = q[row, j, q_head[row, j], _TAG]
                        if best_row < 0 or tg < best_tag:
                            best_tag = tg
                            best_row = row
                h = q_head[best_row, j]
                if collect:
                    stats[S_DEPARTURES] += 1
                    stats[S_DELAY] += t - q[best_row, j, h, _SLOT]
                dep[dep_n, 0] = q[best_row, j, h, _ORIG]
                dep[dep_n, 1] = j
                dep[dep_n, 2] = q[best_row, j, h, _SEQ]
                dep[dep_n, 3] = t
                dep_n += 1
                q_head[best_row, j] = h + 1
                q_count[best_row, j] -= 1
                if q_count[best_row, j] == 0:
                    q_head[best_row, j] = 0
                col_count[j] -= 1

        # --- deflection phase
        if dr:
            for j in range(N):
                for row in range(N):
                    snap[row] = q_count[row, j]
                    send[row] = 0
                for row in range(N):
                    pred = row - 1 if row > 0 else N - 1
                    if snap[row] > snap[pred]:
                        h = q_head[row, j]
                        if q[row, j, h, _DEFL] >= K:
                            continue  # deflection cap reached: pinned
                        if rr_mode and row == A[j] and q[row, j, h, _TAG] == R[j]:
                            continue  # already eligible at the arbiter
                        send[row] = 1
                for row in range(N):
                    if send[row] == 0:
                        continue
                    h = q_head[row, j]
                    tag = q[row, j, h, _TAG]
                    d_tag[row] = _wdec(tag, M) if row == 0 else tag
                    d_seq[row] = q[row, j, h, _SEQ]
                    d_slot[row] = q[row, j, h, _SLOT]
                    d_orig[row] = q[row, j, h, _ORIG]
                    d_defl[row] = q[row, j, h, _DEFL] + 1
                    q_head[row, j] = h + 1
                    q_count[row, j] -= 1
                    if q_count[row, j] == 0:
                        q_head[row, j] = 0
                for row in range(N):
                    if send[row] == 0:
                        continue
                    pred = row - 1 if row > 0 else N - 1
                    _q_insert_sorted(q, q_head, q_count, pred, j,
                                     d_tag[row], d_seq[row], d_slot[row],
                                     d_orig[row], d_defl[row], R[j], M)
                    if collect and d_defl[row] > stats[S_MAXDEFL]:
                        stats[S_MAXDEFL] = d_defl[row]
                    if rr_mode and _rel(d_tag[row], R[j], M) >= _rel(ant[pred, j], R[j], M):
                        ant[pred, j] = _winc(d_tag[row], M)

        # --- counter-span tracking and invariant audits
        if collect and rr_mode:
            for j in range(N):
                mn = np.int64(2**62)
                mx = np.int64(-(2**62))
                for row in range(N):
                    c = q_count[row, j]
                    if c > 0:
                        h = q_head[row, j]
                        lo_t = _rel(q[row, j, h, _TAG], R[j], M)
                        hi_t = _rel(q[row, j, h + c - 1, _TAG], R[j], M)
                        if lo_t < mn:
                            mn = lo_t
                        if hi_t > mx:
                            mx = hi_t
                if mx >= mn and mx - mn > stats[S_MAXSPAN]:
                    stats[S_MAXSPAN] = mx - mn
        if audit:
            for j in range(N):
                tot = 0
                for row in range(N):
                    c = q_count[row, j]
                    tot += c
                    h = q_head[row, j]
                    for k in range(c - 1):
                        if _rel(q[row, j, h + k, _TAG], R[j], M) > _rel(q[row, j, h + k + 1, _TAG], R[j], M):
                            stats[S_AUDIT] += 1
                    if c > 0 and rr_mode:
                        if _rel(R[j], R[j], M) > _rel(q[row, j, h, _TAG], R[j], M):
                            stats[S_AUDIT] += 1
                        if _rel(ant[row, j], R[j], M) < _rel(q[row, j, h + c - 1, _TAG], R[j], M):
                            stats[S_AUDIT] += 1
                    if c > 0 and q[row, j, h + c - 1, _DEFL] > K:
                        stats[S_AUDIT] += 1
                if tot != col_count[j]:
                    stats[S_AUDIT] += 1
    return dep_n


class CcqSwitch:
    """Chained CQ switch running the OCF or counter-aligned RR scheduler."""

    def __init__(self, config: SwitchConfig, modulus: int = 0, audit: bool = False):
        if config.arch != "CCQ":
            raise ConfigError(f"CcqSwitch needs arch CCQ, got {config.arch!r}")
        if modulus and config.sched != "RR":
            raise ConfigError("modular counters apply to the RR scheduler only")
        if modulus:
            bound = config.N * config.B + -(-config.K // config.N)
            if modulus < bound + 1:
                raise ConfigError(
                    f"modulus {modulus} below the live-counter span bound {bound} + 1"
                )
        self.config = config
        self.N, self.B, self.K = config.N, config.B, config.K
        self.modulus = modulus
        self.audit = audit
        self.rr_mode = config.sched == "RR"
        N, B = self.N, self.B
        self.q = np.zeros((N, N, 2 * B, 5), dtype=np.int64)
        self.q_head = np.zeros((N, N), dtype=np.int64)
        self.q_count = np.zeros((N, N), dtype=np.int64)
        self.col_count = np.zeros(N, dtype=np.int64)
        self.next_seq = np.ones((N, N), dtype=np.int64)
        self.ant = np.zeros((N, N), dtype=np.int64)
        self.pend_ca = np.full((N, N), -1, dtype=np.int64)
        self.pend_sn = np.full((N, N), -1, dtype=np.int64)
        self.new_ca = np.full((N, N), -1, dtype=np.int64)
        self.new_sn = np.full((N, N), -1, dtype=np.int64)
        self.A = np.zeros(N, dtype=np.int64)
        self.R = np.zeros(N, dtype=np.int64)
        self.stats = np.zeros(N_STATS, dtype=np.int64)
        self.fstats = np.zeros(N_FSTATS, dtype=np.float64)
        self.slot = 0

    def run_block(self, dst: np.ndarray, collect: bool = True) -> BlockResult:
        T = dst.shape[0]
        dep = np.empty((T * self.N, 4), dtype=np.int64)
        n = _ccq_run(dst, self.slot, self.B, self.K, self.modulus,
                     self.config.lb_enabled, self.config.dr_enabled, self.rr_mode,
                     self.q, self.q_head, self.q_count, self.col_count, self.next_seq,
                     self.ant, self.pend_ca, self.pend_sn, self.A, self.R,
                     self.new_ca, self.new_sn,
                     collect, self.audit, self.stats, self.fstats, dep)
        slot0 = self.slot
        self.slot += T
        return BlockResult(slot0, T, dep[:n, 0], dep[:n, 1], dep[:n, 2], dep[:n, 3])

    def step(self, arrivals: list[tuple[int, int]] | None = None) -> BlockResult:
        """One slot with explicit 0-based (input, output) arrivals."""
        dst = np.full((1, self.N), -1, dtype=np.int64)
        for i, j in arrivals or []:
            dst[0, i] = j
        return self.run_block(dst)

    def load_queue(self, row: int, j: int,
                   cells: list[tuple[int, int, int, int]]) -> None:
        """Replace queue (row, j) with (tag, seq, arrival_slot, orig_input) cells."""
        if len(cells) > self.B:
            raise ValueError("more cells than buffer capacity")
        tags = [c[0] for c in cells]
        if tags != sorted(tags):
            raise ValueError("queue tags must be non-decreasing")
        self.col_count[j] += len(cells) - self.q_count[row, j]
        self.q_head[row, j] = 0
        self.q_count[row, j] = len(cells)
        for k, (tag, seq, slot, orig) in enumerate(cells):
            self.q[row, j, k] = (tag, seq, slot, orig, 0)

    def queue_tags(self, row: int, j: int) -> list[int]:
        h = self.q_head[row, j]
        c = self.q_count[row, j]
        return [int(v) for v in self.q[row, j, h:h + c, _TAG]]

    def queue_origins(self, row: int, j: int) -> list[int]:
        h = self.q_head[row, j]
        c = self.q_count[row, j]
        return [int(v) for v in self.q[row, j, h:h + c, _ORIG]]

    def occupancy(self) -> np.ndarray:
        return self.q_count.copy()

    def resident(self) -> int:
        return int(self.q_count.sum())

    def ledger(self, order_violations: int = 0) -> MetricsLedger:
        return ledger_from_stats(self.stats, self.fstats, self.resident(),
                                 order_violations)
