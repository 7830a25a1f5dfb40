"""Measurement and verification: drop rate, critical utilization, delay,
per-flow order auditing, work-conservation accounting, and the
occupancy-dominance co-simulation of a crosspoint-buffered switch against
the output-queued reference.

The fabric engines accumulate raw counters in small arrays (so their
compiled kernels can update them); this module owns the counter layout and
turns them into ledgers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# int64 stats slots shared by every engine kernel
S_ARRIVALS = 0
S_DROPS = 1
S_DEPARTURES = 2
S_DELAY = 3
S_IDLE = 4        # idle-while-nonempty departure slots
S_MAXDEFL = 5     # max per-cell deflection count seen
S_MAXSPAN = 6     # max live order-tag span in any chain
S_AUDIT = 7       # internal invariant violations (audit mode)
N_STATS = 8

# float64 stats slots
F_DROPUTIL = 0    # sum over drop instants of destination-chain utilization
N_FSTATS = 1


@dataclass
class BlockResult:
    """Per-block kernel outputs: the departure log and optional occupancies."""

    slot0: int
    slots: int
    dep_in: np.ndarray
    dep_out: np.ndarray
    dep_seq: np.ndarray
    dep_slot: np.ndarray
    col_occ: np.ndarray | None = None  # (slots, N) end-of-slot per-output totals


@dataclass
class MetricsLedger:
    """Counters for one run; merging across runs is an associative fold."""

    arrivals: int = 0
    drops: int = 0
    departures: int = 0
    resident: int = 0
    drop_util_sum: float = 0.0
    drop_samples: int = 0
    delay_sum: int = 0
    order_violations: int = 0
    idle_violations: int = 0
    max_counter_span: int = 0
    max_deflections: int = 0
    audit_violations: int = 0

    def merge(self, other: "MetricsLedger") -> "MetricsLedger":
        return MetricsLedger(
            arrivals=self.arrivals + other.arrivals,
            drops=self.drops + other.drops,
            departures=self.departures + other.departures,
            resident=self.resident + other.resident,
            drop_util_sum=self.drop_util_sum + other.drop_util_sum,
            drop_samples=self.drop_samples + other.drop_samples,
            delay_sum=self.delay_sum + other.delay_sum,
            order_violations=self.order_violations + other.order_violations,
            idle_violations=self.idle_violations + other.idle_violations,
            max_counter_span=max(self.max_counter_span, other.max_counter_span),
            max_deflections=max(self.max_deflections, other.max_deflections),
            audit_violations=self.audit_violations + other.audit_violations,
        )

    def check_conservation(self) -> bool:
        return self.arrivals == self.drops + self.departures + self.resident


def ledger_from_stats(stats: np.ndarray, fstats: np.ndarray, resident: int,
                      order_violations: int = 0) -> MetricsLedger:
    return MetricsLedger(
        arrivals=int(stats[S_ARRIVALS]),
        drops=int(stats[S_DROPS]),
        departures=int(stats[S_DEPARTURES]),
        resident=resident,
        drop_util_sum=float(fstats[F_DROPUTIL]),
        drop_samples=int(stats[S_DROPS]),
        delay_sum=int(stats[S_DELAY]),
        order_violations=order_violations,
        idle_violations=int(stats[S_IDLE]),
        max_counter_span=int(stats[S_MAXSPAN]),
        max_deflections=int(stats[S_MAXDEFL]),
        audit_violations=int(stats[S_AUDIT]),
    )


def drop_rate(ledger: MetricsLedger) -> float:
    if ledger.arrivals <= 0:
        raise ValueError("drop rate undefined with zero arrivals")
    return ledger.drops / ledger.arrivals


def critical_utilization(ledger: MetricsLedger) -> float | None:
    """Mean destination-chain utilization over drop instants; None if no drops."""
    if ledger.drop_samples == 0:
        return None
    return ledger.drop_util_sum / ledger.drop_samples


def delay_stats(ledger: MetricsLedger) -> float:
    """Mean delay of departed cells (dropped cells excluded)."""
    if ledger.departures <= 0:
        raise ValueError("mean delay undefined with zero departures")
    return ledger.delay_sum / ledger.departures


def verify_flow_order(log) -> list[tuple[int, int, int, int]]:
    """Entries of a (slot, input, output, seq) departure log that break
    per-flow order, i.e. seq <= the previous departed seq of the same flow."""
    last: dict[tuple[int, int], int] = {}
    bad = []
    for slot, inp, out, seq in log:
        key = (inp, out)
        prev = last.get(key)
        if prev is not None and seq <= prev:
            bad.append((slot, inp, out, seq))
        last[key] = seq
    return bad


class FlowOrderAuditor:
    """Streaming per-flow order check over block departure logs (0-based ports)."""

    def __init__(self, N: int, keep: int = 32):
        self.N = N
        self.keep = keep
        self._last = np.full(N * N, -(2**62), dtype=np.int64)
        self.violations = 0
        self.samples: list[tuple[int, int, int, int]] = []

    def update(self, res: BlockResult) -> None:
        n = res.dep_in.size
        if n == 0:
            return
        flow = res.dep_in * self.N + res.dep_out
        order = np.argsort(flow, kind="stable")
        fs = flow[order]
        ss = res.dep_seq[order]
        starts = np.empty(n, dtype=bool)
        starts[0] = True
        starts[1:] = fs[1:] != fs[:-1]
        prev = np.empty(n, dtype=np.int64)
        prev[starts] = self._last[fs[starts]]
        prev[~starts] = ss[:-1][~starts[1:]]
        bad = ss <= prev
        if bad.any():
            self.violations += int(bad.sum())
            idx = order[bad][: self.keep - len(self.samples)]
            for k in idx:
                self.samples.append(
                    (int(res.dep_slot[k]), int(res.dep_in[k]), int(res.dep_out[k]),
                     int(res.dep_seq[k]))
                )
        ends = np.empty(n, dtype=bool)
        ends[-1] = True
        ends[:-1] = starts[1:]
        self._last[fs[ends]] = ss[ends]


def dominance_check(cq_col_occ: np.ndarray, oq_occ: np.ndarray, slot0: int = 0,
                    keep: int = 64) -> list[tuple[int, int]]:
    """(slot, output) pairs where the crosspoint column total exceeds the
    output-queued occupancy under the same arrivals."""
    if cq_col_occ.shape != oq_occ.shape:
        raise ValueError(f"occupancy shapes differ: {cq_col_occ.shape} vs {oq_occ.shape}")
    bad = np.argwhere(cq_col_occ > oq_occ)
    return [(slot0 + int(t), int(j)) for t, j in bad[:keep]]


@dataclass
class CorunResult:
    violations: list[tuple[int, int]]
    ledger_cq: MetricsLedger
    ledger_oq: MetricsLedger
    order_violations_cq: int
    order_violations_oq: int

    @property
    def mean_delay_cq(self) -> float:
        return delay_stats(self.ledger_cq)

    @property
    def mean_delay_oq(self) -> float:
        return delay_stats(self.ledger_oq)


def corun_cq_oq(config, feed, slots: int, block: int = 1 << 14) -> CorunResult:
    """Drive a CQ-LQF switch and the OQ reference with one arrival schedule.

    Compares end-of-slot per-output occupancies every slot and audits
    per-flow order on both switches.
    """
    from .fabric_basic import CqLqfSwitch, OqSwitch

    cq = CqLqfSwitch(config)
    oq = OqSwitch(config)
    audit_cq = FlowOrderAuditor(config.N)
    audit_oq = FlowOrderAuditor(config.N)
    violations: list[tuple[int, int]] = []
    done = 0
    dst = np.empty((block, config.N), dtype=np.int64)
    while done < slots:
        take = min(block, slots - done)
        feed.fill_block(dst[:take], done)
        r_cq = cq.run_block(dst[:take], want_col_occ=True)
        r_oq = oq.run_block(dst[:take], want_col_occ=True)
        if r_cq.slot0 != r_oq.slot0:
            raise ValueError("co-run engines out of step")
        violations.extend(dominance_check(r_cq.col_occ, r_oq.col_occ, r_cq.slot0))
        audit_cq.update(r_cq)
        audit_oq.update(r_oq)
        done += take
    return CorunResult(
        violations=violations,
        ledger_cq=cq.ledger(audit_cq.violations),
        ledger_oq=oq.ledger(audit_oq.violations),
        order_violations_cq=audit_cq.violations,
        order_violations_oq=audit_oq.violations,
    )
