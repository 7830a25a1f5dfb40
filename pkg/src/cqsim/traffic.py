"""Per-input arrival processes and packet-trace ingestion.

Generators hand the fabrics destination schedules as blocks: an int64
array of shape (slots, N) holding the 0-based destination port for each
(slot, input), or -1 when the input is silent.  Every generator emits at
most one cell per input per slot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import Cell, ConfigError, RngStream, derive_stream

_EPS_ROW = 1e-12


class AdmissibilityError(ConfigError):
    """Traffic matrix over-subscribes an input or an output."""


@dataclass(frozen=True)
class OnOffModel:
    """Two-state Markov chain (0 = OFF, 1 = ON); a slot in ON emits one cell."""

    p00: float
    p01: float
    p10: float
    p11: float

    def __post_init__(self) -> None:
        for name in ("p00", "p01", "p10", "p11"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if abs(self.p00 + self.p01 - 1.0) > _EPS_ROW:
            raise ConfigError(f"p00 + p01 must equal 1, got {self.p00 + self.p01}")
        if abs(self.p10 + self.p11 - 1.0) > _EPS_ROW:
            raise ConfigError(f"p10 + p11 must equal 1, got {self.p10 + self.p11}")

    @property
    def rate(self) -> float:
        """Stationary ON probability p01 / (p10 + p01)."""
        denom = self.p10 + self.p01
        if denom <= 0.0:
            raise ConfigError("degenerate chain: p01 + p10 == 0 has no stationary rate")
        return self.p01 / denom


@dataclass(frozen=True)
class LrdModel:
    """Long-range dependent source: Hurst parameter H, burst cap L, load mu."""

    H: float
    L: int
    mu: float

    def __post_init__(self) -> None:
        if not 0.5 < self.H < 1.0:
            raise ConfigError(f"H must be in (0.5, 1), got {self.H}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if not 0.0 < self.mu <= 1.0:
            raise ConfigError(f"mu must be in (0, 1], got {self.mu}")


@dataclass(frozen=True)
class PacketRecord:
    time_ns: int
    len_bytes: int
    flow_key: str

    def __post_init__(self) -> None:
        if self.len_bytes < 1:
            raise ConfigError(f"len_bytes must be >= 1, got {self.len_bytes}")


# --- scalar operations ------------------------------------------------------

def bernoulli_next(rate: float, rng: RngStream) -> int:
    """One Bernoulli(rate) arrival indicator."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"rate must be in [0, 1], got {rate}")
    return 1 if rng.next_unit() < rate else 0


def onoff_next(model: OnOffModel, state: int, rng: RngStream) -> tuple[int, int]:
    """Advance the chain one slot; the arrival equals the new state."""
    p_on = model.p11 if state == 1 else model.p01
    new = 1 if rng.next_unit() < p_on else 0
    return new, new


# --- traffic matrices -------------------------------------------------------

def uniform_matrix(N: int, mu: float) -> np.ndarray:
    """lambda_ij = mu / N everywhere."""
    if not 0.0 <= mu <= 1.0:
        raise ConfigError(f"mu must be in [0, 1], got {mu}")
    return np.full((N, N), mu / N)


def hotspot_matrix(N: int, mu: float, a: float) -> np.ndarray:
    """Diagonal rate a*mu, off-diagonal (1-a)*mu/(N-1); every row sums to mu."""
    if not 0.0 <= a <= 1.0:
        raise ConfigError(f"hot-spot factor a must be in [0, 1], got {a}")
    if not 0.0 < mu <= 1.0:
        raise ConfigError(f"mu must be in (0, 1], got {mu}")
    rates = np.full((N, N), (1.0 - a) * mu / (N - 1))
    np.fill_diagonal(rates, a * mu)
    return rates


def validate_traffic_matrix(rates: np.ndarray) -> np.ndarray:
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
        raise AdmissibilityError(f"rates must be square, got shape {rates.shape}")
    if (rates < 0).any():
        raise AdmissibilityError("negative rate entries")
    tol = 1e-9
    if (rates.sum(axis=1) > 1.0 + tol).any():
        raise AdmissibilityError("per-input rate sum exceeds 1")
    if (rates.sum(axis=0) > 1.0 + tol).any():
        raise AdmissibilityError("per-output rate sum exceeds 1")
    return rates


# --- block sources ----------------------------------------------------------

class BernoulliMatrixSource:
    """Independent Bernoulli arrivals per input with matrix rates."""

    def __init__(self, rates: np.ndarray, seed: int):
        self.rates = validate_traffic_matrix(rates)
        self.N = self.rates.shape[0]
        self._cum = np.cumsum(self.rates, axis=1)
        self._rngs = [derive_stream(seed, f"traffic:in{i}") for i in range(self.N)]

    def fill_block(self, dst: np.ndarray, slot0: int) -> None:
        slots = dst.shape[0]
        for i in range(self.N):
            u = self._rngs[i].uniform(slots)
            idx = np.searchsorted(self._cum[i], u, side="right")
            dst[:, i] = np.where(idx < self.N, idx, -1)


class OnOffMatrixSource:
    """One ON/OFF chain per input; each ON run shares a per-run destination.

    Runs are produced with their geometric sojourn construction, so blocks
    can be filled with slice writes instead of per-slot chain steps.
    """

    def __init__(self, model: OnOffModel, rates: np.ndarray, seed: int):
        self.model = model
        self.rates = validate_traffic_matrix(rates)
        self.N = self.rates.shape[0]
        row_tot = self.rates.sum(axis=1)
        self._dest_cum = np.cumsum(
            np.where(row_tot[:, None] > 0, self.rates / np.maximum(row_tot, 1e-300)[:, None], 1.0 / self.N),
            axis=1,
        )
        self._rngs = [derive_stream(seed, f"traffic:in{i}") for i in range(self.N)]
        # per input: remaining ON slots, remaining OFF slots, current destination
        self._on = np.zeros(self.N, dtype=np.int64)
        self._off = np.zeros(self.N, dtype=np.int64)
        self._dst = np.full(self.N, -1, dtype=np.int64)
        for i in range(self.N):
            # start each chain at its stationary state with a fresh sojourn
            denom = model.p01 + model.p10
            if denom > 0 and self._rngs[i].next_unit() < model.rate:
                self._on[i] = self._draw_on(i)
                self._off[i] = self._draw_off(i)
                self._dst[i] = self._draw_dest(i)
            else:
                self._off[i] = self._draw_off(i)

    def _draw_on(self, i: int) -> int:
        # run length >= 1 with P(l) = p11^(l-1) p10
        if self.model.p10 <= 0.0:
            return np.iinfo(np.int64).max // 4
        u = max(self._rngs[i].next_unit(), 1e-300)
        return 1 + int(math.log(u) / math.log(self.model.p11)) if self.model.p11 > 0 else 1

    def _draw_off(self, i: int) -> int:
        if self.model.p01 <= 0.0:
            return np.iinfo(np.int64).max // 4
        u = max(self._rngs[i].next_unit(), 1e-300)
        return 1 + int(math.log(u) / math.log(self.model.p00)) if self.model.p00 > 0 else 1

    def _draw_dest(self, i: int) -> int:
        return int(np.searchsorted(self._dest_cum[i], self._rngs[i].next_unit(), side="right"))

    def fill_block(self, dst: np.ndarray, slot0: int) -> None:
        slots = dst.shape[0]
        for i in range(self.N):
            pos = 0
            while pos < slots:
                if self._on[i] > 0:
                    n = min(self._on[i], slots - pos)
                    dst[pos:pos + n, i] = self._dst[i]
                    self._on[i] -= n
                    pos += n
                elif self._off[i] > 0:
                    n = min(self._off[i], slots - pos)
                    dst[pos:pos + n, i] = -1
                    self._off[i] -= n
                    pos += n
                else:
                    self._on[i] = self._draw_on(i)
                    self._off[i] = self._draw_off(i)
                    self._dst[i] = self._draw_dest(i)


def _truncated_power_tail_mean(alpha: float, cap: int, scale: float, shifted: bool) -> float:
    """Mean of the discrete power-tail sojourn samplers used below.

    shifted=True:  X = min(cap, ceil(scale * U**(-1/alpha)))   (X >= 1, ON runs)
    shifted=False: X = min(cap, floor(scale * U**(-1/alpha)))  (X >= 0, OFF gaps)
    """
    k = np.arange(1, cap + 1, dtype=np.float64)
    if shifted:
        tail = np.ones(cap)
        tail[1:] = np.minimum(1.0, (scale / (k[1:] - 1.0)) ** alpha)
    else:
        tail = np.minimum(1.0, (scale / k) ** alpha)
    return float(tail.sum())


def _solve_off_scale(alpha: float, cap: int, target: float) -> float:
    if target <= 0.0:
        return 0.0
    lo, hi = 1e-12, float(cap)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _truncated_power_tail_mean(alpha, cap, mid, shifted=False) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class LrdSource:
    """Long-range dependent ON/OFF arrivals for a single input.

    ON bursts draw from a discrete power-tail distribution with shape
    alpha = 3 - 2H truncated at L, so no burst exceeds the cap and the
    aggregate inherits the Hurst parameter.  OFF gaps mix a geometric
    component with a power-tail component (same shape, truncated at 100 L)
    with heavy weight 2H - 1, so the gap process adds the long-timescale
    variance the variance-time curve needs at high H and degenerates to
    geometric gaps in the short-range limit.  Both components are scaled so
    the long-run load is exactly mu; zero-length gaps let bursts of
    different flows run back-to-back, and a gap is stretched to one slot
    whenever two consecutive bursts draw the same destination (the mean is
    re-calibrated for that stretch), keeping per-flow runs within L.
    """

    OFF_CAP_FACTOR = 100
    CYCLE_BATCH = 4096

    def __init__(self, model: LrdModel, dest_cum: np.ndarray, rng: RngStream):
        self.model = model
        self.dest_cum = np.asarray(dest_cum, dtype=np.float64)
        self.rng = rng
        self.alpha = 3.0 - 2.0 * model.H
        self.w_heavy = 2.0 * model.H - 1.0
        self.off_cap = self.OFF_CAP_FACTOR * model.L
        probs = np.diff(self.dest_cum, prepend=0.0)
        p_same = float((probs ** 2).sum() / max(probs.sum(), 1e-300) ** 2)
        e_on = _truncated_power_tail_mean(self.alpha, model.L, 1.0, shifted=True)
        e_off = e_on * (1.0 - model.mu) / model.mu
        # fixed point: the same-destination stretch adds p_same * P(gap = 0)
        target = e_off
        for _ in range(4):
            c = _solve_off_scale(self.alpha, self.off_cap, target)
            q = target / (1.0 + target)
            p_zero = (self.w_heavy * (1.0 - min(1.0, c ** self.alpha))
                      + (1.0 - self.w_heavy) * (1.0 - q))
            target = max(0.0, e_off - p_same * p_zero)
        self.off_scale = c
        self.off_q = q
        self._carry_on = 0
        self._carry_off = 0
        self._carry_dst = -2  # no carried cycle yet
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def _draw_cycles(self, n: int) -> np.ndarray:
        inv = -1.0 / self.alpha
        u_on = np.maximum(self.rng.uniform(n), 1e-300)
        on = np.minimum(self.model.L, np.ceil(u_on ** inv)).astype(np.int64)
        heavy = self.rng.uniform(n) < self.w_heavy
        if self.off_scale > 0.0:
            u_off = np.maximum(self.rng.uniform(n), 1e-300)
            off_p = np.minimum(self.off_cap,
                               np.floor(self.off_scale * u_off ** inv)).astype(np.int64)
        else:
            off_p = np.zeros(n, dtype=np.int64)
        if self.off_q > 0.0:
            off_g = np.floor(np.log(1.0 - self.rng.uniform(n))
                             / np.log(self.off_q)).astype(np.int64)
        else:
            off_g = np.zeros(n, dtype=np.int64)
        off = np.where(heavy, off_p, off_g)
        dst = np.searchsorted(self.dest_cum, self.rng.uniform(n), side="right").astype(np.int64)
        if self._carry_dst >= -1:
            on = np.concatenate([[self._carry_on], on])
            off = np.concatenate([[self._carry_off], off])
            dst = np.concatenate([[self._carry_dst], dst])
        # same-flow bursts must not fuse into a run longer than L
        stretch = (off[:-1] == 0) & (dst[1:] == dst[:-1])
        off[:-1][stretch] = 1
        self._carry_on = int(on[-1])
        self._carry_off = int(off[-1])
        self._carry_dst = int(dst[-1])
        m = on.size - 1
        vals = np.empty(2 * m, dtype=np.int64)
        vals[0::2] = dst[:m]
        vals[1::2] = -1
        lens = np.empty(2 * m, dtype=np.int64)
        lens[0::2] = on[:m]
        lens[1::2] = off[:m]
        return np.repeat(vals, lens)

    def fill(self, out: np.ndarray) -> None:
        """Write destinations (-1 for silent slots) for len(out) slots."""
        n = out.size
        pos = 0
        while pos < n:
            if self._pos >= self._buf.size:
                self._buf = self._draw_cycles(self.CYCLE_BATCH)
                self._pos = 0
            take = min(n - pos, self._buf.size - self._pos)
            out[pos:pos + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            pos += take


class LrdMatrixSource:
    """One LrdSource per input; destinations follow the matrix row mix."""

    def __init__(self, model: LrdModel, rates: np.ndarray, seed: int):
        rates = validate_traffic_matrix(rates)
        self.N = rates.shape[0]
        self.model = model
        row_tot = rates.sum(axis=1)
        self._sources = []
        for i in range(self.N):
            tot = row_tot[i]
            probs = rates[i] / tot if tot > 0 else np.full(self.N, 1.0 / self.N)
            self._sources.append(
                LrdSource(model, np.cumsum(probs), derive_stream(seed, f"traffic:in{i}"))
            )

    def fill_block(self, dst: np.ndarray, slot0: int) -> None:
        for i in range(self.N):
            self._sources[i].fill(dst[:, i])


class ScheduleSource:
    """Replays a fixed per-slot schedule (from a trace); silent past its end."""

    def __init__(self, dst_by_slot: np.ndarray):
        self.table = np.asarray(dst_by_slot, dtype=np.int64)
        self.N = self.table.shape[1]

    def fill_block(self, dst: np.ndarray, slot0: int) -> None:
        slots = dst.shape[0]
        dst[:] = -1
        lo = min(slot0, self.table.shape[0])
        hi = min(slot0 + slots, self.table.shape[0])
        if hi > lo:
            dst[: hi - lo] = self.table[lo:hi]


# --- trace ingestion ---------------------------------------------------------

def ingest_trace(
    records: list[PacketRecord],
    cell_bytes: int,
    slot_ns: float,
    N: int,
    table: dict[str, int],
    input_port: int = 1,
) -> list[Cell]:
    """Fragment one input line's packets into fixed-size cells.

    Each packet becomes ceil(len_bytes / cell_bytes) cells occupying
    consecutive slots back-to-back starting at floor(time_ns / slot_ns);
    packets that would overlap on the line are serialized onto the next
    free slot.  Destinations come from the flow lookup table (1-based
    ports); per-flow sequence numbers are assigned in arrival order.
    """
    if cell_bytes < 1:
        raise ConfigError(f"cell_bytes must be >= 1, got {cell_bytes}")
    if slot_ns <= 0:
        raise ConfigError(f"slot_ns must be positive, got {slot_ns}")
    if not 1 <= input_port <= N:
        raise ConfigError(f"input_port must be in [1, {N}], got {input_port}")
    cells: list[Cell] = []
    next_free = 0
    prev_ns = None
    next_seq: dict[int, int] = {}
    for rec in records:
        if prev_ns is not None and rec.time_ns < prev_ns:
            raise ConfigError(f"trace records not sorted by time_ns at t={rec.time_ns}")
        prev_ns = rec.time_ns
        try:
            output = int(table[rec.flow_key])
        except KeyError:
            raise ConfigError(f"flow_key {rec.flow_key!r} missing from lookup table") from None
        if not 1 <= output <= N:
            raise ConfigError(f"lookup table maps {rec.flow_key!r} to invalid port {output}")
        n_cells = -(-rec.len_bytes // cell_bytes)
        start = max(int(rec.time_ns // slot_ns), next_free)
        for k in range(n_cells):
            seq = next_seq.get(output, 0) + 1
            next_seq[output] = seq
            cells.append(Cell(input=input_port, output=output, seq=seq, arrival_slot=start + k))
        next_free = start + n_cells
    return cells


def cells_to_schedule(cells_per_input: list[list[Cell]], N: int, slots: int) -> np.ndarray:
    """Merge per-input cell lists into a (slots, N) destination schedule."""
    dst = np.full((slots, N), -1, dtype=np.int64)
    for cells in cells_per_input:
        for c in cells:
            if c.arrival_slot < slots:
                dst[c.arrival_slot, c.input - 1] = c.output - 1
    return dst


def load_trace_csv(path: str) -> list[PacketRecord]:
    """Read `time_ns,len_bytes,flow_key` records (UTF-8, LF, header row)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["time_ns", "len_bytes", "flow_key"]:
            raise ConfigError(f"bad trace header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(PacketRecord(int(row["time_ns"]), int(row["len_bytes"]), row["flow_key"]))
    return out


def load_lookup_csv(path: str) -> dict[str, int]:
    """Read `flow_key,output_port` mapping (1-based ports)."""
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["flow_key", "output_port"]:
            raise ConfigError(f"bad lookup header in {path}: {reader.fieldnames}")
        for row in reader:
            out[row["flow_key"]] = int(row["output_port"])
    return out


# --- measurement helpers -----------------------------------------------------

def variance_time_hurst(x: np.ndarray, lo: int = 10, hi: int = 10_000, points: int = 14) -> float:
    """Hurst estimate from the variance-time plot over block sizes [lo, hi]."""
    x = np.asarray(x, dtype=np.float64)
    ms = np.unique(np.round(np.logspace(np.log10(lo), np.log10(hi), points)).astype(int))
    ms = ms[ms <= x.size // 4]
    variances = []
    for m in ms:
        nb = x.size // m
        variances.append(x[: nb * m].reshape(nb, m).mean(axis=1).var())
    slope = np.polyfit(np.log(ms.astype(float)), np.log(np.asarray(variances)), 1)[0]
    return 1.0 + slope / 2.0


def lag_autocorrelation(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-lag], x[lag:]) / denom)
