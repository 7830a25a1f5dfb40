"""Shared domain types, the slot clock convention, and seeded randomness.

Every simulation advances in fixed phases within one time slot:
arrival, notification (counter-aligned RR scheme only), departure,
deflection (chained fabrics only).  Occupancy comparisons inside a phase
use a snapshot taken at phase start, so per-crosspoint message passing is
order-independent.  At most one cell arrives per input per slot.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numba import njit

ARCHS = ("CQ", "CCQ", "PCQ", "OQ")
SCHEDS = ("LQF", "OCF", "RR", "GLQF_MWM", "FIFO")

# scheduler families that make sense on each fabric
_VALID_COMBOS = {
    "CQ": ("LQF",),
    "CCQ": ("OCF", "RR"),
    "PCQ": ("GLQF_MWM",),
    "OQ": ("FIFO",),
}

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_UNIT = 1.0 / 9007199254740992.0  # 2**-53


class ConfigError(ValueError):
    """Invalid switch or scenario configuration."""


@dataclass
class Cell:
    """One fixed-size unit of traffic.

    Ports are 1-based.  ``tag`` is the order tag whose meaning depends on
    the scheduling scheme: an arrival timestamp under oldest-cell-first,
    or a wait-counter under counter-aligned round-robin.
    """

    input: int
    output: int
    seq: int
    arrival_slot: int
    tag: int = 0


@dataclass(frozen=True)
class SwitchConfig:
    """Static description of one switch instance.

    ``K`` (deflection cap) defaults to ``N - 1`` for chained fabrics.
    ``w``/``r`` give the pooling shape and ``s_w``/``s_r`` the per-pool
    memory write/read speedups (pooled fabric only).
    """

    N: int
    B: int
    arch: str = "CQ"
    sched: str = "LQF"
    w: int = 1
    r: int = 1
    s_w: int = 1
    s_r: int = 1
    K: int = -1
    lb_enabled: bool = True
    dr_enabled: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ConfigError(f"switch.N must be >= 2, got {self.N}")
        if self.B < 1:
            raise ConfigError(f"switch.B must be >= 1, got {self.B}")
        if self.arch not in ARCHS:
            raise ConfigError(f"switch.arch must be one of {ARCHS}, got {self.arch!r}")
        if self.sched not in SCHEDS:
            raise ConfigError(f"switch.sched must be one of {SCHEDS}, got {self.sched!r}")
        if self.sched not in _VALID_COMBOS[self.arch]:
            raise ConfigError(
                f"switch.sched {self.sched!r} is not valid for arch {self.arch!r} "
                f"(expected one of {_VALID_COMBOS[self.arch]})"
            )
        if self.arch == "PCQ":
            if self.N % self.w != 0:
                raise ConfigError(f"switch.w must divide N: {self.w} does not divide {self.N}")
            if self.N % self.r != 0:
                raise ConfigError(f"switch.r must divide N: {self.r} does not divide {self.N}")
            if not 1 <= self.s_w <= self.w:
                raise ConfigError(f"switch.s_w must be in [1, w], got {self.s_w} with w={self.w}")
            if not 1 <= self.s_r <= self.r:
                raise ConfigError(f"switch.s_r must be in [1, r], got {self.s_r} with r={self.r}")
        if self.K == -1:
            object.__setattr__(self, "K", self.N - 1)
        if self.arch == "CCQ" and self.K < 0:
            raise ConfigError(f"switch.K must be >= 0, got {self.K}")


def _mix64_int(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


@dataclass
class RngStream:
    """Deterministic counter-based random stream (splitmix64).

    The stream is a pure function of its derivation key: draw ``n`` values,
    and the same (seed, label) pair always yields the same values.  The
    one-word state is shared directly with compiled fabric kernels, which
    advance it with the identical recurrence, so Python-side and kernel-side
    draws form a single well-defined sequence.
    """

    state: np.ndarray  # shape-(1,) uint64
    label: str = ""

    def next_u64(self) -> int:
        s = (int(self.state[0]) + _GOLDEN) & _MASK64
        self.state[0] = s
        return _mix64_int(s)

    def next_unit(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _UNIT

    def u64(self, n: int) -> np.ndarray:
        s0 = int(self.state[0])
        idx = np.arange(1, n + 1, dtype=np.uint64)
        out = _mix64_array(np.uint64(s0) + np.uint64(_GOLDEN) * idx)
        self.state[0] = (s0 + _GOLDEN * n) & _MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self.u64(n) >> np.uint64(11)) * _UNIT

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers uniform on [0, high)."""
        return (self.uniform(n) * high).astype(np.int64)

    def normals(self, n: int) -> np.ndarray:
        """n standard normal draws (Box-Muller on stream uniforms)."""
        m = (n + 1) // 2
        u1 = np.maximum(self.uniform(m), _UNIT)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def spawn(self, sublabel: str) -> "RngStream":
        return derive_stream(int(self.state[0]), f"{self.label}/{sublabel}")


def derive_stream(seed: int, label: str) -> RngStream:
    """Derive an independent stream from a 64-bit seed and a text label.

    Identical (seed, label) pairs give byte-identical sequences; distinct
    labels give statistically independent ones.
    """
    digest = hashlib.sha256(f"{seed & _MASK64}\x1f{label}".encode()).digest()
    state = np.array([int.from_bytes(digest[:8], "little")], dtype=np.uint64)
    return RngStream(state=state, label=label)


# --- kernel-side facet of the same generator -------------------------------

@njit(cache=True, nogil=True, inline="always")
def _k_next_u64(state):
    state[0] = state[0] + np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _k_next_unit(state):
    return (_k_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True, inline="always")
def _k_randint(state, n):
    """Uniform integer in [0, n)."""
    v = int(_k_next_unit(state) * n)
    if v >= n:
        v = n - 1
    return v
