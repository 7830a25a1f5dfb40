"""Closed-form buffer-overflow exponents and ON/OFF variance-time curves.

The overflow exponents come from the large-deviations rate function of
Bernoulli arrivals; the shared-queue exponent is minimized over a scalar
free parameter gamma by golden-section search (the objective is convex in
gamma for this family, guarded by a random-probe test in the suite).
Monte Carlo validators for the variance-time formulas live here too, so
the closed forms and their independent estimates stay side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, RngStream
from .traffic import OnOffModel

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


class UnstableScenarioError(ValueError):
    """Offered load meets or exceeds service capacity."""


@dataclass(frozen=True)
class AnalyticScenario:
    """Uniform Bernoulli setting: N flows of rate lam into outputs of rate C."""

    N: int
    lam: float
    C: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lam must be in (0, 1), got {self.lam}")
        if self.C <= 0:
            raise ConfigError(f"C must be positive, got {self.C}")

    @property
    def mu(self) -> float:
        """Normalized per-output load N * lam."""
        return self.N * self.lam


@dataclass(frozen=True)
class OverflowMode:
    """Dominant overflowing sub-system: (n_d, lam_d, C_d, B_d).

    ``B_d`` is expressed in multiples of the per-crosspoint buffer B.
    """

    n_star: int
    lam_d: float
    C_d: float
    B_d: int
    gamma_star: float

    def __post_init__(self) -> None:
        if self.n_star <= self.C_d:
            raise ConfigError(f"invalid mode: n_d={self.n_star} must exceed C_d={self.C_d}")


def lambda_star(x: float, lam: float) -> float:
    """Convex conjugate of the Bernoulli log-MGF at rate argument x.

    Equals the binary KL divergence between rates x and lam on [0, 1]
    (with 0*log0 = 0) and +inf outside.
    """
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lam must be in (0, 1), got {lam}")
    if x < 0.0 or x > 1.0:
        return math.inf
    t1 = 0.0 if x == 0.0 else x * math.log(x / lam)
    t2 = 0.0 if x == 1.0 else (1.0 - x) * math.log((1.0 - x) / (1.0 - lam))
    return t1 + t2


def _golden_min(f, lo: float, hi: float, rel_tol: float = 1e-9) -> tuple[float, float]:
    """Golden-section minimum of a unimodal f on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol * max(abs(a), abs(b), 1e-30):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def _shared_queue_infimum(n: float, C: float, lam: float) -> tuple[float, float]:
    """inf over gamma > 0 of gamma * conj((C + 1/gamma) / n, lam), with argmin.

    Feasible gammas keep the conjugate argument at most 1, i.e.
    gamma >= 1/(n - C); the objective grows linearly past its minimum.
    """
    lo = 1.0 / (n - C)

    def f(g: float) -> float:
        return g * lambda_star((C + 1.0 / g) / n, lam)

    hi = 2.0 * lo
    f_prev = f(lo)
    # expand until the bracket contains the minimum
    while f(hi) <= f_prev and hi < 1e15:
        f_prev = f(hi)
        hi *= 2.0
    g_star, val = _golden_min(f, lo * (1.0 + 1e-15), hi)
    # the boundary itself can be optimal when the minimizer sits at arg = 1
    if f(lo) < val:
        g_star, val = lo, f(lo)
    return val, g_star


def exponent_oq(N: int, C: float, lam: float) -> tuple[float, float]:
    """Output-queued overflow exponent and its optimizing gamma.

    N independent Bernoulli(lam) flows share one rate-C output; requires
    stability N * lam < C.
    """
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lam must be in (0, 1), got {lam}")
    if N * lam >= C:
        raise UnstableScenarioError(f"unstable: N*lam = {N * lam} >= C = {C}")
    val, g_star = _shared_queue_infimum(float(N), C, lam)
    return N * N * val, g_star


def exponent_cq_lqf(N: int, C: float, lam: float) -> tuple[float, OverflowMode]:
    """Longest-queue-first crosspoint-buffer exponent with its dominant mode.

    Minimizes the shared-queue exponent over sub-system sizes C < n <= N;
    the minimizer n* identifies the dominant mode (n*, lam, C, n* B).
    """
    if N * lam >= C:
        raise UnstableScenarioError(f"unstable: N*lam = {N * lam} >= C = {C}")
    best_e = math.inf
    best_n = 0
    best_g = 0.0
    for n in range(int(math.floor(C)) + 1, N + 1):
        if n <= C:
            continue
        val, g = _shared_queue_infimum(float(n), C, lam)
        e = n * n * val
        if e < best_e:
            best_e, best_n, best_g = e, n, g
    mode = OverflowMode(n_star=best_n, lam_d=lam, C_d=C, B_d=best_n, gamma_star=best_g)
    return best_e, mode


def exponent_pcq(N: int, C: float, lam: float, w: int, r: int) -> tuple[float, OverflowMode]:
    """Overflow exponent of a w x r pooled fabric with its dominant mode.

    Minimizes r * (n w)^2 * inf_gamma gamma * conj((r' C + 1/gamma)/(n w), r' lam)
    over active-output counts 1 <= r' <= r and pool counts n with
    r' C / w < n <= N / w.  The mode is (n* w, r'* lam, r'* C, n* w r) with
    the buffer expressed in multiples of B.
    """
    if N % w != 0 or N % r != 0:
        raise ConfigError(f"pool shape {w}x{r} must divide N={N}")
    if N * lam >= C:
        raise UnstableScenarioError(f"unstable: N*lam = {N * lam} >= C = {C}")
    best = None
    for r_prime in range(1, r + 1):
        lam_d = r_prime * lam
        if lam_d >= 1.0:
            continue
        C_d = r_prime * C
        for n in range(1, N // w + 1):
            if n * w <= C_d:
                continue
            val, g = _shared_queue_infimum(float(n * w), C_d, lam_d)
            e = r * (n * w) ** 2 * val
            if best is None or e < best[0]:
                best = (e, n, r_prime, g)
    if best is None:
        raise UnstableScenarioError(f"no valid overflow mode for {w}x{r} at lam={lam}")
    e, n, r_prime, g = best
    mode = OverflowMode(
        n_star=n * w,
        lam_d=r_prime * lam,
        C_d=r_prime * C,
        B_d=n * w * r,
        gamma_star=g,
    )
    return e, mode


def predicted_critical_utilization(mode: OverflowMode, N: int, B: int) -> float:
    """Expected buffer-fill fraction at overflow implied by a dominant mode.

    The n* dominant queues stand full while the others sit near
    n* gamma* lam B (capped at B).
    """
    rest = min(mode.n_star * mode.gamma_star * mode.lam_d, 1.0)
    return (mode.n_star + (N - mode.n_star) * rest) / N


def pool_simul_arrival_prob(w: int, r: int, lam: float, k: int) -> float:
    """P(exactly k of the w pooled crosspoint rows receive cells in one slot)."""
    if not 0 <= k <= w:
        raise ConfigError(f"k must be in [0, {w}], got {k}")
    p = r * lam
    if p < 0.0 or p > 1.0:
        raise ConfigError(f"pooled rate r*lam must be in [0, 1], got {p}")
    return math.comb(w, k) * p**k * (1.0 - p) ** (w - k)


# --- ON/OFF cumulative-arrival variance --------------------------------------

def _require_mixing(model: OnOffModel) -> None:
    if model.p01 + model.p10 <= 0.0:
        raise ConfigError("degenerate chain: p01 + p10 == 0")


def onoff_transition_power(model: OnOffModel, k: int) -> np.ndarray:
    """k-step transition matrix from the closed form in alpha = p11 - p01."""
    _require_mixing(model)
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    a = model.p11 - model.p01
    d = model.p10 + model.p01
    ak = a**k
    return np.array(
        [
            [(model.p10 + model.p01 * ak) / d, (model.p01 - model.p01 * ak) / d],
            [(model.p10 - model.p10 * ak) / d, (model.p01 + model.p10 * ak) / d],
        ]
    )


def mean_cumulative_arrivals(model: OnOffModel, t: int) -> float:
    """E[Y(t)] = p01 t / (p01 + p10) from a stationary start."""
    _require_mixing(model)
    return model.p01 * t / (model.p01 + model.p10)


def _second_moment_on_start(model: OnOffModel, t_max: int) -> np.ndarray:
    """E[Y_1^2(t)] for t = 1..t_max via the closed form in c1..c8."""
    p01, p10, p11 = model.p01, model.p10, model.p11
    a = p11 - p01
    d = 1.0 - a  # equals p10 + p01
    c1 = (p01 * p11 - 3.0 * p01**2 + p01) / d + 2.0 * p01 * p10 / d**2
    c2 = 2.0 * p10**2 * a / d**2
    c3 = 2.0 * p01**2 / d
    c4 = (
        1.0
        + 3.0 * p11
        + c3 * a * (3.0 * a - 2.0) / d**3
        + (3.0 * p11 * a - 2.0 * c1 - 3.0 * c3 - 2.0 * c2 * a) / d
        + (2.0 * c3 * a + c2 * a * (3.0 - 2.0 * a) - c1 * a) / d**2
    )
    c5 = (2.0 * c1 + c3) / (2.0 * d) - c3 * a / d**2
    c6 = c3 / (2.0 * d)
    c7 = (2.0 * c2 - 3.0 * p11) / d + (c1 - c2) / d**2 - c3 * (3.0 * a - 2.0) / d**3
    c8 = -c2 / d
    t = np.arange(1, t_max + 1, dtype=np.float64)
    a_pow = np.power(a, np.arange(0, t_max))  # a^(t-1), integer exponents
    out = c4 + c5 * t + c6 * t**2 + c7 * a_pow + c8 * t * a_pow
    out[0] = 1.0  # closed form applies from t = 2
    return out


def variance_time_onoff(model: OnOffModel, t: int) -> float:
    """Variance of cumulative arrivals Y(t) from a stationary start.

    Combines the closed-form E[Y_1^2(t)] with the defining mixture sum for
    E[Y_0^2(t)] = sum_tau p00^(t-1-tau) p01 E[Y_1^2(tau)].
    """
    _require_mixing(model)
    if t < 1:
        raise ConfigError(f"t must be >= 1, got {t}")
    p01, p10, p00 = model.p01, model.p10, model.p00
    ey1sq = _second_moment_on_start(model, t)
    if t == 1:
        ey0sq_t = 0.0
    else:
        tau = np.arange(1, t, dtype=np.int64)
        weights = p01 * p00 ** (t - 1 - tau).astype(np.float64)
        ey0sq_t = float(np.dot(weights, ey1sq[: t - 1]))
    denom = p01 + p10
    ey_sq = (p01 * ey1sq[t - 1] + p10 * ey0sq_t) / denom
    mean = mean_cumulative_arrivals(model, t)
    return ey_sq - mean * mean


def _delta_closed_terms(model: OnOffModel, N: int, k: int, t: int) -> float:
    """E[delta_k^2(t)]: per-flow arrival-difference second moment, k-distant taps."""
    p01, p10 = model.p01, model.p10
    a = model.p11 - model.p01
    d = 1.0 - a
    aN = a**N
    lead = 2.0 * p01 * p10 * (1.0 - a**k) * (1.0 - a ** (N - k)) * t / (d**2 * (1.0 - aN))
    tail = (
        2.0
        * p01
        * p10
        * a ** (N - k)
        * (1.0 - a**k) ** 2
        * (1.0 - aN**t)
        / (d**2 * (1.0 - aN) ** 2)
    )
    return lead + tail


def mean_lb_distance(model: OnOffModel, N: int, k: int, t: int) -> float:
    """E[delta_k(t)]: zero by the stationary mixture of the two start states."""
    _require_mixing(model)
    p01, p10 = model.p01, model.p10
    a = model.p11 - model.p01
    d = 1.0 - a
    common = (1.0 - a**k) * (1.0 - a ** (N * t)) / (d * (1.0 - a**N))
    m = p01 * p10 * common
    return (-m + m) / (p01 + p10)


def variance_lb_distance(model: OnOffModel, N: int, k: int, t: int) -> tuple[float, float]:
    """Cumulative-arrival spread between k-distant crosspoints under rotation.

    Returns (var_balanced, var_original) over t cycles of N slots each:
    the balanced figure sums (N - k) flows at distance k with k flows at
    distance N - k; the original is twice the single-tap variance at N t.
    """
    _require_mixing(model)
    if not 1 <= k <= N - 1:
        raise ConfigError(f"k must be in [1, N-1], got {k}")
    if t < 1:
        raise ConfigError(f"t must be >= 1, got {t}")
    var_lb = (N - k) * _delta_closed_terms(model, N, k, t) + k * _delta_closed_terms(
        model, N, N - k, t
    )
    var_orig = 2.0 * variance_time_onoff(model, N * t)
    return var_lb, var_orig


# --- Monte Carlo validators ---------------------------------------------------

def mc_variance_time(model: OnOffModel, t: int, paths: int, rng: RngStream) -> float:
    """Sample variance of Y(t) over stationary-start chains (vectorized)."""
    _require_mixing(model)
    state = (rng.uniform(paths) < model.rate).astype(np.int8)
    total = state.astype(np.int64).copy()
    for _ in range(t - 1):
        u = rng.uniform(paths)
        state = np.where(state == 1, u < model.p11, u < model.p01).astype(np.int8)
        total += state
    return float(total.var(ddof=1))


def mc_variance_lb_distance(
    model: OnOffModel, N: int, k: int, t: int, paths: int, rng: RngStream
) -> float:
    """Monte Carlo estimate of the balanced k-distance variance.

    Estimates the per-flow variances at distances k and N - k with two-jump
    cycle transitions (closed-form k-step probabilities), then combines the
    independent flows exactly.
    """
    def single(dist: int) -> float:
        pk = onoff_transition_power(model, dist)
        pnk = onoff_transition_power(model, N - dist)
        state = (rng.uniform(paths) < model.rate).astype(np.int8)
        delta = np.zeros(paths, dtype=np.int64)
        for _ in range(t):
            u1 = rng.uniform(paths)
            v = np.where(state == 1, u1 < pk[1, 1], u1 < pk[0, 1]).astype(np.int8)
            delta += v - state
            u2 = rng.uniform(paths)
            state = np.where(v == 1, u2 < pnk[1, 1], u2 < pnk[0, 1]).astype(np.int8)
        return float(delta.var(ddof=1))

    return (N - k) * single(k) + k * single(N - k)
