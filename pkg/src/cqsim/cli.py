"""Configuration-driven experiment runner.

Scenarios come from line-oriented key-value config files with dotted
section keys::

    # 32x32 chained switch under long-range dependent load
    switch.arch = CCQ
    switch.sched = RR
    switch.N = 32
    switch.B = 40
    traffic.kind = lrd
    traffic.mu = 0.9
    traffic.H = 0.75
    traffic.L = 1000
    traffic.pattern = uniform
    run.slots = 1000000
    run.seed = 1

Subcommands: ``simulate <config>``, ``sweep <config>`` (needs the sweep.*
keys), ``curves <kind> [params]``, and ``ingest <trace> <table>``.
Results are CSV on stdout or ``--out``; exit code 0 on success, 1 on
configuration errors, 2 when a runtime invariant is violated (per-flow
order or internal audits).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analytics import (
    exponent_cq_lqf,
    exponent_oq,
    exponent_pcq,
    variance_lb_distance,
    variance_time_onoff,
)
from .core import ConfigError, SwitchConfig
from .fabric_basic import CqLqfSwitch, OqSwitch
from .fabric_ccq import CcqSwitch
from .fabric_pcq import PcqSwitch
from .metrics import (
    FlowOrderAuditor,
    MetricsLedger,
    critical_utilization,
    drop_rate,
)
from .traffic import (
    BernoulliMatrixSource,
    LrdMatrixSource,
    LrdModel,
    OnOffMatrixSource,
    OnOffModel,
    ScheduleSource,
    cells_to_schedule,
    hotspot_matrix,
    ingest_trace,
    load_lookup_csv,
    load_trace_csv,
    uniform_matrix,
    validate_traffic_matrix,
)

RESULT_HEADER = ("axis_value,seed,drop_rate,critical_util,mean_delay,"
                 "order_violations,max_counter_span,max_deflections")
_BLOCK = 1 << 14

_DEFAULT_SCHED = {"CQ": "LQF", "CCQ": "RR", "PCQ": "GLQF_MWM", "OQ": "FIFO"}


@dataclass(frozen=True)
class Scenario:
    switch: SwitchConfig
    kind: str                      # bernoulli | onoff | lrd | trace
    pattern: str = "uniform"       # uniform | hotspot | matrix
    mu: float = 0.0
    a: float = 0.0
    H: float = 0.75
    L: int = 1000
    onoff: OnOffModel | None = None
    matrix_path: str = ""
    traces: tuple[str, ...] = ()
    table_path: str = ""
    slot_ns: float = 51.2
    cell_bytes: int = 64
    slots: int = 0
    warmup: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("bernoulli", "onoff", "lrd", "trace"):
            raise ConfigError(f"traffic.kind must be bernoulli|onoff|lrd|trace, got {self.kind!r}")
        if self.pattern not in ("uniform", "hotspot", "matrix"):
            raise ConfigError(f"traffic.pattern must be uniform|hotspot|matrix, got {self.pattern!r}")
        if self.slots <= 0:
            raise ConfigError(f"run.slots must be positive, got {self.slots}")
        if not 0 <= self.warmup < self.slots:
            raise ConfigError(f"run.warmup must satisfy 0 <= warmup < slots, got {self.warmup}")
        if self.kind in ("bernoulli", "lrd") and not 0.0 < self.mu <= 1.0:
            raise ConfigError(f"traffic.mu must be in (0, 1] for {self.kind}, got {self.mu}")
        if self.kind == "onoff" and self.onoff is None:
            raise ConfigError("traffic.kind onoff needs traffic.p01 and traffic.p10")
        if self.kind == "trace" and (not self.traces or not self.table_path):
            raise ConfigError("traffic.kind trace needs traffic.trace and traffic.table")


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    axis: str
    values: tuple[float, ...]
    seeds: tuple[int, ...]


@dataclass
class RunResult:
    axis_value: str
    seed: int
    ledger: MetricsLedger
    sched: str

    def csv_row(self) -> str:
        lg = self.ledger
        rate = drop_rate(lg) if lg.arrivals > 0 else 0.0
        util = critical_utilization(lg)
        delay = lg.delay_sum / lg.departures if lg.departures > 0 else ""
        span = lg.max_counter_span if self.sched == "RR" else ""
        defl = lg.max_deflections if self.sched in ("RR", "OCF") else ""
        fields = [self.axis_value, str(self.seed), str(rate),
                  "" if util is None else str(util), str(delay),
                  str(lg.order_violations), str(span), str(defl)]
        return ",".join(fields)


# --- config parsing -----------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _get(cfg: dict[str, str], key: str, conv, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        v = cfg[key]
        if conv is bool:
            if v.lower() in ("true", "1", "yes", "on"):
                return True
            if v.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(v)
        return conv(v)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {cfg[key]!r}") from exc


def scenario_from_config(cfg: dict[str, str]) -> Scenario:
    arch = _get(cfg, "switch.arch", str, required=True)
    sched = _get(cfg, "switch.sched", str, default=_DEFAULT_SCHED.get(arch, "LQF"))
    N = _get(cfg, "switch.N", int, required=True)
    switch = SwitchConfig(
        N=N,
        B=_get(cfg, "switch.B", int, required=True),
        arch=arch,
        sched=sched,
        w=_get(cfg, "switch.w", int, default=1),
        r=_get(cfg, "switch.r", int, default=1),
        s_w=_get(cfg, "switch.s_w", int, default=_get(cfg, "switch.w", int, default=1)),
        s_r=_get(cfg, "switch.s_r", int, default=_get(cfg, "switch.r", int, default=1)),
        K=_get(cfg, "switch.K", int, default=-1),
        lb_enabled=_get(cfg, "switch.lb", bool, default=True),
        dr_enabled=_get(cfg, "switch.dr", bool, default=True),
        seed=_get(cfg, "run.seed", int, default=0),
    )
    onoff = None
    if _get(cfg, "traffic.kind", str, required=True) == "onoff":
        p01 = _get(cfg, "traffic.p01", float, required=True)
        p10 = _get(cfg, "traffic.p10", float, required=True)
        onoff = OnOffModel(p00=1.0 - p01, p01=p01, p10=p10, p11=1.0 - p10)
    traces = _get(cfg, "traffic.trace", str, default="")
    return Scenario(
        switch=switch,
        kind=cfg["traffic.kind"],
        pattern=_get(cfg, "traffic.pattern", str, default="uniform"),
        mu=_get(cfg, "traffic.mu", float, default=0.0),
        a=_get(cfg, "traffic.a", float, default=0.0),
        H=_get(cfg, "traffic.H", float, default=0.75),
        L=_get(cfg, "traffic.L", int, default=1000),
        onoff=onoff,
        matrix_path=_get(cfg, "traffic.matrix", str, default=""),
        traces=tuple(p.strip() for p in traces.split(",") if p.strip()),
        table_path=_get(cfg, "traffic.table", str, default=""),
        slot_ns=_get(cfg, "traffic.slot_ns", float, default=51.2),
        cell_bytes=_get(cfg, "traffic.cell_bytes", int, default=64),
        slots=_get(cfg, "run.slots", int, required=True),
        warmup=_get(cfg, "run.warmup", int, default=0),
        seed=_get(cfg, "run.seed", int, default=0),
    )


def sweep_from_config(cfg: dict[str, str]) -> SweepSpec:
    base = scenario_from_config(cfg)
    axis = _get(cfg, "sweep.axis", str, required=True)
    values = tuple(float(v) for v in _get(cfg, "sweep.values", str, required=True).split(","))
    seeds_raw = _get(cfg, "sweep.seeds", str, default=str(base.seed))
    seeds = tuple(int(s) for s in seeds_raw.split(","))
    apply_axis(base, axis, values[0])  # validate the axis name early
    return SweepSpec(base=base, axis=axis, values=values, seeds=seeds)


_AXIS_SWITCH_INT = {"switch.N": "N", "switch.B": "B", "switch.w": "w",
                    "switch.r": "r", "switch.s_w": "s_w", "switch.s_r": "s_r",
                    "switch.K": "K"}


def apply_axis(base: Scenario, axis: str, value: float) -> Scenario:
    if axis in _AXIS_SWITCH_INT:
        kwargs = {_AXIS_SWITCH_INT[axis]: int(value)}
        return replace(base, switch=replace(base.switch, **kwargs))
    if axis == "traffic.mu":
        return replace(base, mu=float(value))
    if axis == "traffic.a":
        return replace(base, a=float(value))
    if axis == "traffic.H":
        return replace(base, H=float(value))
    if axis == "traffic.L":
        return replace(base, L=int(value))
    raise ConfigError(f"sweep.axis {axis!r} is not a sweepable parameter")


# --- run machinery --------------------------------------------------------------

def build_engine(config: SwitchConfig):
    if config.arch == "CQ":
        return CqLqfSwitch(config)
    if config.arch == "OQ":
        return OqSwitch(config)
    if config.arch == "CCQ":
        return CcqSwitch(config)
    return PcqSwitch(config)


def rate_matrix(sc: Scenario) -> np.ndarray:
    N = sc.switch.N
    mu = sc.mu
    if sc.kind == "onoff":
        mu = sc.onoff.rate
    if sc.pattern == "uniform":
        return uniform_matrix(N, mu)
    if sc.pattern == "hotspot":
        return hotspot_matrix(N, mu, sc.a)
    rates = np.loadtxt(sc.matrix_path, delimiter=",", ndmin=2)
    if rates.shape != (N, N):
        raise ConfigError(f"traffic.matrix shape {rates.shape} does not match N={N}")
    return validate_traffic_matrix(rates)


def build_feed(sc: Scenario):
    if sc.kind == "bernoulli":
        return BernoulliMatrixSource(rate_matrix(sc), seed=sc.seed)
    if sc.kind == "onoff":
        return OnOffMatrixSource(sc.onoff, rate_matrix(sc), seed=sc.seed)
    if sc.kind == "lrd":
        model = LrdModel(H=sc.H, L=sc.L, mu=sc.mu)
        return LrdMatrixSource(model, rate_matrix(sc), seed=sc.seed)
    table = load_lookup_csv(sc.table_path)
    N = sc.switch.N
    per_input = []
    for i in range(N):
        records = load_trace_csv(sc.traces[i % len(sc.traces)])
        per_input.append(
            ingest_trace(records, sc.cell_bytes, sc.slot_ns, N, table, input_port=i + 1)
        )
    return ScheduleSource(cells_to_schedule(per_input, N, sc.slots))


def run_scenario(sc: Scenario, axis_value: str = "") -> RunResult:
    engine = build_engine(replace(sc.switch, seed=sc.seed))
    feed = build_feed(sc)
    auditor = FlowOrderAuditor(sc.switch.N)
    dst = np.empty((_BLOCK, sc.switch.N), dtype=np.int64)
    done = 0
    boundary_resident = 0
    while done < sc.slots:
        take = min(_BLOCK, sc.slots - done)
        if done < sc.warmup:
            take = min(take, sc.warmup - done)  # never straddle the boundary
        feed.fill_block(dst[:take], done)
        collect = done >= sc.warmup
        res = engine.run_block(dst[:take], collect=collect)
        if collect:
            auditor.update(res)
        done += take
        if done == sc.warmup:
            boundary_resident = engine.resident()
    ledger = engine.ledger(auditor.violations)
    # cells carried across the warmup boundary depart inside the measured
    # window; count them out so conservation holds on the window
    ledger.resident -= boundary_resident
    return RunResult(axis_value=axis_value, seed=sc.seed, ledger=ledger,
                     sched=sc.switch.sched)


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[RunResult]:
    points = [
        (str(value), replace(apply_axis(spec.base, spec.axis, value), seed=seed))
        for value in spec.values
        for seed in spec.seeds
    ]
    workers = workers or min(len(points), os.cpu_count() or 1)
    if workers <= 1:
        return [run_scenario(sc, axis_value=av) for av, sc in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_scenario, sc, axis_value=av) for av, sc in points]
        return [f.result() for f in futs]


def results_csv(rows: list[RunResult]) -> str:
    lines = ["# cqsim results v1", RESULT_HEADER]
    lines.extend(r.csv_row() for r in rows)
    return "\n".join(lines) + "\n"


# --- analytic curve emission ------------------------------------------------------

def emit_curves(kind: str, params: dict) -> str:
    N = int(params.get("N", 32))
    C = float(params.get("C", 1.0))
    lines = [f"# cqsim curves v1: kind={kind}"]
    if kind in ("oq_exponent", "cq_lqf_exponent", "pcq_exponent"):
        lo = float(params.get("mu_min", 0.02))
        hi = float(params.get("mu_max", 0.98))
        pts = int(params.get("points", 49))
        grid = np.linspace(lo, hi, pts)
        if kind == "oq_exponent":
            lines.append("mu,value,gamma_star")
            for mu in grid:
                e, g = exponent_oq(N, C, mu / N)
                lines.append(f"{mu},{e},{g}")
        elif kind == "cq_lqf_exponent":
            lines.append("mu,value,n_star,gamma_star")
            for mu in grid:
                e, mode = exponent_cq_lqf(N, C, mu / N)
                lines.append(f"{mu},{e},{mode.n_star},{mode.gamma_star}")
        else:
            w = int(params.get("w", 1))
            r = int(params.get("r", 1))
            lines.append("mu,value,n_star,r_star,gamma_star")
            for mu in grid:
                e, mode = exponent_pcq(N, C, mu / N, w, r)
                r_star = int(round(mode.lam_d / (mu / N)))
                lines.append(f"{mu},{e},{mode.n_star},{r_star},{mode.gamma_star}")
    elif kind == "variance_time":
        model = _onoff_from_params(params)
        t_max = int(params.get("t_max", 1000))
        pts = int(params.get("points", 16))
        ts = np.unique(np.round(np.logspace(0, np.log10(t_max), pts)).astype(int))
        lines.append("t,value")
        for t in ts:
            lines.append(f"{t},{variance_time_onoff(model, int(t))}")
    elif kind == "lb_distance":
        model = _onoff_from_params(params)
        t = int(params.get("t", 10))
        lines.append("k,value,value_original")
        for k in range(1, N):
            lb, orig = variance_lb_distance(model, N, k, t)
            lines.append(f"{k},{lb},{orig}")
    else:
        raise ConfigError(f"unknown curve kind {kind!r}")
    return "\n".join(lines) + "\n"


def _onoff_from_params(params: dict) -> OnOffModel:
    if "p01" not in params or "p10" not in params:
        raise ConfigError("variance curves need --p01 and --p10")
    p01 = float(params["p01"])
    p10 = float(params["p10"])
    return OnOffModel(p00=1.0 - p01, p01=p01, p10=p10, p11=1.0 - p10)


# --- entry point --------------------------------------------------------------------

def _write_out(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _violations_exit(rows: list[RunResult]) -> int:
    for r in rows:
        if r.ledger.order_violations > 0 or r.ledger.audit_violations > 0:
            return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cqsim",
                                     description="crossbar switch simulator and analytics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario from a config file")
    p_sim.add_argument("config")
    p_sim.add_argument("--out", default=None)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep from a config file")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--workers", type=int, default=None)

    p_curves = sub.add_parser("curves", help="emit closed-form analytic curves")
    p_curves.add_argument("kind", choices=["oq_exponent", "cq_lqf_exponent",
                                           "pcq_exponent", "variance_time", "lb_distance"])
    p_curves.add_argument("--N", type=int, default=32)
    p_curves.add_argument("--C", type=float, default=1.0)
    p_curves.add_argument("--w", type=int, default=1)
    p_curves.add_argument("--r", type=int, default=1)
    p_curves.add_argument("--mu-min", dest="mu_min", type=float, default=0.02)
    p_curves.add_argument("--mu-max", dest="mu_max", type=float, default=0.98)
    p_curves.add_argument("--points", type=int, default=49)
    p_curves.add_argument("--p01", type=float, default=None)
    p_curves.add_argument("--p10", type=float, default=None)
    p_curves.add_argument("--t", type=int, default=10)
    p_curves.add_argument("--t-max", dest="t_max", type=int, default=1000)
    p_curves.add_argument("--out", default=None)

    p_ing = sub.add_parser("ingest", help="fragment a packet trace into cell schedules")
    p_ing.add_argument("trace")
    p_ing.add_argument("table")
    p_ing.add_argument("--slot-ns", dest="slot_ns", type=float, default=51.2)
    p_ing.add_argument("--cell-bytes", dest="cell_bytes", type=int, default=64)
    p_ing.add_argument("--N", type=int, default=32)
    p_ing.add_argument("--input-port", dest="input_port", type=int, default=1)
    p_ing.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            with open(args.config, encoding="utf-8") as fh:
                sc = scenario_from_config(parse_config_text(fh.read()))
            rows = [run_scenario(sc)]
            _write_out(results_csv(rows), args.out)
            return _violations_exit(rows)
        if args.command == "sweep":
            with open(args.config, encoding="utf-8") as fh:
                spec = sweep_from_config(parse_config_text(fh.read()))
            rows = run_sweep(spec, workers=args.workers)
            _write_out(results_csv(rows), args.out)
            return _violations_exit(rows)
        if args.command == "curves":
            params = {k: v for k, v in vars(args).items()
                      if k not in ("command", "kind", "out") and v is not None}
            _write_out(emit_curves(args.kind, params), args.out)
            return 0
        # ingest
        records = load_trace_csv(args.trace)
        table = load_lookup_csv(args.table)
        cells = ingest_trace(records, args.cell_bytes, args.slot_ns, args.N,
                             table, input_port=args.input_port)
        lines = ["# cqsim cells v1", "slot,input,output,seq"]
        lines.extend(f"{c.arrival_slot},{c.input},{c.output},{c.seq}" for c in cells)
        _write_out("\n".join(lines) + "\n", args.out)
        span = cells[-1].arrival_slot + 1 if cells else 0
        sys.stderr.write(f"{len(records)} packets -> {len(cells)} cells over {span} slots\n")
        return 0
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
