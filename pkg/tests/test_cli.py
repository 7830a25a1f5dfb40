import numpy as np
import pytest

from cqsim import cli
from cqsim.core import ConfigError
from cqsim.metrics import MetricsLedger

BASE_CONFIG = """
# minimal scenario
switch.arch = CQ
switch.N = 4
switch.B = 2
traffic.kind = bernoulli
traffic.mu = 0.8
traffic.pattern = uniform
run.slots = 20000
run.seed = 3
"""


def scenario(text=BASE_CONFIG):
    return cli.scenario_from_config(cli.parse_config_text(text))


class TestConfigParsing:
    def test_parse_lines_and_comments(self):
        cfg = cli.parse_config_text("# c\nswitch.N = 32\n\ntraffic.mu = 0.5\n")
        assert cfg == {"switch.N": "32", "traffic.mu": "0.5"}

    def test_rejects_garbage_line(self):
        with pytest.raises(ConfigError):
            cli.parse_config_text("switch.N 32\n")

    def test_missing_required_key_named_in_error(self):
        with pytest.raises(ConfigError, match="switch.N"):
            scenario("switch.arch = CQ\nswitch.B = 2\ntraffic.kind = bernoulli\n"
                     "traffic.mu = 0.5\nrun.slots = 10\n")

    def test_bad_value_named_in_error(self):
        with pytest.raises(ConfigError, match="switch.B"):
            scenario(BASE_CONFIG.replace("switch.B = 2", "switch.B = two"))

    def test_sched_defaults_by_arch(self):
        sc = scenario(BASE_CONFIG.replace("switch.arch = CQ", "switch.arch = CCQ"))
        assert sc.switch.sched == "RR"

    def test_warmup_bound(self):
        with pytest.raises(ConfigError, match="warmup"):
            scenario(BASE_CONFIG + "run.warmup = 20000\n")

    def test_sweep_axis_validated(self):
        with pytest.raises(ConfigError, match="sweep.axis"):
            cli.sweep_from_config(cli.parse_config_text(
                BASE_CONFIG + "sweep.axis = nope\nsweep.values = 1,2\n"))


class TestRunScenario:
    def test_deterministic_rows(self):
        a = cli.run_scenario(scenario())
        b = cli.run_scenario(scenario())
        assert a.csv_row() == b.csv_row()
        assert a.ledger == b.ledger

    def test_zero_traffic(self):
        sc = scenario(BASE_CONFIG
                      .replace("traffic.kind = bernoulli", "traffic.kind = onoff")
                      .replace("traffic.mu = 0.8", "traffic.p01 = 0.0\ntraffic.p10 = 0.5"))
        res = cli.run_scenario(sc)
        assert res.ledger.arrivals == 0
        assert res.ledger.departures == 0

    def test_warmup_excluded(self):
        sc_full = scenario()
        sc_warm = scenario(BASE_CONFIG + "run.warmup = 10000\n")
        full = cli.run_scenario(sc_full).ledger
        warm = cli.run_scenario(sc_warm).ledger
        assert 0 < warm.arrivals < full.arrivals
        assert warm.check_conservation()

    def test_all_archs_run(self):
        for arch, extra in [("CQ", ""), ("OQ", ""),
                            ("CCQ", "switch.sched = RR\n"),
                            ("CCQ", "switch.sched = OCF\n"),
                            ("PCQ", "switch.w = 2\nswitch.r = 2\n")]:
            text = BASE_CONFIG.replace("switch.arch = CQ", f"switch.arch = {arch}") + extra
            res = cli.run_scenario(scenario(text))
            assert res.ledger.arrivals > 0
            assert res.ledger.order_violations == 0


class TestSweep:
    def test_row_count_and_order(self):
        spec = cli.sweep_from_config(cli.parse_config_text(
            BASE_CONFIG.replace("run.slots = 20000", "run.slots = 2000")
            + "sweep.axis = traffic.mu\nsweep.values = 0.5,0.6,0.7\nsweep.seeds = 1,2\n"))
        rows = cli.run_sweep(spec)
        assert len(rows) == 6
        assert [r.axis_value for r in rows] == ["0.5", "0.5", "0.6", "0.6", "0.7", "0.7"]
        assert [r.seed for r in rows] == [1, 2, 1, 2, 1, 2]

    def test_csv_stable_under_rerun_and_workers(self):
        text = (BASE_CONFIG.replace("run.slots = 20000", "run.slots = 2000")
                + "sweep.axis = switch.B\nsweep.values = 1,2,4\nsweep.seeds = 1\n")
        spec = cli.sweep_from_config(cli.parse_config_text(text))
        a = cli.results_csv(cli.run_sweep(spec, workers=1))
        b = cli.results_csv(cli.run_sweep(spec, workers=3))
        assert a == b
        assert a.startswith("# cqsim results v1\naxis_value,seed,")

    def test_drop_rate_monotone_in_buffer(self):
        text = (BASE_CONFIG.replace("traffic.mu = 0.8", "traffic.mu = 0.95")
                .replace("run.slots = 20000", "run.slots = 60000")
                + "sweep.axis = switch.B\nsweep.values = 1,2,4,8\nsweep.seeds = 5\n")
        spec = cli.sweep_from_config(cli.parse_config_text(text))
        rows = cli.run_sweep(spec)
        rates = [r.ledger.drops / r.ledger.arrivals for r in rows]
        assert rates == sorted(rates, reverse=True)

    def test_hotspot_sweep_drops_fall_toward_high_a(self):
        # chained switch benefits from non-uniformity: near one-to-one
        # traffic (a -> 1) drops collapse
        text = ("switch.arch = CCQ\nswitch.sched = RR\nswitch.N = 8\nswitch.B = 4\n"
                "traffic.kind = lrd\ntraffic.mu = 0.95\ntraffic.H = 0.75\n"
                "traffic.L = 200\ntraffic.pattern = hotspot\ntraffic.a = 0.0\n"
                "run.slots = 300000\nrun.seed = 3\n"
                "sweep.axis = traffic.a\nsweep.values = 0.0,0.9\nsweep.seeds = 3\n")
        spec = cli.sweep_from_config(cli.parse_config_text(text))
        rows = cli.run_sweep(spec)
        rates = [r.ledger.drops / r.ledger.arrivals for r in rows]
        assert rates[1] < rates[0] / 2


class TestCurves:
    def test_cq_lqf_mode_jump(self):
        out = cli.emit_curves("cq_lqf_exponent",
                              dict(N=32, mu_min=0.5, mu_max=0.95, points=46))
        lines = out.strip().splitlines()[2:]
        n_stars = [int(l.split(",")[2]) for l in lines]
        mus = [float(l.split(",")[0]) for l in lines]
        jump = next(i for i in range(1, len(n_stars)) if n_stars[i] != n_stars[i - 1])
        assert n_stars[jump - 1] == 2 and n_stars[jump] == 32
        assert 0.78 <= mus[jump] <= 0.82

    def test_lb_distance_symmetry(self):
        out = cli.emit_curves("lb_distance", dict(N=32, p01=1 / 390, p10=0.1, t=10))
        lines = out.strip().splitlines()[2:]
        vals = [float(l.split(",")[1]) for l in lines]
        assert len(vals) == 31
        assert np.argmax(vals) + 1 == 16
        for k in range(1, 32):
            assert vals[k - 1] == pytest.approx(vals[32 - k - 1], rel=1e-12)

    def test_variance_time_t1(self):
        out = cli.emit_curves("variance_time", dict(p01=0.3, p10=0.2, t_max=10, points=10))
        first = out.strip().splitlines()[2]
        t, v = first.split(",")
        lam = 0.3 / 0.5
        assert int(t) == 1
        assert float(v) == pytest.approx(lam * (1 - lam))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            cli.emit_curves("nope", {})


class TestMainEntry:
    def test_simulate_roundtrip(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG.replace("run.slots = 20000", "run.slots = 2000"))
        rc = cli.main(["simulate", str(cfg)])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("# cqsim results v1")
        assert len(out.strip().splitlines()) == 3

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("switch.arch = XQ\n")
        rc = cli.main(["simulate", str(cfg)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exit_code(self, capsys):
        assert cli.main(["simulate", "/nonexistent.cfg"]) == 1

    def test_invariant_violation_exit_code(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG.replace("run.slots = 20000", "run.slots = 100"))

        real = cli.run_scenario

        def poisoned(sc, axis_value=""):
            res = real(sc, axis_value)
            res.ledger.order_violations = 1
            return res

        monkeypatch.setattr(cli, "run_scenario", poisoned)
        rc = cli.main(["simulate", str(cfg)])
        assert rc == 2

    def test_curves_to_file(self, tmp_path):
        out = tmp_path / "c.csv"
        rc = cli.main(["curves", "oq_exponent", "--N", "8", "--points", "5",
                       "--out", str(out)])
        assert rc == 0
        assert out.read_text().startswith("# cqsim curves v1")

    def test_ingest_command(self, tmp_path, capsys):
        trace = tmp_path / "t.csv"
        trace.write_text("time_ns,len_bytes,flow_key\n0,1500,f1\n100000,64,f2\n")
        table = tmp_path / "m.csv"
        table.write_text("flow_key,output_port\nf1,1\nf2,2\n")
        rc = cli.main(["ingest", str(trace), str(table), "--N", "4",
                       "--slot-ns", "10"])
        captured = capsys.readouterr()
        assert rc == 0
        lines = captured.out.strip().splitlines()
        assert lines[1] == "slot,input,output,seq"
        assert len(lines) == 2 + 24 + 1
        assert "2 packets -> 25 cells" in captured.err
