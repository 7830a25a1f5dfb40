import numpy as np
import pytest

from cqsim.core import Cell, ConfigError, SwitchConfig, derive_stream, _k_next_u64


class TestDeriveStream:
    def test_same_seed_label_identical(self):
        a = derive_stream(7, "traffic:in3").u64(10_000)
        b = derive_stream(7, "traffic:in3").u64(10_000)
        assert (a == b).all()

    def test_distinct_labels_differ(self):
        a = derive_stream(7, "traffic:in3").u64(10_000)
        b = derive_stream(7, "traffic:in4").u64(10_000)
        assert (a != b).any()

    def test_distinct_seeds_differ(self):
        a = derive_stream(7, "x").u64(1000)
        b = derive_stream(8, "x").u64(1000)
        assert (a != b).any()

    def test_scalar_and_vector_facets_agree(self):
        s = derive_stream(3, "facet")
        vec = derive_stream(3, "facet").u64(64)
        assert [s.next_u64() for _ in range(64)] == list(vec)

    def test_kernel_facet_agrees(self):
        s = derive_stream(3, "facet")
        vec = derive_stream(3, "facet").u64(16)
        assert [int(_k_next_u64(s.state)) for _ in range(16)] == list(vec)

    def test_binary_draw_mean(self):
        draws = derive_stream(7, "tie:out1").integers(10**6, 2)
        assert 0.49 <= draws.mean() <= 0.51

    def test_uniform_range(self):
        u = derive_stream(1, "u").uniform(10**5)
        assert (u >= 0).all() and (u < 1).all()

    def test_normals_moments(self):
        z = derive_stream(1, "z").normals(10**6)
        assert abs(z.mean()) < 0.005
        assert abs(z.std() - 1.0) < 0.005

    def test_interleaved_facets_form_one_sequence(self):
        s = derive_stream(11, "mix")
        ref = derive_stream(11, "mix").u64(6)
        got = [s.next_u64(), int(_k_next_u64(s.state)), *s.u64(4)]
        assert got == list(ref)


class TestSwitchConfig:
    def test_defaults_and_k_default(self):
        cfg = SwitchConfig(N=8, B=4, arch="CCQ", sched="RR")
        assert cfg.K == 7

    def test_explicit_k_kept(self):
        cfg = SwitchConfig(N=8, B=4, arch="CCQ", sched="RR", K=3)
        assert cfg.K == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(N=1, B=4),
            dict(N=8, B=0),
            dict(N=8, B=4, arch="XQ"),
            dict(N=8, B=4, arch="CQ", sched="RR"),
            dict(N=8, B=4, arch="PCQ", sched="GLQF_MWM", w=3),
            dict(N=8, B=4, arch="PCQ", sched="GLQF_MWM", w=2, r=2, s_w=3),
            dict(N=8, B=4, arch="PCQ", sched="GLQF_MWM", w=2, r=2, s_r=0),
        ],
    )
    def test_rejects_bad_configs(self, kwargs):
        with pytest.raises(ConfigError):
            SwitchConfig(**kwargs)

    def test_valid_pcq(self):
        cfg = SwitchConfig(N=8, B=4, arch="PCQ", sched="GLQF_MWM", w=2, r=4, s_w=2, s_r=3)
        assert cfg.w * cfg.r == 8


def test_cell_fields():
    c = Cell(input=1, output=2, seq=5, arrival_slot=9, tag=3)
    assert (c.input, c.output, c.seq, c.arrival_slot, c.tag) == (1, 2, 5, 9, 3)
