from pathlib import Path

import pytest

from bcml import config as cfg
from bcml import pipeline

ROOT = Path(__file__).resolve().parents[1]

ONE_D = """
[run]
pipeline = scalar
[manifold]
kind = interval
n = 16
[forward]
T_factor = 1.2
cfl_safety = 1.0
snap = T
"""


def test_shipped_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.ini")):
        c = cfg.load(p)
        assert c.text == p.read_text()


def test_one_d_fields():
    c = cfg.parse(ONE_D)
    assert c.pipeline == "scalar" and c.manifold["n"] == 16
    assert c.forward.T == pytest.approx(1.2 * c.diameter)
    assert c.forward.snap == "T" and c.s_values == (0.3, 0.5, 0.7)


def test_short_horizon_rejected_before_any_solve(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("solver reached")

    monkeypatch.setattr(pipeline, "synthesize", boom)
    with pytest.raises(cfg.ConfigError, match=r"\[forward\] T"):
        cfg.parse(ONE_D.replace("T_factor = 1.2", "T_factor = 0.9"))
    with pytest.raises(cfg.ConfigError, match=r"\[forward\] T"):
        cfg.parse(ONE_D.replace("T_factor = 1.2", "T = 0.5"))


def test_explicit_T_wins():
    c = cfg.parse(ONE_D.replace("T_factor = 1.2", "T = 2.0\nT_factor = 5"))
    assert c.forward.T == 2.0


@pytest.mark.parametrize("edit, field", [
    (("[forward]", "[forward]\nbogus = 1"), r"\[forward\] bogus"),
    (("[run]", "[extra]\nx = 1\n[run]"), r"\[extra\]"),
    (("cfl_safety = 1.0", "cfl_safety = -1"), r"\[forward\] cfl_safety"),
    (("cfl_safety = 1.0", "cfl_safety = fast"), r"\[forward\] cfl_safety"),
    (("n = 16", "n = 1.5"), r"\[manifold\] n"),
    (("kind = interval", "kind = torus"), r"\[manifold\] kind"),
    (("snap = T", "snap = never"), r"\[forward\] snap"),
    (("pipeline = scalar", "pipeline = other"), r"\[run\] pipeline"),
    (("T_factor = 1.2", ""), r"\[forward\] T"),
])
def test_errors_name_the_field(edit, field):
    with pytest.raises(cfg.ConfigError, match=field):
        cfg.parse(ONE_D.replace(*edit))


def test_reconstruct_options():
    c = cfg.parse(ONE_D + "[reconstruct]\nquadrature = trapezoid\nrule = lower\ntol_rank = 1e-5\n")
    assert (c.recon.quadrature, c.recon.rule, c.recon.tol_rank) == ("trapezoid", "lower", 1e-5)
    with pytest.raises(cfg.ConfigError, match="quadrature"):
        cfg.parse(ONE_D + "[reconstruct]\nquadrature = simpson\n")


def test_s_values():
    c = cfg.parse(ONE_D + "[checks]\ns_values = 0.1, 0.2\npushforward_patch = right\n")
    assert c.s_values == (0.1, 0.2) and c.pushforward_patch == "right"
    with pytest.raises(cfg.ConfigError, match="s_values"):
        cfg.parse(ONE_D + "[checks]\ns_values = a, b\n")


def test_solenoidal_sizes():
    c = cfg.parse("[run]\npipeline = solenoidal\n[solenoidal]\nsizes = 4, 5\ncalkin_k = 3\n")
    assert c.solenoidal.sizes == (4, 5) and c.solenoidal.calkin_k == 3
    with pytest.raises(cfg.ConfigError, match="sizes"):
        cfg.parse("[run]\npipeline = solenoidal\n[solenoidal]\nsizes = 2, 5\n")
    with pytest.raises(cfg.ConfigError, match="sizes"):
        cfg.parse("[run]\npipeline = solenoidal\n[solenoidal]\nsizes = x\n")


def test_malformed_and_missing(tmp_path):
    with pytest.raises(cfg.ConfigError, match="malformed"):
        cfg.parse("no section header\n")
    with pytest.raises(cfg.ConfigError, match="not found"):
        cfg.load(tmp_path / "nope.ini")
