import pytest

from specrun_sim.config import SimConfig, load_config, parse_config
from specrun_sim.errors import ConfigError
from specrun_sim.mem_hier import LevelConfig


def test_defaults():
    c = SimConfig()
    assert (c.width, c.rob_entries, c.iq_entries, c.mem_latency) == (4, 256, 40, 200)
    assert c.cache_l3 == LevelConfig(4 << 20, 8, 32)
    assert c.runahead_enabled and c.defense_mode == "none"


def test_parse_overrides_and_comments():
    c = parse_config("# comment\nrob_entries = 64\n"
                     "runahead.enabled = false  # off\ncache.l2 = 64KB,4,8\n")
    assert c.rob_entries == 64 and not c.runahead_enabled
    assert c.cache_l2 == LevelConfig(64 * 1024, 4, 8)


def test_render_round_trip(tmp_path):
    c = SimConfig(rob_entries=128, defense_mode="sl_cache")
    p = tmp_path / "c.cfg"
    p.write_text(c.render())
    assert load_config(p) == c


@pytest.mark.parametrize("text", [
    "bogus.key = 1",
    "rob_entries = -4",
    "rob_entries = lots",
    "defense.mode = magic",
    "runahead.trigger = l2_miss",
    "width = 8\nrob_entries = 4",
    "just words",
])
def test_bad_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_with_keys():
    c = SimConfig().with_keys({"defense.mode": "skip_inv_branch", "bp.history_bits": "10"})
    assert c.defense_mode == "skip_inv_branch" and c.bp_history_bits == 10
