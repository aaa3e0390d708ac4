from pathlib import Path

import pytest

from specrun_sim.attacks import parse_probe_csv
from specrun_sim.cli import main

DATA = Path(__file__).parent / "data"


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("SPECRUN_SIM_OUT", raising=False)
    return tmp_path


def stats_of(path: Path) -> dict:
    return dict(line.split() for line in path.read_text().splitlines())


def test_asm_golden(out):
    img = out / "sum.img"
    assert main(["asm", str(DATA / "sum.s"), "-o", str(img)]) == 0
    assert img.read_text() == (DATA / "sum.img").read_text()


def test_asm_disasm_asm_identical_bytes(out):
    dis = out / "sum_dis.s"
    img2 = out / "sum2.img"
    assert main(["asm", "-d", str(DATA / "sum.img"), "-o", str(dis)]) == 0
    assert main(["asm", str(dis), "-o", str(img2)]) == 0
    assert img2.read_bytes() == (DATA / "sum.img").read_bytes()


def test_asm_error_exit_2(out, capsys):
    src = out / "bad.s"
    src.write_text("nop\njmp nowhere\nhalt\n")
    assert main(["asm", str(src)]) == 2
    err = capsys.readouterr().err
    assert "nowhere" in err and "line 2" in err


def test_missing_file_exit_1(out):
    assert main(["asm", str(out / "missing.s")]) == 1


def test_usage_errors_exit_1(out):
    assert main(["attack", "pht", "86", "bogus_defense"]) == 1
    assert main(["attack", "pht", "300", "none", "--out", str(out)]) == 1
    assert main(["run", str(DATA / "sum.s"), "--set", "rob_entries=-1"]) == 1
    assert main(["run", str(DATA / "sum.s"), "--set", "no.such.key=1"]) == 1


def test_run_writes_stats(out):
    assert main(["run", str(DATA / "sum.img"), "--out", str(out), "--events", "full"]) == 0
    s = stats_of(out / "stats.txt")
    assert s["committed"] == "7" and int(s["cycles"]) > 0
    assert (out / "events.csv").read_text().startswith("cycle,kind,seq,pc,detail\n")


def test_run_add_program(out):
    src = out / "add.s"
    src.write_text("li r1, 2\nli r2, 3\nadd r3, r1, r2\nhalt\n")
    assert main(["run", str(src), "--out", str(out)]) == 0
    assert stats_of(out / "stats.txt")["committed"] == "4"


def test_run_deadlock_exit_3(out):
    src = out / "spin.s"
    src.write_text("top: jmp top\n")
    assert main(["run", str(src), "--out", str(out), "--set", "max_cycles=300"]) == 3


def test_config_file(out):
    cfg = out / "c.cfg"
    cfg.write_text("runahead.enabled = false\n")
    assert main(["run", str(DATA / "sum.s"), "--config", str(cfg), "--out", str(out)]) == 0
    cfg.write_text("nonsense\n")
    assert main(["run", str(DATA / "sum.s"), "--config", str(cfg), "--out", str(out)]) == 1


def test_attack_pht_86_leaks(out):
    assert main(["attack", "pht", "86", "none", "--out", str(out)]) == 0
    rep = parse_probe_csv((out / "probe_pht_86_none_pad0_ra.csv").read_text())
    assert rep.recovered == 86 and len(rep.latencies) == 256


def test_attack_sl_cache_recovers_none(out):
    assert main(["attack", "pht", "86", "sl_cache", "--out", str(out)]) == 0
    text = (out / "probe_pht_86_sl_cache_pad0_ra.csv").read_text()
    assert text.splitlines()[-1].startswith("recovered,none")


def test_attack_beyond_rob_without_runahead(out):
    args = ["attack", "pht", "127", "none", "--nop-pad", "300", "--no-runahead", "--out", str(out)]
    assert main(args) == 0
    text = (out / "probe_pht_127_none_pad300_nora.csv").read_text()
    assert text.splitlines()[-1].startswith("recovered,none")
    # a wrong expectation is reported with exit 4
    assert main(args + ["--expect", "leak"]) == 4


def test_window_case1_scaled(out, capsys):
    args = ["window", "1", "--set", "rob_entries=64", "--bounds", "1", "200", "--out", str(out)]
    assert main(args) == 0
    assert "63" in (out / "window.txt").read_text()
    assert main(["window", "1", "--bounds", "1", "20", "--out", str(out)]) == 5


def test_bench(out):
    assert main(["bench", "--loads", "64", "--out", str(out)]) == 0
    s = stats_of(out / "bench.txt")
    assert float(s["ipc_on"]) > float(s["ipc_off"])


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECRUN_SIM_OUT", str(tmp_path))
    assert main(["run", str(DATA / "sum.s")]) == 0
    assert (tmp_path / "stats.txt").exists()


def test_deterministic_outputs(out):
    a, b = out / "a", out / "b"
    a.mkdir()
    b.mkdir()
    for d in (a, b):
        assert main(["attack", "btb", "42", "none", "--out", str(d)]) == 0
        assert main(["run", str(DATA / "sum.s"), "--events", "full", "--out", str(d)]) == 0
    for name in ("probe_btb_42_none_pad0_ra.csv", "stats.txt", "events.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
