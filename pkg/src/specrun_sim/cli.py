"""``specrun-sim`` command line: asm, run, attack, window and bench.

Exit codes: 0 ok, 1 I/O or bad input, 2 assembly error, 3 simulation error,
4 attack outcome differs from the expectation, 5 window search not bracketed.
Results go to stdout, diagnostics to stderr. Output files land in ``--out``,
else in ``$SPECRUN_SIM_OUT``, else in the current directory.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .asm import assemble, disassemble, read_image, write_image
from .attacks import (
    DEFAULT_THRESHOLD, VARIANTS, WINDOW_BOUNDS, PocParams, measure_window, run_microbench,
    run_poc,
)
from .config import DEFENSES, SimConfig, load_config
from .core import run
from .errors import AsmError, ConfigError, ParamError, SearchError, SimError, TrapError

EXIT_OK, EXIT_IO, EXIT_ASM, EXIT_SIM, EXIT_MISMATCH, EXIT_SEARCH = 0, 1, 2, 3, 4, 5

# preset name -> (command, argument overrides)
PRESETS = {
    "fig7": ("attack", {"variant": "pht", "secret": "86", "defense": "none"}),
    "fig11-micro": ("bench", {}),
    "fig17": ("window", {"case": "all"}),
    "fig22": ("attack", {"variant": "pht", "secret": "127", "defense": "none", "nop_pad": 300,
                         "compare_runahead": True}),
}


class _Parser(argparse.ArgumentParser):
    # usage errors share the bad-input code; 2 is reserved for assembly errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def out_dir(args) -> Path:
    d = Path(args.out or os.environ.get("SPECRUN_SIM_OUT") or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def build_config(args) -> SimConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SimConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    return cfg.with_keys(overrides) if overrides else cfg


def load_program(path: str, mem_size: int):
    text = Path(path).read_text()
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith(";"):
            continue
        if s[:2] in ("I ", "E ", "D ", "S "):
            return read_image(text, mem_size)
        break
    return assemble(text, mem_size)


# -- commands --------------------------------------------------------------------
def cmd_asm(args) -> int:
    src = Path(args.input)
    text = src.read_text()
    if args.disassemble:
        program = load_program(args.input, SimConfig().mem_size)
        body = disassemble(program)
        dest = Path(args.output) if args.output else None
    else:
        program = assemble(text)
        body = write_image(program)
        dest = Path(args.output) if args.output else src.with_suffix(".img")
    if dest is None:
        sys.stdout.write(body)
    else:
        dest.write_text(body)
        print(f"wrote {dest} ({len(program)} instructions)")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.preset:
        return run_preset(args)
    if not args.program:
        raise ConfigError("run needs a program path or --preset")
    cfg = build_config(args)
    if args.events:
        cfg = cfg.replace(trace_events=args.events)
    program = load_program(args.program, cfg.mem_size)
    result = run(program, cfg)
    d = out_dir(args)
    stats = result.stats_text()
    (d / "stats.txt").write_text(stats)
    if cfg.trace_events != "off" and args.events:
        (d / "events.csv").write_text("cycle,kind,seq,pc,detail\n" + result.format_events())
    sys.stdout.write(stats)
    return EXIT_OK


def _expected_leak(defense: str, runahead: bool, nop_pad: int, cfg: SimConfig) -> bool:
    # without runahead an ordinary in-ROB Spectre still works while the gadget fits
    if defense != "none":
        return False
    return runahead or nop_pad < cfg.rob_entries


def _sweep_one(job):
    params, cfg, threshold = job
    o = run_poc(params, cfg, threshold)
    return params.secret_byte, o.report.recovered, o.consistent


def cmd_attack(args) -> int:
    cfg = build_config(args).replace(defense_mode=args.defense)
    if args.no_runahead:
        cfg = cfg.replace(runahead_enabled=False)
    d = out_dir(args)
    if args.compare_runahead:
        rc = EXIT_OK
        for ra in (True, False):
            sub = argparse.Namespace(**{**vars(args), "compare_runahead": False, "no_runahead": not ra})
            rc = max(rc, cmd_attack(sub))
        return rc
    expect = args.expect
    if expect == "auto":
        expect = "leak" if _expected_leak(args.defense, cfg.runahead_enabled, args.nop_pad, cfg) else "none"
    tag = f"{args.variant}_{args.secret}_{args.defense}_pad{args.nop_pad}_{'ra' if cfg.runahead_enabled else 'nora'}"

    if args.secret == "all":
        jobs = [(PocParams(s, args.variant, nop_pad=args.nop_pad, repeat_flush=args.repeat_flush),
                 cfg, args.threshold) for s in range(256)]
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as ex:
                rows = list(ex.map(_sweep_one, jobs, chunksize=8))
        else:
            rows = [_sweep_one(j) for j in jobs]
        rows.sort()
        lines = ["secret,recovered,consistent"]
        bad = 0
        for s, rec, cons in rows:
            lines.append(f"{s},{'none' if rec is None else rec},{int(cons)}")
            want = s if expect == "leak" else None
            if expect != "any" and rec != want:
                bad += 1
        exact = sum(1 for s, rec, _ in rows if rec == s)
        (d / f"sweep_{tag}.csv").write_text("\n".join(lines) + "\n")
        print(f"sweep {args.variant} defense={args.defense} runahead={cfg.runahead_enabled}: "
              f"recovered {exact}/256, unexpected {bad}")
        return EXIT_MISMATCH if bad else EXIT_OK

    try:
        secret = int(args.secret, 0)
    except ValueError:
        raise ParamError(f"secret must be 0..255 or 'all', got {args.secret!r}") from None
    params = PocParams(secret, args.variant, nop_pad=args.nop_pad, repeat_flush=args.repeat_flush)
    outcome = run_poc(params, cfg, args.threshold)
    report = outcome.report
    csv_path = d / f"probe_{tag}.csv"
    csv_path.write_text(report.to_csv())
    rec = "none" if report.recovered is None else report.recovered
    print(f"recovered,{rec} runahead={cfg.runahead_enabled} episodes={outcome.result.runahead_episodes} "
          f"({report.diagnostic}) -> {csv_path}")
    if not outcome.consistent:
        print("warning: timed latencies disagree with cache state", file=sys.stderr)
    want = secret if expect == "leak" else None
    if expect != "any" and report.recovered != want:
        print(f"expected {'leak' if expect == 'leak' else 'no leak'}, got recovered={rec}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_window(args) -> int:
    cfg = build_config(args)
    bounds = tuple(args.bounds) if args.bounds else WINDOW_BOUNDS
    cases = (1, 2, 3) if args.case == "all" else (int(args.case),)
    results = {}
    for c in cases:
        results[c] = measure_window(c, bounds, cfg, args.repeat_flush)
        print(f"N{c} {results[c]}")
    text = "".join(f"N{c} {n}\n" for c, n in results.items())
    if args.case == "all":
        ordered = results[1] < results[2] < results[3]
        text += f"ordered {'yes' if ordered else 'no'}\n"
        if not ordered:
            print("window sizes are not strictly increasing", file=sys.stderr)
            (out_dir(args) / "window.txt").write_text(text)
            return EXIT_SEARCH
    (out_dir(args) / "window.txt").write_text(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = build_config(args)
    b = run_microbench(args.loads, cfg)
    text = b.text()
    (out_dir(args) / "bench.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def run_preset(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
    command, fields = PRESETS[args.preset]
    parser = make_parser()
    sub = parser.parse_args([command] + _preset_argv(command, fields))
    sub.out, sub.config, sub.set = args.out, args.config, args.set
    return sub.func(sub)


def _preset_argv(command: str, fields: dict) -> list[str]:
    if command == "attack":
        argv = [fields["variant"], fields["secret"], fields["defense"]]
        if fields.get("nop_pad"):
            argv += ["--nop-pad", str(fields["nop_pad"])]
        if fields.get("compare_runahead"):
            argv.append("--compare-runahead")
        return argv
    if command == "window":
        return [fields["case"]]
    return []


# -- parser ----------------------------------------------------------------------
def _common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory (default: $SPECRUN_SIM_OUT or .)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specrun-sim", description="Runahead/Spectre out-of-order simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("asm", help="assemble source into a program image")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("-d", "--disassemble", action="store_true",
                   help="print the canonical listing of a source or image instead")
    p.set_defaults(func=cmd_asm)

    p = subs.add_parser("run", help="simulate a program or a named experiment")
    p.add_argument("program", nargs="?")
    p.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    p.add_argument("--events", choices=("summary", "full"), help="also write events.csv")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("attack", help="run a proof-of-concept and recover the secret")
    p.add_argument("variant", choices=VARIANTS)
    p.add_argument("secret", help="0..255, or 'all' for the full sweep")
    p.add_argument("defense", choices=DEFENSES)
    p.add_argument("--nop-pad", type=int, default=0)
    p.add_argument("--repeat-flush", type=int, default=1)
    p.add_argument("--no-runahead", action="store_true")
    p.add_argument("--compare-runahead", action="store_true", help="run with and without runahead")
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.add_argument("--expect", choices=("auto", "leak", "none", "any"), default="auto")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for the sweep")
    _common(p)
    p.set_defaults(func=cmd_attack)

    p = subs.add_parser("window", help="measure the transient window by binary search")
    p.add_argument("case", choices=("1", "2", "3", "all"))
    p.add_argument("--bounds", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--repeat-flush", type=int, default=3)
    _common(p)
    p.set_defaults(func=cmd_window)

    p = subs.add_parser("bench", help="runahead on/off IPC on a memory-bound loop")
    p.add_argument("--loads", type=int, default=128)
    _common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors, --help and --version
        return e.code if isinstance(e.code, int) else EXIT_IO
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except AsmError as e:
        print(f"assembly error: {e}", file=sys.stderr)
        return EXIT_ASM
    except SearchError as e:
        print(f"search error: {e}", file=sys.stderr)
        return EXIT_SEARCH
    except (SimError, TrapError) as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIM
    except (ConfigError, ParamError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
