"""Command-line entry points: ``libtissue <subcommand>`` and ``tcreplay``.

Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import threading
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import analysis, engine
from .datasets import ScenarioSpec, generate_dataset, read_dataset, write_dataset
from .model import ParamError, coerce_fields
from .policy import (
    REPORT_HEADER,
    LabeledTrace,
    evaluate_policy,
    merge_policies,
    naive_policy,
    policy_from_responses,
    read_policy,
    report_row,
    response_stats,
    counts_per_run,
    write_policy,
)
from .replay import (
    ReplayParseError,
    antigen_values,
    load_name_map,
    number_names,
    parse_replay_log,
    parse_strace_log,
    replay_events,
)
from .twocell import (
    TwocellConfig,
    build_twocell,
    format_config,
    load_config,
    read_response_log,
    run_experiment,
    twocell_probe,
    validate_config,
    write_response_log,
)

log = logging.getLogger("libtissue")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Outputs:
    """Tracks files and directories created by a command; removes them on failure."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def file(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            self.paths.append(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def dir(self, path: str | Path) -> Path:
        path = Path(path)
        missing = []
        p = path
        while not p.exists():
            missing.append(p)
            p = p.parent
        self.paths.extend(reversed(missing))
        path.mkdir(parents=True, exist_ok=True)
        return path

    def cleanup(self) -> None:
        for p in reversed(self.paths):
            if p.is_dir():
                for child in sorted(p.rglob("*"), reverse=True):
                    child.rmdir() if child.is_dir() else child.unlink()
                p.rmdir()
            elif p.exists():
                p.unlink()


@contextmanager
def outputs() -> Iterator[Outputs]:
    out = Outputs()
    try:
        yield out
    except BaseException:
        out.cleanup()
        raise


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> TwocellConfig:
    config = load_config(args.config) if args.config else TwocellConfig()
    extra = _overrides(getattr(args, "set", None))
    if extra:
        patched = coerce_fields(TwocellConfig, extra, source="--set")
        config = replace(config, **{k: getattr(patched, k) for k in extra})
    return validate_config(config)


def _rate(text: str) -> float:
    if text in ("inf", "max"):
        return math.inf
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("rate must be positive")
    return value


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = ScenarioSpec(label=args.label, duration=args.events, span_s=args.span, seed=args.seed,
                        bursts=args.bursts, attack_fraction=args.attack_fraction)
    dataset = generate_dataset(spec)
    with outputs() as out:
        log_path = out.file(args.out)
        labels = out.file(args.labels) if args.labels else out.file(Path(args.out).with_suffix(".labels"))
        write_dataset(dataset, log_path, labels, header=[f"seed: {args.seed}"])
    print(f"wrote {len(dataset.tags)} antigen events to {args.out}")
    return EXIT_OK


def _load_events(path: str, strace: bool = False, name_map: Optional[str] = None, gap_us: int = 1000):
    if strace:
        events, report = parse_strace_log(path, load_name_map(name_map), gap_us=gap_us)
        if report.skipped_names:
            log.warning("skipped unmapped syscalls: %s", dict(report.skipped_names))
        return events
    return parse_replay_log(path)


def cmd_replay(args) -> int:
    from .server import TissueClient

    events = _load_events(args.log, args.strace, args.map, args.gap_us)
    with TissueClient(args.addr, "antigen") as ac, TissueClient(args.addr, "signal") as sc:
        t0 = time.monotonic()
        sent = replay_events(events, args.rate, ac, sc)
    print(f"sent {sent} events in {time.monotonic() - t0:.3f} s")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import TissueServer

    config = _config(args)
    compartment = build_twocell(config, args.seed)
    stop = threading.Event()
    with outputs() as out:
        probe_log = None
        fh = None
        if args.probe_log:
            fh = open(out.file(args.probe_log), "w", newline="")
            probe_log = engine.ProbeLog(fh)
        try:
            with TissueServer(compartment, args.addr) as server:
                print(f"listening on {server.address}", flush=True)
                if args.duration is not None:
                    timer = threading.Timer(args.duration, stop.set)
                    timer.daemon = True
                    timer.start()
                try:
                    engine.run(compartment, mode="realtime", stop=stop,
                               probe=twocell_probe(args.probe_locks), probe_log=probe_log)
                except KeyboardInterrupt:
                    stop.set()
        finally:
            if fh is not None:
                fh.close()
        if args.responses:
            write_response_log(out.file(args.responses), compartment.responses)
    if args.debug_counters:
        print(json.dumps(compartment.counters.as_dict(), sort_keys=True), file=sys.stderr)
    print(f"{compartment.tick_count} ticks, {len(compartment.responses)} responses")
    return EXIT_OK


def _write_run(run_dir: Path, out: Outputs, result, names) -> None:
    out.dir(run_dir)
    write_response_log(out.file(run_dir / "responses.csv"), result.responses)
    with open(out.file(run_dir / "probes.csv"), "w", newline="") as fh:
        plog = engine.ProbeLog(fh)
        for s in result.probes:
            plog.write(s)
    write_policy(out.file(run_dir / "policy.txt"), policy_from_responses(result.responses), names)


def cmd_run_twocell(args) -> int:
    config = _config(args)
    events = _load_events(args.data)
    names = number_names(load_name_map(args.map))
    mode = "realtime" if args.realtime else "virtual"
    results = run_experiment(config, events, args.repeats, args.rate, seed=args.seed, mode=mode,
                             lead_in_s=args.lead_in, tail_s=args.tail, probe_locks=args.probe_locks)
    with outputs() as out:
        root = out.dir(args.out)
        (out.file(root / "config.txt")).write_text(format_config(config))
        rows = ["run,seed,ticks,responses,mean_action_time,error"]
        for r in results:
            if r.error is None:
                _write_run(root / f"run_{r.index:03d}", out, r, names)
            mat = r.mean_action_time if r.error is None else float("nan")
            rows.append(f"{r.index},{r.seed},{r.ticks},{len(r.responses)},{mat:.4f},{r.error or ''}")
        out.file(root / "summary.csv").write_text("\n".join(rows) + "\n")
    failed = sum(1 for r in results if r.error)
    ok = [r.mean_action_time for r in results if r.error is None]
    if ok:
        print(f"{len(results) - failed}/{len(results)} runs ok; mean action time {np.nanmean(ok):.2f}")
    return EXIT_RUNTIME if failed == len(results) and results else EXIT_OK


def _policy_paths(items: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("run_*/policy.txt"))
            if not found:
                raise FileNotFoundError(f"no run_*/policy.txt under {p}")
            paths.extend(found)
        else:
            paths.append(p)
    return paths


def cmd_naive_policy(args) -> int:
    traces = [antigen_values(parse_replay_log(p)) for p in args.data]
    policy = naive_policy(traces)
    with outputs() as out:
        write_policy(out.file(args.out), policy, number_names(load_name_map(args.map)))
    print(f"naive policy: {len(policy)} syscalls")
    return EXIT_OK


def cmd_merge_policy(args) -> int:
    policies = [read_policy(p) for p in _policy_paths(args.policies)]
    merged = merge_policies(policies)
    with outputs() as out:
        write_policy(out.file(args.out), merged, number_names(load_name_map(args.map)))
    print(f"merged {len(policies)} policies: {len(merged)} syscalls")
    return EXIT_OK


def cmd_stats(args) -> int:
    syscalls: list[int] = []
    for p in args.data:
        syscalls.extend(antigen_values(parse_replay_log(p)))
    freq = analysis.syscall_frequencies(syscalls)
    runs = []
    for d in args.runs:
        for path in sorted(Path(d).glob("run_*/responses.csv")):
            runs.append(read_response_log(path))
    if len(runs) < 2:
        raise ValueError("stats needs at least two run response logs")
    stats = response_stats(counts_per_run(runs, freq))
    names = number_names(load_name_map(args.map))
    rows = ["syscall,number,freq,mean,sd,cv"]
    for s in sorted(freq, key=lambda k: (freq[k], stats[k].mean, k)):
        st = stats[s]
        cv = "" if st.cv is None else str(st.cv)
        rows.append(f"{names.get(s, '')},{s},{freq[s]},{st.mean:.2f},{st.sd:.2f},{cv}")
    text = "\n".join(rows) + "\n"
    with outputs() as out:
        if args.out:
            out.file(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    return EXIT_OK


def cmd_eval_policy(args) -> int:
    policies = []
    for item in args.policy:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        policies.append((name, read_policy(path)))
    rows = [REPORT_HEADER]
    for data in args.data:
        ds = read_dataset(data)
        trace = LabeledTrace.from_lists(ds.syscalls(), ds.tags, ds.label)
        for name, policy in policies:
            rows.append(report_row(Path(data).stem, name, evaluate_policy(policy, trace)))
    text = "\n".join(rows) + "\n"
    with outputs() as out:
        if args.out:
            out.file(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    return EXIT_OK


def _experiment_rates(root: Path) -> list[np.ndarray]:
    rates = []
    for path in sorted(root.glob("run_*/probes.csv")):
        rows = engine.read_probe_log(path)
        rates.append(analysis.rate_series(rows, "responses")[1])
    if not rates:
        raise FileNotFoundError(f"no run_*/probes.csv under {root}")
    return rates


def _probe_interval_s(root: Path) -> float:
    first = next(iter(sorted(root.glob("run_*/probes.csv"))), None)
    rows = engine.read_probe_log(first) if first else []
    return float(rows[0]["wall_us"]) / 1e6 if rows else 1.0


def cmd_plotdata(args) -> int:
    from . import plotting

    run = Path(args.run)
    out_csv = Path(args.out)
    figure = None if args.no_figure else Path(args.figure or out_csv.with_suffix(".png"))
    with outputs() as out:
        if args.kind == "response-rate":
            rows = engine.read_probe_log(run / "probes.csv" if run.is_dir() else run)
            t, inp = analysis.rate_series(rows, "ingested")
            _, resp = analysis.rate_series(rows, "responses")
            lines = ["time_s,input_rate,response_rate"]
            lines += [f"{a:g},{b:g},{c:g}" for a, b, c in zip(t, inp, resp)]
            out.file(out_csv).write_text("\n".join(lines) + "\n")
            if figure:
                plotting.response_rate_figure(t, inp, resp, out.file(figure))
        elif args.kind == "vr-expression":
            probe_path = run / "probes.csv" if run.is_dir() else run
            rows = engine.read_probe_log(probe_path)
            if not rows or "vr_locks" not in rows[0]:
                raise ValueError(f"{probe_path} has no vr_locks column (run with --probe-locks)")
            points = analysis.lock_expression(rows)
            responded: set[int] = set()
            resp_path = probe_path.with_name("responses.csv")
            if resp_path.exists():
                responded = {r.value for r in read_response_log(resp_path)}
            lines = ["time_s,syscall,responded"]
            lines += [f"{t:g},{v},{int(v in responded)}" for t, v in points]
            out.file(out_csv).write_text("\n".join(lines) + "\n")
            if figure:
                plotting.vr_expression_figure(points, responded, out.file(figure))
        elif args.kind == "signal-compare":
            if not args.compare:
                raise UsageError("signal-compare needs --compare <experiment dir>")
            a = analysis.mean_series(_experiment_rates(run))
            b = analysis.mean_series(_experiment_rates(Path(args.compare)))
            n = max(len(a), len(b))
            a = np.pad(a, (0, n - len(a)))
            b = np.pad(b, (0, n - len(b)))
            dt = _probe_interval_s(run)
            t = np.arange(1, n + 1) * dt
            lines = ["time_s,with_signal,without_signal"]
            lines += [f"{x:g},{y:g},{z:g}" for x, y, z in zip(t, a, b)]
            out.file(out_csv).write_text("\n".join(lines) + "\n")
            print(f"active response duration: with signal {analysis.active_duration(a, dt):g} s, "
                  f"without {analysis.active_duration(b, dt):g} s")
            if figure:
                plotting.signal_compare_figure(t, a, b, out.file(figure))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _replay_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log", required=True, help="replay log, or strace output with --strace")
    p.add_argument("--strace", action="store_true", help="parse --log as strace output")
    p.add_argument("--rate", type=_rate, default=1.0, help="replay speed factor; 'inf' for back-to-back")
    p.add_argument("--addr", default=None, help="server host:port (default $TISSUE_ADDR or 127.0.0.1:7077)")
    p.add_argument("--map", default=None, help="syscall name table for --strace")
    p.add_argument("--gap-us", type=int, default=1000, help="event spacing for unstamped strace lines")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="libtissue", description="tissue simulation server, twocell experiments and policy tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("serve", help="run a twocell tissue server in realtime")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--addr", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds to run (default: until interrupted)")
    p.add_argument("--probe-log")
    p.add_argument("--probe-locks", action="store_true")
    p.add_argument("--responses", help="response log CSV to write on exit")
    p.add_argument("--debug-counters", action="store_true", help="print antigen flow counters on exit")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay a log to a server (tcreplay)")
    _replay_args(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("gen-data", help="generate a synthetic scenario dataset")
    p.add_argument("--label", choices=("normal", "success", "failure"), default="normal")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--events", type=int, default=1000)
    p.add_argument("--span", type=float, default=60.0, help="seconds covered by the events")
    p.add_argument("--bursts", type=int, default=4)
    p.add_argument("--attack-fraction", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="label file (default: <out>.labels)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run-twocell", help="repeat twocell runs over a dataset")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--data", required=True)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--rate", type=_rate, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realtime", action="store_true", help="wall-clock runs through the socket server")
    p.add_argument("--lead-in", type=float, default=None, help="seconds before replay (default 0 virtual, 10 realtime)")
    p.add_argument("--tail", type=float, default=60.0, help="seconds to keep running after replay")
    p.add_argument("--probe-locks", action="store_true", help="record VR locks in probe logs")
    p.add_argument("--map", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_twocell)

    p = sub.add_parser("naive-policy", help="permit every syscall seen in normal logs")
    p.add_argument("data", nargs="+")
    p.add_argument("--map", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_naive_policy)

    p = sub.add_parser("merge-policy", help="union of policies (files or run-twocell directories)")
    p.add_argument("policies", nargs="+")
    p.add_argument("--map", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge_policy)

    p = sub.add_parser("stats", help="per-syscall frequency and response mean/sd/cv")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--runs", nargs="+", required=True, help="run-twocell output directories")
    p.add_argument("--map", default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval-policy", help="permit/deny percentages of policies over labelled datasets")
    p.add_argument("--policy", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_policy)

    p = sub.add_parser("plotdata", help="emit figure series as CSV plus a rendered PNG")
    p.add_argument("--kind", choices=("response-rate", "vr-expression", "signal-compare"), required=True)
    p.add_argument("--run", required=True, help="run directory (or experiment directory for signal-compare)")
    p.add_argument("--compare", help="fixed-action-time experiment directory for signal-compare")
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="figure path (default: <out> with .png)")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_plotdata)
    return parser


def _dispatch(parser: argparse.ArgumentParser, argv: Optional[Sequence[str]]) -> int:
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParamError, ReplayParseError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"{parser.prog}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        print(f"{parser.prog}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    return _dispatch(build_parser(), argv)


def tcreplay_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(prog="tcreplay", description="replay antigen/signal logs to a tissue server")
    _replay_args(parser)
    parser.set_defaults(func=cmd_replay)
    return _dispatch(parser, argv)


if __name__ == "__main__":
    sys.exit(main())
