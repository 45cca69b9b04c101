import math
import time

import pytest
from hypothesis import given, strategies as st

from libtissue.replay import (
    ReplayAborted,
    ReplayEvent,
    ReplayParseError,
    format_replay_log,
    load_name_map,
    number_names,
    parse_replay_line,
    parse_replay_log,
    parse_strace_log,
    replay_events,
    schedule_events,
    write_replay_log,
)


class FakeConn:
    def __init__(self, fail_after=None):
        self.sent = []
        self.fail_after = fail_after
        self.t0 = time.monotonic()

    def _record(self, item):
        if self.fail_after is not None and len(self.sent) >= self.fail_after:
            raise BrokenPipeError("peer gone")
        self.sent.append((time.monotonic() - self.t0, item))

    def send_antigen(self, value):
        self._record(("A", value))

    def send_signal(self, index, level):
        self._record(("S", index, level))


def test_parse_lines():
    assert parse_replay_line("0 A 5") == ReplayEvent(0, "A", 5)
    assert parse_replay_line("1000 S 0 0.85") == ReplayEvent(1000, "S", 0, 0.85)
    assert parse_replay_line("# comment") is None
    assert parse_replay_line("   ") is None


@pytest.mark.parametrize("line", ["0 A", "x A 5", "-1 A 5", "0 A 4294967296", "0 S 0", "0 S 0 nan",
                                  "0 Q 1", "0 A 5 6"])
def test_parse_line_errors(line):
    with pytest.raises(ValueError):
        parse_replay_line(line)


def test_decreasing_offsets_rejected_with_line_number(tmp_path):
    p = tmp_path / "log"
    p.write_text("# hdr\n0 A 5\n100 A 6\n50 A 7\n")
    with pytest.raises(ReplayParseError) as info:
        parse_replay_log(p)
    assert info.value.lineno == 4


def test_bad_line_reports_location(tmp_path):
    p = tmp_path / "log"
    p.write_text("0 A 5\n10 A five\n")
    with pytest.raises(ReplayParseError, match=":2:"):
        parse_replay_log(p)


events_strategy = st.lists(
    st.tuples(
        st.integers(0, 10**6),
        st.one_of(
            st.builds(lambda v: ("A", v, None), st.integers(0, 2**32 - 1)),
            st.builds(lambda i, x: ("S", i, x), st.integers(0, 8),
                      st.floats(allow_nan=False, allow_infinity=False)),
        ),
    ),
    max_size=30,
).map(lambda rows: [ReplayEvent(off, k, v, lv) for off, (k, v, lv) in
                    zip(sorted(r[0] for r in rows), [r[1] for r in rows])])


@given(events_strategy)
def test_format_parse_identity(events):
    text = format_replay_log(events, header=["label: normal"])
    parsed = [e for e in map(parse_replay_line, text.splitlines()) if e is not None]
    assert parsed == events


def test_write_and_read(tmp_path):
    evs = [ReplayEvent(0, "A", 5), ReplayEvent(10, "S", 0, 0.5), ReplayEvent(10, "A", 6)]
    write_replay_log(tmp_path / "x.log", evs)
    assert parse_replay_log(tmp_path / "x.log") == evs


def test_bundled_name_map():
    names = load_name_map()
    assert names["open"] == 5 and names["close"] == 6 and names["old_mmap"] == 90
    assert number_names(names)[5] == "open"


def test_empty_name_map(tmp_path):
    p = tmp_path / "m"
    p.write_text("# nothing\n")
    with pytest.raises(ValueError):
        load_name_map(p)


def test_strace_without_stamps(tmp_path):
    p = tmp_path / "trace"
    p.write_text(
        'open("/etc/passwd", O_RDONLY) = 3\n'
        "close(3) = 0\n"
        "frobnicate(1) = 0\n"
        "--- SIGCHLD {si_signo=SIGCHLD} ---\n"
        "[pid 12] <... read resumed>) = 1\n"
        "+++ exited with 0 +++\n"
    )
    events, report = parse_strace_log(p, load_name_map(), gap_us=500)
    assert events == [ReplayEvent(0, "A", 5), ReplayEvent(500, "A", 6)]
    assert report.parsed == 2
    assert report.skipped_names == {"frobnicate": 1}
    assert report.skipped_lines == 3


def test_strace_absolute_stamps(tmp_path):
    p = tmp_path / "trace"
    p.write_text("1700000000.100000 open(\"a\", 0) = 3\n1700000000.350000 close(3) = 0\n")
    events, _ = parse_strace_log(p, load_name_map())
    assert [(e.offset, e.value) for e in events] == [(0, 5), (250_000, 6)]


def test_strace_relative_stamps_with_pid(tmp_path):
    p = tmp_path / "trace"
    p.write_text("[pid  44] 0.000100 open(\"a\", 0) = 3\n[pid  44] 0.000050 close(3) = 0\n")
    events, _ = parse_strace_log(p, load_name_map())
    assert [(e.offset, e.value) for e in events] == [(100, 5), (150, 6)]


def test_rate_scaling_preserves_order_and_duration():
    evs = [ReplayEvent(i * 20_000, "A", i) for i in range(51)]  # 1 s span
    conn = FakeConn()
    assert replay_events(evs, 10.0, conn) == 51
    assert [item[1] for _, item in conn.sent] == list(range(51))
    duration = conn.sent[-1][0] - conn.sent[0][0]
    assert abs(duration - 0.1) <= 0.01 + 0.005


def test_signals_go_to_signal_connection():
    a, s = FakeConn(), FakeConn()
    replay_events([ReplayEvent(0, "A", 1), ReplayEvent(0, "S", 0, 0.5)], math.inf, a, s)
    assert [i for _, i in a.sent] == [("A", 1)]
    assert [i for _, i in s.sent] == [("S", 0, 0.5)]


def test_single_event_log():
    conn = FakeConn()
    assert replay_events([ReplayEvent(5_000_000, "A", 3)], math.inf, conn) == 1


def test_replay_aborts_with_count():
    conn = FakeConn(fail_after=2)
    with pytest.raises(ReplayAborted) as info:
        replay_events([ReplayEvent(0, "A", i) for i in range(5)], math.inf, conn)
    assert info.value.sent == 2


def test_bad_rate():
    with pytest.raises(ValueError):
        replay_events([], 0, FakeConn())
    with pytest.raises(ValueError):
        schedule_events([], -1)


def test_schedule_events_scaling():
    evs = [ReplayEvent(0, "A", 1), ReplayEvent(1_000_000, "S", 0, 0.2)]
    assert schedule_events(evs, 10.0, start_us=5) == [(5, ("A", 1)), (100_005, ("S", 0, 0.2))]
    assert [t for t, _ in schedule_events(evs, math.inf)] == [0, 0]
