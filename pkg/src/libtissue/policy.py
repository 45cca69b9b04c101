"""Syscall policies: construction, merging, response statistics, evaluation."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .model import ResponseRecord

PROVENANCES = ("naive", "generated", "merged")


@dataclass(frozen=True)
class Policy:
    """Deny-by-default permit set."""

    permitted: frozenset[int]
    provenance: str = "generated"

    def permits(self, syscall: int) -> bool:
        return syscall in self.permitted

    def __len__(self) -> int:
        return len(self.permitted)


def naive_policy(traces: Iterable[Iterable[int]]) -> Policy:
    seen: set[int] = set()
    for trace in traces:
        seen.update(trace)
    return Policy(frozenset(seen), "naive")


def policy_from_responses(responses: Iterable[ResponseRecord]) -> Policy:
    return Policy(frozenset(r.value for r in responses), "generated")


def merge_policies(policies: Sequence[Policy]) -> Policy:
    if not policies:
        raise ValueError("cannot merge an empty list of policies")
    out: set[int] = set()
    for p in policies:
        out |= p.permitted
    return Policy(frozenset(out), "merged")


def format_policy(policy: Policy, names: Optional[Mapping[int, str]] = None) -> str:
    names = names or {}
    lines = [f"# policy {policy.provenance}"]
    for n in sorted(policy.permitted):
        name = names.get(n)
        lines.append(f"permit {n} # {name}" if name else f"permit {n}")
    return "\n".join(lines) + "\n"


def parse_policy(text: str, source: str = "<policy>") -> Policy:
    provenance = "generated"
    permitted = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("# policy "):
            provenance = line.split()[2]
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] != "permit" or not parts[1].isdigit():
            raise ValueError(f"{source}:{lineno}: expected 'permit <number>', got {raw!r}")
        permitted.add(int(parts[1]))
    if provenance not in PROVENANCES:
        raise ValueError(f"{source}: unknown provenance {provenance!r}")
    return Policy(frozenset(permitted), provenance)


def write_policy(path: str | Path, policy: Policy, names: Optional[Mapping[int, str]] = None) -> None:
    Path(path).write_text(format_policy(policy, names))


def read_policy(path: str | Path) -> Policy:
    return parse_policy(Path(path).read_text(), str(path))


# -- response statistics ----------------------------------------------------

@dataclass(frozen=True)
class SyscallStats:
    mean: float
    sd: float
    cv: Optional[int]  # None when the mean is zero


def cv_percent(mean: float, sd: float) -> Optional[int]:
    """100 * sd / mean, rounded half up; undefined for a zero mean."""
    if mean == 0:
        return None
    return math.floor(100.0 * sd / mean + 0.5)


def counts_per_run(runs: Sequence[Iterable[ResponseRecord]], syscalls: Iterable[int]) -> dict[int, list[int]]:
    tallies = [Counter(r.value for r in run) for run in runs]
    return {s: [t[s] for t in tallies] for s in sorted(set(syscalls))}


def response_stats(per_run_counts: Mapping[int, Sequence[float]]) -> dict[int, SyscallStats]:
    """Mean, sample sd and cv of per-run response counts for each syscall."""
    out = {}
    for syscall, counts in per_run_counts.items():
        if len(counts) < 2:
            raise ValueError(f"syscall {syscall}: need at least two runs for a standard deviation")
        mean = statistics.fmean(counts)
        sd = statistics.stdev(counts)
        out[syscall] = SyscallStats(mean, sd, cv_percent(mean, sd))
    return out


# -- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class LabeledTrace:
    events: tuple[tuple[int, str], ...]  # (syscall, "normal" | "attack")
    source: str = "normal"

    def __post_init__(self):
        bad = {tag for _, tag in self.events} - {"normal", "attack"}
        if bad:
            raise ValueError(f"unknown trace tags {sorted(bad)}")

    @classmethod
    def from_lists(cls, syscalls: Sequence[int], tags: Sequence[str], source: str = "normal") -> "LabeledTrace":
        if len(syscalls) != len(tags):
            raise ValueError("one tag per syscall required")
        return cls(tuple(zip(syscalls, tags)), source)


@dataclass(frozen=True)
class PolicyReport:
    permit_pct: int
    deny_pct: int
    normal_pct: int  # share of the trace tagged normal
    attack_pct: int
    normal_permit_pct: int  # of normal events, share permitted
    attack_deny_pct: int  # of attack events, share denied


def _pct(part: int, whole: int) -> int:
    return 100 * part // whole if whole else 0


def evaluate_policy(policy: Policy, trace: LabeledTrace) -> PolicyReport:
    """Permit/deny percentages, truncated toward zero."""
    n = len(trace.events)
    if n == 0:
        raise ValueError("cannot evaluate a policy on an empty trace")
    permitted = sum(1 for s, _ in trace.events if s in policy.permitted)
    normal = [s for s, tag in trace.events if tag == "normal"]
    attack = [s for s, tag in trace.events if tag == "attack"]
    return PolicyReport(
        permit_pct=_pct(permitted, n),
        deny_pct=_pct(n - permitted, n),
        normal_pct=_pct(len(normal), n),
        attack_pct=_pct(len(attack), n),
        normal_permit_pct=_pct(sum(1 for s in normal if s in policy.permitted), len(normal)),
        attack_deny_pct=_pct(sum(1 for s in attack if s not in policy.permitted), len(attack)),
    )


REPORT_HEADER = "dataset,policy,permit_pct,deny_pct,normal_pct,attack_pct"


def report_row(dataset: str, policy_name: str, report: PolicyReport) -> str:
    return f"{dataset},{policy_name},{report.permit_pct},{report.deny_pct},{report.normal_pct},{report.attack_pct}"
