"""Synthetic stand-ins for recorded daemon syscall traces.

A scenario yields a replay log (antigen + 1 Hz CPU signal) and a label
file tagging each antigen event ``normal`` or ``attack``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .replay import ReplayEvent, parse_replay_log, write_replay_log

# syscall number -> combined frequency in the two normal traces
NORMAL_FREQUENCIES: dict[int, int] = {
    12: 2, 11: 2, 136: 2, 66: 2, 2: 2, 4: 2, 309: 2, 13: 2, 197: 2, 19: 2,
    118: 2, 191: 2, 304: 2, 142: 3, 78: 4, 306: 4, 1: 4, 122: 4, 106: 4,
    303: 5, 141: 8, 125: 8, 168: 8, 311: 9, 312: 9, 174: 10, 20: 10, 55: 12,
    302: 12, 91: 15, 45: 16, 108: 23, 54: 24, 301: 25, 90: 27, 3: 27, 5: 30,
    6: 557,
}

# attack segments: exploit-only syscalls plus familiar ones the shellcode reuses
ATTACK_FREQUENCIES: dict[int, int] = {
    23: 4, 33: 3, 37: 2, 63: 6, 70: 3, 85: 2, 15: 2, 10: 2,
    3: 60, 4: 40, 5: 30, 6: 120, 11: 10, 45: 20, 90: 20, 91: 15, 108: 15,
    142: 10, 168: 12, 312: 25, 311: 20, 55: 10, 54: 10,
}

LABELS = ("normal", "success", "failure")
DEFAULT_ATTACK_FRACTION = {"normal": 0.0, "success": 0.76, "failure": 0.15}


@dataclass
class ScenarioSpec:
    label: str = "normal"
    weights: dict[int, float] = field(default_factory=lambda: dict(NORMAL_FREQUENCIES))
    attack_syscalls: dict[int, float] = field(default_factory=lambda: dict(ATTACK_FREQUENCIES))
    attack_fraction: Optional[float] = None  # None: per-label default
    duration: int = 1000  # antigen events
    span_s: float = 60.0
    bursts: int = 4
    burst_width_s: float = 4.0
    cpu_profile: Optional[list[tuple[float, float]]] = None  # (start_s, level); None: activity-driven
    cpu_decay: float = 0.6
    seed: int = 1

    def resolved_attack_fraction(self) -> float:
        if self.attack_fraction is not None:
            return self.attack_fraction
        return DEFAULT_ATTACK_FRACTION[self.label]


def validate_spec(spec: ScenarioSpec) -> ScenarioSpec:
    if spec.label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}, got {spec.label!r}")
    if spec.duration < 0:
        raise ValueError("duration must be >= 0")
    if not spec.weights or any(w <= 0 for w in spec.weights.values()):
        raise ValueError("syscall weights must be positive")
    frac = spec.resolved_attack_fraction()
    if not 0.0 <= frac <= 1.0:
        raise ValueError("attack_fraction must be within [0, 1]")
    if spec.label == "normal" and frac > 0:
        raise ValueError("normal scenarios carry no attack events")
    if frac > 0 and (not spec.attack_syscalls or any(w <= 0 for w in spec.attack_syscalls.values())):
        raise ValueError("attack syscall weights must be positive")
    if spec.span_s <= 0 or spec.bursts < 1 or spec.burst_width_s <= 0:
        raise ValueError("span_s, bursts and burst_width_s must be positive")
    if not 0.0 <= spec.cpu_decay < 1.0:
        raise ValueError("cpu_decay must be within [0, 1)")
    return spec


@dataclass
class Dataset:
    events: list[ReplayEvent]
    tags: list[str]  # one per antigen event
    label: str

    def syscalls(self) -> list[int]:
        return [e.value for e in self.events if e.kind == "A"]


def _burst_offsets(spec: ScenarioSpec, rng: random.Random) -> list[int]:
    """Event times clustered into bursts spread over the span."""
    width = min(spec.burst_width_s, spec.span_s)
    slot = (spec.span_s - width) / spec.bursts
    starts = [i * slot + rng.uniform(0, slot * 0.5) for i in range(spec.bursts)]
    offsets = []
    for _ in range(spec.duration):
        start = starts[int(rng.random() * spec.bursts)]
        # triangular density: quick rise, longer tail
        offsets.append(start + rng.triangular(0.0, width, width * 0.25))
    return sorted(round(t * 1e6) for t in offsets)


def _segment_mask(n: int, fraction: float, rng: random.Random) -> list[bool]:
    """Contiguous attack segments covering about ``fraction`` of the events."""
    k = round(n * fraction)
    if k == 0:
        return [False] * n
    if k == n:
        return [True] * n
    segments = max(1, min(3, k // 20 or 1))
    sizes = [k // segments + (1 if i < k % segments else 0) for i in range(segments)]
    free = n - k
    cuts = sorted(rng.randint(0, free) for _ in range(segments))
    mask: list[bool] = []
    prev = 0
    for cut, size in zip(cuts, sizes):
        mask.extend([False] * (cut - prev))
        mask.extend([True] * size)
        prev = cut
    mask.extend([False] * (free - prev))
    return mask


def _cpu_levels(spec: ScenarioSpec, offsets: Sequence[int], seconds: int) -> list[float]:
    if spec.cpu_profile is not None:
        profile = sorted(spec.cpu_profile)
        levels = []
        for s in range(seconds):
            level = 0.0
            for start, value in profile:
                if start <= s:
                    level = value
            levels.append(level)
        return levels
    counts = [0] * seconds
    for off in offsets:
        counts[min(seconds - 1, off // 1_000_000)] += 1
    peak = max(counts) or 1
    levels, level = [], 0.0
    for c in counts:
        level = spec.cpu_decay * level + (1 - spec.cpu_decay) * (c / peak)
        levels.append(round(0.02 + 0.9 * level, 2))
    return levels


def generate_dataset(spec: ScenarioSpec) -> Dataset:
    spec = validate_spec(spec)
    rng = random.Random(spec.seed)
    offsets = _burst_offsets(spec, rng)
    mask = _segment_mask(spec.duration, spec.resolved_attack_fraction(), rng)
    normal_keys = sorted(spec.weights)
    normal_w = [spec.weights[k] for k in normal_keys]
    attack_keys = sorted(spec.attack_syscalls)
    attack_w = [spec.attack_syscalls[k] for k in attack_keys]
    antigen: list[ReplayEvent] = []
    tags: list[str] = []
    for off, is_attack in zip(offsets, mask):
        if is_attack:
            value = rng.choices(attack_keys, attack_w)[0]
        else:
            value = rng.choices(normal_keys, normal_w)[0]
        antigen.append(ReplayEvent(off, "A", value))
        tags.append("attack" if is_attack else "normal")
    # CPU sampled at 1 Hz, continuing a few seconds past the last event
    last_s = (offsets[-1] // 1_000_000 + 1) if offsets else 0
    seconds = max(1, math.ceil(spec.span_s), last_s) + 10
    levels = _cpu_levels(spec, offsets, seconds)
    signals = [ReplayEvent(s * 1_000_000, "S", 0, lvl) for s, lvl in enumerate(levels)]
    # merge keeping order stable: at equal offsets the signal goes first
    events = sorted(signals + antigen, key=lambda e: (e.offset, e.kind != "S"))
    return Dataset(events, tags, spec.label)


def write_dataset(dataset: Dataset, log_path: str | Path, label_path: Optional[str | Path] = None,
                  header: Sequence[str] = ()) -> None:
    write_replay_log(log_path, dataset.events, [f"label: {dataset.label}", *header])
    if label_path is None:
        label_path = labels_path_for(log_path)
    Path(label_path).write_text(f"# label: {dataset.label}\n" + "".join(t + "\n" for t in dataset.tags))


def labels_path_for(log_path: str | Path) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".labels")


def read_dataset(log_path: str | Path, label_path: Optional[str | Path] = None) -> Dataset:
    events = parse_replay_log(log_path)
    label_path = Path(label_path) if label_path is not None else labels_path_for(log_path)
    label = "normal"
    n = sum(1 for e in events if e.kind == "A")
    if label_path.exists():
        tags = []
        for line in label_path.read_text().splitlines():
            line = line.strip()
            if line.startswith("# label:"):
                label = line.split(":", 1)[1].strip()
            elif line and not line.startswith("#"):
                if line not in ("normal", "attack"):
                    raise ValueError(f"{label_path}: bad tag {line!r}")
                tags.append(line)
        if len(tags) != n:
            raise ValueError(f"{label_path}: {len(tags)} tags for {n} antigen events")
    else:
        tags = ["normal"] * n
    return Dataset(events, tags, label)
