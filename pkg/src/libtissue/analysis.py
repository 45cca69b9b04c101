"""Series derived from probe logs and run results: rates, correlations, durations."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .model import ResponseRecord


def _field(sample, name: str) -> float:
    if isinstance(sample, Mapping):
        return float(sample[name])
    return float(sample.get(name))


def _wall(sample) -> float:
    if isinstance(sample, Mapping):
        return float(sample["wall_us"])
    return float(sample.wall_offset)


def rate_series(samples: Sequence, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-second rate of a cumulative probe counter.

    Returns ``(time_s, rate)`` with one point per probe interval.
    """
    t = np.array([_wall(s) for s in samples]) / 1e6
    v = np.array([_field(s, name) for s in samples])
    if len(t) == 0:
        return t, v
    dt = np.diff(np.concatenate([[0.0], t]))
    dv = np.diff(np.concatenate([[0.0], v]))
    return t, dv / dt


def cross_correlation(x: Sequence[float], y: Sequence[float], max_lag: int) -> dict[int, float]:
    """Pearson correlation of ``x[t]`` with ``y[t + lag]`` for each lag."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("series lengths differ")
    out = {}
    n = len(x)
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            a, b = x[: n - lag], y[lag:]
        else:
            a, b = x[-lag:], y[: n + lag]
        if len(a) < 3 or a.std() == 0 or b.std() == 0:
            out[lag] = float("nan")
        else:
            out[lag] = float(np.corrcoef(a, b)[0, 1])
    return out


def peak_lag(xcorr: Mapping[int, float]) -> int:
    finite = {k: v for k, v in xcorr.items() if np.isfinite(v)}
    if not finite:
        raise ValueError("no finite correlation values")
    best = max(finite.values())
    # smallest |lag| among ties
    return min((k for k, v in finite.items() if v == best), key=abs)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return float(stats.spearmanr(x, y).statistic)


def inclusion_frequency(policies: Iterable, syscalls: Iterable[int]) -> dict[int, float]:
    """Fraction of policies that permit each syscall."""
    policies = list(policies)
    return {s: sum(1 for p in policies if s in p.permitted) / len(policies) for s in syscalls}


def mean_series(series: Sequence[Sequence[float]]) -> np.ndarray:
    """Elementwise mean of series, padding shorter ones with zeros."""
    if not series:
        return np.zeros(0)
    n = max(len(s) for s in series)
    arr = np.zeros((len(series), n))
    for i, s in enumerate(series):
        arr[i, : len(s)] = s
    return arr.mean(axis=0)


def response_rate_bins(responses: Iterable[ResponseRecord], ticks_per_bin: int, n_bins: int) -> np.ndarray:
    counts = np.zeros(n_bins)
    for r in responses:
        b = r.tick // ticks_per_bin
        if b < n_bins:
            counts[b] += 1
    return counts


def active_duration(rate: Sequence[float], bin_s: float = 1.0, fraction: float = 0.1) -> float:
    """Seconds during which ``rate`` is at least ``fraction`` of its peak."""
    rate = np.asarray(rate, dtype=float)
    if rate.size == 0 or rate.max() <= 0:
        return 0.0
    return float(np.count_nonzero(rate >= fraction * rate.max()) * bin_s)


def response_span(rate: Sequence[float], bin_s: float = 1.0, fraction: float = 0.1) -> float:
    """Seconds from the first to the last bin at or above ``fraction`` of peak."""
    rate = np.asarray(rate, dtype=float)
    if rate.size == 0 or rate.max() <= 0:
        return 0.0
    idx = np.flatnonzero(rate >= fraction * rate.max())
    return float((idx[-1] - idx[0] + 1) * bin_s)


def lock_expression(samples: Sequence, field: str = "vr_locks") -> list[tuple[float, int]]:
    """Distinct VR lock values expressed at each probe sample."""
    out = []
    for s in samples:
        raw = s[field] if isinstance(s, Mapping) else s.get(field)
        values = raw.split() if isinstance(raw, str) else raw
        for v in sorted({int(x) for x in values}):
            out.append((_wall(s) / 1e6, v))
    return out


def syscall_frequencies(syscalls: Iterable[int]) -> Counter:
    return Counter(syscalls)
