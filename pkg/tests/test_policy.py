import pytest
from hypothesis import given, strategies as st

from libtissue.model import ResponseRecord
from libtissue.policy import (
    LabeledTrace,
    Policy,
    counts_per_run,
    cv_percent,
    evaluate_policy,
    format_policy,
    merge_policies,
    naive_policy,
    parse_policy,
    policy_from_responses,
    read_policy,
    report_row,
    response_stats,
    write_policy,
)


def _resp(*values):
    return [ResponseRecord(i, 0, v) for i, v in enumerate(values)]


def test_naive_policy_is_union_of_traces():
    assert naive_policy([[5, 6, 6], [3]]).permitted == {3, 5, 6}
    assert naive_policy([[]]).permitted == frozenset()
    assert naive_policy([[6] * 10]).permitted == {6}


def test_generated_policy():
    values = (78, 304, 309, 142, 168, 312, 55, 108, 5, 6)
    p = policy_from_responses(_resp(*values, 6, 6))
    assert len(p) == 10 and p.provenance == "generated"
    assert policy_from_responses([]).permitted == frozenset()


def test_merge():
    a, b = Policy(frozenset({5, 6})), Policy(frozenset({6, 3}))
    assert merge_policies([a, b]).permitted == {3, 5, 6}
    assert merge_policies([a]).permitted == a.permitted
    assert merge_policies([a]).provenance == "merged"
    with pytest.raises(ValueError):
        merge_policies([])


sets = st.frozensets(st.integers(0, 400), max_size=20).map(Policy)


@given(sets, sets, sets)
def test_merge_union_laws(a, b, c):
    m = lambda *ps: merge_policies(list(ps)).permitted
    assert m(a, a) == a.permitted
    assert m(a, b) == m(b, a)
    assert m(Policy(m(a, b)), c) == m(a, Policy(m(b, c)))


def test_policy_file_round_trip(tmp_path):
    p = Policy(frozenset({6, 5, 999}), "merged")
    text = format_policy(p, {5: "open", 6: "close"})
    assert text == "# policy merged\npermit 5 # open\npermit 6 # close\npermit 999\n"
    write_policy(tmp_path / "p.txt", p)
    assert read_policy(tmp_path / "p.txt") == p


@pytest.mark.parametrize("text", ["allow 5\n", "permit five\n", "# policy bogus\npermit 5\n"])
def test_bad_policy_text(text):
    with pytest.raises(ValueError):
        parse_policy(text)


@pytest.mark.parametrize("mean, sd, cv", [(19.43, 27.03, 139), (5.95, 7.75, 130)])
def test_cv_matches_reported_rows(mean, sd, cv):
    assert cv_percent(mean, sd) == cv


def test_cv_undefined_for_zero_mean():
    assert cv_percent(0.0, 0.0) is None


def test_response_stats_constant_counts():
    s = response_stats({6: [4, 4, 4]})[6]
    assert (s.mean, s.sd, s.cv) == (4.0, 0.0, 0)


def test_response_stats_sample_sd():
    s = response_stats({5: [1, 3]})[5]
    assert s.mean == 2.0 and s.sd == pytest.approx(2 ** 0.5)
    assert s.cv == 71


def test_response_stats_needs_two_runs():
    with pytest.raises(ValueError):
        response_stats({5: [3]})


def test_counts_per_run_includes_silent_syscalls():
    runs = [_resp(5, 5, 6), _resp(6)]
    assert counts_per_run(runs, [5, 6, 3]) == {3: [0, 0], 5: [2, 0], 6: [1, 1]}


def test_evaluate_hand_count():
    trace = LabeledTrace.from_lists([3, 3, 5, 7], ["normal", "normal", "normal", "attack"])
    r = evaluate_policy(Policy(frozenset({3, 5})), trace)
    assert (r.permit_pct, r.deny_pct) == (75, 25)
    assert (r.normal_pct, r.attack_pct) == (75, 25)
    assert (r.normal_permit_pct, r.attack_deny_pct) == (100, 100)


def test_evaluate_empty_policy_denies_all():
    trace = LabeledTrace.from_lists([1, 2, 3], ["normal"] * 3)
    r = evaluate_policy(Policy(frozenset()), trace)
    assert (r.permit_pct, r.deny_pct) == (0, 100)


def test_evaluate_truncates():
    trace = LabeledTrace.from_lists([1, 2, 3], ["normal", "attack", "attack"])
    r = evaluate_policy(Policy(frozenset({1})), trace)
    assert (r.permit_pct, r.deny_pct) == (33, 66)
    assert report_row("success1", "naive", r) == "success1,naive,33,66,33,66"


def test_evaluate_empty_trace():
    with pytest.raises(ValueError):
        evaluate_policy(Policy(frozenset({1})), LabeledTrace(()))


def test_trace_tags_checked():
    with pytest.raises(ValueError):
        LabeledTrace.from_lists([1], ["weird"])
    with pytest.raises(ValueError):
        LabeledTrace.from_lists([1, 2], ["normal"])
