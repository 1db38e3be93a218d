import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchedpairs.data import MATCHING_VARIABLES
from matchedpairs.errors import ConfigError, SchemaError
from matchedpairs.matching import (
    ConstraintRule,
    ConstraintSet,
    MatchedSet,
    balance_check,
    build_pair_rows,
    compute_propensity,
    match_cases,
    read_matched_sets,
    write_matched_sets,
    write_pair_rows,
)
from matchedpairs.synth import GeneratorConfig, generate_dataset

from conftest import make_dataset, make_record


def replay(data, scores, k, constraints):
    """Independent greedy replay: plain loops, no vectorisation."""
    by_id = {r.id: (r, s) for r, s in zip(data.records, scores)}
    used = set()
    out = []
    for cid in sorted(i for i, (r, _) in by_id.items() if r.outcome == 1):
        case, sc = by_id[cid]
        pool = []
        for rid, (r, s) in by_id.items():
            if r.outcome != 0 or rid in used or r.stratum != case.stratum:
                continue
            if not all(_allows(rule, case.value(rule.variable), r.value(rule.variable)) for rule in constraints.rules):
                continue
            pool.append((abs(sc - s), rid))
        pool.sort()
        chosen = pool[:k]
        if chosen:
            used.update(rid for _, rid in chosen)
            out.append((cid, tuple(rid for _, rid in chosen)))
    return out


def _allows(rule, a, b):
    return {"equal": a == b, "case_ge": a >= b, "case_le": a <= b}[rule.rule]


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, 500))
    k = draw(st.integers(1, 4))
    rng = np.random.default_rng(seed)
    recs = []
    for i in rng.permutation(n):
        recs.append(make_record(
            int(i) * 3 + 1, int(rng.random() < 0.3), nationality=f"N{rng.integers(0, 3)}",
            gender=int(rng.integers(0, 2)), adult=1, after2004=int(rng.integers(0, 2)),
            unaccompanied_minor=0, ria=int(rng.integers(0, 2)), interviewed=int(rng.integers(0, 2)),
        ))
    # coarse scores force distance ties
    scores = np.round(rng.random(n), 2)
    rules = draw(st.sampled_from([(), (("ria", "equal"),), (("interviewed", "case_ge"),),
                                  (("ria", "case_le"), ("interviewed", "equal"))]))
    constraints = ConstraintSet(tuple(ConstraintRule(v, r) for v, r in rules))
    return make_dataset(recs), scores, k, constraints


@settings(max_examples=100)
@given(instances())
def test_matching_matches_brute_force_replay(instance):
    data, scores, k, constraints = instance
    result = match_cases(data, scores, k=k, constraints=constraints)
    got = [(s.case_id, s.control_ids) for s in result]
    assert got == replay(data, scores, k, constraints)

    score_of = dict(zip((r.id for r in data), scores))
    controls = [c for s in result for c in s.control_ids]
    assert len(controls) == len(set(controls))
    for s in result:
        case = data.get(s.case_id)
        assert case.outcome == 1 and len(s.control_ids) <= k
        assert list(s.distances) == sorted(s.distances)
        for c in s.control_ids:
            ctrl = data.get(c)
            assert ctrl.outcome == 0 and ctrl.stratum == case.stratum
            assert constraints.satisfied({v: case.value(v) for v in ("ria", "interviewed", "unaccompanied_minor")},
                                         {v: ctrl.value(v) for v in ("ria", "interviewed", "unaccompanied_minor")})
        assert s.distances == tuple(abs(score_of[s.case_id] - score_of[c]) for c in s.control_ids)
    assert len(result.sets) + len(result.dropped_case_ids) == result.n_cases


def test_nearest_control_chosen():
    recs = [make_record(1, 1), make_record(2, 0), make_record(3, 0), make_record(4, 0)]
    data = make_dataset(recs)
    result = match_cases(data, {1: 0.50, 2: 0.41, 3: 0.52, 4: 0.90}, k=1)
    assert result[0].control_ids == (3,)
    assert result[0].distances[0] == pytest.approx(0.02)


def test_lower_id_case_consumes_shared_control():
    data = make_dataset([make_record(1, 1), make_record(2, 1), make_record(3, 0), make_record(4, 0)])
    result = match_cases(data, {1: 0.5, 2: 0.5, 3: 0.51, 4: 0.7}, k=1)
    assert [(s.case_id, s.control_ids) for s in result] == [(1, (3,)), (2, (4,))]


def test_tie_goes_to_lower_id():
    data = make_dataset([make_record(1, 1), make_record(7, 0), make_record(5, 0)])
    result = match_cases(data, {1: 0.5, 7: 0.52, 5: 0.48}, k=1)
    assert result[0].control_ids == (5,)


def test_strata_and_drops():
    data = make_dataset([make_record(1, 1, nationality="A"), make_record(2, 0, nationality="B"),
                         make_record(3, 1, nationality="B")])
    result = match_cases(data, np.array([0.3, 0.3, 0.3]), k=2)
    assert result.dropped_case_ids == [1]
    assert [(s.case_id, s.control_ids) for s in result] == [(3, (2,))]


def test_default_constraint_blocks_unaccompanied_mix():
    recs = [make_record(1, 1, adult=0, unaccompanied_minor=1), make_record(2, 0, adult=0),
            make_record(3, 0, adult=0, unaccompanied_minor=1)]
    data = make_dataset(recs)
    scores = {1: 0.5, 2: 0.5, 3: 0.9}
    assert match_cases(data, scores, k=1, constraints=ConstraintSet.default())[0].control_ids == (3,)
    assert match_cases(data, scores, k=1)[0].control_ids == (2,)


def test_caliper_and_bad_inputs():
    data = make_dataset([make_record(1, 1), make_record(2, 0)])
    assert match_cases(data, {1: 0.1, 2: 0.9}, k=1, caliper=0.5).dropped_case_ids == [1]
    with pytest.raises(ValueError):
        match_cases(data, {1: 0.1, 2: 0.9}, k=0)
    with pytest.raises(SchemaError):
        match_cases(data, {1: 0.1, 2: 0.9}, constraints=ConstraintSet((ConstraintRule("nope"),)))
    with pytest.raises(ConfigError):
        ConstraintRule("ria", "bigger")


@settings(max_examples=20)
@given(instances(), st.integers(0, 2**32 - 1))
def test_invariant_to_record_order(instance, seed):
    data, scores, k, constraints = instance
    perm = np.random.default_rng(seed).permutation(len(data))
    shuffled = make_dataset([data.records[i] for i in perm])
    a = match_cases(data, scores, k=k, constraints=constraints)
    b = match_cases(shuffled, scores[perm], k=k, constraints=constraints)
    assert a.sets == b.sets


def test_pair_rows():
    case = make_record(1, 1, ria=1, interviewed=0, ever_married=1)
    control = make_record(2, 0, ria=0, interviewed=0, ever_married=1)
    data = make_dataset([case, control, make_record(3, 0), make_record(4, 0)])
    rows = build_pair_rows([MatchedSet(1, (2,), (0.0,), case.stratum)], data, ["ria", "interviewed", "ever_married"])
    assert rows[0].z == {"ria": 1.0, "interviewed": 0.0, "ever_married": 0.0}
    assert rows[0].response == 1
    rows = build_pair_rows([MatchedSet(1, (2, 3, 4), (0, 0, 0), case.stratum)], data, ["ria"])
    assert len(rows) == 3 and {r.case_id for r in rows} == {1}
    same = build_pair_rows([MatchedSet(3, (4,), (0.0,), case.stratum)], data, ["ria", "interviewed"])
    assert set(same[0].z.values()) == {0.0}
    for v in MATCHING_VARIABLES:
        with pytest.raises(ValueError):
            build_pair_rows([], data, [v])
    with pytest.raises(SchemaError):
        build_pair_rows([], data, ["absent"])


def test_balance_examples():
    recs = [make_record(1, 1, ria=1), make_record(2, 0, ria=1), make_record(3, 1), make_record(4, 0),
            make_record(5, 0, ria=1), make_record(6, 0, ria=1)]
    data = make_dataset(recs)
    key = recs[0].stratum
    sets = [MatchedSet(1, (2,), (0.0,), key), MatchedSet(3, (4,), (0.0,), key)]
    table = balance_check(sets, data, ["ria", "sp_decision"])
    assert table.loc["ria", "smd_after"] == 0.0
    assert table.loc["ria", "smd_before"] != 0.0
    assert table.loc["sp_decision", "smd_before"] == 0.0 and table.loc["sp_decision", "degenerate_before"]
    with pytest.raises(ValueError):
        balance_check([], data)


def test_balance_smd_formula():
    recs = [make_record(i, int(i < 4), ria=int(i in (0, 1, 4))) for i in range(10)]
    data = make_dataset(recs)
    sets = [MatchedSet(0, (4,), (0.0,), recs[0].stratum)]
    table = balance_check(sets, data, ["ria"])
    x1, x0 = np.array([1, 1, 0, 0.0]), np.array([1, 0, 0, 0, 0, 0.0])
    want = (x1.mean() - x0.mean()) / np.sqrt((x1.var() + x0.var()) / 2)
    assert table.loc["ria", "smd_before"] == pytest.approx(want)


def test_csv_roundtrip(tmp_path):
    data = generate_dataset(GeneratorConfig(n_records=400, n_nationalities=4, seed=3))
    result = match_cases(data, np.linspace(0.01, 0.99, 400), k=3)
    write_matched_sets(result.sets, tmp_path / "m.csv", "config_hash=abc")
    back = read_matched_sets(tmp_path / "m.csv")
    assert back == result.sets
    rows = build_pair_rows(result.sets, data, ["ria"])
    write_pair_rows(rows, ["ria"], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().count("\n") == len(rows) + 1


def test_propensity_null_model():
    data = generate_dataset(GeneratorConfig(n_records=3000, seed=6))
    model = compute_propensity(data, ["ria", "interviewed"])
    scores = model.scores(data)
    rate = data.column("outcome").mean()
    assert np.all(np.abs(scores - rate) <= 0.05)
    assert np.all((scores > 0) & (scores < 1))


def test_propensity_unseen_group_and_monotonicity():
    data = generate_dataset(GeneratorConfig(n_records=2000, seed=9, true_sigma_u=0.5,
                                            true_beta={"intercept": -1.0, "ria": 1.0}))
    model = compute_propensity(data, ["ria"])
    b = model.fitted.params
    rec = make_record(99999, 0, nationality="ZZZ", ria=1)
    assert model.score(rec) == pytest.approx(1 / (1 + np.exp(-(b["intercept"] + b["ria"]))))
    known = data.records[0].nationality
    hi = make_record(1, 0, nationality=known, ria=1)
    lo = make_record(2, 0, nationality=known, ria=0)
    assert model.score(hi) > model.score(lo)
    assert model.score(hi) == model.score(hi)
