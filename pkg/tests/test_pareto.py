import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from narrowspace import pareto as pa, precision as pr
from narrowspace.pareto import CandidateRecord, Constraint, PrecisionEntry

from oracles import brute_force_front

GRID = pr.type_grid()


def rec(cid, params, acc, flops=None, latency=None, type_name="fp32", table=None):
    return CandidateRecord(cid, "s", params, params * 2 if flops is None else flops, acc,
                           latency, "measured" if latency is not None else None, type_name, table)


def random_records(n, seed, coarse=True):
    r = random.Random(seed)
    out = []
    for i in range(n):
        p = r.randint(1, 60) * 100 if coarse else r.randint(1, 10 ** 6)
        acc = r.randint(0, 40) / 40 if coarse else r.random()
        out.append(CandidateRecord(f"c{i:04d}", "s", p, r.randint(1, 50) * 1000, acc,
                                   r.randint(1, 80) / 4, "predicted",
                                   r.choice(["fp32", "T5_10", "T4_3", "T2_5"])))
    return out


def test_example_front():
    rs = [rec("a", 1, 0.5), rec("b", 2, 0.6), rec("c", 3, 0.55)]
    front = pa.pareto_front(rs, "parameter_count")
    assert [r.candidate_id for r in front] == ["a", "b"]


def test_single_and_identical_records():
    assert pa.pareto_front([rec("a", 5, 0.1)], "flops") == [rec("a", 5, 0.1)]
    same = [rec(cid, 5, 0.3) for cid in ("q", "b", "m")]
    front = pa.pareto_front(same, "parameter_count")
    assert [r.candidate_id for r in front] == ["b"]


@pytest.mark.parametrize("axis", pa.COST_AXES)
@pytest.mark.parametrize("seed", range(3))
def test_front_matches_brute_force(axis, seed):
    records = random_records(1000, seed)
    front = pa.pareto_front(records, axis)
    pts = [(r.value(axis), r.accuracy, r.candidate_id) for r in records]
    expected = sorted(brute_force_front(pts), key=lambda i: (pts[i][0], pts[i][2]))
    assert [r.candidate_id for r in front] == [records[i].candidate_id for i in expected]
    costs = [r.value(axis) for r in front]
    assert costs == sorted(costs)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 8), st.integers(0, 8)), min_size=1, max_size=30),
       st.randoms(use_true_random=False))
def test_front_stable_under_duplication_and_permutation(points, rnd):
    records = [rec(f"r{i:02d}", p, a / 8) for i, (p, a) in enumerate(points)]
    front = pa.pareto_front(records, "parameter_count")
    shuffled = records * 2
    rnd.shuffle(shuffled)
    assert pa.pareto_front(shuffled, "parameter_count") == front
    # non-dominated and complete
    for r in records:
        covered = any(f.parameter_count <= r.parameter_count and f.accuracy >= r.accuracy for f in front)
        assert covered


def test_missing_axis_raises():
    with pytest.raises(ValueError):
        pa.pareto_front([rec("a", 1, None)], "parameter_count")
    with pytest.raises(ValueError):
        pa.pareto_front([rec("a", 1, 0.2)], "latency_ms")


def test_weight_bytes_follow_type():
    assert rec("a", 1000, 0.5).weight_bytes == 4000
    assert rec("a", 1000, 0.5, type_name="T5_10").weight_bytes == 2000
    assert rec("a", 1000, 0.5, type_name="T4_3").weight_bytes == 1000
    assert rec("a", 1000, 0.5, type_name="T1_1").weight_bytes == 375


# -- constraint queries ---------------------------------------------------------------

def test_constraint_examples():
    rs = [rec("a", 100, 0.5), rec("b", 200, 0.7), rec("c", 300, 0.7)]
    assert pa.best_under_constraint(rs, Constraint("parameter_count", 50)) is None
    assert pa.best_under_constraint(rs, Constraint("parameter_count", 1e300)).candidate_id == "b"
    assert pa.best_under_constraint(rs, Constraint("parameter_count", 150)).candidate_id == "a"
    with pytest.raises(ValueError):
        Constraint("parameter_count", 0)
    with pytest.raises(ValueError):
        Constraint("accuracy", 1)


@pytest.mark.parametrize("axis", pa.COST_AXES)
def test_constraint_matches_linear_scan(axis):
    records = random_records(2000, 11)
    for bound in (1e2, 1e3, 1e4, 5e4, 1e9):
        got = pa.best_under_constraint(records, Constraint(axis, bound))
        best = None
        for r in records:
            if r.value(axis) > bound:
                continue
            key = (-r.accuracy, r.value(axis), r.candidate_id)
            if best is None or key < best[0]:
                best = (key, r)
        assert got == (None if best is None else best[1])


# -- precision tables ---------------------------------------------------------------------

def table(accs):
    return tuple(PrecisionEntry(name, pa.type_width(name), acc) for name, acc in accs.items())


def test_type_independent_accuracy_picks_smallest_type():
    t = tuple(PrecisionEntry(ty.name, ty.storage_width, 0.8) for ty in GRID)
    out = pa.best_type_per_model([rec("m", 1000, None, table=t)])
    assert [(r.type_name, r.accuracy) for r in out] == [("T1_1", 0.8)]


def test_fixed_type_front_by_hand():
    # three models priced at T4_3 (one byte per parameter)
    ms = [
        rec("m1", 1000, None, table=table({"fp32": 0.80, "T4_3": 0.60})),
        rec("m2", 3000, None, table=table({"fp32": 0.90, "T4_3": 0.85})),
        rec("m3", 2000, None, table=table({"fp32": 0.85, "T4_3": 0.50})),
    ]
    fixed = pa.fixed_type_records(ms, "T4_3")
    assert [r.weight_bytes for r in fixed] == [1000, 3000, 2000]
    front = pa.pareto_front(fixed, "weight_bytes")
    # m3 (2000 B, 0.50) is dominated by m1 (1000 B, 0.60)
    assert [(r.candidate_id, r.accuracy) for r in front] == [("m1", 0.60), ("m2", 0.85)]


def test_missing_table_or_type():
    with pytest.raises(ValueError, match="no precision table"):
        pa.best_type_per_model([rec("m", 10, 0.5)])
    with pytest.raises(ValueError, match="no entry"):
        pa.fixed_type_records([rec("m", 10, 0.5, table=table({"fp32": 0.5}))], "T5_10")


def test_envelope_and_front_dominates():
    lower = [rec("a", 10, 0.5), rec("b", 20, 0.7)]
    upper = [rec("c", 5, 0.5), rec("d", 20, 0.7)]
    assert pa.envelope(lower, 9, "parameter_count") == -math.inf
    assert pa.envelope(lower, 15, "parameter_count") == 0.5
    assert pa.front_dominates(upper, lower, "parameter_count")
    assert not pa.front_dominates(lower, upper, "parameter_count")


accuracy = st.integers(0, 20).map(lambda k: k / 20)


@st.composite
def tabled_models(draw, half_at_least_fp32=False):
    n = draw(st.integers(1, 6))
    models = []
    for i in range(n):
        fp32 = draw(accuracy)
        accs = {ty.name: draw(accuracy) for ty in draw(st.lists(st.sampled_from(GRID), max_size=6))}
        accs["fp32"] = fp32
        accs["T8_23"] = fp32
        half = draw(accuracy)
        accs["T5_10"] = max(half, fp32) if half_at_least_fp32 else half
        models.append(rec(f"m{i}", draw(st.integers(1, 10 ** 5)), None, table=table(accs)))
    return models


@settings(max_examples=300, deadline=None)
@given(tabled_models())
def test_individual_front_dominates_fixed_fronts(models):
    indiv = pa.pareto_front(pa.best_type_per_model(models), "weight_bytes")
    for fixed in ("T5_10", "fp32", "T8_23"):
        front = pa.pareto_front(pa.fixed_type_records(models, fixed), "weight_bytes")
        assert pa.front_dominates(indiv, front, "weight_bytes")


@settings(max_examples=300, deadline=None)
@given(tabled_models(half_at_least_fp32=True))
def test_half_front_dominates_fp32_when_half_is_lossless(models):
    half = pa.pareto_front(pa.fixed_type_records(models, "T5_10"), "weight_bytes")
    fp32 = pa.pareto_front(pa.fixed_type_records(models, "fp32"), "weight_bytes")
    assert pa.front_dominates(half, fp32, "weight_bytes")


def test_half_front_can_lose_when_half_drops_accuracy():
    # the middle link is not structural: a model that loses accuracy in half
    # precision gives a fp32 point the half front cannot reach
    m = rec("m", 1000, None, table=table({"fp32": 0.9, "T5_10": 0.1}))
    half = pa.pareto_front(pa.fixed_type_records([m], "T5_10"), "weight_bytes")
    fp32 = pa.pareto_front(pa.fixed_type_records([m], "fp32"), "weight_bytes")
    assert not pa.front_dominates(half, fp32, "weight_bytes")


# -- CSV --------------------------------------------------------------------------------

def test_records_csv_round_trip(tmp_path):
    records = random_records(50, 4, coarse=False)
    path = tmp_path / "r.csv"
    pa.write_records(path, records)
    assert pa.read_records(path) == records


def test_tables_csv(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("candidate_id,type,storage_width,accuracy\nm,fp32,32,0.5\nm,T4_3,8,0.25\n")
    tables = pa.read_tables(path)
    assert tables == {"m": (PrecisionEntry("fp32", 32, 0.5), PrecisionEntry("T4_3", 8, 0.25))}
    [r] = pa.attach_tables([rec("m", 10, None)], tables)
    assert r.precision == tables["m"]


def test_front_csv(tmp_path):
    front = pa.pareto_front([rec("a", 1, 0.5), rec("b", 2, 0.75)], "parameter_count")
    path = tmp_path / "f.csv"
    pa.write_front(path, front, "parameter_count")
    assert path.read_text().splitlines() == [
        "candidate_id,cost_axis,cost_value,accuracy,type_name",
        "a,parameter_count,1,0.5,fp32",
        "b,parameter_count,2,0.75,fp32",
    ]
