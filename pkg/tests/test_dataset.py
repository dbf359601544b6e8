import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualrank.dataset import (
    DanglingReferenceError, DatasetStats, LabeledCandidate, TrainingInstance, build_dataset, dataset_stats,
    dedupe_pool, filter_mixed, group_id, partition_pool, read_instances, read_pools, read_stats, write_instances,
    write_pools, write_stats,
)
from dualrank.problems import Problem


def _pool(pid, labels, start=0):
    return [LabeledCandidate(pid, i, f"print({pid!r}, {i})\n", y) for i, y in enumerate(labels, start)]


def _inst(gid, labels):
    return TrainingInstance(gid, gid.split("#")[0], tuple(f"c{i}" for i in range(len(labels))), tuple(labels))


def test_sequential_partition():
    groups = partition_pool(range(64), 4, "sequential")
    assert len(groups) == 16 and groups[0] == [0, 1, 2, 3]
    assert partition_pool(range(5), 4, "sequential") == [[0, 1, 2, 3]]


def test_shuffled_partition_is_seeded():
    a = partition_pool(range(8), 4, "shuffled", 7)
    assert a == partition_pool(range(8), 4, "shuffled", 7)
    assert sorted(sum(a, [])) == list(range(8))


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_pool(range(3), 4)
    with pytest.raises(ValueError):
        partition_pool(range(8), 4, "random")
    with pytest.raises(ValueError):
        partition_pool(range(8), 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 80), st.integers(2, 9), st.sampled_from(["sequential", "shuffled"]), st.integers(0, 99))
def test_partition_completeness(n, k, strategy, seed):
    if n < k:
        return
    groups = partition_pool(range(n), k, strategy, seed)
    flat = sum(groups, [])
    assert len(flat) == k * (n // k) and len(set(flat)) == len(flat)
    assert all(len(g) == k for g in groups)


def test_filter_examples():
    groups = [(("a", "b", "c", "d"), y) for y in [(1, 1, 1, 1), (0, 0, 0, 0), (1, 0, 0, 1)]]
    kept = filter_mixed(groups, problem_id="p")
    assert len(kept) == 1 and kept[0].labels == (1, 0, 0, 1) and kept[0].group_id == "p#g2"


def test_build_fixture_two_problems():
    problems = [Problem(id="a", statement="s"), Problem(id="b", statement="s")]
    pools = _pool("a", [1, 1, 0, 0, 0, 0, 0, 0]) + _pool("b", [1] * 8)
    inst, stats = build_dataset(problems, pools, 4, "sequential")
    assert [i.group_id for i in inst] == ["a#g0"]
    # the pool splits into (1,1,0,0) retained and (0,0,0,0) rejected; pool b is all-correct
    assert stats.n_groups_total == 4 and stats.n_groups_retained == 1
    assert stats.retained_by_positive_count == {2: 1.0}
    assert stats.positives_per_pool_histogram == {2: 1, 8: 1}


def test_build_empty():
    inst, stats = build_dataset([], [], 4)
    assert inst == [] and stats.n_groups_retained == 0 and stats.retained_by_positive_count == {}


def test_dangling_reference():
    with pytest.raises(DanglingReferenceError) as err:
        build_dataset([Problem(id="a", statement="s")], _pool("zz", [1, 0, 1, 0]), 2)
    assert err.value.problem_ids == ["zz"]


def test_build_is_order_independent():
    problems = [Problem(id=p, statement="s") for p in "abc"]
    rng = np.random.default_rng(1)
    pools = [c for p in "abc" for c in _pool(p, rng.integers(0, 2, 12).tolist())]
    a, _ = build_dataset(problems, pools, 4, seed=3)
    b, _ = build_dataset(problems[::-1], pools[::-1], 4, seed=3)
    assert sorted(i.to_record()["group_id"] for i in a) == sorted(i.to_record()["group_id"] for i in b)
    assert {i.group_id: i for i in a} == {i.group_id: i for i in b}


def test_dedupe_keeps_first_and_drops_quarantined():
    pool = [
        LabeledCandidate("p", 0, "x", 1),
        LabeledCandidate("p", 1, "x", 0),
        LabeledCandidate("p", 2, "y", 0, verdict="harness_error"),
        LabeledCandidate("p", 3, "z", 0),
    ]
    assert [c.index for c in dedupe_pool(pool)] == [0, 3]


def test_stats_examples():
    s = dataset_stats([_inst(f"p#g{i}", y) for i, y in enumerate([(1, 0), (0, 1), (1, 1, 0), (1, 1, 1, 0)])], 4)
    assert s.retained_by_positive_count == {1: 0.5, 2: 0.25, 3: 0.25}
    assert dataset_stats([], 0).retained_by_positive_count == {}
    assert dataset_stats([_inst("p#g0", (1, 1, 0))], 1).retained_by_positive_count == {2: 1.0}


def test_instance_validation():
    with pytest.raises(ValueError):
        TrainingInstance("p#g0", "p", ("a", "b"), (1, 1))
    with pytest.raises(ValueError):
        TrainingInstance("p#g0", "p", ("a", "a"), (1, 0))
    with pytest.raises(ValueError):
        LabeledCandidate("p", 0, "x", 2)


def test_group_id_format():
    assert group_id("abc", 3) == "abc#g3"


def test_file_round_trips(tmp_path):
    pools = _pool("a", [1, 0, 1])
    write_pools(tmp_path / "p.jsonl", pools)
    assert read_pools(tmp_path / "p.jsonl") == pools
    inst = [_inst("a#g0", (1, 0)), _inst("a#g1", (0, 1))]
    write_instances(tmp_path / "i.jsonl", inst)
    assert read_instances(tmp_path / "i.jsonl") == inst
    stats = DatasetStats(2, 1, 3, 2, {1: 1.0}, {2: 1})
    write_stats(tmp_path / "s.json", stats)
    assert read_stats(tmp_path / "s.json") == stats
    assert json.loads((tmp_path / "s.json").read_text())["retained_by_positive_count"] == {"1": 1.0}
