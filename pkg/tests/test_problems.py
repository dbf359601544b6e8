import pytest

from dualrank.jsonl import read_jsonl, write_jsonl
from dualrank.problems import Problem, TestCase, read_problems, write_problems


def test_problem_round_trip(tmp_path):
    probs = [
        Problem(id="a", statement="s", tests=(TestCase("t", "1\n", "2\n"),), difficulty="easy"),
        Problem(id="b", statement="s", io_mode="function", starter_code="def f(x):\n",
                tests=(TestCase("t", "[1]\n", "1"), TestCase("u", "", "", allow_empty=True)),
                compare={"float": 1e-6}),
    ]
    write_problems(tmp_path / "p.jsonl", probs)
    assert read_problems(tmp_path / "p.jsonl") == probs


def test_record_schema():
    rec = Problem(id="a", statement="s", tests=(TestCase("t", "1", "2"),)).to_record()
    assert set(rec) == {"id", "statement", "io_mode", "starter_code", "tests", "compare", "difficulty"}
    assert rec["tests"] == [{"id": "t", "input": "1", "expected": "2"}]


def test_validation():
    with pytest.raises(ValueError):
        TestCase("t", "1", "  \n")
    with pytest.raises(ValueError):
        Problem(id="a", statement="s", compare="fuzzy")
    with pytest.raises(ValueError):
        Problem(id="a", statement="s", io_mode="socket")


def test_duplicate_ids_rejected(tmp_path):
    rec = Problem(id="a", statement="s").to_record()
    write_jsonl(tmp_path / "p.jsonl", [rec, rec])
    with pytest.raises(ValueError):
        read_problems(tmp_path / "p.jsonl")


def test_malformed_jsonl(tmp_path):
    (tmp_path / "x.jsonl").write_text('{"a": 1}\n{oops\n')
    with pytest.raises(ValueError):
        list(read_jsonl(tmp_path / "x.jsonl"))
