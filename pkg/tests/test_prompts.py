from pathlib import Path

import pytest

from dualrank.problems import Problem
from dualrank.prompts import render_generation_prompt, render_ranking_prompt

GOLDEN = Path(__file__).parent / "fixtures" / "prompts"

SUM = Problem(id="sum", statement="Given two integers a and b on one line, print their sum.")
TOTAL = Problem(
    id="total",
    statement="Return the sum of the list nums.",
    io_mode="function",
    starter_code="class Solution:\n    def total(self, nums: List[int]) -> int:\n",
)
CANDIDATES = [
    "a, b = map(int, input().split())\nprint(a + b)\n",
    "print(sum(map(int, input().split())))",
    "a, b = map(int, input().split())\nprint(a - b)\n",
]


def golden(name: str) -> str:
    # golden files carry one trailing newline that the prompt does not
    return (GOLDEN / name).read_text(encoding="utf-8").removesuffix("\n")


def test_ranking_golden():
    assert render_ranking_prompt(SUM, CANDIDATES) == golden("ranking_k3.txt")


@pytest.mark.parametrize("problem,thinking,name", [
    (SUM, False, "generation_stdin.txt"),
    (SUM, True, "generation_stdin_thinking.txt"),
    (TOTAL, False, "generation_function.txt"),
    (TOTAL, True, "generation_function_thinking.txt"),
])
def test_generation_golden(problem, thinking, name):
    assert render_generation_prompt(problem, thinking) == golden(name)


def test_ranking_structure():
    text = render_ranking_prompt(SUM, ["print(1)", "print(2)", "print(3)", "print(4)"])
    assert "\n--- CANDIDATE 2 ---\n" in text
    assert text.endswith("Ranking (best to worst):")
    two = render_ranking_prompt(SUM, ["print(1)", "print(2)"])
    assert "and 2 candidate solutions" in two and two.count("--- CANDIDATE") == 2


def test_generation_content():
    assert "writes output to STDOUT" in render_generation_prompt(SUM)
    assert "```python\n" + TOTAL.starter_code.rstrip("\n") + "\n```" in render_generation_prompt(TOTAL)
    assert "NOT return anything" not in render_generation_prompt(SUM, True)


def test_rendering_is_idempotent():
    assert render_ranking_prompt(SUM, CANDIDATES) == render_ranking_prompt(SUM, list(CANDIDATES))


def test_ranking_k_bounds():
    with pytest.raises(ValueError):
        render_ranking_prompt(SUM, ["x"])
    with pytest.raises(ValueError):
        render_ranking_prompt(SUM, ["x"] * 10)


def test_function_problem_needs_starter_code():
    with pytest.raises(ValueError):
        render_generation_prompt(Problem(id="f", statement="s", io_mode="function"))
