"""Prompt templates for candidate generation and candidate ranking."""

from __future__ import annotations

from typing import Sequence

from .problems import Problem

FENCE = "```"

RANKING_HEADER = (
    "You will be given a question (problem specification) and {k} candidate solutions. "
    "You will analyze these candidates and RANK them from most likely to least likely to pass all tests. "
    "You will NOT return anything except for the ranking."
)
RANKING_INSTRUCTION = (
    "Analyze each candidate solution, analyze all the strengths and weaknesses, "
    "and rank them from most effective to least effective. "
    "Output ONLY the ranking as comma-separated numbers from best to worst "
    '(e.g., "2, 4, 1, 3").'
)
RANKING_CUE = "Ranking (best to worst):"
CANDIDATE_BLOCK = "--- CANDIDATE {i} ---\n```python\n{code}\n```"

GENERATION_HEADER = (
    "You will be given a question (problem specification) and will generate a correct Python program "
    "that matches the specification and passes all tests."
)
NO_EXTRA_OUTPUT = " You will NOT return anything except for the program."
STDIN_FORMAT = (
    "Read the inputs from stdin, solve the problem, and write the answer to stdout "
    "(do not directly test on the sample inputs). Enclose your code within delimiters as follows. "
    "Ensure that when the Python program runs, it reads the inputs, runs the algorithm, "
    "and writes output to STDOUT.\n"
    "```python\n"
    "  # YOUR CODE HERE\n"
    "```"
)
STARTER_FORMAT = (
    "You will use the following starter code to write the solution to the problem "
    "and enclose your code within delimiters.\n"
    "```python\n"
    "{starter_code}\n"
    "```"
)

MIN_K, MAX_K = 2, 9


def _code(text: str) -> str:
    # the template always puts the closing fence on its own line
    return text.rstrip("\n")


def render_ranking_prompt(problem: Problem, candidates: Sequence[str]) -> str:
    k = len(candidates)
    if not MIN_K <= k <= MAX_K:
        raise ValueError(f"ranking prompt supports {MIN_K}..{MAX_K} candidates, got {k}")
    blocks = "\n\n".join(CANDIDATE_BLOCK.format(i=i, code=_code(c)) for i, c in enumerate(candidates, 1))
    return "\n\n".join([
        RANKING_HEADER.format(k=k),
        f"Question: {problem.statement}",
        blocks,
        RANKING_INSTRUCTION,
        RANKING_CUE,
    ])


def render_generation_prompt(problem: Problem, thinking_mode: bool = False) -> str:
    """Render the generation prompt; thinking models skip the no-extra-output sentence."""
    header = GENERATION_HEADER if thinking_mode else GENERATION_HEADER + NO_EXTRA_OUTPUT
    if problem.io_mode == "function":
        if not problem.starter_code:
            raise ValueError(f"function-mode problem {problem.id!r} has no starter code")
        body = STARTER_FORMAT.format(starter_code=_code(problem.starter_code))
    else:
        body = STDIN_FORMAT
    return "\n\n".join([header, f"Question: {problem.statement}", body])
