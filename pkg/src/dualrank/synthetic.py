"""Synthetic corpora with known labels for exercising the pipeline offline."""

from __future__ import annotations

import numpy as np

from .dataset import TrainingInstance
from .problems import Problem, TestCase


def separable_instances(n: int = 200, k: int = 4, seed: int = 0) -> list[TrainingInstance]:
    """Mixed-quality groups with distinct filler programs of random length.

    Pair with ``FeatureConfig(label_signal=True)`` to get a ranking task
    whose optimum is identifiable from the features.
    """
    rng = np.random.default_rng(seed)
    out = []
    for g in range(n):
        n_pos = int(rng.integers(1, k))
        labels = [1] * n_pos + [0] * (k - n_pos)
        rng.shuffle(labels)
        cands = []
        for j in range(k):
            pad = "x" * int(rng.integers(1, 200))
            cands.append(f"# candidate {g}.{j}\nprint({pad!r})\n")
        out.append(TrainingInstance(f"synthetic-{g:04d}#g0", f"synthetic-{g:04d}", tuple(cands), tuple(labels)))
    return out


def echo_problem(pid: str, value: int, difficulty: str | None = None) -> Problem:
    """A stdin problem whose answer is ``value`` plus the integer read."""
    tests = tuple(
        TestCase(id=f"t{i}", input=f"{x}\n", expected_output=f"{x + value}\n") for i, x in enumerate((1, 5, 12))
    )
    return Problem(
        id=pid,
        statement=f"Read an integer x and print x + {value}.",
        io_mode="stdin",
        tests=tests,
        difficulty=difficulty,
    )


def echo_candidate(value: int, correct: bool, variant: int = 0) -> str:
    offset = value if correct else value + 1 + variant
    return f"# variant {variant}\nx = int(input())\nprint(x + {offset})\n"


def labeled_eval_corpus(
    n_problems: int = 50, n: int = 4, seed: int = 0
) -> tuple[list[Problem], list[dict], dict[str, list[int]]]:
    """Problems, candidate records and the labels the candidates will earn.

    Candidate records follow the evaluation candidate-file schema with
    ``repeat`` set to None (shared by every repeat).
    """
    rng = np.random.default_rng(seed)
    difficulties = ("easy", "medium", "hard")
    problems, records, labels = [], [], {}
    for p in range(n_problems):
        pid = f"p{p:03d}"
        problems.append(echo_problem(pid, p, difficulties[p % 3]))
        ys = [int(v) for v in rng.random(n) < rng.uniform(0.1, 0.9)]
        if p % 10 == 0:
            ys = [1] * n
        labels[pid] = ys
        for j, y in enumerate(ys):
            records.append({"problem_id": pid, "repeat": None, "sample_index": j, "source": echo_candidate(p, bool(y), j)})
    return problems, records, labels
