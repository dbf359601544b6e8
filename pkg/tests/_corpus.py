"""Shared fixtures: a sandbox program corpus with known verdicts."""

from dualrank.problems import Problem, TestCase
from dualrank.sandbox import MiB, ResourceLimits

LIMITS = ResourceLimits(wall_timeout=2.0, memory_cap=512 * MiB, max_output=1 * MiB)

SUM = Problem(
    id="sum",
    statement="Given two integers a and b on one line, print their sum.",
    tests=(
        TestCase("t0", "1 2\n", "3\n"),
        TestCase("t1", "10 -4\n", "6\n"),
        TestCase("t2", "0 0\n", "0\n"),
    ),
)

HALF = Problem(
    id="half",
    statement="Print x / 3 for the integer x.",
    tests=(TestCase("t0", "1\n", "0.333333\n"), TestCase("t1", "10\n", "3.333333\n")),
    compare={"float": 1e-5},
)

TOTAL = Problem(
    id="total",
    statement="Return the sum of the list nums.",
    io_mode="function",
    starter_code="class Solution:\n    def total(self, nums: List[int]) -> int:\n",
    tests=(
        TestCase("t0", "[1, 2, 3]\n", "6"),
        TestCase("t1", "[]\n", "0"),
        TestCase("t2", "[-5, 5, 7]\n", "7"),
    ),
)

# (name, problem, source, expected verdict)
PROGRAMS = [
    ("correct", SUM, "a, b = map(int, input().split())\nprint(a + b)\n", "pass"),
    ("trailing_space", SUM, "a, b = map(int, input().split())\nprint(a + b, end='  \\n\\n')\n", "pass"),
    ("off_by_one", SUM, "a, b = map(int, input().split())\nprint(a + b + 1)\n", "wrong_output"),
    ("wrong_format", SUM, "a, b = map(int, input().split())\nprint('Answer:', a + b)\n", "wrong_output"),
    ("silent", SUM, "input()\n", "wrong_output"),
    ("crash", SUM, "raise RuntimeError('boom')\n", "runtime_error"),
    ("syntax_error", SUM, "def f(:\n    pass\n", "runtime_error"),
    ("exit_code", SUM, "import sys\nsys.exit(3)\n", "runtime_error"),
    ("infinite_loop", SUM, "while True:\n    pass\n", "timeout"),
    ("over_output", SUM, "import sys\nwhile True:\n    sys.stdout.write('x' * 65536)\n", "resource_exceeded"),
    ("memory_bomb", SUM, "x = bytearray(2 * 1024 ** 3)\nprint(len(x))\n", "resource_exceeded"),
    ("float_close", HALF, "x = int(input())\nprint(x / 3)\n", "pass"),
    ("float_far", HALF, "x = int(input())\nprint(x / 3 + 0.01)\n", "wrong_output"),
    ("function_correct", TOTAL, "class Solution:\n    def total(self, nums):\n        return sum(nums)\n", "pass"),
    ("function_incorrect", TOTAL, "class Solution:\n    def total(self, nums):\n        return len(nums)\n", "wrong_output"),
    ("function_crash", TOTAL, "class Solution:\n    def total(self, nums):\n        return nums[5]\n", "runtime_error"),
]
