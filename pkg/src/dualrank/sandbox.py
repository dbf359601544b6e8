"""Run candidate programs against a problem's tests in isolated subprocesses.

Isolation is process based: every test case runs in a fresh process group
inside a throwaway working directory, with address-space, CPU-time and
file-size limits applied through ``setrlimit`` before the interpreter is
exec'd. This keeps a crashing or runaway candidate from taking the harness
down, but it is not a security boundary. For untrusted code at scale, run
the whole harness inside a container or VM with networking disabled.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .dataset import LabeledCandidate
from .problems import Problem, TestCase

logger = logging.getLogger(__name__)

GiB = 1024**3
MiB = 1024**2

_EXEC_FAILED = "__dualrank_exec_failed__"

# Applies the limits, then replaces itself with the candidate command.
_LAUNCHER = f"""
import os, resource, sys
mem, fsize, cpu = (int(v) for v in sys.argv[1:4])
resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
resource.setrlimit(resource.RLIMIT_FSIZE, (fsize, fsize))
resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
try:
    os.execvp(sys.argv[4], sys.argv[4:])
except OSError as exc:
    sys.stderr.write("{_EXEC_FAILED}: %s\\n" % exc)
    os._exit(127)
"""


class Verdict(str, enum.Enum):
    PASS = "pass"
    WRONG_OUTPUT = "wrong_output"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    RESOURCE_EXCEEDED = "resource_exceeded"
    HARNESS_ERROR = "harness_error"


@dataclass(frozen=True)
class ResourceLimits:
    wall_timeout: float = 10.0
    memory_cap: int = 1 * GiB
    max_output: int = 16 * MiB

    def __post_init__(self):
        if self.wall_timeout < 0.1:
            raise ValueError("wall_timeout must be at least 0.1 s")
        if self.memory_cap <= 0 or self.max_output <= 0:
            raise ValueError("memory_cap and max_output must be positive")


@dataclass(frozen=True)
class ExecutionOutcome:
    verdict: Verdict
    per_case: tuple[tuple[str, Verdict], ...]
    elapsed: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    @property
    def label(self) -> int:
        return int(self.passed)


# -- output comparison -------------------------------------------------------


def _is_float_mode(mode: Any) -> bool:
    return isinstance(mode, dict) and "float" in mode


def _close(a: float, b: float, eps: float) -> bool:
    return abs(a - b) <= eps * max(1.0, abs(b))


def _as_finite(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def compare_output(actual: str, expected: str, mode: Any = "normalized") -> bool:
    """Compare program output to the expected text.

    ``mode`` is ``"normalized"`` (trimmed non-empty lines must match),
    ``"exact"`` (byte equality) or ``{"float": eps}`` (whitespace tokens must
    match, numeric tokens within a relative tolerance of ``eps``).
    """
    if mode == "exact":
        return actual.encode() == expected.encode()
    if mode == "normalized":
        return _lines(actual) == _lines(expected)
    if _is_float_mode(mode):
        eps = float(mode["float"])
        got, want = actual.split(), expected.split()
        if len(got) != len(want):
            return False
        for a, b in zip(got, want):
            fa, fb = _as_finite(a), _as_finite(b)
            if fa is not None and fb is not None:
                if not _close(fa, fb, eps):
                    return False
            elif a != b:
                return False
        return True
    raise ValueError(f"unknown comparison mode: {mode!r}")


def _lines(text: str) -> list[str]:
    return [line.strip() for line in text.splitlines() if line.strip()]


def _values_match(actual: Any, expected: Any, eps: float | None) -> bool:
    if isinstance(expected, bool) or isinstance(actual, bool):
        return actual == expected
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        if eps is None:
            return actual == expected
        return _close(float(actual), float(expected), eps)
    if isinstance(expected, list) and isinstance(actual, list):
        return len(actual) == len(expected) and all(
            _values_match(a, b, eps) for a, b in zip(actual, expected)
        )
    if isinstance(expected, dict) and isinstance(actual, dict):
        return actual.keys() == expected.keys() and all(
            _values_match(actual[k], expected[k], eps) for k in expected
        )
    return actual == expected


def compare_function_output(actual: str, expected: str, mode: Any = "normalized") -> bool:
    """Compare a driver's JSON result to the expected serialized value.

    Falls back to text comparison when either side is not valid JSON.
    """
    try:
        got, want = json.loads(actual), json.loads(expected)
    except (json.JSONDecodeError, ValueError):
        return compare_output(actual, expected, mode)
    if mode == "exact":
        return json.dumps(got) == json.dumps(want)
    eps = float(mode["float"]) if _is_float_mode(mode) else None
    return _values_match(got, want, eps)


# -- execution ---------------------------------------------------------------

_CLASS_RE = re.compile(r"^class\s+([A-Za-z_]\w*)", re.M)
_METHOD_RE = re.compile(r"^[ \t]+def\s+([A-Za-z_]\w*)\s*\(", re.M)
_FUNC_RE = re.compile(r"^def\s+([A-Za-z_]\w*)\s*\(", re.M)


def function_entry_point(starter_code: str) -> dict:
    """Locate the callable a function-mode candidate must provide.

    Starter code is usually an unfinished signature (no body), so this works
    on the text rather than the syntax tree.
    """
    cls = _CLASS_RE.search(starter_code)
    if cls:
        methods = [m for m in _METHOD_RE.findall(starter_code, cls.end()) if not m.startswith("_")]
        if methods:
            return {"class": cls.group(1), "function": methods[0]}
    func = _FUNC_RE.search(starter_code)
    if func:
        return {"class": None, "function": func.group(1)}
    raise ValueError("starter code defines no function to call")


def driver_source() -> str:
    return resources.files("dualrank").joinpath("templates/function_driver.py").read_text(encoding="utf-8")


def _harness_error(detail: str, start: float) -> ExecutionOutcome:
    return ExecutionOutcome(Verdict.HARNESS_ERROR, (), time.monotonic() - start, detail)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _run_case(
    command: list[str], case: TestCase, workdir: Path, limits: ResourceLimits, env: dict
) -> tuple[Verdict | None, str, str]:
    """Run one case. Returns (failure verdict or None, stdout, detail)."""
    stdin_path = workdir / "stdin.txt"
    out_path, err_path = workdir / "stdout.txt", workdir / "stderr.txt"
    stdin_path.write_text(case.input, encoding="utf-8")
    cpu = max(1, math.ceil(limits.wall_timeout)) + 1
    launcher = [
        sys.executable, "-S", "-c", _LAUNCHER,
        str(limits.memory_cap), str(limits.max_output + 1), str(cpu), *command,
    ]
    with open(stdin_path, "rb") as fin, open(out_path, "wb") as fout, open(err_path, "wb") as ferr:
        try:
            proc = subprocess.Popen(
                launcher, stdin=fin, stdout=fout, stderr=ferr, cwd=workdir, env=env,
                start_new_session=True, close_fds=True,
            )
        except OSError as exc:
            return Verdict.HARNESS_ERROR, "", f"spawn failed: {exc}"
        timed_out = False
        try:
            proc.wait(timeout=limits.wall_timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
        _kill_group(proc)
        proc.wait()

    stderr = err_path.read_bytes()[-4096:].decode("utf-8", "replace")
    if _EXEC_FAILED in stderr:
        return Verdict.HARNESS_ERROR, "", stderr.strip()
    if timed_out:
        return Verdict.TIMEOUT, "", f"exceeded {limits.wall_timeout}s wall clock"
    if out_path.stat().st_size > limits.max_output:
        return Verdict.RESOURCE_EXCEEDED, "", f"output exceeded {limits.max_output} bytes"
    rc = proc.returncode
    if rc == -signal.SIGXCPU:
        return Verdict.TIMEOUT, "", "cpu time limit"
    if rc == -signal.SIGXFSZ:
        return Verdict.RESOURCE_EXCEEDED, "", "file size limit"
    if rc != 0:
        if "MemoryError" in stderr or rc == -signal.SIGKILL:
            return Verdict.RESOURCE_EXCEEDED, "", "memory limit"
        last = stderr.strip().splitlines()[-1:] or [f"exit status {rc}"]
        return Verdict.RUNTIME_ERROR, "", last[0]
    return None, out_path.read_bytes().decode("utf-8", "replace"), ""


def execute_candidate(
    problem: Problem,
    source: str,
    limits: ResourceLimits | None = None,
    interpreter: Sequence[str] = ("python3",),
    stop_on_failure: bool = True,
) -> ExecutionOutcome:
    """Execute ``source`` against every test of ``problem``.

    The verdict is ``pass`` only if all cases pass. With ``stop_on_failure``
    (the default) the remaining cases are not run after the first failure,
    so ``per_case`` then ends at the failing case. Problems the sandbox
    cannot run (missing interpreter, function mode without usable starter
    code) produce ``harness_error`` rather than a candidate failure.
    """
    if not problem.tests:
        raise ValueError(f"problem {problem.id!r} has no test cases")
    limits = limits or ResourceLimits()
    start = time.monotonic()
    interpreter = list(interpreter)
    if not interpreter or shutil.which(interpreter[0]) is None:
        return _harness_error(f"interpreter not found: {interpreter[:1]}", start)

    entry = None
    if problem.io_mode == "function":
        try:
            entry = function_entry_point(problem.starter_code or "")
        except ValueError as exc:
            return _harness_error(f"problem {problem.id!r}: {exc}", start)

    per_case: list[tuple[str, Verdict]] = []
    verdict, detail = Verdict.PASS, ""
    with tempfile.TemporaryDirectory(prefix="dualrank-") as tmp:
        workdir = Path(tmp)
        (workdir / "solution.py").write_text(source, encoding="utf-8")
        if entry is None:
            command = interpreter + ["solution.py"]
        else:
            (workdir / "driver.py").write_text(driver_source(), encoding="utf-8")
            command = interpreter + ["driver.py", "solution.py", json.dumps(entry)]
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": tmp,
            "LANG": "C.UTF-8",
            "PYTHONHASHSEED": "0",
            "PYTHONIOENCODING": "utf-8",
            "PYTHONDONTWRITEBYTECODE": "1",
        }
        for case in problem.tests:
            failure, stdout, why = _run_case(command, case, workdir, limits, env)
            if failure is None:
                if entry is None:
                    ok = compare_output(stdout, case.expected_output, problem.compare)
                else:
                    ok = compare_function_output(stdout, case.expected_output, problem.compare)
                failure = None if ok else Verdict.WRONG_OUTPUT
            per_case.append((case.id, failure or Verdict.PASS))
            if failure is not None and verdict is Verdict.PASS:
                verdict, detail = failure, why
                if failure is Verdict.HARNESS_ERROR or stop_on_failure:
                    break
    return ExecutionOutcome(verdict, tuple(per_case), time.monotonic() - start, detail)


def label_pool(
    problem: Problem,
    candidates: Sequence[str],
    limits: ResourceLimits | None = None,
    interpreter: Sequence[str] = ("python3",),
    workers: int = 1,
) -> list[LabeledCandidate]:
    """Label every candidate with its binary execution verdict.

    Output order matches input order for any ``workers``. Candidates whose
    execution hit a harness error keep ``label=0`` but carry the verdict, so
    ``LabeledCandidate.quarantined`` is true and they never reach training.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if any(not src.strip() for src in candidates):
        raise ValueError("empty candidate sources must be filtered before labeling")

    def run(src: str) -> ExecutionOutcome:
        return execute_candidate(problem, src, limits, interpreter)

    if workers == 1 or len(candidates) <= 1:
        outcomes = [run(src) for src in candidates]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, candidates))

    labeled = []
    for i, (src, outcome) in enumerate(zip(candidates, outcomes)):
        if outcome.verdict is Verdict.HARNESS_ERROR:
            logger.warning("problem %s candidate %d quarantined: %s", problem.id, i, outcome.detail)
        labeled.append(
            LabeledCandidate(problem.id, i, src, outcome.label, verdict=outcome.verdict.value)
        )
    return labeled
