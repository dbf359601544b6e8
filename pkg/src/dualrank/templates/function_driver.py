# Driver for function-mode problems.
# usage: function_driver.py CANDIDATE_PATH ENTRY_JSON < args (one JSON value per line)
import json
import sys

PRELUDE = (
    "from typing import *\n"
    "import bisect, collections, functools, heapq, itertools, math, re, string\n"
    "from collections import Counter, defaultdict, deque\n"
    "from functools import lru_cache, cache\n"
)


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def main():
    path, entry = sys.argv[1], json.loads(sys.argv[2])
    with open(path, encoding="utf-8") as f:
        source = f.read()
    namespace = {"__name__": "__candidate__"}
    exec(compile(PRELUDE + source, path, "exec"), namespace)
    args = [json.loads(line) for line in sys.stdin.read().splitlines() if line.strip()]
    if entry.get("class"):
        target = getattr(namespace[entry["class"]](), entry["function"])
    else:
        target = namespace[entry["function"]]
    result = target(*args)
    sys.stdout.write(json.dumps(_jsonable(result)))
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
