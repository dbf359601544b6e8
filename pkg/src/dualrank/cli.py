"""Command-line pipeline: synthesize -> build -> score / train-ref -> eval -> report.

Exit codes: 0 success, 1 validation error, 2 partial data failure,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Sequence

import filelock

from . import config as C
from .dataset import (
    DanglingReferenceError, LabeledCandidate, build_dataset, read_instances, read_pools,
    write_instances, write_pools, write_stats,
)
from .evaluation import (
    FileCandidates, FileJudge, ModelCandidates, ModelJudge, OracleJudge, RandomJudge,
    ReversedOracleJudge, SandboxLabeler, decomposition_report, render_report_table, run_eval,
)
from .gateway import ChatClient, CompletionCache, sample_candidates
from .grpo import PlackettLucePolicy, save_checkpoint, smoothed, train, write_metrics
from .jsonl import read_json, read_jsonl, write_json, write_jsonl
from .problems import read_problems
from .reward import JudgmentRecord, score_response, write_judgments
from .sandbox import label_pool

logger = logging.getLogger("dualrank")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_INTERNAL = 0, 1, 2, 3
SMOOTHING_WINDOW = 20


class PartialFailure(Exception):
    """Some inputs could not be processed; outputs for the rest were written."""


def _require(cfg: dict, *keys: str) -> list[Path]:
    out = []
    for key in keys:
        value = cfg["paths"][key]
        if not value:
            raise C.ConfigError(f"paths.{key} is required (flag --{key.replace('_', '-')})")
        path = Path(value)
        if not path.exists():
            raise C.ConfigError(f"paths.{key}: {path} does not exist")
        out.append(path)
    return out


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path) -> None:
    write_json(out / "config.json", cfg)


def _client(cfg: dict, out: Path, model: str | None = None) -> ChatClient:
    cache_dir = cfg["gateway"]["cache_dir"] or out / "cache"
    return ChatClient(C.endpoint(cfg, model), CompletionCache(cache_dir), offline=bool(cfg["gateway"]["offline"]))


def _shard_name(problem_id: str) -> str:
    return hashlib.sha1(problem_id.encode("utf-8")).hexdigest()[:16]


# -- commands ---------------------------------------------------------------------


def cmd_synthesize(cfg: dict) -> int:
    """Sample (or read) candidate pools, label them in the sandbox, write pool files."""
    (problems_path,) = _require(cfg, "problems")
    problems = read_problems(problems_path)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    shard_dir = out / "pools.d"
    shard_dir.mkdir(exist_ok=True)
    pool_size = int(cfg["dataset"]["pool_size"])

    offline_pools: dict[str, list[tuple[int, str]]] | None = None
    if cfg["paths"]["from_files"]:
        (src_path,) = _require(cfg, "from_files")
        offline_pools = defaultdict(list)
        for pos, rec in enumerate(read_jsonl(src_path)):
            offline_pools[str(rec["problem_id"])].append((int(rec.get("sample_index", pos)), rec["source"]))
    client = None

    summary, failed = {}, []
    interpreter = cfg["sandbox"]["interpreter"]
    for problem in problems:
        shard = shard_dir / f"{_shard_name(problem.id)}.jsonl"
        quarantine = shard_dir / f"{_shard_name(problem.id)}.quarantine.jsonl"
        entry: dict[str, Any]
        if shard.exists():
            entry = read_json(shard.with_suffix(".summary.json"))
            summary[problem.id] = entry
            continue
        failures: list[str] = []
        if offline_pools is not None:
            rows = sorted(offline_pools.get(problem.id, []), key=lambda r: r[0])[:pool_size]
            texts = [src for _, src in rows if src.strip()]
            dropped = len(rows) - len(texts)
        else:
            if client is None:
                client = _client(cfg, out)
            sampling = C.sampling(cfg, "synthesis")
            sampling = type(sampling)(**{**sampling.__dict__, "n_samples": pool_size})
            result = sample_candidates(problem, client, sampling, bool(cfg["gateway"]["thinking_mode"]))
            texts, dropped = result.texts, result.dropped_empty
            failures = [f"{f.index}:{f.kind}" for f in result.failures]
        if not texts:
            logger.error("problem %s: no usable candidates", problem.id)
            failed.append(problem.id)
            summary[problem.id] = {"sampled": 0, "dropped_empty": dropped, "failures": failures}
            continue
        labeled = label_pool(problem, texts, C.limits(cfg), interpreter, int(cfg["sandbox"]["workers"]))
        kept = [c for c in labeled if not c.quarantined]
        bad = [c for c in labeled if c.quarantined]
        entry = {
            "sampled": len(texts),
            "dropped_empty": dropped,
            "failures": failures,
            "labeled": len(kept),
            "positives": sum(c.label for c in kept),
            "quarantined": len(bad),
        }
        write_pools(quarantine, bad)
        write_json(shard.with_suffix(".summary.json"), entry)
        write_pools(shard, kept)
        summary[problem.id] = entry

    pools: list[LabeledCandidate] = []
    quarantined: list[LabeledCandidate] = []
    for problem in problems:
        shard = shard_dir / f"{_shard_name(problem.id)}.jsonl"
        if shard.exists():
            pools.extend(read_pools(shard))
            quarantined.extend(read_pools(shard.with_name(shard.stem + ".quarantine.jsonl")))
    write_pools(out / "pools.jsonl", pools)
    write_pools(out / "quarantine.jsonl", quarantined)
    write_json(out / "synthesis_report.json", {"problems": summary, "failed": failed})
    if failed:
        raise PartialFailure(f"{len(failed)} problem(s) produced no candidates: {', '.join(failed)}")
    return EXIT_OK


def cmd_build(cfg: dict) -> int:
    problems_path, pools_path = _require(cfg, "problems", "pools")
    problems = read_problems(problems_path)
    pools = read_pools(pools_path)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    if not pools:
        logger.warning("no labeled candidates in %s; writing an empty dataset", pools_path)
    d = cfg["dataset"]
    try:
        instances, stats = build_dataset(problems, pools, int(d["k"]), d["strategy"], int(cfg["seed"]))
    except DanglingReferenceError as exc:
        raise C.ConfigError(str(exc)) from exc
    write_instances(out / "instances.jsonl", instances)
    write_stats(out / "stats.json", stats)
    logger.info("%d of %d groups retained", stats.n_groups_retained, stats.n_groups_total)
    return EXIT_OK


def cmd_score(cfg: dict) -> int:
    dataset_path, judgments_path = _require(cfg, "dataset", "judgments")
    by_id = {inst.group_id: inst for inst in read_instances(dataset_path)}
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    spec, tags = C.reward_spec(cfg), C.think_tags(cfg)
    records, unknown = [], []
    for rec in read_jsonl(judgments_path):
        inst = by_id.get(rec["group_id"])
        if inst is None:
            unknown.append(rec["group_id"])
            continue
        parsed, reward = score_response(rec["response"], inst.labels, spec, tags)
        order = parsed.order if parsed else None
        records.append(JudgmentRecord(inst.group_id, rec["response"], order, reward, spec.kind))
    write_judgments(out / "scored.jsonl", records)
    if unknown:
        raise PartialFailure(f"unknown group ids: {', '.join(sorted(set(unknown)))}")
    return EXIT_OK


def cmd_train_ref(cfg: dict) -> int:
    (dataset_path,) = _require(cfg, "dataset")
    dataset = read_instances(dataset_path)
    if not dataset:
        raise C.ConfigError(f"{dataset_path}: dataset is empty")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    tcfg = C.trainer_config(cfg)
    policy = PlackettLucePolicy(C.feature_config(cfg), tcfg.format_failure_rate)
    params, trajectory = train(dataset, tcfg, C.reward_spec(cfg), policy, workers=int(cfg["trainer"]["workers"]))
    save_checkpoint(out / "checkpoint.json", params, tcfg, seed=int(cfg["seed"]))
    write_metrics(out / "metrics.jsonl", trajectory)
    rewards = [m.mean_reward for m in trajectory]
    window = min(SMOOTHING_WINDOW, len(rewards))
    initial = sum(rewards[:window]) / window
    final = float(smoothed(rewards, window)[-1])
    logger.info("smoothed reward %.4f -> %.4f over %d steps", initial, final, len(rewards))
    if tcfg.learning_rate > 0 and final < initial:
        logger.error("training regressed: smoothed reward %.4f fell below initial %.4f", final, initial)
        return EXIT_INTERNAL
    return EXIT_OK


def _judge(spec: str, cfg: dict, out: Path):
    seed = int(cfg["seed"])
    tags = C.think_tags(cfg)
    if spec == "oracle":
        return OracleJudge()
    if spec == "random":
        return RandomJudge(seed)
    if spec in ("reversed", "reversed_oracle"):
        return ReversedOracleJudge()
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.exists():
            raise C.ConfigError(f"judge file {path} does not exist")
        return FileJudge(read_jsonl(path), tags)
    if spec == "model" or spec.startswith("model:"):
        model = spec[6:] or None
        return ModelJudge(_client(cfg, out, model), C.sampling(cfg, "evaluation"), tags)
    raise C.ConfigError(f"unknown judge {spec!r} (oracle|random|reversed|file:PATH|model[:NAME])")


def _generator(spec: str | None, cfg: dict, out: Path):
    if spec is None:
        (path,) = _require(cfg, "candidates")
        return FileCandidates(read_jsonl(path))
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.exists():
            raise C.ConfigError(f"candidate file {path} does not exist")
        return FileCandidates(read_jsonl(path))
    if spec == "model" or spec.startswith("model:"):
        model = spec[6:] or None
        return ModelCandidates(_client(cfg, out, model), C.sampling(cfg, "evaluation"),
                               bool(cfg["gateway"]["thinking_mode"]))
    raise C.ConfigError(f"unknown generator {spec!r} (file:PATH|model[:NAME])")


def cmd_eval(cfg: dict) -> int:
    (problems_path,) = _require(cfg, "problems")
    problems = read_problems(problems_path)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    e = cfg["eval"]
    labeler = SandboxLabeler(C.limits(cfg), cfg["sandbox"]["interpreter"], int(cfg["sandbox"]["workers"]))
    generator = _generator(e["generator"], cfg, out)
    judge = _judge(e["judge"], cfg, out)
    n, repeats, workers = int(e["n"]), int(e["repeats"]), int(e["workers"])

    if e["trained_judge"] or e["trained_generator"]:
        trained_gen = _generator(e["trained_generator"], cfg, out) if e["trained_generator"] else generator
        trained_judge = _judge(e["trained_judge"], cfg, out) if e["trained_judge"] else judge
        rep = decomposition_report(
            problems, {"base": generator, "trained": trained_gen}, {"base": judge, "trained": trained_judge},
            n, repeats, labeler, workers,
        )
        write_json(out / "decomposition.json", rep.to_record())
        (out / "decomposition.md").write_text(rep.table(), encoding="utf-8")
        sys.stdout.write(rep.table())
        excluded = sum(r.excluded for _, r in rep.rows)
    else:
        report, groups = run_eval(problems, generator, judge, n, repeats, labeler, workers)
        write_json(out / "report.json", report.to_record())
        (out / "report.md").write_text(render_report_table(report), encoding="utf-8")
        write_jsonl(out / "groups.jsonl", (
            {"problem_id": g.problem_id, "repeat": g.repeat_index, "labels": list(g.labels),
             "ranking": list(g.order), "flagged": g.flagged}
            for g in groups
        ))
        sys.stdout.write(render_report_table(report))
        excluded = report.excluded
    if excluded:
        raise PartialFailure(f"{excluded} (problem, repeat) pairs excluded; see the report")
    return EXIT_OK


def _read_metrics(path: Path) -> list[dict] | None:
    try:
        rows = list(read_jsonl(path))
        for r in rows:
            float(r["mean_reward"]), int(r["step"])
        return rows
    except (OSError, ValueError, KeyError, TypeError) as exc:
        logger.warning("skipping %s: %s", path, exc)
        return None


def cmd_report(cfg: dict, runs: Sequence[str]) -> int:
    """Summarize training runs into markdown, CSV and an overlaid reward plot."""
    series: dict[str, list[dict]] = {}
    for run in runs:
        path = Path(run) / "metrics.jsonl"
        if not path.exists():
            logger.warning("skipping %s: no metrics.jsonl", run)
            continue
        rows = _read_metrics(path)
        if rows:
            label = Path(run).name
            run_cfg = Path(run) / "config.json"
            if run_cfg.exists():
                try:
                    label = f"{label} ({read_json(run_cfg)['reward']['kind']})"
                except (ValueError, KeyError, TypeError):
                    pass
            series[label] = rows
    if not series:
        raise C.ConfigError("no readable metrics logs among the given run directories")
    out = _out_dir(cfg)

    columns = ["run", "steps", "initial_reward", "final_reward", "final_smoothed", "mean_kl", "mean_clip_frac"]
    table = []
    for label, rows in series.items():
        rewards = [r["mean_reward"] for r in rows]
        table.append([
            label, len(rows), rewards[0], rewards[-1], float(smoothed(rewards, SMOOTHING_WINDOW)[-1]),
            sum(r.get("kl", 0.0) for r in rows) / len(rows),
            sum(r.get("clip_frac", 0.0) for r in rows) / len(rows),
        ])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([columns, *table])
    (out / "report.csv").write_text(buf.getvalue(), encoding="utf-8")
    md = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in table:
        md.append("| " + " | ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row) + " |")
    md.append("")
    md.append("![reward curves](reward_curves.png)")
    (out / "report.md").write_text("\n".join(md) + "\n", encoding="utf-8")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, rows in series.items():
        steps = [r["step"] for r in rows]
        ax.plot(steps, smoothed([r["mean_reward"] for r in rows], SMOOTHING_WINDOW), label=label)
    ax.set_xlabel("training step")
    ax.set_ylabel(f"mean reward (window {SMOOTHING_WINDOW})")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "reward_curves.png", dpi=120)
    plt.close(fig)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

NAMED_FLAGS = {
    "problems": "paths.problems",
    "pools": "paths.pools",
    "dataset": "paths.dataset",
    "judgments": "paths.judgments",
    "candidates": "paths.candidates",
    "from_files": "paths.from_files",
    "out": "paths.out",
    "seed": "seed",
    "reward": "reward.kind",
    "judge": "eval.judge",
    "n": "eval.n",
    "repeats": "eval.repeats",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--problems")
    p.add_argument("--pools")
    p.add_argument("--dataset")
    p.add_argument("--judgments")
    p.add_argument("--candidates")
    p.add_argument("--from-files", dest="from_files")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--reward", choices=["pairwise", "ndcg", "selection"])
    p.add_argument("--judge")
    p.add_argument("--n", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    dotted = p.add_argument_group("config overrides")
    for path, default in C.leaves(C.DEFAULTS):
        if "." in path:
            dotted.add_argument(f"--{path}", dest=path, metavar="VALUE", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synthesize", "sample or read candidate pools and label them"),
        ("build", "partition labeled pools into mixed-quality training groups"),
        ("score", "score judgment responses against execution labels"),
        ("train-ref", "GRPO-train the Plackett-Luce reference judge"),
        ("eval", "Best-of-N evaluation or the three-row decomposition"),
        ("report", "summarize training runs"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories containing metrics.jsonl")
    return parser


def _flags(ns: argparse.Namespace) -> dict[str, Any]:
    flags: dict[str, Any] = {}
    values = vars(ns)
    for path, default in C.leaves(C.DEFAULTS):
        if "." in path and path in values:
            flags[path] = C.coerce(values[path], default)
    for name, path in NAMED_FLAGS.items():
        if values.get(name) is not None:
            flags[path] = values[name]
    return flags


COMMANDS = {
    "synthesize": cmd_synthesize,
    "build": cmd_build,
    "score": cmd_score,
    "train-ref": cmd_train_ref,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if ns.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = C.build_config(ns.config, _flags(ns))
        out = Path(cfg["paths"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        with filelock.FileLock(str(out / ".dualrank.lock"), timeout=0):
            if ns.command == "report":
                return cmd_report(cfg, ns.runs)
            return COMMANDS[ns.command](cfg)
    except filelock.Timeout:
        logger.error("output directory %s is in use by another command", cfg["paths"]["out"])
        return EXIT_INVALID
    except C.ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except PartialFailure as exc:
        logger.error("%s", exc)
        return EXIT_PARTIAL
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
