"""Command-line entry point: ``topogrid <command> [options]``.

Exit status is 0 on success, 1 on a validation or contract failure and 2
when a solve or a training run diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .actions import TopoAction, layout
from .chronics import (
    STEPS_PER_DAY, ChronicError, Scenario, check_chronic, full_scenario, load_chronic, load_chronics,
    slice_chronic,
)
from .config import ConfigError, RunConfig, load_config
from .env import EnvConfig, EpisodeTrace, GridEnv, run_episode
from .fixtures import FIXTURE_SEED, write_fixtures
from .grid import GridSpec, SpecError, load_spec, validate_spec
from .metrics import (
    EvalHistory, MetricError, SCORE_COLUMNS, do_nothing_baseline, episode_cost, l2rpn_score, s2c,
    summarize, write_rows, write_summary,
)
from .nn import CheckpointError, PolicyNetwork, load_into
from .observations import BUILDERS
from .ppo import evaluate, train

log = logging.getLogger("topogrid")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2
DO_NOTHING = "do-nothing"


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- helpers

def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {"seed": args.seed, "encoder": args.encoder, "out": Path(args.out) if args.out else None}
    if args.opponent is not None:
        on = args.opponent == "on"
        over["train_opponent"] = on
        over["eval_opponent"] = (on,)
    return cfg.with_overrides(**over)


def _load(cfg: RunConfig, ids=None) -> tuple[GridSpec, dict]:
    cfg.check_paths()
    spec = load_spec(cfg.grid)
    problems = validate_spec(spec)
    if problems:
        raise CommandError(f"{cfg.grid}: " + "; ".join(problems))
    return spec, load_chronics(cfg.chronics, spec, ids)


def _trace_name(chronic_id: int, opponent: bool) -> str:
    return f"chronic{chronic_id}_{'opp' if opponent else 'noopp'}.jsonl"


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ----------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    cfg = _run_config(args)
    report: list[str] = []
    try:
        cfg.check_paths()
        spec = load_spec(cfg.grid)
    except (ConfigError, SpecError) as exc:
        print(f"FAIL {exc}")
        return EXIT_INVALID
    report += [f"{cfg.grid}: {p}" for p in validate_spec(spec)]
    n_ok = 0
    for d in sorted(p for p in cfg.chronics.iterdir() if p.is_dir()):
        try:
            check_chronic(load_chronic(d, spec), spec, str(d))
            n_ok += 1
        except ChronicError as exc:
            report.append(str(exc))
    for msg in report:
        print(f"FAIL {msg}")
    print(f"{'ok' if not report else 'invalid'}: grid {cfg.grid}, {n_ok} chronics clean, {len(report)} problems")
    return EXIT_OK if not report else EXIT_INVALID


def _state_at(spec: GridSpec, chronic, step: int, env_config: EnvConfig, encoder: str, seed: int) -> GridEnv:
    # roll do-nothing forward so timers and maintenance reflect ``step``
    env = GridEnv(spec, env_config, BUILDERS[encoder])
    env.reset(slice_chronic(chronic, full_scenario(chronic)), seed=seed)
    noop = TopoAction.do_nothing(layout(spec))
    while env.state.step_index < step:
        if env.done:
            raise CommandError(f"do-nothing run ends before step {step}")
        env.step(noop)
    return env


def cmd_powerflow(args) -> int:
    cfg = _run_config(args)
    spec, chronics = _load(cfg, [args.chronic])
    env = _state_at(spec, chronics[args.chronic], args.step, cfg.env_config(False), "flat", cfg.seed)
    flow = env.flow
    _print_json({
        "chronic": args.chronic, "step": args.step, "diverged": flow.diverged,
        "line_flow": [float(x) for x in flow.line_flow], "rho": [float(x) for x in flow.rho],
        "total_loss": float(flow.total_loss), "slack_p": float(flow.slack_p),
        "gen_total": flow.gen_total, "load_total": flow.load_total, "unserved": list(flow.unserved),
    })
    return EXIT_DIVERGED if flow.diverged else EXIT_OK


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_observe(args) -> int:
    cfg = _run_config(args)
    spec, chronics = _load(cfg, [args.chronic])
    env = _state_at(spec, chronics[args.chronic], args.step, cfg.env_config(False), cfg.encoder, cfg.seed)
    _print_json({"chronic": args.chronic, "step": args.step, "encoder": cfg.encoder,
                 "observation": _jsonable(env.observe())})
    return EXIT_OK


def cmd_gen_fixtures(args) -> int:
    out = Path(args.out or "fixtures")
    seed = FIXTURE_SEED if args.seed is None else args.seed
    write_fixtures(out, seed)
    print(f"wrote {out / 'case5.json'} and {out / 'chronics'} (seed {seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.total_steps is not None:
        cfg = dataclasses.replace(cfg, ppo=dataclasses.replace(cfg.ppo, total_steps=args.total_steps))
    cfg.check_split()
    spec, chronics = _load(cfg, sorted(set(cfg.train_chronics) | set(cfg.test_chronics)))
    result = train(
        spec, chronics, cfg.ppo, cfg.env, encoder=cfg.encoder, train_ids=cfg.train_chronics,
        eval_ids=cfg.test_chronics, train_opponent=cfg.train_opponent, eval_modes=cfg.eval_opponent,
        seed=cfg.seed, out_dir=cfg.out, resume=args.resume,
    )
    if result.diverged:
        print(f"diverged at step {result.steps}: {result.error}; last checkpoint kept in {cfg.out}")
        return EXIT_DIVERGED
    print(f"trained {result.steps} steps; artifacts in {cfg.out}")
    return EXIT_OK


def _actor(cfg: RunConfig, spec: GridSpec, checkpoint: str):
    if checkpoint == DO_NOTHING:
        noop = TopoAction.do_nothing(layout(spec))
        return lambda obs, mask: noop
    policy = PolicyNetwork(spec, cfg.encoder, 0, noop_prior=0.0)
    load_into(policy, checkpoint)
    return policy


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    spec, chronics = _load(cfg)
    actor = _actor(cfg, spec, args.checkpoint)
    traces = cfg.out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    rows = evaluate(actor, spec, chronics, sorted(chronics), cfg.env, cfg.encoder, 0, cfg.seed,
                    cfg.eval_opponent, traces)
    table = [{"chronic": r.chronic, "opponent": int(r.opponent), "length": r.length,
              "chronic_length": r.chronic_length, "reward_sum": repr(r.reward_sum)} for r in rows]
    write_rows(table, cfg.out / "results.csv")
    print(f"{len(table)} episodes; traces in {traces}; table {cfg.out / 'results.csv'}")
    return EXIT_OK


def _baseline(spec, chronic, trace: EpisodeTrace, cfg: RunConfig, cache: Path | None) -> float:
    if cache is not None:
        path = cache / _trace_name(chronic.id, trace.opponent)
        if path.exists():
            return episode_cost(EpisodeTrace.read(path), chronic, cfg.score)
    seed = trace.seed if trace.seed is not None else cfg.seed + chronic.id
    dn_trace, cost = do_nothing_baseline(spec, chronic, cfg.score, cfg.env_config(trace.opponent), seed)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        dn_trace.write(cache / _trace_name(chronic.id, trace.opponent))
    return cost


def cmd_score(args) -> int:
    cfg = _run_config(args)
    spec, chronics = _load(cfg)
    cache = Path(args.baseline) if args.baseline else cfg.out / "baseline"
    rows = []
    for seed_label, tdir in enumerate(args.traces):
        files = sorted(Path(tdir).glob("chronic*_*.jsonl"))
        if not files:
            raise CommandError(f"no traces found in {tdir}")
        for path in files:
            trace = EpisodeTrace.read(path)
            if trace.chronic_id not in chronics:
                raise CommandError(f"{path}: unknown chronic {trace.chronic_id}")
            chronic = chronics[trace.chronic_id]
            cost = episode_cost(trace, chronic, cfg.score)
            dn = _baseline(spec, chronic, trace, cfg, cache)
            rows.append({"seed": seed_label, "chronic": trace.chronic_id, "opponent": int(trace.opponent),
                         "length": trace.length, "chronic_length": trace.horizon, "cost": repr(cost),
                         "cost_do_nothing": repr(dn), "score": repr(l2rpn_score(cost, dn))})
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, cfg.out / "scores.csv", SCORE_COLUMNS)
    summary = {"per_chronic": summarize(rows)}
    per_seed = summarize(rows, by=("seed", "opponent"))
    summary["per_seed_mean"] = per_seed
    summary["overall"] = summarize(
        [{"opponent": r["opponent"], "score": r["mean"]} for r in per_seed], by=("opponent",))
    if args.eval_log:
        s2c_rows = []
        for seed_label, path in enumerate(args.eval_log):
            records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
            for opponent in sorted({bool(r["opponent"]) for r in records}):
                hist = EvalHistory.from_records(records, cfg.ppo.total_steps, opponent)
                for cid in sorted(hist.evals):
                    s2c_rows.append({"seed": seed_label, "chronic": cid, "opponent": int(opponent),
                                     "s2c": s2c(hist, cid)})
        write_rows(s2c_rows, cfg.out / "s2c.csv", ("seed", "chronic", "opponent", "s2c"))
        summary["s2c"] = summarize(s2c_rows, value="s2c")
    write_summary(summary, cfg.out / "summary.json")
    for s in summary["overall"]:
        print(f"opponent={s['opponent']}: score {s['mean']:.2f} +- {s['std']:.2f} over {s['n']} seed(s)")
    print(f"{len(rows)} rows; {cfg.out / 'scores.csv'}, {cfg.out / 'summary.json'}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _run_config(args)
    trace = EpisodeTrace.read(args.trace)
    spec, chronics = _load(cfg, [trace.chronic_id])
    chronic = chronics[trace.chronic_id]
    start_day, rem = divmod(trace.offset, STEPS_PER_DAY)
    if rem:
        raise CommandError(f"trace offset {trace.offset} is not a whole day")
    view = slice_chronic(chronic, Scenario(trace.chronic_id, start_day, trace.horizon))
    actions = iter(trace.records)
    env = GridEnv(spec, cfg.env_config(trace.opponent), BUILDERS["flat"])
    seed = trace.seed if trace.seed is not None else cfg.seed + trace.chronic_id
    replayed = run_episode(env, view, lambda obs, mask: TopoAction(np.array(next(actions).action)), seed=seed)
    # compare serialized records so NaN fields of a diverged step compare equal
    same = [json.dumps(dataclasses.asdict(a)) == json.dumps(dataclasses.asdict(b))
            for a, b in zip(trace.records, replayed.records)]
    mismatch = [i for i, ok in enumerate(same) if not ok]
    if len(trace.records) != len(replayed.records):
        mismatch.append(min(len(trace.records), len(replayed.records)))
    for rec in replayed.records if args.verbose else ():
        print(json.dumps(dataclasses.asdict(rec)))
    print(f"chronic {trace.chronic_id}: {replayed.length}/{trace.horizon} steps, reward sum {replayed.reward_sum:.6f}, "
          f"cost {episode_cost(replayed, chronic, cfg.score):.6f}")
    if mismatch:
        print(f"replay diverges from the recorded trace at step {mismatch[0]}")
        return EXIT_INVALID
    print("replay matches the recorded trace")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config (default: bundled fixture)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--encoder", choices=("flat", "substation-graph", "element-graph"))
    common.add_argument("--opponent", choices=("on", "off"), help="opponent for training and evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="topogrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check the grid file and chronics")
    p = sub.add_parser("powerflow", parents=[common], help="solve the flow at a chronic step")
    p.add_argument("--chronic", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    p = sub.add_parser("observe", parents=[common], help="print the observation at a chronic step")
    p.add_argument("--chronic", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    sub.add_parser("gen-fixtures", parents=[common], help="write the synthetic grid and chronics")
    p = sub.add_parser("train", parents=[common], help="train a masked PPO agent")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--total-steps", type=int, help="override ppo.total_steps")
    p = sub.add_parser("evaluate", parents=[common], help="deterministic episodes on every chronic")
    p.add_argument("--checkpoint", required=True, help=f"checkpoint file or '{DO_NOTHING}'")
    p = sub.add_parser("score", parents=[common], help="costs, scores and S2C from traces")
    p.add_argument("traces", nargs="+", help="trace directories, one per seed")
    p.add_argument("--baseline", help="directory of do-nothing traces (computed when missing)")
    p.add_argument("--eval-log", nargs="*", help="training eval logs, one per seed, for S2C")
    p = sub.add_parser("replay", parents=[common], help="re-run a trace and check it reproduces")
    p.add_argument("trace")
    return parser


COMMANDS = {
    "validate": cmd_validate, "powerflow": cmd_powerflow, "observe": cmd_observe,
    "gen-fixtures": cmd_gen_fixtures, "train": cmd_train, "evaluate": cmd_evaluate,
    "score": cmd_score, "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, SpecError, ChronicError, CheckpointError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
