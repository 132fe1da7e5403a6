"""``semoff`` command line: train, eval, compare, sweep-k.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config
from .experiments import ALL_POLICIES, STATIC_POLICIES, MissingArtifact, check_k_values, evaluate, summarize, sweep_k
from .metrics import EVAL_COLUMNS, SWEEP_COLUMNS, write_csv

log = logging.getLogger("semoff")

EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _name_list(text: str) -> list[str]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in ALL_POLICIES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown policies {bad}; choose from {', '.join(ALL_POLICIES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario TOML/JSON file of dotted keys")
    common.add_argument("--seed", type=_int_list, default=[0], metavar="N[,N...]")
    common.add_argument("--out", metavar="DIR", default="out")
    common.add_argument("--jobs", type=int, default=1, metavar="K", help="worker processes for evaluation")
    common.add_argument("--profile", choices=("paper", "fast"), default="paper")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    p = argparse.ArgumentParser(prog="semoff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train federated MAPPO or the DQN baseline")
    t.add_argument("--algo", choices=("mappo", "dqn"), default="mappo")
    t.add_argument("--episodes", type=int, help="override ppo.episodes / dqn.episodes")

    e = sub.add_parser("eval", parents=[common], help="evaluate policies on seeded snapshots")
    e.add_argument("--policy", type=_name_list, default=list(STATIC_POLICIES))
    e.add_argument("--mappo", metavar="RUN_DIR")
    e.add_argument("--dqn", metavar="RUN_DIR")
    e.add_argument("--snapshots", type=int, default=100)

    c = sub.add_parser("compare", parents=[common], help="energy of all six policies over snapshots")
    c.add_argument("--mappo", metavar="RUN_DIR")
    c.add_argument("--dqn", metavar="RUN_DIR")
    c.add_argument("--static-only", action="store_true", help="skip the learned policies")
    c.add_argument("--snapshots", type=int, default=100)

    s = sub.add_parser("sweep-k", parents=[common], help="energy versus symbols per word")
    s.add_argument("--k", type=_int_list, default=[5, 10, 15, 20])
    s.add_argument("--policy", type=_name_list, default=list(STATIC_POLICIES))
    s.add_argument("--train", action="store_true", help="train MAPPO for every k and include it")
    s.add_argument("--snapshots", type=int, default=100)
    return p


def _config(args) -> ScenarioConfig:
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "episodes", None) is not None:
        overrides["ppo.episodes" if args.algo == "mappo" else "dqn.episodes"] = args.episodes
    return load_config(args.config, profile=args.profile, overrides=overrides)


def _echo_config(cfg: ScenarioConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    log.info("effective config written to %s", directory / "config.json")
    (directory / "config.json").write_text(json.dumps(cfg.to_flat(), indent=1, sort_keys=True) + "\n")


def _train_one(cfg: ScenarioConfig, algo: str, seed: int, out: Path) -> Path:
    from .baselines import train_dqn
    from .marl import train

    run_dir = out / f"run_{algo}_s{seed}"
    _echo_config(cfg, run_dir)
    if algo == "mappo":
        train(cfg, seed, run_dir)
    else:
        train_dqn(cfg, seed, run_dir)
    return run_dir


def cmd_train(args) -> int:
    cfg = _config(args)
    for seed in args.seed:
        run_dir = _train_one(cfg, args.algo, seed, Path(args.out))
        print(run_dir)
    return 0


def _runs(args) -> dict:
    runs = {}
    for algo in ("mappo", "dqn"):
        path = getattr(args, algo, None)
        if path:
            if not Path(path).is_dir():
                raise MissingArtifact(f"run directory not found: {path}")
            runs[algo] = path
    return runs


def cmd_eval(args) -> int:
    cfg = _config(args)
    runs = _runs(args)
    missing = [p for p in ("mappo", "dqn") if p in args.policy and p not in runs]
    if missing:
        raise MissingArtifact(f"policies {missing} need --{missing[0]} RUN_DIR")
    rows = evaluate(cfg, args.policy, args.seed, args.snapshots, runs, args.jobs)
    out = Path(args.out)
    _echo_config(cfg, out)
    write_csv(out / "eval.csv", rows, EVAL_COLUMNS)
    print(json.dumps(summarize(rows), indent=1))
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    if args.static_only:
        policies, runs = list(STATIC_POLICIES), {}
    else:
        runs = _runs(args)
        for algo in ("mappo", "dqn"):
            if algo not in runs:
                raise MissingArtifact(f"compare needs --{algo} RUN_DIR (or --static-only)")
        policies = list(ALL_POLICIES)
    rows = evaluate(cfg, policies, args.seed, args.snapshots, runs, args.jobs)
    out = Path(args.out)
    _echo_config(cfg, out)
    write_csv(out / "compare.csv", rows, EVAL_COLUMNS)
    print(json.dumps(summarize(rows), indent=1))
    return 0


def cmd_sweep_k(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    policies = list(args.policy)
    runs_by_k = {}
    check_k_values(cfg, args.k)  # before any training
    if args.train:
        if "mappo" not in policies:
            policies.append("mappo")
        for k in args.k:
            cfg_k = cfg.replace(**{"semantics.k": k})
            runs_by_k[k] = {"mappo": _train_one(cfg_k, "mappo", args.seed[0], out / f"k{k}")}
    elif any(p in ("mappo", "dqn") for p in policies):
        raise MissingArtifact("sweep-k with learned policies needs --train")
    rows = sweep_k(cfg, args.k, policies, args.seed, args.snapshots, args.jobs, runs_by_k)
    _echo_config(cfg, out)
    write_csv(out / "sweep_k.csv", rows, SWEEP_COLUMNS)
    for r in rows:
        print(f"k={r['k']:>3} {r['policy']:<10} {r['mean_energy_J']:.6g} J "
              f"(std {r['std_energy_J']:.3g}, completion {r['completion_rate']:.2f})")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "sweep-k": cmd_sweep_k}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEMOFF_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"semoff: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"semoff: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FloatingPointError as exc:
        print(f"semoff: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
