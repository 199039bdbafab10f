"""Command-line experiment harness.

Subcommands: gen-data, train, eval, compare, sweep-power, summarize.  Every
command is deterministic given its inputs and seed, never mutates its inputs,
and stamps emitted files with the config hash.  Exit codes: 0 success,
2 config/usage error, 3 runtime failure (with a machine-readable error.json
in the output directory).
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import training
from .config import (ConfigError, SystemConfig, config_hash, load_config,
                     read_training_section, watts_to_dbm, dbm_to_watts)
from .env import RandomPolicy
from .model import ModelParams, TrainConfig, init_params, load_checkpoint, \
    save_checkpoint
from .training import (Dataset, ExpertSearchPolicy, SequencePolicy,
                       baseline_rom, derive_seed, evaluate, generate_dataset,
                       load_dataset, model_dims, model_policy_factory,
                       save_dataset, train)

METRIC_COLUMNS = ["scene_id", "seed", "total_qoe", "violation_rate",
                  "policy_name", "config_hash"]

TAG_RANDOM_EVAL = 8


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RISDT_SEED")
    return int(env) if env else 0


def _resolve_out(args) -> str:
    if args.out is not None:
        return args.out
    return os.environ.get("RISDT_OUT", "out")


def parse_scene_ids(text: str) -> list:
    """Parse '0,3,8-10' into [0, 3, 8, 9, 10]."""
    ids = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            ids.extend(range(int(lo), int(hi) + 1))
        else:
            ids.append(int(part))
    return ids


def build_train_config(training_section: dict, args) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in training_section.items() if k in known}
    tcfg = TrainConfig(**kwargs)
    if getattr(args, "epochs", None) is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if getattr(args, "no_prompt", False):
        tcfg = replace(tcfg, use_prompt=False)
    tcfg.validate()
    return tcfg


def _load_scenes(args):
    cfg, scenes = load_config(args.config)
    training_section = read_training_section(args.config)
    chash = config_hash(cfg, scenes, training_section)
    return cfg, scenes, training_section, chash


def _select_scenes(scenes, ids_text):
    if ids_text is None:
        return list(scenes)
    wanted = parse_scene_ids(ids_text)
    by_id = {s.scene_id: s for s in scenes}
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise ConfigError(f"unknown scene ids: {missing}")
    return [by_id[i] for i in wanted]


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# Commands.

def cmd_gen_data(args) -> int:
    cfg, scenes, training_section, chash = _load_scenes(args)
    selected = _select_scenes(scenes, args.scenes)
    seed = _resolve_seed(args)
    out = _resolve_out(args)
    episodes = args.episodes or int(training_section.get(
        "episodes_per_scene", 30))
    candidates = args.candidates or int(training_section.get(
        "search_candidates", training.EXPERT_CANDIDATES))
    dataset = generate_dataset(selected, cfg, episodes, candidates, seed)
    save_dataset(dataset, os.path.join(out, "dataset"), chash)
    print(f"dataset: {len(selected)} scenes x {episodes} episodes "
          f"-> {os.path.join(out, 'dataset')}")
    return 0


def _policy_kind(mp: ModelParams) -> str:
    return "pg-zfo" if mp.cfg.use_prompt else "df-wp"


def cmd_train(args) -> int:
    cfg, scenes, training_section, chash = _load_scenes(args)
    seed = _resolve_seed(args)
    out = _resolve_out(args)
    os.makedirs(out, exist_ok=True)
    dataset = load_dataset(args.data)
    scenes_by_id = {s.scene_id: s for s in scenes}
    tcfg = build_train_config(training_section, args)
    tcfg = replace(tcfg, seed=seed)
    dims = model_dims(cfg, scenes)
    mp = init_params(tcfg, dims, seed)

    save_points = set()
    if args.checkpoints:
        marks = np.linspace(0, tcfg.epochs - 1, args.checkpoints, dtype=int)
        save_points = {int(m) for m in marks}

    def on_epoch_end(epoch, model):
        if epoch in save_points:
            idx = sorted(save_points).index(epoch)
            save_checkpoint(os.path.join(out, f"model_ck{idx}.ckpt"), model,
                            extra={"config_hash": chash, "epoch": epoch})

    log = train(mp, dataset, scenes_by_id, cfg, tcfg, seed,
                on_epoch_end=on_epoch_end)
    save_checkpoint(os.path.join(out, "model.ckpt"), mp,
                    extra={"config_hash": chash})
    write_csv(os.path.join(out, "loss.csv"),
              ["step", "epoch", "scene_id", "loss", "config_hash"],
              [[step, epoch, sid, repr(loss), chash]
               for step, epoch, sid, loss in log])
    first = np.mean([l for _, e, _, l in log if e == 0])
    last = np.mean([l for _, e, _, l in log if e == tcfg.epochs - 1])
    print(f"trained {_policy_kind(mp)}: {len(log)} steps, "
          f"first-epoch loss {first:.4f}, final-epoch loss {last:.4f}")
    return 0


def _make_factory(name, args, cfg, scenes, dataset, seed):
    if name in ("pg-zfo", "df-wp"):
        path = args.checkpoint if name == "pg-zfo" or not hasattr(
            args, "dfwp_checkpoint") else args.checkpoint
        mp = load_checkpoint(path)
        expected = "pg-zfo" if mp.cfg.use_prompt else "df-wp"
        if expected != name:
            raise ConfigError(f"checkpoint is a {expected} model, not {name}")
        return model_policy_factory(mp, cfg, dataset, seed)
    if name == "rom":
        if dataset is None:
            raise ConfigError("rom policy requires --data")
        scenes_by_id = {s.scene_id: s for s in scenes}
        policy, _ = baseline_rom(dataset, scenes_by_id, cfg, seed)
        return lambda scene, idx: policy
    if name == "random":
        return lambda scene, idx: RandomPolicy(
            cfg, derive_seed(seed, TAG_RANDOM_EVAL, scene.scene_id, idx))
    if name == "expert":
        candidates = dataset.search_candidates if dataset is not None \
            else training.EXPERT_CANDIDATES
        return lambda scene, idx: ExpertSearchPolicy(
            candidates, np.random.default_rng(
                derive_seed(seed, training.TAG_EXPERT, scene.scene_id, idx)))
    raise ConfigError(f"unknown policy: {name}")


def _metric_rows(name, factory, scenes, cfg, n_seeds, seed, chash):
    rows = []
    for scene in scenes:
        result = evaluate(factory, scene, cfg, n_seeds, seed)
        for i in range(n_seeds):
            rows.append([scene.scene_id, result.seeds[i],
                         repr(float(result.total_qoe[i])),
                         repr(float(result.violation_rate[i])), name, chash])
    return rows


def cmd_eval(args) -> int:
    cfg, scenes, _, chash = _load_scenes(args)
    selected = _select_scenes(scenes, args.scenes)
    seed = _resolve_seed(args)
    out = _resolve_out(args)
    os.makedirs(out, exist_ok=True)
    dataset = load_dataset(args.data) if args.data else None
    factory = _make_factory(args.policy, args, cfg, scenes, dataset, seed)
    rows = _metric_rows(args.policy, factory, selected, cfg, args.seeds, seed,
                        chash)
    path = os.path.join(out, "metrics.csv")
    write_csv(path, METRIC_COLUMNS, rows)
    print(f"eval: {len(rows)} rows -> {path}")
    return 0


def cmd_compare(args) -> int:
    cfg, scenes, _, chash = _load_scenes(args)
    selected = _select_scenes(scenes, args.scenes)
    seed = _resolve_seed(args)
    out = _resolve_out(args)
    os.makedirs(out, exist_ok=True)
    dataset = load_dataset(args.data)
    scenes_by_id = {s.scene_id: s for s in scenes}

    pg = load_checkpoint(args.pg_checkpoint)
    dfwp = load_checkpoint(args.dfwp_checkpoint)
    if not pg.cfg.use_prompt or dfwp.cfg.use_prompt:
        raise ConfigError("checkpoints passed to the wrong flags")
    rom_policy, rom_scene = baseline_rom(dataset, scenes_by_id, cfg, seed)

    rows = []
    rows += _metric_rows("pg-zfo", model_policy_factory(pg, cfg, dataset, seed),
                         selected, cfg, args.seeds, seed, chash)
    rows += _metric_rows("df-wp", model_policy_factory(dfwp, cfg, dataset, seed),
                         selected, cfg, args.seeds, seed, chash)
    rows += _metric_rows("rom", lambda scene, idx: rom_policy, selected, cfg,
                         args.seeds, seed, chash)
    path = os.path.join(out, "compare.csv")
    write_csv(path, METRIC_COLUMNS, rows)
    print(f"compare: rom tuned on scene {rom_scene}; {len(rows)} rows -> {path}")
    return 0


def cmd_sweep_power(args) -> int:
    cfg, scenes, _, chash = _load_scenes(args)
    selected = _select_scenes(scenes, args.scenes)
    seed = _resolve_seed(args)
    out = _resolve_out(args)
    os.makedirs(out, exist_ok=True)
    dataset = load_dataset(args.data) if args.data else None
    grid = sorted(float(x) for x in args.pmax_dbm.split(","))
    if not grid:
        raise ConfigError("empty --pmax-dbm grid")

    raw_rows, summary_rows = [], []
    for pmax_dbm in grid:
        swept = replace(cfg, max_transmit_power=dbm_to_watts(pmax_dbm))
        factory = _make_factory(args.policy, args, swept, scenes, dataset, seed)
        for scene in selected:
            result = evaluate(factory, scene, swept, args.seeds, seed)
            for i in range(args.seeds):
                raw_rows.append([repr(pmax_dbm), scene.scene_id,
                                 result.seeds[i],
                                 repr(float(result.total_qoe[i])),
                                 repr(float(result.violation_rate[i])),
                                 args.policy, chash])
            summary_rows.append([repr(pmax_dbm), scene.scene_id, args.policy,
                                 repr(result.mean_total_qoe),
                                 repr(result.std_total_qoe),
                                 repr(float(np.mean(result.violation_rate))),
                                 args.seeds, chash])
    write_csv(os.path.join(out, "sweep_raw.csv"),
              ["pmax_dbm"] + METRIC_COLUMNS, raw_rows)
    write_csv(os.path.join(out, "sweep.csv"),
              ["pmax_dbm", "scene_id", "policy_name", "mean_total_qoe",
               "std_total_qoe", "mean_violation_rate", "n_seeds",
               "config_hash"], summary_rows)
    print(f"sweep-power: {len(summary_rows)} summary rows -> "
          f"{os.path.join(out, 'sweep.csv')}")
    return 0


# ---------------------------------------------------------------------------
# Summaries / figure data.

def _aggregate_metrics(header, rows):
    idx = {name: header.index(name) for name in header}
    groups = {}
    for row in rows:
        key = (int(row[idx["scene_id"]]), row[idx["policy_name"]])
        groups.setdefault(key, []).append(float(row[idx["total_qoe"]]))
    out = []
    for (sid, policy), values in sorted(groups.items()):
        arr = np.array(values)
        out.append({"scene_id": sid, "policy_name": policy,
                    "mean_total_qoe": float(np.mean(arr)),
                    "std_total_qoe": float(np.std(arr)),
                    "n_seeds": len(values)})
    return out


def emit_summary(paths, out_dir) -> dict:
    """Aggregate metric CSVs into summary.json plus per-figure data files."""
    os.makedirs(out_dir, exist_ok=True)
    summary = {"sources": list(paths), "scene_qoe": [], "qoe_vs_power": [],
               "loss_curve_points": 0}
    loss_rows, metric_agg, power_groups = [], [], {}
    for path in paths:
        header, rows = read_csv(path)
        if "loss" in header:
            step_i, loss_i = header.index("step"), header.index("loss")
            loss_rows += [[int(r[step_i]), float(r[loss_i])] for r in rows]
        elif "pmax_dbm" in header and "mean_total_qoe" in header:
            for r in rows:
                key = (float(r[header.index("pmax_dbm")]),
                       int(r[header.index("scene_id")]),
                       r[header.index("policy_name")])
                power_groups[key] = {
                    "mean_total_qoe": float(r[header.index("mean_total_qoe")]),
                    "std_total_qoe": float(r[header.index("std_total_qoe")]),
                    "n_seeds": int(r[header.index("n_seeds")])}
        elif "pmax_dbm" in header:
            idx = {n: header.index(n) for n in header}
            tmp = {}
            for r in rows:
                key = (float(r[idx["pmax_dbm"]]), int(r[idx["scene_id"]]),
                       r[idx["policy_name"]])
                tmp.setdefault(key, []).append(float(r[idx["total_qoe"]]))
            for key, vals in tmp.items():
                arr = np.array(vals)
                power_groups[key] = {"mean_total_qoe": float(np.mean(arr)),
                                     "std_total_qoe": float(np.std(arr)),
                                     "n_seeds": len(vals)}
        elif "total_qoe" in header:
            metric_agg += _aggregate_metrics(header, rows)

    if loss_rows:
        loss_rows.sort(key=lambda r: r[0])
        write_csv(os.path.join(out_dir, "fig_loss_curve.csv"),
                  ["step", "loss"], [[s, repr(l)] for s, l in loss_rows])
        summary["loss_curve_points"] = len(loss_rows)
    if metric_agg:
        write_csv(os.path.join(out_dir, "fig_scene_qoe.csv"),
                  ["scene_id", "policy_name", "mean_total_qoe",
                   "std_total_qoe", "n_seeds"],
                  [[m["scene_id"], m["policy_name"],
                    repr(m["mean_total_qoe"]), repr(m["std_total_qoe"]),
                    m["n_seeds"]] for m in metric_agg])
        summary["scene_qoe"] = metric_agg
    if power_groups:
        ordered = sorted(power_groups.items())   # ascending pmax first
        write_csv(os.path.join(out_dir, "fig_qoe_vs_power.csv"),
                  ["pmax_dbm", "scene_id", "policy_name", "mean_total_qoe",
                   "std_total_qoe", "n_seeds"],
                  [[repr(k[0]), k[1], k[2], repr(v["mean_total_qoe"]),
                    repr(v["std_total_qoe"]), v["n_seeds"]]
                   for k, v in ordered])
        summary["qoe_vs_power"] = [
            {"pmax_dbm": k[0], "scene_id": k[1], "policy_name": k[2], **v}
            for k, v in ordered]

    with open(os.path.join(out_dir, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_summarize(args) -> int:
    out = _resolve_out(args)
    summary = emit_summary(args.metrics, out)
    print(f"summary -> {os.path.join(out, 'summary.json')} "
          f"({len(summary['sources'])} sources)")
    return 0


# ---------------------------------------------------------------------------
# Entry point.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risdt",
        description="QoE-aware RIS-assisted interaction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate an expert dataset")
    common(p)
    p.add_argument("--scenes", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--candidates", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="offline-train a model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-prompt", action="store_true",
                   help="train the prompt-free ablation")
    p.add_argument("--checkpoints", type=int, default=0,
                   help="save N evenly spaced mid-training checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--policy", default="pg-zfo",
                   choices=["pg-zfo", "df-wp", "rom", "random", "expert"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="pg-zfo vs df-wp vs rom")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--pg-checkpoint", required=True)
    p.add_argument("--dfwp-checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-power", help="evaluate across a P_max grid")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--pmax-dbm", required=True)
    p.add_argument("--policy", default="pg-zfo",
                   choices=["pg-zfo", "df-wp", "rom", "random", "expert"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_sweep_power)

    p = sub.add_parser("summarize", help="aggregate metric CSVs")
    p.add_argument("metrics", nargs="*")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_summarize)
    return parser


def _write_error(out_dir, command, exc) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"command": command, "error": type(exc).__name__,
                       "message": str(exc)}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_error(_resolve_out(args), args.command, exc)
        return 2
    except Exception as exc:   # pipeline failure: record and signal
        print(f"error: {exc}", file=sys.stderr)
        _write_error(_resolve_out(args), args.command, exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
