"""
Runners behind the management commands. Each takes a validated RunConfig and
an output directory and returns the per-episode result rows it produced.
"""

import copy
import importlib.metadata
import json
import logging
import subprocess
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from experiments.exceptions import ConfigError, UnknownAblation
from experiments.forms import resolve_config, scenario_from
from learning.agent import CvdAgent, FlatDqnAgent, load_agent
from learning.features import Encoding
from learning.training import TraceSource, Trainer
from reports.utils import (
    aggregate,
    comparison_table,
    result_row,
    results_frame,
    summary_table,
    write_learning_curve,
)
from schedulers.heuristics import resolve_split
from simulation.env import evaluate_policy
from simulation.policies import build_policy, is_learned
from traces.utils import VmType, default_catalog, generate_trace, load_trace, save_trace

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent.parent

ABLATION_VARIANTS = {
    "full": {},
    "no_filter": {"filter": {"enabled": False}},
    "no_decomposition": {"agent": {"encoding": Encoding.FLAT.value}},
    "no_look_ahead": {"agent": {"encoding": Encoding.PRE_STATE.value}},
    "bf_top5": {"filter": {"k": 5, "split": [5, 0]}},
    "is_top5": {"filter": {"k": 5, "split": [0, 5]}},
    "mixed_21": {"filter": {"k": 3, "split": None}},
    "mixed_32": {"filter": {"k": 5, "split": None}},
    "mixed_43": {"filter": {"k": 7, "split": None}},
    "mixed_64": {"filter": {"k": 10, "split": None}},
}
ABLATION_SETS = {
    "operators": ["full", "no_filter", "no_decomposition", "no_look_ahead"],
    "filters": ["bf_top5", "is_top5", "mixed_32"],
    "k_sweep": ["mixed_21", "mixed_32", "mixed_43", "mixed_64"],
}
ABLATION_COLUMNS = (
    "variant",
    "seed",
    "encoding",
    "input_width",
    "filter_enabled",
    "k",
    "n_bf",
    "n_is",
    "epochs",
    "final_length",
    "mean_candidates",
)
# epochs averaged for an ablation's final length
FINAL_WINDOW = 10


def project_version() -> str:
    """`git describe` of the working tree, else the installed package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=REPO_ROOT,
            capture_output=True,
            text=True,
            check=True,
        )
        if out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        pass
    try:
        return importlib.metadata.version("vmsched")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir, kind: str, config) -> dict:
    manifest = {
        "command": kind,
        "version": project_version(),
        "seed": config.scenario.seed,
        "out_dir": str(out_dir),
        "config": config.raw,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def catalog_of(config) -> list[VmType]:
    entries = config["trace"]["catalog"]
    if not entries:
        return default_catalog()
    return [VmType.from_dict(entry) for entry in entries]


def run_trace(config, offset: int = 0):
    """The configured trace file, or a synthetic trace seeded with trace.seed + offset."""
    section = config["trace"]
    if section["path"]:
        return load_trace(section["path"])
    return generate_trace(
        catalog_of(config), section["length"], section["seed"] + offset, arrival_rate=section["arrival_rate"]
    )


def trace_source(config) -> TraceSource:
    section = config["trace"]
    trace = load_trace(section["path"]) if section["path"] else None
    return TraceSource(
        trace=trace,
        catalog=catalog_of(config),
        length=section["length"],
        seed=section["seed"],
        arrival_rate=section["arrival_rate"],
    )


def build_agent(config):
    if config.agent.encoding == Encoding.FLAT:
        if config.scenario.expands:
            raise ConfigError("The flat network needs a fixed cluster size; use a non-expansion scenario")
        return FlatDqnAgent(config.agent, config.scenario.n_pms_initial)
    return CvdAgent(config.agent, config.candidate_filter)


def train_agent(agent, config, out_dir, epochs: int, start_epoch: int = 0):
    trainer = Trainer(agent, config.scenario, trace_source(config), out_dir=out_dir, start_epoch=start_epoch)
    history = trainer.run(epochs, checkpoint_meta={"scenario": config.scenario.to_dict()})
    write_learning_curve([Path(out_dir) / "training_log.csv"], Path(out_dir) / "learning_curve.csv")
    return history


def episode_row(result, seed: int, scenario, policy: str) -> dict:
    # warm start is its own column, so the table pivots on it
    label = scenario.descriptor(with_warm_start=False)
    row = result_row(result, seed, label, scenario.warm_start_ratio, policy)
    row["steps"] = result.steps
    return row


def write_results(out_dir, rows, results):
    out_dir = Path(out_dir)
    results_frame(rows).to_csv(out_dir / "results.csv", index=False, float_format="%.10g")
    with (out_dir / "results.jsonl").open("w", encoding="utf-8") as f:
        for result in results:
            f.write(result.to_json() + "\n")


def run_gen_trace(config, out_dir):
    section = config["trace"]
    trace = generate_trace(
        catalog_of(config), section["length"], section["seed"], arrival_rate=section["arrival_rate"]
    )
    path = Path(out_dir) / f"trace_seed{section['seed']}.jsonl"
    save_trace(trace, path)
    logger.info(f"Wrote {len(trace.creates)} creates ({len(trace)} events) to {path}")
    return []


def run_train(config, out_dir):
    """Train from scratch, or resume from scheduler.checkpoint for agent.epochs more epochs."""
    checkpoint = config["scheduler"]["checkpoint"]
    if checkpoint:
        agent = load_agent(checkpoint, with_replay=True)
        logger.info(f"Resuming {agent.kind} from {checkpoint} at epoch {agent.epoch}")
    else:
        agent = build_agent(config)
    train_agent(agent, config, out_dir, config.agent.epochs, start_epoch=agent.epoch)
    return []


def run_eval(config, out_dir):
    name = config["scheduler"]["policy"]
    policy = build_policy(name, config["scheduler"]["checkpoint"])
    scenario = config.scenario
    rows, results, seeds = [], [], []
    for i in range(config["eval"]["seeds"]):
        seed = scenario.seed + i
        result = evaluate_policy(scenario, run_trace(config, offset=i), policy, seed)
        rows.append(episode_row(result, seed, scenario, name))
        results.append(result)
        seeds.append(seed)
        logger.debug(f"{name} seed {seed}: length {result.scheduled_length}")

    write_results(out_dir, rows, results)
    summary = aggregate(results, policy=name, scenario=scenario.descriptor(), seeds=seeds)
    (Path(out_dir) / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    logger.info(
        f"{name} on {scenario.descriptor()}: mean length {summary.mean['scheduled_length']:.1f} "
        f"over {len(results)} seeds"
    )
    return rows


def compare_policies(config) -> dict:
    """Policies to compare, learned ones loaded read-only from their checkpoints."""
    section = config["compare"]
    scheduler = config["scheduler"]
    policies = {}
    for name in section["policies"]:
        checkpoint = section["checkpoints"].get(name)
        if checkpoint is None and is_learned(name) and name == scheduler["policy"]:
            checkpoint = scheduler["checkpoint"]
        policies[name] = build_policy(name, checkpoint)
    return policies


def run_compare(config, out_dir):
    """
    Evaluate every configured policy on every scenario and warm-start ratio.

    All policies see the same trace and seed for a given seed index.
    """
    section = config["compare"]
    policies = compare_policies(config)
    scenarios = [scenario_from(data) for data in section["scenarios"] or []] or [config.scenario]
    traces = [run_trace(config, offset=i) for i in range(section["seeds"])]

    rows, results = [], []
    for base in scenarios:
        for ratio in section["warm_starts"]:
            scenario = replace(base, warm_start_ratio=ratio)
            for i, trace in enumerate(traces):
                seed = scenario.seed + i
                for name, policy in policies.items():
                    result = evaluate_policy(scenario, trace, policy, seed)
                    rows.append(episode_row(result, seed, scenario, name))
                    results.append(result)
            logger.info(f"Compared {len(policies)} policies on {scenario.descriptor()}")

    out_dir = Path(out_dir)
    write_results(out_dir, rows, results)
    summary = summary_table(results_frame(rows))
    comparison_table(summary).to_csv(out_dir / "table.csv", index=False)
    (out_dir / "summary.json").write_text(
        summary.to_json(orient="records", indent=2) + "\n", encoding="utf-8"
    )
    return rows


def resolve_variants(names) -> list[str]:
    """Expand variant sets, keeping first-seen order.

    Raises:
        UnknownAblation: a name is neither a variant nor a set
    """
    variants = []
    for name in names:
        if name in ABLATION_SETS:
            expanded = ABLATION_SETS[name]
        elif name in ABLATION_VARIANTS:
            expanded = [name]
        else:
            known = ", ".join(sorted(ABLATION_VARIANTS) + sorted(ABLATION_SETS))
            raise UnknownAblation(f"Unknown ablation {name!r}; choose from {known}")
        variants.extend(v for v in expanded if v not in variants)
    return variants


def variant_config(config, name: str, seed_offset: int = 0):
    raw = copy.deepcopy(config.raw)
    for section, changes in ABLATION_VARIANTS[name].items():
        raw[section].update(changes)
    raw["agent"]["seed"] += seed_offset
    return resolve_config(raw)


def run_ablate(config, out_dir):
    """
    Train each ablation variant under its own directory and tabulate
    final scheduled lengths in ablation.csv.
    """
    section = config["ablate"]
    variants = resolve_variants(section["variants"])
    out_dir = Path(out_dir)
    table = []
    for name in variants:
        logs = []
        for i in range(section["seeds"]):
            variant = variant_config(config, name, seed_offset=i)
            run_dir = out_dir / name / f"seed_{i}" if section["seeds"] > 1 else out_dir / name
            agent = build_agent(variant)
            history = train_agent(agent, variant, run_dir, variant.agent.epochs)
            logs.append(run_dir / "training_log.csv")

            tail = history[-FINAL_WINDOW:]
            candidate_filter = agent.candidate_filter
            n_bf, n_is = (
                resolve_split(candidate_filter.k, candidate_filter.split)
                if candidate_filter.enabled
                else (None, None)
            )
            table.append(
                {
                    "variant": name,
                    "seed": variant.agent.seed,
                    "encoding": agent.config.encoding.value,
                    "input_width": agent.encoder.width,
                    "filter_enabled": candidate_filter.enabled,
                    "k": candidate_filter.k if candidate_filter.enabled else None,
                    "n_bf": n_bf,
                    "n_is": n_is,
                    "epochs": len(history),
                    "final_length": float(np.mean([s.scheduled_length for s in tail])),
                    "mean_candidates": float(np.mean([s.mean_candidates for s in tail])),
                }
            )
        if len(logs) > 1:
            write_learning_curve(logs, out_dir / name / "learning_curve.csv")
        logger.info(f"Ablation {name}: final length {table[-1]['final_length']:.1f}")

    frame = pd.DataFrame(table, columns=list(ABLATION_COLUMNS))
    frame = frame.astype({"k": "Int64", "n_bf": "Int64", "n_is": "Int64"})
    frame.to_csv(
        out_dir / "ablation.csv", index=False, float_format="%.10g"
    )
    return []


RUNNERS = {
    "gen_trace": run_gen_trace,
    "train": run_train,
    "eval": run_eval,
    "compare": run_compare,
    "ablate": run_ablate,
}
