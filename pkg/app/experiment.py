"""Experiment orchestration: (seed x sweep value x policy) cells written to CSV."""

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from app.baselines import run_oracle
from app.channel import generate_traces
from app.config import Config
from app.ddpg import DdpgAgent, train_three_threshold
from app.environment import MMWAVE, EpisodeLog, LinkEnvironment
from app.errors import ConfigurationError
from app.hrl import make_agents, train_hrl
from app.rvq import cached_rvq_codebook
from app.scenario import dump_scenario
from app.schemas import MetricsRow, ScenarioConfig

logger = logging.getLogger(__name__)

METRICS_FIELDS = list(MetricsRow.model_fields)
SCATTER_FIELDS = ["seed", "sweep_value", "episode", "decision", "tau_a", "tau_d", "feedback", "action", "band"]


@dataclass
class CellResult:
    seed: int
    sweep_value: float
    rows: List[MetricsRow] = field(default_factory=list)
    summary: List[MetricsRow] = field(default_factory=list)
    scatter: List[dict] = field(default_factory=list)


def apply_sweep(cfg: ScenarioConfig, axis: Optional[str], value: float) -> ScenarioConfig:
    """Copy of cfg with the sweep axis set to value."""
    if axis is None:
        return cfg
    if axis == "power":
        return cfg.model_copy(update={"experiment": cfg.experiment.model_copy(update={"transmit_power_dbm": float(value)})})
    data = cfg.model_dump()
    if axis == "rvq_bits":
        data["mmwave"]["kappa_rvq"] = int(value)
    elif axis == "vehicle_density":
        data["channel"]["blocker_density"] = float(value)
    elif axis == "upper_period":
        data["hrl"]["m_upper"] = int(value)
    else:
        raise ConfigurationError(f"unknown sweep axis {axis!r}", field="experiment.sweep_axis")
    return ScenarioConfig.model_validate(data)


def sweep_points(cfg: ScenarioConfig) -> List[float]:
    exp = cfg.experiment
    if exp.sweep_axis is None:
        return [exp.transmit_power_dbm]
    return [float(v) for v in exp.sweep_values]


def episode_environments(cfg: ScenarioConfig, seed: int):
    """Callable episode -> environment; traces are generated once per episode and shared by policies."""
    cache: Dict[int, object] = {}
    mm = cfg.mmwave
    codebook = cached_rvq_codebook(mm.kappa_rvq, (mm.n_s, mm.n_s), mm.rvq_training, mm.rvq_seed, Config.RVQ_CACHE_DIR)

    def env_for(episode: int) -> LinkEnvironment:
        if episode not in cache:
            cache[episode] = generate_traces(cfg, cfg.channel.seed + seed * 100_003 + episode)
        return LinkEnvironment(cache[episode], cfg, rvq_codebook=codebook)

    return env_for


def _row(log: EpisodeLog, seed: int, episode: int, policy: str, sweep_value: float,
         last: Optional[int] = None) -> MetricsRow:
    return MetricsRow(
        seed=seed, episode=episode, policy=policy, sweep_value=sweep_value,
        mean_reward_bps=log.mean_reward(last), mean_rate_bps=log.mean_rate(last),
        training_fraction=log.training_fraction(last), band_occupancy_mmwave=log.band_occupancy_mmwave(last),
    )


def run_policy(policy: str, cfg: ScenarioConfig, seed: int, env_for,
               checkpoint_dir: Optional[Path] = None) -> List[EpisodeLog]:
    n = cfg.experiment.n_episodes
    if policy == "genie":
        return run_oracle(env_for, n, seed)
    if policy == "greedy":
        return run_oracle(env_for, n, seed, restrict_band=MMWAVE)
    if policy == "three_threshold":
        first = env_for(0)
        agent = DdpgAgent(first.feature_size, 3, cfg.drl, seed)
        logs = train_three_threshold(env_for, cfg, seed, agent=agent)
        if checkpoint_dir is not None:
            agent.save(checkpoint_dir / f"three_threshold_seed{seed}.bbck")
        return logs
    if policy == "hrl":
        first = env_for(0)
        agents = make_agents(first.feature_size, first.m_rf, cfg, seed)
        logs = train_hrl(env_for, cfg, seed, agents=agents)
        if checkpoint_dir is not None:
            agents.save(checkpoint_dir / f"hrl_seed{seed}.bbck")
        return logs
    raise ConfigurationError(f"unknown policy {policy!r}", field="experiment.policies")


def run_cell(cfg: ScenarioConfig, seed: int, sweep_value: float, policies: Sequence[str],
             checkpoint_dir: Optional[str] = None) -> CellResult:
    """Every policy on one (seed, sweep value) cell, over shared per-episode traces."""
    cell_cfg = apply_sweep(cfg, cfg.experiment.sweep_axis, sweep_value)
    env_for = episode_environments(cell_cfg, seed)
    window = cell_cfg.experiment.summary_window
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    result = CellResult(seed, sweep_value)
    for policy in policies:
        start = time.time()
        logs = run_policy(policy, cell_cfg, seed, env_for, ckpt)
        for ep, log in enumerate(logs):
            result.rows.append(_row(log, seed, ep, policy, sweep_value))
        result.summary.append(_row(logs[-1], seed, -1, policy, sweep_value, last=window))
        if policy == "hrl":
            for ep, log in enumerate(logs):
                for decision, tau_a, tau_d, feedback, action, band in log.scatter:
                    result.scatter.append(dict(seed=seed, sweep_value=sweep_value, episode=ep, decision=decision,
                                               tau_a=tau_a, tau_d=tau_d, feedback=feedback, action=action,
                                               band=band))
        logger.info(f"Cell seed={seed} sweep={sweep_value} policy={policy} done in {time.time() - start:.1f}s, "
                    f"last-{window} rate {result.summary[-1].mean_rate_bps:.3e} bps")
    return result


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, fieldnames: List[str], rows: List[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fieldnames})


def _sort_key(row: MetricsRow) -> Tuple:
    return row.seed, row.sweep_value, row.policy, row.episode


def run_experiment(cfg: ScenarioConfig, out_dir: Optional[str] = None,
                   policies: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    """Run every cell and write metrics.csv, summary.csv, scatter.csv and effective_config.yaml.

    Args:
        cfg: Validated scenario
        out_dir: Output directory, defaults to Config.OUT_DIR
        policies: Restrict to these policies, defaults to experiment.policies

    Returns:
        Mapping of output name to written path
    """
    out = Path(out_dir or Config.OUT_DIR)
    os.makedirs(out, exist_ok=True)
    exp = cfg.experiment
    policies = list(policies or exp.policies)
    seeds = [exp.seed + i for i in range(exp.n_seeds)]
    cells = [(seed, value) for seed in seeds for value in sweep_points(cfg)]
    ckpt = str(out) if exp.save_checkpoints else None
    logger.info(f"Experiment: {len(cells)} cells x {len(policies)} policies, {exp.n_episodes} episodes, "
                f"workers={exp.workers}, output {out}")

    started = time.time()
    results: List[CellResult] = []
    if exp.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            futures = [pool.submit(run_cell, cfg, seed, value, policies, ckpt) for seed, value in cells]
            for fut in tqdm(futures, desc="cells", disable=not Config.PROGRESS):
                results.append(fut.result())
    else:
        for seed, value in tqdm(cells, desc="cells", disable=not Config.PROGRESS):
            results.append(run_cell(cfg, seed, value, policies, ckpt))

    rows = sorted((r for res in results for r in res.rows), key=_sort_key)
    summary = sorted((r for res in results for r in res.summary), key=_sort_key)
    scatter = sorted((r for res in results for r in res.scatter),
                     key=lambda r: (r["seed"], r["sweep_value"], r["episode"], r["decision"]))

    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.csv",
             "config": out / "effective_config.yaml"}
    _write_csv(paths["metrics"], METRICS_FIELDS, [r.model_dump() for r in rows])
    _write_csv(paths["summary"], METRICS_FIELDS, [r.model_dump() for r in summary])
    if "hrl" in policies:
        paths["scatter"] = out / "scatter.csv"
        _write_csv(paths["scatter"], SCATTER_FIELDS, scatter)
    paths["config"].write_text(dump_scenario(cfg))
    logger.info(f"Experiment finished in {time.time() - started:.1f}s: {len(rows)} metric rows")
    return paths


def read_metrics(path: Path) -> List[MetricsRow]:
    """Parse and validate a metrics.csv or summary.csv."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_FIELDS:
            raise ConfigurationError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRow.model_validate(row) for row in reader]


def learning_curves(rows: Sequence[MetricsRow]) -> Tuple[List[str], List[Tuple[int, List[float]]]]:
    """Mean reward per (episode, policy), averaged over seeds and sweep values."""
    policies = sorted({r.policy for r in rows})
    sums: Dict[Tuple[int, str], List[float]] = {}
    for r in rows:
        if r.episode >= 0:
            sums.setdefault((r.episode, r.policy), []).append(r.mean_reward_bps)
    episodes = sorted({ep for ep, _ in sums})
    table = []
    for ep in episodes:
        values = [sum(sums[(ep, p)]) / len(sums[(ep, p)]) if (ep, p) in sums else float("nan") for p in policies]
        table.append((ep, values))
    return policies, table


def write_plot_columns(metrics_path: Path, out_path: Path) -> Path:
    """gnuplot-ready columns: episode, then mean reward per policy."""
    policies, table = learning_curves(read_metrics(metrics_path))
    lines = ["# episode " + " ".join(policies)]
    lines.extend(f"{ep} " + " ".join(repr(v) for v in values) for ep, values in table)
    Path(out_path).write_text("\n".join(lines) + "\n")
    return Path(out_path)
