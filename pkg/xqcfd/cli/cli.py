# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Command line entry point: demo generation, pretraining, training grids, aggregation and plots."""

import argparse
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from rich.table import Table

from xqcfd import hooks
from xqcfd.agent.agent import XqcfdAgent, run, write_metrics
from xqcfd.cli.plot import plot_aggregate
from xqcfd.config.agent_config import AgentConfig
from xqcfd.config.experiment_config import ExperimentConfig, load_config
from xqcfd.envs.envs import expert_success_rate, generate_demos, make_env, make_expert
from xqcfd.evalstats.evalstats import AGGREGATE_FILE, aggregate_runs, read_aggregate
from xqcfd.exceptions import ConfigError, EmptyDatasetError, XqcfdError
from xqcfd.replay.replay import DemoDataset
from xqcfd.utils import configure_logging, console, env_int, get_logger, log_error, msgprint, resolve, throw

logger = get_logger(__name__)

EXPERT_CHECK_EPISODES = 100


@dataclass(frozen=True)
class RunSpec:
	"""One cell of the experiment grid."""

	label: str
	seed: int
	agent: AgentConfig
	demo_count: int | None = None

	def metrics_path(self, cfg: ExperimentConfig) -> Path:
		return cfg.out_dir / f"{cfg.env}_{self.label}_{self.seed}.csv"


def build_parser() -> argparse.ArgumentParser:
	parser = argparse.ArgumentParser(prog="xqcfd", description=hooks.app_description)
	subparsers = parser.add_subparsers(dest="command", required=True)
	for command in hooks.commands:
		sub = subparsers.add_parser(command)
		sub.add_argument("--config", help="flat key = value experiment file")
		sub.add_argument("--seed", type=int)
		sub.add_argument("--out", help="output directory (or file for gen-demos and plot)")
		sub.add_argument("--env")
		sub.add_argument("--variant")
		sub.add_argument("--steps", type=int)
		if command == "gen-demos":
			sub.add_argument("--n", type=int, help="number of successful trajectories")
		if command == "plot":
			sub.add_argument("run_dir", nargs="?", help="directory holding aggregate.csv")
	return parser


def experiment_from_args(args) -> ExperimentConfig:
	"""Config file (or defaults) with the command line flags applied on top."""
	cfg = load_config(args.config) if args.config else ExperimentConfig()
	changes = {}
	if args.env:
		changes["env"] = args.env
	if args.variant:
		changes["variants"] = [args.variant]
	if args.seed is not None:
		changes["seeds"] = [args.seed]
	if args.out and args.command not in ("gen-demos", "plot"):
		changes["out"] = args.out
	if args.steps is not None:
		changes["agent"] = cfg.agent.with_overrides(total_steps=args.steps)
	return replace(cfg, **changes) if changes else cfg


def needs_demos(agent_cfg) -> bool:
	resolved = agent_cfg.resolved()
	return bool(resolved.pretrain_bc or resolved.use_offline_data)


def load_demos(cfg: ExperimentConfig) -> DemoDataset:
	path = cfg.demo_path()
	if not path.exists():
		throw("Demo file {0} not found; run `xqcfd gen-demos` first".format(path), EmptyDatasetError)
	demos = DemoDataset.load(path)
	if demos.env_id != cfg.env:
		throw("Demo file {0} was recorded on {1}, not {2}".format(path, demos.env_id, cfg.env), ConfigError)
	return demos


def build_grid(cfg: ExperimentConfig, axis: str = None) -> list[RunSpec]:
	"""Runs of the variant x seed grid, optionally crossed with a temperature or demo-count axis."""
	if axis == "temperature" and not cfg.temperatures:
		throw("sweep-temperature needs `temperature` with several values", ConfigError)
	if axis == "demos" and not cfg.demo_counts:
		throw("sweep-demos needs `demo_counts`", ConfigError)

	grid = []
	for variant in cfg.variants:
		for seed in cfg.seeds:
			agent = cfg.agent.with_overrides(variant=variant, seed=seed)
			if axis == "temperature":
				grid.extend(
					RunSpec(f"{variant}@a{alpha!r}", seed, agent.with_overrides(temperature=alpha)) for alpha in cfg.temperatures
				)
			elif axis == "demos":
				grid.extend(RunSpec(f"{variant}@n{count}", seed, agent, demo_count=count) for count in cfg.demo_counts)
			else:
				grid.append(RunSpec(variant, seed, agent))
	return grid


def worker_count(cfg: ExperimentConfig) -> int:
	cap = env_int("XQCFD_THREADS")
	threads = cfg.threads or cap or 1
	if cap:
		threads = min(threads, cap)
	return max(threads, 1)


def run_grid(cfg: ExperimentConfig, grid: list[RunSpec]) -> int:
	"""Run every missing cell of `grid`; the exit code is 0 iff all of them completed."""
	demos = None
	if any(needs_demos(spec.agent) for spec in grid):
		demos = load_demos(cfg)
	cfg.out_dir.mkdir(parents=True, exist_ok=True)
	write_lock = threading.Lock()

	def _run(spec: RunSpec) -> tuple[RunSpec, str, float | None]:
		path = spec.metrics_path(cfg)
		if path.exists():
			logger.info("Skipping %s, metrics present", path.name)
			return spec, "skipped", None
		try:
			run_demos = None
			if needs_demos(spec.agent):
				run_demos = demos.subset(spec.demo_count) if spec.demo_count is not None else demos
			rows = run(spec.agent, make_env(cfg.env), run_demos, label=spec.label)
			with write_lock:
				write_metrics(rows, path)
			return spec, "done", rows[-1]["success_rate"]
		except Exception:
			log_error("Run {0} seed {1} failed".format(spec.label, spec.seed), logger)
			return spec, "failed", None

	threads = worker_count(cfg)
	logger.info("Running %s runs on %s worker threads", len(grid), threads)
	if threads > 1:
		with ThreadPoolExecutor(max_workers=threads) as pool:
			results = list(pool.map(_run, grid))
	else:
		results = [_run(spec) for spec in grid]

	table = Table(title=f"{cfg.env} runs")
	for column in ("run", "seed", "status", "final success"):
		table.add_column(column)
	for spec, status, success in results:
		table.add_row(spec.label, str(spec.seed), status, "" if success is None else "{0:.3f}".format(success))
	console.print(table)

	failed = sum(status == "failed" for _, status, _ in results)
	if failed:
		msgprint("{0} of {1} runs failed".format(failed, len(results)), title="Training", indicator="red")
		return 1
	return 0


def cmd_gen_demos(args) -> int:
	cfg = experiment_from_args(args)
	n = args.n if args.n is not None else cfg.n_demos
	seed = args.seed if args.seed is not None else cfg.seeds[0]
	demo_stream, check_stream = np.random.SeedSequence(seed).spawn(2)
	env, expert = make_env(cfg.env), make_expert(cfg.env)
	demos = generate_demos(env, expert, n, np.random.default_rng(demo_stream))
	path = demos.save(Path(args.out) if args.out else cfg.demo_path())
	rate = expert_success_rate(env, expert, EXPERT_CHECK_EPISODES, np.random.default_rng(check_stream))
	msgprint(
		"{0} trajectories ({1} transitions) written to {2}\nexpert success rate {3:.2f}".format(n, len(demos), path, rate),
		title="Demonstrations",
		indicator="green",
	)
	return 0


def cmd_pretrain(args) -> int:
	cfg = experiment_from_args(args)
	demos = load_demos(cfg)
	for variant in cfg.variants:
		for seed in cfg.seeds:
			agent = XqcfdAgent(cfg.agent.with_overrides(variant=variant, seed=seed), make_env(cfg.env), demos)
			if not agent.cfg.pretrain_bc:
				throw("Variant {0} does not pretrain".format(variant), ConfigError)
			losses = agent.pretrain()
			directory = cfg.out_dir / f"{cfg.env}_{variant}_{seed}_pretrain"
			agent.save_checkpoints(directory)
			msgprint(
				"bc loss {0:.4f}, critic loss {1:.4f}, checkpoints in {2}".format(
					losses["bc_loss"], losses["critic_loss"], directory
				),
				title="Pretraining {0} seed {1}".format(variant, seed),
				indicator="green",
			)
	return 0


def cmd_train(args) -> int:
	cfg = experiment_from_args(args)
	if cfg.temperatures:
		throw("Several temperatures given; use `xqcfd sweep-temperature` to sweep them", ConfigError)
	return run_grid(cfg, build_grid(cfg))


def cmd_sweep_temperature(args) -> int:
	cfg = experiment_from_args(args)
	return run_grid(cfg, build_grid(cfg, axis="temperature"))


def cmd_sweep_demos(args) -> int:
	cfg = experiment_from_args(args)
	return run_grid(cfg, build_grid(cfg, axis="demos"))


def cmd_aggregate(args) -> int:
	cfg = experiment_from_args(args)
	rows = aggregate_runs(cfg.out_dir)
	table = Table(title="IQM success rate")
	for column in ("variant", "step", "iqm", "ci"):
		table.add_column(column)
	for row in rows:
		band = "[{0:.3f}, {1:.3f}]".format(row["ci_lo"], row["ci_hi"])
		table.add_row(row["variant"], str(row["step"]), "{0:.3f}".format(row["iqm"]), band)
	console.print(table)
	return 0


def cmd_plot(args) -> int:
	run_dir = Path(args.run_dir) if args.run_dir else experiment_from_args(args).out_dir
	source = run_dir / AGGREGATE_FILE
	if not source.exists():
		throw("No {0} in {1}; run `xqcfd aggregate` first".format(AGGREGATE_FILE, run_dir), EmptyDatasetError)
	out = plot_aggregate(read_aggregate(source), Path(args.out) if args.out else run_dir / "curves.svg")
	msgprint("Learning curves written to {0}".format(out), indicator="green")
	return 0


def main(argv=None) -> int:
	configure_logging()
	args = build_parser().parse_args(argv)
	try:
		return resolve("commands", args.command)(args)
	except XqcfdError:
		log_error("xqcfd {0} failed".format(args.command), logger)
		return 1


if __name__ == "__main__":
	sys.exit(main())
