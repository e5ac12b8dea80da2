#!/usr/bin/env python3
"""
Command-line front end for the dynamic TDNN supernet toolkit.

Every subcommand prints one JSON document on stdout (or a table with
--human). Module rejections print a JSON error object and exit 2.
"""

from __future__ import annotations

# Standard Library
import argparse
import json
import os
import sys

# PIP3 modules
import numpy
import rich.console
import rich.table

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import costmodel
from tdnn_supernet import dataset
from tdnn_supernet import pipeline
from tdnn_supernet import predictor
from tdnn_supernet import searcher
from tdnn_supernet import space
from tdnn_supernet import supernet
from tdnn_supernet import trainer
from tdnn_supernet.config import RunConfig, load_run_config
from tdnn_supernet.errors import ConfigError, SupernetError
from tdnn_supernet.evalkit import write_scores, write_trials

#============================================


REPO_ROOT = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(REPO_ROOT, "config", "toy.json")


#============================================
def _add_common(parser: argparse.ArgumentParser) -> None:
	parser.add_argument(
		"-c",
		"--config",
		dest="config",
		type=str,
		default=DEFAULT_CONFIG,
		help="Run config JSON (default: config/toy.json).",
	)
	parser.add_argument("--seed", dest="seed", type=int, default=None, help="Override every seed in the config.")
	parser.add_argument("--frames", dest="frames", type=int, default=None, help="Frames per utterance for cost counting.")
	parser.add_argument("-o", "--out", dest="out", type=str, default="", help="Output path for the command's artifact.")
	parser.add_argument("--human", dest="human", action="store_true", help="Print a table instead of JSON.")
	parser.add_argument("-q", "--quiet", dest="quiet", action="store_true", help="Suppress status lines on stderr.")


#============================================
def _add_spec(parser: argparse.ArgumentParser) -> None:
	group = parser.add_mutually_exclusive_group(required=True)
	group.add_argument("--spec", dest="spec", type=str, help="Subnet spec JSON file.")
	group.add_argument("--named", dest="named", type=str, help="Named subnet, e.g. a_max or Base.")


#============================================
def _add_space(parser: argparse.ArgumentParser) -> None:
	parser.add_argument("--stage", dest="stage", type=str, choices=space.STAGES, default=None, help="Training-stage space.")
	parser.add_argument("--space", dest="space", type=str, choices=("coarse", "fine", "grid"), default=None, help="Search space kind.")
	parser.add_argument("--granularity", dest="granularity", type=int, default=None, help="Width step c for fine and grid spaces.")


#============================================
def _add_budget(parser: argparse.ArgumentParser) -> None:
	parser.add_argument("--budget-macs", dest="budget_macs", type=float, default=None, help="MACs budget.")
	parser.add_argument("--budget-params", dest="budget_params", type=float, default=None, help="Parameter budget.")
	parser.add_argument("--budget-latency", dest="budget_latency", type=float, default=None, help="Latency budget in ms.")
	parser.add_argument("--table", dest="table", type=str, default="", help="Latency table JSON for latency budgets.")


#============================================
def _add_accuracy_source(parser: argparse.ArgumentParser) -> None:
	parser.add_argument("--predictor", dest="predictor", type=str, default="", help="Predictor checkpoint (predicted mode).")
	parser.add_argument("--checkpoint", dest="checkpoint", type=str, default="", help="Supernet checkpoint (actual mode).")
	parser.add_argument("--data", dest="data", type=str, default="", help="Dataset checkpoint (actual mode).")
	parser.add_argument("--metric", dest="metric", type=str, choices=("eer", "dcf"), default="eer", help="Metric to minimize.")
	parser.add_argument("--log", dest="log", type=str, default="", help="JSON-lines log path.")


#============================================
def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
	"""
	Parse command-line arguments.

	Returns:
		Namespace: Parsed CLI arguments.
	"""
	parser = argparse.ArgumentParser(description="Dynamic TDNN supernet: train, cost, predict, and search subnets.")
	commands = parser.add_subparsers(dest="command", required=True)

	generate = commands.add_parser("generate", help="Generate the synthetic speaker dataset.")
	_add_common(generate)
	generate.add_argument("--trials-out", dest="trials_out", type=str, default="", help="Also write the trial list as text.")

	space_parser = commands.add_parser("space", help="Search-space sizes and samples.")
	space_commands = space_parser.add_subparsers(dest="action", required=True)
	for name in ("size", "sample", "grid", "named"):
		sub = space_commands.add_parser(name)
		_add_common(sub)
		_add_space(sub)
		sub.add_argument("--count", dest="count", type=int, default=5, help="Number of samples.")

	cost_parser = commands.add_parser("cost", help="MACs, parameters, and latency.")
	cost_commands = cost_parser.add_subparsers(dest="action", required=True)
	for name in ("macs", "params", "report", "estimate"):
		sub = cost_commands.add_parser(name)
		_add_common(sub)
		_add_spec(sub)
		sub.add_argument("--table", dest="table", type=str, default="", help="Latency table JSON.")
	latency = cost_commands.add_parser("latency-table")
	_add_common(latency)
	_add_space(latency)
	latency.add_argument("--repeats", dest="repeats", type=int, default=5, help="Timed runs per key.")
	latency.add_argument("--warmup", dest="warmup", type=int, default=1, help="Discarded runs per key.")

	train_parser = commands.add_parser("train", help="Supernet training.")
	train_commands = train_parser.add_subparsers(dest="action", required=True)
	progressive = train_commands.add_parser("progressive")
	_add_common(progressive)
	progressive.add_argument("--data", dest="data", type=str, required=True, help="Dataset checkpoint.")
	progressive.add_argument("--stage", dest="stage", type=str, choices=space.STAGES, default=None, help="Stage to start from.")
	progressive.add_argument("--resume", dest="resume", type=str, default="", help="Supernet checkpoint to continue from.")
	progressive.add_argument("--log", dest="log", type=str, default="", help="JSON-lines training log.")

	collect = commands.add_parser("collect-records", help="Evaluate sampled subnets into accuracy records.")
	_add_common(collect)
	_add_space(collect)
	collect.add_argument("--checkpoint", dest="checkpoint", type=str, required=True, help="Supernet checkpoint.")
	collect.add_argument("--data", dest="data", type=str, required=True, help="Dataset checkpoint.")
	collect.add_argument("--count", dest="count", type=int, default=None, help="Number of records.")
	collect.add_argument("--log", dest="log", type=str, default="", help="JSON-lines recalibration log.")

	predictor_parser = commands.add_parser("predictor", help="Accuracy predictor.")
	predictor_commands = predictor_parser.add_subparsers(dest="action", required=True)
	predictor_train = predictor_commands.add_parser("train")
	_add_common(predictor_train)
	_add_space(predictor_train)
	predictor_train.add_argument("--records", dest="records", type=str, required=True, help="Records JSON-lines file.")
	predictor_train.add_argument("--metric", dest="metric", type=str, choices=("eer", "dcf"), default=None, help="Target metric.")
	predictor_predict = predictor_commands.add_parser("predict")
	_add_common(predictor_predict)
	_add_spec(predictor_predict)
	predictor_predict.add_argument("--model", dest="model", type=str, required=True, help="Predictor checkpoint.")

	search_parser = commands.add_parser("search", help="Constrained architecture search.")
	search_commands = search_parser.add_subparsers(dest="action", required=True)
	for name in ("random", "grid", "mpea", "sweep"):
		sub = search_commands.add_parser(name)
		_add_common(sub)
		_add_space(sub)
		_add_budget(sub)
		_add_accuracy_source(sub)
		sub.add_argument("--samples", dest="samples", type=int, default=None, help="Random-search sample count.")
	sweep = search_commands.choices["sweep"]
	sweep.add_argument("--method", dest="method", type=str, choices=("random", "grid", "mpea"), default="mpea", help="Search method.")
	sweep.add_argument("--cost-metric", dest="cost_metric", type=str, choices=searcher.COST_METRICS, default="macs", help="Budgeted metric.")
	sweep.add_argument("--budgets", dest="budgets", type=str, required=True, help="Comma-separated budgets.")

	export = commands.add_parser("export", help="Export a standalone subnet.")
	_add_common(export)
	_add_spec(export)
	export.add_argument("--checkpoint", dest="checkpoint", type=str, required=True, help="Supernet checkpoint.")
	export.add_argument("--data", dest="data", type=str, default="", help="Dataset for BN recalibration before export.")

	eval_parser = commands.add_parser("eval", help="Verification scoring.")
	eval_commands = eval_parser.add_subparsers(dest="action", required=True)
	trials = eval_commands.add_parser("trials")
	_add_common(trials)
	_add_spec(trials)
	trials.add_argument("--checkpoint", dest="checkpoint", type=str, required=True, help="Supernet checkpoint.")
	trials.add_argument("--data", dest="data", type=str, required=True, help="Dataset checkpoint.")
	trials.add_argument("--snorm", dest="snorm", action="store_true", help="Apply top-k adaptive s-norm.")
	trials.add_argument("--whole-utterance", dest="whole_utterance", action="store_true", help="Score whole utterances.")
	trials.add_argument("--log", dest="log", type=str, default="", help="JSON-lines recalibration log.")
	profile = eval_commands.add_parser("profile")
	_add_common(profile)
	profile.add_argument("--checkpoints", dest="checkpoints", type=str, nargs="+", required=True, help="Stage checkpoints.")
	profile.add_argument("--data", dest="data", type=str, required=True, help="Dataset checkpoint.")

	analyze_parser = commands.add_parser("analyze", help="Sensitivity analysis.")
	analyze_commands = analyze_parser.add_subparsers(dest="action", required=True)
	sensitivity = analyze_commands.add_parser("sensitivity")
	_add_common(sensitivity)
	sensitivity.add_argument("--checkpoint", dest="checkpoint", type=str, required=True, help="Supernet checkpoint.")
	sensitivity.add_argument("--data", dest="data", type=str, required=True, help="Dataset checkpoint.")
	sensitivity.add_argument("--granularity", dest="granularity", type=int, default=None, help="Grid width step c.")
	sensitivity.add_argument("--exclude-k1", dest="exclude_k1", action="store_true", help="Drop K=1 subnets.")

	args = parser.parse_args(argv)
	return args


#============================================
def _jsonable(value):
	if isinstance(value, dict):
		return {str(key): _jsonable(item) for key, item in value.items()}
	if isinstance(value, (list, tuple)):
		return [_jsonable(item) for item in value]
	if isinstance(value, space.SubnetSpec):
		return value.to_dict()
	if isinstance(value, numpy.ndarray):
		return _jsonable(value.tolist())
	if isinstance(value, numpy.integer):
		return int(value)
	if isinstance(value, (float, numpy.floating)):
		number = float(value)
		return number if numpy.isfinite(number) else None
	return value


#============================================
def _emit(payload: dict, human: bool) -> None:
	payload = _jsonable(payload)
	if not human:
		sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
		return
	table = rich.table.Table(show_header=True, header_style="bold")
	table.add_column("key")
	table.add_column("value")
	for key in sorted(payload):
		value = payload[key]
		text = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
		table.add_row(str(key), text)
	rich.console.Console().print(table)


#============================================
def _write_json(path: str, payload: dict) -> None:
	if not path:
		return
	folder = os.path.dirname(path)
	if folder:
		os.makedirs(folder, exist_ok=True)
	with open(path, "w", encoding="utf-8") as handle:
		json.dump(_jsonable(payload), handle, indent=2, sort_keys=True)
		handle.write("\n")


#============================================
def _run_config(args: argparse.Namespace) -> RunConfig:
	return load_run_config(args.config).with_overrides(seed=args.seed, frames=args.frames)


#============================================
def _resolve_spec(args: argparse.Namespace, run: RunConfig) -> space.SubnetSpec:
	if getattr(args, "named", None):
		config = run.supernet
		named = space.named_subnets(config.max_front_width, config.max_back_width, config.width_quantum)
		if args.named not in named:
			raise ConfigError(f"unknown named subnet '{args.named}', expected one of {', '.join(sorted(named))}")
		return named[args.named]
	with open(args.spec, "r", encoding="utf-8") as handle:
		return space.SubnetSpec.from_dict(json.load(handle))


#============================================
def _resolve_space(args: argparse.Namespace, run: RunConfig) -> space.SpaceConfig:
	config = run.supernet
	if getattr(args, "stage", None):
		return space.training_space(args.stage, config.max_front_width, config.max_back_width, config.width_quantum)
	return run.search_space(getattr(args, "space", None), getattr(args, "granularity", None))


#============================================
def _constraint(args: argparse.Namespace, run: RunConfig) -> searcher.Constraint:
	budgets = [
		("macs", args.budget_macs),
		("params", args.budget_params),
		("latency_ms", args.budget_latency),
	]
	chosen = [(metric, value) for metric, value in budgets if value is not None]
	if len(chosen) != 1:
		raise ConfigError("give exactly one of --budget-macs, --budget-params, --budget-latency")
	metric, value = chosen[0]
	return searcher.Constraint(metric=metric, budget=value, frames=run.frames)


#============================================
def _latency_table(args: argparse.Namespace) -> costmodel.LatencyTable | None:
	return costmodel.LatencyTable.load(args.table) if getattr(args, "table", "") else None


#============================================
def _accuracy_fn(args: argparse.Namespace, run: RunConfig):
	if args.predictor:
		model = predictor.load_predictor(args.predictor)
		return pipeline.predicted_accuracy_fn(model), "predicted"
	if not (args.checkpoint and args.data):
		raise ConfigError("search needs --predictor, or --checkpoint with --data")
	weights, _ = checkpoint.load_supernet(args.checkpoint)
	data = dataset.load_dataset(args.data)
	return pipeline.actual_accuracy_fn(weights, data, run, args.metric, args.log or None), "actual"


#============================================
def _cmd_generate(args: argparse.Namespace, run: RunConfig) -> dict:
	data = dataset.generate_dataset(run.dataset)
	out = args.out or "dataset.ckpt"
	dataset.save_dataset(out, data)
	if args.trials_out:
		write_trials(args.trials_out, data.trials)
	labels = data.trials.labels
	return {
		"path": out,
		"n_train": int(data.train_features.shape[0]),
		"n_eval": int(data.eval_features.shape[0]),
		"n_trials": len(data.trials),
		"n_target": int(labels.sum()),
	}


#============================================
def _cmd_space(args: argparse.Namespace, run: RunConfig) -> dict:
	if args.action == "named":
		config = run.supernet
		named = space.named_subnets(config.max_front_width, config.max_back_width, config.width_quantum)
		return {name: spec.to_dict() for name, spec in named.items()}
	config = _resolve_space(args, run)
	if args.action == "size":
		return {
			"space": config.to_dict(),
			"size": space.space_size(config),
			"degrees_of_freedom": space.degrees_of_freedom(config),
			"onehot_length": space.onehot_length(config),
		}
	if args.action == "sample":
		state = space.SamplerState(rng_seed=run.seed)
		return {"specs": [spec.to_dict() for spec in space.sample_many(config, state, args.count)]}
	grid = space.enumerate_grid(run.search_space("grid", args.granularity))
	return {"count": len(grid), "specs": [spec.to_dict() for spec in grid]}


#============================================
def _cmd_cost(args: argparse.Namespace, run: RunConfig) -> dict:
	if args.action == "latency-table":
		config = _resolve_space(args, run)
		runner = costmodel.LocalCellRunner(supernet.build(run.supernet), seed=run.seed)
		table = costmodel.build_latency_table(config, run.supernet, runner, args.repeats, args.warmup, run.frames, quiet=args.quiet)
		out = args.out or "latency_table.json"
		table.save(out)
		return {"path": out, "entries": len(table.entries), "errors": len(table.errors), "low_confidence": table.low_confidence}
	spec = _resolve_spec(args, run)
	if args.action == "macs":
		return {"spec": spec, "frames": run.frames, "macs": costmodel.count_macs(spec, run.supernet, run.frames)}
	if args.action == "params":
		return {"spec": spec, "params": costmodel.count_params(spec, run.supernet)}
	table = _latency_table(args)
	if args.action == "estimate":
		if table is None:
			raise ConfigError("cost estimate needs --table")
		return {"spec": spec, "latency_ms": costmodel.estimate_latency(spec, table, run.supernet)}
	report = costmodel.cost_report(spec, run.supernet, run.frames, table)
	return {"spec": spec, **report.to_dict()}


#============================================
def _cmd_train(args: argparse.Namespace, run: RunConfig) -> dict:
	data = dataset.load_dataset(args.data)
	if args.resume:
		weights, _ = checkpoint.load_supernet(args.resume)
	else:
		weights = supernet.build(run.supernet)
	config = run.supernet
	schedule = trainer.default_schedule(config.max_front_width, config.max_back_width, config.width_quantum)
	summary = trainer.progressive_train(
		weights,
		schedule,
		run.train,
		data,
		args.out or "checkpoints",
		start_stage=args.stage,
		log_path=args.log or None,
		quiet=args.quiet,
	)
	return summary.to_dict()


#============================================
def _cmd_collect(args: argparse.Namespace, run: RunConfig) -> dict:
	weights, _ = checkpoint.load_supernet(args.checkpoint)
	data = dataset.load_dataset(args.data)
	config = _resolve_space(args, run)
	count = args.count or run.search.records
	records = pipeline.collect_records(weights, data, run, config, count, args.log or None, quiet=args.quiet)
	out = args.out or "records.jsonl"
	predictor.write_records(out, records)
	return {"path": out, "records": len(records), "space": config.to_dict()}


#============================================
def _cmd_predictor(args: argparse.Namespace, run: RunConfig) -> dict:
	if args.action == "predict":
		model = predictor.load_predictor(args.model)
		spec = _resolve_spec(args, run)
		return {"spec": spec, "metric": model.metric, "prediction": predictor.predict(model, spec)}
	config = _resolve_space(args, run)
	records = predictor.read_records(args.records, config)
	settings = run.predictor
	if args.metric:
		settings = predictor.PredictorConfig.from_dict(dict(settings.to_dict(), metric=args.metric))
	model = predictor.train_predictor(records, config, settings, quiet=args.quiet)
	out = args.out or f"predictor_{model.metric}.ckpt"
	predictor.save_predictor(out, model)
	final = model.history[-1]
	return {"path": out, "metric": model.metric, "train_mae": final["train_mae"], "val_mae": final["val_mae"]}


#============================================
def _search_once(args: argparse.Namespace, run: RunConfig, method: str, constraint: searcher.Constraint, accuracy_fn) -> searcher.SearchResult:
	cost_fn = searcher.make_cost_fn(constraint, run.supernet, _latency_table(args))
	samples = args.samples or run.search.random_samples
	if method == "grid":
		grid = space.enumerate_grid(run.search_space("grid", args.granularity))
		return searcher.grid_search(grid, accuracy_fn, constraint, cost_fn)
	config = _resolve_space(args, run)
	if method == "random":
		return searcher.random_search(config, samples, accuracy_fn, constraint, cost_fn, seed=run.seed)
	return searcher.mpea(config, accuracy_fn, constraint, cost_fn, run.search.evolution, log_path=args.log or None, quiet=args.quiet)


#============================================
def _cmd_search(args: argparse.Namespace, run: RunConfig) -> dict:
	accuracy_fn, mode = _accuracy_fn(args, run)
	if args.action == "sweep":
		budgets = [float(value) for value in args.budgets.split(",") if value.strip()]
		curve = searcher.budget_sweep(
			lambda constraint: _search_once(args, run, args.method, constraint, accuracy_fn),
			args.cost_metric,
			budgets,
			run.frames,
		)
		payload = {"method": args.method, "mode": mode, "metric": args.cost_metric, "curve": curve}
		_write_json(args.out, payload)
		return payload
	constraint = _constraint(args, run)
	result = _search_once(args, run, args.action, constraint, accuracy_fn)
	payload = dict(result.to_dict(), mode=mode)
	if args.action == "random":
		payload["distribution"] = {
			"cost": searcher.distribution_summary([sample["cost"] for sample in result.samples]),
			"accuracy": searcher.distribution_summary([sample["accuracy"] for sample in result.samples]),
		}
	_write_json(args.out, payload)
	return payload


#============================================
def _cmd_export(args: argparse.Namespace, run: RunConfig) -> dict:
	weights, _ = checkpoint.load_supernet(args.checkpoint)
	spec = _resolve_spec(args, run)
	if args.data:
		data = dataset.load_dataset(args.data)
		stream = data.recalibration_stream(min(run.train.segment_frames, data.config.frames), seed=run.seed)
		count = min(run.search.recal_utterances, data.train_features.shape[0])
		supernet.recalibrate_bn(weights, spec, stream, count, run.search.recal_batch_size)
	exported = supernet.export_subnet(weights, spec)
	out = args.out or "subnet.ckpt"
	checkpoint.save_checkpoint(out, exported.metadata(), exported.to_arrays())
	return {"path": out, "spec": spec, "params": exported.param_count()}


#============================================
def _cmd_eval(args: argparse.Namespace, run: RunConfig) -> dict:
	data = dataset.load_dataset(args.data)
	if args.action == "profile":
		rows = pipeline.profile_stages(args.checkpoints, data, run, quiet=args.quiet)
		_write_json(args.out, {"rows": rows})
		return {"rows": rows}
	weights, _ = checkpoint.load_supernet(args.checkpoint)
	spec = _resolve_spec(args, run)
	if args.snorm or args.whole_utterance:
		settings = dict(run.eval.to_dict(), snorm=args.snorm or run.eval.snorm)
		settings["whole_utterance"] = args.whole_utterance or run.eval.whole_utterance
		data_dict = run.to_dict()
		data_dict["eval"] = settings
		run = RunConfig.from_dict(data_dict)
	result, report = pipeline.evaluate_subnet(weights, spec, data, run, args.log or None)
	if args.out:
		write_scores(args.out, data.trials, result.scores)
	return {"spec": spec, **result.to_dict(), "recalibration": {"n_utterances": report.n_utterances, "finite": report.finite}}


#============================================
def _cmd_analyze(args: argparse.Namespace, run: RunConfig) -> dict:
	weights, _ = checkpoint.load_supernet(args.checkpoint)
	data = dataset.load_dataset(args.data)
	payload = pipeline.sensitivity(weights, data, run, args.granularity, args.exclude_k1, quiet=args.quiet)
	_write_json(args.out, payload)
	return payload


#============================================
COMMANDS = {
	"generate": _cmd_generate,
	"space": _cmd_space,
	"cost": _cmd_cost,
	"train": _cmd_train,
	"collect-records": _cmd_collect,
	"predictor": _cmd_predictor,
	"search": _cmd_search,
	"export": _cmd_export,
	"eval": _cmd_eval,
	"analyze": _cmd_analyze,
}


#============================================
def main(argv: list[str] | None = None) -> int:
	args = parse_args(argv)
	try:
		run = _run_config(args)
		payload = COMMANDS[args.command](args, run)
	except (SupernetError, ValueError, OSError) as exc:
		error = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
		sys.stdout.write(json.dumps(error, sort_keys=True) + "\n")
		return 2
	_emit(payload, args.human)
	return 0


#============================================
if __name__ == "__main__":
	raise SystemExit(main())
