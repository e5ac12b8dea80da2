"""
End-to-end steps that tie the modules together for the CLI.
"""

from __future__ import annotations

# Standard Library
from typing import Sequence

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import evalkit
from tdnn_supernet import predictor
from tdnn_supernet import supernet
from tdnn_supernet.config import RunConfig
from tdnn_supernet.dataset import SyntheticDataset
from tdnn_supernet.log_utils import append_jsonl, format_fields, print_status
from tdnn_supernet.space import SamplerState, SpaceConfig, SubnetSpec, enumerate_grid, named_subnets, sample_subnet
from tdnn_supernet.supernet import RecalibrationReport, SupernetWeights

#============================================


STAGE_BOUND_NAMES = {
	"largest": "a_max",
	"kernel": "a_Kmin",
	"depth": "a_Dmin",
	"width1": "a_C1min",
	"width2": "a_C2min",
}


#============================================
def evaluate_subnet(
	weights: SupernetWeights,
	spec: SubnetSpec,
	data: SyntheticDataset,
	run: RunConfig,
	log_path: str | None = None,
) -> tuple[evalkit.EvalResult, RecalibrationReport]:
	"""
	Recalibrate BN for the spec, export it, and score the trial list.
	"""
	segment_frames = min(run.train.segment_frames, data.config.frames)
	stream = data.recalibration_stream(segment_frames, seed=run.seed)
	n_utterances = min(run.search.recal_utterances, data.train_features.shape[0])
	report = supernet.recalibrate_bn(weights, spec, stream, n_utterances, run.search.recal_batch_size)
	append_jsonl(log_path, {
		"event": "bn_recalibration",
		"spec": spec.to_dict(),
		"n_utterances": report.n_utterances,
		"n_batches": report.n_batches,
		"layers": report.layers,
		"finite": report.finite,
	})
	exported = supernet.export_subnet(weights, spec)
	cohort = data.cohort(run.eval.cohort_size, seed=run.seed) if run.eval.snorm else None
	result = evalkit.evaluate_trials(data.trials, data.eval_utterances(), exported.forward, run.eval, cohort)
	return result, report


#============================================
def collect_records(
	weights: SupernetWeights,
	data: SyntheticDataset,
	run: RunConfig,
	space: SpaceConfig,
	count: int,
	log_path: str | None = None,
	quiet: bool = True,
) -> list[predictor.AccuracyRecord]:
	"""
	Sample specs, evaluate each after BN recalibration, and build records.
	"""
	state = SamplerState(rng_seed=run.seed)
	records = []
	for index in range(count):
		spec = sample_subnet(space, state)
		result, _ = evaluate_subnet(weights, spec, data, run, log_path)
		records.append(predictor.make_record(spec, space, result.eer, result.min_dcf))
		print_status("eval", format_fields(record=index, eer=result.eer, dcf=result.min_dcf), quiet=quiet)
	return records


#============================================
def actual_accuracy_fn(
	weights: SupernetWeights,
	data: SyntheticDataset,
	run: RunConfig,
	metric: str = "eer",
	log_path: str | None = None,
):
	"""
	Accuracy function that evaluates each spec on the supernet.
	"""
	def evaluate(spec: SubnetSpec) -> float:
		result, _ = evaluate_subnet(weights, spec, data, run, log_path)
		return result.eer if metric == "eer" else result.min_dcf

	return evaluate


#============================================
def predicted_accuracy_fn(model: predictor.PredictorModel):
	def evaluate(spec: SubnetSpec) -> float:
		return predictor.predict(model, spec)

	return evaluate


#============================================
def profile_stages(
	checkpoint_paths: Sequence[str],
	data: SyntheticDataset,
	run: RunConfig,
	quiet: bool = True,
) -> list[dict]:
	"""
	Score a_max and each stage's lower-bound subnet at every stage checkpoint.
	"""
	config = run.supernet
	named = named_subnets(config.max_front_width, config.max_back_width, config.width_quantum)
	rows = []
	for path in checkpoint_paths:
		weights, loaded = checkpoint.load_supernet(path)
		stage = loaded.stage or "largest"
		names = ["a_max"]
		bound = STAGE_BOUND_NAMES.get(stage)
		if bound and bound not in names:
			names.append(bound)
		for name in names:
			result, _ = evaluate_subnet(weights, named[name], data, run)
			rows.append({"stage": stage, "subnet": name, "spec": named[name].to_dict(), **result.to_dict()})
			print_status("eval", format_fields(stage=stage, subnet=name, eer=result.eer), quiet=quiet)
	return rows


#============================================
def sensitivity(
	weights: SupernetWeights,
	data: SyntheticDataset,
	run: RunConfig,
	granularity_c: int | None = None,
	exclude_kernel_one: bool = False,
	quiet: bool = True,
) -> dict:
	"""
	Rank correlation of grid dimensions against EER and DCF.
	"""
	grid = enumerate_grid(run.search_space("grid", granularity_c))
	eers = []
	dcfs = []
	for spec in grid:
		result, _ = evaluate_subnet(weights, spec, data, run)
		eers.append(result.eer)
		dcfs.append(result.min_dcf)
	print_status("eval", f"scored {len(grid)} grid subnets", quiet=quiet)
	return {
		"n_subnets": len(grid),
		"exclude_kernel_one": exclude_kernel_one,
		"correlations": evalkit.dimension_correlations(grid, eers, dcfs, exclude_kernel_one),
	}
