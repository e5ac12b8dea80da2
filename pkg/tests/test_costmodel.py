# PIP3 modules
import pytest

# local repo modules
from tdnn_supernet import costmodel
from tdnn_supernet.errors import CostTableError, ShapeError
from tdnn_supernet.space import SamplerState, SubnetSpec, bounds, coarse_space, named_subnets, sample_many, training_space
from tdnn_supernet.supernet import SupernetConfig

#============================================


class ConstantRunner:
	name = "constant"

	def run(self, key) -> float:
		return 1.0


class FlakyRunner:
	"""
	Fails on every fc key.
	"""
	name = "flaky"

	def run(self, key) -> float:
		if key.kind == "fc":
			raise RuntimeError("device busy")
		return 2.0


#============================================
def test_closed_form_macs_match_instrumented_forward(tiny_config, tiny_weights, tiny_space):
	named = named_subnets(64, 192, 4)
	specs = [named["a_max"], named["a_C2min"]] + sample_many(tiny_space, SamplerState(rng_seed=8), 6)
	for spec in specs:
		expected = costmodel.count_macs(spec, tiny_config, 12)
		assert costmodel.instrumented_macs(spec, tiny_config, 12, weights=tiny_weights) == expected


#============================================
def test_stem_kernel_changes_macs_by_known_amount(tiny_config):
	wide = SubnetSpec(depth=2, kernels=(5, 3, 3), widths_front=(32, 32, 32), width_back=96)
	narrow = SubnetSpec(depth=2, kernels=(3, 3, 3), widths_front=(32, 32, 32), width_back=96)
	frames = 20
	delta = costmodel.count_macs(wide, tiny_config, frames) - costmodel.count_macs(narrow, tiny_config, frames)
	assert delta == 2 * tiny_config.input_channels * 32 * frames


#============================================
def test_base_subnet_costs_at_full_scale():
	config = SupernetConfig()
	base = named_subnets()["Base"]
	macs = costmodel.count_macs(base, config, 300)
	params = costmodel.count_params(base, config)
	assert abs(macs - 1.45e9) / 1.45e9 < 0.10
	assert abs(params - 5.79e6) / 5.79e6 < 0.05


#============================================
def test_costs_grow_with_the_subnet():
	config = SupernetConfig()
	named = named_subnets()
	small = costmodel.cost_report(named["Small"], config, 300)
	base = costmodel.cost_report(named["Base"], config, 300)
	assert small.macs < base.macs
	assert small.params < base.params
	assert base.to_dict()["latency_ms"] is None


#============================================
def test_frames_must_be_positive(tiny_config):
	spec = named_subnets(64, 192, 4)["a_max"]
	with pytest.raises(ShapeError):
		costmodel.count_macs(spec, tiny_config, 0)


#============================================
def test_table_keys_cover_the_coarse_space():
	config = SupernetConfig()
	keys = costmodel.table_keys(coarse_space(), config, 300)
	stem_keys = [key for key in keys if key.kind == "stem"]
	assert len(stem_keys) == 15
	assert len(keys) == len(set(keys))
	for spec in sample_many(coarse_space(), SamplerState(rng_seed=1), 20):
		assert set(costmodel.spec_latency_keys(spec, config, 300)) <= set(keys)


#============================================
def test_estimate_sums_entries_along_the_path(tiny_config, tiny_space):
	table = costmodel.build_latency_table(tiny_space, tiny_config, ConstantRunner(), repeats=3, warmup=1, frames=10)
	assert table.complete
	assert not table.low_confidence
	for spec in sample_many(tiny_space, SamplerState(rng_seed=2), 5):
		# stem, one cell per block, transform, pool, fc
		assert costmodel.estimate_latency(spec, table, tiny_config) == pytest.approx(spec.depth + 4)


#============================================
def test_failed_keys_are_recorded_and_block_estimates(tiny_config):
	space = training_space("largest", 64, 192, 4)
	table = costmodel.build_latency_table(space, tiny_config, FlakyRunner(), repeats=1, warmup=0, frames=10)
	assert not table.complete
	assert table.low_confidence
	assert all(key.kind == "fc" for key in table.errors)
	assert "device busy" in next(iter(table.errors.values()))
	with pytest.raises(CostTableError):
		costmodel.estimate_latency(named_subnets(64, 192, 4)["a_max"], table, tiny_config)


#============================================
def test_latency_table_file_round_trip(tmp_path, tiny_config):
	space = training_space("largest", 64, 192, 4)
	table = costmodel.build_latency_table(space, tiny_config, FlakyRunner(), repeats=2, warmup=0, frames=10)
	path = str(tmp_path / "latency.json")
	table.save(path)
	loaded = costmodel.LatencyTable.load(path)
	assert loaded.entries == table.entries
	assert loaded.errors == table.errors
	assert loaded.device == "flaky"
	assert loaded.frames == 10


#============================================
def test_latency_table_rejects_bad_documents():
	with pytest.raises(CostTableError):
		costmodel.LatencyTable.from_dict({"device": "x", "repeats": 1, "warmup": 0, "frames": 10})
	document = {
		"device": "x", "repeats": 1, "warmup": 0, "frames": 10,
		"entries": [{"kind": "fc", "kernel": 1, "c_in": 8, "c_out": 4, "frames": 10, "ms": 0.0}],
	}
	with pytest.raises(CostTableError):
		costmodel.LatencyTable.from_dict(document)


#============================================
def test_local_runner_times_every_cell(tiny_config, tiny_weights):
	space = training_space("largest", 64, 192, 4)
	runner = costmodel.LocalCellRunner(tiny_weights)
	table = costmodel.build_latency_table(space, tiny_config, runner, repeats=2, warmup=0, frames=8)
	assert table.complete
	assert len(table.entries) == 8
	assert all(ms > 0.0 for ms in table.entries.values())
	assert costmodel.estimate_latency(named_subnets(64, 192, 4)["a_max"], table, tiny_config) > 0.0


#============================================
class MacRunner:
	name = "macs"

	def run(self, key) -> float:
		return key.kernel * key.c_in * key.c_out * key.frames * 1e-9


#============================================
def test_stage_bound_subnet_costs_at_full_scale():
	config = SupernetConfig()
	named = named_subnets()
	expected = {
		"a_max": (1.93e9, 7.55e6),
		"a_Kmin": (1.74e9, 6.93e6),
		"a_Dmin": (936.82e6, 3.98e6),
		"a_C1min": (267.44e6, 1.25e6),
		"a_C2min": (83.47e6, 443.97e3),
	}
	for name, (macs, params) in expected.items():
		assert abs(costmodel.count_macs(named[name], config, 300) - macs) / macs < 0.05
		assert abs(costmodel.count_params(named[name], config) - params) / params < 0.05


#============================================
def test_every_cost_lies_between_the_space_bounds():
	config = SupernetConfig()
	coarse = coarse_space()
	low, high = bounds(coarse)
	table = costmodel.build_latency_table(coarse, config, MacRunner(), repeats=1, warmup=0, frames=300)
	measures = (
		lambda spec: costmodel.count_macs(spec, config, 300),
		lambda spec: costmodel.count_params(spec, config),
		lambda spec: costmodel.estimate_latency(spec, table, config),
	)
	limits = [(measure(low), measure(high)) for measure in measures]
	for spec in sample_many(coarse, SamplerState(rng_seed=11), 1000):
		for measure, (floor, ceiling) in zip(measures, limits):
			assert floor <= measure(spec) <= ceiling
