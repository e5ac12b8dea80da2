# PIP3 modules
import numpy
import pytest

# local repo modules
from tdnn_supernet import costmodel
from tdnn_supernet import numerics
from tdnn_supernet import supernet
from tdnn_supernet.errors import ConfigError, DataShortfallError, ShapeError, SpecValidationError
from tdnn_supernet.space import SamplerState, SubnetSpec, named_subnets, sample_many

#============================================


def _batch(config, batch: int = 2, frames: int = 20, seed: int = 0) -> numpy.ndarray:
	return numpy.random.default_rng(seed).normal(size=(batch, config.input_channels, frames))


def _perturb_norms(weights, buffers_only: bool = False) -> None:
	"""
	Move BN buffers and affine params off their defaults so slicing errors show.
	"""
	rng = numpy.random.default_rng(11)
	for name, value in weights.buffers.items():
		if name.endswith("running_mean"):
			value[...] = rng.normal(scale=0.1, size=value.shape)
		else:
			value[...] = rng.uniform(0.5, 1.5, size=value.shape)
	if buffers_only:
		return
	for name, value in weights.params.items():
		if name.endswith(".gamma") or name.endswith(".beta") or name.endswith(".bias"):
			value += rng.normal(scale=0.1, size=value.shape)


#============================================
def test_build_allocates_every_shape(tiny_config):
	weights = supernet.build(tiny_config)
	param_shapes, buffer_shapes = supernet.parameter_shapes(tiny_config)
	assert {name: value.shape for name, value in weights.params.items()} == param_shapes
	assert {name: value.shape for name, value in weights.buffers.items()} == buffer_shapes
	numpy.testing.assert_array_equal(weights.params["stem.ktrans3"], numpy.eye(3))
	numpy.testing.assert_array_equal(weights.params["block1.res2.1.ktrans1"], numpy.eye(1))
	assert "stem.ktrans5" not in weights.params


#============================================
def test_config_rejects_bad_scale():
	with pytest.raises(ConfigError):
		supernet.SupernetConfig(max_front_width=60, res2net_scale=8)
	with pytest.raises(ConfigError):
		supernet.SupernetConfig(kernel_options=(1, 4))
	with pytest.raises(ConfigError):
		supernet.SupernetConfig.from_dict({"width": 3})


#============================================
def test_forward_shapes_for_sampled_specs(tiny_weights, tiny_space):
	batch = _batch(tiny_weights.config)
	for spec in sample_many(tiny_space, SamplerState(rng_seed=3), 4):
		out = supernet.forward(tiny_weights, spec, batch)
		assert out.shape == (2, tiny_weights.config.embedding_dim)
		assert numpy.isfinite(out).all()


#============================================
def test_inactive_weights_never_change_output(tiny_weights, tiny_space):
	_perturb_norms(tiny_weights)
	batch = _batch(tiny_weights.config)
	rng = numpy.random.default_rng(5)
	for spec in sample_many(tiny_space, SamplerState(rng_seed=9), 3):
		before = supernet.forward(tiny_weights, spec, batch)
		tape = numerics.Tape(record=True)
		supernet.forward_tensor(tape, tiny_weights, spec, tape.constant(batch), training=False)
		perturbed = tiny_weights.copy()
		for name, value in perturbed.params.items():
			mask = tape.touched.get(name)
			noise = rng.normal(size=value.shape)
			if mask is None:
				value += noise
			else:
				value[~mask] += noise[~mask]
		after = supernet.forward(perturbed, spec, batch)
		numpy.testing.assert_array_equal(before, after)


#============================================
def test_export_matches_supernet_forward(tiny_weights, tiny_space):
	_perturb_norms(tiny_weights)
	# non-identity tap matrices exercise the kernel folding
	rng = numpy.random.default_rng(6)
	for name, value in tiny_weights.params.items():
		if ".ktrans" in name:
			value += rng.normal(scale=0.1, size=value.shape)
	batch = _batch(tiny_weights.config, seed=1)
	for spec in sample_many(tiny_space, SamplerState(rng_seed=4), 5):
		expected = supernet.forward(tiny_weights, spec, batch)
		exported = supernet.export_subnet(tiny_weights, spec)
		numpy.testing.assert_allclose(exported.forward(batch), expected, rtol=1e-6, atol=1e-9)


#============================================
def test_export_parameter_count_matches_closed_form(tiny_weights, tiny_space):
	named = named_subnets(64, 192, 4)
	specs = [named["a_max"], named["a_C2min"]] + sample_many(tiny_space, SamplerState(rng_seed=2), 5)
	for spec in specs:
		exported = supernet.export_subnet(tiny_weights, spec)
		assert exported.param_count() == costmodel.count_params(spec, tiny_weights.config)


#============================================
def test_exported_subnet_dict_form(tiny_weights):
	spec = named_subnets(64, 192, 4)["a_Dmin"]
	exported = supernet.export_subnet(tiny_weights, spec)
	rebuilt = supernet.ExportedSubnet.from_arrays(exported.to_arrays(), exported.metadata())
	batch = _batch(tiny_weights.config, seed=2)
	numpy.testing.assert_array_equal(rebuilt.forward(batch), exported.forward(batch))
	assert rebuilt.spec == spec


#============================================
def test_transform_kernel_identity_and_scaling():
	rng = numpy.random.default_rng(0)
	full = rng.normal(size=(2, 3, 5))
	identity = {3: numpy.eye(3), 1: numpy.eye(1)}
	numpy.testing.assert_array_equal(supernet.transform_kernel(full, 5, identity), full)
	numpy.testing.assert_array_equal(supernet.transform_kernel(full, 3, identity), full[:, :, 1:4])
	numpy.testing.assert_array_equal(supernet.transform_kernel(full, 1, identity), full[:, :, 2:3])
	doubled = {3: 2.0 * numpy.eye(3), 1: numpy.eye(1)}
	numpy.testing.assert_allclose(supernet.transform_kernel(full, 3, doubled), 2.0 * full[:, :, 1:4])
	numpy.testing.assert_allclose(supernet.transform_kernel(full, 1, doubled), 2.0 * full[:, :, 2:3])
	with pytest.raises(SpecValidationError):
		supernet.transform_kernel(full, 7, identity)


#============================================
def test_check_spec_rejections(tiny_config):
	with pytest.raises(SpecValidationError):
		supernet.check_spec(SubnetSpec(5, (3,) * 6, (64,) * 6, 192), tiny_config)
	with pytest.raises(SpecValidationError):
		supernet.check_spec(SubnetSpec(2, (3,) * 3, (64, 30, 64), 192), tiny_config)
	with pytest.raises(SpecValidationError):
		supernet.check_spec(SubnetSpec(2, (3,) * 3, (64,) * 3, 400), tiny_config)
	with pytest.raises(SpecValidationError):
		supernet.check_spec(SubnetSpec(2, (3, 3), (64,) * 3, 192), tiny_config)


#============================================
def test_forward_rejects_bad_batches(tiny_weights):
	spec = named_subnets(64, 192, 4)["a_max"]
	with pytest.raises(ShapeError):
		supernet.forward(tiny_weights, spec, numpy.zeros((2, 5, 10)))
	with pytest.raises(ShapeError):
		supernet.forward(tiny_weights, spec, numpy.zeros((8, 10)))
	bad = numpy.zeros((1, 8, 10))
	bad[0, 0, 0] = numpy.nan
	with pytest.raises(ShapeError) as caught:
		supernet.forward(tiny_weights, spec, bad)
	assert caught.value.dimension == "values"
	with pytest.raises(ValueError):
		supernet.forward(tiny_weights, spec, numpy.zeros((1, 8, 10)), mode="infer")


#============================================
def test_train_mode_updates_only_active_statistics(tiny_weights):
	spec = named_subnets(64, 192, 4)["a_C2min"]
	before = {name: value.copy() for name, value in tiny_weights.buffers.items()}
	supernet.forward(tiny_weights, spec, _batch(tiny_weights.config), mode="train")
	stem_mean = tiny_weights.buffers["stem.bn.running_mean"]
	assert not numpy.array_equal(stem_mean[:16], before["stem.bn.running_mean"][:16])
	numpy.testing.assert_array_equal(stem_mean[16:], before["stem.bn.running_mean"][16:])
	# blocks past depth 2 are skipped
	numpy.testing.assert_array_equal(tiny_weights.buffers["block3.bn1.running_mean"], before["block3.bn1.running_mean"])


#============================================
def test_recalibration_on_zero_data(tiny_weights):
	# zero biases keep every pre-pool activation at zero
	_perturb_norms(tiny_weights, buffers_only=True)
	spec = named_subnets(64, 192, 4)["a_max"]
	data = [numpy.zeros((8, 12)) for _ in range(6)]
	report = supernet.recalibrate_bn(tiny_weights, spec, data, n_utterances=6, batch_size=4)
	assert report.n_batches == 2
	assert report.finite
	assert report.layers == len(supernet._bn_layer_names(spec, 4))
	for name in ("stem.bn", "block1.bn1", "block4.res2.3.bn", "transform.bn"):
		numpy.testing.assert_allclose(tiny_weights.buffers[f"{name}.running_mean"], 0.0, atol=1e-12)


#============================================
def test_recalibration_averages_batch_statistics(tiny_weights):
	spec = named_subnets(64, 192, 4)["a_Dmin"]
	rng = numpy.random.default_rng(3)
	utterances = [rng.normal(loc=1.0, size=(8, 12)) for _ in range(4)]
	supernet.recalibrate_bn(tiny_weights, spec, utterances, n_utterances=4, batch_size=2)
	# stem BN sees the stem conv outputs; recompute them per batch and average
	width = spec.widths_front[0]
	weight = tiny_weights.params["stem.weight"][:width, :, 2:3]
	means = []
	for start in (0, 2):
		batch = numpy.stack(utterances[start:start + 2])
		h = numpy.maximum(numpy.einsum("oi,bit->bot", weight[:, :, 0], batch) + tiny_weights.params["stem.bias"][:width, None], 0.0)
		means.append(h.mean(axis=(0, 2)))
	numpy.testing.assert_allclose(tiny_weights.buffers["stem.bn.running_mean"][:width], numpy.mean(means, axis=0), rtol=1e-10)


#============================================
def test_recalibration_shortfall(tiny_weights):
	spec = named_subnets(64, 192, 4)["a_max"]
	with pytest.raises(DataShortfallError) as excinfo:
		supernet.recalibrate_bn(tiny_weights, spec, [numpy.zeros((8, 10))] * 3, n_utterances=5, batch_size=2)
	assert excinfo.value.shortfall == 2


#============================================
def test_weights_array_form_keeps_extra_params(tiny_weights):
	tiny_weights.params["head.weight"] = numpy.ones((3, 16))
	rebuilt = supernet.SupernetWeights.from_arrays(tiny_weights.config, tiny_weights.to_arrays())
	assert set(rebuilt.params) == set(tiny_weights.params)
	numpy.testing.assert_array_equal(rebuilt.params["head.weight"], numpy.ones((3, 16)))


#============================================
def test_supernet_gradient_matches_finite_differences(tiny_weights, tiny_space):
	rng = numpy.random.default_rng(4)
	spec = sample_many(tiny_space, SamplerState(rng_seed=3), 1)[0]
	batch = rng.normal(size=(2, 8, 10))
	tape = numerics.Tape(record=True)
	out = supernet.forward_tensor(tape, tiny_weights, spec, tape.constant(batch), training=True)
	projection = rng.normal(size=out.data.shape)
	loss = numerics.sum_all(tape, numerics.mul(tape, out, tape.constant(projection)))
	grads = numerics.gradients(tape, loss)

	def value() -> float:
		scratch = numerics.Tape(record=False)
		embedding = supernet.forward_tensor(scratch, tiny_weights, spec, scratch.constant(batch), training=True)
		return float((embedding.data * projection).sum())

	step = 1e-7
	checked = 0
	for name in sorted(grads):
		active = numpy.argwhere(grads[name] != 0.0)
		if len(active) == 0:
			continue
		index = tuple(active[int(rng.integers(len(active)))])
		original = tiny_weights.params[name][index]
		tiny_weights.params[name][index] = original + step
		plus = value()
		tiny_weights.params[name][index] = original - step
		minus = value()
		tiny_weights.params[name][index] = original
		numeric = (plus - minus) / (2.0 * step)
		assert numeric == pytest.approx(grads[name][index], rel=1e-4, abs=1e-6), name
		checked += 1
	assert checked >= 10
