# PIP3 modules
import numpy
import pytest

# local repo modules
from tdnn_supernet import numerics
from tdnn_supernet.errors import ShapeError

#============================================


def _check_gradient(build_output, inputs: dict, seed: int = 0, step: float = 1e-6, rtol: float = 1e-4) -> None:
	"""
	Compare tape gradients of sum(output * R) against central differences.
	"""
	rng = numpy.random.default_rng(seed)
	tape = numerics.Tape(record=True)
	tensors = {name: tape.variable(name, value) for name, value in inputs.items()}
	out = build_output(tape, tensors)
	projection = rng.normal(size=out.data.shape)
	loss = numerics.sum_all(tape, numerics.mul(tape, out, tape.constant(projection)))
	grads = numerics.gradients(tape, loss)

	def loss_of(arrays: dict) -> float:
		scratch = numerics.Tape(record=False)
		scratch_tensors = {name: scratch.constant(value) for name, value in arrays.items()}
		return float((build_output(scratch, scratch_tensors).data * projection).sum())

	for name, value in inputs.items():
		numeric = numpy.zeros_like(value)
		for index in numpy.ndindex(value.shape):
			plus = {key: array.copy() for key, array in inputs.items()}
			minus = {key: array.copy() for key, array in inputs.items()}
			plus[name][index] += step
			minus[name][index] -= step
			numeric[index] = (loss_of(plus) - loss_of(minus)) / (2.0 * step)
		numpy.testing.assert_allclose(grads[name], numeric, rtol=rtol, atol=1e-6)


#============================================
def test_conv1d_gradient():
	rng = numpy.random.default_rng(1)
	inputs = {
		"x": rng.normal(size=(2, 3, 7)),
		"w": rng.normal(size=(4, 3, 3)),
		"b": rng.normal(size=(4,)),
	}
	_check_gradient(lambda tape, t: numerics.conv1d(tape, t["x"], t["w"], t["b"], dilation=2), inputs)


#============================================
def test_grouped_conv1d_gradient():
	rng = numpy.random.default_rng(2)
	inputs = {"x": rng.normal(size=(1, 4, 5)), "w": rng.normal(size=(2, 2, 3))}
	_check_gradient(lambda tape, t: numerics.conv1d(tape, t["x"], t["w"], groups=2), inputs)


#============================================
def test_batchnorm_train_gradient():
	rng = numpy.random.default_rng(3)
	inputs = {
		"x": rng.normal(size=(3, 2, 4)),
		"gamma": rng.normal(size=(2,)),
		"beta": rng.normal(size=(2,)),
	}

	def build(tape, t):
		return numerics.batchnorm1d(tape, t["x"], t["gamma"], t["beta"], numpy.zeros(2), numpy.ones(2), training=True)

	_check_gradient(build, inputs)


#============================================
def test_attentive_pool_gradient():
	rng = numpy.random.default_rng(4)
	inputs = {"x": rng.normal(size=(2, 3, 6)), "s": rng.normal(size=(2, 3, 6))}
	_check_gradient(lambda tape, t: numerics.attentive_stats_pool(tape, t["x"], t["s"]), inputs)


#============================================
def test_linear_normalize_and_gates_gradient():
	rng = numpy.random.default_rng(5)
	inputs = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(5, 4)), "b": rng.normal(size=(5,))}

	def build(tape, t):
		h = numerics.linear(tape, numerics.l2_normalize(tape, t["x"]), t["w"], t["b"])
		return numerics.mul(tape, numerics.tanh(tape, h), numerics.sigmoid(tape, h))

	_check_gradient(build, inputs)


#============================================
def test_mix_taps_gradient():
	rng = numpy.random.default_rng(6)
	inputs = {"k": rng.normal(size=(2, 3, 3)), "m": rng.normal(size=(3, 3))}
	_check_gradient(lambda tape, t: numerics.mix_taps(tape, t["k"], t["m"]), inputs)


#============================================
def test_conv1d_kernel_one_is_matmul_and_counts_macs():
	rng = numpy.random.default_rng(7)
	x = rng.normal(size=(2, 3, 5))
	w = rng.normal(size=(4, 3, 1))
	counter = numerics.MacCounter()
	tape = numerics.Tape(record=False, mac_counter=counter)
	out = numerics.conv1d(tape, tape.constant(x), tape.constant(w)).data
	numpy.testing.assert_allclose(out, numpy.einsum("oi,bit->bot", w[:, :, 0], x))
	assert counter.total == 2 * 4 * 3 * 1 * 5
	assert counter.by_op == {"conv1d": 120}


#============================================
def test_conv1d_shape_errors():
	tape = numerics.Tape(record=False)
	x = tape.constant(numpy.zeros((1, 3, 5)))
	with pytest.raises(ShapeError) as excinfo:
		numerics.conv1d(tape, x, tape.constant(numpy.zeros((4, 2, 3))))
	assert excinfo.value.dimension == "in_channels"
	with pytest.raises(ShapeError):
		numerics.conv1d(tape, x, tape.constant(numpy.zeros((4, 3, 2))))
	with pytest.raises(ShapeError):
		numerics.conv1d(tape, tape.constant(numpy.zeros((3, 5))), tape.constant(numpy.zeros((4, 3, 3))))


#============================================
def test_attentive_pool_constant_input():
	tape = numerics.Tape(record=False)
	x = numpy.full((1, 2, 6), 3.0)
	out = numerics.attentive_stats_pool(tape, tape.constant(x), tape.constant(numpy.zeros((1, 2, 6)))).data
	numpy.testing.assert_allclose(out[0, :2], [3.0, 3.0])
	numpy.testing.assert_allclose(out[0, 2:], numpy.sqrt(numerics.POOL_EPS))
	assert not tape.flags


#============================================
def test_attentive_pool_single_frame_is_flagged():
	tape = numerics.Tape(record=False)
	x = numpy.array([[[1.5], [-2.0]]])
	out = numerics.attentive_stats_pool(tape, tape.constant(x), tape.constant(numpy.zeros_like(x))).data
	numpy.testing.assert_allclose(out, [[1.5, -2.0, 0.0, 0.0]])
	assert tape.flags == [numerics.FLAG_SINGLE_FRAME_POOL]


#============================================
def test_batchnorm_running_statistics():
	rng = numpy.random.default_rng(8)
	x = rng.normal(loc=2.0, size=(4, 3, 5))
	running_mean = numpy.zeros(3)
	running_var = numpy.ones(3)
	tape = numerics.Tape(record=False)
	gamma = tape.constant(numpy.ones(3))
	beta = tape.constant(numpy.zeros(3))
	numerics.batchnorm1d(tape, tape.constant(x), gamma, beta, running_mean, running_var, training=True, momentum=1.0)
	numpy.testing.assert_allclose(running_mean, x.mean(axis=(0, 2)))
	# biased batch variance
	numpy.testing.assert_allclose(running_var, x.var(axis=(0, 2)))
	out = numerics.batchnorm1d(tape, tape.constant(x), gamma, beta, running_mean, running_var, training=False).data
	expected = (x - running_mean[None, :, None]) / numpy.sqrt(running_var[None, :, None] + numerics.BN_EPS)
	numpy.testing.assert_allclose(out, expected)


#============================================
def test_take_scatters_gradient_and_marks_slice():
	tape = numerics.Tape(record=True)
	weight = tape.variable("w", numpy.arange(12.0).reshape(3, 4))
	part = numerics.take(tape, weight, (slice(0, 2), slice(1, 3)))
	grads = numerics.gradients(tape, numerics.sum_all(tape, part))
	expected = numpy.zeros((3, 4))
	expected[0:2, 1:3] = 1.0
	numpy.testing.assert_array_equal(grads["w"], expected)
	numpy.testing.assert_array_equal(tape.touched["w"], expected.astype(bool))


#============================================
def test_gradients_need_a_recording_scalar_root():
	tape = numerics.Tape(record=False)
	value = tape.constant(numpy.ones(2))
	with pytest.raises(ShapeError):
		numerics.gradients(tape, numerics.sum_all(tape, value))
	recording = numerics.Tape(record=True)
	vector = recording.variable("v", numpy.ones(2))
	with pytest.raises(ShapeError):
		numerics.gradients(recording, numerics.relu(recording, vector))


#============================================
def test_replay_reproduces_forward():
	rng = numpy.random.default_rng(9)
	tape = numerics.Tape(record=True)
	x = tape.variable("x", rng.normal(size=(2, 3, 4)))
	w = tape.variable("w", rng.normal(size=(2, 3, 3)))
	out = numerics.relu(tape, numerics.conv1d(tape, x, w))
	replayed = numerics.replay(tape)
	numpy.testing.assert_array_equal(replayed[-1], out.data)
	assert numerics.first_non_finite_op(tape) is None


#============================================
def test_first_non_finite_op_names_the_culprit():
	tape = numerics.Tape(record=True)
	a = numerics.relu(tape, tape.variable("a", numpy.array([1.0, -1.0])))
	b = tape.variable("b", numpy.array([numpy.nan, 0.0]))
	numerics.add(tape, a, b)
	assert numerics.first_non_finite_op(tape) == "add"


#============================================
def test_adam_masked_update_leaves_other_entries():
	params = {"w": numpy.ones(4)}
	grads = {"w": numpy.array([1.0, -1.0, 2.0, 5.0])}
	mask = {"w": numpy.array([True, True, False, False])}
	state = numerics.OptimizerState()
	numerics.adam_step(params, grads, state, lr=0.1, masks=mask)
	# first bias-corrected step moves each active entry by lr * sign(grad)
	numpy.testing.assert_allclose(params["w"], [0.9, 1.1, 1.0, 1.0], atol=1e-6)
	numpy.testing.assert_array_equal(state.first_moment["w"][2:], [0.0, 0.0])
	assert state.step == 1


#============================================
def test_adam_shape_mismatch():
	with pytest.raises(ShapeError):
		numerics.adam_step({"w": numpy.ones(3)}, {"w": numpy.ones(2)}, numerics.OptimizerState(), lr=0.1)
