"""
Small float64 array engine with reverse-mode differentiation.

Forward ops run eagerly on numpy arrays and append a TapeRecord holding
the op's forward and backward closures. gradients() walks the records in
reverse. Parameters enter a tape through Tape.variable(), and take()
slices them so gradients come back at full parameter shape.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
from typing import Callable, Sequence

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet.errors import ShapeError

#============================================


BN_EPS = 1e-5
POOL_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
FLAG_SINGLE_FRAME_POOL = "single_frame_pool"

ForwardFn = Callable[..., numpy.ndarray]
BackwardFn = Callable[..., tuple]


#============================================


@dataclass(slots=True, eq=False)
class Tensor:
	data: numpy.ndarray
	name: str | None = None
	requires_grad: bool = False

	@property
	def shape(self) -> tuple[int, ...]:
		return self.data.shape


@dataclass(slots=True)
class TapeRecord:
	op: str
	inputs: tuple[Tensor, ...]
	output: Tensor
	forward: ForwardFn
	backward: BackwardFn


@dataclass(slots=True)
class MacCounter:
	total: int = 0
	by_op: dict[str, int] = field(default_factory=dict)

	def add(self, op: str, count: int) -> None:
		self.total += int(count)
		self.by_op[op] = self.by_op.get(op, 0) + int(count)


class Tape:
	"""
	Ordered record of primitive applications on one forward pass.

	With record=False no records or masks are kept, which is how eval
	forwards, BN recalibration, and latency benchmarks run.
	"""

	def __init__(self, record: bool = True, mac_counter: MacCounter | None = None) -> None:
		self.record = record
		self.mac_counter = mac_counter
		self.records: list[TapeRecord] = []
		self.variables: dict[str, Tensor] = {}
		self.touched: dict[str, numpy.ndarray] = {}
		self.flags: list[str] = []

	#============================================
	def variable(self, name: str, array: numpy.ndarray) -> Tensor:
		"""
		Register a parameter array; repeated calls return the same leaf.
		"""
		tensor = self.variables.get(name)
		if tensor is None:
			tensor = Tensor(data=array, name=name, requires_grad=self.record)
			self.variables[name] = tensor
		return tensor

	def constant(self, array: numpy.ndarray) -> Tensor:
		return Tensor(data=numpy.asarray(array, dtype=numpy.float64))

	def mark(self, name: str, index: tuple | None = None) -> None:
		if not self.record:
			return
		tensor = self.variables[name]
		mask = self.touched.get(name)
		if mask is None:
			mask = numpy.zeros(tensor.data.shape, dtype=bool)
			self.touched[name] = mask
		if index is None:
			mask[...] = True
		else:
			mask[index] = True

	def count(self, op: str, macs: int) -> None:
		if self.mac_counter is not None and macs:
			self.mac_counter.add(op, macs)

	def flag(self, text: str) -> None:
		if text not in self.flags:
			self.flags.append(text)


#============================================
def primitive(
	tape: Tape,
	op: str,
	inputs: Sequence[Tensor],
	forward: ForwardFn,
	backward: BackwardFn,
	macs: int = 0,
	mark_inputs: bool = True,
) -> Tensor:
	"""
	Apply forward to the input arrays and record the op when any input needs grad.

	backward(grad_out, out, *input_arrays) returns one gradient (or None) per input.
	"""
	arrays = [tensor.data for tensor in inputs]
	out = forward(*arrays)
	tape.count(op, macs)
	needs_grad = tape.record and any(tensor.requires_grad for tensor in inputs)
	result = Tensor(data=out, requires_grad=needs_grad)
	if needs_grad:
		tape.records.append(TapeRecord(op, tuple(inputs), result, forward, backward))
		if mark_inputs:
			for tensor in inputs:
				if tensor.name is not None:
					tape.mark(tensor.name)
	return result


#============================================
def gradients(tape: Tape, loss: Tensor) -> dict[str, numpy.ndarray]:
	"""
	Reverse accumulation from a scalar loss to every reached variable.

	Variables off the active path are absent from the result.
	"""
	if loss.data.size != 1:
		raise ShapeError(f"gradient root must be a scalar, got shape {loss.data.shape}", dimension="loss")
	if not tape.record:
		raise ShapeError("tape was created with record=False", dimension="tape")
	grads: dict[int, numpy.ndarray] = {id(loss): numpy.ones_like(loss.data)}
	for record in reversed(tape.records):
		grad_out = grads.pop(id(record.output), None)
		if grad_out is None:
			continue
		input_grads = record.backward(grad_out, record.output.data, *[tensor.data for tensor in record.inputs])
		for tensor, grad in zip(record.inputs, input_grads):
			if grad is None or not tensor.requires_grad:
				continue
			key = id(tensor)
			if key in grads:
				grads[key] = grads[key] + grad
			else:
				grads[key] = grad
	result: dict[str, numpy.ndarray] = {}
	for name, tensor in tape.variables.items():
		grad = grads.get(id(tensor))
		if grad is not None:
			result[name] = grad
	return result


#============================================
def replay(tape: Tape) -> list[numpy.ndarray]:
	"""
	Recompute every recorded op from its saved inputs.
	"""
	return [record.forward(*[tensor.data for tensor in record.inputs]) for record in tape.records]


#============================================
def first_non_finite_op(tape: Tape) -> str | None:
	"""
	Name of the earliest recorded op whose replayed output is not finite.
	"""
	for record, output in zip(tape.records, replay(tape)):
		if not numpy.isfinite(output).all():
			return record.op
	return None


#============================================
def _unbroadcast(grad: numpy.ndarray, shape: tuple[int, ...]) -> numpy.ndarray:
	while grad.ndim > len(shape):
		grad = grad.sum(axis=0)
	for axis, size in enumerate(shape):
		if size == 1 and grad.shape[axis] != 1:
			grad = grad.sum(axis=axis, keepdims=True)
	return grad


#============================================
def take(tape: Tape, x: Tensor, index: tuple) -> Tensor:
	"""
	Basic-slice a tensor; the gradient scatters back into the full shape.
	"""
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return numpy.array(a[index])

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		full = numpy.zeros_like(a)
		full[index] = grad
		return (full,)

	result = primitive(tape, "take", [x], forward, backward, mark_inputs=False)
	if result.requires_grad and x.name is not None:
		tape.mark(x.name, index)
	return result


#============================================
def concat(tape: Tape, xs: Sequence[Tensor], axis: int) -> Tensor:
	sizes = [tensor.data.shape[axis] for tensor in xs]
	splits = numpy.cumsum(sizes)[:-1]

	def forward(*arrays: numpy.ndarray) -> numpy.ndarray:
		return numpy.concatenate(arrays, axis=axis)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, *arrays: numpy.ndarray) -> tuple:
		return tuple(numpy.split(grad, splits, axis=axis))

	if len(xs) == 1:
		return xs[0]
	return primitive(tape, "concat", xs, forward, backward)


#============================================
def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
	def forward(x: numpy.ndarray, y: numpy.ndarray) -> numpy.ndarray:
		return x + y

	def backward(grad: numpy.ndarray, out: numpy.ndarray, x: numpy.ndarray, y: numpy.ndarray) -> tuple:
		return (_unbroadcast(grad, x.shape), _unbroadcast(grad, y.shape))

	return primitive(tape, "add", [a, b], forward, backward)


#============================================
def mul(tape: Tape, a: Tensor, b: Tensor, count_macs: bool = False) -> Tensor:
	"""
	Broadcasting product; counts one MAC per output element when asked.
	"""
	def forward(x: numpy.ndarray, y: numpy.ndarray) -> numpy.ndarray:
		return x * y

	def backward(grad: numpy.ndarray, out: numpy.ndarray, x: numpy.ndarray, y: numpy.ndarray) -> tuple:
		return (_unbroadcast(grad * y, x.shape), _unbroadcast(grad * x, y.shape))

	macs = int(numpy.prod(numpy.broadcast_shapes(a.shape, b.shape))) if count_macs else 0
	return primitive(tape, "mul", [a, b], forward, backward, macs=macs)


#============================================
def relu(tape: Tape, x: Tensor) -> Tensor:
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return numpy.maximum(a, 0.0)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (grad * (a > 0.0),)

	return primitive(tape, "relu", [x], forward, backward)


#============================================
def tanh(tape: Tape, x: Tensor) -> Tensor:
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return numpy.tanh(a)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (grad * (1.0 - out * out),)

	return primitive(tape, "tanh", [x], forward, backward)


#============================================
def sigmoid(tape: Tape, x: Tensor) -> Tensor:
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return 0.5 * (numpy.tanh(0.5 * a) + 1.0)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (grad * out * (1.0 - out),)

	return primitive(tape, "sigmoid", [x], forward, backward)


#============================================
def mean_time(tape: Tape, x: Tensor) -> Tensor:
	"""
	Average a B x C x T tensor over frames.
	"""
	if x.data.ndim != 3:
		raise ShapeError(f"mean_time expects rank 3, got {x.data.ndim}", dimension="rank")
	frames = x.data.shape[2]

	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return a.mean(axis=2)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (numpy.broadcast_to(grad[:, :, None] / frames, a.shape).copy(),)

	return primitive(tape, "mean_time", [x], forward, backward)


#============================================
def unsqueeze_time(tape: Tape, x: Tensor) -> Tensor:
	"""
	B x C to B x C x 1, for broadcasting channel gates over frames.
	"""
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return a[:, :, None].copy()

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (grad[:, :, 0].copy(),)

	return primitive(tape, "unsqueeze_time", [x], forward, backward)


#============================================
def sum_all(tape: Tape, x: Tensor) -> Tensor:
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		return numpy.asarray(a.sum())

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		return (numpy.full_like(a, float(grad)),)

	return primitive(tape, "sum_all", [x], forward, backward)


#============================================
def l2_normalize(tape: Tape, x: Tensor, eps: float = 1e-12) -> Tensor:
	"""
	Scale each row of a matrix to unit length.
	"""
	def forward(a: numpy.ndarray) -> numpy.ndarray:
		norms = numpy.maximum(numpy.sqrt((a * a).sum(axis=1, keepdims=True)), eps)
		return a / norms

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray) -> tuple:
		norms = numpy.maximum(numpy.sqrt((a * a).sum(axis=1, keepdims=True)), eps)
		inner = (grad * out).sum(axis=1, keepdims=True)
		return ((grad - out * inner) / norms,)

	return primitive(tape, "l2_normalize", [x], forward, backward)


#============================================
def _check_conv_shapes(x: numpy.ndarray, w: numpy.ndarray, b: numpy.ndarray | None, groups: int) -> None:
	if x.ndim != 3:
		raise ShapeError(f"conv1d input must be rank 3 (B x C x T), got rank {x.ndim}", dimension="input_rank")
	if w.ndim != 3:
		raise ShapeError(f"conv1d kernel must be rank 3, got rank {w.ndim}", dimension="kernel_rank")
	c_in = x.shape[1]
	c_out, c_in_group, taps = w.shape
	if groups < 1 or c_in % groups != 0:
		raise ShapeError(f"input channels {c_in} not divisible by groups {groups}", dimension="groups")
	if c_out % groups != 0:
		raise ShapeError(f"output channels {c_out} not divisible by groups {groups}", dimension="groups")
	if c_in // groups != c_in_group:
		raise ShapeError(f"kernel expects {c_in_group * groups} input channels, got {c_in}", dimension="in_channels")
	if taps % 2 == 0:
		raise ShapeError(f"kernel size {taps} must be odd", dimension="kernel_size")
	if b is not None and b.shape != (c_out,):
		raise ShapeError(f"bias shape {b.shape} does not match {c_out} output channels", dimension="bias")


#============================================
def conv1d(
	tape: Tape,
	x: Tensor,
	w: Tensor,
	b: Tensor | None = None,
	dilation: int = 1,
	groups: int = 1,
) -> Tensor:
	"""
	Dilated same-length cross-correlation over frames.

	Counts B * C_out * (C_in / groups) * K * T MACs.
	"""
	_check_conv_shapes(x.data, w.data, None if b is None else b.data, groups)
	batch, c_in, frames = x.data.shape
	c_out, c_in_group, taps = w.data.shape
	out_group = c_out // groups
	pad = dilation * (taps - 1) // 2

	def forward(a: numpy.ndarray, kernel: numpy.ndarray, *bias: numpy.ndarray) -> numpy.ndarray:
		padded = numpy.pad(a, ((0, 0), (0, 0), (pad, pad)))
		out = numpy.zeros((batch, c_out, frames), dtype=numpy.float64)
		for group in range(groups):
			x_group = padded[:, group * c_in_group:(group + 1) * c_in_group]
			w_group = kernel[group * out_group:(group + 1) * out_group]
			acc = out[:, group * out_group:(group + 1) * out_group]
			for tap in range(taps):
				start = tap * dilation
				acc += numpy.matmul(w_group[:, :, tap], x_group[:, :, start:start + frames])
		if bias:
			out += bias[0][None, :, None]
		return out

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray, kernel: numpy.ndarray, *bias: numpy.ndarray) -> tuple:
		padded = numpy.pad(a, ((0, 0), (0, 0), (pad, pad)))
		d_padded = numpy.zeros_like(padded)
		d_kernel = numpy.zeros_like(kernel)
		for group in range(groups):
			in_slice = slice(group * c_in_group, (group + 1) * c_in_group)
			out_slice = slice(group * out_group, (group + 1) * out_group)
			g_group = grad[:, out_slice]
			for tap in range(taps):
				start = tap * dilation
				window = padded[:, in_slice, start:start + frames]
				d_kernel[out_slice, :, tap] += numpy.tensordot(g_group, window, axes=([0, 2], [0, 2]))
				d_padded[:, in_slice, start:start + frames] += numpy.matmul(kernel[out_slice, :, tap].T, g_group)
		d_input = d_padded[:, :, pad:pad + frames]
		if bias:
			return (d_input, d_kernel, grad.sum(axis=(0, 2)))
		return (d_input, d_kernel)

	inputs = [x, w] if b is None else [x, w, b]
	macs = batch * c_out * c_in_group * taps * frames
	return primitive(tape, "conv1d", inputs, forward, backward, macs=macs)


#============================================
def linear(tape: Tape, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
	"""
	Affine map of a B x F_in matrix by F_out x F_in weights.
	"""
	if x.data.ndim != 2 or w.data.ndim != 2:
		raise ShapeError("linear expects rank-2 input and weights", dimension="rank")
	if x.data.shape[1] != w.data.shape[1]:
		raise ShapeError(
			f"linear input has {x.data.shape[1]} features, weights expect {w.data.shape[1]}",
			dimension="in_features",
		)
	if b is not None and b.data.shape != (w.data.shape[0],):
		raise ShapeError(f"bias shape {b.data.shape} does not match {w.data.shape[0]} outputs", dimension="bias")

	def forward(a: numpy.ndarray, weight: numpy.ndarray, *bias: numpy.ndarray) -> numpy.ndarray:
		out = a @ weight.T
		if bias:
			out = out + bias[0][None, :]
		return out

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray, weight: numpy.ndarray, *bias: numpy.ndarray) -> tuple:
		d_input = grad @ weight
		d_weight = grad.T @ a
		if bias:
			return (d_input, d_weight, grad.sum(axis=0))
		return (d_input, d_weight)

	inputs = [x, w] if b is None else [x, w, b]
	macs = x.data.shape[0] * w.data.shape[0] * w.data.shape[1]
	return primitive(tape, "linear", inputs, forward, backward, macs=macs)


#============================================
def batchnorm1d(
	tape: Tape,
	x: Tensor,
	gamma: Tensor,
	beta: Tensor,
	running_mean: numpy.ndarray,
	running_var: numpy.ndarray,
	training: bool,
	momentum: float = 0.1,
	eps: float = BN_EPS,
) -> Tensor:
	"""
	Batch norm over (B, T) per channel for B x C x T, or over B for B x C.

	Train mode normalizes with biased batch statistics and moves the running
	arrays toward them in place; eval mode only reads the running arrays.
	"""
	if x.data.ndim not in (2, 3):
		raise ShapeError(f"batchnorm1d expects rank 2 or 3, got {x.data.ndim}", dimension="rank")
	channels = x.data.shape[1]
	for label, array in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", running_mean), ("running_var", running_var)):
		if array.shape != (channels,):
			raise ShapeError(f"{label} shape {array.shape} does not match {channels} channels", dimension="channels")
	axes = (0,) if x.data.ndim == 2 else (0, 2)
	view = (1, channels) if x.data.ndim == 2 else (1, channels, 1)
	if training:
		mean = x.data.mean(axis=axes)
		var = x.data.var(axis=axes)
	else:
		mean = running_mean.copy()
		var = running_var.copy()
	std = numpy.sqrt(var + eps)

	def forward(a: numpy.ndarray, g: numpy.ndarray, bt: numpy.ndarray) -> numpy.ndarray:
		xhat = (a - mean.reshape(view)) / std.reshape(view)
		return xhat * g.reshape(view) + bt.reshape(view)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray, g: numpy.ndarray, bt: numpy.ndarray) -> tuple:
		xhat = (a - mean.reshape(view)) / std.reshape(view)
		d_gamma = (grad * xhat).sum(axis=axes)
		d_beta = grad.sum(axis=axes)
		d_xhat = grad * g.reshape(view)
		if training:
			d_input = (
				d_xhat
				- d_xhat.mean(axis=axes, keepdims=True)
				- xhat * (d_xhat * xhat).mean(axis=axes, keepdims=True)
			) / std.reshape(view)
		else:
			d_input = d_xhat / std.reshape(view)
		return (d_input, d_gamma, d_beta)

	result = primitive(tape, "batchnorm1d", [x, gamma, beta], forward, backward)
	if training:
		running_mean *= 1.0 - momentum
		running_mean += momentum * mean
		running_var *= 1.0 - momentum
		running_var += momentum * var
	return result


#============================================
def attentive_stats_pool(tape: Tape, x: Tensor, scores: Tensor, eps: float = POOL_EPS) -> Tensor:
	"""
	Softmax-over-frames weighted mean and std per channel, concatenated.

	The weighted variance is floored at eps before the square root. A single
	frame has no spread, so std is reported as 0 and the tape is flagged.
	"""
	if x.data.ndim != 3 or scores.data.shape != x.data.shape:
		raise ShapeError(
			f"pool input {x.data.shape} and attention scores {scores.data.shape} must match (B x C x T)",
			dimension="attention",
		)
	batch, channels, frames = x.data.shape
	single_frame = frames == 1
	if single_frame:
		tape.flag(FLAG_SINGLE_FRAME_POOL)

	def weights_of(s: numpy.ndarray) -> numpy.ndarray:
		shifted = numpy.exp(s - s.max(axis=2, keepdims=True))
		return shifted / shifted.sum(axis=2, keepdims=True)

	def forward(a: numpy.ndarray, s: numpy.ndarray) -> numpy.ndarray:
		if single_frame:
			return numpy.concatenate([a[:, :, 0], numpy.zeros((batch, channels))], axis=1)
		w = weights_of(s)
		mu = (w * a).sum(axis=2)
		diff = a - mu[:, :, None]
		var = (w * diff * diff).sum(axis=2)
		sigma = numpy.sqrt(numpy.maximum(var, eps))
		return numpy.concatenate([mu, sigma], axis=1)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, a: numpy.ndarray, s: numpy.ndarray) -> tuple:
		g_mu = grad[:, :channels]
		if single_frame:
			return (g_mu[:, :, None].copy(), numpy.zeros_like(s))
		g_sigma = grad[:, channels:]
		w = weights_of(s)
		mu = out[:, :channels]
		sigma = out[:, channels:]
		diff = a - mu[:, :, None]
		var = (w * diff * diff).sum(axis=2)
		g_var = numpy.where(var > eps, g_sigma / (2.0 * sigma), 0.0)
		d_input = w * (g_mu[:, :, None] + 2.0 * g_var[:, :, None] * diff)
		d_weights = g_mu[:, :, None] * a + g_var[:, :, None] * diff * diff
		d_scores = w * (d_weights - (w * d_weights).sum(axis=2, keepdims=True))
		return (d_input, d_scores)

	macs = 3 * batch * channels * frames
	return primitive(tape, "attentive_stats_pool", [x, scores], forward, backward, macs=macs)


#============================================
def mix_taps(tape: Tape, kernel: Tensor, matrix: Tensor) -> Tensor:
	"""
	Apply one k x k matrix to the tap vector of every channel pair of a kernel.
	"""
	taps = kernel.data.shape[2]
	if matrix.data.shape != (taps, taps):
		raise ShapeError(f"tap matrix {matrix.data.shape} does not match {taps} taps", dimension="taps")

	def forward(k: numpy.ndarray, m: numpy.ndarray) -> numpy.ndarray:
		return numpy.einsum("pq,oiq->oip", m, k)

	def backward(grad: numpy.ndarray, out: numpy.ndarray, k: numpy.ndarray, m: numpy.ndarray) -> tuple:
		return (numpy.einsum("pq,oip->oiq", m, grad), numpy.einsum("oip,oiq->pq", grad, k))

	return primitive(tape, "mix_taps", [kernel, matrix], forward, backward)


#============================================


@dataclass(slots=True)
class OptimizerState:
	beta1: float = ADAM_BETA1
	beta2: float = ADAM_BETA2
	eps: float = ADAM_EPS
	step: int = 0
	first_moment: dict[str, numpy.ndarray] = field(default_factory=dict)
	second_moment: dict[str, numpy.ndarray] = field(default_factory=dict)


#============================================
def adam_step(
	params: dict[str, numpy.ndarray],
	grads: dict[str, numpy.ndarray],
	state: OptimizerState,
	lr: float,
	masks: dict[str, numpy.ndarray] | None = None,
) -> None:
	"""
	One bias-corrected Adam update, in place on the parameter arrays.

	With masks, only masked elements (and their moments) change.
	"""
	state.step += 1
	correction1 = 1.0 - state.beta1 ** state.step
	correction2 = 1.0 - state.beta2 ** state.step
	for name in sorted(grads):
		grad = grads[name]
		param = params[name]
		if grad.shape != param.shape:
			raise ShapeError(f"gradient shape {grad.shape} does not match parameter {name} {param.shape}", dimension=name)
		first = state.first_moment.get(name)
		if first is None:
			first = numpy.zeros_like(param)
			state.first_moment[name] = first
		second = state.second_moment.get(name)
		if second is None:
			second = numpy.zeros_like(param)
			state.second_moment[name] = second
		mask = None if masks is None else masks.get(name)
		if mask is None:
			first *= state.beta1
			first += (1.0 - state.beta1) * grad
			second *= state.beta2
			second += (1.0 - state.beta2) * grad * grad
			param -= lr * (first / correction1) / (numpy.sqrt(second / correction2) + state.eps)
			continue
		g = grad[mask]
		first[mask] = state.beta1 * first[mask] + (1.0 - state.beta1) * g
		second[mask] = state.beta2 * second[mask] + (1.0 - state.beta2) * g * g
		param[mask] -= lr * (first[mask] / correction1) / (numpy.sqrt(second[mask] / correction2) + state.eps)
