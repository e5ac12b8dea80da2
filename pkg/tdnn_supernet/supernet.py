"""
Dynamic TDNN supernet: eight cells over shared weights.

Cells: stem conv, up to four SE-Res2Net blocks, a transformation conv over
the concatenated block outputs, attentive statistics pooling, and the
embedding layer. A SubnetSpec selects the leading channels of each dynamic
layer, the kernel size of every dynamic-kernel conv, and how many blocks run.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import itertools
from typing import Iterable

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet import numerics
from tdnn_supernet.errors import CheckpointError, ConfigError, DataShortfallError, ShapeError, SpecValidationError
from tdnn_supernet.numerics import Tape, Tensor
from tdnn_supernet.space import SubnetSpec

#============================================


PARAM_PREFIX = "param/"
BUFFER_PREFIX = "buffer/"


#============================================


@dataclass(slots=True)
class SupernetConfig:
	input_channels: int = 80
	max_front_width: int = 512
	max_back_width: int = 1536
	max_depth: int = 4
	kernel_options: tuple[int, ...] = (1, 3, 5)
	res2net_scale: int = 8
	se_bottleneck: int = 128
	block_dilations: tuple[int, ...] = (2, 3, 4, 5)
	embedding_dim: int = 192
	attention_channels: int = 128
	default_frames: int = 300
	width_quantum: int = 8
	bn_momentum: float = 0.1
	init_seed: int = 0

	def __post_init__(self) -> None:
		self.kernel_options = tuple(int(value) for value in self.kernel_options)
		self.block_dilations = tuple(int(value) for value in self.block_dilations)
		self.check()

	#============================================
	def check(self) -> None:
		if self.input_channels < 1:
			raise ConfigError("input_channels must be >= 1")
		if self.embedding_dim < 1:
			raise ConfigError("embedding_dim must be >= 1")
		if self.max_depth < 1:
			raise ConfigError("max_depth must be >= 1")
		if len(self.block_dilations) != self.max_depth:
			raise ConfigError(f"block_dilations needs {self.max_depth} entries, got {len(self.block_dilations)}")
		if self.res2net_scale < 2:
			raise ConfigError("res2net_scale must be >= 2")
		if self.max_front_width % self.res2net_scale != 0:
			raise ConfigError(f"max_front_width {self.max_front_width} not divisible by res2net_scale {self.res2net_scale}")
		if self.width_quantum % self.res2net_scale != 0:
			raise ConfigError(f"width_quantum {self.width_quantum} not divisible by res2net_scale {self.res2net_scale}")
		if self.max_back_width < 1 or self.attention_channels < 1 or self.se_bottleneck < 1:
			raise ConfigError("back width, attention channels, and SE bottleneck must be >= 1")
		if not self.kernel_options or any(kernel < 1 or kernel % 2 == 0 for kernel in self.kernel_options):
			raise ConfigError(f"kernel options must be positive odd integers: {list(self.kernel_options)}")
		if any(later <= earlier for earlier, later in zip(self.kernel_options, self.kernel_options[1:])):
			raise ConfigError("kernel options must be strictly increasing")

	@property
	def max_kernel(self) -> int:
		return max(self.kernel_options)

	@property
	def max_split_width(self) -> int:
		return self.max_front_width // self.res2net_scale

	def se_width(self, block_width: int) -> int:
		"""
		SE bottleneck for a block of the given output width.
		"""
		return min(self.se_bottleneck, max(1, block_width // 4))

	def to_dict(self) -> dict:
		return {
			"input_channels": self.input_channels,
			"max_front_width": self.max_front_width,
			"max_back_width": self.max_back_width,
			"max_depth": self.max_depth,
			"kernel_options": list(self.kernel_options),
			"res2net_scale": self.res2net_scale,
			"se_bottleneck": self.se_bottleneck,
			"block_dilations": list(self.block_dilations),
			"embedding_dim": self.embedding_dim,
			"attention_channels": self.attention_channels,
			"default_frames": self.default_frames,
			"width_quantum": self.width_quantum,
			"bn_momentum": self.bn_momentum,
			"init_seed": self.init_seed,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "SupernetConfig":
		known = set(cls.__dataclass_fields__)
		unknown = sorted(set(data) - known)
		if unknown:
			raise ConfigError(f"unknown supernet config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class SupernetWeights:
	config: SupernetConfig
	params: dict[str, numpy.ndarray] = field(default_factory=dict)
	buffers: dict[str, numpy.ndarray] = field(default_factory=dict)

	def to_arrays(self) -> dict[str, numpy.ndarray]:
		arrays = {PARAM_PREFIX + name: value for name, value in self.params.items()}
		arrays.update({BUFFER_PREFIX + name: value for name, value in self.buffers.items()})
		return arrays

	@classmethod
	def from_arrays(cls, config: SupernetConfig, arrays: dict[str, numpy.ndarray]) -> "SupernetWeights":
		"""
		Rebuild weights from checkpoint arrays, checking every expected shape.
		"""
		param_shapes, buffer_shapes = parameter_shapes(config)
		params: dict[str, numpy.ndarray] = {}
		buffers: dict[str, numpy.ndarray] = {}
		for name, shape in param_shapes.items():
			value = arrays.get(PARAM_PREFIX + name)
			if value is None or value.shape != shape:
				raise CheckpointError(f"checkpoint array '{PARAM_PREFIX + name}' missing or not shaped {shape}")
			params[name] = numpy.array(value, dtype=numpy.float64)
		for name, shape in buffer_shapes.items():
			value = arrays.get(BUFFER_PREFIX + name)
			if value is None or value.shape != shape:
				raise CheckpointError(f"checkpoint array '{BUFFER_PREFIX + name}' missing or not shaped {shape}")
			buffers[name] = numpy.array(value, dtype=numpy.float64)
		# extra trainable arrays such as the classifier head ride along
		for key, value in arrays.items():
			if key.startswith(PARAM_PREFIX) and key[len(PARAM_PREFIX):] not in params:
				params[key[len(PARAM_PREFIX):]] = numpy.array(value, dtype=numpy.float64)
		return cls(config=config, params=params, buffers=buffers)

	def copy(self) -> "SupernetWeights":
		return SupernetWeights(
			config=self.config,
			params={name: value.copy() for name, value in self.params.items()},
			buffers={name: value.copy() for name, value in self.buffers.items()},
		)


@dataclass(slots=True)
class ExportedSubnet:
	"""
	Static network for one spec: sliced weights with materialized kernels.
	"""
	spec: SubnetSpec
	config: SupernetConfig
	params: dict[str, numpy.ndarray]
	buffers: dict[str, numpy.ndarray]

	def param_count(self) -> int:
		return int(sum(value.size for value in self.params.values()))

	def _constants(self, tape: Tape) -> tuple[dict[str, Tensor], dict[str, tuple[numpy.ndarray, numpy.ndarray]]]:
		tensors = {name: tape.constant(value) for name, value in self.params.items()}
		stats = {}
		for name in _bn_layer_names(self.spec, self.config.res2net_scale):
			stats[name] = (self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"])
		return tensors, stats

	def forward(self, batch: numpy.ndarray) -> numpy.ndarray:
		_check_batch(batch, self.config)
		tape = Tape(record=False)
		tensors, stats = self._constants(tape)
		x = tape.constant(batch)
		return _run_cells(tape, tensors, stats, self.spec, self.config, x, training=False, momentum=0.0).data

	def run_block(self, index: int, batch: numpy.ndarray) -> numpy.ndarray:
		"""
		Eval forward of one SE-Res2Net block on a B x C1 x T input.
		"""
		if not 1 <= index <= self.spec.depth:
			raise SpecValidationError(f"block {index} is not active in a depth-{self.spec.depth} subnet")
		tape = Tape(record=False)
		tensors, stats = self._constants(tape)
		x = tape.constant(batch)
		return _se_res2net_block(tape, tensors, stats, index, self.spec, self.config, x, False, 0.0).data

	def to_arrays(self) -> dict[str, numpy.ndarray]:
		arrays = {PARAM_PREFIX + name: value for name, value in self.params.items()}
		arrays.update({BUFFER_PREFIX + name: value for name, value in self.buffers.items()})
		return arrays

	def metadata(self) -> dict:
		return {"kind": "exported_subnet", "spec": self.spec.to_dict(), "supernet": self.config.to_dict()}

	@classmethod
	def from_arrays(cls, arrays: dict[str, numpy.ndarray], metadata: dict) -> "ExportedSubnet":
		if metadata.get("kind") != "exported_subnet":
			raise CheckpointError("checkpoint does not hold an exported subnet")
		params = {key[len(PARAM_PREFIX):]: value for key, value in arrays.items() if key.startswith(PARAM_PREFIX)}
		buffers = {key[len(BUFFER_PREFIX):]: value for key, value in arrays.items() if key.startswith(BUFFER_PREFIX)}
		return cls(
			spec=SubnetSpec.from_dict(metadata["spec"]),
			config=SupernetConfig.from_dict(metadata["supernet"]),
			params=params,
			buffers=buffers,
		)


@dataclass(slots=True)
class RecalibrationReport:
	spec: SubnetSpec
	n_utterances: int
	n_batches: int
	layers: int
	finite: bool


#============================================
def check_spec(spec: SubnetSpec, config: SupernetConfig) -> None:
	"""
	Raise SpecValidationError when a spec does not fit the supernet shape.
	"""
	if not 1 <= spec.depth <= config.max_depth:
		raise SpecValidationError(f"depth {spec.depth} outside 1..{config.max_depth}")
	positions = spec.depth + 1
	if len(spec.kernels) != positions or len(spec.widths_front) != positions:
		raise SpecValidationError(f"kernels and widths need depth+1={positions} entries")
	for index, kernel in enumerate(spec.kernels):
		if kernel not in config.kernel_options:
			raise SpecValidationError(f"kernel {kernel} at position {index} not in {list(config.kernel_options)}")
	for index, width in enumerate(spec.widths_front):
		if not 1 <= width <= config.max_front_width:
			raise SpecValidationError(f"width {width} at position {index} outside 1..{config.max_front_width}")
		if index > 0 and width % config.res2net_scale != 0:
			raise SpecValidationError(f"block width {width} not divisible by res2net_scale {config.res2net_scale}")
	if not 1 <= spec.width_back <= config.max_back_width:
		raise SpecValidationError(f"width_back {spec.width_back} outside 1..{config.max_back_width}")


#============================================
def _check_batch(batch: numpy.ndarray, config: SupernetConfig) -> None:
	if batch.ndim != 3:
		raise ShapeError(f"feature batch must be B x C x T, got rank {batch.ndim}", dimension="rank")
	if batch.shape[1] != config.input_channels:
		raise ShapeError(
			f"feature batch has {batch.shape[1]} channels, supernet expects {config.input_channels}",
			dimension="channels",
		)
	if min(batch.shape) < 1:
		raise ShapeError(f"feature batch has an empty dimension: {batch.shape}", dimension="empty")
	if not numpy.isfinite(batch).all():
		raise ShapeError("feature batch contains non-finite values", dimension="values")


#============================================
def _transform_names(prefix: str, config: SupernetConfig) -> dict[int, str]:
	return {kernel: f"{prefix}.ktrans{kernel}" for kernel in config.kernel_options if kernel != config.max_kernel}


#============================================
def parameter_shapes(config: SupernetConfig) -> tuple[dict[str, tuple], dict[str, tuple]]:
	"""
	Names and full shapes of every supernet parameter and BN buffer.
	"""
	front = config.max_front_width
	back = config.max_back_width
	split = config.max_split_width
	kernel = config.max_kernel
	squeeze = config.se_width(front)
	attention = config.attention_channels
	params: dict[str, tuple] = {}
	buffers: dict[str, tuple] = {}

	def add_bn(name: str, channels: int) -> None:
		params[f"{name}.gamma"] = (channels,)
		params[f"{name}.beta"] = (channels,)
		buffers[f"{name}.running_mean"] = (channels,)
		buffers[f"{name}.running_var"] = (channels,)

	def add_transforms(prefix: str) -> None:
		for taps, name in _transform_names(prefix, config).items():
			params[name] = (taps, taps)

	params["stem.weight"] = (front, config.input_channels, kernel)
	params["stem.bias"] = (front,)
	add_transforms("stem")
	add_bn("stem.bn", front)
	for index in range(1, config.max_depth + 1):
		prefix = f"block{index}"
		params[f"{prefix}.conv1.weight"] = (front, front, 1)
		params[f"{prefix}.conv1.bias"] = (front,)
		add_bn(f"{prefix}.bn1", front)
		for split_index in range(1, config.res2net_scale):
			split_prefix = f"{prefix}.res2.{split_index}"
			params[f"{split_prefix}.weight"] = (split, split, kernel)
			params[f"{split_prefix}.bias"] = (split,)
			add_transforms(split_prefix)
			add_bn(f"{split_prefix}.bn", split)
		params[f"{prefix}.conv3.weight"] = (front, front, 1)
		params[f"{prefix}.conv3.bias"] = (front,)
		add_bn(f"{prefix}.bn3", front)
		params[f"{prefix}.se.fc1.weight"] = (squeeze, front)
		params[f"{prefix}.se.fc1.bias"] = (squeeze,)
		params[f"{prefix}.se.fc2.weight"] = (front, squeeze)
		params[f"{prefix}.se.fc2.bias"] = (front,)
	params["transform.weight"] = (back, config.max_depth * front, 1)
	params["transform.bias"] = (back,)
	add_bn("transform.bn", back)
	params["pool.attn1.weight"] = (attention, back, 1)
	params["pool.attn1.bias"] = (attention,)
	params["pool.attn2.weight"] = (back, attention, 1)
	params["pool.attn2.bias"] = (back,)
	add_bn("pool.bn", 2 * back)
	params["fc.weight"] = (config.embedding_dim, 2 * back)
	params["fc.bias"] = (config.embedding_dim,)
	add_bn("fc.bn", config.embedding_dim)
	return params, buffers


#============================================
def build(config: SupernetConfig) -> SupernetWeights:
	"""
	Allocate maximal shared weights with identity kernel transforms.
	"""
	config.check()
	param_shapes, buffer_shapes = parameter_shapes(config)
	rng = numpy.random.default_rng(config.init_seed)
	params: dict[str, numpy.ndarray] = {}
	for name, shape in param_shapes.items():
		if ".ktrans" in name:
			params[name] = numpy.eye(shape[0])
		elif name.endswith(".gamma"):
			params[name] = numpy.ones(shape)
		elif name.endswith(".bias") or name.endswith(".beta"):
			params[name] = numpy.zeros(shape)
		else:
			fan_in = int(numpy.prod(shape[1:]))
			params[name] = rng.normal(0.0, numpy.sqrt(2.0 / fan_in), size=shape)
	buffers: dict[str, numpy.ndarray] = {}
	for name, shape in buffer_shapes.items():
		buffers[name] = numpy.ones(shape) if name.endswith("running_var") else numpy.zeros(shape)
	return SupernetWeights(config=config, params=params, buffers=buffers)


#============================================
def _transform_kernel_tensor(
	tape: Tape,
	kernel: Tensor,
	target_k: int,
	matrices: dict[int, Tensor],
	kernel_options: tuple[int, ...],
) -> Tensor:
	"""
	Shrink a kernel step by step: take the centre taps, then mix them.
	"""
	if target_k not in kernel_options:
		raise SpecValidationError(f"kernel size {target_k} not in {list(kernel_options)}")
	current = kernel
	size = kernel.data.shape[2]
	for taps in sorted(kernel_options, reverse=True):
		if taps >= size:
			continue
		if taps < target_k:
			break
		offset = (size - taps) // 2
		current = numerics.take(tape, current, (slice(None), slice(None), slice(offset, offset + taps)))
		current = numerics.mix_taps(tape, current, matrices[taps])
		size = taps
	return current


#============================================
def transform_kernel(
	full_kernel: numpy.ndarray,
	target_k: int,
	matrices: dict[int, numpy.ndarray],
	kernel_options: tuple[int, ...] = (1, 3, 5),
) -> numpy.ndarray:
	"""
	Reduced kernel for target_k from a full-size kernel and its tap matrices.

	For options (1, 3, 5): K=5 is unchanged, K=3 is matrices[3] applied to the
	centre three taps, and K=1 is matrices[1] applied to the centre tap of
	the K=3 result.
	"""
	tape = Tape(record=False)
	tensors = {taps: tape.constant(matrix) for taps, matrix in matrices.items()}
	kernel = tape.constant(full_kernel)
	return _transform_kernel_tensor(tape, kernel, target_k, tensors, kernel_options).data


#============================================
def _bn_layer_names(spec: SubnetSpec, scale: int) -> list[str]:
	names = ["stem.bn"]
	for index in range(1, spec.depth + 1):
		names.append(f"block{index}.bn1")
		for split_index in range(1, scale):
			names.append(f"block{index}.res2.{split_index}.bn")
		names.append(f"block{index}.bn3")
	names.extend(["transform.bn", "pool.bn_mu", "pool.bn_sigma", "fc.bn"])
	return names


#============================================
def _active_layout(weights: SupernetWeights, spec: SubnetSpec) -> dict[str, tuple[str, tuple]]:
	"""
	Map each active static name to (supernet array name, slice).
	"""
	config = weights.config
	front = config.max_front_width
	back = config.max_back_width
	stem_width = spec.widths_front[0]
	out = spec.width_back
	every = slice(None)
	layout: dict[str, tuple[str, tuple]] = {}

	def add_bn(static: str, source: str, channels: slice) -> None:
		layout[f"{static}.gamma"] = (f"{source}.gamma", (channels,))
		layout[f"{static}.beta"] = (f"{source}.beta", (channels,))

	layout["stem.weight"] = ("stem.weight", (slice(0, stem_width), every, every))
	layout["stem.bias"] = ("stem.bias", (slice(0, stem_width),))
	add_bn("stem.bn", "stem.bn", slice(0, stem_width))
	squeeze = config.se_width(stem_width)
	for index in range(1, spec.depth + 1):
		prefix = f"block{index}"
		inner = spec.widths_front[index]
		split = inner // config.res2net_scale
		layout[f"{prefix}.conv1.weight"] = (f"{prefix}.conv1.weight", (slice(0, inner), slice(0, stem_width), every))
		layout[f"{prefix}.conv1.bias"] = (f"{prefix}.conv1.bias", (slice(0, inner),))
		add_bn(f"{prefix}.bn1", f"{prefix}.bn1", slice(0, inner))
		for split_index in range(1, config.res2net_scale):
			split_prefix = f"{prefix}.res2.{split_index}"
			layout[f"{split_prefix}.weight"] = (f"{split_prefix}.weight", (slice(0, split), slice(0, split), every))
			layout[f"{split_prefix}.bias"] = (f"{split_prefix}.bias", (slice(0, split),))
			add_bn(f"{split_prefix}.bn", f"{split_prefix}.bn", slice(0, split))
		layout[f"{prefix}.conv3.weight"] = (f"{prefix}.conv3.weight", (slice(0, stem_width), slice(0, inner), every))
		layout[f"{prefix}.conv3.bias"] = (f"{prefix}.conv3.bias", (slice(0, stem_width),))
		add_bn(f"{prefix}.bn3", f"{prefix}.bn3", slice(0, stem_width))
		layout[f"{prefix}.se.fc1.weight"] = (f"{prefix}.se.fc1.weight", (slice(0, squeeze), slice(0, stem_width)))
		layout[f"{prefix}.se.fc1.bias"] = (f"{prefix}.se.fc1.bias", (slice(0, squeeze),))
		layout[f"{prefix}.se.fc2.weight"] = (f"{prefix}.se.fc2.weight", (slice(0, stem_width), slice(0, squeeze)))
		layout[f"{prefix}.se.fc2.bias"] = (f"{prefix}.se.fc2.bias", (slice(0, stem_width),))
	# each block owns a max-width column segment of the transformation weight
	for index in range(spec.depth):
		columns = slice(index * front, index * front + stem_width)
		layout[f"transform.weight.segment{index}"] = ("transform.weight", (slice(0, out), columns, every))
	layout["transform.bias"] = ("transform.bias", (slice(0, out),))
	add_bn("transform.bn", "transform.bn", slice(0, out))
	layout["pool.attn1.weight"] = ("pool.attn1.weight", (every, slice(0, out), every))
	layout["pool.attn1.bias"] = ("pool.attn1.bias", (every,))
	layout["pool.attn2.weight"] = ("pool.attn2.weight", (slice(0, out), every, every))
	layout["pool.attn2.bias"] = ("pool.attn2.bias", (slice(0, out),))
	add_bn("pool.bn_mu", "pool.bn", slice(0, out))
	add_bn("pool.bn_sigma", "pool.bn", slice(back, back + out))
	layout["fc.weight.mu"] = ("fc.weight", (every, slice(0, out)))
	layout["fc.weight.sigma"] = ("fc.weight", (every, slice(back, back + out)))
	layout["fc.bias"] = ("fc.bias", (every,))
	add_bn("fc.bn", "fc.bn", every)
	return layout


#============================================
def _active_tensors(tape: Tape, weights: SupernetWeights, spec: SubnetSpec) -> dict[str, Tensor]:
	"""
	Slice the active weights onto the tape and materialize reduced kernels.
	"""
	config = weights.config
	tensors: dict[str, Tensor] = {}
	for static, (source, index) in _active_layout(weights, spec).items():
		variable = tape.variable(source, weights.params[source])
		tensors[static] = numerics.take(tape, variable, index)

	def shrink(prefix: str, target_k: int) -> None:
		matrices = {
			taps: tape.variable(name, weights.params[name])
			for taps, name in _transform_names(prefix, config).items()
		}
		name = f"{prefix}.weight"
		tensors[name] = _transform_kernel_tensor(tape, tensors[name], target_k, matrices, config.kernel_options)

	shrink("stem", spec.kernels[0])
	for index in range(1, spec.depth + 1):
		for split_index in range(1, config.res2net_scale):
			shrink(f"block{index}.res2.{split_index}", spec.kernels[index])
	segments = [tensors.pop(f"transform.weight.segment{index}") for index in range(spec.depth)]
	tensors["transform.weight"] = numerics.concat(tape, segments, axis=1)
	halves = [tensors.pop("fc.weight.mu"), tensors.pop("fc.weight.sigma")]
	tensors["fc.weight"] = numerics.concat(tape, halves, axis=1)
	return tensors


#============================================
def _active_stats(weights: SupernetWeights, spec: SubnetSpec) -> dict[str, tuple[numpy.ndarray, numpy.ndarray]]:
	"""
	Views into the running statistics of every active BN layer.
	"""
	config = weights.config
	layout = _active_layout(weights, spec)
	stats: dict[str, tuple[numpy.ndarray, numpy.ndarray]] = {}
	for name in _bn_layer_names(spec, config.res2net_scale):
		source, index = layout[f"{name}.gamma"]
		bn_source = source[: -len(".gamma")]
		running_mean = weights.buffers[f"{bn_source}.running_mean"][index]
		running_var = weights.buffers[f"{bn_source}.running_var"][index]
		stats[name] = (running_mean, running_var)
	return stats


#============================================
def _batch_norm(
	tape: Tape,
	tensors: dict[str, Tensor],
	stats: dict[str, tuple[numpy.ndarray, numpy.ndarray]],
	name: str,
	x: Tensor,
	training: bool,
	momentum: float,
) -> Tensor:
	running_mean, running_var = stats[name]
	return numerics.batchnorm1d(
		tape, x, tensors[f"{name}.gamma"], tensors[f"{name}.beta"],
		running_mean, running_var, training=training, momentum=momentum,
	)


#============================================
def _conv_relu_bn(
	tape: Tape,
	tensors: dict[str, Tensor],
	stats: dict[str, tuple[numpy.ndarray, numpy.ndarray]],
	conv: str,
	bn: str,
	x: Tensor,
	dilation: int,
	training: bool,
	momentum: float,
) -> Tensor:
	h = numerics.conv1d(tape, x, tensors[f"{conv}.weight"], tensors[f"{conv}.bias"], dilation=dilation)
	h = numerics.relu(tape, h)
	return _batch_norm(tape, tensors, stats, bn, h, training, momentum)


#============================================
def _se_res2net_block(
	tape: Tape,
	tensors: dict[str, Tensor],
	stats: dict[str, tuple[numpy.ndarray, numpy.ndarray]],
	index: int,
	spec: SubnetSpec,
	config: SupernetConfig,
	x: Tensor,
	training: bool,
	momentum: float,
) -> Tensor:
	prefix = f"block{index}"
	dilation = config.block_dilations[index - 1]
	scale = config.res2net_scale
	h = _conv_relu_bn(tape, tensors, stats, f"{prefix}.conv1", f"{prefix}.bn1", x, 1, training, momentum)
	split = spec.widths_front[index] // scale
	every = slice(None)
	chunks = [numerics.take(tape, h, (every, slice(part * split, (part + 1) * split), every)) for part in range(scale)]
	outputs = [chunks[0]]
	previous: Tensor | None = None
	for part in range(1, scale):
		merged = chunks[part] if previous is None else numerics.add(tape, chunks[part], previous)
		split_prefix = f"{prefix}.res2.{part}"
		previous = _conv_relu_bn(tape, tensors, stats, split_prefix, f"{split_prefix}.bn", merged, dilation, training, momentum)
		outputs.append(previous)
	h = numerics.concat(tape, outputs, axis=1)
	h = _conv_relu_bn(tape, tensors, stats, f"{prefix}.conv3", f"{prefix}.bn3", h, 1, training, momentum)
	# squeeze-excitation gate
	gate = numerics.mean_time(tape, h)
	gate = numerics.linear(tape, gate, tensors[f"{prefix}.se.fc1.weight"], tensors[f"{prefix}.se.fc1.bias"])
	gate = numerics.relu(tape, gate)
	gate = numerics.linear(tape, gate, tensors[f"{prefix}.se.fc2.weight"], tensors[f"{prefix}.se.fc2.bias"])
	gate = numerics.sigmoid(tape, gate)
	h = numerics.mul(tape, h, numerics.unsqueeze_time(tape, gate), count_macs=True)
	return numerics.add(tape, h, x)


#============================================
def _run_cells(
	tape: Tape,
	tensors: dict[str, Tensor],
	stats: dict[str, tuple[numpy.ndarray, numpy.ndarray]],
	spec: SubnetSpec,
	config: SupernetConfig,
	x: Tensor,
	training: bool,
	momentum: float,
) -> Tensor:
	h = _conv_relu_bn(tape, tensors, stats, "stem", "stem.bn", x, 1, training, momentum)
	block_outputs: list[Tensor] = []
	for index in range(1, spec.depth + 1):
		h = _se_res2net_block(tape, tensors, stats, index, spec, config, h, training, momentum)
		block_outputs.append(h)
	h = numerics.concat(tape, block_outputs, axis=1)
	h = _conv_relu_bn(tape, tensors, stats, "transform", "transform.bn", h, 1, training, momentum)
	scores = numerics.conv1d(tape, h, tensors["pool.attn1.weight"], tensors["pool.attn1.bias"])
	scores = numerics.tanh(tape, scores)
	scores = numerics.conv1d(tape, scores, tensors["pool.attn2.weight"], tensors["pool.attn2.bias"])
	pooled = numerics.attentive_stats_pool(tape, h, scores)
	channels = spec.width_back
	every = slice(None)
	mu = numerics.take(tape, pooled, (every, slice(0, channels)))
	sigma = numerics.take(tape, pooled, (every, slice(channels, 2 * channels)))
	mu = _batch_norm(tape, tensors, stats, "pool.bn_mu", mu, training, momentum)
	sigma = _batch_norm(tape, tensors, stats, "pool.bn_sigma", sigma, training, momentum)
	pooled = numerics.concat(tape, [mu, sigma], axis=1)
	embedding = numerics.linear(tape, pooled, tensors["fc.weight"], tensors["fc.bias"])
	return _batch_norm(tape, tensors, stats, "fc.bn", embedding, training, momentum)


#============================================
def forward_tensor(
	tape: Tape,
	weights: SupernetWeights,
	spec: SubnetSpec,
	x: Tensor,
	training: bool,
	momentum: float | None = None,
) -> Tensor:
	"""
	Run the active path of spec on the tape and return the embedding tensor.
	"""
	check_spec(spec, weights.config)
	_check_batch(x.data, weights.config)
	if momentum is None:
		momentum = weights.config.bn_momentum
	tensors = _active_tensors(tape, weights, spec)
	stats = _active_stats(weights, spec)
	return _run_cells(tape, tensors, stats, spec, weights.config, x, training, momentum)


#============================================
def forward(
	weights: SupernetWeights,
	spec: SubnetSpec,
	batch: numpy.ndarray,
	mode: str = "eval",
	mac_counter: numerics.MacCounter | None = None,
) -> numpy.ndarray:
	"""
	Speaker embeddings (B x embedding_dim) for a subnet, without recording.
	"""
	if mode not in ("train", "eval"):
		raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
	tape = Tape(record=False, mac_counter=mac_counter)
	x = tape.constant(batch)
	return forward_tensor(tape, weights, spec, x, training=(mode == "train")).data


#============================================
def export_subnet(weights: SupernetWeights, spec: SubnetSpec) -> ExportedSubnet:
	"""
	Materialize a standalone subnet; tap matrices are folded into the kernels.
	"""
	check_spec(spec, weights.config)
	tape = Tape(record=False)
	tensors = _active_tensors(tape, weights, spec)
	params = {name: numpy.array(tensor.data) for name, tensor in tensors.items()}
	buffers: dict[str, numpy.ndarray] = {}
	for name, (running_mean, running_var) in _active_stats(weights, spec).items():
		buffers[f"{name}.running_mean"] = numpy.array(running_mean)
		buffers[f"{name}.running_var"] = numpy.array(running_var)
	return ExportedSubnet(spec=spec, config=weights.config, params=params, buffers=buffers)


#============================================
def _iter_utterances(data: Iterable[numpy.ndarray]) -> Iterable[numpy.ndarray]:
	for item in data:
		array = numpy.asarray(item, dtype=numpy.float64)
		if array.ndim == 3:
			yield from array
		else:
			yield array


#============================================
def recalibrate_bn(
	weights: SupernetWeights,
	spec: SubnetSpec,
	data: Iterable[numpy.ndarray],
	n_utterances: int,
	batch_size: int,
) -> RecalibrationReport:
	"""
	Recompute running statistics of the active BN layers for one subnet.

	Active slices are reset, then every batch is forwarded in train mode with
	momentum 1/k so the running arrays end as the average of batch statistics.
	Statistics outside the active slices are untouched.
	"""
	check_spec(spec, weights.config)
	if n_utterances < 1 or batch_size < 1:
		raise ValueError("n_utterances and batch_size must be >= 1")
	utterances = list(itertools.islice(_iter_utterances(data), n_utterances))
	if len(utterances) < n_utterances:
		shortfall = n_utterances - len(utterances)
		raise DataShortfallError(
			f"recalibration needs {n_utterances} utterances, stream ended after {len(utterances)}",
			shortfall=shortfall,
		)
	stats = _active_stats(weights, spec)
	for running_mean, running_var in stats.values():
		running_mean[...] = 0.0
		running_var[...] = 1.0
	n_batches = 0
	for start in range(0, n_utterances, batch_size):
		n_batches += 1
		batch = numpy.stack(utterances[start:start + batch_size])
		tape = Tape(record=False)
		forward_tensor(tape, weights, spec, tape.constant(batch), training=True, momentum=1.0 / n_batches)
	finite = all(numpy.isfinite(mean).all() and numpy.isfinite(var).all() for mean, var in stats.values())
	return RecalibrationReport(
		spec=spec,
		n_utterances=n_utterances,
		n_batches=n_batches,
		layers=len(stats),
		finite=bool(finite),
	)
