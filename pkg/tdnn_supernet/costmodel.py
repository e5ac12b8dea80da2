"""
Efficiency estimators: closed-form MACs and params, an instrumented MAC
oracle, and operator-wise latency tables.

MAC convention: one MAC per multiply-accumulate for a single utterance of
T frames. BN, activations, softmax, and element-wise adds count zero; the
SE gate multiply, attention convs, and pooling moments are counted.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import json
import time
from typing import Protocol

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet import numerics
from tdnn_supernet import supernet
from tdnn_supernet.errors import CostTableError, ShapeError
from tdnn_supernet.log_utils import print_status
from tdnn_supernet.space import SpaceConfig, SubnetSpec
from tdnn_supernet.supernet import SupernetConfig, SupernetWeights

#============================================


@dataclass(slots=True)
class CostReport:
	macs: int
	params: int
	latency_ms: float | None = None
	frames: int = 300

	def to_dict(self) -> dict:
		return {"macs": self.macs, "params": self.params, "latency_ms": self.latency_ms, "frames": self.frames}


@dataclass(slots=True, frozen=True, order=True)
class LatencyKey:
	kind: str
	kernel: int
	c_in: int
	c_out: int
	frames: int

	def label(self) -> str:
		return f"{self.kind}(k={self.kernel}, in={self.c_in}, out={self.c_out}, T={self.frames})"

	def to_dict(self) -> dict:
		return {"kind": self.kind, "kernel": self.kernel, "c_in": self.c_in, "c_out": self.c_out, "frames": self.frames}

	@classmethod
	def from_dict(cls, data: dict) -> "LatencyKey":
		return cls(
			kind=str(data["kind"]),
			kernel=int(data["kernel"]),
			c_in=int(data["c_in"]),
			c_out=int(data["c_out"]),
			frames=int(data["frames"]),
		)


class LatencyRunner(Protocol):
	name: str

	def run(self, key: LatencyKey) -> float:
		"""
		Execute the cell described by key once and return wall time in ms.
		"""


@dataclass(slots=True)
class LatencyTable:
	device: str
	repeats: int
	warmup: int
	frames: int
	entries: dict[LatencyKey, float] = field(default_factory=dict)
	errors: dict[LatencyKey, str] = field(default_factory=dict)

	@property
	def low_confidence(self) -> bool:
		return self.repeats < 2

	@property
	def complete(self) -> bool:
		return not self.errors

	def to_dict(self) -> dict:
		entries = []
		for key in sorted(self.entries):
			item = key.to_dict()
			item["ms"] = self.entries[key]
			entries.append(item)
		errors = []
		for key in sorted(self.errors):
			item = key.to_dict()
			item["error"] = self.errors[key]
			errors.append(item)
		return {
			"device": self.device,
			"repeats": self.repeats,
			"warmup": self.warmup,
			"frames": self.frames,
			"low_confidence": self.low_confidence,
			"complete": self.complete,
			"entries": entries,
			"errors": errors,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "LatencyTable":
		for name in ("device", "repeats", "warmup", "frames", "entries"):
			if name not in data:
				raise CostTableError(f"latency table document is missing '{name}'")
		table = cls(
			device=str(data["device"]),
			repeats=int(data["repeats"]),
			warmup=int(data["warmup"]),
			frames=int(data["frames"]),
		)
		for item in data["entries"]:
			ms = float(item["ms"])
			if not ms > 0.0:
				raise CostTableError(f"latency entry {item} must be > 0 ms")
			table.entries[LatencyKey.from_dict(item)] = ms
		for item in data.get("errors", []):
			table.errors[LatencyKey.from_dict(item)] = str(item.get("error", ""))
		return table

	def save(self, path: str) -> None:
		with open(path, "w", encoding="utf-8") as handle:
			json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
			handle.write("\n")

	@classmethod
	def load(cls, path: str) -> "LatencyTable":
		with open(path, "r", encoding="utf-8") as handle:
			return cls.from_dict(json.load(handle))


#============================================
def _check_frames(frames: int) -> None:
	if frames < 1:
		raise ShapeError(f"frames must be >= 1, got {frames}", dimension="frames")


#============================================
def count_macs(spec: SubnetSpec, config: SupernetConfig, frames: int) -> int:
	"""
	Closed-form MACs of one utterance through the subnet.
	"""
	supernet.check_spec(spec, config)
	_check_frames(frames)
	scale = config.res2net_scale
	stem_width = spec.widths_front[0]
	out = spec.width_back
	macs = config.input_channels * stem_width * spec.kernels[0] * frames
	squeeze = config.se_width(stem_width)
	for index in range(1, spec.depth + 1):
		inner = spec.widths_front[index]
		split = inner // scale
		macs += stem_width * inner * frames
		macs += (scale - 1) * split * split * spec.kernels[index] * frames
		macs += inner * stem_width * frames
		macs += 2 * squeeze * stem_width + stem_width * frames
	macs += spec.depth * stem_width * out * frames
	macs += 2 * config.attention_channels * out * frames + 3 * out * frames
	macs += 2 * out * config.embedding_dim
	return int(macs)


#============================================
def count_params(spec: SubnetSpec, config: SupernetConfig) -> int:
	"""
	Weights, biases, and BN affine parameters of the exported subnet.
	"""
	supernet.check_spec(spec, config)
	scale = config.res2net_scale
	stem_width = spec.widths_front[0]
	out = spec.width_back
	attention = config.attention_channels
	embedding = config.embedding_dim
	total = config.input_channels * stem_width * spec.kernels[0] + 3 * stem_width
	squeeze = config.se_width(stem_width)
	for index in range(1, spec.depth + 1):
		inner = spec.widths_front[index]
		split = inner // scale
		total += stem_width * inner + 3 * inner
		total += (scale - 1) * (split * split * spec.kernels[index] + 3 * split)
		total += inner * stem_width + 3 * stem_width
		total += 2 * squeeze * stem_width + squeeze + stem_width
	total += spec.depth * stem_width * out + 3 * out
	total += 2 * attention * out + attention + out + 4 * out
	total += 2 * out * embedding + 3 * embedding
	return int(total)


#============================================
def instrumented_macs(
	spec: SubnetSpec,
	config: SupernetConfig,
	frames: int,
	weights: SupernetWeights | None = None,
	seed: int = 0,
) -> int:
	"""
	Count MACs by running the eval forward of one utterance with a counter.
	"""
	_check_frames(frames)
	if weights is None:
		weights = supernet.build(config)
	rng = numpy.random.default_rng(seed)
	batch = rng.normal(size=(1, config.input_channels, frames))
	counter = numerics.MacCounter()
	supernet.forward(weights, spec, batch, mode="eval", mac_counter=counter)
	return counter.total


#============================================
def cost_report(
	spec: SubnetSpec,
	config: SupernetConfig,
	frames: int,
	table: LatencyTable | None = None,
) -> CostReport:
	latency = None
	if table is not None:
		latency = estimate_latency(spec, table, config)
	return CostReport(
		macs=count_macs(spec, config, frames),
		params=count_params(spec, config),
		latency_ms=latency,
		frames=frames,
	)


#============================================
def spec_latency_keys(spec: SubnetSpec, config: SupernetConfig, frames: int) -> list[LatencyKey]:
	"""
	Operator keys along the active path of a subnet.
	"""
	supernet.check_spec(spec, config)
	stem_width = spec.widths_front[0]
	out = spec.width_back
	keys = [LatencyKey("stem", spec.kernels[0], config.input_channels, stem_width, frames)]
	for index in range(1, spec.depth + 1):
		keys.append(LatencyKey(f"block{index}", spec.kernels[index], stem_width, spec.widths_front[index], frames))
	keys.append(LatencyKey("transform", 1, spec.depth * stem_width, out, frames))
	keys.append(LatencyKey("pool", 1, out, 2 * out, frames))
	keys.append(LatencyKey("fc", 1, 2 * out, config.embedding_dim, frames))
	return keys


#============================================
def table_keys(space: SpaceConfig, config: SupernetConfig, frames: int) -> list[LatencyKey]:
	"""
	Every operator key a latency table for this space must cover.
	"""
	keys: set[LatencyKey] = set()
	for kernel in space.kernel_options:
		for width in space.width_front_options:
			keys.add(LatencyKey("stem", kernel, config.input_channels, width, frames))
	for index in range(1, max(space.depth_options) + 1):
		for kernel in space.kernel_options:
			for stem_width in space.width_front_options:
				for inner in space.width_front_options:
					keys.add(LatencyKey(f"block{index}", kernel, stem_width, inner, frames))
	for depth in space.depth_options:
		for stem_width in space.width_front_options:
			for out in space.width_back_options:
				keys.add(LatencyKey("transform", 1, depth * stem_width, out, frames))
	for out in space.width_back_options:
		keys.add(LatencyKey("pool", 1, out, 2 * out, frames))
		keys.add(LatencyKey("fc", 1, 2 * out, config.embedding_dim, frames))
	return sorted(keys)


#============================================
def build_latency_table(
	space: SpaceConfig,
	config: SupernetConfig,
	runner: LatencyRunner,
	repeats: int = 5,
	warmup: int = 1,
	frames: int | None = None,
	quiet: bool = True,
) -> LatencyTable:
	"""
	Time every operator key; each entry is the median of repeats after warmup.

	Runner failures are recorded per key and leave the table incomplete.
	"""
	if repeats < 1 or warmup < 0:
		raise ValueError("repeats must be >= 1 and warmup >= 0")
	frames = config.default_frames if frames is None else frames
	_check_frames(frames)
	table = LatencyTable(device=runner.name, repeats=repeats, warmup=warmup, frames=frames)
	keys = table_keys(space, config, frames)
	print_status("cost", f"timing {len(keys)} operator keys on {runner.name}", quiet=quiet)
	for key in keys:
		try:
			for _ in range(warmup):
				runner.run(key)
			timings = [float(runner.run(key)) for _ in range(repeats)]
		except Exception as exc:
			table.errors[key] = f"{type(exc).__name__}: {exc}"
			continue
		ms = float(numpy.median(timings))
		if not ms > 0.0:
			table.errors[key] = f"non-positive median {ms} ms"
			continue
		table.entries[key] = ms
	if table.errors:
		print_status("cost", f"latency table incomplete: {len(table.errors)} keys failed", quiet=quiet)
	if table.low_confidence:
		print_status("cost", "repeats=1: latency table flagged low-confidence", quiet=quiet)
	return table


#============================================
def estimate_latency(spec: SubnetSpec, table: LatencyTable, config: SupernetConfig) -> float:
	"""
	Sum of table entries along the active path, in milliseconds.
	"""
	total = 0.0
	for key in spec_latency_keys(spec, config, table.frames):
		ms = table.entries.get(key)
		if ms is None:
			raise CostTableError(f"latency table has no entry for {key.label()}", key=(key.kind, key.kernel, key.c_in, key.c_out))
		total += ms
	return total


#============================================


class LocalCellRunner:
	"""
	Times cells on this machine with the numpy engine.
	"""

	def __init__(self, weights: SupernetWeights, batch_size: int = 1, seed: int = 0) -> None:
		self.name = "local-numpy"
		self.weights = weights
		self.batch_size = batch_size
		self.rng = numpy.random.default_rng(seed)
		self._prepared: dict[LatencyKey, tuple] = {}

	def _block_subnet(self, key: LatencyKey) -> supernet.ExportedSubnet:
		config = self.weights.config
		index = int(key.kind[len("block"):])
		spec = SubnetSpec(
			depth=index,
			kernels=(key.kernel,) * (index + 1),
			widths_front=(key.c_in,) + (key.c_out,) * index,
			width_back=config.width_quantum,
		)
		return supernet.export_subnet(self.weights, spec)

	def _prepare(self, key: LatencyKey) -> tuple:
		prepared = self._prepared.get(key)
		if prepared is not None:
			return prepared
		batch = self.batch_size
		if key.kind.startswith("block"):
			subnet = self._block_subnet(key)
			x = self.rng.normal(size=(batch, key.c_in, key.frames))
			prepared = ("block", subnet, x)
		elif key.kind in ("stem", "transform"):
			x = self.rng.normal(size=(batch, key.c_in, key.frames))
			w = self.rng.normal(size=(key.c_out, key.c_in, key.kernel)) / numpy.sqrt(key.c_in * key.kernel)
			prepared = ("conv", x, w)
		elif key.kind == "pool":
			attention = self.weights.config.attention_channels
			x = self.rng.normal(size=(batch, key.c_in, key.frames))
			w1 = self.rng.normal(size=(attention, key.c_in, 1)) / numpy.sqrt(key.c_in)
			w2 = self.rng.normal(size=(key.c_in, attention, 1)) / numpy.sqrt(attention)
			prepared = ("pool", x, w1, w2)
		elif key.kind == "fc":
			x = self.rng.normal(size=(batch, key.c_in))
			w = self.rng.normal(size=(key.c_out, key.c_in)) / numpy.sqrt(key.c_in)
			prepared = ("fc", x, w)
		else:
			raise CostTableError(f"unknown cell kind '{key.kind}'", key=(key.kind,))
		self._prepared[key] = prepared
		return prepared

	def run(self, key: LatencyKey) -> float:
		prepared = self._prepare(key)
		kind = prepared[0]
		tape = numerics.Tape(record=False)
		start = time.perf_counter()
		if kind == "block":
			prepared[1].run_block(int(key.kind[len("block"):]), prepared[2])
		elif kind == "conv":
			h = numerics.conv1d(tape, tape.constant(prepared[1]), tape.constant(prepared[2]))
			numerics.relu(tape, h)
		elif kind == "pool":
			x = tape.constant(prepared[1])
			scores = numerics.tanh(tape, numerics.conv1d(tape, x, tape.constant(prepared[2])))
			scores = numerics.conv1d(tape, scores, tape.constant(prepared[3]))
			numerics.attentive_stats_pool(tape, x, scores)
		else:
			numerics.linear(tape, tape.constant(prepared[1]), tape.constant(prepared[2]))
		return (time.perf_counter() - start) * 1000.0
