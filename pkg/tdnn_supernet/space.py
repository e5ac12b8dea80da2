"""
Architecture search space: subnet specs, option sets, sampling, and sizes.

A subnet is (depth, kernels, widths_front, width_back). Position 0 of the
kernel and front-width lists is the stem; position i is block i. Blocks past
the depth are skipped, so both lists hold exactly depth + 1 entries.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import itertools
import math
from typing import Iterator

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet.errors import ConfigError, SpecValidationError

#============================================


STAGES = ("largest", "kernel", "depth", "width1", "width2")
DEFAULT_DEPTHS = (2, 3, 4)
DEFAULT_KERNELS = (1, 3, 5)
FULL_FRONT_WIDTH = 512
FULL_BACK_WIDTH = 1536
FULL_WIDTH_QUANTUM = 8
FULL_MIN_FRONT_WIDTH = 128
FULL_MIN_BACK_WIDTH = 384
STAGE_WIDTH_MULTIPLIERS = {
	"width1": (0.5, 0.75, 1.0),
	"width2": (0.25, 0.35, 0.5, 0.75, 1.0),
}
DEPLOYED_SUBNETS = {
	"Small": {"depth": 2, "kernels": [3, 3, 3], "widths": [256, 256, 256], "width_back": 400},
	"Mobile": {"depth": 3, "kernels": [5, 3, 3, 3], "widths": [384, 256, 256, 256], "width_back": 768},
	"Base": {"depth": 3, "kernels": [5, 3, 3, 3], "widths": [512, 512, 512, 512], "width_back": 1536},
}


#============================================


@dataclass(slots=True, frozen=True)
class SubnetSpec:
	depth: int
	kernels: tuple[int, ...]
	widths_front: tuple[int, ...]
	width_back: int

	def to_dict(self) -> dict:
		return {
			"depth": self.depth,
			"kernels": list(self.kernels),
			"widths": list(self.widths_front),
			"width_back": self.width_back,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "SubnetSpec":
		missing = [key for key in ("depth", "kernels", "widths", "width_back") if key not in data]
		if missing:
			raise SpecValidationError(f"subnet spec is missing fields: {', '.join(missing)}")
		return cls(
			depth=int(data["depth"]),
			kernels=tuple(int(value) for value in data["kernels"]),
			widths_front=tuple(int(value) for value in data["widths"]),
			width_back=int(data["width_back"]),
		)

	@property
	def stem_width(self) -> int:
		return self.widths_front[0]

	def label(self) -> str:
		kernels = ",".join(str(value) for value in self.kernels)
		widths = ",".join(str(value) for value in self.widths_front)
		return f"({self.depth}, {{{kernels}}}, {{{widths}}}, {self.width_back})"


@dataclass(slots=True)
class SpaceConfig:
	depth_options: tuple[int, ...] = DEFAULT_DEPTHS
	kernel_options: tuple[int, ...] = DEFAULT_KERNELS
	width_front_options: tuple[int, ...] = (128, 176, 256, 384, 512)
	width_back_options: tuple[int, ...] = (384, 536, 768, 1152, 1536)
	granularity_c: int = FULL_WIDTH_QUANTUM
	stage: str = "width2"
	# tied grid mode: one kernel and one width for every cell, back width = 3 * width
	grid: bool = False

	def __post_init__(self) -> None:
		self.depth_options = tuple(int(value) for value in self.depth_options)
		self.kernel_options = tuple(int(value) for value in self.kernel_options)
		self.width_front_options = tuple(int(value) for value in self.width_front_options)
		self.width_back_options = tuple(int(value) for value in self.width_back_options)
		self.check()

	#============================================
	def check(self) -> None:
		"""
		Raise ConfigError when option sets break the space invariants.
		"""
		if self.stage not in STAGES:
			raise ConfigError(f"unknown stage '{self.stage}', expected one of {', '.join(STAGES)}")
		if self.granularity_c < 1:
			raise ConfigError("granularity_c must be positive")
		named_sets = (
			("depth_options", self.depth_options),
			("kernel_options", self.kernel_options),
			("width_front_options", self.width_front_options),
			("width_back_options", self.width_back_options),
		)
		for name, options in named_sets:
			if not options:
				raise ConfigError(f"{name} is empty")
			if any(later <= earlier for earlier, later in zip(options, options[1:])):
				raise ConfigError(f"{name} must be strictly increasing: {list(options)}")
		if min(self.depth_options) < 1:
			raise ConfigError("depth options must be positive")
		for kernel in self.kernel_options:
			if kernel < 1 or kernel % 2 == 0:
				raise ConfigError(f"kernel option {kernel} must be a positive odd integer")
		# widths sit on a lattice of step c anchored at the smallest option
		for options in (self.width_front_options, self.width_back_options):
			for width in options:
				if width < 1 or (width - options[0]) % self.granularity_c != 0:
					raise ConfigError(f"width option {width} is not {options[0]} plus a multiple of c={self.granularity_c}")
		if self.stage == "largest":
			for name, options in named_sets:
				if len(options) != 1:
					raise ConfigError(f"stage 'largest' requires singleton {name}")
		if self.grid:
			expected = tuple(3 * width for width in self.width_front_options)
			if self.width_back_options != expected:
				raise ConfigError("grid mode requires width_back_options = 3 * width_front_options")

	@property
	def max_positions(self) -> int:
		return max(self.depth_options) + 1

	def to_dict(self) -> dict:
		return {
			"depth_options": list(self.depth_options),
			"kernel_options": list(self.kernel_options),
			"width_front_options": list(self.width_front_options),
			"width_back_options": list(self.width_back_options),
			"granularity_c": self.granularity_c,
			"stage": self.stage,
			"grid": self.grid,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "SpaceConfig":
		known = {"depth_options", "kernel_options", "width_front_options", "width_back_options", "granularity_c", "stage", "grid"}
		unknown = sorted(set(data) - known)
		if unknown:
			raise ConfigError(f"unknown space config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class SamplerState:
	rng_seed: int = 0
	draw_count: int = 0


@dataclass(slots=True)
class ValidationResult:
	ok: bool
	reason: str = ""
	violations: list[str] = field(default_factory=list)


#============================================
def quantize_width(width: float, quantum: int) -> int:
	"""
	Round a width down to the nearest multiple of the quantum.
	"""
	return int(math.floor(width / quantum + 1e-9)) * quantum


#============================================
def multiplier_widths(max_width: int, multipliers: tuple[float, ...], quantum: int) -> tuple[int, ...]:
	widths = [quantize_width(max_width * value, quantum) for value in multipliers]
	return tuple(widths)


#============================================
def training_space(
	stage: str,
	max_front: int = FULL_FRONT_WIDTH,
	max_back: int = FULL_BACK_WIDTH,
	quantum: int = FULL_WIDTH_QUANTUM,
	depth_options: tuple[int, ...] = DEFAULT_DEPTHS,
	kernel_options: tuple[int, ...] = DEFAULT_KERNELS,
) -> SpaceConfig:
	"""
	Build the sampling space of one progressive-training stage.

	Each stage adds one dynamic dimension to the previous stage; dimensions
	not yet dynamic are pinned to their maxima.
	"""
	if stage not in STAGES:
		raise ConfigError(f"unknown stage '{stage}'")
	order = STAGES.index(stage)
	depths = tuple(depth_options) if order >= STAGES.index("depth") else (max(depth_options),)
	kernels = tuple(kernel_options) if order >= STAGES.index("kernel") else (max(kernel_options),)
	if stage in STAGE_WIDTH_MULTIPLIERS:
		multipliers = STAGE_WIDTH_MULTIPLIERS[stage]
		fronts = multiplier_widths(max_front, multipliers, quantum)
		backs = multiplier_widths(max_back, multipliers, quantum)
	else:
		fronts = (max_front,)
		backs = (max_back,)
	return SpaceConfig(
		depth_options=depths,
		kernel_options=kernels,
		width_front_options=fronts,
		width_back_options=backs,
		granularity_c=quantum,
		stage=stage,
	)


#============================================
def coarse_space(
	max_front: int = FULL_FRONT_WIDTH,
	max_back: int = FULL_BACK_WIDTH,
	quantum: int = FULL_WIDTH_QUANTUM,
) -> SpaceConfig:
	"""
	Space the supernet was trained on: every dimension dynamic, five widths each.
	"""
	return training_space("width2", max_front, max_back, quantum)


#============================================
def fine_space(
	granularity_c: int = FULL_WIDTH_QUANTUM,
	min_front: int = FULL_MIN_FRONT_WIDTH,
	max_front: int = FULL_FRONT_WIDTH,
	min_back: int = FULL_MIN_BACK_WIDTH,
	max_back: int = FULL_BACK_WIDTH,
) -> SpaceConfig:
	"""
	Space with width options every granularity_c channels between the bounds.
	"""
	fronts = tuple(range(min_front, max_front + 1, granularity_c))
	backs = tuple(range(min_back, max_back + 1, granularity_c))
	return SpaceConfig(
		width_front_options=fronts,
		width_back_options=backs,
		granularity_c=granularity_c,
	)


#============================================
def grid_space(
	granularity_c: int = FULL_WIDTH_QUANTUM,
	min_front: int = FULL_MIN_FRONT_WIDTH,
	max_front: int = FULL_FRONT_WIDTH,
	depth_options: tuple[int, ...] = DEFAULT_DEPTHS,
	kernel_options: tuple[int, ...] = DEFAULT_KERNELS,
) -> SpaceConfig:
	"""
	Tied space a_grid(D, K, C): one kernel, one width, back width 3C.
	"""
	fronts = tuple(range(min_front, max_front + 1, granularity_c))
	return SpaceConfig(
		depth_options=depth_options,
		kernel_options=kernel_options,
		width_front_options=fronts,
		width_back_options=tuple(3 * width for width in fronts),
		granularity_c=granularity_c,
		grid=True,
	)


#============================================
def grid_spec(depth: int, kernel: int, width: int) -> SubnetSpec:
	return SubnetSpec(
		depth=depth,
		kernels=(kernel,) * (depth + 1),
		widths_front=(width,) * (depth + 1),
		width_back=3 * width,
	)


#============================================
def validate(spec: SubnetSpec, config: SpaceConfig) -> ValidationResult:
	"""
	Check a spec against a space; never raises.
	"""
	violations: list[str] = []
	if spec.depth not in config.depth_options:
		violations.append(f"depth {spec.depth} not in {list(config.depth_options)}")
	positions = spec.depth + 1
	if len(spec.kernels) != positions:
		violations.append(f"kernels has {len(spec.kernels)} entries, expected depth+1={positions}")
	if len(spec.widths_front) != positions:
		violations.append(f"widths has {len(spec.widths_front)} entries, expected depth+1={positions}")
	for index, kernel in enumerate(spec.kernels):
		if kernel not in config.kernel_options:
			violations.append(f"kernel {kernel} at position {index} not in {list(config.kernel_options)}")
	for index, width in enumerate(spec.widths_front):
		if width not in config.width_front_options:
			violations.append(f"width {width} at position {index} not in front options")
	if spec.width_back not in config.width_back_options:
		violations.append(f"width_back {spec.width_back} not in back options")
	if config.grid and not violations:
		tied = len(set(spec.kernels)) == 1 and len(set(spec.widths_front)) == 1
		if not tied or spec.width_back != 3 * spec.widths_front[0]:
			violations.append("grid space requires tied kernels and widths with width_back = 3 * width")
	if violations:
		return ValidationResult(ok=False, reason=violations[0], violations=violations)
	return ValidationResult(ok=True)


#============================================
def require_valid(spec: SubnetSpec, config: SpaceConfig) -> None:
	result = validate(spec, config)
	if not result.ok:
		raise SpecValidationError(result.reason)


#============================================
def space_size(config: SpaceConfig) -> int:
	"""
	Exact number of distinct subnets in the space.
	"""
	n_kernels = len(config.kernel_options)
	n_front = len(config.width_front_options)
	n_back = len(config.width_back_options)
	if config.grid:
		return len(config.depth_options) * n_kernels * n_front
	total = 0
	for depth in config.depth_options:
		total += (n_kernels ** (depth + 1)) * (n_front ** (depth + 1)) * n_back
	return total


#============================================
def degrees_of_freedom(config: SpaceConfig) -> int:
	"""
	Count the dynamic dimensions of the full supernet shape.
	"""
	dynamic_depth = 1 if len(config.depth_options) > 1 else 0
	if config.grid:
		dynamic_kernel = 1 if len(config.kernel_options) > 1 else 0
		dynamic_width = 1 if len(config.width_front_options) > 1 else 0
		return dynamic_depth + dynamic_kernel + dynamic_width
	positions = config.max_positions
	count = dynamic_depth
	if len(config.kernel_options) > 1:
		count += positions
	if len(config.width_front_options) > 1:
		count += positions
	if len(config.width_back_options) > 1:
		count += 1
	return count


#============================================
def sample_subnet(config: SpaceConfig, state: SamplerState) -> SubnetSpec:
	"""
	Draw one subnet uniformly per dimension and advance the sampler state.

	The draw depends only on (rng_seed, draw_count), so a state copied at
	any point replays the same sequence.
	"""
	rng = numpy.random.default_rng([state.rng_seed, state.draw_count])
	state.draw_count += 1
	depth = config.depth_options[int(rng.integers(len(config.depth_options)))]
	positions = config.max_positions
	kernel_idx = rng.integers(len(config.kernel_options), size=positions)
	width_idx = rng.integers(len(config.width_front_options), size=positions)
	back_idx = int(rng.integers(len(config.width_back_options)))
	if config.grid:
		width = config.width_front_options[int(width_idx[0])]
		return grid_spec(depth, config.kernel_options[int(kernel_idx[0])], width)
	kernels = tuple(config.kernel_options[int(idx)] for idx in kernel_idx[: depth + 1])
	widths = tuple(config.width_front_options[int(idx)] for idx in width_idx[: depth + 1])
	return SubnetSpec(
		depth=depth,
		kernels=kernels,
		widths_front=widths,
		width_back=config.width_back_options[back_idx],
	)


#============================================
def sample_many(config: SpaceConfig, state: SamplerState, count: int) -> list[SubnetSpec]:
	return [sample_subnet(config, state) for _ in range(count)]


#============================================
def enumerate_grid(config: SpaceConfig) -> list[SubnetSpec]:
	"""
	All tied subnets in lexicographic (D, K, C) order.
	"""
	if not config.grid:
		raise ConfigError("enumerate_grid requires a grid-mode space")
	specs: list[SubnetSpec] = []
	for depth in config.depth_options:
		for kernel in config.kernel_options:
			for width in config.width_front_options:
				specs.append(grid_spec(depth, kernel, width))
	return specs


#============================================
def iter_subnets(config: SpaceConfig) -> Iterator[SubnetSpec]:
	"""
	Brute-force enumeration of every subnet in the space.
	"""
	if config.grid:
		yield from enumerate_grid(config)
		return
	for depth in config.depth_options:
		positions = depth + 1
		for kernels in itertools.product(config.kernel_options, repeat=positions):
			for widths in itertools.product(config.width_front_options, repeat=positions):
				for back in config.width_back_options:
					yield SubnetSpec(depth=depth, kernels=kernels, widths_front=widths, width_back=back)


#============================================
def onehot_length(config: SpaceConfig) -> int:
	positions = config.max_positions
	return (
		len(config.depth_options)
		+ positions * len(config.kernel_options)
		+ positions * len(config.width_front_options)
		+ len(config.width_back_options)
	)


#============================================
def encode_onehot(spec: SubnetSpec, config: SpaceConfig) -> numpy.ndarray:
	"""
	One-hot blocks for depth, per-position kernel, per-position width, back width.

	Positions past the depth stay all-zero.
	"""
	require_valid(spec, config)
	vector = numpy.zeros(onehot_length(config), dtype=numpy.float64)
	positions = config.max_positions
	n_kernels = len(config.kernel_options)
	n_front = len(config.width_front_options)
	offset = 0
	vector[offset + config.depth_options.index(spec.depth)] = 1.0
	offset += len(config.depth_options)
	for position, kernel in enumerate(spec.kernels):
		vector[offset + position * n_kernels + config.kernel_options.index(kernel)] = 1.0
	offset += positions * n_kernels
	for position, width in enumerate(spec.widths_front):
		vector[offset + position * n_front + config.width_front_options.index(width)] = 1.0
	offset += positions * n_front
	vector[offset + config.width_back_options.index(spec.width_back)] = 1.0
	return vector


#============================================
def bounds(config: SpaceConfig) -> tuple[SubnetSpec, SubnetSpec]:
	"""
	Return (a_min, a_max) built from the extreme option of every dimension.
	"""
	low_depth = min(config.depth_options)
	high_depth = max(config.depth_options)
	if config.grid:
		low = grid_spec(low_depth, min(config.kernel_options), min(config.width_front_options))
		high = grid_spec(high_depth, max(config.kernel_options), max(config.width_front_options))
		return low, high
	low = SubnetSpec(
		depth=low_depth,
		kernels=(min(config.kernel_options),) * (low_depth + 1),
		widths_front=(min(config.width_front_options),) * (low_depth + 1),
		width_back=min(config.width_back_options),
	)
	high = SubnetSpec(
		depth=high_depth,
		kernels=(max(config.kernel_options),) * (high_depth + 1),
		widths_front=(max(config.width_front_options),) * (high_depth + 1),
		width_back=max(config.width_back_options),
	)
	return low, high


#============================================
def named_subnets(
	max_front: int = FULL_FRONT_WIDTH,
	max_back: int = FULL_BACK_WIDTH,
	quantum: int = FULL_WIDTH_QUANTUM,
) -> dict[str, SubnetSpec]:
	"""
	Stage bound subnets, plus the deployed Small/Mobile/Base at full scale.
	"""
	named = {
		"a_max": bounds(training_space("largest", max_front, max_back, quantum))[1],
		"a_Kmin": bounds(training_space("kernel", max_front, max_back, quantum))[0],
		"a_Dmin": bounds(training_space("depth", max_front, max_back, quantum))[0],
		"a_C1min": bounds(training_space("width1", max_front, max_back, quantum))[0],
		"a_C2min": bounds(training_space("width2", max_front, max_back, quantum))[0],
	}
	if max_front == FULL_FRONT_WIDTH and max_back == FULL_BACK_WIDTH:
		for name, data in DEPLOYED_SUBNETS.items():
			named[name] = SubnetSpec.from_dict(data)
	return named


#============================================
def is_subset_space(inner: SpaceConfig, outer: SpaceConfig) -> bool:
	"""
	True when every option set of inner is contained in outer's.
	"""
	pairs = (
		(inner.depth_options, outer.depth_options),
		(inner.kernel_options, outer.kernel_options),
		(inner.width_front_options, outer.width_front_options),
		(inner.width_back_options, outer.width_back_options),
	)
	return all(set(small) <= set(large) for small, large in pairs)
