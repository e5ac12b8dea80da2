"""
Constrained architecture search: minimize an accuracy metric (EER or DCF)
subject to an efficiency budget, by grid, random, or evolutionary search.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
from typing import Callable, Sequence

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet import costmodel
from tdnn_supernet.costmodel import LatencyTable
from tdnn_supernet.errors import ConfigError
from tdnn_supernet.log_utils import append_jsonl, format_fields, print_status
from tdnn_supernet.space import SamplerState, SpaceConfig, SubnetSpec, grid_spec, sample_subnet, space_size, validate
from tdnn_supernet.supernet import SupernetConfig

#============================================


COST_METRICS = ("macs", "params", "latency_ms")
NOVELTY_RETRIES = 8
IMMIGRANT_RETRIES = 32

AccuracyFn = Callable[[SubnetSpec], float]
CostFn = Callable[[SubnetSpec], float]


#============================================


@dataclass(slots=True)
class Constraint:
	metric: str
	budget: float
	frames: int = 300

	def __post_init__(self) -> None:
		if self.metric not in COST_METRICS:
			raise ConfigError(f"constraint metric must be one of {', '.join(COST_METRICS)}, got '{self.metric}'")
		if not self.budget > 0:
			raise ConfigError(f"budget must be > 0, got {self.budget}")
		if self.frames < 1:
			raise ConfigError("frames must be >= 1")

	def to_dict(self) -> dict:
		return {"metric": self.metric, "budget": self.budget, "frames": self.frames}


@dataclass(slots=True)
class EvolutionConfig:
	population: int = 50
	mutation_rate: float = 0.1
	generations: int = 200
	elitism: int = 1
	tournament: int = 2
	seed: int = 0

	def __post_init__(self) -> None:
		if self.population < 2:
			raise ConfigError("population must be >= 2")
		if not 0.0 <= self.mutation_rate <= 1.0:
			raise ConfigError(f"mutation_rate must be in [0, 1], got {self.mutation_rate}")
		if self.generations < 0:
			raise ConfigError("generations must be >= 0")
		if not 0 <= self.elitism < self.population:
			raise ConfigError("elitism must be in [0, population)")
		if self.tournament < 1:
			raise ConfigError("tournament size must be >= 1")

	def to_dict(self) -> dict:
		return {
			"population": self.population,
			"mutation_rate": self.mutation_rate,
			"generations": self.generations,
			"elitism": self.elitism,
			"tournament": self.tournament,
			"seed": self.seed,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "EvolutionConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown evolution config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class SearchResult:
	method: str
	constraint: Constraint
	best_spec: SubnetSpec | None = None
	best_accuracy: float | None = None
	best_cost: float | None = None
	feasible_count: int = 0
	evaluated_count: int = 0
	log: list[dict] = field(default_factory=list)
	samples: list[dict] = field(default_factory=list)

	@property
	def feasibility_rate(self) -> float:
		return self.feasible_count / self.evaluated_count if self.evaluated_count else 0.0

	def to_dict(self) -> dict:
		return {
			"method": self.method,
			"constraint": self.constraint.to_dict(),
			"best_spec": None if self.best_spec is None else self.best_spec.to_dict(),
			"best_metrics": {"accuracy": self.best_accuracy, "cost": self.best_cost},
			"feasible_count": self.feasible_count,
			"evaluated_count": self.evaluated_count,
			"feasibility_rate": self.feasibility_rate,
			"log": self.log,
		}


#============================================
def make_cost_fn(
	constraint: Constraint,
	config: SupernetConfig,
	table: LatencyTable | None = None,
) -> CostFn:
	"""
	Cost function for a constraint metric, backed by the cost model.
	"""
	if constraint.metric == "macs":
		return lambda spec: float(costmodel.count_macs(spec, config, constraint.frames))
	if constraint.metric == "params":
		return lambda spec: float(costmodel.count_params(spec, config))
	if table is None:
		raise ConfigError("a latency constraint needs a latency table")
	return lambda spec: costmodel.estimate_latency(spec, table, config)


#============================================
def _scan(
	method: str,
	specs: Sequence[SubnetSpec],
	evaluator: AccuracyFn,
	constraint: Constraint,
	cost_fn: CostFn,
	evaluate_all: bool,
) -> SearchResult:
	result = SearchResult(method=method, constraint=constraint)
	for spec in specs:
		cost = float(cost_fn(spec))
		feasible = cost <= constraint.budget
		accuracy = float(evaluator(spec)) if feasible or evaluate_all else None
		result.evaluated_count += 1
		result.samples.append({"spec": spec, "cost": cost, "accuracy": accuracy, "feasible": feasible})
		if not feasible:
			continue
		result.feasible_count += 1
		# strict comparison keeps the first spec on ties
		if result.best_accuracy is None or accuracy < result.best_accuracy:
			result.best_spec = spec
			result.best_accuracy = accuracy
			result.best_cost = cost
	return result


#============================================
def grid_search(
	grid: Sequence[SubnetSpec],
	evaluator: AccuracyFn,
	constraint: Constraint,
	cost_fn: CostFn,
	evaluate_all: bool = False,
) -> SearchResult:
	"""
	Evaluate every feasible grid member and return the lowest metric.
	"""
	return _scan("grid", grid, evaluator, constraint, cost_fn, evaluate_all)


#============================================
def random_search(
	space: SpaceConfig,
	n: int,
	evaluator: AccuracyFn,
	constraint: Constraint,
	cost_fn: CostFn,
	seed: int = 0,
	evaluate_all: bool = False,
) -> SearchResult:
	"""
	Sample n specs uniformly and return the best feasible one.
	"""
	if n < 1:
		raise ValueError("random search needs n >= 1")
	state = SamplerState(rng_seed=seed)
	specs = [sample_subnet(space, state) for _ in range(n)]
	return _scan("random", specs, evaluator, constraint, cost_fn, evaluate_all)


#============================================
def distribution_summary(values: Sequence[float], bins: int = 10) -> dict:
	"""
	Histogram of a metric with the percentage of samples in each bin.
	"""
	array = numpy.asarray([value for value in values if value is not None], dtype=numpy.float64)
	if array.size == 0:
		return {"count": 0, "edges": [], "counts": [], "percent": []}
	counts, edges = numpy.histogram(array, bins=bins)
	return {
		"count": int(array.size),
		"min": float(array.min()),
		"max": float(array.max()),
		"mean": float(array.mean()),
		"edges": [float(value) for value in edges],
		"counts": [int(value) for value in counts],
		"percent": [float(100.0 * value / array.size) for value in counts],
	}


#============================================


class _Genome:
	"""
	Integer gene layout over a space.

	Free spaces: [depth, kernel x P, width x P, back] with P = max depth + 1;
	genes past the decoded depth stay latent so crossover can regrow them.
	Grid spaces: [depth, kernel, width].
	"""

	def __init__(self, space: SpaceConfig) -> None:
		self.space = space
		if space.grid:
			self.sizes = [len(space.depth_options), len(space.kernel_options), len(space.width_front_options)]
		else:
			positions = space.max_positions
			self.sizes = (
				[len(space.depth_options)]
				+ [len(space.kernel_options)] * positions
				+ [len(space.width_front_options)] * positions
				+ [len(space.width_back_options)]
			)
		self.sizes_array = numpy.array(self.sizes)

	def random(self, rng: numpy.random.Generator) -> numpy.ndarray:
		return rng.integers(0, self.sizes_array)

	def decode(self, genes: numpy.ndarray) -> SubnetSpec:
		space = self.space
		depth = space.depth_options[int(genes[0])]
		if space.grid:
			return grid_spec(depth, space.kernel_options[int(genes[1])], space.width_front_options[int(genes[2])])
		positions = space.max_positions
		kernel_genes = genes[1:1 + positions]
		width_genes = genes[1 + positions:1 + 2 * positions]
		return SubnetSpec(
			depth=depth,
			kernels=tuple(space.kernel_options[int(gene)] for gene in kernel_genes[:depth + 1]),
			widths_front=tuple(space.width_front_options[int(gene)] for gene in width_genes[:depth + 1]),
			width_back=space.width_back_options[int(genes[-1])],
		)

	def encode(self, spec: SubnetSpec) -> numpy.ndarray:
		space = self.space
		if space.grid:
			return numpy.array([
				space.depth_options.index(spec.depth),
				space.kernel_options.index(spec.kernels[0]),
				space.width_front_options.index(spec.widths_front[0]),
			])
		positions = space.max_positions
		kernels = list(spec.kernels) + [spec.kernels[-1]] * (positions - len(spec.kernels))
		widths = list(spec.widths_front) + [spec.widths_front[-1]] * (positions - len(spec.widths_front))
		return numpy.array(
			[space.depth_options.index(spec.depth)]
			+ [space.kernel_options.index(value) for value in kernels]
			+ [space.width_front_options.index(value) for value in widths]
			+ [space.width_back_options.index(spec.width_back)]
		)

	def crossover(self, a: numpy.ndarray, b: numpy.ndarray, rng: numpy.random.Generator) -> numpy.ndarray:
		take_b = rng.random(a.size) < 0.5
		return numpy.where(take_b, b, a)

	def mutate(self, genes: numpy.ndarray, rate: float, rng: numpy.random.Generator) -> numpy.ndarray:
		flip = rng.random(genes.size) < rate
		fresh = rng.integers(0, self.sizes_array)
		return numpy.where(flip, fresh, genes)

	def nudge(self, genes: numpy.ndarray, rng: numpy.random.Generator) -> numpy.ndarray:
		"""
		Move exactly one gene with more than one option to a different value.
		"""
		movable = numpy.flatnonzero(self.sizes_array > 1)
		out = genes.copy()
		if movable.size == 0:
			return out
		index = int(movable[rng.integers(movable.size)])
		shift = int(rng.integers(1, self.sizes[index]))
		out[index] = (out[index] + shift) % self.sizes[index]
		return out


#============================================
def mpea(
	space: SpaceConfig,
	accuracy_fn: AccuracyFn,
	constraint: Constraint,
	cost_fn: CostFn,
	evo: EvolutionConfig,
	initial_population: Sequence[SubnetSpec] | None = None,
	verify_cost_fn: CostFn | None = None,
	log_path: str | None = None,
	quiet: bool = True,
) -> SearchResult:
	"""
	Evolutionary search guided by accuracy_fn under a budget.

	Selection is a feasibility-first tournament: feasible beats infeasible,
	feasible ties break on the metric, infeasible ones on budget overshoot.
	Children that repeat a spec already scored or already in the generation
	are steered to unseen ones. Scored feasible specs are then re-costed best
	first, and the first one within budget is returned.
	"""
	rng = numpy.random.default_rng(evo.seed)
	genome = _Genome(space)
	total = space_size(space)
	cache: dict[SubnetSpec, tuple[float, float]] = {}
	result = SearchResult(method="mpea", constraint=constraint)

	def evaluate(spec: SubnetSpec) -> tuple[float, float]:
		cached = cache.get(spec)
		if cached is None:
			cost = float(cost_fn(spec))
			feasible = cost <= constraint.budget
			# infeasible specs are ranked by overshoot only
			accuracy = float(accuracy_fn(spec)) if feasible else float("inf")
			cached = (accuracy, cost)
			cache[spec] = cached
			result.evaluated_count += 1
			if feasible:
				result.feasible_count += 1
		return cached

	def rank_key(spec: SubnetSpec) -> tuple[int, float]:
		accuracy, cost = evaluate(spec)
		if cost <= constraint.budget:
			return (0, accuracy)
		return (1, cost - constraint.budget)

	population: list[numpy.ndarray] = []
	for spec in initial_population or []:
		if len(population) == evo.population:
			break
		population.append(genome.encode(spec))
	while len(population) < evo.population:
		population.append(genome.random(rng))

	best_spec: SubnetSpec | None = None
	best_accuracy: float | None = None
	for generation in range(evo.generations + 1):
		if generation > 0:
			specs = [genome.decode(genes) for genes in population]
			order = sorted(range(len(population)), key=lambda index: (rank_key(specs[index]), index))
			children = [population[index].copy() for index in order[:evo.elitism]]

			def tournament() -> numpy.ndarray:
				picks = rng.integers(0, len(population), size=evo.tournament)
				winner = min(picks, key=lambda index: (rank_key(specs[int(index)]), int(index)))
				return population[int(winner)]

			taken = {genome.decode(genes) for genes in children}
			while len(children) < evo.population:
				child = genome.mutate(genome.crossover(tournament(), tournament(), rng), evo.mutation_rate, rng)
				if len(cache) < total:
					child = _novel_child(genome, child, taken, cache, rng)
				taken.add(genome.decode(child))
				children.append(child)
			population = children
		specs = [genome.decode(genes) for genes in population]
		feasible_scores = []
		for spec in specs:
			accuracy, cost = evaluate(spec)
			if cost > constraint.budget:
				continue
			feasible_scores.append(accuracy)
			if best_accuracy is None or accuracy < best_accuracy:
				best_spec = spec
				best_accuracy = accuracy
		entry = {
			"generation": generation,
			"best": best_accuracy,
			"mean": float(numpy.mean(feasible_scores)) if feasible_scores else None,
			"feasible": len(feasible_scores),
		}
		result.log.append(entry)
		append_jsonl(log_path, dict(entry, best_spec=None if best_spec is None else best_spec.to_dict()))
		if generation % 50 == 0:
			print_status("search", format_fields(generation=generation, best=best_accuracy, feasible=len(feasible_scores)), quiet=quiet)

	check = verify_cost_fn or cost_fn
	feasible = sorted(
		(accuracy, index, spec)
		for index, (spec, (accuracy, cost)) in enumerate(cache.items())
		if cost <= constraint.budget
	)
	# walk feasible specs best first until one survives the real cost check
	for accuracy, _, spec in feasible:
		if not validate(spec, space).ok:
			raise ConfigError(f"search produced a spec outside its space: {spec.label()}")
		real_cost = float(check(spec))
		if real_cost <= constraint.budget:
			result.best_spec = spec
			result.best_accuracy = accuracy
			result.best_cost = real_cost
			break
	return result


#============================================
def _novel_child(
	genome: _Genome,
	child: numpy.ndarray,
	taken: set[SubnetSpec],
	seen: dict[SubnetSpec, tuple[float, float]],
	rng: numpy.random.Generator,
) -> numpy.ndarray:
	"""
	Steer a child away from specs already in the generation or already scored.

	One-gene nudges come first, then random immigrants; when the space is
	exhausted the child is kept as is.
	"""
	candidate = child
	for attempt in range(NOVELTY_RETRIES + IMMIGRANT_RETRIES):
		spec = genome.decode(candidate)
		if spec not in taken and spec not in seen:
			return candidate
		candidate = genome.nudge(candidate, rng) if attempt < NOVELTY_RETRIES else genome.random(rng)
	spec = genome.decode(candidate)
	if spec not in taken:
		return candidate
	return child


#============================================
def budget_sweep(
	search: Callable[[Constraint], SearchResult],
	metric: str,
	budgets: Sequence[float],
	frames: int = 300,
) -> list[dict]:
	"""
	Run one search method over a list of budgets; the trade-off curve.
	"""
	curve = []
	for budget in budgets:
		result = search(Constraint(metric=metric, budget=float(budget), frames=frames))
		curve.append({
			"budget": float(budget),
			"best_spec": None if result.best_spec is None else result.best_spec.to_dict(),
			"best_accuracy": result.best_accuracy,
			"best_cost": result.best_cost,
			"feasible_count": result.feasible_count,
		})
	return curve
