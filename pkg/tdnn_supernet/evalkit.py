"""
Speaker verification scoring: segment cosine protocol, EER, minDCF,
adaptive s-norm, and Spearman rank correlation.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
from typing import Callable, Sequence

# PIP3 modules
import numpy
import scipy.stats
import sklearn.metrics

# local repo modules
from tdnn_supernet.errors import ConfigError, MetricError
from tdnn_supernet.space import SubnetSpec

#============================================


Embedder = Callable[[numpy.ndarray], numpy.ndarray]


#============================================


@dataclass(slots=True, frozen=True)
class Trial:
	id_a: str
	id_b: str
	is_target: bool


@dataclass(slots=True)
class TrialSet:
	trials: list[Trial] = field(default_factory=list)

	def __len__(self) -> int:
		return len(self.trials)

	@property
	def labels(self) -> numpy.ndarray:
		return numpy.array([1 if trial.is_target else 0 for trial in self.trials], dtype=int)

	def utterance_ids(self) -> list[str]:
		seen: dict[str, None] = {}
		for trial in self.trials:
			seen.setdefault(trial.id_a, None)
			seen.setdefault(trial.id_b, None)
		return list(seen)


@dataclass(slots=True)
class EvalConfig:
	segment_frames: int = 400
	segments_per_utt: int = 2
	whole_utterance: bool = False
	p_target: float = 0.01
	c_miss: float = 1.0
	c_fa: float = 1.0
	snorm: bool = False
	snorm_k: int = 300
	cohort_size: int = 6000

	def __post_init__(self) -> None:
		if self.segment_frames < 1 or self.segments_per_utt < 1:
			raise ConfigError("segment_frames and segments_per_utt must be >= 1")
		if not 0.0 < self.p_target < 1.0:
			raise ConfigError(f"p_target must be in (0, 1), got {self.p_target}")
		if self.snorm_k < 1 or self.cohort_size < 1:
			raise ConfigError("snorm_k and cohort_size must be >= 1")

	def to_dict(self) -> dict:
		return {
			"segment_frames": self.segment_frames,
			"segments_per_utt": self.segments_per_utt,
			"whole_utterance": self.whole_utterance,
			"p_target": self.p_target,
			"c_miss": self.c_miss,
			"c_fa": self.c_fa,
			"snorm": self.snorm,
			"snorm_k": self.snorm_k,
			"cohort_size": self.cohort_size,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "EvalConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown eval config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class EvalResult:
	eer: float
	eer_threshold: float
	min_dcf: float
	dcf_threshold: float
	scores: list[float] = field(default_factory=list)

	def to_dict(self) -> dict:
		return {
			"eer": self.eer,
			"eer_threshold": self.eer_threshold,
			"min_dcf": self.min_dcf,
			"dcf_threshold": self.dcf_threshold,
			"n_trials": len(self.scores),
		}


#============================================
def read_trials(path: str) -> TrialSet:
	"""
	Parse 'label id_a id_b' lines; label is 1/0 or target/nontarget.
	"""
	trials: list[Trial] = []
	with open(path, "r", encoding="utf-8") as handle:
		for line_number, line in enumerate(handle, start=1):
			parts = line.split()
			if not parts:
				continue
			if len(parts) != 3:
				raise ValueError(f"{path}:{line_number}: expected 'label id_a id_b'")
			label = parts[0].lower()
			if label in ("1", "target"):
				is_target = True
			elif label in ("0", "nontarget"):
				is_target = False
			else:
				raise ValueError(f"{path}:{line_number}: unknown trial label '{parts[0]}'")
			trials.append(Trial(parts[1], parts[2], is_target))
	return TrialSet(trials)


#============================================
def write_trials(path: str, trials: TrialSet) -> None:
	with open(path, "w", encoding="utf-8") as handle:
		for trial in trials.trials:
			handle.write(f"{1 if trial.is_target else 0} {trial.id_a} {trial.id_b}\n")


#============================================
def write_scores(path: str, trials: TrialSet, scores: Sequence[float]) -> None:
	if len(scores) != len(trials):
		raise ValueError(f"{len(scores)} scores for {len(trials)} trials")
	with open(path, "w", encoding="utf-8") as handle:
		for trial, score in zip(trials.trials, scores):
			handle.write(f"{trial.id_a} {trial.id_b} {float(score):.10f}\n")


#============================================
def read_scores(path: str) -> list[tuple[str, str, float]]:
	rows: list[tuple[str, str, float]] = []
	with open(path, "r", encoding="utf-8") as handle:
		for line_number, line in enumerate(handle, start=1):
			parts = line.split()
			if not parts:
				continue
			if len(parts) != 3:
				raise ValueError(f"{path}:{line_number}: expected 'id_a id_b score'")
			rows.append((parts[0], parts[1], float(parts[2])))
	return rows


#============================================
def extract_segments(utterance: numpy.ndarray, segment_frames: int | None, count: int) -> numpy.ndarray:
	"""
	Equally spaced segments (count x C x L); short utterances wrap around.

	segment_frames=None returns the whole utterance as one segment.
	"""
	utterance = numpy.asarray(utterance, dtype=numpy.float64)
	if utterance.ndim != 2 or utterance.shape[1] == 0:
		raise ValueError(f"utterance must be C x T with T >= 1, got shape {utterance.shape}")
	if segment_frames is None:
		return utterance[None, :, :]
	if segment_frames < 1 or count < 1:
		raise ValueError("segment_frames and count must be >= 1")
	frames = utterance.shape[1]
	last_start = max(frames - segment_frames, 0)
	starts = numpy.linspace(0, last_start, count).round().astype(int)
	segments = []
	for start in starts:
		index = numpy.arange(start, start + segment_frames)
		segments.append(numpy.take(utterance, index, axis=1, mode="wrap"))
	return numpy.stack(segments)


#============================================
def _unit_rows(matrix: numpy.ndarray) -> numpy.ndarray:
	norms = numpy.linalg.norm(matrix, axis=1, keepdims=True)
	return matrix / numpy.maximum(norms, 1e-12)


#============================================
def embed_segments(
	utterance: numpy.ndarray,
	embedder: Embedder,
	segment_frames: int | None,
	segments_per_utt: int,
) -> numpy.ndarray:
	"""
	Unit-length embeddings of each segment, S x E.
	"""
	segments = extract_segments(utterance, segment_frames, segments_per_utt)
	return _unit_rows(numpy.asarray(embedder(segments), dtype=numpy.float64))


#============================================
def pair_score(embeddings_a: numpy.ndarray, embeddings_b: numpy.ndarray) -> float:
	"""
	Mean of all pairwise cosines between two segment embedding sets.
	"""
	return float(numpy.mean(embeddings_a @ embeddings_b.T))


#============================================
def segment_scores(
	utt_a: numpy.ndarray,
	utt_b: numpy.ndarray,
	embedder: Embedder,
	segment_frames: int | None,
	segments_per_utt: int = 2,
) -> float:
	embeddings_a = embed_segments(utt_a, embedder, segment_frames, segments_per_utt)
	embeddings_b = embed_segments(utt_b, embedder, segment_frames, segments_per_utt)
	return pair_score(embeddings_a, embeddings_b)


#============================================
def _operating_points(scores: Sequence[float], labels: Sequence[int]) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
	scores = numpy.asarray(scores, dtype=numpy.float64)
	labels = numpy.asarray(labels, dtype=int)
	if scores.shape != labels.shape or scores.ndim != 1:
		raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be matching 1-D arrays")
	if not numpy.isfinite(scores).all():
		raise MetricError("scores contain non-finite values")
	n_target = int((labels == 1).sum())
	if n_target == 0 or n_target == labels.size:
		raise MetricError("both target and nontarget trials are required")
	fpr, tpr, thresholds = sklearn.metrics.roc_curve(labels, scores, pos_label=1, drop_intermediate=False)
	# first operating point accepts nothing
	thresholds = thresholds.copy()
	thresholds[0] = numpy.nextafter(scores.max(), numpy.inf)
	return fpr, 1.0 - tpr, thresholds


#============================================
def compute_eer(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, float]:
	"""
	Equal error rate and its threshold, interpolating the FAR/FRR crossing.
	"""
	fpr, fnr, thresholds = _operating_points(scores, labels)
	gap = fnr - fpr
	index = int(numpy.argmax(gap <= 0.0))
	if gap[index] == 0.0 or index == 0:
		return float(fpr[index]), float(thresholds[index])
	before = gap[index - 1]
	weight = before / (before - gap[index])
	eer = fpr[index - 1] + weight * (fpr[index] - fpr[index - 1])
	threshold = thresholds[index - 1] + weight * (thresholds[index] - thresholds[index - 1])
	return float(eer), float(threshold)


#============================================
def compute_min_dcf(
	scores: Sequence[float],
	labels: Sequence[int],
	p_target: float = 0.01,
	c_miss: float = 1.0,
	c_fa: float = 1.0,
) -> tuple[float, float]:
	"""
	Minimum normalized detection cost over all thresholds.
	"""
	fpr, fnr, thresholds = _operating_points(scores, labels)
	costs = p_target * c_miss * fnr + (1.0 - p_target) * c_fa * fpr
	costs = costs / min(p_target * c_miss, (1.0 - p_target) * c_fa)
	index = int(numpy.argmin(costs))
	return float(costs[index]), float(thresholds[index])


#============================================
def snorm_topk(
	raw_score: float,
	enroll_cohort_scores: Sequence[float],
	test_cohort_scores: Sequence[float],
	k: int = 300,
) -> float:
	"""
	Adaptive s-norm against the top-k cohort scores of each side.

	Cohort spread uses the population standard deviation.
	"""
	normalized = []
	for side, cohort in (("enroll", enroll_cohort_scores), ("test", test_cohort_scores)):
		values = numpy.asarray(cohort, dtype=numpy.float64)
		if values.size < k:
			raise MetricError(f"{side} cohort has {values.size} scores, top-{k} needs at least {k}")
		top = numpy.sort(values)[::-1][:k]
		spread = float(top.std())
		if spread <= 0.0:
			raise MetricError(f"{side} cohort top-{k} scores have zero spread")
		normalized.append((raw_score - float(top.mean())) / spread)
	return 0.5 * (normalized[0] + normalized[1])


#============================================
def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
	"""
	Pearson correlation of average ranks.
	"""
	x = numpy.asarray(xs, dtype=numpy.float64)
	y = numpy.asarray(ys, dtype=numpy.float64)
	if x.shape != y.shape or x.ndim != 1 or x.size < 2:
		raise ValueError("spearman needs two equal-length sequences of length >= 2")
	if numpy.all(x == x[0]) or numpy.all(y == y[0]):
		raise MetricError("rank correlation is undefined for a constant sequence")
	rank_x = scipy.stats.rankdata(x, method="average")
	rank_y = scipy.stats.rankdata(y, method="average")
	rho = float(numpy.corrcoef(rank_x, rank_y)[0, 1])
	return max(-1.0, min(1.0, rho))


#============================================
def dimension_correlations(
	specs: Sequence[SubnetSpec],
	eers: Sequence[float],
	dcfs: Sequence[float],
	exclude_kernel_one: bool = False,
) -> dict[str, dict[str, float | None]]:
	"""
	Spearman rho of depth, stem kernel, and stem width against EER and DCF.

	A dimension held constant over the records reports None.
	"""
	rows = [(spec, eer, dcf) for spec, eer, dcf in zip(specs, eers, dcfs)]
	if exclude_kernel_one:
		rows = [row for row in rows if row[0].kernels[0] != 1]
	if len(rows) < 2:
		raise MetricError(f"sensitivity analysis needs >= 2 records, got {len(rows)}")
	columns = {
		"depth": [row[0].depth for row in rows],
		"kernel": [row[0].kernels[0] for row in rows],
		"width": [row[0].widths_front[0] for row in rows],
	}
	eer_values = [row[1] for row in rows]
	dcf_values = [row[2] for row in rows]
	result: dict[str, dict[str, float | None]] = {}
	for name, values in columns.items():
		entry: dict[str, float | None] = {}
		for metric, targets in (("eer", eer_values), ("dcf", dcf_values)):
			try:
				entry[metric] = spearman(values, targets)
			except MetricError:
				entry[metric] = None
		result[name] = entry
	return result


#============================================
def evaluate_trials(
	trials: TrialSet,
	utterances: dict[str, numpy.ndarray],
	embedder: Embedder,
	config: EvalConfig,
	cohort: Sequence[numpy.ndarray] | None = None,
) -> EvalResult:
	"""
	Score every trial with the segment protocol and report EER and minDCF.

	With config.snorm and a cohort, scores are s-normalized; k is capped at
	the cohort size.
	"""
	segment_frames = None if config.whole_utterance else config.segment_frames
	store: dict[str, numpy.ndarray] = {}
	for utterance_id in trials.utterance_ids():
		if utterance_id not in utterances:
			raise MetricError(f"trial utterance '{utterance_id}' is missing from the embedding store")
		store[utterance_id] = embed_segments(utterances[utterance_id], embedder, segment_frames, config.segments_per_utt)
	scores = [pair_score(store[trial.id_a], store[trial.id_b]) for trial in trials.trials]
	if config.snorm:
		if not cohort:
			raise MetricError("s-norm requested without an imposter cohort")
		cohort_matrix = numpy.stack([
			embed_segments(item, embedder, segment_frames, config.segments_per_utt).mean(axis=0)
			for item in cohort
		])
		cohort_matrix = _unit_rows(cohort_matrix)
		k = min(config.snorm_k, cohort_matrix.shape[0])
		normalized = []
		for trial, raw in zip(trials.trials, scores):
			enroll = cohort_matrix @ _unit_rows(store[trial.id_a].mean(axis=0, keepdims=True))[0]
			test = cohort_matrix @ _unit_rows(store[trial.id_b].mean(axis=0, keepdims=True))[0]
			normalized.append(snorm_topk(raw, enroll, test, k))
		scores = normalized
	labels = trials.labels
	eer, eer_threshold = compute_eer(scores, labels)
	min_dcf, dcf_threshold = compute_min_dcf(scores, labels, config.p_target, config.c_miss, config.c_fa)
	return EvalResult(
		eer=eer,
		eer_threshold=eer_threshold,
		min_dcf=min_dcf,
		dcf_threshold=dcf_threshold,
		scores=[float(score) for score in scores],
	)
