"""
Synthetic speaker data: per-speaker feature templates with smooth noise.

Speaker identity is a fixed smoothed random template in feature space. An
utterance is a window of the template at a random offset plus smoothed
noise. Training and evaluation speakers are disjoint.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
from typing import Iterator
import zlib

# PIP3 modules
import numpy
import scipy.ndimage

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import costmodel
from tdnn_supernet.errors import CheckpointError, ConfigError
from tdnn_supernet.evalkit import Trial, TrialSet
from tdnn_supernet.space import SamplerState, SpaceConfig, SubnetSpec, bounds, sample_subnet
from tdnn_supernet.supernet import SupernetConfig

#============================================


@dataclass(slots=True)
class SyntheticDatasetConfig:
	n_speakers: int = 32
	utterances_per_speaker: int = 8
	eval_speakers: int = 8
	eval_utterances_per_speaker: int = 4
	feature_dim: int = 80
	frames: int = 300
	noise_scale: float = 0.5
	max_shift: int = 20
	smoothing: float = 2.0
	profile_scale: float = 1.0
	n_trials: int = 200
	target_ratio: float = 0.5
	seed: int = 0

	def __post_init__(self) -> None:
		self.check()

	def check(self) -> None:
		if self.n_speakers < 2 or self.eval_speakers < 2:
			raise ConfigError("n_speakers and eval_speakers must be >= 2")
		if self.utterances_per_speaker < 1:
			raise ConfigError("utterances_per_speaker must be >= 1")
		if self.eval_utterances_per_speaker < 2:
			raise ConfigError("eval_utterances_per_speaker must be >= 2 to form target trials")
		if self.feature_dim < 1 or self.frames < 1:
			raise ConfigError("feature_dim and frames must be >= 1")
		if self.noise_scale < 0.0 or self.max_shift < 0 or self.smoothing < 0.0 or self.profile_scale < 0.0:
			raise ConfigError("noise_scale, max_shift, smoothing, and profile_scale must be non-negative")
		if self.n_trials < 2:
			raise ConfigError("n_trials must be >= 2")
		if not 0.0 < self.target_ratio < 1.0:
			raise ConfigError(f"target_ratio must be in (0, 1), got {self.target_ratio}")

	@property
	def n_target_trials(self) -> int:
		return int(round(self.n_trials * self.target_ratio))

	def to_dict(self) -> dict:
		return {
			"n_speakers": self.n_speakers,
			"utterances_per_speaker": self.utterances_per_speaker,
			"eval_speakers": self.eval_speakers,
			"eval_utterances_per_speaker": self.eval_utterances_per_speaker,
			"feature_dim": self.feature_dim,
			"frames": self.frames,
			"noise_scale": self.noise_scale,
			"max_shift": self.max_shift,
			"smoothing": self.smoothing,
			"profile_scale": self.profile_scale,
			"n_trials": self.n_trials,
			"target_ratio": self.target_ratio,
			"seed": self.seed,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "SyntheticDatasetConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown dataset config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class SyntheticDataset:
	config: SyntheticDatasetConfig
	train_features: numpy.ndarray
	train_labels: numpy.ndarray
	eval_features: numpy.ndarray
	eval_ids: list[str]
	trials: TrialSet = field(default_factory=TrialSet)

	@property
	def n_speakers(self) -> int:
		return self.config.n_speakers

	def eval_utterances(self) -> dict[str, numpy.ndarray]:
		return {utterance_id: self.eval_features[index] for index, utterance_id in enumerate(self.eval_ids)}

	#============================================
	def train_batches(
		self,
		batch_size: int,
		segment_frames: int,
		rng: numpy.random.Generator,
	) -> Iterator[tuple[numpy.ndarray, numpy.ndarray]]:
		"""
		One shuffled pass of random crops: (B x C x L features, B labels).
		"""
		if batch_size < 1 or segment_frames < 1:
			raise ValueError("batch_size and segment_frames must be >= 1")
		order = rng.permutation(self.train_features.shape[0])
		for start in range(0, order.size, batch_size):
			chosen = order[start:start + batch_size]
			crops = [self._crop(self.train_features[index], segment_frames, rng) for index in chosen]
			yield numpy.stack(crops), self.train_labels[chosen].astype(int)

	def _crop(self, utterance: numpy.ndarray, segment_frames: int, rng: numpy.random.Generator) -> numpy.ndarray:
		frames = utterance.shape[1]
		start = int(rng.integers(0, frames - segment_frames + 1)) if frames >= segment_frames else 0
		index = numpy.arange(start, start + segment_frames)
		return numpy.take(utterance, index, axis=1, mode="wrap")

	def recalibration_stream(self, segment_frames: int, seed: int = 0) -> Iterator[numpy.ndarray]:
		"""
		Fixed crops of every training utterance in a seeded order.
		"""
		rng = numpy.random.default_rng(seed)
		for index in rng.permutation(self.train_features.shape[0]):
			yield self._crop(self.train_features[index], segment_frames, rng)

	def cohort(self, size: int, seed: int = 0) -> list[numpy.ndarray]:
		"""
		Imposter cohort of whole training utterances.
		"""
		rng = numpy.random.default_rng(seed)
		count = min(size, self.train_features.shape[0])
		chosen = rng.choice(self.train_features.shape[0], size=count, replace=False)
		return [self.train_features[index] for index in numpy.sort(chosen)]

	#============================================
	def to_arrays(self) -> dict[str, numpy.ndarray]:
		return {
			"train_features": self.train_features,
			"train_labels": self.train_labels.astype(numpy.float64),
			"eval_features": self.eval_features,
		}

	def metadata(self) -> dict:
		return {
			"kind": "synthetic_dataset",
			"config": self.config.to_dict(),
			"eval_ids": list(self.eval_ids),
			"trials": [[int(trial.is_target), trial.id_a, trial.id_b] for trial in self.trials.trials],
		}

	@classmethod
	def from_arrays(cls, arrays: dict[str, numpy.ndarray], metadata: dict) -> "SyntheticDataset":
		if metadata.get("kind") != "synthetic_dataset":
			raise CheckpointError("checkpoint does not hold a synthetic dataset")
		trials = TrialSet([Trial(str(a), str(b), bool(label)) for label, a, b in metadata["trials"]])
		return cls(
			config=SyntheticDatasetConfig.from_dict(metadata["config"]),
			train_features=arrays["train_features"],
			train_labels=arrays["train_labels"].astype(int),
			eval_features=arrays["eval_features"],
			eval_ids=[str(value) for value in metadata["eval_ids"]],
			trials=trials,
		)


#============================================
def _smooth_noise(rng: numpy.random.Generator, shape: tuple[int, ...], sigma: float) -> numpy.ndarray:
	noise = rng.normal(size=shape)
	if sigma > 0.0:
		noise = scipy.ndimage.gaussian_filter1d(noise, sigma=sigma, axis=-1, mode="wrap")
	spread = noise.std()
	return noise / spread if spread > 0.0 else noise


#============================================
def generate_dataset(config: SyntheticDatasetConfig) -> SyntheticDataset:
	"""
	Build train/eval splits and a trial list with the configured target ratio.
	"""
	rng = numpy.random.default_rng(config.seed)
	total_speakers = config.n_speakers + config.eval_speakers
	# temporal offsets shrink with the noise scale so zero noise means identical utterances
	shift_range = int(round(config.max_shift * min(1.0, config.noise_scale)))
	template_frames = config.frames + config.max_shift
	templates = [
		_smooth_noise(rng, (config.feature_dim, template_frames), config.smoothing)
		for _ in range(total_speakers)
	]
	# per-speaker channel envelope, smooth across channels and constant in time
	for template in templates:
		envelope = rng.normal(size=config.feature_dim)
		if config.smoothing > 0.0:
			envelope = scipy.ndimage.gaussian_filter1d(envelope, sigma=config.smoothing, mode="wrap")
		spread = envelope.std()
		if spread > 0.0:
			envelope = envelope / spread
		template += config.profile_scale * envelope[:, None]

	def make_utterance(speaker: int) -> numpy.ndarray:
		offset = int(rng.integers(0, shift_range + 1))
		noise = _smooth_noise(rng, (config.feature_dim, config.frames), config.smoothing)
		return templates[speaker][:, offset:offset + config.frames] + config.noise_scale * noise

	train_features = []
	train_labels = []
	for speaker in range(config.n_speakers):
		for _ in range(config.utterances_per_speaker):
			train_features.append(make_utterance(speaker))
			train_labels.append(speaker)
	eval_features = []
	eval_ids = []
	for local in range(config.eval_speakers):
		speaker = config.n_speakers + local
		for utterance in range(config.eval_utterances_per_speaker):
			eval_features.append(make_utterance(speaker))
			eval_ids.append(f"spk{speaker:04d}-utt{utterance:02d}")

	per_speaker = config.eval_utterances_per_speaker
	trials: list[Trial] = []
	for _ in range(config.n_target_trials):
		local = int(rng.integers(config.eval_speakers))
		first, second = rng.choice(per_speaker, size=2, replace=False)
		trials.append(Trial(eval_ids[local * per_speaker + int(first)], eval_ids[local * per_speaker + int(second)], True))
	for _ in range(config.n_trials - config.n_target_trials):
		speaker_a, speaker_b = rng.choice(config.eval_speakers, size=2, replace=False)
		utt_a = int(rng.integers(per_speaker))
		utt_b = int(rng.integers(per_speaker))
		trials.append(Trial(eval_ids[int(speaker_a) * per_speaker + utt_a], eval_ids[int(speaker_b) * per_speaker + utt_b], False))
	order = rng.permutation(len(trials))
	return SyntheticDataset(
		config=config,
		train_features=numpy.stack(train_features),
		train_labels=numpy.array(train_labels, dtype=int),
		eval_features=numpy.stack(eval_features),
		eval_ids=eval_ids,
		trials=TrialSet([trials[int(index)] for index in order]),
	)


#============================================
def surrogate_metrics(
	spec: SubnetSpec,
	space: SpaceConfig,
	config: SupernetConfig,
	frames: int,
	seed: int = 0,
	noise: float = 0.002,
) -> tuple[float, float]:
	"""
	Deterministic accuracy stand-in: EER falls with log MACs, plus seeded noise.

	Returns (eer, dcf).
	"""
	low, high = bounds(space)
	log_low = numpy.log(costmodel.count_macs(low, config, frames))
	log_high = numpy.log(costmodel.count_macs(high, config, frames))
	log_macs = numpy.log(costmodel.count_macs(spec, config, frames))
	position = 0.0 if log_high == log_low else (log_macs - log_low) / (log_high - log_low)
	key = zlib.crc32(spec.label().encode("utf-8"))
	rng = numpy.random.default_rng([seed, key])
	eer = 0.12 - 0.08 * position + noise * rng.normal()
	dcf = 2.5 * eer + noise * rng.normal()
	return float(eer), float(dcf)


#============================================
def surrogate_records(
	space: SpaceConfig,
	config: SupernetConfig,
	count: int,
	frames: int,
	seed: int = 0,
) -> list[tuple[SubnetSpec, float, float]]:
	state = SamplerState(rng_seed=seed)
	rows = []
	for _ in range(count):
		spec = sample_subnet(space, state)
		eer, dcf = surrogate_metrics(spec, space, config, frames, seed)
		rows.append((spec, eer, dcf))
	return rows


#============================================
def save_dataset(path: str, data: SyntheticDataset) -> None:
	checkpoint.save_checkpoint(path, data.metadata(), data.to_arrays())


#============================================
def load_dataset(path: str) -> SyntheticDataset:
	loaded = checkpoint.load_checkpoint(path)
	return SyntheticDataset.from_arrays(loaded.arrays, loaded.metadata)
