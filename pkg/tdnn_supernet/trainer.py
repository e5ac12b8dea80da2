"""
Progressive shrinking: staged supernet training over a growing sampling space.

Each stage samples subnets from its space, accumulates AAM-softmax gradients
along every sampled path, and applies one masked Adam step per batch.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import math
import os
from typing import Sequence

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import numerics
from tdnn_supernet import supernet
from tdnn_supernet.dataset import SyntheticDataset
from tdnn_supernet.errors import ConfigError, TrainingDivergedError
from tdnn_supernet.log_utils import append_jsonl, format_fields, print_status, utc_timestamp
from tdnn_supernet.numerics import OptimizerState, Tape, Tensor
from tdnn_supernet.space import STAGES, SamplerState, SpaceConfig, SubnetSpec, is_subset_space, sample_subnet, space_size, training_space
from tdnn_supernet.supernet import SupernetWeights

#============================================


HEAD_NAME = "head.weight"
AUGMENTATIONS = ("noise", "time_mask", "freq_mask")


#============================================


@dataclass(slots=True)
class AugmentPolicy:
	noise: bool = True
	time_mask: bool = True
	freq_mask: bool = True
	noise_std: float = 0.1
	time_mask_frames: int = 10
	freq_mask_channels: int = 8

	def enabled(self) -> list[str]:
		flags = {"noise": self.noise, "time_mask": self.time_mask, "freq_mask": self.freq_mask}
		return [name for name in AUGMENTATIONS if flags[name]]

	def to_dict(self) -> dict:
		return {
			"noise": self.noise,
			"time_mask": self.time_mask,
			"freq_mask": self.freq_mask,
			"noise_std": self.noise_std,
			"time_mask_frames": self.time_mask_frames,
			"freq_mask_channels": self.freq_mask_channels,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "AugmentPolicy":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown augmentation keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class TrainConfig:
	epochs_per_stage: int = 64
	largest_epochs: int | None = None
	lr_min: float = 1e-8
	lr_max: float = 1e-3
	cycle_epochs: int = 16
	paths_per_step: int = 1
	largest_paths_per_step: int = 1
	batch_size: int = 32
	segment_frames_largest: int = 200
	segment_frames: int = 300
	aam_margin: float = 0.2
	aam_scale: float = 30.0
	augment: AugmentPolicy = field(default_factory=AugmentPolicy)
	seed: int = 0

	def __post_init__(self) -> None:
		if isinstance(self.augment, dict):
			self.augment = AugmentPolicy.from_dict(self.augment)
		self.check()

	def check(self) -> None:
		if not self.lr_min < self.lr_max:
			raise ConfigError(f"lr_min {self.lr_min} must be below lr_max {self.lr_max}")
		if self.cycle_epochs < 2 or self.cycle_epochs % 2 != 0:
			raise ConfigError(f"cycle_epochs must be an even number >= 2, got {self.cycle_epochs}")
		if self.paths_per_step < 1 or self.largest_paths_per_step < 1:
			raise ConfigError("paths per step must be >= 1")
		if self.epochs_per_stage < 1 or self.batch_size < 1:
			raise ConfigError("epochs_per_stage and batch_size must be >= 1")
		if self.largest_epochs is not None and self.largest_epochs < 1:
			raise ConfigError(f"largest_epochs must be >= 1 when set, got {self.largest_epochs}")
		if self.segment_frames < 1 or self.segment_frames_largest < 1:
			raise ConfigError("segment frame counts must be >= 1")
		if self.aam_scale <= 0.0 or self.aam_margin < 0.0:
			raise ConfigError("aam_scale must be > 0 and aam_margin >= 0")

	def paths_for(self, stage: str) -> int:
		return self.largest_paths_per_step if stage == "largest" else self.paths_per_step

	def epochs_for(self, stage: str) -> int:
		if stage == "largest" and self.largest_epochs is not None:
			return self.largest_epochs
		return self.epochs_per_stage

	def frames_for(self, stage: str) -> int:
		return self.segment_frames_largest if stage == "largest" else self.segment_frames

	def to_dict(self) -> dict:
		return {
			"epochs_per_stage": self.epochs_per_stage,
			"largest_epochs": self.largest_epochs,
			"lr_min": self.lr_min,
			"lr_max": self.lr_max,
			"cycle_epochs": self.cycle_epochs,
			"paths_per_step": self.paths_per_step,
			"largest_paths_per_step": self.largest_paths_per_step,
			"batch_size": self.batch_size,
			"segment_frames_largest": self.segment_frames_largest,
			"segment_frames": self.segment_frames,
			"aam_margin": self.aam_margin,
			"aam_scale": self.aam_scale,
			"augment": self.augment.to_dict(),
			"seed": self.seed,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "TrainConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class StageSchedule:
	stages: list[tuple[str, SpaceConfig]] = field(default_factory=list)

	def names(self) -> list[str]:
		return [name for name, _ in self.stages]

	def index(self, name: str) -> int:
		names = self.names()
		if name not in names:
			raise ConfigError(f"stage '{name}' is not in the schedule {names}")
		return names.index(name)

	def validate(self) -> None:
		"""
		Reject schedules whose sampling spaces shrink between stages.
		"""
		if not self.stages:
			raise ConfigError("schedule has no stages")
		names = self.names()
		if len(set(names)) != len(names):
			raise ConfigError(f"duplicate stage names in {names}")
		for (name_a, space_a), (name_b, space_b) in zip(self.stages, self.stages[1:]):
			if not is_subset_space(space_a, space_b):
				raise ConfigError(f"stage '{name_b}' space does not contain stage '{name_a}' space")


@dataclass(slots=True)
class TrainSummary:
	stage_sizes: dict[str, int] = field(default_factory=dict)
	checkpoints: list[str] = field(default_factory=list)
	losses: dict[str, list[float]] = field(default_factory=dict)
	initial_loss: float | None = None
	started_at: str = ""
	finished_at: str = ""

	def to_dict(self) -> dict:
		return {
			"stage_sizes": dict(self.stage_sizes),
			"checkpoints": list(self.checkpoints),
			"losses": {name: list(values) for name, values in self.losses.items()},
			"initial_loss": self.initial_loss,
			"started_at": self.started_at,
			"finished_at": self.finished_at,
		}


#============================================
def default_schedule(max_front: int, max_back: int, quantum: int, stages: Sequence[str] = STAGES) -> StageSchedule:
	return StageSchedule([(name, training_space(name, max_front, max_back, quantum)) for name in stages])


#============================================
def cyclic_lr(global_epoch: float, config: TrainConfig) -> float:
	"""
	Triangular schedule: lr_min to lr_max over half a cycle, then back.
	"""
	half = config.cycle_epochs / 2.0
	phase = math.fmod(global_epoch, config.cycle_epochs)
	if phase < 0.0:
		phase += config.cycle_epochs
	rise = phase / half if phase <= half else (config.cycle_epochs - phase) / half
	return config.lr_min + (config.lr_max - config.lr_min) * rise


#============================================
def apply_augmentation(
	batch: numpy.ndarray,
	name: str,
	policy: AugmentPolicy,
	rng: numpy.random.Generator,
) -> numpy.ndarray:
	out = numpy.array(batch, dtype=numpy.float64, copy=True)
	channels, frames = out.shape[1], out.shape[2]
	if name == "noise":
		out += rng.normal(0.0, policy.noise_std, size=out.shape)
	elif name == "time_mask":
		width = min(policy.time_mask_frames, frames)
		start = int(rng.integers(0, frames - width + 1))
		out[:, :, start:start + width] = 0.0
	elif name == "freq_mask":
		width = min(policy.freq_mask_channels, channels)
		start = int(rng.integers(0, channels - width + 1))
		out[:, start:start + width, :] = 0.0
	elif name != "identity":
		raise ValueError(f"unknown augmentation '{name}'")
	return out


#============================================
def augment(batch: numpy.ndarray, policy: AugmentPolicy, rng: numpy.random.Generator) -> tuple[numpy.ndarray, str]:
	"""
	Apply one transform drawn uniformly from the enabled set plus identity.
	"""
	choices = policy.enabled()
	if not choices:
		return numpy.array(batch, dtype=numpy.float64, copy=True), "identity"
	options = choices + ["identity"]
	name = options[int(rng.integers(len(options)))]
	return apply_augmentation(batch, name, policy, rng), name


#============================================
def aam_softmax_loss(
	tape: Tape,
	embeddings: Tensor,
	labels: Sequence[int],
	class_weights: Tensor,
	margin: float = 0.2,
	scale: float = 30.0,
) -> Tensor:
	"""
	Additive angular margin softmax over normalized embeddings and class rows.
	"""
	labels = numpy.asarray(labels, dtype=int)
	n_classes = class_weights.data.shape[0]
	if labels.ndim != 1 or labels.size != embeddings.data.shape[0]:
		raise ValueError(f"expected {embeddings.data.shape[0]} labels, got shape {labels.shape}")
	if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
		raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
	cosines = numerics.linear(tape, numerics.l2_normalize(tape, embeddings), numerics.l2_normalize(tape, class_weights))
	rows = numpy.arange(labels.size)
	cos_m = math.cos(margin)
	sin_m = math.sin(margin)

	def logits_of(c: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
		target = c[rows, labels]
		sine = numpy.sqrt(numpy.clip(1.0 - target * target, 0.0, None))
		logits = scale * c
		logits[rows, labels] = scale * (target * cos_m - sine * sin_m)
		return logits, target, sine

	def forward(c: numpy.ndarray) -> numpy.ndarray:
		logits, _, _ = logits_of(c)
		shift = logits.max(axis=1, keepdims=True)
		log_total = numpy.log(numpy.exp(logits - shift).sum(axis=1)) + shift[:, 0]
		return numpy.asarray(numpy.mean(log_total - logits[rows, labels]))

	def backward(grad: numpy.ndarray, out: numpy.ndarray, c: numpy.ndarray) -> tuple:
		logits, target, sine = logits_of(c)
		probs = numpy.exp(logits - logits.max(axis=1, keepdims=True))
		probs /= probs.sum(axis=1, keepdims=True)
		probs[rows, labels] -= 1.0
		dlogits = probs * (float(grad) / labels.size)
		dc = scale * dlogits
		dphi = cos_m + sin_m * target / numpy.maximum(sine, 1e-12)
		dc[rows, labels] = scale * dlogits[rows, labels] * dphi
		return (dc,)

	return numerics.primitive(tape, "aam_softmax", [cosines], forward, backward)


#============================================
def ensure_head(weights: SupernetWeights, n_classes: int, seed: int = 0) -> None:
	"""
	Create the classifier head when absent or sized for another class count.
	"""
	shape = (n_classes, weights.config.embedding_dim)
	head = weights.params.get(HEAD_NAME)
	if head is None or head.shape != shape:
		rng = numpy.random.default_rng([seed, n_classes])
		weights.params[HEAD_NAME] = rng.normal(size=shape)


#============================================
def path_gradients(
	weights: SupernetWeights,
	spec: SubnetSpec,
	batch: numpy.ndarray,
	labels: numpy.ndarray,
	config: TrainConfig,
	batch_index: int = 0,
) -> tuple[float, dict[str, numpy.ndarray], dict[str, numpy.ndarray]]:
	"""
	Loss, full-shape gradients, and touched masks of one sampled path.
	"""
	tape = Tape(record=True)
	x = tape.constant(batch)
	embeddings = supernet.forward_tensor(tape, weights, spec, x, training=True)
	head = tape.variable(HEAD_NAME, weights.params[HEAD_NAME])
	loss = aam_softmax_loss(tape, embeddings, labels, head, config.aam_margin, config.aam_scale)
	value = float(loss.data)
	if not math.isfinite(value):
		op = numerics.first_non_finite_op(tape)
		raise TrainingDivergedError(
			f"non-finite loss {value} at batch {batch_index} for {spec.label()}, first bad op: {op}",
			batch_index=batch_index,
			spec=spec.to_dict(),
			op=op,
		)
	return value, numerics.gradients(tape, loss), tape.touched


#============================================
def accumulate_path_gradients(
	weights: SupernetWeights,
	specs: Sequence[SubnetSpec],
	batch: numpy.ndarray,
	labels: numpy.ndarray,
	config: TrainConfig,
	batch_index: int = 0,
) -> tuple[float, dict[str, numpy.ndarray], dict[str, numpy.ndarray]]:
	"""
	Sum gradients over sampled paths and union their touched masks.

	Returns the mean path loss.
	"""
	total: dict[str, numpy.ndarray] = {}
	masks: dict[str, numpy.ndarray] = {}
	losses = []
	for spec in specs:
		loss, grads, touched = path_gradients(weights, spec, batch, labels, config, batch_index)
		losses.append(loss)
		for name, grad in grads.items():
			total[name] = total[name] + grad if name in total else grad
		for name, mask in touched.items():
			masks[name] = masks[name] | mask if name in masks else mask.copy()
	return float(numpy.mean(losses)), total, masks


#============================================
def dynamic_path_train(
	weights: SupernetWeights,
	space: SpaceConfig,
	sampler: SamplerState,
	config: TrainConfig,
	data: SyntheticDataset,
	epochs: int,
	optimizer: OptimizerState | None = None,
	stage: str = "",
	stage_index: int = 0,
	log_path: str | None = None,
	quiet: bool = True,
) -> list[float]:
	"""
	Train shared weights on sampled paths; returns the mean loss per epoch.
	"""
	if optimizer is None:
		optimizer = OptimizerState()
	ensure_head(weights, data.n_speakers, config.seed)
	paths = config.paths_for(stage)
	frames = config.frames_for(stage)
	n_batches = math.ceil(data.train_features.shape[0] / config.batch_size)
	epoch_losses: list[float] = []
	batch_index = 0
	for epoch in range(epochs):
		rng = numpy.random.default_rng([config.seed, stage_index, epoch])
		losses = []
		for step, (batch, labels) in enumerate(data.train_batches(config.batch_size, frames, rng)):
			lr = cyclic_lr(epoch + step / n_batches, config)
			augmented, transform = augment(batch, config.augment, rng)
			specs = [sample_subnet(space, sampler) for _ in range(paths)]
			loss, grads, masks = accumulate_path_gradients(weights, specs, augmented, labels, config, batch_index)
			numerics.adam_step(weights.params, grads, optimizer, lr, masks)
			losses.append(loss)
			append_jsonl(log_path, {
				"stage": stage,
				"epoch": epoch,
				"batch": batch_index,
				"lr": lr,
				"loss": loss,
				"augment": transform,
				"spec": [spec.to_dict() for spec in specs],
			})
			batch_index += 1
		epoch_loss = float(numpy.mean(losses))
		epoch_losses.append(epoch_loss)
		print_status("train", format_fields(stage=stage, epoch=epoch, loss=epoch_loss), quiet=quiet)
	return epoch_losses


#============================================
def batch_loss(weights: SupernetWeights, spec: SubnetSpec, data: SyntheticDataset, config: TrainConfig) -> float:
	"""
	Training-mode loss of one spec over a full pass, without updates or BN drift.
	"""
	ensure_head(weights, data.n_speakers, config.seed)
	scratch = weights.copy()
	rng = numpy.random.default_rng([config.seed, 2**31])
	losses = []
	for batch, labels in data.train_batches(config.batch_size, config.frames_for("largest"), rng):
		tape = Tape(record=False)
		embeddings = supernet.forward_tensor(tape, scratch, spec, tape.constant(batch), training=True)
		head = tape.constant(scratch.params[HEAD_NAME])
		losses.append(float(aam_softmax_loss(tape, embeddings, labels, head, config.aam_margin, config.aam_scale).data))
	return float(numpy.mean(losses))


#============================================
def progressive_train(
	weights: SupernetWeights,
	schedule: StageSchedule,
	config: TrainConfig,
	data: SyntheticDataset,
	out_dir: str,
	start_stage: str | None = None,
	log_path: str | None = None,
	quiet: bool = True,
) -> TrainSummary:
	"""
	Run the schedule stage by stage, writing one checkpoint per stage.

	Each stage starts with fresh optimizer moments and a new LR phase. A
	failing stage leaves earlier checkpoints on disk.
	"""
	schedule.validate()
	ensure_head(weights, data.n_speakers, config.seed)
	begin = 0 if start_stage is None else schedule.index(start_stage)
	summary = TrainSummary(started_at=utc_timestamp())
	first_space = schedule.stages[begin][1]
	summary.initial_loss = batch_loss(weights, sample_subnet(first_space, SamplerState(config.seed)), data, config)
	for stage_index in range(begin, len(schedule.stages)):
		name, space = schedule.stages[stage_index]
		size = space_size(space)
		summary.stage_sizes[name] = size
		print_status("train", format_fields(stage=name, space_size=size, epochs=config.epochs_for(name)), quiet=quiet)
		sampler = SamplerState(rng_seed=config.seed * 1009 + stage_index)
		losses = dynamic_path_train(
			weights,
			space,
			sampler,
			config,
			data,
			config.epochs_for(name),
			optimizer=OptimizerState(),
			stage=name,
			stage_index=stage_index,
			log_path=log_path,
			quiet=quiet,
		)
		summary.losses[name] = losses
		path = os.path.join(out_dir, f"stage{stage_index}_{name}.ckpt")
		checkpoint.save_supernet(path, weights, stage=name, extra={
			"stage_index": stage_index,
			"space": space.to_dict(),
			"train": config.to_dict(),
		})
		summary.checkpoints.append(path)
		print_status("train", f"checkpoint written: {path}", quiet=quiet)
	summary.finished_at = utc_timestamp()
	return summary
