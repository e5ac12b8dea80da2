"""
Run configuration: one JSON document with a section per module.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import json
import pathlib

# local repo modules
from tdnn_supernet.dataset import SyntheticDatasetConfig
from tdnn_supernet.errors import ConfigError
from tdnn_supernet.evalkit import EvalConfig
from tdnn_supernet.predictor import PredictorConfig
from tdnn_supernet.searcher import EvolutionConfig
from tdnn_supernet.space import SpaceConfig, coarse_space, fine_space, grid_space, quantize_width
from tdnn_supernet.supernet import SupernetConfig
from tdnn_supernet.trainer import TrainConfig

#============================================


SEARCH_SPACES = ("coarse", "fine", "grid")


#============================================


@dataclass(slots=True)
class SearchConfig:
	space: str = "coarse"
	granularity_c: int = 8
	random_samples: int = 10000
	records: int = 100
	recal_utterances: int = 64
	recal_batch_size: int = 16
	evolution: EvolutionConfig = field(default_factory=EvolutionConfig)

	def __post_init__(self) -> None:
		if isinstance(self.evolution, dict):
			self.evolution = EvolutionConfig.from_dict(self.evolution)
		if self.space not in SEARCH_SPACES:
			raise ConfigError(f"search space must be one of {', '.join(SEARCH_SPACES)}, got '{self.space}'")
		if self.granularity_c < 1 or self.random_samples < 1 or self.records < 1:
			raise ConfigError("granularity_c, random_samples, and records must be >= 1")
		if self.recal_utterances < 1 or self.recal_batch_size < 1:
			raise ConfigError("recalibration sizes must be >= 1")

	def to_dict(self) -> dict:
		return {
			"space": self.space,
			"granularity_c": self.granularity_c,
			"random_samples": self.random_samples,
			"records": self.records,
			"recal_utterances": self.recal_utterances,
			"recal_batch_size": self.recal_batch_size,
			"evolution": self.evolution.to_dict(),
		}

	@classmethod
	def from_dict(cls, data: dict) -> "SearchConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown search config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class RunConfig:
	name: str = "run"
	seed: int = 0
	frames: int = 300
	supernet: SupernetConfig = field(default_factory=SupernetConfig)
	train: TrainConfig = field(default_factory=TrainConfig)
	dataset: SyntheticDatasetConfig = field(default_factory=SyntheticDatasetConfig)
	eval: EvalConfig = field(default_factory=EvalConfig)
	search: SearchConfig = field(default_factory=SearchConfig)
	predictor: PredictorConfig = field(default_factory=PredictorConfig)

	def __post_init__(self) -> None:
		if self.frames < 1:
			raise ConfigError("frames must be >= 1")
		if self.dataset.feature_dim != self.supernet.input_channels:
			raise ConfigError(
				f"dataset feature_dim {self.dataset.feature_dim} must equal supernet input_channels {self.supernet.input_channels}"
			)
		if self.search.granularity_c % self.supernet.res2net_scale != 0:
			raise ConfigError("search granularity_c must be a multiple of res2net_scale")

	def to_dict(self) -> dict:
		return {
			"name": self.name,
			"seed": self.seed,
			"frames": self.frames,
			"supernet": self.supernet.to_dict(),
			"train": self.train.to_dict(),
			"dataset": self.dataset.to_dict(),
			"eval": self.eval.to_dict(),
			"search": self.search.to_dict(),
			"predictor": self.predictor.to_dict(),
		}

	@classmethod
	def from_dict(cls, data: dict) -> "RunConfig":
		sections = {
			"supernet": SupernetConfig,
			"train": TrainConfig,
			"dataset": SyntheticDatasetConfig,
			"eval": EvalConfig,
			"search": SearchConfig,
			"predictor": PredictorConfig,
		}
		unknown = sorted(set(data) - set(sections) - {"name", "seed", "frames"})
		if unknown:
			raise ConfigError(f"unknown run config keys: {', '.join(unknown)}")
		kwargs = {key: data[key] for key in ("name", "seed", "frames") if key in data}
		for key, section in sections.items():
			value = data.get(key, {})
			if not isinstance(value, dict):
				raise ConfigError(f"config section '{key}' must be a JSON object")
			kwargs[key] = section.from_dict(value)
		return cls(**kwargs)

	def with_overrides(self, seed: int | None = None, frames: int | None = None) -> "RunConfig":
		"""
		Copy with CLI overrides; a seed override reseeds every section.
		"""
		data = self.to_dict()
		if seed is not None:
			data["seed"] = seed
			data["train"]["seed"] = seed
			data["dataset"]["seed"] = seed
			data["predictor"]["seed"] = seed
			data["search"]["evolution"]["seed"] = seed
		if frames is not None:
			data["frames"] = frames
		return RunConfig.from_dict(data)

	#============================================
	def min_front(self) -> int:
		return max(self.supernet.width_quantum, quantize_width(self.supernet.max_front_width * 0.25, self.supernet.width_quantum))

	def min_back(self) -> int:
		return max(self.supernet.width_quantum, quantize_width(self.supernet.max_back_width * 0.25, self.supernet.width_quantum))

	def coarse_space(self) -> SpaceConfig:
		return coarse_space(self.supernet.max_front_width, self.supernet.max_back_width, self.supernet.width_quantum)

	def search_space(self, kind: str | None = None, granularity_c: int | None = None) -> SpaceConfig:
		"""
		Search space of the given kind sized to this supernet.
		"""
		kind = kind or self.search.space
		step = granularity_c or self.search.granularity_c
		if step < 1 or step % self.supernet.res2net_scale != 0:
			raise ConfigError(f"granularity_c {step} must be a positive multiple of res2net_scale {self.supernet.res2net_scale}")
		if kind == "coarse":
			return self.coarse_space()
		if kind == "fine":
			return fine_space(step, self.min_front(), self.supernet.max_front_width, self.min_back(), self.supernet.max_back_width)
		if kind == "grid":
			return grid_space(step, self.min_front(), self.supernet.max_front_width)
		raise ConfigError(f"unknown search space '{kind}'")


#============================================
def load_run_config(path: str) -> RunConfig:
	try:
		data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
	except json.JSONDecodeError as exc:
		raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
	if not isinstance(data, dict):
		raise ConfigError(f"{path}: top level must be a JSON object")
	return RunConfig.from_dict(data)
