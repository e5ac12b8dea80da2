"""
Accuracy predictor: a ReLU feedforward regressor from one-hot subnet
encodings to a min-max normalized EER or DCF.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import json
from typing import Sequence

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import numerics
from tdnn_supernet.errors import CheckpointError, ConfigError, PredictorError
from tdnn_supernet.log_utils import format_fields, print_status
from tdnn_supernet.numerics import Tape, Tensor
from tdnn_supernet.space import SpaceConfig, SubnetSpec, encode_onehot, onehot_length

#============================================


METRICS = ("eer", "dcf")
MIN_RECORDS = 10


#============================================


@dataclass(slots=True)
class AccuracyRecord:
	spec: SubnetSpec
	encoding: numpy.ndarray
	eer: float
	dcf: float

	def __post_init__(self) -> None:
		self.encoding = numpy.asarray(self.encoding, dtype=numpy.float64)
		if not (numpy.isfinite(self.eer) and numpy.isfinite(self.dcf)):
			raise PredictorError(f"record for {self.spec.label()} has non-finite metrics")

	def metric(self, name: str) -> float:
		if name not in METRICS:
			raise PredictorError(f"unknown metric '{name}', expected one of {', '.join(METRICS)}")
		return self.eer if name == "eer" else self.dcf

	def to_dict(self) -> dict:
		return {
			"spec": self.spec.to_dict(),
			"encoding": [int(value) for value in self.encoding],
			"eer": self.eer,
			"dcf": self.dcf,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "AccuracyRecord":
		for name in ("spec", "encoding", "eer", "dcf"):
			if name not in data:
				raise PredictorError(f"accuracy record is missing '{name}'")
		return cls(
			spec=SubnetSpec.from_dict(data["spec"]),
			encoding=numpy.array(data["encoding"], dtype=numpy.float64),
			eer=float(data["eer"]),
			dcf=float(data["dcf"]),
		)


@dataclass(slots=True)
class TargetScaler:
	minimum: float
	maximum: float

	def transform(self, values: numpy.ndarray) -> numpy.ndarray:
		return (numpy.asarray(values, dtype=numpy.float64) - self.minimum) / (self.maximum - self.minimum)

	def inverse(self, values: numpy.ndarray) -> numpy.ndarray:
		return numpy.asarray(values, dtype=numpy.float64) * (self.maximum - self.minimum) + self.minimum


@dataclass(slots=True)
class PredictorConfig:
	hidden: int = 400
	layers: int = 3
	epochs: int = 200
	lr: float = 1e-3
	batch_size: int = 64
	validation_fraction: float = 0.2
	metric: str = "eer"
	seed: int = 0

	def __post_init__(self) -> None:
		if self.metric not in METRICS:
			raise ConfigError(f"predictor metric must be one of {', '.join(METRICS)}")
		if self.hidden < 1 or self.layers < 1 or self.epochs < 1 or self.batch_size < 1:
			raise ConfigError("hidden, layers, epochs, and batch_size must be >= 1")
		if not self.lr > 0.0:
			raise ConfigError("predictor lr must be > 0")
		if not 0.0 <= self.validation_fraction < 1.0:
			raise ConfigError("validation_fraction must be in [0, 1)")

	def to_dict(self) -> dict:
		return {
			"hidden": self.hidden,
			"layers": self.layers,
			"epochs": self.epochs,
			"lr": self.lr,
			"batch_size": self.batch_size,
			"validation_fraction": self.validation_fraction,
			"metric": self.metric,
			"seed": self.seed,
		}

	@classmethod
	def from_dict(cls, data: dict) -> "PredictorConfig":
		unknown = sorted(set(data) - set(cls.__dataclass_fields__))
		if unknown:
			raise ConfigError(f"unknown predictor config keys: {', '.join(unknown)}")
		return cls(**data)


@dataclass(slots=True)
class PredictorModel:
	space: SpaceConfig
	metric: str
	scaler: TargetScaler
	params: dict[str, numpy.ndarray]
	layers: int
	history: list[dict] = field(default_factory=list)

	@property
	def input_length(self) -> int:
		return int(self.params["layer0.weight"].shape[1])

	def forward_normalized(self, encodings: numpy.ndarray) -> numpy.ndarray:
		tape = Tape(record=False)
		tensors = {name: tape.constant(value) for name, value in self.params.items()}
		return _mlp(tape, tensors, tape.constant(encodings), self.layers).data[:, 0]

	def to_arrays(self) -> dict[str, numpy.ndarray]:
		return dict(self.params)

	def metadata(self) -> dict:
		return {
			"kind": "predictor",
			"space": self.space.to_dict(),
			"metric": self.metric,
			"scaler": {"minimum": self.scaler.minimum, "maximum": self.scaler.maximum},
			"layers": self.layers,
			"history": self.history,
		}

	@classmethod
	def from_arrays(cls, arrays: dict[str, numpy.ndarray], metadata: dict) -> "PredictorModel":
		if metadata.get("kind") != "predictor":
			raise CheckpointError("checkpoint does not hold an accuracy predictor")
		return cls(
			space=SpaceConfig.from_dict(metadata["space"]),
			metric=str(metadata["metric"]),
			scaler=TargetScaler(float(metadata["scaler"]["minimum"]), float(metadata["scaler"]["maximum"])),
			params={name: numpy.array(value) for name, value in arrays.items()},
			layers=int(metadata["layers"]),
			history=list(metadata.get("history", [])),
		)


#============================================
def _mlp(tape: Tape, tensors: dict[str, Tensor], x: Tensor, layers: int) -> Tensor:
	h = x
	for index in range(layers):
		h = numerics.relu(tape, numerics.linear(tape, h, tensors[f"layer{index}.weight"], tensors[f"layer{index}.bias"]))
	return numerics.linear(tape, h, tensors["out.weight"], tensors["out.bias"])


#============================================
def mae_loss(tape: Tape, prediction: Tensor, target: numpy.ndarray) -> Tensor:
	target = numpy.asarray(target, dtype=numpy.float64).reshape(prediction.data.shape)

	def forward(p: numpy.ndarray) -> numpy.ndarray:
		return numpy.asarray(numpy.mean(numpy.abs(p - target)))

	def backward(grad: numpy.ndarray, out: numpy.ndarray, p: numpy.ndarray) -> tuple:
		return (numpy.sign(p - target) * (float(grad) / p.size),)

	return numerics.primitive(tape, "mae", [prediction], forward, backward)


#============================================
def normalize_targets(
	records: Sequence[AccuracyRecord],
	metric: str,
	allow_constant: bool = False,
) -> tuple[numpy.ndarray, TargetScaler]:
	"""
	Min-max scale one metric over the given records.

	Equal targets are rejected unless allow_constant, which maps them to 0.
	"""
	values = numpy.array([record.metric(metric) for record in records], dtype=numpy.float64)
	if values.size == 0:
		raise PredictorError("no records to normalize")
	low = float(values.min())
	high = float(values.max())
	if high == low:
		if not allow_constant:
			raise PredictorError(f"all {values.size} '{metric}' targets equal {low}; min-max scaling is undefined")
		high = low + 1.0
	scaler = TargetScaler(low, high)
	return scaler.transform(values), scaler


#============================================
def _encodings(records: Sequence[AccuracyRecord]) -> numpy.ndarray:
	lengths = {record.encoding.size for record in records}
	if len(lengths) != 1:
		raise PredictorError(f"records mix encoding lengths {sorted(lengths)}")
	return numpy.stack([record.encoding for record in records])


#============================================
def _init_params(input_length: int, config: PredictorConfig, bias: float) -> dict[str, numpy.ndarray]:
	rng = numpy.random.default_rng(config.seed)
	params: dict[str, numpy.ndarray] = {}
	fan_in = input_length
	for index in range(config.layers):
		params[f"layer{index}.weight"] = rng.normal(0.0, numpy.sqrt(2.0 / fan_in), size=(config.hidden, fan_in))
		params[f"layer{index}.bias"] = numpy.zeros(config.hidden)
		fan_in = config.hidden
	# zero output layer starts the model at the mean-target predictor
	params["out.weight"] = numpy.zeros((1, config.hidden))
	params["out.bias"] = numpy.full(1, bias)
	return params


#============================================
def _mae(params: dict[str, numpy.ndarray], layers: int, x: numpy.ndarray, y: numpy.ndarray) -> float:
	if x.shape[0] == 0:
		return float("nan")
	tape = Tape(record=False)
	tensors = {name: tape.constant(value) for name, value in params.items()}
	prediction = _mlp(tape, tensors, tape.constant(x), layers).data[:, 0]
	return float(numpy.mean(numpy.abs(prediction - y)))


#============================================
def train_predictor(
	records: Sequence[AccuracyRecord],
	space: SpaceConfig,
	config: PredictorConfig,
	quiet: bool = True,
) -> PredictorModel:
	"""
	Fit the MLP by Adam on MAE and keep the parameters with the lowest train MAE.

	The validation split is drawn by seed; scaling constants come from the
	training split only.
	"""
	if len(records) < MIN_RECORDS:
		raise PredictorError(f"predictor needs >= {MIN_RECORDS} records, got {len(records)}")
	encodings = _encodings(records)
	if encodings.shape[1] != onehot_length(space):
		raise PredictorError(f"encoding length {encodings.shape[1]} does not match space length {onehot_length(space)}")
	rng = numpy.random.default_rng(config.seed)
	order = rng.permutation(len(records))
	n_val = int(round(len(records) * config.validation_fraction))
	val_index = numpy.sort(order[:n_val])
	train_index = numpy.sort(order[n_val:])
	train_records = [records[int(index)] for index in train_index]
	y_train, scaler = normalize_targets(train_records, config.metric, allow_constant=True)
	y_val = scaler.transform([records[int(index)].metric(config.metric) for index in val_index])
	x_train = encodings[train_index]
	x_val = encodings[val_index]

	params = _init_params(encodings.shape[1], config, float(y_train.mean()))
	optimizer = numerics.OptimizerState()
	best_params = {name: value.copy() for name, value in params.items()}
	best_train = _mae(params, config.layers, x_train, y_train)
	history = [{"epoch": 0, "train_mae": best_train, "val_mae": _mae(params, config.layers, x_val, y_val)}]
	for epoch in range(1, config.epochs + 1):
		permutation = rng.permutation(x_train.shape[0])
		for start in range(0, permutation.size, config.batch_size):
			chosen = permutation[start:start + config.batch_size]
			tape = Tape(record=True)
			tensors = {name: tape.variable(name, value) for name, value in params.items()}
			prediction = _mlp(tape, tensors, tape.constant(x_train[chosen]), config.layers)
			loss = mae_loss(tape, prediction, y_train[chosen])
			numerics.adam_step(params, numerics.gradients(tape, loss), optimizer, config.lr)
		train_mae = _mae(params, config.layers, x_train, y_train)
		if train_mae < best_train:
			best_train = train_mae
			best_params = {name: value.copy() for name, value in params.items()}
		history.append({
			"epoch": epoch,
			"train_mae": best_train,
			"epoch_train_mae": train_mae,
			"val_mae": _mae(best_params, config.layers, x_val, y_val),
		})
	print_status("predictor", format_fields(metric=config.metric, train_mae=best_train, val_mae=history[-1]["val_mae"]), quiet=quiet)
	return PredictorModel(
		space=space,
		metric=config.metric,
		scaler=scaler,
		params=best_params,
		layers=config.layers,
		history=history,
	)


#============================================
def _check_space(model: PredictorModel, space: SpaceConfig | None) -> None:
	if space is not None and space.to_dict() != model.space.to_dict():
		raise PredictorError("spec space does not match the space the predictor was trained on")
	if onehot_length(model.space) != model.input_length:
		raise PredictorError(f"model expects {model.input_length} inputs, space encodes {onehot_length(model.space)}")


#============================================
def predict(model: PredictorModel, spec: SubnetSpec, space: SpaceConfig | None = None) -> float:
	"""
	Denormalized metric estimate for one spec.
	"""
	_check_space(model, space)
	encoding = encode_onehot(spec, model.space)
	return float(model.scaler.inverse(model.forward_normalized(encoding[None, :]))[0])


#============================================
def predict_many(model: PredictorModel, specs: Sequence[SubnetSpec], space: SpaceConfig | None = None) -> numpy.ndarray:
	_check_space(model, space)
	if not specs:
		return numpy.zeros(0)
	encodings = numpy.stack([encode_onehot(spec, model.space) for spec in specs])
	return model.scaler.inverse(model.forward_normalized(encodings))


#============================================
def make_record(spec: SubnetSpec, space: SpaceConfig, eer: float, dcf: float) -> AccuracyRecord:
	return AccuracyRecord(spec=spec, encoding=encode_onehot(spec, space), eer=float(eer), dcf=float(dcf))


#============================================
def write_records(path: str, records: Sequence[AccuracyRecord]) -> None:
	with open(path, "w", encoding="utf-8") as handle:
		for record in records:
			handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


#============================================
def read_records(path: str, space: SpaceConfig | None = None) -> list[AccuracyRecord]:
	"""
	Load JSON-lines records; with a space, reject encodings of another length.
	"""
	records: list[AccuracyRecord] = []
	with open(path, "r", encoding="utf-8") as handle:
		for line_number, line in enumerate(handle, start=1):
			text = line.strip()
			if not text:
				continue
			try:
				record = AccuracyRecord.from_dict(json.loads(text))
			except json.JSONDecodeError as exc:
				raise PredictorError(f"{path}:{line_number}: invalid JSON ({exc.msg})") from exc
			if space is not None and record.encoding.size != onehot_length(space):
				raise PredictorError(f"{path}:{line_number}: encoding length {record.encoding.size} does not match space")
			records.append(record)
	return records


#============================================
def save_predictor(path: str, model: PredictorModel) -> None:
	checkpoint.save_checkpoint(path, model.metadata(), model.to_arrays())


#============================================
def load_predictor(path: str) -> PredictorModel:
	loaded = checkpoint.load_checkpoint(path)
	return PredictorModel.from_arrays(loaded.arrays, loaded.metadata)
