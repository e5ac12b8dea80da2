# Standard Library
import os

# PIP3 modules
import numpy
import pytest

# local repo modules
from tdnn_supernet import checkpoint
from tdnn_supernet import numerics
from tdnn_supernet import supernet
from tdnn_supernet import trainer
from tdnn_supernet.errors import ConfigError, TrainingDivergedError
from tdnn_supernet.log_utils import read_jsonl
from tdnn_supernet.space import SamplerState, named_subnets, training_space

#============================================


def _tiny_train_config(**overrides) -> trainer.TrainConfig:
	values = {
		"epochs_per_stage": 1,
		"cycle_epochs": 2,
		"batch_size": 4,
		"segment_frames_largest": 20,
		"segment_frames": 20,
	}
	values.update(overrides)
	return trainer.TrainConfig(**values)


#============================================
def test_cyclic_lr_is_triangular():
	config = trainer.TrainConfig(lr_min=0.0001, lr_max=0.001, cycle_epochs=4)
	assert trainer.cyclic_lr(0.0, config) == pytest.approx(0.0001)
	assert trainer.cyclic_lr(2.0, config) == pytest.approx(0.001)
	assert trainer.cyclic_lr(1.0, config) == pytest.approx(0.00055)
	assert trainer.cyclic_lr(3.0, config) == pytest.approx(0.00055)
	assert trainer.cyclic_lr(4.0, config) == pytest.approx(0.0001)


#============================================
def test_train_config_rejections():
	with pytest.raises(ConfigError):
		trainer.TrainConfig(cycle_epochs=3)
	with pytest.raises(ConfigError):
		trainer.TrainConfig(lr_min=0.1, lr_max=0.01)
	with pytest.raises(ConfigError):
		trainer.TrainConfig.from_dict({"epochs": 3})
	config = trainer.TrainConfig.from_dict({"augment": {"noise": False}})
	assert config.augment.enabled() == ["time_mask", "freq_mask"]


#============================================
def test_masks_zero_a_band_of_known_width():
	rng = numpy.random.default_rng(0)
	batch = rng.normal(size=(2, 8, 30))
	policy = trainer.AugmentPolicy(time_mask_frames=5, freq_mask_channels=20)
	timed = trainer.apply_augmentation(batch, "time_mask", policy, rng)
	zero_frames = numpy.all(timed == 0.0, axis=(0, 1))
	assert zero_frames.sum() == 5
	# a band wider than the feature axis blanks every channel
	masked = trainer.apply_augmentation(batch, "freq_mask", policy, rng)
	assert numpy.all(masked == 0.0)
	noisy = trainer.apply_augmentation(batch, "noise", policy, rng)
	assert noisy.shape == batch.shape
	assert not numpy.array_equal(noisy, batch)
	with pytest.raises(ValueError):
		trainer.apply_augmentation(batch, "reverb", policy, rng)


#============================================
def test_empty_policy_is_identity():
	rng = numpy.random.default_rng(1)
	batch = rng.normal(size=(2, 8, 10))
	policy = trainer.AugmentPolicy(noise=False, time_mask=False, freq_mask=False)
	out, name = trainer.augment(batch, policy, rng)
	assert name == "identity"
	numpy.testing.assert_array_equal(out, batch)


#============================================
def test_augment_draws_identity_among_choices():
	rng = numpy.random.default_rng(2)
	batch = numpy.ones((1, 8, 10))
	names = {trainer.augment(batch, trainer.AugmentPolicy(), rng)[1] for _ in range(200)}
	assert names == {"noise", "time_mask", "freq_mask", "identity"}


#============================================
def test_aam_loss_without_margin_is_scaled_softmax():
	rng = numpy.random.default_rng(3)
	embeddings = rng.normal(size=(4, 6))
	classes = rng.normal(size=(3, 6))
	labels = [0, 2, 1, 2]
	tape = numerics.Tape(record=False)
	loss = trainer.aam_softmax_loss(tape, tape.constant(embeddings), labels, tape.constant(classes), margin=0.0, scale=5.0)
	unit_e = embeddings / numpy.linalg.norm(embeddings, axis=1, keepdims=True)
	unit_w = classes / numpy.linalg.norm(classes, axis=1, keepdims=True)
	logits = 5.0 * unit_e @ unit_w.T
	log_total = numpy.log(numpy.exp(logits).sum(axis=1))
	expected = numpy.mean(log_total - logits[numpy.arange(4), labels])
	assert float(loss.data) == pytest.approx(expected)


#============================================
def test_aam_loss_gradient_matches_finite_differences():
	rng = numpy.random.default_rng(4)
	embeddings = rng.normal(size=(3, 4))
	classes = rng.normal(size=(5, 4))
	labels = [1, 4, 0]

	def loss_of(e: numpy.ndarray, w: numpy.ndarray) -> float:
		tape = numerics.Tape(record=False)
		out = trainer.aam_softmax_loss(tape, tape.constant(e), labels, tape.constant(w), margin=0.2, scale=5.0)
		return float(out.data)

	tape = numerics.Tape(record=True)
	e_tensor = tape.variable("e", embeddings)
	w_tensor = tape.variable("w", classes)
	grads = numerics.gradients(tape, trainer.aam_softmax_loss(tape, e_tensor, labels, w_tensor, margin=0.2, scale=5.0))
	step = 1e-6
	for name, array in (("e", embeddings), ("w", classes)):
		numeric = numpy.zeros_like(array)
		for index in numpy.ndindex(array.shape):
			plus = array.copy()
			minus = array.copy()
			plus[index] += step
			minus[index] -= step
			if name == "e":
				numeric[index] = (loss_of(plus, classes) - loss_of(minus, classes)) / (2.0 * step)
			else:
				numeric[index] = (loss_of(embeddings, plus) - loss_of(embeddings, minus)) / (2.0 * step)
		numpy.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-6)


#============================================
def test_aam_loss_rejects_bad_labels():
	tape = numerics.Tape(record=False)
	embeddings = tape.constant(numpy.ones((2, 4)))
	classes = tape.constant(numpy.eye(3, 4))
	with pytest.raises(ValueError):
		trainer.aam_softmax_loss(tape, embeddings, [0, 3], classes)
	with pytest.raises(ValueError):
		trainer.aam_softmax_loss(tape, embeddings, [0], classes)


#============================================
def test_repeated_path_doubles_the_gradient(tiny_weights, tiny_dataset):
	config = _tiny_train_config()
	trainer.ensure_head(tiny_weights, tiny_dataset.n_speakers)
	rng = numpy.random.default_rng(5)
	batch, labels = next(tiny_dataset.train_batches(4, 20, rng))
	spec = named_subnets(64, 192, 4)["a_C2min"]
	single_loss, single, single_masks = trainer.accumulate_path_gradients(tiny_weights, [spec], batch, labels, config)
	double_loss, double, double_masks = trainer.accumulate_path_gradients(tiny_weights, [spec, spec], batch, labels, config)
	assert double_loss == pytest.approx(single_loss)
	assert set(single) == set(double)
	for name, grad in single.items():
		numpy.testing.assert_allclose(double[name], 2.0 * grad, rtol=1e-10, atol=1e-12)
	for name, mask in single_masks.items():
		numpy.testing.assert_array_equal(double_masks[name], mask)


#============================================
def test_gradients_stay_inside_the_active_slices(tiny_weights, tiny_dataset):
	config = _tiny_train_config()
	trainer.ensure_head(tiny_weights, tiny_dataset.n_speakers)
	batch, labels = next(tiny_dataset.train_batches(4, 20, numpy.random.default_rng(6)))
	spec = named_subnets(64, 192, 4)["a_C2min"]
	_, grads, masks = trainer.accumulate_path_gradients(tiny_weights, [spec], batch, labels, config)
	for name, grad in grads.items():
		assert not numpy.any(grad[~masks[name]])
	assert "block3.conv1.weight" not in grads


#============================================
def test_non_finite_loss_raises(tiny_weights, tiny_dataset):
	config = _tiny_train_config()
	trainer.ensure_head(tiny_weights, tiny_dataset.n_speakers)
	tiny_weights.params["fc.bias"][:] = numpy.nan
	batch, labels = next(tiny_dataset.train_batches(4, 20, numpy.random.default_rng(7)))
	spec = named_subnets(64, 192, 4)["a_max"]
	with pytest.raises(TrainingDivergedError) as excinfo:
		trainer.accumulate_path_gradients(tiny_weights, [spec], batch, labels, config, batch_index=9)
	assert excinfo.value.batch_index == 9
	assert excinfo.value.op in ("take", "linear")
	assert excinfo.value.spec == spec.to_dict()


#============================================
def test_schedule_validation():
	schedule = trainer.default_schedule(64, 192, 4)
	schedule.validate()
	assert schedule.names() == ["largest", "kernel", "depth", "width1", "width2"]
	backwards = trainer.StageSchedule([
		("kernel", training_space("kernel", 64, 192, 4)),
		("largest", training_space("largest", 64, 192, 4)),
	])
	with pytest.raises(ConfigError):
		backwards.validate()
	with pytest.raises(ConfigError):
		trainer.StageSchedule().validate()
	with pytest.raises(ConfigError):
		schedule.index("width3")


#============================================
def test_batch_loss_is_repeatable_and_leaves_buffers_alone(tiny_weights, tiny_dataset):
	spec = named_subnets(64, 192, 4)["a_max"]
	config = _tiny_train_config(seed=7)
	buffers = {name: value.copy() for name, value in tiny_weights.buffers.items()}
	first = trainer.batch_loss(tiny_weights, spec, tiny_dataset, config)
	second = trainer.batch_loss(tiny_weights, spec, tiny_dataset, config)
	assert numpy.isfinite(first)
	assert first == second
	for name, value in buffers.items():
		numpy.testing.assert_array_equal(tiny_weights.buffers[name], value)


#============================================
def test_progressive_training_writes_stage_checkpoints(tmp_path, tiny_weights, tiny_dataset):
	config = _tiny_train_config()
	schedule = trainer.default_schedule(64, 192, 4, stages=("largest", "kernel"))
	log_path = str(tmp_path / "train.jsonl")
	summary = trainer.progressive_train(tiny_weights, schedule, config, tiny_dataset, str(tmp_path), log_path=log_path)
	assert summary.stage_sizes == {"largest": 1, "kernel": 243}
	assert [os.path.basename(path) for path in summary.checkpoints] == ["stage0_largest.ckpt", "stage1_kernel.ckpt"]
	assert all(os.path.exists(path) for path in summary.checkpoints)
	assert numpy.isfinite(summary.initial_loss)
	assert summary.started_at.endswith("Z")
	assert summary.finished_at >= summary.started_at
	assert all(len(losses) == 1 for losses in summary.losses.values())
	records = read_jsonl(log_path)
	# 12 training utterances in batches of 4, one epoch per stage
	assert len(records) == 6
	assert {record["stage"] for record in records} == {"largest", "kernel"}
	assert all(record["spec"][0]["kernels"] == [5] * 5 for record in records if record["stage"] == "largest")
	weights, loaded = checkpoint.load_supernet(summary.checkpoints[-1])
	assert loaded.stage == "kernel"
	assert loaded.metadata["stage_index"] == 1
	numpy.testing.assert_array_equal(weights.params[trainer.HEAD_NAME], tiny_weights.params[trainer.HEAD_NAME])


#============================================
def test_progressive_training_resumes_at_a_stage(tmp_path, tiny_weights, tiny_dataset):
	schedule = trainer.default_schedule(64, 192, 4, stages=("largest", "kernel"))
	summary = trainer.progressive_train(tiny_weights, schedule, _tiny_train_config(), tiny_dataset, str(tmp_path), start_stage="kernel")
	assert list(summary.stage_sizes) == ["kernel"]
	assert os.path.basename(summary.checkpoints[0]) == "stage1_kernel.ckpt"


#============================================
def test_training_moves_only_sampled_weights(tiny_weights, tiny_dataset):
	config = _tiny_train_config()
	before = tiny_weights.copy()
	space = training_space("largest", 64, 192, 4)
	trainer.dynamic_path_train(tiny_weights, space, SamplerState(rng_seed=0), config, tiny_dataset, epochs=1, stage="largest")
	assert not numpy.array_equal(tiny_weights.params["stem.weight"], before.params["stem.weight"])
	# kernel-5 paths never read the tap matrices
	numpy.testing.assert_array_equal(tiny_weights.params["stem.ktrans3"], before.params["stem.ktrans3"])


#============================================
def test_largest_stage_can_train_longer(tmp_path, tiny_weights, tiny_dataset):
	config = _tiny_train_config(largest_epochs=2)
	assert config.epochs_for("largest") == 2
	assert config.epochs_for("kernel") == 1
	assert trainer.TrainConfig.from_dict(config.to_dict()) == config
	schedule = trainer.default_schedule(64, 192, 4, stages=("largest", "kernel"))
	summary = trainer.progressive_train(tiny_weights, schedule, config, tiny_dataset, str(tmp_path))
	assert [len(summary.losses[name]) for name in ("largest", "kernel")] == [2, 1]
	with pytest.raises(ConfigError):
		_tiny_train_config(largest_epochs=0)


#============================================
def test_full_schedule_is_reproducible(tmp_path, tiny_config, tiny_dataset):
	schedule = trainer.default_schedule(64, 192, 4)
	runs = []
	for name in ("first", "second"):
		out_dir = tmp_path / name
		summary = trainer.progressive_train(supernet.build(tiny_config), schedule, _tiny_train_config(), tiny_dataset, str(out_dir))
		runs.append(summary)
	first, second = runs
	assert [os.path.basename(path) for path in first.checkpoints] == [
		"stage0_largest.ckpt", "stage1_kernel.ckpt", "stage2_depth.ckpt", "stage3_width1.ckpt", "stage4_width2.ckpt",
	]
	assert first.losses == second.losses
	for path_a, path_b in zip(first.checkpoints, second.checkpoints):
		with open(path_a, "rb") as handle_a, open(path_b, "rb") as handle_b:
			assert handle_a.read() == handle_b.read()
