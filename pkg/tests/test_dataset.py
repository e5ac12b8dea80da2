# PIP3 modules
import numpy
import pytest

# local repo modules
from tdnn_supernet import dataset
from tdnn_supernet.errors import ConfigError
from tdnn_supernet.space import bounds, coarse_space

#============================================


def _config(**overrides) -> dataset.SyntheticDatasetConfig:
	values = {
		"n_speakers": 3,
		"utterances_per_speaker": 2,
		"eval_speakers": 3,
		"eval_utterances_per_speaker": 2,
		"feature_dim": 6,
		"frames": 25,
		"n_trials": 10,
		"seed": 4,
	}
	values.update(overrides)
	return dataset.SyntheticDatasetConfig(**values)


#============================================
def test_zero_noise_gives_identical_utterances_per_speaker():
	data = dataset.generate_dataset(_config(noise_scale=0.0))
	numpy.testing.assert_array_equal(data.train_features[0], data.train_features[1])
	assert not numpy.array_equal(data.train_features[0], data.train_features[2])
	numpy.testing.assert_array_equal(data.eval_features[0], data.eval_features[1])


#============================================
def test_generation_is_seeded():
	first = dataset.generate_dataset(_config())
	second = dataset.generate_dataset(_config())
	third = dataset.generate_dataset(_config(seed=5))
	numpy.testing.assert_array_equal(first.train_features, second.train_features)
	assert first.trials == second.trials
	assert not numpy.array_equal(first.train_features, third.train_features)


#============================================
def test_trial_list_follows_target_ratio():
	config = _config(n_trials=21, target_ratio=0.3)
	data = dataset.generate_dataset(config)
	assert len(data.trials) == 21
	assert int(data.trials.labels.sum()) == config.n_target_trials == 6
	for trial in data.trials.trials:
		same_speaker = trial.id_a.split("-")[0] == trial.id_b.split("-")[0]
		assert same_speaker == trial.is_target
		if trial.is_target:
			assert trial.id_a != trial.id_b


#============================================
def test_train_and_eval_speakers_are_disjoint():
	data = dataset.generate_dataset(_config())
	assert sorted(set(data.train_labels.tolist())) == [0, 1, 2]
	assert all(utterance_id.startswith(("spk0003", "spk0004", "spk0005")) for utterance_id in data.eval_ids)
	assert set(data.eval_utterances()) == set(data.eval_ids)


#============================================
def test_train_batches_cover_every_utterance(tiny_dataset):
	rng = numpy.random.default_rng(0)
	batches = list(tiny_dataset.train_batches(5, 20, rng))
	assert [batch.shape for batch, _ in batches] == [(5, 8, 20), (5, 8, 20), (2, 8, 20)]
	labels = numpy.concatenate([labels for _, labels in batches])
	assert sorted(labels.tolist()) == sorted(tiny_dataset.train_labels.tolist())


#============================================
def test_crops_longer_than_the_utterance_wrap(tiny_dataset):
	batch, _ = next(tiny_dataset.train_batches(1, 45, numpy.random.default_rng(0)))
	assert batch.shape == (1, 8, 45)
	numpy.testing.assert_array_equal(batch[0, :, 30:], batch[0, :, :15])


#============================================
def test_recalibration_stream_and_cohort(tiny_dataset):
	stream = list(tiny_dataset.recalibration_stream(16, seed=1))
	assert len(stream) == 12
	assert all(item.shape == (8, 16) for item in stream)
	assert len(tiny_dataset.cohort(5)) == 5
	assert len(tiny_dataset.cohort(100)) == 12


#============================================
def test_dataset_file_round_trip(tmp_path, tiny_dataset):
	path = str(tmp_path / "data.ckpt")
	dataset.save_dataset(path, tiny_dataset)
	loaded = dataset.load_dataset(path)
	numpy.testing.assert_array_equal(loaded.train_features, tiny_dataset.train_features)
	numpy.testing.assert_array_equal(loaded.train_labels, tiny_dataset.train_labels)
	numpy.testing.assert_array_equal(loaded.eval_features, tiny_dataset.eval_features)
	assert loaded.eval_ids == tiny_dataset.eval_ids
	assert loaded.trials == tiny_dataset.trials
	assert loaded.config == tiny_dataset.config


#============================================
def test_config_rejections():
	with pytest.raises(ConfigError):
		_config(eval_utterances_per_speaker=1)
	with pytest.raises(ConfigError):
		_config(target_ratio=1.0)
	with pytest.raises(ConfigError):
		dataset.SyntheticDatasetConfig.from_dict({"speakers": 3})


#============================================
def test_surrogate_accuracy_improves_with_size(tiny_config):
	space = coarse_space(64, 192, 4)
	low, high = bounds(space)
	low_eer, _ = dataset.surrogate_metrics(low, space, tiny_config, 60)
	high_eer, _ = dataset.surrogate_metrics(high, space, tiny_config, 60)
	assert high_eer < low_eer
	assert dataset.surrogate_metrics(low, space, tiny_config, 60)[0] == low_eer


#============================================
def test_surrogate_records_are_seeded(tiny_config):
	space = coarse_space(64, 192, 4)
	first = dataset.surrogate_records(space, tiny_config, 15, 60, seed=2)
	second = dataset.surrogate_records(space, tiny_config, 15, 60, seed=2)
	assert len(first) == 15
	assert first == second
