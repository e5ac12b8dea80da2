"""
Shared fixtures: a tiny supernet and a tiny synthetic dataset.
"""

# Standard Library
import os
import sys

# PIP3 modules
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if REPO_ROOT not in sys.path:
	sys.path.insert(0, REPO_ROOT)

# local repo modules
from tdnn_supernet import dataset
from tdnn_supernet import supernet
from tdnn_supernet.space import training_space

#============================================


TINY_FRONT = 64
TINY_BACK = 192
TINY_QUANTUM = 4


#============================================
def tiny_supernet_config() -> supernet.SupernetConfig:
	return supernet.SupernetConfig(
		input_channels=8,
		max_front_width=TINY_FRONT,
		max_back_width=TINY_BACK,
		res2net_scale=4,
		se_bottleneck=8,
		attention_channels=8,
		embedding_dim=16,
		width_quantum=TINY_QUANTUM,
	)


#============================================
@pytest.fixture
def tiny_config() -> supernet.SupernetConfig:
	return tiny_supernet_config()


#============================================
@pytest.fixture
def tiny_weights(tiny_config) -> supernet.SupernetWeights:
	return supernet.build(tiny_config)


#============================================
@pytest.fixture
def tiny_space():
	return training_space("width2", TINY_FRONT, TINY_BACK, TINY_QUANTUM)


#============================================
@pytest.fixture
def tiny_dataset() -> dataset.SyntheticDataset:
	config = dataset.SyntheticDatasetConfig(
		n_speakers=4,
		utterances_per_speaker=3,
		eval_speakers=3,
		eval_utterances_per_speaker=2,
		feature_dim=8,
		frames=30,
		n_trials=12,
		seed=0,
	)
	return dataset.generate_dataset(config)


#============================================
@pytest.fixture
def repo_root() -> str:
	return REPO_ROOT
