# Standard Library
import json
import os

# local repo modules
import tdnn_nas
from tdnn_supernet import costmodel
from tdnn_supernet import dataset
from tdnn_supernet import predictor
from tdnn_supernet.config import load_run_config
from tdnn_supernet.space import named_subnets

#============================================


def _run(capsys, argv: list[str]) -> tuple[int, dict]:
	code = tdnn_nas.main(argv)
	out = capsys.readouterr().out
	return code, json.loads(out)


def _full(repo_root) -> str:
	return os.path.join(repo_root, "config", "full_scale.json")


def _toy(repo_root) -> str:
	return os.path.join(repo_root, "config", "toy.json")


#============================================
def test_space_size_of_the_last_training_stage(capsys, repo_root):
	code, payload = _run(capsys, ["space", "size", "--stage", "width2", "-c", _full(repo_root)])
	assert code == 0
	assert payload["size"] == 4066875
	assert payload["onehot_length"] == 48


#============================================
def test_space_grid_count(capsys, repo_root):
	code, payload = _run(capsys, ["space", "grid", "--granularity", "8", "-c", _full(repo_root)])
	assert code == 0
	assert payload["count"] == 441
	assert len(payload["specs"]) == 441


#============================================
def test_cost_of_the_named_base_subnet(capsys, repo_root):
	code, payload = _run(capsys, ["cost", "macs", "--named", "Base", "-c", _full(repo_root)])
	assert code == 0
	assert payload["frames"] == 300
	assert abs(payload["macs"] - 1.45e9) / 1.45e9 < 0.10
	code, payload = _run(capsys, ["cost", "params", "--named", "Base", "-c", _full(repo_root)])
	assert abs(payload["params"] - 5.79e6) / 5.79e6 < 0.05


#============================================
def test_rejections_print_a_json_error(capsys, tmp_path, repo_root):
	missing = str(tmp_path / "missing.json")
	code, payload = _run(capsys, ["cost", "macs", "--spec", missing, "-c", _toy(repo_root)])
	assert code == 2
	assert payload["error"] == "FileNotFoundError"
	assert payload["command"] == "cost"
	code, payload = _run(capsys, ["cost", "macs", "--named", "Huge", "-c", _toy(repo_root)])
	assert code == 2
	assert payload["error"] == "ConfigError"
	code, payload = _run(capsys, ["cost", "estimate", "--named", "a_max", "-c", _toy(repo_root)])
	assert code == 2
	assert "--table" in payload["message"]


#============================================
def test_generate_writes_dataset_and_trials(capsys, tmp_path, repo_root):
	out = str(tmp_path / "data.ckpt")
	trials_out = str(tmp_path / "trials.txt")
	code, payload = _run(capsys, ["generate", "-q", "-c", _toy(repo_root), "-o", out, "--trials-out", trials_out])
	assert code == 0
	assert payload["n_train"] == 128
	assert payload["n_eval"] == 32
	assert payload["n_trials"] == 80
	assert payload["n_target"] == 40
	loaded = dataset.load_dataset(out)
	assert loaded.train_features.shape == (128, 24, 80)
	assert len(open(trials_out, encoding="utf-8").read().splitlines()) == 80


#============================================
def test_predictor_then_search(capsys, tmp_path, repo_root):
	run = load_run_config(_toy(repo_root))
	space = run.search_space("coarse")
	rows = dataset.surrogate_records(space, run.supernet, 20, run.frames, seed=1)
	records_path = str(tmp_path / "records.jsonl")
	predictor.write_records(records_path, [predictor.make_record(spec, space, eer, dcf) for spec, eer, dcf in rows])
	model_path = str(tmp_path / "predictor.ckpt")
	code, payload = _run(capsys, ["predictor", "train", "-q", "-c", _toy(repo_root), "--records", records_path, "-o", model_path])
	assert code == 0
	assert payload["metric"] == "eer"
	assert os.path.exists(model_path)

	largest = named_subnets(run.supernet.max_front_width, run.supernet.max_back_width, run.supernet.width_quantum)["a_max"]
	budget = float(costmodel.count_params(largest, run.supernet))
	out = str(tmp_path / "search.json")
	argv = ["search", "mpea", "-q", "-c", _toy(repo_root), "--predictor", model_path, "--budget-params", str(budget), "-o", out]
	code, payload = _run(capsys, argv)
	assert code == 0
	assert payload["mode"] == "predicted"
	assert payload["best_spec"] is not None
	assert payload["best_metrics"]["cost"] <= budget
	with open(out, "r", encoding="utf-8") as handle:
		assert json.load(handle)["method"] == payload["method"]

	code, payload = _run(capsys, ["search", "mpea", "-q", "-c", _toy(repo_root), "--predictor", model_path])
	assert code == 2
	assert payload["error"] == "ConfigError"
