# Standard Library
import os
import re

# PIP3 modules
import pytest

# local repo modules
import tdnn_supernet
from tdnn_supernet import log_utils

#============================================
def test_format_fields_renders_floats_compactly():
	assert log_utils.format_fields(stage="kernel", epoch=3, loss=0.123456789) == "stage=kernel epoch=3 loss=0.123457"


#============================================
def test_jsonl_append_and_read(tmp_path):
	path = str(tmp_path / "logs" / "run.jsonl")
	log_utils.append_jsonl(path, {"epoch": 0, "loss": 1.5})
	log_utils.append_jsonl(path, {"epoch": 1, "loss": 1.25})
	assert log_utils.read_jsonl(path) == [{"epoch": 0, "loss": 1.5}, {"epoch": 1, "loss": 1.25}]
	log_utils.append_jsonl("", {"ignored": True})
	log_utils.append_jsonl(None, {"ignored": True})


#============================================
def test_read_jsonl_rejects_bad_lines(tmp_path):
	path = tmp_path / "bad.jsonl"
	path.write_text("{\"a\": 1}\nnot json\n", encoding="utf-8")
	with pytest.raises(ValueError):
		log_utils.read_jsonl(str(path))
	path.write_text("[1, 2]\n", encoding="utf-8")
	with pytest.raises(ValueError):
		log_utils.read_jsonl(str(path))


#============================================
def test_quiet_status_prints_nothing(capsys):
	log_utils.print_status("train", "epoch=1", quiet=True)
	captured = capsys.readouterr()
	assert captured.out == ""
	assert captured.err == ""


#============================================
def test_timestamp_and_version():
	stamp = log_utils.utc_timestamp()
	assert stamp.endswith("Z")
	assert len(stamp) == 20
	assert tdnn_supernet.__version__ == "26.10.0"


#============================================
def test_pyproject_version_matches_version_file(repo_root):
	with open(os.path.join(repo_root, "pyproject.toml"), "r", encoding="utf-8") as handle:
		match = re.search(r'^version = "([^"]+)"$', handle.read(), re.MULTILINE)
	assert match is not None
	with open(os.path.join(repo_root, "VERSION"), "r", encoding="utf-8") as handle:
		assert match.group(1) == handle.read().strip()
