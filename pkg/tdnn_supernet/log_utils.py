"""
Status output and append-only run logs.
"""

from __future__ import annotations

# Standard Library
from datetime import datetime, timezone
import json
import os

# PIP3 modules
import rich.console
import rich.markup

#============================================


TAG_COLORS = {
	"space": "cyan",
	"train": "green",
	"recal": "magenta",
	"cost": "yellow",
	"search": "blue",
	"predictor": "bright_cyan",
	"eval": "bright_magenta",
	"data": "white",
}

_STATUS_CONSOLE = rich.console.Console(stderr=True, highlight=False)


#============================================
def print_status(tag: str, message: str, quiet: bool = False) -> None:
	"""
	Print a tagged status line on stderr, colored when attached to a terminal.
	"""
	if quiet:
		return
	color = TAG_COLORS.get(tag, "white")
	label = rich.markup.escape(f"[{tag}]")
	_STATUS_CONSOLE.print(f"[{color}]{label}[/{color}] {rich.markup.escape(message)}")


#============================================
def format_fields(**fields: object) -> str:
	"""
	Render key=value pairs the way status lines expect.
	"""
	parts: list[str] = []
	for key, value in fields.items():
		if isinstance(value, float):
			parts.append(f"{key}={value:.6g}")
		else:
			parts.append(f"{key}={value}")
	return " ".join(parts)


#============================================
def utc_timestamp() -> str:
	return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


#============================================
def append_jsonl(path: str | None, record: dict) -> None:
	"""
	Append one JSON record to a JSON-lines log; no-op when path is empty.
	"""
	if not path:
		return
	folder = os.path.dirname(path)
	if folder:
		os.makedirs(folder, exist_ok=True)
	with open(path, "a", encoding="utf-8") as handle:
		handle.write(json.dumps(record, sort_keys=True) + "\n")


#============================================
def read_jsonl(path: str) -> list[dict]:
	records: list[dict] = []
	with open(path, "r", encoding="utf-8") as handle:
		for line_number, line in enumerate(handle, start=1):
			text = line.strip()
			if not text:
				continue
			try:
				item = json.loads(text)
			except json.JSONDecodeError as exc:
				raise ValueError(f"{path}:{line_number}: invalid JSON line ({exc.msg})") from exc
			if not isinstance(item, dict):
				raise ValueError(f"{path}:{line_number}: expected a JSON object")
			records.append(item)
	return records
