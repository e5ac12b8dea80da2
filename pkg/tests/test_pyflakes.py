"""
Repo-wide pyflakes check.
"""

# Standard Library
import io
import os

# PIP3 modules
import pyflakes.api
import pyflakes.reporter

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SKIP_DIRS = {"examples", ".git", ".venv", "__pycache__", "build", "dist"}

#============================================


def _python_files() -> list[str]:
	paths = []
	for folder, dirnames, filenames in os.walk(REPO_ROOT):
		dirnames[:] = sorted(name for name in dirnames if name not in SKIP_DIRS and not name.startswith("."))
		for filename in sorted(filenames):
			if filename.endswith(".py"):
				paths.append(os.path.join(folder, filename))
	return paths


#============================================
def test_pyflakes_is_clean():
	warnings = io.StringIO()
	errors = io.StringIO()
	reporter = pyflakes.reporter.Reporter(warnings, errors)
	count = 0
	for path in _python_files():
		count += pyflakes.api.checkPath(path, reporter)
	assert count == 0, warnings.getvalue() + errors.getvalue()
