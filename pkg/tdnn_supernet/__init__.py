"""
Dynamic TDNN speaker supernet: weight sharing, progressive training,
cost models, accuracy prediction, and constrained architecture search.
"""

import pathlib

_VERSION_FILE = pathlib.Path(__file__).resolve().parent.parent / "VERSION"
__version__ = _VERSION_FILE.read_text(encoding="utf-8").strip() if _VERSION_FILE.exists() else "0.0.0"
