"""
Versioned binary container for named float64 arrays plus JSON metadata.

Layout: magic b"TDNNCKPT", uint32 version, uint64 header length, a UTF-8
JSON header (sorted keys), then the little-endian float64 payloads in
header order. Offsets in the header are relative to the payload start.
"""

from __future__ import annotations

# Standard Library
from dataclasses import dataclass, field
import json
import os
import struct
import zlib

# PIP3 modules
import numpy

# local repo modules
from tdnn_supernet.errors import CheckpointError
from tdnn_supernet.supernet import SupernetConfig, SupernetWeights

#============================================


MAGIC = b"TDNNCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPE = numpy.dtype("<f8")


#============================================


@dataclass(slots=True)
class Checkpoint:
	metadata: dict = field(default_factory=dict)
	arrays: dict[str, numpy.ndarray] = field(default_factory=dict)
	version: int = FORMAT_VERSION

	@property
	def stage(self) -> str | None:
		return self.metadata.get("stage")


#============================================
def encode_checkpoint(metadata: dict, arrays: dict[str, numpy.ndarray]) -> bytes:
	"""
	Serialize metadata and arrays; identical inputs give identical bytes.
	"""
	index = []
	payloads = []
	offset = 0
	for name in sorted(arrays):
		array = numpy.asarray(arrays[name], dtype=_DTYPE, order="C")
		raw = array.tobytes()
		index.append({
			"name": name,
			"shape": list(array.shape),
			"offset": offset,
			"nbytes": len(raw),
			"crc32": zlib.crc32(raw),
		})
		payloads.append(raw)
		offset += len(raw)
	header = {"metadata": metadata, "arrays": index}
	header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
	prefix = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes))
	return prefix + header_bytes + b"".join(payloads)


#============================================
def decode_checkpoint(blob: bytes) -> Checkpoint:
	"""
	Parse container bytes, checking magic, version, bounds, and CRCs.
	"""
	if len(blob) < _PREFIX.size:
		raise CheckpointError(f"file is {len(blob)} bytes, shorter than the {_PREFIX.size}-byte prefix", offset=len(blob))
	magic, version, header_length = _PREFIX.unpack_from(blob, 0)
	if magic != MAGIC:
		raise CheckpointError("bad magic bytes, not a checkpoint file", offset=0)
	if version != FORMAT_VERSION:
		raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}", offset=8)
	header_end = _PREFIX.size + header_length
	if header_end > len(blob):
		raise CheckpointError(f"header runs past end of file ({header_end} > {len(blob)})", offset=len(blob))
	try:
		header = json.loads(blob[_PREFIX.size:header_end].decode("utf-8"))
	except (UnicodeDecodeError, json.JSONDecodeError) as exc:
		raise CheckpointError(f"header is not valid JSON ({exc})", offset=_PREFIX.size) from exc
	if not isinstance(header, dict) or "arrays" not in header or "metadata" not in header:
		raise CheckpointError("header lacks 'arrays' or 'metadata'", offset=_PREFIX.size)
	arrays: dict[str, numpy.ndarray] = {}
	for entry in header["arrays"]:
		start = header_end + int(entry["offset"])
		stop = start + int(entry["nbytes"])
		if stop > len(blob):
			raise CheckpointError(f"array '{entry['name']}' truncated", offset=len(blob))
		raw = blob[start:stop]
		if zlib.crc32(raw) != int(entry["crc32"]):
			raise CheckpointError(f"crc mismatch in array '{entry['name']}'", offset=start)
		shape = tuple(int(value) for value in entry["shape"])
		expected = int(numpy.prod(shape, dtype=numpy.int64)) * _DTYPE.itemsize
		if expected != len(raw):
			raise CheckpointError(f"array '{entry['name']}' size does not match shape {shape}", offset=start)
		arrays[str(entry["name"])] = numpy.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(numpy.float64)
	return Checkpoint(metadata=header["metadata"], arrays=arrays, version=version)


#============================================
def save_checkpoint(path: str, metadata: dict, arrays: dict[str, numpy.ndarray]) -> None:
	folder = os.path.dirname(path)
	if folder:
		os.makedirs(folder, exist_ok=True)
	blob = encode_checkpoint(metadata, arrays)
	# write to a sibling then rename so a failed write keeps the old file
	temp_path = path + ".tmp"
	with open(temp_path, "wb") as handle:
		handle.write(blob)
	os.replace(temp_path, path)


#============================================
def load_checkpoint(path: str) -> Checkpoint:
	with open(path, "rb") as handle:
		blob = handle.read()
	return decode_checkpoint(blob)


#============================================
def save_supernet(path: str, weights: SupernetWeights, stage: str | None = None, extra: dict | None = None) -> None:
	metadata = {"kind": "supernet", "stage": stage, "supernet": weights.config.to_dict()}
	if extra:
		metadata.update(extra)
	save_checkpoint(path, metadata, weights.to_arrays())


#============================================
def load_supernet(path: str) -> tuple[SupernetWeights, Checkpoint]:
	"""
	Load supernet weights, checking every array shape against the stored config.
	"""
	checkpoint = load_checkpoint(path)
	if checkpoint.metadata.get("kind") != "supernet":
		raise CheckpointError(f"{path} does not hold a supernet checkpoint")
	config = SupernetConfig.from_dict(checkpoint.metadata["supernet"])
	return SupernetWeights.from_arrays(config, checkpoint.arrays), checkpoint
