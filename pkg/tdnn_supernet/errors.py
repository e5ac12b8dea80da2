"""
Standardized exception types for the supernet toolkit.
"""

from __future__ import annotations

#============================================


class SupernetError(RuntimeError):
	"""
	Base class for supernet toolkit errors.
	"""


class SpecValidationError(SupernetError):
	"""
	Raised when a subnet spec does not fit its search space or supernet.
	"""

	def __init__(self, reason: str) -> None:
		super().__init__(reason)
		self.reason = reason


class ShapeError(SupernetError):
	"""
	Raised when input arrays have the wrong shape or non-finite values.
	"""

	def __init__(self, message: str, dimension: str | None = None) -> None:
		super().__init__(message)
		self.dimension = dimension


class ConfigError(SupernetError):
	"""
	Raised when a configuration document or dataclass breaks an invariant.
	"""


class CheckpointError(SupernetError):
	"""
	Raised when a checkpoint container is corrupt, truncated, or of unknown version.
	"""

	def __init__(self, message: str, offset: int | None = None) -> None:
		if offset is not None:
			message = f"{message} (byte offset {offset})"
		super().__init__(message)
		self.offset = offset


class CostTableError(SupernetError):
	"""
	Raised when a latency table lacks an operator key a subnet needs.
	"""

	def __init__(self, message: str, key: tuple | None = None) -> None:
		super().__init__(message)
		self.key = key


class TrainingDivergedError(SupernetError):
	"""
	Raised when a training step produces a non-finite loss.
	"""

	def __init__(self, message: str, batch_index: int, spec: dict | None = None, op: str | None = None) -> None:
		super().__init__(message)
		self.batch_index = batch_index
		self.spec = spec
		self.op = op


class DataShortfallError(SupernetError):
	"""
	Raised when a data stream ends before the requested number of items.
	"""

	def __init__(self, message: str, shortfall: int) -> None:
		super().__init__(message)
		self.shortfall = shortfall


class MetricError(SupernetError):
	"""
	Raised when a scoring metric is undefined for its inputs.
	"""


class PredictorError(SupernetError):
	"""
	Raised when accuracy predictor inputs are degenerate or mismatched.
	"""
