# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Flat binary container for named fp64 arrays.

Layout (little-endian): magic (4 bytes), version u32, array count u32, then per array
name length u32, UTF-8 name, ndim u32, one u32 per dimension, fp64 payload.
"""

import struct
from pathlib import Path

import numpy as np

from xqcfd import hooks
from xqcfd.exceptions import CheckpointError
from xqcfd.utils import get_logger, throw

logger = get_logger(__name__)

_U32 = struct.Struct("<I")


def encode_arrays(magic: bytes, arrays) -> bytes:
	chunks = [magic, _U32.pack(hooks.checkpoint_version), _U32.pack(len(arrays))]
	for name, array in arrays:
		# tobytes writes C order and keeps 0-d arrays at shape ()
		array = np.asarray(array, dtype="<f8")
		encoded = name.encode("utf-8")
		chunks.append(_U32.pack(len(encoded)))
		chunks.append(encoded)
		chunks.append(_U32.pack(array.ndim))
		chunks.extend(_U32.pack(dim) for dim in array.shape)
		chunks.append(array.tobytes())
	return b"".join(chunks)


def decode_arrays(magic: bytes, payload: bytes) -> list[tuple[str, np.ndarray]]:
	reader = _Reader(payload)
	if reader.take(len(magic)) != magic:
		throw("Bad checkpoint magic, expected {0!r}".format(magic), CheckpointError)
	version = reader.u32()
	if version != hooks.checkpoint_version:
		throw("Unsupported checkpoint version {0}".format(version), CheckpointError)
	arrays = []
	for _ in range(reader.u32()):
		name = reader.take(reader.u32()).decode("utf-8")
		shape = tuple(reader.u32() for _ in range(reader.u32()))
		count = int(np.prod(shape)) if shape else 1
		values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
		arrays.append((name, values.reshape(shape)))
	if not reader.exhausted:
		throw("Trailing bytes after the last array", CheckpointError)
	return arrays


def save_checkpoint(path, magic: bytes, arrays) -> Path:
	path = Path(path)
	try:
		path.parent.mkdir(parents=True, exist_ok=True)
		path.write_bytes(encode_arrays(magic, list(arrays)))
	except OSError as e:
		throw("Cannot write checkpoint {0}: {1}".format(path, e), CheckpointError)
	logger.debug("Wrote checkpoint %s", path)
	return path


def load_checkpoint(path, magic: bytes) -> list[tuple[str, np.ndarray]]:
	try:
		payload = Path(path).read_bytes()
	except OSError as e:
		throw("Cannot read checkpoint {0}: {1}".format(path, e), CheckpointError)
	return decode_arrays(magic, payload)


class _Reader:
	def __init__(self, payload: bytes):
		self.payload = payload
		self.offset = 0

	@property
	def exhausted(self) -> bool:
		return self.offset == len(self.payload)

	def take(self, size: int) -> bytes:
		end = self.offset + size
		if end > len(self.payload):
			throw("Truncated checkpoint", CheckpointError)
		chunk = self.payload[self.offset : end]
		self.offset = end
		return chunk

	def u32(self) -> int:
		return _U32.unpack(self.take(4))[0]
