"""
Single-file model container

    magic  b"ISGM"                      4 bytes
    header length                        u32 little-endian
    header                               UTF-8 JSON
    payload                              RTF records, concatenated

The header holds {"version": 1, "config": ArchitectureConfig,
"tensors": [{"name", "offset", "length"}...], "metadata": {...}} where
offsets are relative to the start of the payload.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from loguru import logger
from pydantic import ValidationError

from app.config import ArchitectureConfig
from app.model.params import ModelParams
from app.tensor import rtf

MAGIC = b"ISGM"
VERSION = 1


class ModelFormatError(ValueError):
    """The file is not a readable model container"""


def encode_model(params: ModelParams, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name, array in params.arrays():
        record = rtf.encode(array)
        directory.append({"name": name, "offset": offset, "length": len(record)})
        chunks.append(record)
        offset += len(record)
    header = {
        "version": VERSION,
        "config": params.config.model_dump(mode="json"),
        "tensors": directory,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def decode_model(data: bytes) -> Tuple[ModelParams, Dict[str, Any]]:
    if len(data) < 8:
        raise ModelFormatError(f"model file too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (header_length,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + header_length:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(data[8:8 + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"unreadable header: {e}") from e
    version = header.get("version")
    if version != VERSION:
        raise ModelFormatError(f"unsupported container version {version!r}, this build reads v{VERSION}")
    try:
        config = ArchitectureConfig.model_validate(header["config"])
    except (KeyError, ValidationError) as e:
        raise ModelFormatError(f"invalid architecture config in header: {e}") from e

    payload = memoryview(data)[8 + header_length:]
    arrays = {}
    for entry in header.get("tensors", []):
        start, length = entry["offset"], entry["length"]
        if start + length > len(payload):
            raise ModelFormatError(f"truncated payload for {entry['name']}")
        try:
            array, end = rtf.decode(payload[start:start + length])
        except rtf.RTFError as e:
            raise ModelFormatError(f"{entry['name']}: {e}") from e
        if end != length:
            raise ModelFormatError(f"{entry['name']}: record length {length} but tensor ends at {end}")
        arrays[entry["name"]] = array
    try:
        params = ModelParams.from_arrays(config, arrays)
    except (KeyError, ValueError) as e:
        raise ModelFormatError(str(e)) from e
    return params, header.get("metadata", {})


def save_model(params: ModelParams, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(params, metadata))
    logger.info(f"saved model ({params.n_parameters} parameters) to {path}")
    return path


def load_model(path) -> ModelParams:
    params, _ = load_model_with_metadata(path)
    return params


def load_model_with_metadata(path) -> Tuple[ModelParams, Dict[str, Any]]:
    return decode_model(Path(path).read_bytes())
