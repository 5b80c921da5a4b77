"""
Versioned binary model files.

Layout (all integers little-endian):

    magic        8 bytes   b"SHAPESPC"
    version      uint16
    kind         uint8     1 = global, 2 = local
    header_len   uint32
    header       JSON, utf-8: sizes, hierarchy, landmark ids, array table
    arrays       raw little-endian arrays in array-table order
    checksum     32 bytes  sha256 of everything above

Floats are stored as '<f8', so a save/load round trip is bit-exact.
Coefficient arrays of local models are in coefficient order (level-major,
then row-major).
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ModelFormatError, ModelKindError, VersionMismatchError
from .logger import pipeline_logger
from .models import GlobalPcaModel, LocalWaveletModel
from .subdivision import SubdivisionHierarchy

MAGIC = b"SHAPESPC"
FORMAT_VERSION = 1
KIND_CODES = {"global": 1, "local": 2}
_PREFIX = struct.Struct("<8sHBI")
_CHECKSUM_SIZE = 32


def _arrays_for(model):
    if isinstance(model, GlobalPcaModel):
        arrays = [("mean", model.mean, "<f8"), ("basis", model.basis, "<f8"),
                  ("eigenvalues", model.eigenvalues, "<f8"), ("spectrum", model.spectrum, "<f8")]
        if model.faces is not None:
            arrays.append(("faces", model.faces, "<i8"))
        return arrays
    if isinstance(model, LocalWaveletModel):
        return [("means", model.means, "<f8"), ("rotations", model.rotations, "<f8"),
                ("stddevs", model.stddevs, "<f8")]
    raise TypeError(f"cannot save object of type {type(model).__name__}")


def save_model(model, path, run_id="model"):
    """Write `model` to `path`; returns the path."""
    try:
        arrays = _arrays_for(model)
        header = {
            "n": int(model.n),
            "d": int(model.d),
            "landmark_ids": {k: int(v) for k, v in model.landmark_ids.items()},
            "arrays": [{"name": name, "dtype": dtype, "shape": list(np.shape(a))}
                       for name, a, dtype in arrays],
        }
        if isinstance(model, LocalWaveletModel):
            header["hierarchy"] = model.hierarchy.to_dict()
        elif model.grid_dims is not None:
            header["grid_dims"] = list(model.grid_dims)

        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, KIND_CODES[model.kind], len(header_bytes)),
                 header_bytes]
        parts.extend(np.ascontiguousarray(a, dtype=dtype).tobytes() for _, a, dtype in arrays)
        body = b"".join(parts)

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(body + hashlib.sha256(body).digest())
        pipeline_logger.log_stage("SAVE_MODEL", "SUCCESS", run_id,
                                  {"kind": model.kind, "path": str(path), "bytes": len(body) + _CHECKSUM_SIZE})
        return path
    except Exception as e:
        pipeline_logger.log_error(run_id, "SAVE_MODEL", e)
        raise


def load_model(path, kind=None, run_id="model"):
    """
    Read a model file.

    Args:
        path: File to read
        kind: "global" or "local" to reject the other kind, None to accept both

    Raises:
        ChecksumError: truncated or corrupted file
        VersionMismatchError: unsupported format version
        ModelKindError: file holds a different kind than `kind`
    """
    path = Path(path)
    try:
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        data = path.read_bytes()
        if len(data) < _PREFIX.size + _CHECKSUM_SIZE:
            raise ChecksumError(f"{path}: file too short ({len(data)} bytes)")
        magic = data[:len(MAGIC)]
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not a shape model file")
        body, stored = data[:-_CHECKSUM_SIZE], data[-_CHECKSUM_SIZE:]
        if hashlib.sha256(body).digest() != stored:
            raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupted)")

        _, version, kind_code, header_len = _PREFIX.unpack_from(body)
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        kinds = {code: name for name, code in KIND_CODES.items()}
        if kind_code not in kinds:
            raise ModelFormatError(f"{path}: unknown model kind code {kind_code}")
        file_kind = kinds[kind_code]
        if kind is not None and kind != file_kind:
            raise ModelKindError(f"{path}: holds a {file_kind} model, expected {kind}")

        offset = _PREFIX.size
        header = json.loads(body[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + size > len(body):
                raise ModelFormatError(f"{path}: array {entry['name']} runs past the end of the file")
            arrays[entry["name"]] = np.frombuffer(body, dtype=dtype, count=size // dtype.itemsize,
                                                  offset=offset).reshape(shape).copy()
            offset += size
        if offset != len(body):
            raise ModelFormatError(f"{path}: {len(body) - offset} trailing bytes before the checksum")

        landmark_ids = {k: int(v) for k, v in header.get("landmark_ids", {}).items()}
        if file_kind == "global":
            grid_dims = tuple(header["grid_dims"]) if "grid_dims" in header else None
            model = GlobalPcaModel(arrays["mean"], arrays["basis"], arrays["eigenvalues"],
                                   arrays["spectrum"], arrays.get("faces"), grid_dims, landmark_ids)
        else:
            h = header["hierarchy"]
            hierarchy = SubdivisionHierarchy((h["base_rows"], h["base_cols"]), h["levels"])
            model = LocalWaveletModel(hierarchy, arrays["means"], arrays["rotations"],
                                      arrays["stddevs"], landmark_ids)

        pipeline_logger.log_stage("LOAD_MODEL", "SUCCESS", run_id,
                                  {"kind": file_kind, "path": str(path), "n": header["n"]})
        return model
    except Exception as e:
        pipeline_logger.log_error(run_id, "LOAD_MODEL", e)
        raise
