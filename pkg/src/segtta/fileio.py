"""Bit-exact volume file format plus report/config serialization.

Volume file layout (little-endian throughout, described in docs/volume_format.md):

    offset  size  field
    0       4     magic "HDTV"
    4       2     format version (u16), currently 1
    6       1     dtype tag (u8): 1 = f32, 2 = f64, 3 = u8 mask (0/1)
    7       12    dims, 3 x u32 (nx, ny, nz)
    19      24    spacing, 3 x f64, mm
    43      ...   payload: nx*ny*nz values in x-fastest order
    end     4     CRC32 of the payload bytes (u32)

write -> read is bit-identical for f64 payloads and for masks; f32 is a lossy
storage option and reads back as float64.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from .pipeline import PipelineConfig, RunReport
from .volume import Mask, Volume

MAGIC = b"HDTV"
VERSION = 1
REPORT_SCHEMA_VERSION = 1

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_TAG_F32, _TAG_F64, _TAG_MASK = 1, 2, 3


class VolumeFileError(ValueError):
    """Base class for volume file problems."""


class BadMagicError(VolumeFileError):
    pass


class UnsupportedVersionError(VolumeFileError):
    pass


class TruncatedFileError(VolumeFileError):
    pass


class CrcMismatchError(VolumeFileError):
    pass


def write_volume(path, v: Volume | Mask, dtype: str = "f64") -> None:
    """Serialize to the HDTV container.  Masks always use the u8 tag."""
    if isinstance(v, Mask):
        tag = _TAG_MASK
        payload = v.data.astype("u1").tobytes(order="F")
    elif dtype == "f64":
        tag = _TAG_F64
        payload = v.data.astype("<f8").tobytes(order="F")
    elif dtype == "f32":
        tag = _TAG_F32
        payload = v.data.astype("<f4").tobytes(order="F")
    else:
        raise ValueError(f"unsupported dtype {dtype!r}; use 'f64' or 'f32'")
    header = bytearray()
    header += MAGIC
    header += VERSION.to_bytes(2, "little")
    header += tag.to_bytes(1, "little")
    for n in v.dims:
        header += int(n).to_bytes(4, "little")
    header += np.asarray(v.spacing, dtype="<f8").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(bytes(header) + payload + crc.to_bytes(4, "little"))


def read_volume(path) -> Volume | Mask:
    """Parse an HDTV container; raises a distinct error per failure mode."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an HDTV volume file")
    if len(raw) < 43:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    version = int.from_bytes(raw[4:6], "little")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
    tag = raw[6]
    if tag not in _DTYPE_TAGS:
        raise VolumeFileError(f"{path}: unknown dtype tag {tag}")
    dims = tuple(int.from_bytes(raw[7 + 4 * i : 11 + 4 * i], "little") for i in range(3))
    spacing = tuple(np.frombuffer(raw[19:43], dtype="<f8"))
    dtype = _DTYPE_TAGS[tag]
    count = dims[0] * dims[1] * dims[2]
    payload_len = count * dtype.itemsize
    if len(raw) != 43 + payload_len + 4:
        raise TruncatedFileError(
            f"{path}: expected {43 + payload_len + 4} bytes for dims {dims}, got {len(raw)}"
        )
    payload = raw[43 : 43 + payload_len]
    stored_crc = int.from_bytes(raw[43 + payload_len :], "little")
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CrcMismatchError(f"{path}: payload CRC mismatch")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    if tag == _TAG_MASK:
        return Mask(arr != 0, spacing)
    return Volume(arr.astype(np.float64), spacing)


# ---------------------------------------------------------------------------
# structured-text serialization of reports and configs
# ---------------------------------------------------------------------------


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def report_to_dict(report: RunReport, include_timings: bool = True) -> dict[str, Any]:
    """JSON-shaped report: full decision trace, full effective config, scalars
    at full precision.  The mask payload lives in its own volume file; only
    its voxel count is recorded here."""
    out: dict[str, Any] = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "case_id": report.case_id,
        "mode": report.mode,
        "gate": dataclasses.asdict(report.gate),
        "mask_source": report.mask_source,
        "final_mask_voxels": report.final_mask.count if report.final_mask is not None else None,
        "compact_trace": dataclasses.asdict(report.compact_trace) if report.compact_trace else None,
        "diffuse_trace": dataclasses.asdict(report.diffuse_trace) if report.diffuse_trace else None,
        "selection": dataclasses.asdict(report.selection) if report.selection else None,
        "error": report.error,
        "config": config_to_dict(report.config) if report.config is not None else None,
    }
    out["timings_s"] = dict(report.timings_s) if include_timings else None
    return out


def dumps_report(report: RunReport | dict, include_timings: bool = True) -> str:
    payload = report if isinstance(report, dict) else report_to_dict(report, include_timings)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report(path, report: RunReport | dict, include_timings: bool = True) -> None:
    Path(path).write_text(dumps_report(report, include_timings))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def spec_to_json(spec) -> str:
    payload = dataclasses.asdict(spec)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def spec_from_json(text: str, spec_cls):
    data = json.loads(text)
    field_names = {f.name for f in dataclasses.fields(spec_cls)}
    unknown = set(data) - field_names
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    for key in ("dims", "spacing", "center_mm", "radii_mm", "island_offset_mm", "shell_scales"):
        if key in data and isinstance(data[key], list):
            data[key] = tuple(data[key])
    if "fragment_offsets_mm" in data and isinstance(data["fragment_offsets_mm"], list):
        data["fragment_offsets_mm"] = tuple(tuple(x) for x in data["fragment_offsets_mm"])
    return spec_cls(**data)
