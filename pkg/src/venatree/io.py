"""Bit-exact volume and dataset persistence.

NIfTI-1 support is a deliberately minimal single-file subset: magic
"n+1", 348-byte little-endian header, voxel data at offset 352, datatypes
uint8 / int16 / float32, identity orientation (spacing on the sform
diagonal, origin in its translation column). No compression, no
extensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    MalformedHeaderError,
    ManifestError,
    TruncatedFileError,
    UnsupportedDatatypeError,
    UnsupportedFormatError,
)
from .rasterize import GridSpec, LabelVolume
from .scangen import ScanVolume

HEADER_SIZE = 348
VOX_OFFSET = 352.0

_HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "<i4"),
    ("session_error", "<i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "<i2", (8,)),
    ("intent_p1", "<f4"),
    ("intent_p2", "<f4"),
    ("intent_p3", "<f4"),
    ("intent_code", "<i2"),
    ("datatype", "<i2"),
    ("bitpix", "<i2"),
    ("slice_start", "<i2"),
    ("pixdim", "<f4", (8,)),
    ("vox_offset", "<f4"),
    ("scl_slope", "<f4"),
    ("scl_inter", "<f4"),
    ("slice_end", "<i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "<f4"),
    ("cal_min", "<f4"),
    ("slice_duration", "<f4"),
    ("toffset", "<f4"),
    ("glmax", "<i4"),
    ("glmin", "<i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "<i2"),
    ("sform_code", "<i2"),
    ("quatern_b", "<f4"),
    ("quatern_c", "<f4"),
    ("quatern_d", "<f4"),
    ("qoffset_x", "<f4"),
    ("qoffset_y", "<f4"),
    ("qoffset_z", "<f4"),
    ("srow_x", "<f4", (4,)),
    ("srow_y", "<f4", (4,)),
    ("srow_z", "<f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert _HEADER_DTYPE.itemsize == HEADER_SIZE

# NIfTI datatype code -> (numpy dtype, bits)
_DTYPES = {
    2: (np.dtype(np.uint8), 8),
    4: (np.dtype(np.int16), 16),
    16: (np.dtype(np.float32), 32),
}
_CODES = {dt: (code, bits) for code, (dt, bits) in _DTYPES.items()}

XYZT_MICRON = 3  # spatial unit code for micrometres


def write_nifti(volume, path) -> None:
    """Write a LabelVolume or ScanVolume as a single-file .nii."""
    grid: GridSpec = volume.grid
    data = np.ascontiguousarray(volume.data)
    dtype = np.dtype(data.dtype)
    if dtype not in _CODES:
        raise UnsupportedDatatypeError(
            f"datatype {dtype} not supported (use uint8, int16 or float32)")
    code, bits = _CODES[dtype]

    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dims = np.ones(8, dtype=np.int16)
    dims[0] = 3
    dims[1:4] = grid.dims
    hdr["dim"] = dims
    hdr["datatype"] = code
    hdr["bitpix"] = bits
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = grid.spacing
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = XYZT_MICRON
    hdr["sform_code"] = 1
    hdr["srow_x"] = np.array([grid.spacing[0], 0, 0, grid.origin[0]], dtype=np.float32)
    hdr["srow_y"] = np.array([0, grid.spacing[1], 0, grid.origin[1]], dtype=np.float32)
    hdr["srow_z"] = np.array([0, 0, grid.spacing[2], grid.origin[2]], dtype=np.float32)
    hdr["magic"] = b"n+1"

    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00" * (int(VOX_OFFSET) - HEADER_SIZE))
        fh.write(data.astype(dtype.newbyteorder("<")).tobytes(order="F"))


def read_nifti(path, kind: str = "auto"):
    """Read a .nii written by this subset; returns LabelVolume or ScanVolume.

    kind: "auto" maps uint8 to LabelVolume and everything else to
    ScanVolume; "label"/"scan" force the wrapper type.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: file shorter than a NIfTI-1 header")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE)[0]

    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        raise MalformedHeaderError(
            f"{path}: sizeof_hdr is {int(hdr['sizeof_hdr'])}, expected {HEADER_SIZE}")
    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic == b"ni1":
        raise UnsupportedFormatError(f"{path}: two-file NIfTI (magic 'ni1') not supported")
    if magic != b"n+1":
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {code} not supported")
    dtype, bits = _DTYPES[code]
    if int(hdr["bitpix"]) != bits:
        raise MalformedHeaderError(
            f"{path}: bitpix {int(hdr['bitpix'])} inconsistent with datatype {code}")
    dim = hdr["dim"]
    if int(dim[0]) != 3:
        raise MalformedHeaderError(f"{path}: expected 3 dimensions, got dim[0]={int(dim[0])}")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise MalformedHeaderError(f"{path}: nonpositive dimension in {dims}")
    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    if any(not s > 0 for s in spacing):
        raise MalformedHeaderError(f"{path}: nonpositive pixdim in {spacing}")
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: vox_offset {offset} overlaps the header")
    if int(hdr["sform_code"]) == 1:
        origin = (float(hdr["srow_x"][3]), float(hdr["srow_y"][3]), float(hdr["srow_z"][3]))
    else:
        origin = (0.0, 0.0, 0.0)

    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[offset:offset + expected]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(raw) - offset} bytes, header promises {expected}")
    data = np.frombuffer(payload, dtype=dtype.newbyteorder("<"))
    data = np.ascontiguousarray(data.reshape(dims, order="F"))

    grid = GridSpec(dims=dims, spacing=spacing, origin=origin)
    if kind == "label" or (kind == "auto" and dtype == np.uint8):
        return LabelVolume(grid, data)
    if kind in ("auto", "scan"):
        return ScanVolume(grid, data)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class ManifestSample:
    """One dataset entry: a scan, its optional label, and provenance."""

    id: str
    scan_path: str
    domain: str
    spacing_um: tuple[float, float, float]
    label_path: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rec = {
            "id": self.id,
            "scan_path": self.scan_path,
            "domain": self.domain,
            "spacing_um": list(self.spacing_um),
        }
        if self.label_path is not None:
            rec["label_path"] = self.label_path
        rec.update(self.extra)
        return rec

    @classmethod
    def from_dict(cls, rec: Mapping) -> "ManifestSample":
        known = {"id", "scan_path", "domain", "spacing_um", "label_path"}
        try:
            return cls(
                id=str(rec["id"]),
                scan_path=str(rec["scan_path"]),
                domain=str(rec["domain"]),
                spacing_um=tuple(float(s) for s in rec["spacing_um"]),
                label_path=rec.get("label_path"),
                extra={k: v for k, v in rec.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed sample record: {exc}") from exc


@dataclass
class DatasetManifest:
    """Index of a generated dataset plus the provenance to regenerate it."""

    version: int = 1
    samples: list[ManifestSample] = field(default_factory=list)
    rng_seed: int | None = None
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def validate(self, base_dir: Path | None = None) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise ManifestError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.domain not in ("A", "B"):
                raise ManifestError(f"sample {s.id!r}: domain must be 'A' or 'B'")
            if s.domain == "B" and not s.label_path:
                raise ManifestError(f"sample {s.id!r}: domain-B sample has no label")
            if base_dir is not None:
                for p in filter(None, (s.scan_path, s.label_path)):
                    resolved = Path(p)
                    if not resolved.is_absolute():
                        resolved = base_dir / resolved
                    if not resolved.exists():
                        raise ManifestError(f"sample {s.id!r}: missing file {p}")

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "rng_seed": self.rng_seed,
            "config": self.config,
            "samples": [s.to_dict() for s in self.samples],
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "DatasetManifest":
        known = {"version", "rng_seed", "config", "samples"}
        try:
            return cls(
                version=int(data.get("version", 1)),
                samples=[ManifestSample.from_dict(r) for r in data.get("samples", [])],
                rng_seed=data.get("rng_seed"),
                config=dict(data.get("config", {})),
                extra={k: v for k, v in data.items() if k not in known},
            )
        except ManifestError:
            raise
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Validate (including file existence) and write the manifest JSON."""
    path = Path(path)
    manifest.validate(base_dir=path.parent)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        manifest = DatasetManifest.from_dict(json.load(fh))
    manifest.validate(base_dir=None)
    return manifest
