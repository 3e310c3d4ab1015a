"""File formats: the CST binary container for images and sinograms, 16-bit
PGM previews, CSV tables and JSON configuration files.

Container layout (all integers little-endian)::

    bytes 0..7     magic, b"CSTIMG01" (image) or b"CSTSIN01" (sinogram)
    bytes 8..11    uint32 length L of the JSON header
    bytes 12..12+L UTF-8 JSON header
    rest           float64 little-endian payload, row-major

The header carries the dimensions, bounds or scan geometry, ``"dtype":
"f64le"``, ``"layout": "row-major"`` and a free-form ``"meta"`` dict
(pipeline stage, producing command).
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .grid import ImageGrid, ScanGeometry, Sinogram
from .phantom import PhantomSpec
from .physics import PhysicsParams

IMAGE_MAGIC = b"CSTIMG01"
SINOGRAM_MAGIC = b"CSTSIN01"
_LEN = struct.Struct("<I")
_F64 = np.dtype("<f8")


class CSTFormatError(ValueError):
    """A file that is not a well-formed CST container."""
    code = "format"


class MagicMismatchError(CSTFormatError):
    code = "magic_mismatch"


class TruncatedPayloadError(CSTFormatError):
    code = "truncated_payload"


class DimensionMismatchError(CSTFormatError):
    code = "dimension_mismatch"


class HeaderError(CSTFormatError):
    code = "bad_header"


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def _pack(magic: bytes, header: dict, values: np.ndarray) -> bytes:
    header = dict(header, dtype="f64le", layout="row-major", software=f"cst {__version__}")
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(values, dtype=_F64).tobytes()
    return magic + _LEN.pack(len(hbytes)) + hbytes + payload


def _unpack(path, magic: bytes) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != magic:
        found = raw[:8]
        other = {IMAGE_MAGIC: "an image", SINOGRAM_MAGIC: "a sinogram"}.get(found)
        hint = f" (found {other} file)" if other else ""
        raise MagicMismatchError(f"{path}: expected magic {magic.decode()}{hint}")
    (hlen,) = _LEN.unpack_from(raw, 8)
    if 12 + hlen > len(raw):
        raise TruncatedPayloadError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: unreadable header: {exc}") from None
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header must be a JSON object")
    if header.get("dtype") != "f64le" or header.get("layout") != "row-major":
        raise HeaderError(f"{path}: unsupported dtype/layout")
    return header, raw[12 + hlen:]


def _payload(path, header: dict, payload: bytes, shape: tuple[int, int]) -> np.ndarray:
    count = shape[0] * shape[1]
    if count <= 0:
        raise DimensionMismatchError(f"{path}: non-positive dimensions {shape}")
    if len(payload) % 8:
        raise TruncatedPayloadError(f"{path}: payload is not a whole number of float64 values")
    n = len(payload) // 8
    if n < count:
        raise TruncatedPayloadError(f"{path}: payload holds {n} values, header declares {count}")
    if n > count:
        raise DimensionMismatchError(f"{path}: payload holds {n} values, header declares {count}")
    return np.frombuffer(payload, dtype=_F64).reshape(shape).astype(np.float64)


def write_image(img: ImageGrid, path, meta: dict | None = None) -> Path:
    header = {"kind": "image", "nx": img.nx, "ny": img.ny, "bounds": list(img.bounds),
              "meta": meta or {}}
    return atomic_write_bytes(path, _pack(IMAGE_MAGIC, header, img.values))


def read_image_with_meta(path) -> tuple[ImageGrid, dict]:
    header, payload = _unpack(path, IMAGE_MAGIC)
    try:
        nx, ny = int(header["nx"]), int(header["ny"])
        bounds = [float(v) for v in header["bounds"]]
    except (KeyError, TypeError, ValueError):
        raise HeaderError(f"{path}: header lacks image dimensions or bounds") from None
    if len(bounds) != 4:
        raise HeaderError(f"{path}: bounds must have 4 entries")
    values = _payload(path, header, payload, (ny, nx))
    return ImageGrid(values, *bounds), dict(header.get("meta", {}))


def read_image(path) -> ImageGrid:
    return read_image_with_meta(path)[0]


def write_sinogram(b: Sinogram, path, meta: dict | None = None) -> Path:
    header = {"kind": "sinogram", "geometry": geometry_to_dict(b.geom), "meta": meta or {}}
    return atomic_write_bytes(path, _pack(SINOGRAM_MAGIC, header, b.values))


def read_sinogram_with_meta(path) -> tuple[Sinogram, dict]:
    header, payload = _unpack(path, SINOGRAM_MAGIC)
    try:
        geom = geometry_from_dict(header["geometry"])
    except (KeyError, TypeError, ValueError, jsonschema.ValidationError) as exc:
        raise HeaderError(f"{path}: bad scan geometry in header: {exc}") from None
    values = _payload(path, header, payload, geom.shape)
    return Sinogram(values, geom), dict(header.get("meta", {}))


def read_sinogram(path) -> Sinogram:
    return read_sinogram_with_meta(path)[0]


# ---------------------------------------------------------------------------
# previews and tables
# ---------------------------------------------------------------------------

def pgm_bytes(values: np.ndarray, value_range=None) -> bytes:
    """16-bit binary PGM of a 2-D array, mapping ``value_range`` (default: min, max)
    affinely onto 0..65535 with clamping. Row 0 of the array is written last,
    so images with ``y`` increasing upward display upright."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo, hi = (float(v.min()), float(v.max())) if value_range is None else map(float, value_range)
    if not hi >= lo:
        raise ValueError("value range must satisfy lo <= hi")
    if hi > lo:
        q = np.rint((np.clip(v, lo, hi) - lo) / (hi - lo) * 65535.0)
    else:
        q = np.zeros_like(v)
    pix = q.astype(">u2")[::-1]
    ny, nx = v.shape
    return f"P5\n{nx} {ny}\n65535\n".encode("ascii") + pix.tobytes()


def export_pgm(img, path, value_range=None) -> Path:
    values = getattr(img, "values", img)
    if hasattr(img, "mask"):
        values = img.mask.astype(float)
    return atomic_write_bytes(path, pgm_bytes(values, value_range))


def read_pgm(path) -> np.ndarray:
    """Raw 16-bit samples of a PGM written by :func:`export_pgm`, in file row order."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise CSTFormatError(f"{path}: not a binary PGM")
    nx, ny = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2", count=nx * ny).reshape(ny, nx).astype(np.int64)


def _fmt(x) -> str:
    return "%.17g" % x


def csv_text(columns: dict) -> str:
    names = list(columns)
    cols = [np.atleast_1d(np.asarray(columns[n], dtype=np.float64)) for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("all columns must have the same length")
    lines = [",".join(_quote(c) for c in names)]
    lines.extend(",".join(_fmt(c[i]) for c in cols) for i in range(n))
    return "\r\n".join(lines) + "\r\n"


def _quote(name: str) -> str:
    name = str(name)
    if any(ch in name for ch in ',"\r\n'):
        return '"' + name.replace('"', '""') + '"'
    return name


def export_csv(columns: dict, path) -> Path:
    """Named float columns as CSV with a header row and 17 significant digits."""
    return atomic_write_text(path, csv_text(columns))


def read_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSTFormatError(f"{path}: empty CSV file")
    names, body = rows[0], rows[1:]
    return {n: np.array([float(r[i]) for r in body], dtype=np.float64) for i, n in enumerate(names)}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite_or_str(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite_or_str(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_str(v) for v in obj]
    return obj


def export_json(data: dict, path) -> Path:
    """Pretty JSON; non-finite floats are written as the strings "inf", "-inf", "nan"."""
    plain = json.loads(json.dumps(data, default=_json_default))
    return atomic_write_text(path, json.dumps(_finite_or_str(plain), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

SCHEMA_FILES = {"phantom": "phantom.schema.json", "physics": "physics.schema.json",
                "geometry": "geometry.schema.json"}


def load_schema(kind: str) -> dict:
    if kind not in SCHEMA_FILES:
        raise ValueError(f"unknown schema {kind!r}")
    text = resources.files("cst").joinpath("schemas", SCHEMA_FILES[kind]).read_text("utf-8")
    return json.loads(text)


def validate_config(kind: str, data: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``data`` violates the schema for ``kind``."""
    jsonschema.validate(data, load_schema(kind))


def geometry_to_dict(geom: ScanGeometry) -> dict:
    return {"ns": geom.ns, "ntheta": geom.ntheta, "smin": geom.smin, "smax": geom.smax,
            "thetamin": geom.thetamin, "thetamax": geom.thetamax}


def geometry_from_dict(d: dict) -> ScanGeometry:
    validate_config("geometry", d)
    return ScanGeometry(**d)


def physics_from_dict(d: dict) -> PhysicsParams:
    validate_config("physics", d)
    return PhysicsParams.from_dict(d)


def phantom_from_dict(d: dict) -> PhantomSpec:
    validate_config("phantom", d)
    return PhantomSpec.from_dict(d)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_phantom(path) -> PhantomSpec:
    return phantom_from_dict(_load_json(path))


def load_physics(path) -> PhysicsParams:
    return physics_from_dict(_load_json(path))


def load_geometry(path) -> ScanGeometry:
    return geometry_from_dict(_load_json(path))
