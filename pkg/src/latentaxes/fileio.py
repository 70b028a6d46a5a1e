"""On-disk formats: dataset CSV, axis-bank JSON, world JSON and images.

Reals are written with 17 significant digits, which round-trips every
float64 exactly.  All writers replace the target atomically.
"""
from __future__ import annotations

import csv
import io
import json
import os
import re
import struct
import tempfile

import numpy as np

from .axes import AttributeAxis, AxisBank, Extension, LatentDataset, MODES, RESIDUAL
from .errors import FormatError
from .toyworld import make_world

BANK_FORMAT_VERSION = 1
WORLD_FORMAT_VERSION = 1
F64_MAGIC = b"F64IMG\x00\x01"
UNIT_TOL = 1e-12
GRAM_TOL = 1e-10


def fmt_real(x: float) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise FormatError(f"cannot serialize non-finite value {x!r}")
    return "%.17g" % x


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# JSON with fixed-precision reals

_TOKEN = "\x00real{}\x00"


def dumps_json(obj) -> str:
    """``json.dumps`` with every float rendered by :func:`fmt_real`."""
    reals: list[str] = []

    def swap(o):
        if isinstance(o, (float, np.floating)):
            reals.append(fmt_real(o))
            return _TOKEN.format(len(reals) - 1)
        if isinstance(o, dict):
            return {k: swap(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [swap(v) for v in o]
        if isinstance(o, np.ndarray):
            return [swap(float(v)) if o.ndim == 1 else swap(v) for v in o]
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o

    text = json.dumps(swap(obj), indent=1)
    return re.sub(r'"\\u0000real(\d+)\\u0000"', lambda m: reals[int(m.group(1))], text) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps_json(obj).encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None


# datasets

def write_dataset(path, ds: LatentDataset):
    Y = np.column_stack([ds.labels[a] for a in ds.attributes]) if ds.attributes else np.zeros((ds.n, 0))
    table = np.hstack([ds.latents, Y])
    if not np.all(np.isfinite(table)):
        raise FormatError("cannot serialize non-finite dataset values")
    lines = [",".join(["id"] + [f"z_{i}" for i in range(ds.p)] + ds.attributes)]
    for i, row in enumerate(table.tolist()):
        lines.append(f"{i}," + ",".join(["%.17g" % v for v in row]))
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_header(header):
    if not header or header[0] != "id":
        raise FormatError("dataset header must start with 'id'")
    p = 0
    while p + 1 < len(header) and header[p + 1] == f"z_{p}":
        p += 1
    if p == 0:
        raise FormatError("dataset header has no latent columns z_0..z_{p-1}")
    attrs = header[p + 1:]
    for a in attrs:
        if not a or re.fullmatch(r"z_\d+", a) or a == "id":
            raise FormatError(f"malformed attribute column name {a!r} in header")
    if len(set(attrs)) != len(attrs):
        raise FormatError("duplicate attribute columns in header")
    return p, attrs


def _locate_bad_cell(path, header, row, r):
    for c in range(1, len(row)):
        cell = row[c]
        try:
            v = float(cell)
        except ValueError:
            raise FormatError(f"{path}: row {r}, column {header[c]!r}: cannot parse {cell!r}") from None
        if not np.isfinite(v):
            raise FormatError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")


def read_dataset(path) -> LatentDataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty dataset file")
    header = rows[0]
    p, attrs = _parse_header(header)
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: dataset has no rows")
    values = np.empty((len(body), len(header) - 1))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            missing = header[len(row)] if len(row) < len(header) else None
            detail = f"missing column {missing!r}" if missing else f"{len(row) - len(header)} extra field(s)"
            raise FormatError(f"{path}: row {r}: {detail} (has {len(row)} fields, header has {len(header)})")
        try:
            values[r - 1] = row[1:]
        except ValueError:
            values[r - 1] = np.nan
        if not np.all(np.isfinite(values[r - 1])):
            _locate_bad_cell(path, header, row, r)
    return LatentDataset(values[:, :p], {a: values[:, p + j] for j, a in enumerate(attrs)})


# axis banks

def bank_to_dict(bank: AxisBank) -> dict:
    return {
        "format_version": BANK_FORMAT_VERSION,
        "dim": bank.dim,
        "base_axes": [
            {
                "name": a.name,
                "direction": a.direction,
                "bias": a.bias,
                "rss": a.rss,
                "r_squared": a.r_squared,
                "n_samples": a.n_samples,
                "rank_deficient": a.rank_deficient,
            }
            for a in bank.base_raw
        ],
        "base_ortho": [e for e in bank.base_ortho],
        "extensions": [
            {"name": e.name, "mode": e.mode, "weights": list(e.weights), "d_in": e.d_in, "d_out": e.d_out}
            for e in bank.extensions
        ],
    }


_BANK_KEYS = {"format_version", "dim", "base_axes", "base_ortho", "extensions"}
_AXIS_KEYS = {"name", "direction", "bias", "rss", "r_squared", "n_samples", "rank_deficient"}
_EXT_KEYS = {"name", "mode", "weights", "d_in", "d_out"}


def _vec(values, dim, what) -> np.ndarray:
    try:
        v = np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(f"{what}: not a numeric array") from None
    if v.shape != (dim,):
        raise FormatError(f"{what}: expected {dim} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise FormatError(f"{what}: non-finite entries")
    v.setflags(write=False)
    return v


def _check_unit(v, what):
    err = abs(float(np.linalg.norm(v)) - 1.0)
    if err > UNIT_TOL:
        raise FormatError(f"{what} is not unit length (| |v| - 1 | = {err:.3e})")


def bank_from_dict(doc: dict) -> AxisBank:
    if not isinstance(doc, dict):
        raise FormatError("axis bank must be a JSON object")
    version = doc.get("format_version")
    if version != BANK_FORMAT_VERSION:
        raise FormatError(f"unsupported axis bank format_version {version!r} (expected {BANK_FORMAT_VERSION})")
    unknown = set(doc) - _BANK_KEYS
    if unknown:
        raise FormatError(f"axis bank format_version {version} has no fields {sorted(unknown)}")
    missing = _BANK_KEYS - set(doc)
    if missing:
        raise FormatError(f"axis bank missing fields {sorted(missing)}")
    dim = doc["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise FormatError("dim must be a positive integer")

    axes = []
    for i, a in enumerate(doc["base_axes"]):
        extra = set(a) - _AXIS_KEYS
        if extra or set(a) != _AXIS_KEYS:
            raise FormatError(f"base axis {i}: fields must be exactly {sorted(_AXIS_KEYS)}")
        name = str(a["name"])
        direction = _vec(a["direction"], dim, f"axis {name!r} direction")
        _check_unit(direction, f"axis {name!r} direction")
        axes.append(AttributeAxis(name=name, direction=direction, bias=float(a["bias"]), rss=float(a["rss"]),
                                  r_squared=float(a["r_squared"]), n_samples=int(a["n_samples"]),
                                  rank_deficient=bool(a["rank_deficient"])))
    if len(doc["base_ortho"]) != len(axes):
        raise FormatError("base_ortho must have one vector per base axis")
    ortho = tuple(_vec(v, dim, f"orthonormal direction of axis {axes[i].name!r}")
                  for i, v in enumerate(doc["base_ortho"]))
    if ortho:
        B = np.vstack(ortho)
        dev = np.abs(B @ B.T - np.eye(len(ortho)))
        if dev.max() > GRAM_TOL:
            i, j = np.unravel_index(np.argmax(dev), dev.shape)
            raise FormatError(
                f"base_ortho Gram matrix deviates from identity by {dev.max():.3e} "
                f"at axes {axes[i].name!r}/{axes[j].name!r}"
            )

    exts = []
    names = [a.name for a in axes]
    for i, e in enumerate(doc["extensions"]):
        if set(e) != _EXT_KEYS:
            raise FormatError(f"extension {i}: fields must be exactly {sorted(_EXT_KEYS)}")
        name = str(e["name"])
        if e["mode"] not in MODES:
            raise FormatError(f"extension {name!r}: unknown mode {e['mode']!r}")
        d_in = _vec(e["d_in"], dim, f"extension {name!r} d_in")
        d_out = _vec(e["d_out"], dim, f"extension {name!r} d_out")
        _check_unit(d_in, f"extension {name!r} d_in")
        _check_unit(d_out, f"extension {name!r} d_out")
        weights = tuple(float(w) for w in e["weights"])
        if e["mode"] == RESIDUAL:
            if weights:
                raise FormatError(f"extension {name!r}: residual mode carries no weights")
            if ortho:
                leak = float(np.max(np.abs(np.vstack(ortho) @ d_out)))
                if leak > GRAM_TOL:
                    raise FormatError(f"extension {name!r}: d_out not orthogonal to the base ({leak:.3e})")
        elif len(weights) != len(axes) or abs(sum(weights) - 1.0) > 1e-12:
            raise FormatError(f"extension {name!r}: weights must number {len(axes)} and sum to 1")
        exts.append(Extension(name=name, d_in=d_in, d_out=d_out, mode=e["mode"], weights=weights))
        names.append(name)
    if len(set(names)) != len(names):
        raise FormatError("axis names must be unique")
    return AxisBank(dim=dim, base_raw=tuple(axes), base_ortho=ortho, extensions=tuple(exts))


def write_bank(path, bank: AxisBank):
    write_json(path, bank_to_dict(bank))


def read_bank(path) -> AxisBank:
    return bank_from_dict(read_json(path))


def banks_equal(a: AxisBank, b: AxisBank) -> bool:
    """Bit-level equality of every stored value."""
    return dumps_json(bank_to_dict(a)) == dumps_json(bank_to_dict(b))


# worlds are stored by their construction arguments

def write_world(path, world):
    write_json(path, {"format_version": WORLD_FORMAT_VERSION, **world.params})


def read_world(path):
    doc = read_json(path)
    if doc.get("format_version") != WORLD_FORMAT_VERSION:
        raise FormatError(f"unsupported world format_version {doc.get('format_version')!r}")
    args = {k: v for k, v in doc.items() if k != "format_version"}
    try:
        return make_world(**args)
    except TypeError as exc:
        raise FormatError(f"{path}: bad world fields ({exc})") from None


# images

def pgm_bytes(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError("images must be 2-D")
    h, w = img.shape
    levels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)  # rint rounds half to even
    return f"P5\n{w} {h}\n255\n".encode("ascii") + levels.tobytes()


def f64raw_bytes(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError("images must be 2-D")
    h, w = img.shape
    return F64_MAGIC + struct.pack("<qq", h, w) + img.astype("<f8").tobytes()


def write_image(path, img, format="pgm8"):
    if format == "pgm8":
        data = pgm_bytes(img)
    elif format == "f64raw":
        data = f64raw_bytes(img)
    else:
        raise FormatError(f"unknown image format {format!r}")
    atomic_write(path, data)


def _parse_pgm(data: bytes) -> np.ndarray:
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if not 0 < maxval < 256:
        raise FormatError("only 8-bit PGM files are supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        if data.startswith(F64_MAGIC):
            h, w = struct.unpack_from("<qq", data, len(F64_MAGIC))
            off = len(F64_MAGIC) + 16
            if len(data) != off + 8 * h * w:
                raise FormatError(f"{path}: size does not match {h}x{w} header")
            return np.frombuffer(data, dtype="<f8", offset=off).reshape(h, w).astype(np.float64)
        if data.startswith(b"P5"):
            return _parse_pgm(data)
    except (ValueError, struct.error) as exc:
        raise FormatError(f"{path}: corrupt image ({exc})") from None
    raise FormatError(f"{path}: not a PGM (P5) or f64raw image")
