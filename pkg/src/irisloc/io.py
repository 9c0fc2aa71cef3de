"""On-disk formats: PGM images, FMAP tensors, JSON annotations, ITPL iris
templates, key=value config files and score CSVs."""
from __future__ import annotations

import configparser
import csv
import json
import struct
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import ConfigError, FormatError
from .forward import BatchNorm, ConvParams
from .imaging import Circle, to_uint8
from .recognition import IrisTemplate
from .validation import check_binary_mask

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
ITPL_MAGIC = b"ITPL"
ITPL_VERSION = 1

# -- PGM ----------------------------------------------------------------------


def write_pgm(path, img):
    """Write a probability image (float in [0, 1]) or a binary mask as 8-bit P5."""
    arr = np.asarray(img)
    if arr.dtype == bool:
        data = np.where(arr, 255, 0).astype(np.uint8)
    elif arr.dtype == np.uint8:
        data = arr
    else:
        data = to_uint8(arr)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(data).tobytes())


def _pgm_tokens(buf):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pgm_raw(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(buf)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=offset)
    if data.size != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return data.reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    """Gray image with values ``v / 255``."""
    return read_pgm_raw(path) / 255.0


def read_mask_pgm(path) -> np.ndarray:
    """Binary mask: 0 is background, anything else foreground."""
    return read_pgm_raw(path) > 0


# -- FMAP -------------------------------------------------------------------


def fmap_bytes(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FormatError(f"FMAP holds (C, H, W) tensors, got shape {arr.shape}")
    data = arr.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise FormatError("FMAP payload must be finite")
    c, h, w = data.shape
    return FMAP_MAGIC + struct.pack("<IIII", FMAP_VERSION, c, h, w) + data.tobytes()


def write_fmap(path, tensor):
    Path(path).write_bytes(fmap_bytes(tensor))


def read_fmap(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FMAP_MAGIC:
        raise FormatError(f"{path}: bad FMAP magic")
    version, c, h, w = struct.unpack("<IIII", buf[4:20])
    if version != FMAP_VERSION:
        raise FormatError(f"{path}: unsupported FMAP version {version}")
    if len(buf) != 20 + 4 * c * h * w:
        raise FormatError(f"{path}: payload length does not match {c}x{h}x{w}")
    data = np.frombuffer(buf, dtype="<f4", offset=20).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values in payload")
    return data.astype(np.float32)


def read_probmaps(path):
    from .localization import ProbMapSet

    arr = read_fmap(path).astype(np.float64)
    if arr.shape[0] != 4:
        raise FormatError(f"{path}: expected 4 probability maps, found {arr.shape[0]}")
    return ProbMapSet.from_array(np.clip(arr, 0.0, 1.0))


def write_probmaps(path, maps):
    write_fmap(path, maps.as_array())


# -- weight bundles ------------------------------------------------------------


def save_weight_bundle(directory, weights):
    """Directory with ``layers.json`` plus ``<layer>.w.fmap``, ``.b.fmap`` and optional ``.bn.fmap``.

    Conv weights ``(out, in, k, k)`` are stored as a ``(out*in, k, k)`` FMAP;
    batch-norm rows are (mean, var, scale, shift).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, p in sorted(weights.items()):
        o, i, k, _ = p.weights.shape
        write_fmap(d / f"{name}.w.fmap", p.weights.reshape(o * i, k, k))
        write_fmap(d / f"{name}.b.fmap", p.bias.reshape(o, 1, 1))
        if p.bn is not None:
            write_fmap(d / f"{name}.bn.fmap", np.stack([p.bn.mean, p.bn.var, p.bn.scale, p.bn.shift])[:, None, :])
        index[name] = {"in_channels": i, "dilation": p.dilation, "stride": p.stride, "bn": p.bn is not None}
    (d / "layers.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_weight_bundle(directory) -> dict[str, ConvParams]:
    d = Path(directory)
    index = json.loads((d / "layers.json").read_text())
    weights = {}
    for name, meta in index.items():
        w = read_fmap(d / f"{name}.w.fmap").astype(np.float64)
        b = read_fmap(d / f"{name}.b.fmap").astype(np.float64).reshape(-1)
        in_ch = meta["in_channels"]
        w = w.reshape(len(b), in_ch, w.shape[1], w.shape[2])
        bn = None
        if meta["bn"]:
            rows = read_fmap(d / f"{name}.bn.fmap").astype(np.float64)[:, 0, :]
            bn = BatchNorm(*rows)
        weights[name] = ConvParams(w, b, dilation=meta["dilation"], stride=meta["stride"], bn=bn)
    return weights


# -- annotations ----------------------------------------------------------------

_CIRCLE_SCHEMA = {
    "type": "object",
    "required": ["cx", "cy", "r"],
    "properties": {"cx": {"type": "number"}, "cy": {"type": "number"}, "r": {"type": "number", "exclusiveMinimum": 0}},
}
_ELLIPSE_SCHEMA = {
    "type": "object",
    "required": ["cx", "cy", "a", "b", "phi"],
    "properties": {
        "cx": {"type": "number"},
        "cy": {"type": "number"},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "b": {"type": "number", "exclusiveMinimum": 0},
        "phi": {"type": "number"},
    },
}
ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["id", "pupil_center", "inner", "outer", "mask_path"],
    "properties": {
        "id": {"type": "string"},
        "pupil_center": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "inner": _CIRCLE_SCHEMA,
        "outer": _CIRCLE_SCHEMA,
        "mask_path": {"type": "string"},
        "inner_ellipse": _ELLIPSE_SCHEMA,
        "outer_ellipse": _ELLIPSE_SCHEMA,
    },
}


def annotation_dict(image_id, pupil_center, inner: Circle, outer: Circle, mask_path, **extra) -> dict:
    d = {
        "id": str(image_id),
        "pupil_center": [float(pupil_center[0]), float(pupil_center[1])],
        "inner": inner.to_dict(),
        "outer": outer.to_dict(),
        "mask_path": str(mask_path),
    }
    d.update(extra)
    return d


def write_annotation(path, annotation: dict):
    jsonschema.validate(annotation, ANNOTATION_SCHEMA)
    Path(path).write_text(json.dumps(annotation, indent=2, sort_keys=True) + "\n")


def read_annotation(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
        jsonschema.validate(d, ANNOTATION_SCHEMA)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise FormatError(f"{path}: invalid annotation: {exc}") from exc
    return d


# -- iris templates -----------------------------------------------------------------


def template_bytes(t: IrisTemplate) -> bytes:
    header = ITPL_MAGIC + struct.pack("<III", ITPL_VERSION, t.rows, t.cols)
    code = np.packbits(t.code.ravel(), bitorder="little")
    mask = np.packbits(t.mask.ravel(), bitorder="little")
    return header + code.tobytes() + mask.tobytes()


def template_from_bytes(buf: bytes) -> IrisTemplate:
    if buf[:4] != ITPL_MAGIC:
        raise FormatError("bad ITPL magic")
    version, rows, cols = struct.unpack("<III", buf[4:16])
    if version != ITPL_VERSION:
        raise FormatError(f"unsupported ITPL version {version}")
    nbits = rows * cols * 2
    nbytes = (nbits + 7) // 8
    if len(buf) != 16 + 2 * nbytes:
        raise FormatError("ITPL payload length does not match its dimensions")
    payload = np.frombuffer(buf, dtype=np.uint8, offset=16)
    code = np.unpackbits(payload[:nbytes], count=nbits, bitorder="little").astype(bool)
    mask = np.unpackbits(payload[nbytes:], count=nbits, bitorder="little").astype(bool)
    return IrisTemplate(code.reshape(rows, cols, 2), mask.reshape(rows, cols, 2))


def write_template(path, t: IrisTemplate):
    Path(path).write_bytes(template_bytes(t))


def read_template(path) -> IrisTemplate:
    return template_from_bytes(Path(path).read_bytes())


# -- config --------------------------------------------------------------------

CONFIG_KEYS = {
    "mask_lo": int,
    "mask_hi": int,
    "center_lo": int,
    "center_hi": int,
    "boundary_lo": int,
    "boundary_hi": int,
    "n_angles": int,
    "delta": int,
    "ring_tolerance": float,
    "rows": int,
    "cols": int,
    "wavelength": float,
    "sigma_ratio": float,
    "max_shift": int,
}


def read_config(path) -> dict:
    """Plain ``key = value`` file; ``#`` starts a comment line."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[config]\n" + Path(path).read_text())
    out = {}
    for key, raw in parser["config"].items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return out


# -- score lists ---------------------------------------------------------------------


def read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``label,score`` rows (label 1 = genuine, 0 = impostor); rows flagged invalid are skipped."""
    genuine, impostor = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row.get("status", "ok") != "ok" or row["score"] == "":
                continue
            (genuine if int(row["label"]) == 1 else impostor).append(float(row["score"]))
    return np.array(genuine), np.array(impostor)


def write_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "rate"])
        for t, r in curve:
            w.writerow([repr(float(t)), repr(float(r))])


def write_mask(path, mask):
    write_pgm(path, check_binary_mask(mask))
