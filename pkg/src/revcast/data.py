"""Synthetic sequence generators and fixed binary file formats.

The tensor file layout is little-endian and versioned so round trips are
bit-exact and reimplementable from the docstring alone:

    magic   4 bytes  "CRVT"
    version u8       1
    dtype   u8       0 = float32-LE, 1 = float64-LE
    ndim    u8       1..6
    reserved u8      0
    dims    ndim x u32-LE
    payload row-major

A checkpoint is "CRVC", version u8 1, three reserved zero bytes, a u32-LE
manifest length, a UTF-8 JSON manifest (canonical parameter names, shapes,
dtypes, blob offsets, plus the model-config echo and its SHA-256), and the
parameter tensors concatenated as tensor-file blobs in manifest order.
Identical models therefore serialize to identical bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .config import config_sha256, parse_model_config, render_model_config
from .errors import ConfigError, TensorFileError
from .model import ModelConfig, ModelParams, init_model
from .ptree import tree_flatten, tree_unflatten

_TENSOR_MAGIC = b"CRVT"
_CKPT_MAGIC = b"CRVC"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_MAX_ELEMS = 1 << 33  # dim-overflow guard: refuse absurd allocations up front


# ---------------------------------------------------------------------------
# tensor files


def tensor_to_bytes(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.dtype not in _CODE_OF:
        raise TensorFileError(f"unsupported dtype {x.dtype}; use float32 or float64")
    if not 1 <= x.ndim <= 6:
        raise TensorFileError(f"tensor rank must be 1..6, got {x.ndim}")
    header = struct.pack("<4sBBBB", _TENSOR_MAGIC, 1, _CODE_OF[x.dtype], x.ndim, 0)
    dims = struct.pack(f"<{x.ndim}I", *x.shape)
    payload = np.ascontiguousarray(x, dtype=x.dtype.newbyteorder("<")).tobytes()
    return header + dims + payload


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise TensorFileError("truncated header")
    magic, version, dtype_code, ndim, reserved = struct.unpack_from("<4sBBBB", buf)
    if magic != _TENSOR_MAGIC:
        raise TensorFileError(f"bad magic {magic!r}")
    if version != 1:
        raise TensorFileError(f"unsupported version {version}")
    if dtype_code not in _DTYPE_CODES:
        raise TensorFileError(f"unknown dtype code {dtype_code}")
    if not 1 <= ndim <= 6:
        raise TensorFileError(f"tensor rank must be 1..6, got {ndim}")
    if reserved != 0:
        raise TensorFileError(f"reserved header byte must be 0, got {reserved}")
    if len(buf) < 8 + 4 * ndim:
        raise TensorFileError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    total = 1
    for d in dims:
        if d == 0:
            raise TensorFileError("zero-length dimension")
        total *= d
    if total > _MAX_ELEMS:
        raise TensorFileError(f"dim overflow: {dims} implies {total} elements")
    dtype = _DTYPE_CODES[dtype_code]
    start = 8 + 4 * ndim
    expected = total * dtype.itemsize
    if len(buf) - start < expected:
        raise TensorFileError("truncated payload")
    if len(buf) - start > expected:
        raise TensorFileError(f"{len(buf) - start - expected} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, count=total, offset=start)
    return arr.reshape(dims).copy()


def write_tensor(path: str, x: np.ndarray) -> None:
    _atomic_write(path, tensor_to_bytes(x))


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, params: ModelParams, config: ModelConfig) -> None:
    echo = render_model_config(config)
    blobs, entries = [], []
    offset = 0
    for name, value in tree_flatten(params):
        blob = tensor_to_bytes(value)
        entries.append({
            "name": name,
            "shape": list(value.shape),
            "dtype": "f32" if value.dtype == np.float32 else "f64",
            "offset": offset,
            "length": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {"config": echo, "config_sha256": config_sha256(echo), "params": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    head = struct.pack("<4sBBBBI", _CKPT_MAGIC, 1, 0, 0, 0, len(manifest))
    _atomic_write(path, head + manifest + b"".join(blobs))


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise TensorFileError("truncated checkpoint header")
    magic, version, _, _, _, manifest_len = struct.unpack_from("<4sBBBBI", buf)
    if magic != _CKPT_MAGIC:
        raise TensorFileError(f"bad checkpoint magic {magic!r}")
    if version != 1:
        raise TensorFileError(f"unsupported checkpoint version {version}")
    if len(buf) < 12 + manifest_len:
        raise TensorFileError("truncated checkpoint manifest")
    try:
        manifest = json.loads(buf[12:12 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise TensorFileError(f"unreadable checkpoint manifest: {err}") from None

    echo = manifest.get("config")
    if not isinstance(echo, str):
        raise TensorFileError("checkpoint manifest lacks a config echo")
    if config_sha256(echo) != manifest.get("config_sha256"):
        raise TensorFileError("config hash mismatch")
    try:
        config = parse_model_config(echo)
    except ConfigError as err:
        raise TensorFileError(f"invalid config echo: {err}") from None

    template = init_model(config, seed=0, scheme="zero")
    names = [n for n, _ in tree_flatten(template)]
    shapes = [v.shape for _, v in tree_flatten(template)]
    entries = manifest.get("params")
    if not isinstance(entries, list) or len(entries) != len(names):
        raise TensorFileError(f"manifest lists {len(entries or [])} parameters, "
                              f"model has {len(names)}")
    blob_base = 12 + manifest_len
    values = []
    for entry, name, shape in zip(entries, names, shapes):
        if entry.get("name") != name:
            raise TensorFileError(f"manifest parameter {entry.get('name')!r} does not "
                                  f"match model parameter {name!r}")
        start = blob_base + entry["offset"]
        end = start + entry["length"]
        if end > len(buf):
            raise TensorFileError(f"blob for {name} runs past end of file")
        value = tensor_from_bytes(buf[start:end])
        if value.shape != shape:
            raise TensorFileError(f"parameter {name} has shape {value.shape}, "
                                  f"model expects {shape}")
        if value.dtype != config.dtype:
            raise TensorFileError(f"parameter {name} dtype {value.dtype} does not match "
                                  f"config precision {config.precision}")
        if tuple(entry.get("shape", ())) != shape:
            raise TensorFileError(f"manifest shape for {name} disagrees with its blob")
        values.append(value)
    return tree_unflatten(template, values), config


# ---------------------------------------------------------------------------
# generators


def gen_bouncing(size: int, frames: int, square: int, velocity: tuple[int, int],
                 seed: int, *, start: tuple[int, int] | None = None,
                 flip_signs: bool = True) -> np.ndarray:
    """One bouncing-square sequence, (frames, size, size, 1) float32 in {0, 1}.

    A bright square of side `square` translates by `velocity` = (vx, vy)
    pixels per frame and reflects off the walls, so the lit-pixel count is
    constant across time.  The seed draws the start position and the sign of
    each velocity component; `start` (x, y) and `flip_signs=False` pin them
    for targeted tests.
    """
    if size < 2 or square < 1 or square >= size:
        raise ConfigError(f"degenerate geometry: size {size}, square {square}")
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    rng = np.random.Generator(np.random.PCG64(seed))
    limit = size - square
    if start is None:
        x, y = int(rng.integers(0, limit + 1)), int(rng.integers(0, limit + 1))
    else:
        x, y = start
        if not (0 <= x <= limit and 0 <= y <= limit):
            raise ConfigError(f"start {start} outside [0, {limit}]^2")
    vx, vy = velocity
    if flip_signs:
        vx = vx * (1 if rng.integers(0, 2) else -1)
        vy = vy * (1 if rng.integers(0, 2) else -1)

    out = np.zeros((frames, size, size, 1), dtype=np.float32)
    for t in range(frames):
        out[t, y:y + square, x:x + square, 0] = 1.0
        x, vx = _bounce(x, vx, limit)
        y, vy = _bounce(y, vy, limit)
    return out


def _bounce(p: int, v: int, limit: int) -> tuple[int, int]:
    p += v
    if p < 0:
        return -p, -v
    if p > limit:
        return 2 * limit - p, -v
    return p, v


def gen_traffic_toy(size: int, frames: int, roads: int, seed: int) -> np.ndarray:
    """One toy traffic sequence, (frames, size, size, 3) float32 in [0, 1].

    Axis-aligned roads (alternating horizontal/vertical, seeded placement)
    carry random occupancy pulses that advance `speed` pixels per frame with
    wraparound.  Channels: 0 = occupancy (moving), 1 = normalized speed
    (static, speed/2 with speed in {1, 2}), 2 = direction code (static,
    0.5 = toward smaller coordinates, 1.0 = toward larger).  Off-road pixels
    are exactly 0 in all channels.  Where roads cross, the later-drawn road
    overwrites the earlier one.
    """
    if size < 4:
        raise ConfigError(f"degenerate size {size}")
    if frames < 1 or roads < 1:
        raise ConfigError(f"frames and roads must be >= 1, got {frames}, {roads}")
    n_horizontal = (roads + 1) // 2
    n_vertical = roads // 2
    if n_horizontal > size or n_vertical > size:
        raise ConfigError(f"{roads} roads do not fit a {size}x{size} grid")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = rng.choice(size, size=n_horizontal, replace=False)
    cols = rng.choice(size, size=n_vertical, replace=False)

    out = np.zeros((frames, size, size, 3), dtype=np.float32)
    lanes = [("h", int(r)) for r in rows] + [("v", int(c)) for c in cols]
    for axis, index in lanes:
        speed = int(rng.integers(1, 3))
        forward = bool(rng.integers(0, 2))
        pattern = (rng.random(size) < 0.5).astype(np.float32)
        direction_code = 1.0 if forward else 0.5
        shift = speed if forward else -speed
        for t in range(frames):
            occupancy = np.roll(pattern, t * shift)
            if axis == "h":
                out[t, index, :, 0] = occupancy
                out[t, index, :, 1] = speed / 2.0
                out[t, index, :, 2] = direction_code
            else:
                out[t, :, index, 0] = occupancy
                out[t, :, index, 1] = speed / 2.0
                out[t, :, index, 2] = direction_code
    return out


def gen_batch(kind: str, seqs: int, size: int, frames: int, seed: int, *,
              square: int | None = None, velocity: tuple[int, int] = (1, 1),
              roads: int | None = None) -> np.ndarray:
    """Stack `seqs` independent sequences, seeds seed..seed+seqs-1."""
    if seqs < 1:
        raise ConfigError(f"seqs must be >= 1, got {seqs}")
    if kind == "bouncing":
        side = square if square is not None else max(2, size // 4)
        return np.stack([gen_bouncing(size, frames, side, velocity, seed + i)
                         for i in range(seqs)])
    if kind == "traffic":
        lanes = roads if roads is not None else max(2, size // 8)
        return np.stack([gen_traffic_toy(size, frames, lanes, seed + i)
                         for i in range(seqs)])
    raise ConfigError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# dataset directories and previews


def save_sequences(out_dir: str, seqs: np.ndarray) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i in range(seqs.shape[0]):
        path = os.path.join(out_dir, f"seq-{i:06d}.crvt")
        write_tensor(path, seqs[i])
        paths.append(path)
    return paths


def load_sequences(data_dir: str) -> np.ndarray:
    try:
        names = sorted(n for n in os.listdir(data_dir) if n.endswith(".crvt"))
    except OSError as err:
        raise TensorFileError(f"cannot list {data_dir}: {err}") from None
    if not names:
        raise TensorFileError(f"no .crvt sequences in {data_dir}")
    seqs = [read_tensor(os.path.join(data_dir, n)) for n in names]
    shapes = {s.shape for s in seqs}
    if len(shapes) != 1:
        raise TensorFileError(f"sequences disagree in shape: {sorted(shapes)}")
    return np.stack(seqs)


def write_pgm(path: str, frame: np.ndarray) -> None:
    """8-bit binary portable graymap of one frame (channels averaged)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=-1)
    if frame.ndim != 2:
        raise TensorFileError(f"preview frame must be (H, W) or (H, W, C), got {frame.shape}")
    gray = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
