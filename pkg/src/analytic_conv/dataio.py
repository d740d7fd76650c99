"""File formats: MNIST IDX, checkpoints, kernel matrices and PGM/PPM images."""

from __future__ import annotations

import gzip
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .acl import AclLayer
from .nncore import Dataset, Network, build_network

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CHECKPOINT_MAGIC = b"ACLCKPT\n"
CHECKPOINT_VERSION = 1


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- IDX


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxTruncatedError(f"truncated {what} file: no header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"not an {what} file (magic 0x{got:08x}, expected 0x{magic:08x})")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"truncated {what} file: incomplete dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = int(np.prod(dims))
    if len(raw) - head < n:
        raise IdxTruncatedError(f"truncated {what} file: {len(raw) - head} of {n} data bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """uint8 array (count, rows, cols)."""
    return _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, 3, "image")


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, 1, "label")


def load_idx(images_path, labels_path) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return Dataset(images[:, None, :, :] / 255.0, labels)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    head = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape)
    atomic_write(path, head + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    atomic_write(path, struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def find_idx_pair(data_dir, split: str) -> tuple[Path, Path]:
    """Locate ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` in a folder."""
    data_dir = Path(data_dir)
    found = []
    for stem in (f"{split}-images-idx3-ubyte", f"{split}-labels-idx1-ubyte"):
        for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
            if (data_dir / cand).exists():
                found.append(data_dir / cand)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")
    return found[0], found[1]


def load_mnist(data_dir, split: str = "train") -> Dataset:
    return load_idx(*find_idx_pair(data_dir, split))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(net: Network, path, metadata: dict | None = None) -> None:
    """Serialise layer definitions as JSON and parameters as raw float64 LE."""
    arrays = []
    chunks = []
    offset = 0
    for i, layer in enumerate(net.layers):
        if not hasattr(layer, "state"):
            continue
        for name, value in layer.state().items():
            a = np.ascontiguousarray(value, dtype="<f8")
            arrays.append({"layer": i, "name": name, "shape": list(a.shape), "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape) if net.input_shape else None,
        "layers": [layer.config() for layer in net.layers],
        "arrays": arrays,
        "payload_bytes": offset,
        "metadata": metadata or {},
    }
    meta = json.dumps(header, sort_keys=True).encode()
    blob = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(meta)) + meta + b"".join(chunks)
    atomic_write(path, blob)


def load_checkpoint(path) -> Network:
    """Rebuild a network; its ``metadata`` attribute holds the saved metadata."""
    raw = Path(path).read_bytes()
    fixed = len(CHECKPOINT_MAGIC) + 12
    if len(raw) < fixed or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint or truncated header")
    version, meta_len = struct.unpack("<IQ", raw[len(CHECKPOINT_MAGIC) : fixed])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < fixed + meta_len:
        raise CorruptCheckpointError(f"{path}: truncated metadata record")
    try:
        header = json.loads(raw[fixed : fixed + meta_len])
    except ValueError as e:
        raise CorruptCheckpointError(f"{path}: bad metadata record ({e})") from None
    payload = raw[fixed + meta_len :]
    if len(payload) != header["payload_bytes"]:
        raise CorruptCheckpointError(
            f"{path}: payload has {len(payload)} bytes, expected {header['payload_bytes']}"
        )
    states = [None] * len(header["layers"])
    for rec in header["arrays"]:
        n = int(np.prod(rec["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=rec["offset"]).reshape(rec["shape"])
        if states[rec["layer"]] is None:
            states[rec["layer"]] = {}
        states[rec["layer"]][rec["name"]] = a.astype(np.float64)
    try:
        net = build_network(header["layers"], header["input_shape"], states=states)
    except (KeyError, ValueError) as e:
        raise CorruptCheckpointError(f"{path}: inconsistent layer records ({e})") from None
    net.metadata = header["metadata"]
    return net


# ---------------------------------------------------------------- kernel matrices


def load_kernel_matrices(path) -> list[np.ndarray]:
    """Read target kernels from ``.npy`` ((h, w) or (n, h, w)) or JSON nested lists.

    JSON may be a bare list of matrices or ``{"kernels": [...]}``.
    """
    path = Path(path)
    if path.suffix == ".npy":
        a = np.load(path, allow_pickle=False)
    else:
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            doc = doc["kernels"]
        a = np.asarray(doc, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{path}: expected (h, w) or (n, h, w) matrices, got shape {a.shape}")
    return [np.array(m, dtype=np.float64) for m in a]


def save_kernel_matrices(path, kernels) -> None:
    a = np.asarray(kernels, dtype=np.float64)
    path = Path(path)
    if path.suffix == ".npy":
        import io

        buf = io.BytesIO()
        np.save(buf, a)
        atomic_write(path, buf.getvalue())
    else:
        atomic_write(path, json.dumps({"kernels": a.tolist()}).encode())


# ---------------------------------------------------------------- images


def normalize_tile(k: np.ndarray) -> np.ndarray:
    """Map a kernel's min to 0 and max to 255; constant kernels become 128."""
    lo, hi = float(k.min()), float(k.max())
    if hi == lo:
        return np.full(k.shape, 128, dtype=np.uint8)
    return np.rint((k - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        tag = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    h, w = img.shape[:2]
    return tag + f"\n{w} {h}\n255\n".encode() + img.tobytes()


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    tag, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255 or tag not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM header")
    ch = 3 if tag == b"P6" else 1
    body = raw[len(raw) - w * h * ch :]
    img = np.frombuffer(body, dtype=np.uint8)
    return img.reshape(h, w, 3) if ch == 3 else img.reshape(h, w)


def kernel_mosaic(
    layer: AclLayer,
    layout: tuple[int, int] | None = None,
    mode: str | None = None,
    scale: int = 1,
    gap: int = 1,
) -> np.ndarray:
    """Tile a layer's kernels into one image array.

    Modes: ``gray`` places kernel ``k`` at grid cell ``k`` row-major;
    ``rgb`` does the same but tints each tile by its input channel (needs
    ``Ci == 3``); ``rgb-combined`` merges the three input channels of each
    output channel into one colour tile.
    """
    bank = layer.materialize()
    co, ci, h, w = bank.shape
    if mode is None:
        mode = "rgb" if ci == 3 else "gray"
    if mode in ("rgb", "rgb-combined") and ci != 3:
        raise ValueError(f"{mode} rendering needs 3 input channels, layer has {ci}")
    if mode == "rgb-combined":
        n_tiles = co
        layout = layout or (co, 1)
    elif mode in ("gray", "rgb"):
        n_tiles = co * ci
        layout = layout or (co, ci)
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    rows, cols = layout
    if rows * cols < n_tiles:
        raise ValueError(f"layout {rows}x{cols} holds {rows * cols} tiles, need {n_tiles}")

    th, tw = h * scale, w * scale
    channels = 1 if mode == "gray" else 3
    img = np.zeros((rows * th + (rows + 1) * gap, cols * tw + (cols + 1) * gap, channels), np.uint8)
    flat = bank.reshape(co * ci, h, w)
    for t in range(n_tiles):
        tile = np.zeros((h, w, channels), np.uint8)
        if mode == "rgb-combined":
            for p in range(3):
                tile[:, :, p] = normalize_tile(bank[t, p])
        elif mode == "rgb":
            tile[:, :, t % ci] = normalize_tile(flat[t])
        else:
            tile[:, :, 0] = normalize_tile(flat[t])
        tile = tile.repeat(scale, axis=0).repeat(scale, axis=1)
        r, c = divmod(t, cols)
        y0, x0 = gap + r * (th + gap), gap + c * (tw + gap)
        img[y0 : y0 + th, x0 : x0 + tw] = tile
    return img[:, :, 0] if channels == 1 else img


def render_kernels(layer: AclLayer, path, layout=None, mode=None, scale: int = 1, gap: int = 1) -> None:
    """Write the kernel mosaic as binary PGM (gray) or PPM (colour)."""
    atomic_write(path, encode_pnm(kernel_mosaic(layer, layout, mode, scale, gap)))
