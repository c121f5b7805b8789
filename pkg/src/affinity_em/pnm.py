"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from pathlib import Path

import numpy as np


def _tokens(data):
    # Header tokens with '#' comments stripped; returns tokens and body offset.
    tokens = []
    pos = 0
    while len(tokens) < 4:
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
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pnm(path):
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PNM is supported")
    if magic == b"P6":
        shape = (h, w, 3)
    elif magic == b"P5":
        shape = (h, w)
    else:
        raise ValueError(f"{path}: unsupported PNM magic {magic!r}")
    body = np.frombuffer(data, dtype=np.uint8, count=int(np.prod(shape)), offset=offset)
    return body.reshape(shape).copy()


def write_pnm(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("PNM writer expects uint8 data")
    if array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
    elif array.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError("expected (H, W) or (H, W, 3) array")
    h, w = array.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + array.tobytes())


def write_image(path, image):
    """Write a float RGB image in [0, 1] as P6."""
    write_pnm(path, np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))


def read_image(path):
    return read_pnm(path).astype(float) / 255.0


def write_labels(path, labels):
    """Write a label grid as P5; UNKNOWN is stored as 255."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in one byte")
    write_pnm(path, labels.astype(np.uint8))


def read_labels(path):
    return read_pnm(path).astype(np.int64)
