"""Raw image container and 8-bit grayscale file I/O (binary PGM and PNG)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptFile, UnsupportedFormat


@dataclass(frozen=True)
class RawImage:
    """8-bit grayscale sensor raster.

    ``pixels`` is a (height, width) uint8 array; pixel coordinate (u, v)
    indexes (axis 0, axis 1).
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise UnsupportedFormat("RawImage wants a 2-D uint8 array")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def write_pgm(path, img: RawImage) -> None:
    """Binary (P5) PGM, maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def _read_pgm(data: bytes) -> RawImage:
    # Header tokens may be separated by arbitrary whitespace and comments.
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise UnsupportedFormat(f"not a binary PGM (magic {magic!r})")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise CorruptFile("unparseable PGM header") from exc
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise CorruptFile("PGM raster truncated")
    return RawImage(np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy())


def write_png(path, img: RawImage) -> None:
    Image.fromarray(img.pixels, mode="L").save(str(path), format="PNG")


def read_image(path) -> RawImage:
    """Read a raw image from binary PGM or 8-bit grayscale PNG."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        return _read_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(path) as im:
                if im.mode != "L":
                    raise UnsupportedFormat(f"PNG mode {im.mode!r}; need 8-bit grayscale")
                return RawImage(np.asarray(im, dtype=np.uint8))
        except UnsupportedFormat:
            raise
        except Exception as exc:  # noqa: BLE001 - Pillow raises various types
            raise CorruptFile(f"unreadable PNG: {exc}") from exc
    if data[:2] in (b"P2", b"P1", b"P3", b"P4", b"P6"):
        raise UnsupportedFormat(f"unsupported netpbm variant {data[:2]!r}")
    raise UnsupportedFormat("unrecognized image format")


def write_image(path, img: RawImage) -> None:
    """Dispatch on extension: .pgm or .png."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, img)
    elif suffix == ".png":
        write_png(path, img)
    else:
        raise UnsupportedFormat(f"cannot write {suffix!r}; use .pgm or .png")
