"""Image containers and binary raster file I/O.

Images are stored row-major as float arrays of shape (H, W, C) with C in
{1, 3}.  Files loaded from 8- or 16-bit PGM (P5) and PPM (P6) are mapped
to [0, 1] by dividing by the header maxval; saving quantizes back to
8 bits, so load -> save -> load round-trips are bit-exact for 8-bit data.
Integer label maps use 16-bit PGM (big-endian samples, maxval 65535) and
float maps use PFM (little-endian, scale -1.0, rows stored bottom-up).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Image",
    "load_image",
    "save_image",
    "bias_gain_normalize",
    "luminance",
    "load_label_map",
    "save_label_map",
    "load_pfm",
    "save_pfm",
]


@dataclass
class Image:
    """A row-major raster image with 1 or 3 channels.

    ``data`` has shape (height, width, channels).  Loaded files lie in
    [0, 1]; derived images (e.g. bias/gain normalized) may not.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError("image data must have shape (H, W) or (H, W, 1|3)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data must be finite")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel_means(self) -> np.ndarray:
        return self.data.mean(axis=(0, 1))

    def channel_stds(self) -> np.ndarray:
        return self.data.std(axis=(0, 1))


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next whitespace-delimited header token, skipping
    ``#`` comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("malformed header: expected token")
    return buf[start:pos], pos


def _parse_int(token: bytes, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ValueError(f"malformed header: bad {what} {token!r}") from None


def _load_pnm_raw(path) -> tuple[bytes, int, int, int, np.ndarray]:
    """Parse a binary PGM/PPM file into (magic, W, H, maxval, samples)."""
    raw = Path(path).read_bytes()
    magic, pos = _next_token(raw, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported image magic {magic!r}")
    tok, pos = _next_token(raw, pos)
    width = _parse_int(tok, "width")
    tok, pos = _next_token(raw, pos)
    height = _parse_int(tok, "height")
    tok, pos = _next_token(raw, pos)
    maxval = _parse_int(tok, "maxval")
    if width <= 0 or height <= 0:
        raise ValueError("malformed header: non-positive dimensions")
    if not 0 < maxval < 65536:
        raise ValueError(f"malformed header: maxval {maxval} out of range")
    pos += 1  # single whitespace byte terminates the header
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = count * dtype.itemsize
    if len(raw) - pos < nbytes:
        raise ValueError("truncated raster data")
    samples = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return magic, width, height, maxval, samples


def load_image(path) -> Image:
    """Load a binary PGM (P5) or PPM (P6) file, scaled to [0, 1]."""
    magic, width, height, maxval, samples = _load_pnm_raw(path)
    channels = 1 if magic == b"P5" else 3
    arr = samples.astype(float).reshape(height, width, channels) / maxval
    return Image(arr)


def save_image(image: Image, path) -> None:
    """Write an image as binary PGM (1 channel) or PPM (3 channels),
    8 bits per sample."""
    arr = np.clip(image.data, 0.0, 1.0)
    quant = np.rint(arr * 255.0).astype(np.uint8)
    magic = b"P5" if image.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    Path(path).write_bytes(header + quant.tobytes())


def bias_gain_normalize(image: Image) -> Image:
    """Standardize each channel to zero mean and unit standard deviation.

    Removes per-channel affine (bias/gain) intensity differences so that
    two images related by x -> a*x + b normalize identically.
    """
    means = image.channel_means()
    stds = image.channel_stds()
    if np.any(stds <= 1e-12):
        raise ValueError("degenerate channel: zero variance, cannot normalize")
    return Image((image.data - means) / stds)


def luminance(image: Image) -> np.ndarray:
    """Return an (H, W) luminance plane (Rec. 601 weights for color)."""
    if image.channels == 1:
        return image.data[:, :, 0].copy()
    r, g, b = image.data[:, :, 0], image.data[:, :, 1], image.data[:, :, 2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def load_label_map(path) -> np.ndarray:
    """Load an (H, W) integer label map from a PGM file."""
    magic, width, height, _maxval, samples = _load_pnm_raw(path)
    if magic != b"P5":
        raise ValueError("label maps must be single-channel PGM")
    return samples.astype(np.int64).reshape(height, width)


def save_label_map(labels: np.ndarray, path) -> None:
    """Write an (H, W) integer label map as 16-bit PGM."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError("label map must be 2-d")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("label map must be integer valued")
    if arr.min() < 0 or arr.max() > 65535:
        raise ValueError("labels must lie in [0, 65535]")
    header = b"P5\n%d %d\n65535\n" % (arr.shape[1], arr.shape[0])
    Path(path).write_bytes(header + arr.astype(">u2").tobytes())


def save_pfm(array: np.ndarray, path) -> None:
    """Write a float map as PFM (little-endian, scale -1.0).

    Accepts (H, W) for grayscale ("Pf") or (H, W, 3) for color ("PF").
    Rows are stored bottom-up per the PFM convention.
    """
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError("PFM data must be (H, W) or (H, W, 3)")
    header = b"%s\n%d %d\n-1.0\n" % (magic, arr.shape[1], arr.shape[0])
    Path(path).write_bytes(header + arr[::-1].astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    """Load a PFM float map; returns (H, W) or (H, W, 3) float64.

    The sign of the scale token selects endianness; its magnitude is
    ignored (values are returned as stored).
    """
    raw = Path(path).read_bytes()
    magic, pos = _next_token(raw, 0)
    if magic not in (b"Pf", b"PF"):
        raise ValueError(f"unsupported PFM magic {magic!r}")
    tok, pos = _next_token(raw, pos)
    width = _parse_int(tok, "width")
    tok, pos = _next_token(raw, pos)
    height = _parse_int(tok, "height")
    tok, pos = _next_token(raw, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise ValueError(f"malformed header: bad scale {tok!r}") from None
    if width <= 0 or height <= 0 or scale == 0.0:
        raise ValueError("malformed PFM header")
    pos += 1
    channels = 1 if magic == b"Pf" else 3
    count = width * height * channels
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    if len(raw) - pos < count * 4:
        raise ValueError("truncated raster data")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.astype(float).reshape(shape)[::-1].copy()
