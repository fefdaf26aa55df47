"""Image and mask containers plus the on-disk formats used across the toolkit.

Frames live in memory as immutable float32 arrays normalized to [0,1] together
with the physical calibration needed to get back to nanometres (or degrees for
the phase channel). Two file formats are supported: a small native float
container (lossless, used for all intermediate data) and binary PGM for
interoperability (16-bit for frames, 8-bit for masks). Dataset manifests are
JSON Lines, one pair per line.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    ConstantInputError,
    DanglingPathError,
    DuplicateIdError,
    HeaderParseError,
    MissingFieldError,
    NonFiniteInputError,
    NonFinitePixelError,
    SpmError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)

SPMF_MAGIC = b"SPMF"
SPMF_VERSION = 1


class Channel(enum.Enum):
    Height = 0
    Amplitude = 1
    Phase = 2

    @classmethod
    def from_name(cls, name: str) -> "Channel":
        try:
            return cls[name]
        except KeyError:
            raise SpmError(f"unknown channel name {name!r}") from None


@dataclasses.dataclass(frozen=True)
class ScanFrame:
    """One single-channel scan, normalized to [0,1].

    Physical values are recovered as pixels * z_scale for height/amplitude
    data; the phase channel centres its range so that 0.5 maps to 0 degrees
    (see masks.phase_degrees).
    """

    width: int
    height: int
    channel: Channel
    scan_size: float  # micrometres per side
    z_scale: float    # nm per normalized unit; degrees per unit for Phase
    pixels: np.ndarray  # float32, shape (height, width)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.shape != (self.height, self.width):
            raise SpmError(
                f"pixel array shape {px.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if not np.all(np.isfinite(px)):
            raise NonFinitePixelError("frame contains non-finite pixels")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise SpmError("frame pixels must lie in [0,1]")
        if not (self.scan_size > 0):
            raise SpmError("scan_size must be positive")
        if not (self.z_scale > 0):
            raise SpmError("z_scale must be positive")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    def with_pixels(self, pixels: np.ndarray) -> "ScanFrame":
        """Return a copy of this frame with a new pixel array."""
        return ScanFrame(self.width, self.height, self.channel,
                         self.scan_size, self.z_scale,
                         np.asarray(pixels, dtype=np.float32))


@dataclasses.dataclass(frozen=True)
class MaskImage:
    width: int
    height: int
    bits: np.ndarray  # bool, shape (height, width); True = masked / to fill

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (self.height, self.width):
            raise SpmError(
                f"mask shape {b.shape} does not match {self.height}x{self.width}"
            )
        b = np.ascontiguousarray(b)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def count(self) -> int:
        """Number of masked pixels (the normalizer for masked metrics)."""
        return int(self.bits.sum())

    def with_bits(self, bits: np.ndarray) -> "MaskImage":
        return MaskImage(self.width, self.height, np.asarray(bits, dtype=bool))


def mask_like(frame: ScanFrame, bits: np.ndarray) -> MaskImage:
    return MaskImage(frame.width, frame.height, np.asarray(bits, dtype=bool))


@dataclasses.dataclass
class ManifestEntry:
    id: str
    clean_path: str
    artefact_path: str
    mask_path: str
    channel: str
    scan_size_um: float
    z_scale: float
    split: str                    # "train" | "bench"
    artefact_class: str
    ignore_path: str | None = None

    REQUIRED = ("id", "clean_path", "artefact_path", "mask_path", "channel",
                "scan_size_um", "z_scale", "split", "artefact_class")

    def to_json(self) -> str:
        d = {
            "id": self.id,
            "clean_path": self.clean_path,
            "artefact_path": self.artefact_path,
            "mask_path": self.mask_path,
            "channel": self.channel,
            "scan_size_um": self.scan_size_um,
            "z_scale": self.z_scale,
            "split": self.split,
            "artefact_class": self.artefact_class,
        }
        if self.ignore_path is not None:
            d["ignore_path"] = self.ignore_path
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        for field in cls.REQUIRED:
            if field not in d:
                raise MissingFieldError(f"manifest entry missing field {field!r}")
        return cls(
            id=str(d["id"]),
            clean_path=str(d["clean_path"]),
            artefact_path=str(d["artefact_path"]),
            mask_path=str(d["mask_path"]),
            channel=str(d["channel"]),
            scan_size_um=float(d["scan_size_um"]),
            z_scale=float(d["z_scale"]),
            split=str(d["split"]),
            artefact_class=str(d["artefact_class"]),
            ignore_path=(str(d["ignore_path"]) if d.get("ignore_path") else None),
        )


# ---------------------------------------------------------------------------
# SPMF: native lossless float container.
#
# Layout (little-endian): magic "SPMF"; u8 version = 1; u8 channel
# (0 Height, 1 Amplitude, 2 Phase); u16 reserved = 0; u32 width; u32 height;
# f32 scan_size_um; f32 z_scale; width*height f32 pixels, row-major, top row
# first.
# ---------------------------------------------------------------------------

_SPMF_HEADER = struct.Struct("<4sBBHIIff")


def save_spmf(frame: ScanFrame, path) -> None:
    header = _SPMF_HEADER.pack(
        SPMF_MAGIC, SPMF_VERSION, frame.channel.value, 0,
        frame.width, frame.height,
        np.float32(frame.scan_size), np.float32(frame.z_scale),
    )
    payload = np.ascontiguousarray(frame.pixels, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_spmf(path) -> ScanFrame:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != SPMF_MAGIC:
        raise BadMagicError(f"{path}: not an SPMF file")
    if len(blob) < _SPMF_HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    magic, version, channel, _reserved, width, height, scan_size, z_scale = \
        _SPMF_HEADER.unpack_from(blob, 0)
    if version != SPMF_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    try:
        chan = Channel(channel)
    except ValueError:
        raise HeaderParseError(f"{path}: unknown channel code {channel}") from None
    need = _SPMF_HEADER.size + 4 * width * height
    if len(blob) < need:
        raise TruncatedPayloadError(
            f"{path}: expected {need} bytes, file has {len(blob)}"
        )
    px = np.frombuffer(blob, dtype="<f4", count=width * height,
                       offset=_SPMF_HEADER.size).reshape(height, width)
    if not np.all(np.isfinite(px)):
        raise NonFinitePixelError(f"{path}: non-finite pixel values")
    return ScanFrame(width, height, chan, float(scan_size), float(z_scale), px)


# ---------------------------------------------------------------------------
# PGM (P5 binary). Frames use maxval 65535 with big-endian samples; masks use
# maxval 255 where 0 = keep and 255 = masked. On load, a sample >= 128 counts
# as masked.
# ---------------------------------------------------------------------------

def save_pgm(x, path) -> None:
    if isinstance(x, ScanFrame):
        raw = np.rint(x.pixels.astype(np.float64) * 65535.0).astype(">u2")
        header = f"P5\n{x.width} {x.height}\n65535\n".encode("ascii")
        Path(path).write_bytes(header + raw.tobytes())
    elif isinstance(x, MaskImage):
        raw = np.where(x.bits, 255, 0).astype(np.uint8)
        header = f"P5\n{x.width} {x.height}\n255\n".encode("ascii")
        Path(path).write_bytes(header + raw.tobytes())
    else:
        raise SpmError(f"cannot save object of type {type(x).__name__} as PGM")


def _pgm_tokens(blob: bytes):
    """Yield header tokens, honoring '#' comments; returns (tokens, data_offset)."""
    tokens = []
    i = 0
    n = len(blob)
    while len(tokens) < 4:
        # skip whitespace and comments
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i] == ord("#"):
            while i < n and blob[i] != ord("\n"):
                i += 1
            continue
        start = i
        while i < n and not blob[i:i + 1].isspace():
            i += 1
        if start == i:
            raise HeaderParseError("truncated PGM header")
        tokens.append(blob[start:i])
    if i >= n:
        raise HeaderParseError("PGM header not followed by data")
    i += 1  # single whitespace byte separating maxval from raster data
    return tokens, i


def load_pgm(path, channel: Channel = Channel.Height,
             scan_size: float = 1.0, z_scale: float = 1.0):
    """Load a P5 PGM. maxval 65535 yields a ScanFrame (calibration must be
    supplied by the caller since PGM carries none); maxval 255 yields a
    MaskImage."""
    blob = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(blob)
    if tokens[0] != b"P5":
        raise HeaderParseError(f"{path}: not a binary PGM (got {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise HeaderParseError(f"{path}: non-numeric header field") from None
    if width <= 0 or height <= 0:
        raise HeaderParseError(f"{path}: bad dimensions {width}x{height}")
    if maxval == 65535:
        need = offset + 2 * width * height
        if len(blob) < need:
            raise TruncatedPayloadError(f"{path}: truncated sample data")
        raw = np.frombuffer(blob, dtype=">u2", count=width * height,
                            offset=offset).reshape(height, width)
        px = (raw.astype(np.float64) / 65535.0).astype(np.float32)
        return ScanFrame(width, height, channel, scan_size, z_scale, px)
    if maxval == 255:
        need = offset + width * height
        if len(blob) < need:
            raise TruncatedPayloadError(f"{path}: truncated sample data")
        raw = np.frombuffer(blob, dtype=np.uint8, count=width * height,
                            offset=offset).reshape(height, width)
        return MaskImage(width, height, raw >= 128)
    raise UnsupportedMaxvalError(f"{path}: maxval {maxval} not supported")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_frame(raw, channel: Channel, scan_size: float = 1.0):
    """Map raw physical values onto [0,1].

    Returns (frame, offset, scale) with pixels = (raw - min)/(max - min),
    offset = min and scale = max - min, so raw ~= pixels*scale + offset.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2:
        raise SpmError("normalize_frame expects a 2-D array")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("raw values contain non-finite entries")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        raise ConstantInputError("all raw values are equal")
    scale = hi - lo
    px = np.clip((arr - lo) / scale, 0.0, 1.0).astype(np.float32)
    h, w = arr.shape
    frame = ScanFrame(w, h, channel, scan_size, scale, px)
    return frame, lo, scale


def denormalize_frame(frame: ScanFrame, offset: float) -> np.ndarray:
    """Inverse of normalize_frame; returns float64 physical values."""
    return frame.pixels.astype(np.float64) * frame.z_scale + offset


# ---------------------------------------------------------------------------
# Manifest (JSON Lines)
# ---------------------------------------------------------------------------

def read_manifest(path, validate: bool = False) -> list[ManifestEntry]:
    path = Path(path)
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise HeaderParseError(f"{path}:{lineno}: bad JSON: {exc}") from None
            entry = ManifestEntry.from_dict(obj)
            if entry.id in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    if validate:
        base = path.parent
        for entry in entries:
            paths = [entry.clean_path, entry.artefact_path, entry.mask_path]
            if entry.ignore_path:
                paths.append(entry.ignore_path)
            for rel in paths:
                if not (base / rel).exists():
                    raise DanglingPathError(
                        f"manifest entry {entry.id!r}: missing file {rel}"
                    )
    return entries


def append_manifest(path, entry: ManifestEntry) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(entry.to_json() + "\n")


def write_manifest(path, entries) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(entry.to_json() + "\n")


# ---------------------------------------------------------------------------
# Minimal grayscale PNG encoder (8-bit), used for review previews.
# ---------------------------------------------------------------------------

def encode_gray_png(img: np.ndarray) -> bytes:
    """Encode a uint8 2-D array as an 8-bit grayscale PNG."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise SpmError("encode_gray_png expects a uint8 2-D array")
    h, w = arr.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    scanlines = b"".join(b"\x00" + arr[row].tobytes() for row in range(h))
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(scanlines, 6))
            + chunk(b"IEND", b""))


def frame_preview_png(frame: ScanFrame) -> bytes:
    """Render a frame to an 8-bit PNG, stretching its own value range."""
    px = frame.pixels.astype(np.float64)
    lo, hi = float(px.min()), float(px.max())
    if hi > lo:
        px = (px - lo) / (hi - lo)
    else:
        px = np.zeros_like(px)
    return encode_gray_png(np.rint(px * 255.0).astype(np.uint8))
