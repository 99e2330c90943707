"""Minimal DICOM reader for uncompressed, explicit-VR little-endian files.

Only the handful of tags needed for 8-bit conversion are decoded. Any other
transfer syntax is refused loudly instead of being mis-decoded.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import CorruptFileError, DomainError, UnsupportedFormatError
from ..geometry import ImageDims

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"

_KNOWN_SYNTAXES = {
    "1.2.840.10008.1.2": "Implicit VR Little Endian",
    "1.2.840.10008.1.2.1": "Explicit VR Little Endian",
    "1.2.840.10008.1.2.1.99": "Deflated Explicit VR Little Endian",
    "1.2.840.10008.1.2.2": "Explicit VR Big Endian",
    "1.2.840.10008.1.2.4.50": "JPEG Baseline",
    "1.2.840.10008.1.2.4.51": "JPEG Extended",
    "1.2.840.10008.1.2.4.57": "JPEG Lossless",
    "1.2.840.10008.1.2.4.70": "JPEG Lossless SV1",
    "1.2.840.10008.1.2.4.80": "JPEG-LS Lossless",
    "1.2.840.10008.1.2.4.81": "JPEG-LS Near-lossless",
    "1.2.840.10008.1.2.4.90": "JPEG 2000 Lossless",
    "1.2.840.10008.1.2.4.91": "JPEG 2000",
    "1.2.840.10008.1.2.5": "RLE Lossless",
}

_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}
UNDEFINED_LENGTH = 0xFFFFFFFF

TRANSFER_SYNTAX = (0x0002, 0x0010)
SAMPLES_PER_PIXEL = (0x0028, 0x0002)
PHOTOMETRIC = (0x0028, 0x0004)
ROWS = (0x0028, 0x0010)
COLUMNS = (0x0028, 0x0011)
BITS_ALLOCATED = (0x0028, 0x0100)
BITS_STORED = (0x0028, 0x0101)
PIXEL_REPRESENTATION = (0x0028, 0x0103)
WINDOW_CENTER = (0x0028, 0x1050)
WINDOW_WIDTH = (0x0028, 0x1051)
PIXEL_DATA = (0x7FE0, 0x0010)

_WANTED = {
    TRANSFER_SYNTAX, SAMPLES_PER_PIXEL, PHOTOMETRIC, ROWS, COLUMNS, BITS_ALLOCATED,
    BITS_STORED, PIXEL_REPRESENTATION, WINDOW_CENTER, WINDOW_WIDTH, PIXEL_DATA,
}

PHOTOMETRICS = ("MONOCHROME1", "MONOCHROME2")


@dataclass(frozen=True, eq=False)
class RawImage:
    pixels: np.ndarray
    photometric: str = "MONOCHROME2"
    window_center: Optional[float] = None
    window_width: Optional[float] = None
    bits_stored: int = 16

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise DomainError(f"expected a 2-D pixel array, got shape {self.pixels.shape}")
        if self.pixels.dtype.kind != "u":
            raise DomainError(f"expected unsigned pixels, got {self.pixels.dtype}")
        if not 8 <= self.bits_stored <= 16:
            raise DomainError(f"bit depth {self.bits_stored} outside [8, 16]")
        if self.photometric not in PHOTOMETRICS:
            raise UnsupportedFormatError(f"photometric interpretation {self.photometric!r}")

    @property
    def dims(self) -> ImageDims:
        rows, cols = self.pixels.shape
        return ImageDims(width=cols, height=rows)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError(
                f"unexpected end of file at byte {self.pos} (needed {n} more bytes)"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def header(self) -> Tuple[Tuple[int, int], bytes, int]:
        group, elem = struct.unpack("<HH", self.take(4))
        if group == 0xFFFE:
            (length,) = struct.unpack("<I", self.take(4))
            return (group, elem), b"", length
        vr = self.take(2)
        if vr in _LONG_VRS:
            self.take(2)
            (length,) = struct.unpack("<I", self.take(4))
        else:
            (length,) = struct.unpack("<H", self.take(2))
        return (group, elem), vr, length

    def skip_sequence(self) -> None:
        """Skip an undefined-length sequence up to its delimiter."""
        while True:
            tag, _, length = self.header()
            if tag == (0xFFFE, 0xE0DD):
                return
            if tag != (0xFFFE, 0xE000):
                raise CorruptFileError(f"unexpected tag {tag[0]:04X},{tag[1]:04X} inside sequence")
            if length != UNDEFINED_LENGTH:
                self.take(length)
                continue
            while True:
                inner, vr, ilen = self.header()
                if inner == (0xFFFE, 0xE00D):
                    break
                self.skip_value(vr, ilen)

    def skip_value(self, vr: bytes, length: int) -> None:
        if length != UNDEFINED_LENGTH:
            self.take(length)
        elif vr == b"SQ":
            self.skip_sequence()
        else:
            raise UnsupportedFormatError(f"undefined-length {vr.decode(errors='replace')} element")


def _text(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip(" \x00")


def _first_number(raw: bytes) -> float:
    return float(_text(raw).split("\\")[0])


def _check_syntax(found: Dict[Tuple[int, int], bytes]) -> None:
    if TRANSFER_SYNTAX not in found:
        raise UnsupportedFormatError("file meta information lacks a transfer syntax UID")
    syntax = _text(found[TRANSFER_SYNTAX])
    if syntax != EXPLICIT_VR_LITTLE_ENDIAN:
        name = _KNOWN_SYNTAXES.get(syntax, "unknown")
        raise UnsupportedFormatError(f"transfer syntax {syntax} ({name}) is not supported")


def _parse_elements(data: bytes) -> Dict[Tuple[int, int], bytes]:
    if len(data) < 132 or data[128:132] != b"DICM":
        raise CorruptFileError("missing 128-byte preamble and DICM prefix")
    reader = _Reader(data, 132)
    found: Dict[Tuple[int, int], bytes] = {}

    checked = False
    while not reader.at_end():
        if not checked and data[reader.pos:reader.pos + 2] != b"\x02\x00":
            _check_syntax(found)
            checked = True
        tag, vr, length = reader.header()
        if tag == PIXEL_DATA and length == UNDEFINED_LENGTH:
            raise UnsupportedFormatError("encapsulated (compressed) pixel data is not supported")
        if tag in _WANTED:
            if tag == PIXEL_DATA and reader.pos + length > len(data):
                raise CorruptFileError(
                    f"pixel data truncated: header says {length} bytes, "
                    f"{len(data) - reader.pos} present"
                )
            found[tag] = reader.take(length)
        else:
            reader.skip_value(vr, length)
        if tag == PIXEL_DATA:
            break

    if not checked:
        _check_syntax(found)
    return found


def read_dicom_tags(data: bytes) -> RawImage:
    """Decode the pixel matrix and display tags of a DICOM file given as bytes."""
    found = _parse_elements(data)
    for tag, name in ((ROWS, "Rows"), (COLUMNS, "Columns"), (BITS_ALLOCATED, "BitsAllocated"),
                      (PIXEL_DATA, "PixelData")):
        if tag not in found:
            raise CorruptFileError(f"required element {name} missing")

    def us(tag, default=None):
        if tag not in found:
            return default
        return struct.unpack("<H", found[tag][:2])[0]

    rows, cols = us(ROWS), us(COLUMNS)
    bits_allocated = us(BITS_ALLOCATED)
    bits_stored = us(BITS_STORED, bits_allocated)
    if us(SAMPLES_PER_PIXEL, 1) != 1:
        raise UnsupportedFormatError("only single-sample (grayscale) images are supported")
    if us(PIXEL_REPRESENTATION, 0) != 0:
        raise UnsupportedFormatError("signed pixel representation is not supported")
    if bits_allocated not in (8, 16):
        raise UnsupportedFormatError(f"BitsAllocated={bits_allocated} is not supported")

    dtype = np.dtype("<u2") if bits_allocated == 16 else np.dtype("u1")
    needed = rows * cols * dtype.itemsize
    raw = found[PIXEL_DATA]
    if len(raw) < needed:
        raise CorruptFileError(f"pixel data holds {len(raw)} bytes, {rows}x{cols} image needs {needed}")
    pixels = np.frombuffer(raw[:needed], dtype=dtype).reshape(rows, cols).astype(dtype.newbyteorder("="))

    photometric = _text(found[PHOTOMETRIC]) if PHOTOMETRIC in found else "MONOCHROME2"
    center = _first_number(found[WINDOW_CENTER]) if found.get(WINDOW_CENTER) else None
    width = _first_number(found[WINDOW_WIDTH]) if found.get(WINDOW_WIDTH) else None
    return RawImage(pixels, photometric, center, width, bits_stored)


def read_dicom_file(path: str) -> RawImage:
    with open(path, "rb") as fh:
        return read_dicom_tags(fh.read())


def read_sidecar(path: str) -> Tuple[str, RawImage]:
    """Load a pre-decoded image described by a JSON sidecar.

    The sidecar names a raw little-endian 16-bit file (relative paths resolve
    against the sidecar's directory) plus its geometry and display tags.
    """
    with open(path) as fh:
        meta = json.load(fh)
    try:
        study_id = str(meta["study_id"])
        width, height = int(meta["width"]), int(meta["height"])
        pixels_path = meta["pixels_path"]
    except KeyError as exc:
        raise CorruptFileError(f"{path}: sidecar lacks key {exc.args[0]!r}") from None
    if not os.path.isabs(pixels_path):
        pixels_path = os.path.join(os.path.dirname(os.path.abspath(path)), pixels_path)
    raw = np.fromfile(pixels_path, dtype="<u2")
    if raw.size != width * height:
        raise CorruptFileError(
            f"{pixels_path}: {raw.size} pixels on disk, sidecar declares {width}x{height}"
        )
    image = RawImage(
        raw.reshape(height, width).astype(np.uint16),
        meta.get("photometric", "MONOCHROME2"),
        meta.get("window_center"),
        meta.get("window_width"),
        int(meta.get("bits_stored", 16)),
    )
    return study_id, image
