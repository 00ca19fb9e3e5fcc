"""Minimal PNG codec: 8-bit RGB/RGBA in, 8-bit RGB out.

Only what the cell-image corpus needs. Decoding checks chunk CRCs and
reports the offending chunk and byte offset on failure. Encoding always
writes unfiltered (type 0) scanlines with a fixed zlib level, so the same
pixel array produces the same bytes on every platform.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DecodeError, UnsupportedFormatError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


def decode_rgb8(data: bytes) -> np.ndarray:
    """Decode a PNG byte string to a (height, width, 3) uint8 array.

    Accepts 8-bit truecolor (RGB) and truecolor-with-alpha (RGBA, alpha
    discarded). Raises DecodeError for malformed input, naming the chunk and
    offset, and UnsupportedFormatError for valid PNGs outside that subset.
    """
    if len(data) < len(_SIGNATURE) or data[:8] != _SIGNATURE:
        raise DecodeError("not a PNG: bad 8-byte signature at offset 0")

    pos = 8
    header = None
    idat = bytearray()
    seen_iend = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError(f"truncated chunk header at offset {pos}")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body_end = pos + 8 + length
        if body_end + 4 > len(data):
            raise DecodeError(
                f"truncated {ctype!r} chunk at offset {pos} (need {length} data bytes)"
            )
        body = data[pos + 8 : body_end]
        (crc,) = struct.unpack(">I", data[body_end : body_end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"bad CRC in {ctype!r} chunk at offset {pos}")

        if header is None:
            if ctype != b"IHDR":
                raise DecodeError(f"first chunk at offset {pos} is {ctype!r}, expected b'IHDR'")
            header = _parse_ihdr(body, pos)
        elif ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            seen_iend = True
            break
        pos = body_end + 4

    if header is None:
        raise DecodeError("no IHDR chunk found")
    if not seen_iend:
        raise DecodeError(f"missing IEND chunk (stream ends at offset {len(data)})")
    if not idat:
        raise DecodeError("no IDAT chunks found")

    width, height, channels = header
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"IDAT zlib stream corrupt: {exc}") from exc

    stride = width * channels
    expected = height * (1 + stride)
    if len(raw) != expected:
        raise DecodeError(
            f"IDAT decodes to {len(raw)} bytes, expected {expected} "
            f"for {width}x{height}x{channels}"
        )

    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, 1 + stride)
    pixels = _unfilter(rows, width, channels)
    return np.ascontiguousarray(pixels[:, :, :3])


def _parse_ihdr(body: bytes, pos: int) -> tuple[int, int, int]:
    if len(body) != 13:
        raise DecodeError(f"IHDR chunk at offset {pos} has length {len(body)}, expected 13")
    width, height, depth, color, comp, filt, interlace = struct.unpack(">IIBBBBB", body)
    if width < 1 or height < 1:
        raise DecodeError(f"IHDR at offset {pos} declares empty image {width}x{height}")
    if comp != 0 or filt != 0:
        raise DecodeError(
            f"IHDR at offset {pos}: compression={comp}, filter={filt}, both must be 0"
        )
    if depth != 8:
        raise UnsupportedFormatError(f"bit depth {depth} not supported (8-bit only)")
    if color not in (2, 6):
        raise UnsupportedFormatError(f"color type {color} not supported (RGB=2 or RGBA=6 only)")
    if interlace != 0:
        raise UnsupportedFormatError("Adam7 interlacing not supported")
    return width, height, 4 if color == 6 else 3


def _unfilter(rows: np.ndarray, width: int, bpp: int) -> np.ndarray:
    """Undo per-scanline filters; returns (height, width, bpp) uint8.

    None/Sub/Up rows vectorize; Average/Paeth scan left-to-right, so those
    run as byte-level Python loops (still far cheaper than per-pixel numpy).
    """
    height = rows.shape[0]
    stride = width * bpp
    out = np.zeros((height, stride), dtype=np.uint8)
    zero_row = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        ftype = int(rows[y, 0])
        line = rows[y, 1:]
        prev = out[y - 1] if y > 0 else zero_row
        if ftype == 0:
            out[y] = line
        elif ftype == 1:
            out[y] = np.cumsum(line.reshape(width, bpp), axis=0, dtype=np.uint8).reshape(-1)
        elif ftype == 2:
            out[y] = line + prev
        elif ftype == 3:
            out[y] = np.frombuffer(_scan_average(line.tobytes(), prev.tobytes(), bpp), dtype=np.uint8)
        elif ftype == 4:
            out[y] = np.frombuffer(_scan_paeth(line.tobytes(), prev.tobytes(), bpp), dtype=np.uint8)
        else:
            raise DecodeError(f"scanline {y} uses unknown filter type {ftype}")
    return out.reshape(height, width, bpp)


def _scan_average(line: bytes, prev: bytes, bpp: int) -> bytearray:
    rec = bytearray(len(line))
    for i in range(len(line)):
        left = rec[i - bpp] if i >= bpp else 0
        rec[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
    return rec


def _scan_paeth(line: bytes, prev: bytes, bpp: int) -> bytearray:
    rec = bytearray(len(line))
    for i in range(len(line)):
        left = rec[i - bpp] if i >= bpp else 0
        up = prev[i]
        upleft = prev[i - bpp] if i >= bpp else 0
        p = left + up - upleft
        pa, pb, pc = abs(p - left), abs(p - up), abs(p - upleft)
        if pa <= pb and pa <= pc:
            pred = left
        elif pb <= pc:
            pred = up
        else:
            pred = upleft
        rec[i] = (line[i] + pred) & 0xFF
    return rec


def encode_rgb8(pixels: np.ndarray) -> bytes:
    """Encode a (height, width, 3) uint8 array as deterministic PNG bytes."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError(f"expected (h, w, 3) uint8 array, got {pixels.shape} {pixels.dtype}")
    height, width = pixels.shape[:2]
    filtered = np.zeros((height, 1 + width * 3), dtype=np.uint8)
    filtered[:, 1:] = pixels.reshape(height, width * 3)
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    out = bytearray(_SIGNATURE)
    out += _chunk(b"IHDR", ihdr)
    out += _chunk(b"IDAT", zlib.compress(filtered.tobytes(), _ZLIB_LEVEL))
    out += _chunk(b"IEND", b"")
    return bytes(out)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(ctype + body) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", crc)
