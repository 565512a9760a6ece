"""Bit-exact file I/O: binary netpbm images, CSV label maps, JSON reports.

Only 8-bit P6 (color) and P5 (gray) netpbm files are supported. Every
writer goes through a temp file and an atomic rename.
"""

import json
import os
import tempfile

import numpy as np

from .errors import InvalidInputError, ParseError
from .grid import FeatureMap, LabelMap


def _atomic_write(path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Header:
    """Tokenizer for the netpbm header: whitespace-separated fields with
    '#' comments, tracking byte offsets for error reports."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def token(self) -> bytes:
        raw, n = self.raw, len(self.raw)
        while self.pos < n:
            c = raw[self.pos]
            if c in b"#":
                while self.pos < n and raw[self.pos] not in b"\n":
                    self.pos += 1
            elif c in b" \t\r\n\x0b\x0c":
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and raw[self.pos] not in b" \t\r\n\x0b\x0c#":
            self.pos += 1
        if self.pos == start:
            raise ParseError("unexpected end of header", byte_offset=start)
        return raw[start : self.pos]

    def int_token(self, name: str) -> int:
        start = self.pos
        tok = self.token()
        try:
            value = int(tok)
        except ValueError:
            raise ParseError(f"{name} is not an integer: {tok!r}", byte_offset=start) from None
        if value <= 0:
            raise ParseError(f"{name} must be positive, got {value}", byte_offset=start)
        return value


def read_image(path) -> FeatureMap:
    """Read a P6/P5 file into a [0, 1] feature map (3 or 1 channels)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    hdr = _Header(raw)
    magic = hdr.token()
    if magic not in (b"P6", b"P5"):
        raise ParseError(f"unsupported magic {magic!r}, expected P6 or P5", byte_offset=0)
    width = hdr.int_token("width")
    height = hdr.int_token("height")
    maxval_at = hdr.pos
    maxval = hdr.int_token("maxval")
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", byte_offset=maxval_at)
    if hdr.pos >= len(raw) or raw[hdr.pos] not in b" \t\r\n\x0b\x0c":
        raise ParseError("missing whitespace after maxval", byte_offset=hdr.pos)
    start = hdr.pos + 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = raw[start:]
    if len(payload) < expected:
        raise ParseError(
            f"payload holds {len(payload)} bytes, header implies {expected}",
            byte_offset=start + len(payload),
        )
    data = np.frombuffer(payload[:expected], dtype=np.uint8).astype(np.float64) / 255.0
    return FeatureMap(data.reshape(height, width, channels))


def write_image(fmap: FeatureMap, path) -> None:
    """Write a 3-channel map as P6 or a 1-channel map as P5, quantizing with
    round-half-up to bytes."""
    if fmap.channels not in (1, 3):
        raise InvalidInputError(f"can only write 1- or 3-channel maps, got {fmap.channels}")
    bytes_ = np.clip(np.floor(fmap.data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    magic = b"P6" if fmap.channels == 3 else b"P5"
    header = magic + f"\n{fmap.width} {fmap.height}\n255\n".encode("ascii")
    _atomic_write(path, header + bytes_.tobytes())


def read_labels(path) -> LabelMap:
    """Read a CSV of H rows of W comma-separated non-negative integers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ParseError("label file is empty", line=1)
    rows = []
    width = None
    for num, ln in enumerate(lines, start=1):
        parts = ln.split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ParseError(f"row has {len(parts)} fields, expected {width}", line=num)
        try:
            row = [int(p) for p in parts]
        except ValueError:
            raise ParseError("non-integer label", line=num) from None
        if any(v < 0 for v in row):
            raise ParseError("negative label", line=num)
        rows.append(row)
    return LabelMap(np.asarray(rows, dtype=np.int64))


def write_labels(labels: LabelMap, path) -> None:
    text = "\n".join(",".join(str(int(v)) for v in row) for row in labels.labels) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def write_report(report: dict, path) -> None:
    """Write a JSON report with stable key order."""
    _atomic_write(path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8"))
