"""File formats for images, endmembers, abundances, and scaling factors.

Two interchangeable formats are supported:

raw-f64
    A 16-byte header (4-byte magic ``HSI0``/``EMM0``/``ABN0``, then two
    32-bit little-endian unsigned dimensions giving the payload rows and
    columns, then one 32-bit auxiliary field) followed by rows*columns
    little-endian float64 values in column-major (pixel-major) order. The
    auxiliary field stores the grid width for images (0 = no grid), the
    normalized flag for abundances, and is zero for endmembers. Round
    trips are bit-exact.

csv
    A header line ``rows,cols[,width,height]`` followed by ``rows`` lines
    of ``cols`` comma-separated values in full-precision scientific
    notation (``%.16e``, 17 significant digits), which round-trips
    float64 exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HsiImage, ScalingState

__all__ = [
    "FormatError",
    "load_image",
    "save_image",
    "load_endmembers",
    "save_endmembers",
    "load_abundances",
    "save_abundances",
    "load_scaling_state",
    "save_scaling_state",
]

FORMATS = ("raw-f64", "csv")

_MAGIC_IMAGE = b"HSI0"
_MAGIC_ENDMEMBERS = b"EMM0"
_MAGIC_ABUNDANCES = b"ABN0"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    """Raised when a file does not conform to a supported format."""


def _check_format(fmt: str) -> str:
    if fmt not in FORMATS:
        raise FormatError(f"unsupported format {fmt!r}; expected one of {FORMATS}")
    return fmt


def _write_raw(path: Path, magic: bytes, matrix: np.ndarray, aux: int) -> None:
    rows, cols = matrix.shape
    payload = np.asfortranarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, rows, cols, aux))
        fh.write(payload.tobytes(order="F"))


def _read_raw(path: Path, magic: bytes) -> tuple[np.ndarray, int]:
    blob = Path(path).read_bytes()
    if len(blob) == 0:
        raise FormatError(f"{path}: empty file")
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got_magic, rows, cols, aux = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise FormatError(
            f"{path}: bad magic {got_magic!r}, expected {magic!r}"
        )
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size {len(blob) - _HEADER.size} does not match "
            f"{rows}x{cols} float64 matrix"
        )
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    matrix = flat.reshape((rows, cols), order="F")
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return matrix, aux


def _write_csv(path: Path, matrix: np.ndarray, extras: tuple[int, ...] = ()) -> None:
    rows, cols = matrix.shape
    header = ",".join(str(v) for v in (rows, cols) + extras)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for r in range(rows):
            # 17 significant digits in scientific form round-trips float64.
            fh.write(",".join("%.16e" % v for v in matrix[r]) + "\n")


def _read_csv(path: Path) -> tuple[np.ndarray, tuple[int, ...]]:
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text file") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    try:
        head = tuple(int(tok) for tok in lines[0].split(","))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header line: {lines[0]!r}") from exc
    if len(head) < 2:
        raise FormatError(f"{path}: header must list at least two dimensions")
    rows, cols = head[0], head[1]
    if len(lines) - 1 != rows:
        raise FormatError(
            f"{path}: expected {rows} data rows, found {len(lines) - 1}"
        )
    matrix = np.empty((rows, cols))
    for r, line in enumerate(lines[1:], start=1):
        tokens = line.split(",")
        if len(tokens) != cols:
            raise FormatError(
                f"{path}: row {r} has {len(tokens)} values, expected {cols}"
            )
        try:
            matrix[r - 1] = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise FormatError(f"{path}: row {r} contains a non-numeric value") from exc
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: data contains non-finite values")
    return matrix, head[2:]


def _sniff(path: Path, magic: bytes) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == magic or any(b > 127 for b in head):
        return "raw-f64"
    return "csv"


def save_image(image: HsiImage, path: str | Path, fmt: str = "raw-f64") -> None:
    """Write an image; ``fmt`` is ``"raw-f64"`` or ``"csv"``."""
    _check_format(fmt)
    path = Path(path)
    if fmt == "raw-f64":
        _write_raw(path, _MAGIC_IMAGE, image.data, image.width)
    else:
        _write_csv(path, image.data, (image.width, image.height))


def load_image(path: str | Path, fmt: str | None = None) -> HsiImage:
    """Read an image; the format is sniffed from the file when omitted."""
    path = Path(path)
    fmt = _check_format(fmt) if fmt else _sniff(path, _MAGIC_IMAGE)
    if fmt == "raw-f64":
        matrix, width = _read_raw(path, _MAGIC_IMAGE)
        n = matrix.shape[1]
        if width == 0:
            width, height = n, 1
        elif width > 0 and n % width == 0:
            height = n // width
        else:
            raise FormatError(f"{path}: stored width {width} does not divide {n}")
        return HsiImage(matrix, width=width, height=height)
    matrix, extras = _read_csv(path)
    if len(extras) >= 2:
        return HsiImage(matrix, width=extras[0], height=extras[1])
    return HsiImage(matrix)


def save_endmembers(em: EndmemberMatrix, path: str | Path, fmt: str = "raw-f64") -> None:
    _check_format(fmt)
    path = Path(path)
    if fmt == "raw-f64":
        _write_raw(path, _MAGIC_ENDMEMBERS, em.data, 0)
    else:
        _write_csv(path, em.data)


def load_endmembers(path: str | Path, fmt: str | None = None) -> EndmemberMatrix:
    path = Path(path)
    fmt = _check_format(fmt) if fmt else _sniff(path, _MAGIC_ENDMEMBERS)
    if fmt == "raw-f64":
        matrix, _ = _read_raw(path, _MAGIC_ENDMEMBERS)
    else:
        matrix, _ = _read_csv(path)
    return EndmemberMatrix(matrix)


def save_abundances(ab: AbundanceMatrix, path: str | Path, fmt: str = "raw-f64") -> None:
    _check_format(fmt)
    path = Path(path)
    flag = int(ab.normalized)
    if fmt == "raw-f64":
        _write_raw(path, _MAGIC_ABUNDANCES, ab.data, flag)
    else:
        _write_csv(path, ab.data, (flag,))


def load_abundances(path: str | Path, fmt: str | None = None) -> AbundanceMatrix:
    path = Path(path)
    fmt = _check_format(fmt) if fmt else _sniff(path, _MAGIC_ABUNDANCES)
    if fmt == "raw-f64":
        matrix, flag = _read_raw(path, _MAGIC_ABUNDANCES)
        return AbundanceMatrix(matrix, normalized=bool(flag))
    matrix, extras = _read_csv(path)
    normalized = bool(extras[0]) if extras else False
    return AbundanceMatrix(matrix, normalized=normalized)


def save_scaling_state(state: ScalingState, path: str | Path) -> None:
    """Write scaling factors as a small key-value text file."""
    lines = [
        "bounds = %.17g,%.17g" % (state.lower, state.upper),
        "s_e = " + ",".join("%.17g" % v for v in state.s_e),
        "s_x = " + ",".join("%.17g" % v for v in state.s_x),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_scaling_state(path: str | Path) -> ScalingState:
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed line {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    try:
        lower, upper = (float(v) for v in entries["bounds"].split(","))
        s_e = np.array([float(v) for v in entries["s_e"].split(",")])
        s_x = np.array([float(v) for v in entries["s_x"].split(",")])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or malformed scaling entries") from exc
    return ScalingState(s_e=s_e, s_x=s_x, lower=lower, upper=upper)
