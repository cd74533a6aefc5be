"""File formats and dataset manifests.

Formats
-------
* Cube container (``.bhsc``): little-endian binary — magic ``BHSC``,
  version u16, height u32, width u32, bands u16, then ``bands`` float32
  wavelengths, then ``bands * height * width`` float32 samples in
  band-sequential (band-major, row-major within band) order.
* Camera sensitivity (``.csv``): header ``wavelength,r,g,b`` and one row
  per band, full-precision decimal floats, wavelengths ascending with a
  uniform step.
* 8-bit RGB: PNG (lossless) and JPEG (quality + chroma subsampling are
  caller-controlled) via Pillow.
* Float RGB: ``.npy`` (lossless float64 container).
* Scene manifest (``.jsonl``): one JSON object per line with keys ``id``,
  ``cube``, ``rgb_clean``, ``rgb_real``, ``tags``; paths are relative to
  the manifest's directory. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from hsibench.core import CameraResponse, HsiCube, Rgb8Image, RgbImage, WavelengthGrid

CUBE_MAGIC = b"BHSC"
CUBE_VERSION = 1
_CUBE_HEADER = struct.Struct("<4sHIIH")

#: Pillow subsampling codes for JPEG chroma subsampling.
JPEG_SUBSAMPLING = {"4:4:4": 0, "4:2:2": 1, "4:2:0": 2}


class FormatError(ValueError):
    """A file does not conform to its container format; the message names
    the offending field."""


class ManifestError(ValueError):
    """One or more invalid manifest records; ``errors`` lists all of them."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.errors))


# --------------------------------------------------------------------------
# cube container


def cube_to_bytes(cube: HsiCube) -> bytes:
    """Serialize a cube. Samples are stored as float32; values that are
    float32-representable round-trip bit-exactly."""
    if cube.bands > 0xFFFF:
        raise FormatError(f"bands {cube.bands} overflows the u16 header field")
    if cube.height > 0xFFFFFFFF:
        raise FormatError(f"height {cube.height} overflows the u32 header field")
    if cube.width > 0xFFFFFFFF:
        raise FormatError(f"width {cube.width} overflows the u32 header field")
    head = _CUBE_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, cube.height, cube.width, cube.bands)
    waves = cube.grid.wavelengths().astype("<f4").tobytes()
    samples = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    return head + waves + samples


def cube_from_bytes(blob: bytes) -> HsiCube:
    if len(blob) < _CUBE_HEADER.size:
        raise FormatError("truncated header")
    magic, version, height, width, bands = _CUBE_HEADER.unpack_from(blob)
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    if version != CUBE_VERSION:
        raise FormatError(f"unsupported version {version}, expected {CUBE_VERSION}")
    if bands < 1:
        raise FormatError("bands must be >= 1")
    if height < 1 or width < 1:
        raise FormatError("height and width must be >= 1")
    need = _CUBE_HEADER.size + 4 * bands + 4 * bands * height * width
    if len(blob) < need:
        raise FormatError(
            f"truncated samples: file has {len(blob)} bytes, header implies {need}"
        )
    off = _CUBE_HEADER.size
    waves = np.frombuffer(blob, dtype="<f4", count=bands, offset=off).astype(np.float64)
    off += 4 * bands
    if bands >= 2:
        steps = np.diff(waves)
        if np.any(steps <= 0):
            raise FormatError("wavelengths must be strictly ascending")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-6):
            raise FormatError("wavelengths must have a uniform step")
        grid = WavelengthGrid(float(waves[0]), float(steps[0]), int(bands))
    else:
        # a single band carries no step information; fall back to the default
        grid = WavelengthGrid(float(waves[0]), 10.0, 1)
    samples = np.frombuffer(blob, dtype="<f4", count=bands * height * width, offset=off)
    data = samples.astype(np.float64).reshape(bands, height, width)
    return HsiCube(data, grid)


def write_cube(cube: HsiCube, path: str | Path) -> None:
    Path(path).write_bytes(cube_to_bytes(cube))


def read_cube(path: str | Path) -> HsiCube:
    try:
        return cube_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# camera sensitivity CSV

_CSS_HEADER = ["wavelength", "r", "g", "b"]


def css_to_text(css: CameraResponse) -> str:
    lines = [",".join(_CSS_HEADER)]
    waves = css.grid.wavelengths()
    for i in range(css.grid.bands):
        vals = [waves[i], css.matrix[0, i], css.matrix[1, i], css.matrix[2, i]]
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def css_from_text(text: str) -> CameraResponse:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError("empty sensitivity file")
    header = [c.strip().lower() for c in lines[0].split(",")]
    if header != _CSS_HEADER:
        raise FormatError(f"header must be {','.join(_CSS_HEADER)!r}, got {lines[0]!r}")
    rows = []
    for n, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != 4:
            raise FormatError(f"line {n}: expected 4 columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise FormatError(f"line {n}: non-numeric value") from None
    if not rows:
        raise FormatError("no sensitivity rows")
    table = np.array(rows, dtype=np.float64)
    waves = table[:, 0]
    if len(waves) >= 2:
        steps = np.diff(waves)
        if np.any(steps <= 0):
            raise FormatError("wavelength column must be strictly ascending")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9):
            raise FormatError("wavelength column must have a uniform step")
        grid = WavelengthGrid(float(waves[0]), float(steps[0]), len(waves))
    else:
        grid = WavelengthGrid(float(waves[0]), 10.0, 1)
    return CameraResponse(table[:, 1:4].T, grid)


def write_css(css: CameraResponse, path: str | Path) -> None:
    Path(path).write_text(css_to_text(css), encoding="utf-8")


def read_css(path: str | Path) -> CameraResponse:
    try:
        return css_from_text(Path(path).read_text(encoding="utf-8"))
    except (FormatError, ValueError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# 8-bit image codecs


def write_png(img: Rgb8Image, path: str | Path) -> None:
    Image.fromarray(np.asarray(img.data), mode="RGB").save(str(path), format="PNG")


def encode_jpeg(img: Rgb8Image, quality: int = 95, subsampling: str = "4:2:0") -> bytes:
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"jpeg quality must be in [1, 100], got {quality}")
    if subsampling not in JPEG_SUBSAMPLING:
        raise ValueError(f"subsampling must be one of {sorted(JPEG_SUBSAMPLING)}")
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img.data), mode="RGB").save(
        buf, format="JPEG", quality=int(quality), subsampling=JPEG_SUBSAMPLING[subsampling]
    )
    return buf.getvalue()


def decode_jpeg(blob: bytes, white_level: float = 1.0) -> Rgb8Image:
    with Image.open(io.BytesIO(blob)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return Rgb8Image(arr, white_level)


def write_jpeg(
    img: Rgb8Image, path: str | Path, quality: int = 95, subsampling: str = "4:2:0"
) -> None:
    Path(path).write_bytes(encode_jpeg(img, quality, subsampling))


def read_rgb8(path: str | Path, white_level: float = 1.0) -> Rgb8Image:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return Rgb8Image(arr, white_level)


# --------------------------------------------------------------------------
# float RGB container


def write_rgb_float(img: RgbImage, path: str | Path) -> None:
    np.save(str(path), img.data)


def read_rgb_float(path: str | Path) -> RgbImage:
    return RgbImage(np.load(str(path)))


# --------------------------------------------------------------------------
# scene manifest


@dataclass(frozen=True)
class SceneRecord:
    """One benchmark scene: an id, optional artifact paths (relative to the
    manifest directory), and free-form tags."""

    id: str
    cube: str | None = None
    rgb_clean: str | None = None
    rgb_real: str | None = None
    tags: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(sorted(set(self.tags))))

    def to_json(self) -> dict:
        out: dict = {"id": self.id}
        if self.cube is not None:
            out["cube"] = self.cube
        if self.rgb_clean is not None:
            out["rgb_clean"] = self.rgb_clean
        if self.rgb_real is not None:
            out["rgb_real"] = self.rgb_real
        out["tags"] = list(self.tags)
        return out


@dataclass(frozen=True)
class Manifest:
    """An ordered scene collection rooted at the manifest's directory."""

    root: Path
    scenes: tuple[SceneRecord, ...]

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def ids(self) -> list[str]:
        return [s.id for s in self.scenes]

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def filter_by_tag(self, tag: str) -> "Manifest":
        return Manifest(self.root, tuple(s for s in self.scenes if tag in s.tags))


def load_manifest(path: str | Path, check_paths: bool = True) -> Manifest:
    """Parse and validate a manifest, collecting *all* record errors before
    raising so a broken manifest is reported in one pass."""
    path = Path(path)
    root = path.parent
    errors: list[str] = []
    scenes: list[SceneRecord] = []
    seen: set[str] = set()
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(f"line {n}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict):
            errors.append(f"line {n}: record must be a JSON object")
            continue
        sid = obj.get("id")
        if not isinstance(sid, str) or not sid:
            errors.append(f"line {n}: missing or empty 'id'")
            continue
        if sid in seen:
            errors.append(f"line {n}: duplicate id {sid!r}")
            continue
        seen.add(sid)
        paths = {k: obj.get(k) for k in ("cube", "rgb_clean", "rgb_real")}
        for key, val in paths.items():
            if val is not None and not isinstance(val, str):
                errors.append(f"line {n} ({sid}): {key!r} must be a string path")
                paths[key] = None
        if all(v is None for v in paths.values()):
            errors.append(f"line {n} ({sid}): needs a cube path or an rgb path")
            continue
        tags = obj.get("tags", [])
        if not (isinstance(tags, list) and all(isinstance(t, str) for t in tags)):
            errors.append(f"line {n} ({sid}): 'tags' must be a list of strings")
            tags = []
        if check_paths:
            for key, val in paths.items():
                if val is not None and not (root / val).exists():
                    errors.append(f"line {n} ({sid}): {key} path not found: {val}")
        scenes.append(SceneRecord(sid, paths["cube"], paths["rgb_clean"], paths["rgb_real"], tuple(tags)))
    if errors:
        raise ManifestError(errors)
    return Manifest(root, tuple(scenes))


def save_manifest(manifest: Manifest, path: str | Path, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.extend(f"# {ln}" for ln in comment.splitlines())
    lines.extend(json.dumps(s.to_json(), sort_keys=False) for s in manifest.scenes)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
