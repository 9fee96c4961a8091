"""Manifest-driven sample production: crop, x8 degradation, heatmaps, augmentation.

A manifest is a tab-separated text file, one entry per line:

    <image_path>\t<landmark_path>\t<split>

with split in {train, test}. Landmark files hold 68 lines of `x y` in
original-image pixels. Relative paths are resolved against the manifest's
directory. Sample production is pure: the same entry and augmentation op
always give the same arrays.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .heatmaps import DEFAULT_SIGMA, render_heatmaps
from .resize import DegenerateBoundingBoxError, bicubic_resize, crop_and_resize

log = logging.getLogger(__name__)

N_LANDMARKS = 68
HR_SIZE = 128
LR_SIZE = 16
AUG_OPS = ("none", "rot90", "rot180", "rot270", "hflip")


def _build_flip_permutation() -> np.ndarray:
    """Left/right index swap for the 68-point annotation scheme."""
    perm = list(range(N_LANDMARKS))

    def swap(a, b):
        perm[a], perm[b] = perm[b], perm[a]

    for i in range(8):          # jaw 0..16 mirrors around the chin (8)
        swap(i, 16 - i)
    for i in range(5):          # brows 17..21 <-> 26..22
        swap(17 + i, 26 - i)
    swap(31, 35)                # nostril corners (bridge 27..30 is fixed)
    swap(32, 34)
    for a, b in ((36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)):
        swap(a, b)              # eyes, reversed within each eye
    for a, b in ((48, 54), (49, 53), (50, 52), (55, 59), (56, 58)):
        swap(a, b)              # outer lip
    for a, b in ((60, 64), (61, 63), (65, 67)):
        swap(a, b)              # inner lip
    return np.array(perm, dtype=np.int64)


FLIP_PERMUTATION = _build_flip_permutation()


@dataclass
class ManifestEntry:
    image_path: Path
    landmark_path: Path
    split: str


@dataclass
class Sample:
    """One aligned training example.

    hr_image: (128, 128, 3) float32 in [0, 1]
    lr_image: (16, 16, 3) float32, bicubic x8 downsample of hr_image
    landmarks: (68, 2) float64, crop pixel coords (x, y)
    gt_heatmaps: (68, 32, 32) float32
    """

    id: str
    hr_image: np.ndarray
    lr_image: np.ndarray
    landmarks: np.ndarray
    gt_heatmaps: np.ndarray


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields, got {len(parts)}")
        img, lmk, split = parts
        if split not in ("train", "test"):
            raise ValueError(f"{path}:{ln}: split must be train or test, got {split!r}")
        entries.append(ManifestEntry(base / img, base / lmk, split))
    return entries


def read_landmarks(path: str | Path) -> np.ndarray:
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line:
            x, y = line.split()
            rows.append((float(x), float(y)))
    if len(rows) != N_LANDMARKS:
        raise ValueError(f"{path}: expected {N_LANDMARKS} landmarks, got {len(rows)}")
    return np.array(rows, dtype=np.float64)


def load_image(path: str | Path) -> np.ndarray:
    """PNG/JPEG -> float32 HxWx3 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return from_uint8(arr)


def save_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[0,1] float -> uint8, rounding half away from zero."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    return (np.asarray(image, dtype=np.float32) / np.float32(255.0)).astype(np.float32)


def build_sample(
    image: np.ndarray,
    landmarks: np.ndarray,
    sample_id: str,
    margin: float = 0.25,
    sigma: float = DEFAULT_SIGMA,
) -> Sample:
    """Crop around the landmarks, degrade x8, render ground-truth heatmaps."""
    hr, lm = crop_and_resize(image, landmarks, out_size=HR_SIZE, margin=margin)
    hr = np.clip(hr, 0.0, 1.0).astype(np.float32)
    lr = bicubic_resize(hr, LR_SIZE, LR_SIZE)
    hm = render_heatmaps(lm, size=HR_SIZE // 4, sigma=sigma, stride=4.0)
    return Sample(id=sample_id, hr_image=hr, lr_image=lr, landmarks=lm, gt_heatmaps=hm)


def _transform_points(pts: np.ndarray, op: str, size: int) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    s = size - 1
    if op == "none":
        out = pts.copy()
    elif op == "rot90":       # counter-clockwise, matches np.rot90(img)
        out = np.stack([y, s - x], axis=1)
    elif op == "rot180":
        out = np.stack([s - x, s - y], axis=1)
    elif op == "rot270":
        out = np.stack([s - y, x], axis=1)
    elif op == "hflip":
        out = np.stack([s - x, y], axis=1)
    else:
        raise ValueError(f"unknown augmentation op {op!r}")
    return out


def _transform_image(img: np.ndarray, op: str) -> np.ndarray:
    if op == "none":
        return img.copy()
    if op == "rot90":
        return np.ascontiguousarray(np.rot90(img, 1, axes=(0, 1)))
    if op == "rot180":
        return np.ascontiguousarray(np.rot90(img, 2, axes=(0, 1)))
    if op == "rot270":
        return np.ascontiguousarray(np.rot90(img, 3, axes=(0, 1)))
    if op == "hflip":
        return np.ascontiguousarray(img[:, ::-1])
    raise ValueError(f"unknown augmentation op {op!r}")


def augment(sample: Sample, op: str, sigma: float = DEFAULT_SIGMA) -> Sample:
    """Rotate (90/180/270) or horizontally flip a sample.

    The HR image and landmarks are transformed geometrically; a flip also
    remaps landmark indices through FLIP_PERMUTATION. The LR image and
    heatmaps are recomputed from the transformed HR/landmarks so the
    degradation and peak-alignment invariants hold exactly.
    """
    hr = _transform_image(sample.hr_image, op)
    lm = _transform_points(sample.landmarks, op, sample.hr_image.shape[0])
    if op == "hflip":
        lm = lm[FLIP_PERMUTATION]
    lr = bicubic_resize(hr, sample.lr_image.shape[0], sample.lr_image.shape[1])
    hm_size = sample.gt_heatmaps.shape[1]
    hm = render_heatmaps(lm, size=hm_size, sigma=sigma, stride=hr.shape[0] / hm_size)
    return Sample(id=sample.id, hr_image=hr, lr_image=lr, landmarks=lm, gt_heatmaps=hm)


def load_samples(
    manifest: str | Path,
    split: str,
    margin: float = 0.25,
    sigma: float = DEFAULT_SIGMA,
) -> list[Sample]:
    """Build all samples of one split; rejects (and logs) degenerate entries."""
    samples = []
    for entry in read_manifest(manifest):
        if entry.split != split:
            continue
        sid = entry.image_path.stem
        try:
            image = load_image(entry.image_path)
            lm = read_landmarks(entry.landmark_path)
            samples.append(build_sample(image, lm, sid, margin=margin, sigma=sigma))
        except DegenerateBoundingBoxError as err:
            log.warning("rejecting sample %s: %s", sid, err)
    return samples


# --- prepared-sample cache: raw little-endian float32 + JSON sidecars ---

_CACHE_ARRAYS = ("hr_image", "lr_image", "landmarks", "gt_heatmaps")


_CACHE_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_sample_cache(sample: Sample, out_dir: str | Path) -> Path:
    d = Path(out_dir) / sample.id
    d.mkdir(parents=True, exist_ok=True)
    for name in _CACHE_ARRAYS:
        src = getattr(sample, name)
        dtype = "float64" if src.dtype == np.float64 else "float32"
        arr = np.ascontiguousarray(src, dtype=_CACHE_DTYPES[dtype])
        (d / f"{name}.bin").write_bytes(arr.tobytes())
        sidecar = {"shape": list(arr.shape), "dtype": dtype, "id": sample.id}
        (d / f"{name}.json").write_text(json.dumps(sidecar))
    return d


def load_sample_cache(sample_dir: str | Path) -> Sample:
    d = Path(sample_dir)
    arrays = {}
    sid = d.name
    for name in _CACHE_ARRAYS:
        meta = json.loads((d / f"{name}.json").read_text())
        if meta["dtype"] not in _CACHE_DTYPES:
            raise ValueError(f"{d}/{name}: unsupported dtype {meta['dtype']}")
        arr = np.frombuffer(
            (d / f"{name}.bin").read_bytes(), dtype=_CACHE_DTYPES[meta["dtype"]]
        )
        arrays[name] = arr.reshape(meta["shape"]).copy()
        sid = meta["id"]
    return Sample(id=sid, **arrays)


def load_cached_samples(cache_dir: str | Path) -> list[Sample]:
    root = Path(cache_dir)
    dirs = sorted(p for p in root.iterdir() if (p / "hr_image.json").exists())
    return [load_sample_cache(p) for p in dirs]
