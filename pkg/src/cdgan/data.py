"""Paired dataset loading, 256x256 preprocessing and a synthetic toy dataset."""

from __future__ import annotations

import configparser
import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ImageTensor, PairedSample, ValueRange, denormalize, normalize

log = logging.getLogger(__name__)

IMAGE_SIZE = 256
IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp", ".ppm", ".pgm"}


class Pairing(enum.Enum):
    SIDE_BY_SIDE_IMAGE = "side_by_side"  # one file, A and B as left/right halves
    PARALLEL_DIRS = "parallel_dirs"  # root/<dir_a>/<id>.* matched with root/<dir_b>/<id>.*


# name -> (pairing, train count, test count)
KNOWN_DATASETS = {
    "cuhk": (Pairing.PARALLEL_DIRS, 100, 88),
    "facades": (Pairing.SIDE_BY_SIDE_IMAGE, 400, 206),
    "rgb-nir": (Pairing.PARALLEL_DIRS, 387, 90),
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    root: Path
    pairing: Pairing
    train_count: int
    test_count: int
    seed: int = 0
    shuffle: bool = False
    dir_a: str = "A"
    dir_b: str = "B"
    a_side: str = "left"
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.train_count < 0 or self.test_count < 0:
            raise DatasetError("split counts must be non-negative")
        if self.a_side not in ("left", "right"):
            raise DatasetError(f"a_side must be 'left' or 'right', got {self.a_side!r}")

    @property
    def total(self) -> int:
        return self.train_count + self.test_count

    @classmethod
    def for_dataset(cls, name: str, root, **overrides) -> DatasetManifest:
        """Manifest with the standard split for one of ``KNOWN_DATASETS``."""
        key = name.lower()
        if key not in KNOWN_DATASETS:
            raise DatasetError(f"unknown dataset {name!r}; known: {sorted(KNOWN_DATASETS)}")
        pairing, n_train, n_test = KNOWN_DATASETS[key]
        return replace(cls(key, root, pairing, n_train, n_test), **overrides)

    @classmethod
    def from_file(cls, path) -> DatasetManifest:
        """Read an INI-style manifest; all keys live under ``[dataset]``.

        ``root`` may be relative to the manifest's directory. Omitted counts
        and pairing fall back to the standard values for a known ``name``.
        """
        path = Path(path)
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise DatasetError(f"cannot read manifest {path}")
        if "dataset" not in parser:
            raise DatasetError(f"{path}: missing [dataset] section")
        sec = parser["dataset"]
        name = sec.get("name", path.stem).lower()
        pairing, n_train, n_test = KNOWN_DATASETS.get(name, (None, None, None))
        root = Path(sec.get("root", "."))
        if not root.is_absolute():
            root = path.parent / root
        try:
            if "pairing" in sec:
                pairing = Pairing(sec["pairing"])
            return cls(
                name=name,
                root=root,
                pairing=pairing if pairing is not None else Pairing.PARALLEL_DIRS,
                train_count=sec.getint("train_count", n_train),
                test_count=sec.getint("test_count", n_test),
                seed=sec.getint("seed", 0),
                shuffle=sec.getboolean("shuffle", False),
                dir_a=sec.get("dir_a", "A"),
                dir_b=sec.get("dir_b", "B"),
                a_side=sec.get("a_side", "left"),
                image_size=sec.getint("image_size", IMAGE_SIZE),
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: {exc}") from exc


def _to_array(img) -> np.ndarray:
    """Decode ``img`` (path, PIL image or HxW[xC] array) to an HxWx3 uint8 array."""
    if isinstance(img, (str, Path)):
        try:
            with Image.open(img) as im:
                im.load()
                img = im.copy()
        except (UnidentifiedImageError, OSError) as exc:
            raise DatasetError(f"cannot decode image {img}: {exc}") from exc
    if isinstance(img, Image.Image):
        if img.mode in ("I", "I;16", "I;16B", "F"):
            arr = np.asarray(img, dtype=np.float64)
            hi = 65535.0 if img.mode.startswith("I;16") or arr.max() > 255 else 255.0
            img = np.clip(arr / hi * 255.0, 0, 255).round().astype(np.uint8)
        else:
            img = img.convert("RGB")
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DatasetError(f"cannot interpret array of shape {arr.shape} as an image")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).round().astype(np.uint8)
    return arr


def preprocess(img, size: int = IMAGE_SIZE) -> ImageTensor:
    """Decode, replicate grayscale to 3 channels, bicubic-resize to size x size, map to [-1, 1]."""
    arr = _to_array(img)
    if arr.shape[:2] != (size, size):
        arr = np.asarray(Image.fromarray(arr).resize((size, size), Image.BICUBIC))
    byte = ImageTensor(arr.transpose(2, 0, 1).astype(np.float32), ValueRange.BYTE)
    return ImageTensor(normalize(byte).data.astype(np.float32), ValueRange.SIGNED_UNIT)


def _list_images(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")
    found = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
            if p.stem in found:
                raise DatasetError(f"duplicate image id {p.stem!r} in {directory}")
            found[p.stem] = p
    return found


def _split_halves(path: Path, a_side: str):
    arr = _to_array(path)
    half = arr.shape[1] // 2
    left, right = arr[:, :half], arr[:, half:2 * half]
    return (left, right) if a_side == "left" else (right, left)


def _pair_sources(manifest: DatasetManifest) -> dict[str, tuple]:
    root = manifest.root
    if not root.exists():
        raise DatasetError(f"dataset root not found: {root}")
    if manifest.pairing is Pairing.SIDE_BY_SIDE_IMAGE:
        return {k: (p,) for k, p in _list_images(root).items()}
    a = _list_images(root / manifest.dir_a)
    b = _list_images(root / manifest.dir_b)
    for pid in sorted(set(a) ^ set(b)):
        have, missing = (manifest.dir_a, manifest.dir_b) if pid in a else (manifest.dir_b, manifest.dir_a)
        raise DatasetError(f"pair {pid!r}: found in {have}/ but missing its counterpart in {missing}/")
    return {k: (a[k], b[k]) for k in a}


def _load_pair(manifest: DatasetManifest, pid: str, sources: tuple) -> PairedSample:
    if manifest.pairing is Pairing.SIDE_BY_SIDE_IMAGE:
        raw_a, raw_b = _split_halves(sources[0], manifest.a_side)
    else:
        raw_a, raw_b = sources
    size = manifest.image_size
    return PairedSample(preprocess(raw_a, size), preprocess(raw_b, size), pid)


def split_ids(manifest: DatasetManifest, ids) -> tuple[list[str], list[str]]:
    """First ``train_count`` ids in lexicographic order go to train, unless shuffling is requested."""
    ids = sorted(ids)
    if len(ids) != manifest.total:
        raise DatasetError(
            f"{manifest.name}: found {len(ids)} pairs, manifest expects "
            f"{manifest.train_count} + {manifest.test_count} = {manifest.total}"
        )
    if manifest.shuffle:
        order = np.random.default_rng(manifest.seed).permutation(len(ids))
        ids = [ids[i] for i in order]
    return ids[:manifest.train_count], ids[manifest.train_count:]


def load_dataset(manifest: DatasetManifest, workers: int = 1):
    """Return ``(train, test)`` lists of preprocessed ``PairedSample``."""
    sources = _pair_sources(manifest)
    train_ids, test_ids = split_ids(manifest, sources)

    def load(pid):
        return _load_pair(manifest, pid, sources[pid])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        train = list(pool.map(load, train_ids))
        test = list(pool.map(load, test_ids))
    log.info("loaded %s: %d train / %d test pairs", manifest.name, len(train), len(test))
    return train, test


# Ground-truth A -> B map of the toy data: permute channels, then invert intensity.
TOY_PERMUTATION = (2, 0, 1)
# Shared by all toy images: instance norm discards per-image channel means, so a
# random flat background could not be recovered by the generator.
TOY_BACKGROUND = (40, 90, 160)
_TOY_INVERSE = tuple(int(i) for i in np.argsort(TOY_PERMUTATION))


def toy_transform(img: ImageTensor) -> ImageTensor:
    return ImageTensor(-img.data[list(TOY_PERMUTATION)], ValueRange.SIGNED_UNIT)


def toy_inverse_transform(img: ImageTensor) -> ImageTensor:
    return ImageTensor(-img.data[list(_TOY_INVERSE)], ValueRange.SIGNED_UNIT)


def _toy_image(rng: np.random.Generator, size: int) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = TOY_BACKGROUND
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(1, 4))):
        kind = rng.integers(0, 3)
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        ry, rx = rng.uniform(0.08, 0.3, 2) * size
        if kind == 0:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        elif kind == 1:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            # upward triangle with apex at (cy - ry, cx)
            t = (yy - (cy - ry)) / (2 * ry)
            mask = (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= t * rx)
        img[mask] = rng.integers(0, 256, 3)
    return img


def make_toy_dataset(n: int, size: int = 64, seed: int = 0) -> list[PairedSample]:
    """Random filled shapes on a fixed flat background (A) and ``toy_transform`` of them (B)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 4 or size % 4:
        raise ValueError(f"size must be a positive multiple of 4, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        byte = ImageTensor(_toy_image(rng, size).transpose(2, 0, 1), ValueRange.BYTE)
        a = ImageTensor(normalize(byte).data.astype(np.float32), ValueRange.SIGNED_UNIT)
        samples.append(PairedSample(a, toy_transform(a), f"toy_{i:04d}"))
    return samples


def to_uint8(img) -> np.ndarray:
    """SIGNED_UNIT ImageTensor or (C, H, W) array -> HxWx3 uint8 for writing to disk."""
    if isinstance(img, ImageTensor):
        if img.value_range is ValueRange.BYTE:
            byte = img.data
        else:
            byte = denormalize(img).data
    else:
        byte = denormalize(np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0)).data
    arr = np.clip(np.rint(byte), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return np.repeat(arr, 3, axis=2) if arr.shape[2] == 1 else arr


def save_image(img, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
    return path


def save_grid(rows, path) -> Path:
    """Tile a list of rows of equally sized images into one PNG."""
    grid = np.concatenate([np.concatenate([to_uint8(im) for im in row], axis=1) for row in rows], axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(path)
    return path
