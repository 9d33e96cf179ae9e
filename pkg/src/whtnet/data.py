"""Dataset readers: IDX (MNIST family), CIFAR-10 binary, and a synthetic generator.

Images come back as float64 NHWC arrays scaled to [0, 1] with integer labels.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
CIFAR_RECORD = 1 + 3 * 32 * 32
FORMATS = ("idx", "cifar-binary", "synthetic")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.y)

    def subset(self, n: int | None, seed: int) -> "Dataset":
        """Seeded random subset of ``n`` examples (all of them when ``n`` is None)."""
        if n is None or n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return Dataset(self.x[idx], self.y[idx], self.num_classes)


@dataclass
class DataSplit:
    train: Dataset
    test: Dataset


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DatasetError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def parse_idx(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < 4:
        raise DatasetError(f"{name}: truncated IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in IDX_DTYPES:
        raise DatasetError(f"{name}: bad IDX magic 0x{raw[:4].hex()}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DatasetError(f"{name}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    dtype = IDX_DTYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - head < need:
        raise DatasetError(f"{name}: truncated IDX payload ({len(raw) - head} of {need} bytes)")
    if len(raw) - head > need:
        raise DatasetError(f"{name}: {len(raw) - head - need} trailing bytes after IDX payload")
    return np.frombuffer(raw, dtype=dtype, count=need // dtype.itemsize, offset=head).reshape(dims)


def read_idx(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), str(path))


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    for code, dt in IDX_DTYPES.items():
        if dt.kind == arr.dtype.kind and dt.itemsize == arr.dtype.itemsize:
            break
    else:
        raise ValueError(f"dtype {arr.dtype} has no IDX code")
    head = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.astype(dt).tobytes()


def write_idx(path, arr: np.ndarray, compress: bool | None = None) -> None:
    path = Path(path)
    blob = encode_idx(arr)
    if compress or (compress is None and path.suffix == ".gz"):
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


def parse_cifar(raw: bytes, name: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """``(images uint8 (n, 32, 32, 3), labels)`` from CIFAR-10 binary records."""
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DatasetError(f"{name}: {len(raw)} bytes is not a whole number of "
                           f"{CIFAR_RECORD}-byte records (truncated file?)")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetError(f"{name}: label byte {labels.max()} out of range")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def read_cifar(path) -> tuple[np.ndarray, np.ndarray]:
    return parse_cifar(_read_bytes(path), str(path))


def _find(directory: Path, stems: list[str]) -> Path:
    for stem in stems:
        for cand in (directory / stem, directory / (stem + ".gz")):
            if cand.is_file():
                return cand
    raise DatasetError(f"{directory}: none of {stems} found")


def _idx_pair(images_path, labels_path) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.ndim != 3:
        raise DatasetError(f"{images_path}: expected a 3-D image array, got {images.ndim}-D")
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[..., None] / 255.0
    return Dataset(x, labels, int(labels.max()) + 1 if len(labels) else 0)


def load_idx_dir(directory) -> DataSplit:
    d = Path(directory)
    train = _idx_pair(_find(d, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
                      _find(d, ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]))
    test = _idx_pair(_find(d, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
                     _find(d, ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]))
    k = max(train.num_classes, test.num_classes)
    train.num_classes = test.num_classes = k
    return DataSplit(train, test)


def load_cifar_dir(directory) -> DataSplit:
    d = Path(directory)
    batches = sorted(d.glob("data_batch_*.bin"))
    if not batches:
        raise DatasetError(f"{d}: no data_batch_*.bin files")

    def to_ds(parts):
        xs, ys = zip(*parts)
        return Dataset(np.concatenate(xs).astype(np.float64) / 255.0, np.concatenate(ys), 10)

    train = to_ds([read_cifar(p) for p in batches])
    test = to_ds([read_cifar(_find(d, ["test_batch.bin"]))])
    return DataSplit(train, test)


def make_synthetic(n_train: int = 512, n_test: int = 256, shape=(8, 8, 1), classes: int = 4,
                   noise: float = 0.5, seed: int = 0) -> DataSplit:
    """Class prototypes plus Gaussian noise, squashed into [0, 1]."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(classes,) + tuple(shape))

    def draw(n):
        y = rng.integers(0, classes, size=n)
        x = protos[y] + noise * rng.normal(size=(n,) + tuple(shape))
        return Dataset(np.clip(0.5 + 0.25 * x, 0.0, 1.0), y.astype(np.int64), classes)

    return DataSplit(draw(n_train), draw(n_test))


def load_dataset(path, fmt: str, train_subset: int | None = None,
                 test_subset: int | None = None, seed: int = 0, **synthetic) -> DataSplit:
    """Load a train/test split.

    ``idx`` and ``cifar-binary`` read the standard file names from the
    directory ``path``; ``synthetic`` ignores ``path`` and forwards the
    remaining keyword arguments to :func:`make_synthetic`. Subsets are drawn
    with a generator seeded by ``seed``.
    """
    if fmt == "idx":
        split = load_idx_dir(path)
    elif fmt == "cifar-binary":
        split = load_cifar_dir(path)
    elif fmt == "synthetic":
        split = make_synthetic(seed=seed, **synthetic)
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    return DataSplit(split.train.subset(train_subset, seed),
                     split.test.subset(test_subset, seed + 1))
