"""Dataset ingestion: sequential-MNIST from IDX files, a seeded synthetic
temporal-pattern task, and a generic binned-spike container format.

Binned-spike container (little-endian):

    magic   4 bytes  b"BSPK"
    version u32      1
    count   u32      number of samples
    c_in    u32      channels per timestep
    vtype   u8       0 = uint8 bin counts, 1 = int8 signed (ternary-style)
    then per sample:
    T       u32      timesteps
    label   u32      class index
    payload T*c_in values of vtype, time-major

All loaders are deterministic given paths and seeds.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"BSPK"
CONTAINER_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(Exception):
    """Malformed dataset file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class SequenceDataset:
    """Labelled sequences; per-sample arrays are (T, c_in)."""

    sequences: list
    labels: np.ndarray
    c_in: int
    c_out: int
    name: str = ""
    seed: int = 0
    templates: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.sequences) != len(self.labels):
            raise ValueError("sequence/label count mismatch")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.c_out):
            raise ValueError("label outside [0, c_out)")

    def __len__(self):
        return len(self.labels)

    @property
    def fixed_length(self) -> int | None:
        lengths = {s.shape[0] for s in self.sequences}
        return lengths.pop() if len(lengths) == 1 else None

    def subset(self, indices) -> "SequenceDataset":
        indices = np.asarray(indices)
        return SequenceDataset(
            sequences=[self.sequences[i] for i in indices],
            labels=self.labels[indices], c_in=self.c_in, c_out=self.c_out,
            name=self.name, seed=self.seed, templates=self.templates)


def iterate_batches(ds: SequenceDataset, batch_size: int, order=None):
    """Yield (x, labels, mask) with x (B, Tmax, c_in) float64; padded steps
    are zero and masked out (mask is None when lengths are uniform)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.arange(len(ds)) if order is None else np.asarray(order)
    uniform = ds.fixed_length is not None
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        seqs = [np.asarray(ds.sequences[i], dtype=np.float64) for i in chunk]
        t_max = max(s.shape[0] for s in seqs)
        x = np.zeros((len(chunk), t_max, ds.c_in))
        mask = None
        if not uniform:
            mask = np.zeros((len(chunk), t_max))
        for row, s in enumerate(seqs):
            x[row, :s.shape[0]] = s
            if mask is not None:
                mask[row, :s.shape[0]] = 1.0
        yield x, ds.labels[chunk], mask


# ---------------------------------------------------------------------------
# sequential MNIST from IDX files


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, offset: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError("truncated IDX file", offset=offset + len(buf))
    return buf


def read_idx_images(path) -> np.ndarray:
    """Standard big-endian IDX image file -> (N, rows, cols) uint8."""
    with _open_maybe_gzip(path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, 0))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"bad IDX image magic 0x{magic:08x}", offset=0)
        raw = _read_exact(fh, count * rows * cols, 16)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, 0))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"bad IDX label magic 0x{magic:08x}", offset=0)
        raw = _read_exact(fh, count, 8)
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def _images_to_sequences(images: np.ndarray) -> list:
    # row-major flatten: one pixel per timestep, scaled to [0, 1]
    n, rows, cols = images.shape
    flat = (images.reshape(n, rows * cols, 1) / 255.0).astype(np.float32)
    return list(flat)


def load_smnist(path_train_images, path_train_labels, path_test_images,
                path_test_labels, val_fraction: float = 0.0, seed: int = 0):
    """Sequential MNIST: each image flattened to a length rows*cols sequence.

    Returns (train, test), or (train, val, test) when ``val_fraction`` asks
    for a held-out split of the training set.
    """
    train_images = read_idx_images(path_train_images)
    train_labels = read_idx_labels(path_train_labels)
    test_images = read_idx_images(path_test_images)
    test_labels = read_idx_labels(path_test_labels)
    if len(train_images) != len(train_labels):
        raise DataFormatError("image/label count mismatch in training files")
    if len(test_images) != len(test_labels):
        raise DataFormatError("image/label count mismatch in test files")
    train = SequenceDataset(_images_to_sequences(train_images), train_labels,
                            c_in=1, c_out=10, name="smnist", seed=seed)
    test = SequenceDataset(_images_to_sequences(test_images), test_labels,
                           c_in=1, c_out=10, name="smnist", seed=seed)
    if val_fraction > 0.0:
        train, val = split_validation(train, val_fraction, seed)
        return train, val, test
    return train, test


def split_validation(ds: SequenceDataset, fraction: float, seed: int):
    """Disjoint, reproducible held-out split."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_val = int(round(len(ds) * fraction))
    return ds.subset(perm[n_val:]), ds.subset(perm[:n_val])


# ---------------------------------------------------------------------------
# synthetic temporal-pattern task


def synth_pattern_task(num_classes: int, T: int, c_in: int,
                       samples_per_class: int, noise: float, seed: int,
                       sample_seed: int | None = None,
                       shared_channels: int = 0) -> SequenceDataset:
    """Classes are fixed binary burst templates; samples are templates with
    entries flipped independently at the given noise rate.

    The first ``shared_channels`` channels carry bursts common to every
    class (distractors); the remaining channels have class-specific burst
    offsets.  The class templates depend only on ``seed``; the flip noise
    draws from ``sample_seed`` (default ``seed + 1``), so train and test
    splits built from the same ``seed`` share templates but not noise.
    """
    if min(num_classes, T, c_in, samples_per_class) < 1:
        raise ValueError("task dimensions must be positive")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise must be in [0, 1)")
    if not 0 <= shared_channels < c_in:
        raise ValueError("shared_channels must leave at least one "
                         "class-specific channel")
    template_rng = np.random.default_rng(seed)
    burst_len = max(2, T // 10)
    num_slots = max(T // burst_len, 1)
    bursts_per_channel = max(1, num_slots // 4)

    def draw_channel():
        # slot-aligned bursts: every channel of every class carries the same
        # total activity, so only burst timing separates the classes
        column = np.zeros(T, dtype=np.float32)
        slots = template_rng.choice(num_slots, size=bursts_per_channel,
                                    replace=False)
        for s in slots:
            column[s * burst_len:(s + 1) * burst_len] = 1.0
        return column

    common = np.stack([draw_channel() for _ in range(c_in)], axis=1)
    templates = np.zeros((num_classes, T, c_in), dtype=np.float32)
    for k in range(num_classes):
        templates[k] = common
        for _ in range(100):
            for c in range(shared_channels, c_in):
                templates[k][:, c] = draw_channel()
            if not any(np.array_equal(templates[k], templates[j])
                       for j in range(k)):
                break
        else:
            raise ValueError("could not draw distinct class templates")

    noise_rng = np.random.default_rng(seed + 1 if sample_seed is None
                                      else sample_seed)
    sequences = []
    labels = []
    for k in range(num_classes):
        for _ in range(samples_per_class):
            flips = noise_rng.random((T, c_in)) < noise
            sample = np.abs(templates[k] - flips.astype(np.float32))
            sequences.append(sample)
            labels.append(k)
    return SequenceDataset(sequences, np.array(labels), c_in=c_in,
                           c_out=num_classes, name="synthetic", seed=seed,
                           templates=templates)


def nearest_template_accuracy(ds: SequenceDataset) -> float:
    """Brute-force oracle: classify by closest class template."""
    if ds.templates is None:
        raise ValueError("dataset carries no templates")
    flat_t = ds.templates.reshape(len(ds.templates), -1).astype(np.float64)
    correct = 0
    for seq, label in zip(ds.sequences, ds.labels):
        d = ((flat_t - np.asarray(seq, dtype=np.float64).ravel()) ** 2).sum(axis=1)
        correct += int(np.argmin(d) == label)
    return correct / len(ds)


# ---------------------------------------------------------------------------
# binned-spike container


def save_binned_spikes(ds: SequenceDataset, path):
    """Write the container; values must fit uint8 or int8."""
    all_vals = np.concatenate([np.asarray(s).ravel() for s in ds.sequences]) \
        if len(ds) else np.zeros(0)
    if np.any(all_vals != np.round(all_vals)):
        raise ValueError("binned-spike container stores integer values only")
    signed = bool(all_vals.size and all_vals.min() < 0)
    vtype = 1 if signed else 0
    dtype = np.int8 if signed else np.uint8
    info = np.iinfo(dtype)
    if all_vals.size and (all_vals.min() < info.min or all_vals.max() > info.max):
        raise ValueError(f"values outside {dtype} range")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIB", CONTAINER_VERSION, len(ds), ds.c_in, vtype))
        for seq, label in zip(ds.sequences, ds.labels):
            arr = np.asarray(seq).astype(dtype)
            if arr.ndim != 2 or arr.shape[1] != ds.c_in:
                raise ValueError("sample shape inconsistent with c_in")
            fh.write(struct.pack("<II", arr.shape[0], int(label)))
            fh.write(arr.tobytes())


def load_binned_spikes(path, c_out: int | None = None) -> SequenceDataset:
    """Read the container back; malformed input raises DataFormatError with
    the failing byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataFormatError(f"bad magic {blob[:4]!r}", offset=0)
    if len(blob) < 17:
        raise DataFormatError("truncated header", offset=len(blob))
    version, count, c_in, vtype = struct.unpack("<IIIB", blob[4:17])
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"unsupported container version {version}", offset=4)
    if vtype not in (0, 1):
        raise DataFormatError(f"unknown value type {vtype}", offset=16)
    dtype = np.uint8 if vtype == 0 else np.int8
    offset = 17
    sequences = []
    labels = []
    for k in range(count):
        if offset + 8 > len(blob):
            raise DataFormatError(f"truncated sample header {k}", offset=offset)
        t_steps, label = struct.unpack("<II", blob[offset:offset + 8])
        offset += 8
        nbytes = t_steps * c_in
        if offset + nbytes > len(blob):
            raise DataFormatError(
                f"truncated payload for sample {k} (declared c_in={c_in}, "
                f"T={t_steps})", offset=offset)
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dtype)
        sequences.append(arr.reshape(t_steps, c_in).astype(np.float32))
        labels.append(label)
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError(
            "trailing data after last sample (c_in mismatch with payload?)",
            offset=offset)
    labels = np.array(labels, dtype=np.int64)
    n_classes = c_out if c_out is not None \
        else (int(labels.max()) + 1 if len(labels) else 1)
    return SequenceDataset(sequences, labels, c_in=int(c_in), c_out=n_classes,
                           name="binned")


def sum_bin(sequence: np.ndarray, bin_size: int) -> np.ndarray:
    """Sum non-overlapping windows along time; a final partial window is
    summed as-is, so the output has ceil(T / bin_size) steps."""
    if bin_size < 1:
        raise ValueError("bin_size must be >= 1")
    seq = np.asarray(sequence)
    if bin_size == 1:
        return seq.copy()
    t_steps = seq.shape[0]
    out_len = int(np.ceil(t_steps / bin_size))
    out = np.zeros((out_len,) + seq.shape[1:], dtype=np.float64)
    for k in range(out_len):
        out[k] = seq[k * bin_size:(k + 1) * bin_size].sum(axis=0)
    return out
