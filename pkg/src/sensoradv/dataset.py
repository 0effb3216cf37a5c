"""Gesture recordings: file loaders, a synthetic generator and per-user splits.

A recording holds six channels (accelerometer x, y, z then gyroscope
x, y, z) captured around one screen tap. Datasets are rectangular: every
user contributes the same number of recordings.
"""

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

CHANNELS = 6
CHANNEL_NAMES = ("acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z")
BINARY_MAGIC = b"SADV"
BINARY_VERSION = 1
_BIN_HEADER = struct.Struct("<4sHIII")


@dataclass(frozen=True)
class GestureRecording:
    user_id: int
    gesture_id: int
    channels: np.ndarray = field(repr=False)

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != CHANNELS:
            raise ValueError(f"channel count != {CHANNELS}")
        if ch.shape[1] < 2:
            raise ValueError("channels need at least 2 samples")
        if not np.all(np.isfinite(ch)):
            raise ValueError("non-finite sample")
        ch.flags.writeable = False
        object.__setattr__(self, "channels", ch)

    @property
    def sample_count(self):
        return self.channels.shape[1]


@dataclass(frozen=True)
class Dataset:
    recordings: tuple
    user_count: int
    per_user_count: int

    def __post_init__(self):
        object.__setattr__(self, "recordings", tuple(self.recordings))
        counts = np.bincount([r.user_id for r in self.recordings], minlength=self.user_count)
        if len(counts) != self.user_count or np.any(counts != self.per_user_count):
            raise DataFormatError(
                f"non-rectangular dataset: per-user counts {counts.tolist()}, "
                f"expected {self.per_user_count} for each of {self.user_count} users")

    @classmethod
    def from_recordings(cls, recordings):
        recordings = list(recordings)
        if not recordings:
            raise DataFormatError("dataset is empty")
        users = sorted({r.user_id for r in recordings})
        if users != list(range(len(users))):
            raise DataFormatError(f"user ids must cover 0..U-1, got {users[:10]}...")
        counts = np.bincount([r.user_id for r in recordings])
        if np.any(counts != counts[0]):
            raise DataFormatError(f"non-rectangular dataset: per-user counts {counts.tolist()}")
        return cls(tuple(recordings), len(users), int(counts[0]))

    def __len__(self):
        return len(self.recordings)

    @property
    def labels(self):
        return np.array([r.user_id for r in self.recordings], dtype=np.int64)


@dataclass(frozen=True)
class SplitIndices:
    train: tuple
    test: tuple
    seed: int


# ---------------------------------------------------------------- loading


def load_recordings(path, format=None):
    """Read a dataset from a CSV or SADV binary file.

    ``format`` is ``"csv"`` or ``"binary"``; when omitted it is inferred
    from the extension (``.csv`` means CSV, anything else binary).
    """
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "binary"
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def _load_csv(path):
    recordings = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["user_id", "gesture_id", "channel"]:
            raise DataFormatError("bad header, expected user_id,gesture_id,channel,t0,...", line=1)
        pending = []
        key = None
        lineno = 1

        def flush(line):
            if not pending:
                return
            if len(pending) != CHANNELS:
                raise DataFormatError(f"channel count != {CHANNELS} for gesture {key}", line=line)
            lengths = {len(p) for p in pending}
            if len(lengths) != 1:
                raise DataFormatError(f"unequal channel lengths for gesture {key}", line=line)
            if lengths.pop() < 2:
                raise DataFormatError(f"gesture {key} has fewer than 2 samples", line=line)
            recordings.append(GestureRecording(key[0], key[1], np.array(pending)))
            pending.clear()

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            while row and not row[-1].strip():
                row.pop()
            if len(row) < 4:
                raise DataFormatError("row has no samples", line=lineno)
            try:
                user, gesture, channel = (int(c) for c in row[:3])
                values = [float(c) for c in row[3:]]
            except ValueError as exc:
                raise DataFormatError(f"parse failure: {exc}", line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError("non-finite sample", line=lineno)
            if (user, gesture) != key:
                flush(lineno)
                key = (user, gesture)
            if channel != len(pending):
                if channel >= CHANNELS:
                    raise DataFormatError(f"channel index {channel} out of range", line=lineno)
                raise DataFormatError(f"channel count != {CHANNELS} for gesture {key}", line=lineno)
            pending.append(values)
        flush(lineno)
    return Dataset.from_recordings(recordings)


def _load_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _BIN_HEADER.size:
        raise DataFormatError("file shorter than header", offset=0)
    magic, version, users, per_user, samples = _BIN_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version != BINARY_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    count = users * per_user * CHANNELS * samples
    expected = _BIN_HEADER.size + 8 * count
    if len(raw) != expected:
        raise DataFormatError(f"expected {expected} bytes, found {len(raw)}", offset=min(len(raw), expected))
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=_BIN_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise DataFormatError("non-finite sample", offset=_BIN_HEADER.size + 8 * int(bad[0]))
    data = data.reshape(users, per_user, CHANNELS, samples)
    recs = [GestureRecording(u, g, data[u, g]) for u in range(users) for g in range(per_user)]
    return Dataset(tuple(recs), users, per_user)


def save_recordings(dataset, path, format=None):
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "binary"
    if format == "csv":
        width = max(r.sample_count for r in dataset.recordings)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["user_id", "gesture_id", "channel"] + [f"t{i}" for i in range(width)])
            for rec in dataset.recordings:
                for c in range(CHANNELS):
                    writer.writerow([rec.user_id, rec.gesture_id, c] + [repr(float(v)) for v in rec.channels[c]])
    elif format == "binary":
        lengths = {r.sample_count for r in dataset.recordings}
        if len(lengths) != 1:
            raise DataFormatError("binary format needs equal channel lengths across recordings")
        samples = lengths.pop()
        ordered = sorted(dataset.recordings, key=lambda r: (r.user_id, r.gesture_id))
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, dataset.user_count,
                                      dataset.per_user_count, samples))
            for rec in ordered:
                fh.write(rec.channels.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown format {format!r}")


# -------------------------------------------------------------- synthetic


def generate_synthetic(user_count, gestures_per_user, samples_per_channel, seed,
                       duration=1.5, components=3, noise_fraction=0.1):
    """Desk-scale stand-in for tap-gesture data.

    Each user owns a generator: per channel, a sum of ``components``
    sinusoids with user-specific frequency, phase and amplitude, around a
    user-specific offset. Each gesture adds i.i.d. Gaussian noise whose
    standard deviation is ``noise_fraction`` of the channel's amplitude
    (sum of component amplitudes).
    """
    if min(user_count, gestures_per_user, samples_per_channel) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(samples_per_channel) * (duration / samples_per_channel)
    recordings = []
    for user in range(user_count):
        freqs = rng.uniform(0.5, 6.0, size=(CHANNELS, components))
        phases = rng.uniform(0.0, 2 * np.pi, size=(CHANNELS, components))
        amps = rng.uniform(0.2, 1.5, size=(CHANNELS, components))
        offsets = rng.normal(0.0, 0.5, size=CHANNELS)
        clean = offsets[:, None] + np.einsum(
            "ck,ckt->ct", amps, np.sin(2 * np.pi * freqs[..., None] * t + phases[..., None]))
        sigma = noise_fraction * amps.sum(axis=1)
        for g in range(gestures_per_user):
            noisy = clean + rng.normal(size=clean.shape) * sigma[:, None]
            recordings.append(GestureRecording(user, g, noisy))
    return Dataset(tuple(recordings), user_count, gestures_per_user)


# ------------------------------------------------------------------ split


def split(dataset, train_fraction, seed):
    """Stratified per-user train/test split, independent shuffle per user."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    by_user = [[] for _ in range(dataset.user_count)]
    for idx, rec in enumerate(dataset.recordings):
        by_user[rec.user_id].append(idx)
    train, test = [], []
    for user, idxs in enumerate(by_user):
        n_train = int(round(train_fraction * len(idxs)))
        if n_train == 0 or n_train == len(idxs):
            raise ValueError(
                f"train_fraction {train_fraction} leaves user {user} with an empty "
                f"{'train' if n_train == 0 else 'test'} set ({len(idxs)} recordings)")
        perm = rng.permutation(idxs)
        train.extend(sorted(perm[:n_train].tolist()))
        test.extend(sorted(perm[n_train:].tolist()))
    return SplitIndices(tuple(train), tuple(test), int(seed))


# ---------------------------------------------------------- tensor dumps

TENSOR_VERSION = 2
_TENSOR_HEADER = struct.Struct("<4sHI")


def save_tensor(array, path):
    """Dense float64 tensor in the SADV container (version 2): magic, u16
    version, u32 ndim, u32 dims, then little-endian float64 row-major."""
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_TENSOR_HEADER.pack(BINARY_MAGIC, TENSOR_VERSION, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _TENSOR_HEADER.size:
        raise DataFormatError("file shorter than header", offset=0)
    magic, version, ndim = _TENSOR_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC or version != TENSOR_VERSION:
        raise DataFormatError(f"not a SADV tensor file (magic {magic!r}, version {version})", offset=0)
    shape = struct.unpack_from(f"<{ndim}I", raw, _TENSOR_HEADER.size)
    offset = _TENSOR_HEADER.size + 4 * ndim
    count = int(np.prod(shape))
    if len(raw) != offset + 8 * count:
        raise DataFormatError(f"expected {offset + 8 * count} bytes, found {len(raw)}", offset=offset)
    return np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
