"""Encode six-channel recordings as grayscale images.

Rows of the image are channels, repeated in the order of a de Bruijn
sequence over the channel indices so that every ordered channel pair is
vertically adjacent exactly once (cyclically). Each row is the channel
resampled to a fixed width and min-max scaled with training statistics.
"""

import re
from dataclasses import dataclass

import numpy as np

from .dataset import CHANNELS

# magic, width, height, maxval, then exactly one whitespace byte before the pixels
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def build_row_order(alphabet_size=6, order=2):
    """Lexicographically least de Bruijn sequence B(alphabet_size, order).

    Concatenates, in lexicographic order, the Lyndon words whose length
    divides ``order``.
    """
    if alphabet_size < 1 or order < 1:
        raise ValueError("alphabet_size and order must be >= 1")
    k, n = alphabet_size, order
    a = [0] * (k * n + 1)
    seq = []

    def db(t, p):
        if t > n:
            if n % p == 0:
                seq.extend(a[1:p + 1])
        else:
            a[t] = a[t - p]
            db(t + 1, p)
            for j in range(a[t - p] + 1, k):
                a[t] = j
                db(t + 1, t)

    db(1, 1)
    return seq


def resample_channel(samples, target_len):
    """Linear interpolation onto ``target_len`` evenly spaced points; endpoints kept."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 2:
        raise ValueError("need a 1-D sequence of at least 2 samples")
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    src = np.linspace(0.0, 1.0, samples.size)
    dst = np.linspace(0.0, 1.0, target_len)
    return np.interp(dst, src, samples)


@dataclass(frozen=True)
class ChannelStats:
    mins: tuple
    maxs: tuple

    @classmethod
    def from_recordings(cls, recordings):
        recordings = list(recordings)
        if not recordings:
            raise ValueError("need at least one recording for channel statistics")
        mins = np.min([r.channels.min(axis=1) for r in recordings], axis=0)
        maxs = np.max([r.channels.max(axis=1) for r in recordings], axis=0)
        return cls(tuple(float(v) for v in mins), tuple(float(v) for v in maxs))

    def to_dict(self):
        return {"mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["mins"]), tuple(float(v) for v in d["maxs"]))


@dataclass(frozen=True)
class EncoderConfig:
    columns: int = 128
    alphabet_size: int = CHANNELS
    order: int = 2

    @property
    def row_order(self):
        return build_row_order(self.alphabet_size, self.order)

    @property
    def rows(self):
        return self.alphabet_size ** self.order

    @property
    def shape(self):
        return (self.rows, self.columns)


@dataclass(frozen=True)
class SignalImage:
    pixels: np.ndarray
    user_id: int


def normalize_channels(channels, norm):
    """Min-max scale each channel row with ``norm``; constant channels map to 0.5."""
    mins = np.asarray(norm.mins)[:, None]
    span = np.asarray(norm.maxs)[:, None] - mins
    degenerate = (span <= 0).reshape(-1)
    scaled = (channels - mins) / np.where(span > 0, span, 1.0)
    scaled[degenerate] = 0.5
    return np.clip(scaled, 0.0, 1.0)


def encode_channels(channels, row_order, columns, norm):
    resampled = np.stack([resample_channel(ch, columns) for ch in channels])
    return normalize_channels(resampled, norm)[list(row_order)]


def encode_image(rec, row_order, columns, norm):
    return SignalImage(encode_channels(rec.channels, row_order, columns, norm), rec.user_id)


def encode_dataset(dataset, indices, encoder, norm):
    """Images ``N x R x C`` and labels for the recordings at ``indices``."""
    order = encoder.row_order
    images = np.empty((len(indices), encoder.rows, encoder.columns))
    labels = np.empty(len(indices), dtype=np.int64)
    for i, idx in enumerate(indices):
        rec = dataset.recordings[idx]
        images[i] = encode_channels(rec.channels, order, encoder.columns, norm)
        labels[i] = rec.user_id
    return images, labels


def write_pgm(path, pixels):
    """Binary PGM (P5), pixels in [0, 1] scaled to 0..255, row-major."""
    pixels = np.asarray(pixels, dtype=np.float64)
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ValueError("not a binary PGM file")
    width, height, maxval = (int(g) for g in m.groups())
    body = raw[m.end():m.end() + width * height]
    if len(body) != width * height:
        raise ValueError("PGM pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width) / maxval
