"""The four CNN user-identification architectures and their checkpoints."""

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import crcmod.predefined
import numpy as np

from .autodiff import Conv2D, Dense, Dropout, Flatten, MaxPool2x2, Network, ReLU
from .errors import ChecksumError, CheckpointError, ShapeError, SpecMismatchError, VersionError

# Filter widths per conv group; a 2x2 pool follows each group while the
# feature map still has even height and width.
CONV_GROUPS = {
    "cnn4": ((32,),),
    "cnn6": ((32,), (64,), (128,)),
    "cnn9": ((32, 32), (64, 64), (128, 128)),
    "cnn12": ((32, 32, 32), (64, 64, 64), (128, 128, 128)),
}
MODEL_NAMES = tuple(CONV_GROUPS)
FC_WIDTHS = (256, 128)
KERNEL_SIZE = 3
DROPOUT_RATE = 0.4

_crc64 = crcmod.predefined.mkCrcFun("crc-64")
CHECKPOINT_MAGIC = b"SADVCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sH32sQ")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    class_count: int
    conv_groups: tuple = ()
    fc_widths: tuple = FC_WIDTHS
    kernel_size: int = KERNEL_SIZE
    dropout: float = DROPOUT_RATE

    @classmethod
    def named(cls, name, class_count, input_shape=(36, 128)):
        if name not in CONV_GROUPS:
            raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
        if class_count < 2:
            raise ValueError("class_count must be >= 2")
        rows, cols = input_shape[:2]
        return cls(name, (int(rows), int(cols), 1), int(class_count), CONV_GROUPS[name])

    @property
    def conv_count(self):
        return sum(len(g) for g in self.conv_groups)

    @property
    def fc_count(self):
        return len(self.fc_widths)

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "conv_groups": [list(g) for g in self.conv_groups],
            "fc_widths": list(self.fc_widths),
            "kernel_size": self.kernel_size,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["input_shape"]), int(d["class_count"]),
                   tuple(tuple(g) for g in d["conv_groups"]), tuple(d["fc_widths"]),
                   int(d["kernel_size"]), float(d["dropout"]))

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()


class Model(Network):
    """A :class:`Network` that remembers the spec it was built from."""

    def __init__(self, spec, layers):
        super().__init__(layers, spec.input_shape)
        self.spec = spec


def _layers_for(spec):
    layers = []
    h, w, channels = spec.input_shape
    for group in spec.conv_groups:
        for width in group:
            layers += [Conv2D(spec.kernel_size, channels, width, stride=1, padding="same"), ReLU()]
            channels = width
        if h % 2 == 0 and w % 2 == 0:
            layers.append(MaxPool2x2())
            h, w = h // 2, w // 2
    layers.append(Flatten())
    features = h * w * channels
    for width in spec.fc_widths:
        layers += [Dense(features, width), ReLU(), Dropout(spec.dropout)]
        features = width
    layers.append(Dense(features, spec.class_count))
    return layers


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build(spec_name, class_count, seed, input_shape=(36, 128)):
    """Build a freshly initialized model (He-uniform weights, zero biases)."""
    spec = spec_name if isinstance(spec_name, ModelSpec) else ModelSpec.named(spec_name, class_count, input_shape)
    model = Model(spec, _layers_for(spec))
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if "W" in layer.params:
            w = layer.params["W"]
            fan_in = int(np.prod(w.shape[:-1]))
            layer.params["W"] = he_uniform(rng, w.shape, fan_in)
    return model


def forward_logits(model, images, batch_size=256):
    """Eval-mode logits, ``N x K``; processed in chunks to bound memory."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 2:
        raise ShapeError(f"expected a batch of images, got shape {images.shape}")
    out = [model.forward(images[i:i + batch_size], train=False)
           for i in range(0, images.shape[0], batch_size)]
    if not out:
        return np.zeros((0, model.output_size))
    return np.concatenate(out, axis=0)


def argmax_lowest(scores):
    """Row-wise argmax; ``np.argmax`` already returns the first maximum."""
    return np.argmax(np.asarray(scores), axis=1)


def predict(model, images):
    return argmax_lowest(forward_logits(model, images))


# ------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    model: Model
    metadata: dict = field(default_factory=dict)
    norm: dict | None = None

    @property
    def spec(self):
        return self.model.spec


def save(checkpoint, path):
    """Write a checkpoint (or bare model) to ``path``.

    Layout: magic, u16 version, 32-byte spec hash, u64 CRC-64 of the
    payload, then the payload: u32 header length, JSON header, and the
    parameters as little-endian float64 in layer order.
    """
    if isinstance(checkpoint, Model):
        checkpoint = Checkpoint(checkpoint)
    model = checkpoint.model
    norm = checkpoint.norm
    if hasattr(norm, "to_dict"):
        norm = norm.to_dict()
    header = {
        "spec": model.spec.to_dict(),
        "params": [[name, list(arr.shape)] for name, arr in model.named_parameters()],
        "metadata": checkpoint.metadata,
        "norm": norm,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = io.BytesIO()
    body.write(struct.pack("<I", len(hbytes)))
    body.write(hbytes)
    for arr in model.parameters():
        body.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = body.getvalue()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.spec.hash(), _crc64(payload)))
        fh.write(payload)


def load(path, expected_spec=None):
    """Read a checkpoint, verifying magic, version, checksum and spec hash.

    ``expected_spec`` may be a :class:`ModelSpec` or a model name; a name
    only checks that the stored architecture is that model.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ChecksumError(f"{path}: file truncated")
    magic, version, spec_hash, crc = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    payload = raw[_HEADER.size:]
    if _crc64(payload) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated file)")
    (hlen,) = struct.unpack_from("<I", payload)
    header = json.loads(payload[4:4 + hlen].decode("utf-8"))
    spec = ModelSpec.from_dict(header["spec"])
    if spec.hash() != spec_hash:
        raise SpecMismatchError(f"{path}: stored spec does not match its hash")
    if expected_spec is not None:
        if isinstance(expected_spec, ModelSpec):
            ok = expected_spec.hash() == spec_hash
        else:
            ok = expected_spec == spec.name
        if not ok:
            name = expected_spec.name if isinstance(expected_spec, ModelSpec) else expected_spec
            raise SpecMismatchError(f"{path}: checkpoint holds {spec.name}, expected {name}")
    model = Model(spec, _layers_for(spec))
    offset = 4 + hlen
    named = dict(model.named_parameters())
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        target = named[name]
        if target.shape != tuple(shape):
            raise SpecMismatchError(f"{path}: parameter {name} has shape {shape}, spec wants {target.shape}")
        target[...] = arr.reshape(shape)
    return Checkpoint(model, header.get("metadata", {}), header.get("norm"))
