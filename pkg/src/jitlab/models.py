"""Classifier families and plain minibatch SGD."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from jitlab import autodiff as ad
from jitlab.autodiff import Tensor
from jitlab.errors import ConfigError, DimensionError, FormatError

if TYPE_CHECKING:
    from jitlab.data import LabeledDataset

ARCHITECTURES = ("mlp", "small_cnn", "sigmoid1d")
MAGIC = b"JITM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; enough to rebuild an identical model.

    ``hidden`` holds the hidden widths for ``mlp`` and the two conv channel
    counts for ``small_cnn``. ``image_shape`` is (C, H, W) for ``small_cnn``
    and ignored otherwise.
    """

    arch: str
    input_dim: int
    n_classes: int
    hidden: tuple[int, ...] = (16,)
    seed: int = 0
    image_shape: tuple[int, int, int] | None = None

    def validate(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if self.arch == "mlp":
            if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
                raise ConfigError("mlp needs at least one positive hidden width")
            if self.n_classes < 2:
                raise ConfigError("mlp needs at least two classes")
        elif self.arch == "small_cnn":
            if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
                raise ConfigError("small_cnn takes exactly two conv channel counts")
            if self.image_shape is None or int(np.prod(self.image_shape)) != self.input_dim:
                raise ConfigError("small_cnn needs an image_shape matching input_dim")
            c, h, w = self.image_shape
            if h < 4 or w < 4 or h % 2 or w % 2:
                raise ConfigError("small_cnn needs even image extents >= 4")
            if self.n_classes < 2:
                raise ConfigError("small_cnn needs at least two classes")
        elif self.arch == "sigmoid1d":
            if self.input_dim != 1 or self.n_classes != 2:
                raise ConfigError("sigmoid1d is a single-input binary model")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        raw = json.loads(text)
        raw["hidden"] = tuple(raw["hidden"])
        if raw.get("image_shape") is not None:
            raw["image_shape"] = tuple(raw["image_shape"])
        return cls(**raw)


def _layer_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every parameter in declaration order."""
    if spec.arch == "sigmoid1d":
        return [("w", (1, 1), 1), ("b", (1,), 1)]
    if spec.arch == "mlp":
        shapes = []
        widths = (spec.input_dim, *spec.hidden, spec.n_classes)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes.append((f"W{i}", (fan_in, fan_out), fan_in))
            shapes.append((f"b{i}", (fan_out,), fan_in))
        return shapes
    c, h, w = spec.image_shape
    c1, c2 = spec.hidden
    flat = c2 * (h // 2) * (w // 2)
    return [
        ("K0", (c1, c, 3, 3), c * 9),
        ("k0", (c1,), c * 9),
        ("K1", (c2, c1, 4, 4), c1 * 16),
        ("k1", (c2,), c1 * 16),
        ("W", (flat, spec.n_classes), flat),
        ("b", (spec.n_classes,), flat),
    ]


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "Model":
        return Model(self.spec, {k: Tensor(v.data, requires_grad=True) for k, v in self.params.items()})

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params.values()])

    def fingerprint(self) -> str:
        return hashlib.sha256(self.flat_parameters().tobytes()).hexdigest()

    # -- forward ------------------------------------------------------------
    def logits(self, x: Tensor) -> Tensor:
        """Pre-activation outputs for a batch ``x`` of shape (m, d)."""
        p = self.params
        spec = self.spec
        if x.ndim != 2 or x.shape[1] != spec.input_dim:
            raise DimensionError(f"expected inputs of shape (m, {spec.input_dim}), got {x.shape}")
        if spec.arch == "sigmoid1d":
            return ad.linear(x, p["w"], p["b"])
        if spec.arch == "mlp":
            n_layers = len(spec.hidden) + 1
            h = x
            for i in range(n_layers):
                h = ad.linear(h, p[f"W{i}"], p[f"b{i}"])
                if i < n_layers - 1:
                    h = ad.relu(h)
            return h
        m = x.shape[0]
        img = ad.reshape(x, (m, *spec.image_shape))
        h = ad.relu(ad.conv2d(img, p["K0"], p["k0"], stride=1, padding=1))
        h = ad.relu(ad.conv2d(h, p["K1"], p["k1"], stride=2, padding=1))
        h = ad.reshape(h, (m, -1))
        return ad.linear(h, p["W"], p["b"])

    def output(self, x: Tensor) -> Tensor:
        """f_theta on a batch: softmax rows, or a single sigmoid column for sigmoid1d."""
        z = self.logits(x)
        if self.spec.arch == "sigmoid1d":
            return ad.reshape(ad.sigmoid(z), (x.shape[0],))
        return ad.softmax(z)

    def class_probs(self, x: Tensor) -> Tensor:
        """(m, c) class distribution; sigmoid1d is expanded to [1 - s, s]."""
        z = self.logits(x)
        if self.spec.arch == "sigmoid1d":
            s = ad.sigmoid(z)
            return ad.add_bias(ad.matmul(s, Tensor([[-1.0, 1.0]])), Tensor([1.0, 0.0]))
        return ad.softmax(z)


def init_model(spec: ModelSpec) -> Model:
    """Scaled-uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params = {}
    for name, shape, fan_in in _layer_shapes(spec):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return Model(spec, params)


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"input dimensionality {arr.shape[-1]} does not match model ({model.spec.input_dim})"
        )
    return arr, single


def _frozen_copy(model: Model) -> Model:
    return Model(model.spec, {k: Tensor(v.data) for k, v in model.params.items()})


def predict_proba(model: Model, x) -> np.ndarray:
    """Class probabilities for one input vector or a batch, without recording a tape.

    sigmoid1d returns the scalar sigmoid output (a vector of them for a batch).
    """
    arr, single = _as_batch(model, x)
    out = _frozen_copy(model).output(Tensor(arr)).data
    return out[0] if single else out


def predict_class_probs(model: Model, x) -> np.ndarray:
    """(m, c) class distribution, sigmoid1d expanded to two columns."""
    arr, single = _as_batch(model, x)
    out = _frozen_copy(model).class_probs(Tensor(arr)).data
    return out[0] if single else out


def predict_labels(model: Model, x, batch_size: int = 512) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    arr = np.asarray(x, dtype=np.float64)
    out = [predict_class_probs(model, arr[i:i + batch_size]).argmax(axis=1)
           for i in range(0, len(arr), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# -- training ---------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 32
    shuffle_seed: int = 0
    lr_schedule: str = "constant"

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "linear_decay"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


def sgd_step(model: Model, lr: float) -> None:
    for p in model.params.values():
        if p.grad is not None:
            p.data -= lr * p.grad
        p.grad = None


def train_sgd(model: Model, data: "LabeledDataset", cfg: TrainConfig,
              labels: np.ndarray | None = None) -> list[float]:
    """Minibatch SGD on mean cross-entropy; mutates ``model`` and returns per-epoch mean losses.

    ``labels`` overrides ``data.labels`` (used by the relabelling baselines).
    """
    cfg.validate()
    if len(data) == 0:
        raise ConfigError("cannot train on an empty dataset")
    y = np.asarray(data.labels if labels is None else labels, dtype=np.int64)
    if np.any(y >= model.spec.n_classes) or np.any(y < 0):
        raise ConfigError("labels outside the model's class range")
    x = data.inputs
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = len(y)
    trace = []
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate
        if cfg.lr_schedule == "linear_decay":
            lr *= 1.0 - epoch / cfg.epochs
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = ad.cross_entropy(model.class_probs(Tensor(x[idx])), y[idx])
            loss.backward()
            sgd_step(model, lr)
            total += loss.item() * len(idx)
        trace.append(total / n)
    return trace


# -- serialization ----------------------------------------------------------
def save_model(model: Model, path) -> None:
    """Write ``JITM`` | u32 version | u32 len + UTF-8 spec JSON | float64 LE params."""
    desc = model.spec.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(desc)), desc]
    for p in model.params.values():
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Model:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (n,) = struct.unpack_from("<I", blob, 8)
    try:
        spec = ModelSpec.from_json(blob[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, ValueError, TypeError, KeyError) as exc:
        raise FormatError(f"{path}: bad spec descriptor ({exc})") from None
    offset = 12 + n
    shapes = _layer_shapes(spec)
    expected = offset + 8 * sum(int(np.prod(s)) for _, s, _ in shapes)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    params = {}
    for name, shape, _ in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[name] = Tensor(arr.astype(np.float64), requires_grad=True)
        offset += 8 * count
    return Model(spec, params)
