"""JiT unlearning and the reimplemented comparison methods.

JiT smooths the classifier around each forget sample: for perturbations
xi_1..xi_N ~ N(0, sigma^2 I) it minimises

    (1/N) * sum_j ||f(x) - f(x + xi_j)||_2 / ||xi_j||_2

over the parameters with one plain gradient step per sample. Only the model
and the forget inputs are touched; retain data and forget labels never enter.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Union

import numpy as np

from jitlab import autodiff as ad
from jitlab.autodiff import Tensor
from jitlab.data import LabeledDataset
from jitlab.errors import ConfigError
from jitlab.models import Model, ModelSpec, TrainConfig, init_model, sgd_step, train_sgd

log = logging.getLogger(__name__)

MIN_NOISE_NORM = 1e-9
BOUNDARY_SHRINK_STEPS = 20

OutputFn = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class UnlearnConfig:
    """JiT hyperparameters.

    ``output`` picks what f is: the softmax distribution (default) or raw
    logits. ``antithetic`` pairs every draw xi with -xi (N must be even).
    ``vectorized`` evaluates the N perturbed copies as one batch; it agrees
    with the sequential path to rounding but is not bit-identical to it.
    """

    eta: float
    sigma: float
    n_perturb: int = 32
    epochs: int = 1
    seed: int = 0
    output: str = "softmax"
    antithetic: bool = False
    vectorized: bool = False

    def validate(self) -> None:
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.n_perturb < 1:
            raise ConfigError("n_perturb must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.output not in ("softmax", "logits"):
            raise ConfigError(f"unknown output {self.output!r}")
        if self.antithetic and self.n_perturb % 2:
            raise ConfigError("antithetic sampling needs an even n_perturb")


@dataclass
class PerturbationBatch:
    noise: np.ndarray  # (N, d)
    norms: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.noise)

    @classmethod
    def from_noise(cls, noise) -> "PerturbationBatch":
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        return cls(noise, np.sqrt((noise * noise).sum(axis=1)))


def draw_perturbations(rng: np.random.Generator, n: int, dim: int, sigma: float,
                       antithetic: bool = False) -> PerturbationBatch:
    """N Gaussian noise vectors; any with norm below 1e-9 is redrawn."""
    half = n // 2 if antithetic else n
    noise = sigma * rng.standard_normal((half, dim))
    norms = np.sqrt((noise * noise).sum(axis=1))
    for j in np.flatnonzero(norms < MIN_NOISE_NORM):
        while norms[j] < MIN_NOISE_NORM:
            noise[j] = sigma * rng.standard_normal(dim)
            norms[j] = np.sqrt(noise[j] @ noise[j])
    if antithetic:
        noise = np.stack([noise, -noise], axis=1).reshape(n, dim)
    return PerturbationBatch.from_noise(noise)


def _output_fn(model: Union[Model, OutputFn], output: str) -> OutputFn:
    if not isinstance(model, Model):
        return model
    if output == "logits":
        return model.logits
    return model.output


def jit_loss(model: Union[Model, OutputFn], x, batch: PerturbationBatch,
             output: str = "softmax", vectorized: bool = False) -> Tensor:
    """Monte-Carlo smoothing loss at one input ``x``.

    ``model`` may also be any callable mapping an (m, d) Tensor to outputs,
    which is how the identity-map check bypasses the softmax. Terms are
    accumulated in perturbation order.
    """
    if len(batch) == 0:
        raise ConfigError("perturbation batch is empty")
    f = _output_fn(model, output)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if batch.noise.shape[1] != x.shape[1]:
        raise ConfigError("perturbation dimensionality differs from the input")
    n = len(batch)
    inv = 1.0 / batch.norms
    if vectorized:
        out = f(Tensor(np.vstack([x, x + batch.noise])))
        diffs = ad.sub(out[1:], out[np.zeros(n, dtype=np.int64)])
        if diffs.ndim == 1:
            dist = ad.l2_norm(ad.reshape(diffs, (n, 1)), axis=-1)
        else:
            dist = ad.l2_norm(diffs, axis=-1)
        return ad.mul(ad.sum(ad.mul(dist, Tensor(inv))), 1.0 / n)
    clean = f(Tensor(x))
    total = None
    for j in range(n):
        term = ad.mul(ad.l2_norm(ad.sub(clean, f(Tensor(x + batch.noise[j])))), float(inv[j]))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / n)


@dataclass
class UnlearnResult:
    model: Model
    losses: list[float]
    provenance: dict = field(default_factory=dict)


def _forget_inputs(forget) -> np.ndarray:
    # only the inputs are read; labels stay untouched by construction
    x = forget.inputs if isinstance(forget, LabeledDataset) else np.asarray(forget, dtype=np.float64)
    return np.atleast_2d(x)


def jit_unlearn(model: Model, forget, cfg: UnlearnConfig) -> UnlearnResult:
    """Run JiT in place on ``model``: one gradient step per forget sample per epoch.

    ``forget`` is a LabeledDataset (only its inputs are used) or an array of
    inputs. Noise comes from a single stream seeded by ``cfg.seed`` and is
    drawn fresh for every sample in every epoch.
    """
    cfg.validate()
    xs = _forget_inputs(forget)
    if len(xs) == 0:
        raise ConfigError("forget set is empty")
    rng = np.random.default_rng(cfg.seed)
    dim = xs.shape[1]
    losses = []
    for _ in range(cfg.epochs):
        for x in xs:
            batch = draw_perturbations(rng, cfg.n_perturb, dim, cfg.sigma, cfg.antithetic)
            loss = jit_loss(model, x, batch, cfg.output, cfg.vectorized)
            loss.backward()
            sgd_step(model, cfg.eta)
            losses.append(loss.item())
    prov = {"method": "jit", **asdict(cfg), "forget_size": len(xs)}
    return UnlearnResult(model, losses, prov)


# -- comparison methods -------------------------------------------------------
def retrain_oracle(spec: ModelSpec, retain: LabeledDataset, train_cfg: TrainConfig) -> Model:
    """Fresh model from ``spec.seed`` trained on the retain set only."""
    if len(retain) == 0:
        raise ConfigError("retain set is empty")
    model = init_model(spec)
    train_sgd(model, retain, train_cfg)
    return model


def finetune_baseline(model: Model, retain: LabeledDataset, epochs: int = 5, lr: float = 0.05,
                      batch_size: int = 32, seed: int = 0) -> UnlearnResult:
    cfg = TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, shuffle_seed=seed)
    trace = train_sgd(model, retain, cfg) if epochs else []
    return UnlearnResult(model, trace, {"method": "finetune", "epochs": epochs, "lr": lr})


def random_false_labels(labels, n_classes: int, seed: int) -> np.ndarray:
    """A uniformly random label different from each true label."""
    if n_classes < 2:
        raise ConfigError("relabelling needs at least two classes")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    draw = rng.integers(0, n_classes - 1, size=len(labels))
    return draw + (draw >= labels)


def amnesiac_baseline(model: Model, forget: LabeledDataset, retain: LabeledDataset, mislabel_seed: int,
                      epochs: int = 1, lr: float = 0.05, batch_size: int = 32,
                      finetune_epochs: int = 1) -> UnlearnResult:
    """Train on randomly relabelled forget data, then repair on the retain set."""
    c = model.spec.n_classes
    if c < 2:
        raise ConfigError("amnesiac needs at least two classes")
    false = random_false_labels(forget.labels, c, mislabel_seed)
    cfg = TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, shuffle_seed=mislabel_seed)
    trace = train_sgd(model, forget, cfg, labels=false)
    if finetune_epochs:
        trace += finetune_baseline(model, retain, finetune_epochs, lr, batch_size, mislabel_seed + 1).losses
    return UnlearnResult(model, trace, {"method": "amnesiac", "epochs": epochs, "lr": lr})


def _frozen(model: Model) -> Model:
    return Model(model.spec, {k: Tensor(v.data) for k, v in model.params.items()})


def fgsm_false_label(model: Model, x, label: int, eps: float,
                     steps: int = BOUNDARY_SHRINK_STEPS) -> tuple[int, int]:
    """Walk x along the sign of the loss gradient until the prediction leaves ``label``.

    Returns (reached label, steps taken); the reached label equals ``label``
    when no flip happened within ``steps``.
    """
    frozen = _frozen(model)
    xa = np.asarray(x, dtype=np.float64).reshape(1, -1).copy()
    for step in range(steps + 1):
        probs = frozen.class_probs(Tensor(xa))
        pred = int(np.argmax(probs.data[0]))
        if pred != label or step == steps:
            return pred, step
        xt = Tensor(xa, requires_grad=True)
        ad.cross_entropy(frozen.class_probs(xt), np.array([label])).backward()
        xa = xa + eps * np.sign(xt.grad)
    return label, steps


def boundary_shrink_baseline(model: Model, forget: LabeledDataset, fgsm_eps: float,
                             steps: int = BOUNDARY_SHRINK_STEPS, lr: float = 0.05,
                             epochs: int = 1, batch_size: int = 32, seed: int = 0) -> UnlearnResult:
    """Relabel each forget sample with its FGSM-nearest false class and train on those labels."""
    if not fgsm_eps > 0:
        raise ConfigError("fgsm_eps must be positive")
    reached = np.array([fgsm_false_label(model, x, int(y), fgsm_eps, steps)[0]
                        for x, y in zip(forget.inputs, forget.labels)], dtype=np.int64)
    flipped = reached != forget.labels
    skipped = int((~flipped).sum())
    if skipped:
        log.info("boundary shrinking: %d of %d forget samples never flipped; skipped", skipped, len(forget))
    trace = []
    if flipped.any():
        subset = forget.subset(np.flatnonzero(flipped))
        cfg = TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, shuffle_seed=seed)
        trace = train_sgd(model, subset, cfg, labels=reached[flipped])
    prov = {"method": "boundary_shrink", "fgsm_eps": fgsm_eps, "steps": steps,
            "skipped": skipped, "false_labels": reached.tolist()}
    return UnlearnResult(model, trace, prov)


def naive_mislabel(model: Model, forget: LabeledDataset, steps: int = 200, lr: float = 0.5) -> UnlearnResult:
    """Greedily fit each forget sample to its runner-up class with repeated full steps."""
    frozen = _frozen(model)
    probs = frozen.class_probs(Tensor(forget.inputs)).data
    ranked = np.argsort(-probs, axis=1, kind="stable")
    target = np.where(ranked[:, 0] == forget.labels, ranked[:, 1], ranked[:, 0])
    trace = []
    x = Tensor(forget.inputs)
    for _ in range(steps):
        loss = ad.cross_entropy(model.class_probs(x), target)
        loss.backward()
        sgd_step(model, lr)
        trace.append(loss.item())
    return UnlearnResult(model, trace, {"method": "naive_mislabel", "steps": steps, "lr": lr})
