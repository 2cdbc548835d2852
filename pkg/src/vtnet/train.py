"""Toy-scale training: Nesterov-momentum SGD on the synthetic shape task.

The harness trains the reduced token classifier (64x64 input, 3 classes) on
a fixed pool of generated samples, so "train accuracy" is measured on data
the model has seen. Runs are deterministic for a given seed in the default
single-shard mode; optional sharding parallelizes evaluation forwards at
the cost of bit-reproducibility of low-order float bits.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import gen_shapes
from .models import build_vt_resnet, toy_spec
from .nn_ops import check_loss, cross_entropy
from .tensor import Tensor, grad, no_grad

__all__ = ["TrainResult", "train_toy", "eval_accuracy", "sgd_nesterov_step"]

TRAIN_POOL_SIZE = 512
SMOOTH_WINDOW = 50


def clip_gradients(params, grads, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        g = grads[p].data
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            grads[p].data *= scale
    return norm


def sgd_nesterov_step(params, grads, velocity, lr, momentum=0.9):
    """v <- mu*v + g; p <- p - lr*(g + mu*v), per parameter, in place."""
    for name, p in params.items():
        g = grads[p].data
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            velocity[name] = v
        v *= momentum
        v += g
        p.data -= lr * (g + momentum * v)


def eval_accuracy(model, images, labels, batch=64, shards=1):
    """Fraction of correct argmax predictions in eval mode."""
    starts = range(0, len(images), batch)

    def run(start):
        with no_grad():
            logits = model.forward(Tensor(images[start:start + batch]), training=False)
        return (logits.data.argmax(axis=1) == labels[start:start + batch]).sum()

    if shards > 1:
        with ThreadPoolExecutor(max_workers=shards) as pool:
            correct = sum(pool.map(run, starts))
    else:
        correct = sum(run(s) for s in starts)
    return correct / len(images)


@dataclass
class TrainResult:
    model: object
    losses: list
    accuracy: float
    initial_loss: float = float("nan")
    final_smoothed_loss: float = float("nan")
    steps_run: int = 0
    extra: dict = field(default_factory=dict)


def _smoothed(losses, window=SMOOTH_WINDOW):
    if not losses:
        return float("nan")
    tail = losses[-window:]
    return float(np.mean(tail))


def train_toy(spec=None, steps=2000, lr=0.05, batch=32, seed=0,
              clip_norm=2.0, early_stop_acc=None, log_every=0, model=None):
    """Train the reduced token classifier on the synthetic shapes.

    Returns the trained model, the per-step loss trace, and accuracy over
    the 512-sample training pool. Gradients are clipped to a global norm of
    ``clip_norm`` (the token path has no normalization layers, so unclipped
    steps at this learning rate diverge). ``early_stop_acc`` stops once the
    pool accuracy reaches the target and the smoothed loss has at least
    halved, checked every 100 steps. A non-finite loss aborts with a
    diagnostic.
    """
    spec = spec or toy_spec()
    if model is None:
        model = build_vt_resnet(spec, seed=seed)
    params = model.param_dict()
    samples = gen_shapes(seed, TRAIN_POOL_SIZE)
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples])

    rng = np.random.default_rng(seed)
    velocity = {}
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(images), size=batch)
        logits = model.forward(Tensor(images[idx]), training=True)
        loss = cross_entropy(logits, labels[idx])
        value = check_loss(loss, f"at step {step}")
        losses.append(value)
        grads = grad(loss, params.values(), allow_unused=True)
        if clip_norm:
            clip_gradients(params, grads, clip_norm)
        sgd_nesterov_step(params, grads, velocity, lr)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1:5d}  loss {value:.4f}")
        if early_stop_acc and (step + 1) % 100 == 0:
            smoothed = _smoothed(losses)
            if smoothed < 0.5 * np.mean(losses[:SMOOTH_WINDOW]):
                acc = eval_accuracy(model, images, labels)
                if acc >= early_stop_acc:
                    break

    accuracy = eval_accuracy(model, images, labels)
    initial_loss = float(np.mean(losses[:SMOOTH_WINDOW])) if losses else float("nan")
    return TrainResult(model=model, losses=losses, accuracy=accuracy,
                       initial_loss=initial_loss,
                       final_smoothed_loss=_smoothed(losses),
                       steps_run=len(losses))
