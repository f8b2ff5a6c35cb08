"""Loss, hand-written adjoint gradients, optimizers and the training loop.

The task loss is the mean squared error between the log-softmax of the
detector reading and a 0/1 target over detector cells.  The full objective is

    sum_t lambda_t * L_t  +  lambda_L2 * (lambda_2 / lambda_1) * sum(theta_branch ** 2)

Gradients are propagated backwards by hand.  With ``G = dL/dRe(z) + j dL/dIm(z)``
for a complex intermediate ``z``:

* intensity ``I = |z|^2``:          ``G_z = 2 * dL/dI * z``
* linear map ``z = A w``:           ``G_w = A^H G_z`` (propagation: filter by ``conj(H)``)
* modulation ``b = a exp(j theta)``: ``G_a = exp(-j theta) G_b``,
  ``dL/dtheta = -Im(conj(G_b) * b)``
"""

import json
import logging
import time
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.special import log_softmax, softmax

from mtd2nn.dataio import Encoding, encode_input
from mtd2nn.detector import decide, encode_target, read, read_adjoint
from mtd2nn.field import propagate_adjoint
from mtd2nn.network import forward, forward_cached

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "GradientSet", "LossGrad", "task_loss", "task_loss_grad",
           "total_loss", "loss_and_grad", "backward", "adam_init", "adam_step",
           "paper_rule_step", "evaluate", "predict", "train", "TrainResult", "DivergenceError"]

UPDATE_RULES = ("adam-autograd", "paper-rule-sgd")


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lambdas: tuple = (1.0, 1.0)
    lambda_l2: float = 1e-4
    eta: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    update_rule: str = "adam-autograd"
    train_size: int = 0
    test_size: int = 0

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self):
        errors = []
        if not self.lambdas or any(not x > 0 for x in self.lambdas):
            errors.append("every task weight lambda must be > 0")
        if self.lambda_l2 < 0:
            errors.append("lambda_l2 must be >= 0")
        if not self.eta > 0:
            errors.append("eta must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"{name} must lie in [0, 1)")
        if not self.adam_eps > 0:
            errors.append("adam_eps must be > 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.update_rule not in UPDATE_RULES:
            errors.append(f"update_rule must be one of {UPDATE_RULES}")
        return errors

    @property
    def lambda1(self):
        return self.lambdas[0]

    @property
    def lambda2(self):
        return self.lambdas[1] if len(self.lambdas) > 1 else self.lambdas[0]

    @property
    def reg_scale(self):
        """Coefficient of the squared branch-mask norm."""
        return self.lambda_l2 * self.lambda2 / self.lambda1

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


@dataclass
class GradientSet:
    """One real gradient array per phase mask, mirroring the model layout."""

    shared: list
    branches: list

    def flat(self):
        return list(self.shared) + [g for b in self.branches for g in b]

    @classmethod
    def zeros_like(cls, model):
        return cls([np.zeros_like(m) for m in model.shared],
                   [[np.zeros_like(m) for m in b] for b in model.branches])

    def scaled_add(self, other, scale):
        for a, b in zip(self.shared, other.shared):
            a += scale * b
        for ba, bb in zip(self.branches, other.branches):
            for a, b in zip(ba, bb):
                a += scale * b

    def check_finite(self):
        for i, g in enumerate(self.flat()):
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in mask {i} (declaration order)")


def _as_target(target, reading):
    target = np.asarray(target, dtype=np.float64)
    if target.shape[-1] != reading.shape[-1] or reading.shape[-1] == 0:
        raise ValueError(f"reading length {reading.shape[-1]} vs target length {target.shape[-1]}")
    return np.broadcast_to(target, reading.shape)


def task_loss(reading, target):
    """``mean((log_softmax(reading) - target) ** 2)`` over all samples and cells."""
    reading = np.asarray(reading, dtype=np.float64)
    target = _as_target(target, reading)
    return float(np.mean((log_softmax(reading, axis=-1) - target) ** 2))


def task_loss_grad(reading, target):
    """Loss value and its gradient with respect to the reading."""
    reading = np.asarray(reading, dtype=np.float64)
    target = _as_target(target, reading)
    y = log_softmax(reading, axis=-1)
    resid = y - target
    g_y = 2 * resid / resid.size
    g_r = g_y - softmax(reading, axis=-1) * g_y.sum(axis=-1, keepdims=True)
    return float(np.mean(resid ** 2)), g_r


def _fields(batch, model, encoding):
    x, labels = batch
    x = np.asarray(x)
    if not np.iscomplexobj(x) and x.dtype == np.uint8:
        x = encode_input(x, model.spec, encoding)
    return x, np.asarray(labels)


def regularizer(model, cfg):
    return cfg.reg_scale * sum(float(np.sum(m * m)) for b in model.branches for m in b)


def total_loss(model, batches, cfg, encoding=Encoding()):
    """Weighted task losses plus the branch-mask penalty.

    ``batches[t]`` is ``(inputs, labels)`` for task ``t``; inputs are complex
    fields or raw uint8 images (encoded with ``encoding``).
    """
    codecs = model.codecs
    _check_batches(batches, model, cfg)
    value = 0.0
    for t, batch in enumerate(batches):
        x, labels = _fields(batch, model, encoding)
        reading = read(forward(model, x), model.layout)
        value += cfg.lambdas[t] * task_loss(reading, encode_target(codecs[t], labels))
    return value + regularizer(model, cfg)


def _check_batches(batches, model, cfg):
    if len(batches) != model.n_tasks:
        raise ValueError(f"expected {model.n_tasks} task batches, got {len(batches)}")
    if len(cfg.lambdas) != model.n_tasks:
        raise ValueError(f"{model.n_tasks} tasks but {len(cfg.lambdas)} lambdas")
    for x, labels in batches:
        if len(labels) == 0:
            raise ValueError("empty batch")


def _backprop(model, cache, g_intensity):
    """Mask gradients given ``dL/dI`` on the detector plane."""
    spec = model.spec
    grads = GradientSet.zeros_like(model)
    G = propagate_adjoint(2 * g_intensity * cache["z"], spec)
    g_hop = 0
    for t, masks in enumerate(model.branches):
        fields = cache["branches"][t]
        Gb = G
        for j in range(len(masks) - 1, -1, -1):
            b = fields[j]
            grads.branches[t][j] = -np.imag(np.conj(Gb) * b).reshape(-1, *spec.shape).sum(0)
            Ga = Gb * np.exp(-1j * masks[j])
            Gb = propagate_adjoint(Ga, spec) if j else Ga
        g_hop = g_hop + cache["fractions"][t] * Gb
    Gu = propagate_adjoint(g_hop, spec)
    for i in range(len(model.shared) - 1, -1, -1):
        u = cache["trunk"][i]
        grads.shared[i] = -np.imag(np.conj(Gu) * u).reshape(-1, *spec.shape).sum(0)
        if i == 0 and model.input_modulation:
            break
        Gu = propagate_adjoint(Gu * np.exp(-1j * model.shared[i]), spec)
    return grads


@dataclass
class LossGrad:
    total: float
    task_losses: list
    grads: GradientSet
    task_grads: list
    reg_grads: GradientSet


def loss_and_grad(model, batches, cfg, encoding=Encoding()):
    """Objective, its exact gradient, and the per-task (unweighted) pieces."""
    _check_batches(batches, model, cfg)
    codecs = model.codecs
    task_losses, task_grads = [], []
    for t, batch in enumerate(batches):
        x, labels = _fields(batch, model, encoding)
        intensity, cache = forward_cached(model, x)
        reading = read(intensity, model.layout)
        loss, g_r = task_loss_grad(reading, encode_target(codecs[t], labels))
        if not (np.isfinite(loss) and np.all(np.isfinite(g_r))):
            raise DivergenceError(f"non-finite loss for task {t + 1}")
        g_I = read_adjoint(g_r, model.layout, model.spec.shape)
        task_losses.append(loss)
        task_grads.append(_backprop(model, cache, g_I))
    reg = GradientSet([np.zeros_like(m) for m in model.shared],
                      [[2 * cfg.reg_scale * m for m in b] for b in model.branches])
    grads = GradientSet.zeros_like(model)
    for t, g in enumerate(task_grads):
        grads.scaled_add(g, cfg.lambdas[t])
    grads.scaled_add(reg, 1.0)
    grads.check_finite()
    total = sum(w * l for w, l in zip(cfg.lambdas, task_losses)) + regularizer(model, cfg)
    return LossGrad(total, task_losses, grads, task_grads, reg)


def backward(model, batches, cfg, encoding=Encoding()):
    """Exact gradient of :func:`total_loss` with respect to every mask."""
    return loss_and_grad(model, batches, cfg, encoding).grads


def adam_init(model):
    return {"step": 0, "m": [np.zeros_like(p) for p in model.masks()],
            "v": [np.zeros_like(p) for p in model.masks()]}


def adam_step(model, grads, cfg, state):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    params = model.masks()
    flat = grads.flat() if isinstance(grads, GradientSet) else list(grads)
    if len(flat) != len(params) or len(state["m"]) != len(params):
        raise ValueError("gradient / optimizer state does not match the model")
    step = state["step"] + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, flat, state["m"], state["v"]):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params.append(p - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return model.with_masks(new_params), {"step": step, "m": new_m, "v": new_v}


def paper_rule_step(model, task_grads, cfg):
    """Plain-SGD update in the printed two-task form.

    ``task_grads[t]`` holds the gradient of the unweighted loss of task ``t``.
    Shared masks move by ``-(eta / 2) (lambda2 / lambda1) sum_t grad_t``; branch
    ``t`` moves by ``-eta grad_t - 2 eta lambda_L2 sum_t' theta_t'`` where the
    penalty sums the same-depth mask of every branch.
    """
    if len(task_grads) != model.n_tasks:
        raise ValueError(f"need one gradient set per task, got {len(task_grads)}")
    for g in task_grads:
        if len(g.shared) != len(model.shared) or any(
                a.shape != m.shape for a, m in zip(g.flat(), model.masks())):
            raise ValueError("gradient shapes do not match the model")
    ratio = cfg.lambda2 / cfg.lambda1
    shared = [m - 0.5 * cfg.eta * ratio * sum(g.shared[i] for g in task_grads)
              for i, m in enumerate(model.shared)]
    depth = len(model.branches[0])
    coupling = [sum(b[j] for b in model.branches) for j in range(depth)]
    branches = [[m - cfg.eta * task_grads[t].branches[t][j]
                 - 2 * cfg.eta * cfg.lambda_l2 * coupling[j]
                 for j, m in enumerate(b)] for t, b in enumerate(model.branches)]
    return model.with_masks(shared + [m for b in branches for m in b])


def predict(model, images, codec, encoding=Encoding(), batch_size=256, transform=None):
    """Class decisions for uint8 images; ``transform`` may alter each intensity batch."""
    preds = []
    for start in range(0, len(images), batch_size):
        x = encode_input(images[start:start + batch_size], model.spec, encoding)
        intensity = forward(model, x)
        if transform is not None:
            intensity = transform(intensity, start)
        preds.append(decide(read(intensity, model.layout), codec))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.intp)


def evaluate(model, dataset, codec, encoding=Encoding(), batch_size=256):
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict(model, dataset.images, codec, encoding, batch_size)
    return float(np.mean(preds == dataset.labels))


@dataclass
class TrainResult:
    model: object
    optimizer_state: dict
    metrics: list = field(default_factory=list)


def train(model, train_sets, test_sets, cfg, encoding=Encoding(), metric_log=None,
          callback=None):
    """Interleaved multi-task training.

    Every step draws one mini-batch per task and applies one update to the
    weighted sum of their losses.  After each epoch the test accuracy of every
    task is recorded; with ``metric_log`` each record is appended as one JSON
    line.
    """
    if len(train_sets) != model.n_tasks or len(test_sets) != model.n_tasks:
        raise ValueError("need one train and one test set per task")
    state = adam_init(model)
    metrics = []
    if cfg.epochs == 0:
        return TrainResult(model, state, metrics)
    codecs = model.codecs
    n_steps = min(len(d) for d in train_sets) // cfg.batch_size
    if n_steps == 0:
        raise ValueError("training sets are smaller than one batch")
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        orders = [rng.permutation(len(d)) for d in train_sets]
        sums = np.zeros(model.n_tasks)
        for step in range(n_steps):
            batches = []
            for d, order in zip(train_sets, orders):
                idx = np.sort(order[step * cfg.batch_size:(step + 1) * cfg.batch_size])
                batches.append((d.images[idx], d.labels[idx]))
            lg = loss_and_grad(model, batches, cfg, encoding)
            if not np.isfinite(lg.total):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, step {step + 1}")
            sums += lg.task_losses
            if cfg.update_rule == "adam-autograd":
                model, state = adam_step(model, lg.grads, cfg, state)
            else:
                model = paper_rule_step(model, lg.task_grads, cfg)
        accs = [evaluate(model, d, c, encoding) for d, c in zip(test_sets, codecs)]
        record = {"epoch": epoch + 1, "train_loss": (sums / n_steps).tolist(),
                  "test_accuracy": accs, "wall_time": time.perf_counter() - start}
        metrics.append(record)
        log.info("epoch %d loss %s acc %s (%.1fs)", epoch + 1,
                 np.round(record["train_loss"], 5).tolist(), np.round(accs, 4).tolist(),
                 record["wall_time"])
        if metric_log is not None:
            with open(metric_log, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if callback is not None:
            callback(epoch, model, state, record)
    return TrainResult(model, state, metrics)
