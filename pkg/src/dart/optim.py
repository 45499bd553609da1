"""Losses, their gradients and the training loop for material fitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .materials import MaterialModel
from .precompute import Precomputed
from .raytrace import make_rng
from .spectral import SolverConfig
from .transport import ReceiverConfig, Renderer, SourceConfig, trace_pair

STREAM_FIT = 21
DECAYED = ("alpha_logit", "Z", "beta_logit")
LOG_COLUMNS = ("step", "lr", "nmse", "edc", "object", "symmetry", "total", "val_l1")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    nmse: float
    edc: float
    object: float
    symmetry: float

    @property
    def total(self) -> float:
        return self.nmse + self.edc + self.object + self.symmetry


# --------------------------------------------------------------------------
# echogram losses: each returns (value, gradient w.r.t. pred)


def _truth_norm(truth, power):
    n = float(np.sum(np.abs(truth) ** power))
    if n <= 0:
        raise ValueError("ground-truth echogram is all zero")
    return n


def loss_nmse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("echograms differ in length")
    norm = _truth_norm(truth, 2)
    diff = pred - truth
    return float(diff @ diff) / norm, 2.0 * diff / norm


def energy_decay(e):
    return np.cumsum(np.asarray(e, dtype=np.float64)[::-1])[::-1]


def loss_edc(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("echograms differ in length")
    ct = energy_decay(truth)
    norm = _truth_norm(ct, 1)
    diff = energy_decay(pred) - ct
    # adjoint of a suffix sum is a prefix sum
    return float(np.abs(diff).sum()) / norm, np.cumsum(np.sign(diff)) / norm


# --------------------------------------------------------------------------
# material regularizers on Mhat (n_pat, n_dir, n_dir)


def loss_object(mhat, group):
    """Mean absolute deviation of each patch matrix from its group mean."""
    mhat = np.asarray(mhat, dtype=np.float64)
    n_pat, nd = mhat.shape[0], mhat.shape[1]
    _, gid = np.unique(np.asarray(group), return_inverse=True)
    count = np.bincount(gid).astype(np.float64)
    flat = mhat.reshape(n_pat, -1)
    sums = np.zeros((count.size, flat.shape[1]))
    np.add.at(sums, gid, flat)
    mean = sums / count[:, None]
    dev = flat - mean[gid]
    scale = 1.0 / (n_pat * nd * nd)
    s = np.sign(dev) * scale
    ssum = np.zeros_like(sums)
    np.add.at(ssum, gid, s)
    grad = s - (ssum / count[:, None])[gid]
    return float(np.abs(dev).sum()) * scale, grad.reshape(mhat.shape)


def _rotate(t, j):
    return np.roll(np.roll(t, j, axis=2), j, axis=4)


def _flip(t, j, n_azi):
    perm = (j - np.arange(n_azi)) % n_azi
    return t[:, :, perm][:, :, :, :, perm]


def loss_symmetry(mhat, n_ele: int, n_azi: int, rotation=None, flip=None):
    """Azimuthal rotation plus flip equivariance penalty.

    ``rotation`` and ``flip`` are the azimuth shift / flip axis; ``None``
    averages over all of them (the exact expectation).
    """
    mhat = np.asarray(mhat, dtype=np.float64)
    n_pat = mhat.shape[0]
    t = mhat.reshape(n_pat, n_ele, n_azi, n_ele, n_azi)
    scale = 1.0 / (n_pat * (n_ele * n_azi) ** 2)
    rot = range(n_azi) if rotation is None else [int(rotation)]
    fl = range(n_azi) if flip is None else [int(flip)]
    value = 0.0
    grad = np.zeros_like(t)
    for j in rot:
        d = _rotate(t, j) - t
        s = np.sign(d) * (scale / len(rot))
        value += np.abs(d).sum() * scale / len(rot)
        grad += _rotate(s, -j) - s
    for j in fl:
        d = _flip(t, j, n_azi) - t
        s = np.sign(d) * (scale / len(fl))
        value += np.abs(d).sum() * scale / len(fl)
        grad += _flip(s, j, n_azi) - s
    return float(value), grad.reshape(mhat.shape)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    nmse: float = 1.0
    edc: float = 1.0
    object: float = 1.0
    symmetry: float = 1.0


def material_losses(model: MaterialModel, mhat, group, grid, weights: LossWeights, rng=None):
    """Object and (NP only) symmetry terms with their gradient w.r.t. Mhat."""
    obj, gobj = loss_object(mhat, group)
    mbar = weights.object * gobj
    sym = 0.0
    if model.variant == "np" and weights.symmetry != 0.0:
        if rng is None:
            sym, gsym = loss_symmetry(mhat, grid.n_ele, grid.n_azi)
        else:
            jr, jf = rng.integers(0, grid.n_azi, size=2)
            sym, gsym = loss_symmetry(mhat, grid.n_ele, grid.n_azi, jr, jf)
        mbar = mbar + weights.symmetry * gsym
    return weights.object * obj, weights.symmetry * sym if model.variant == "np" else 0.0, mbar


def loss_and_grad(renderer: Renderer, model: MaterialModel, pair: int, truth,
                  weights: LossWeights = LossWeights(), rng=None, with_material: bool = True):
    """Total loss of one measurement and gradients for every parameter."""
    pre = renderer.pre
    mhat = model.realize()
    res = renderer.forward(model, pair, mhat=mhat, keep=True)
    nm, gnm = loss_nmse(res.energy, truth)
    ed, ged = loss_edc(res.energy, truth)
    ebar = weights.nmse * gnm + weights.edc * ged
    grads = renderer.backward(model, res, ebar)
    obj = sym = 0.0
    if with_material:
        obj, sym, mbar = material_losses(model, mhat, pre.patches.group, pre.grid, weights, rng)
        for k, v in model.realize_backward(mbar).items():
            grads[k] = grads[k] + v
    lb = LossBreakdown(weights.nmse * nm, weights.edc * ed, obj, sym)
    return lb, grads, res


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamW:
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    decayed: tuple = DECAYED
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        for k, g in grads.items():
            p = params[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            if k in self.decayed and self.weight_decay:
                p = p * (1.0 - lr * self.weight_decay)
            params[k] = p - lr * mhat / (np.sqrt(vhat) + self.eps)


def cosine_lr(base: float, step: int, steps: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / steps)) if steps > 0 else base


@dataclass(frozen=True)
class FitConfig:
    steps: int = 25000
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-2
    n_validations: int = 25
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass(frozen=True)
class Measurement:
    source: SourceConfig
    receiver: ReceiverConfig
    echogram: np.ndarray
    id: str = ""


@dataclass
class FitResult:
    best: MaterialModel
    final: MaterialModel
    log: list
    step_losses: list
    best_step: int


def evaluate(renderer: Renderer, model: MaterialModel, pairs, truths, weights: LossWeights):
    """Mean loss breakdown (exact symmetry expectation) and mean L1 over pairs."""
    mhat = model.realize()
    parts = np.zeros(4)
    l1 = 0.0
    obj, sym, _ = material_losses(model, mhat, renderer.pre.patches.group, renderer.pre.grid, weights)
    for p, t in zip(pairs, truths):
        e = renderer.forward(model, p, mhat=mhat).energy
        parts[0] += weights.nmse * loss_nmse(e, t)[0]
        parts[1] += weights.edc * loss_edc(e, t)[0]
        l1 += float(np.abs(e - t).sum())
    n = max(len(pairs), 1)
    return LossBreakdown(parts[0] / n, parts[1] / n, obj, sym), l1 / n


def fit(pre: Precomputed, model: MaterialModel, train, config: FitConfig = FitConfig(),
        solver: SolverConfig = SolverConfig(), validation=(), seed: int = 0,
        log_path=None, progress=None) -> FitResult:
    """Fit material parameters to measured echograms with AdamW and cosine decay.

    One measurement is used per step, cycling through shuffled epochs.
    Every ``steps / n_validations`` steps the training and validation losses
    are evaluated; the parameters with the lowest validation L1 (training
    total when there is no validation set) are returned as ``best``.
    """
    train = list(train)
    validation = list(validation)
    if not train:
        raise ValueError("fitting needs at least one training measurement")
    everything = train + validation
    n_kappa = model.params["kappa"].size
    traces = [trace_pair(pre, m.source, m.receiver, seed, k, n_kappa) for k, m in enumerate(everything)]
    renderer = Renderer(pre, model.pattern(), traces, solver, reduced=True)
    tr_idx = list(range(len(train)))
    va_idx = list(range(len(train), len(everything)))
    truths = [np.asarray(m.echogram, dtype=np.float64) for m in everything]
    w = config.weights
    model = model.copy()
    opt = AdamW(config.lr, tuple(config.betas), weight_decay=config.weight_decay)
    rng = make_rng(seed, STREAM_FIT, 0)
    every = max(1, config.steps // max(config.n_validations, 1))
    log, step_losses = [], []
    state = {"best": None, "score": math.inf, "step": 0}

    def validate(step, lr):
        lb, _ = evaluate(renderer, model, tr_idx, [truths[i] for i in tr_idx], w)
        if va_idx:
            _, score = evaluate(renderer, model, va_idx, [truths[i] for i in va_idx], w)
        else:
            score = lb.total
        row = dict(step=step, lr=lr, nmse=lb.nmse, edc=lb.edc, object=lb.object,
                   symmetry=lb.symmetry, total=lb.total, val_l1=score)
        log.append(row)
        if score < state["score"] or state["best"] is None:
            state.update(best=model.copy(), score=score, step=step)
        if progress:
            progress(row)

    validate(0, cosine_lr(config.lr, 0, config.steps))
    order = []
    for step in range(config.steps):
        if not order:
            order = list(rng.permutation(tr_idx))
        pair = int(order.pop(0))
        lr = cosine_lr(config.lr, step, config.steps)
        lb, grads, _ = loss_and_grad(renderer, model, pair, truths[pair], w, rng)
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad or not math.isfinite(lb.total):
            raise DivergenceError(f"non-finite loss or gradient at step {step} "
                                  f"(loss {lb.total}, parameters {bad})")
        step_losses.append(lb.total)
        opt.step(model.params, grads, lr)
        if (step + 1) % every == 0 or step + 1 == config.steps:
            validate(step + 1, cosine_lr(config.lr, step + 1, config.steps))
    if log_path is not None:
        write_log(log, log_path)
    return FitResult(state["best"], model, log, step_losses, state["step"])


def write_log(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(LOG_COLUMNS)
        for r in rows:
            wr.writerow([r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
