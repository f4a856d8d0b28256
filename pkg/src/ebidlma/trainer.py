"""Desk-scale source networks and their training.

The Gauss network maps mixture magnitude frames (with context) to a scale
``sigma_hat`` per bin. The EB network shares a three-block trunk and splits
into a scale head ``r_hat`` and a weight head ``rho`` whose softmax over the
anchor set gives ``nu_hat = sum_k rho_k * k``. Every block is
affine -> ReLU -> dropout, except the last block of each head which has no
dropout and ends in ReLU (scales) or softmax (anchor weights).

Gradients are computed analytically; the optimizer is plain gradient descent
with gradient-norm clipping and weight decay.
"""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._npz import save_npz
from .config import KINDS, NU_MODES, TrainConfig
from .errors import ConfigError, NumericalError
from .sourcemodel import DEFAULT_ANCHORS, DEFAULT_DELTA, AnchorSet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ebidlma-checkpoint-v1"


@dataclass(frozen=True)
class NetworkArchitecture:
    kind: str = "eb"
    n_bins: int = 33
    context: int = 3
    hidden: int = 64
    anchors: tuple = DEFAULT_ANCHORS
    nu_mode: str = "anchors"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"network kind must be one of {KINDS}")
        if self.nu_mode not in NU_MODES:
            raise ConfigError(f"nu_mode must be one of {NU_MODES}")
        if self.n_bins < 1 or self.context < 0 or self.hidden < 1:
            raise ConfigError("n_bins, hidden must be >= 1 and context >= 0")
        object.__setattr__(self, "anchors", AnchorSet(tuple(self.anchors)).anchors)

    @property
    def input_dim(self):
        return self.n_bins * (2 * self.context + 1)

    @property
    def anchor_set(self):
        return AnchorSet(self.anchors)

    def layers(self):
        """``(name, fan_in, fan_out, activation, dropout)`` in forward order."""
        h, I, K = self.hidden, self.n_bins, len(self.anchors)
        trunk = [("trunk.0", self.input_dim, h, "relu", True), ("trunk.1", h, h, "relu", True),
                 ("trunk.2", h, h, "relu", True)]
        if self.kind == "gauss":
            return trunk, {"sigma": [("sigma.0", h, h, "relu", True), ("sigma.1", h, I, "relu", False)]}
        nu_out = ("nu.1", h, I * K, "softmax", False) if self.nu_mode == "anchors" else (
            "nu.1", h, I, "relu", False)
        return trunk, {
            "r": [("r.0", h, h, "relu", True), ("r.1", h, I, "relu", False)],
            "nu": [("nu.0", h, h, "relu", True), nu_out],
        }


def init_params(arch, rng):
    """He-normal weights, zero biases; scale heads start with a small positive bias."""
    trunk, heads = arch.layers()
    params = {}
    for name, fan_in, fan_out, act, _ in trunk + [l for h in heads.values() for l in h]:
        params[name + ".W"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params[name + ".b"] = np.full(fan_out, 0.1 if name in ("sigma.1", "r.1") else 0.0)
    return params


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _run_blocks(params, blocks, h, dropout_rate, rng, cache):
    for name, _, _, act, drop in blocks:
        z = h @ params[name + ".W"] + params[name + ".b"]
        mask = None
        if act == "relu":
            h = np.maximum(z, 0.0)
            if drop and dropout_rate > 0 and rng is not None:
                mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
                h = h * mask
        else:
            h = z
        cache.append((name, act, z, mask))
    return h


def forward(params, arch, x, dropout_rate=0.0, rng=None):
    """Evaluate the network on a batch of feature rows.

    Dropout is applied only when ``rng`` is given and ``dropout_rate > 0``.

    Returns
    -------
    outputs : dict
        ``sigma`` (Gauss) or ``r``, ``nu`` and, in anchor mode, ``rho``
        of shape ``(batch, n_bins[, n_anchors])``.
    cache : dict
        Intermediate values for :func:`backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ConfigError(f"input width {x.shape[-1]} does not match network input {arch.input_dim}")
    trunk, heads = arch.layers()
    cache = {"x": x, "trunk": []}
    h = _run_blocks(params, trunk, x, dropout_rate, rng, cache["trunk"])
    cache["h"] = h
    out = {}
    for head, blocks in heads.items():
        cache[head] = []
        z = _run_blocks(params, blocks, h, dropout_rate, rng, cache[head])
        if head == "nu" and arch.nu_mode == "anchors":
            k = arch.anchor_set.values
            rho = _softmax(z.reshape(len(x), arch.n_bins, k.size))
            out["rho"] = rho
            out["nu"] = rho @ k
        elif head == "nu":
            k = arch.anchor_set
            out["nu"] = np.clip(z, k.min, k.max)
            cache["nu_raw"] = z
        else:
            out[head] = z
    cache["out"] = out
    return out, cache


def backward(params, arch, cache, d_out):
    """Backpropagate output gradients ``d_out`` (keys as in :func:`forward`).

    ``d_out`` holds ``dL/dsigma`` or ``dL/dr`` and ``dL/dnu``. Returns a
    dict of parameter gradients with the same keys as ``params``.
    """
    trunk, heads = arch.layers()
    grads = {}
    dh = np.zeros_like(cache["h"])
    for head, blocks in heads.items():
        if head == "nu":
            d_nu = d_out["nu"]
            if arch.nu_mode == "anchors":
                rho = cache["out"]["rho"]
                g_rho = d_nu[..., None] * arch.anchor_set.values
                g = rho * (g_rho - np.sum(rho * g_rho, axis=-1, keepdims=True))
                g = g.reshape(len(g), -1)
            else:
                k = arch.anchor_set
                raw = cache["nu_raw"]
                g = d_nu * ((raw >= k.min) & (raw <= k.max))
        else:
            g = d_out[head]
        dh += _backprop_chain(params, blocks, cache[head], cache["h"], g, grads)
    _backprop_chain(params, trunk, cache["trunk"], cache["x"], dh, grads)
    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite gradient in layer {name.rsplit('.', 1)[0]}")
    return grads


def _backprop_chain(params, blocks, records, x, g, grads):
    """Gradient w.r.t. the chain input; parameter gradients go into ``grads``."""
    inputs = [x] + [_block_output(r) for r in records[:-1]]
    for (name, _, _, act, _), (_, _, z, mask), h_in in zip(
        reversed(blocks), reversed(records), reversed(inputs)
    ):
        if act == "relu":
            if mask is not None:
                g = g * mask
            g = g * (z > 0)
        grads[name + ".W"] = h_in.T @ g
        grads[name + ".b"] = g.sum(axis=0)
        g = g @ params[name + ".W"].T
    return g


def _block_output(record):
    _, act, z, mask = record
    h = np.maximum(z, 0.0) if act == "relu" else z
    return h * mask if mask is not None else h


def loss_gauss(sigma_hat, target_power, delta=DEFAULT_DELTA):
    """Itakura-Saito divergence between ``|s|^2 + delta`` and ``sigma_hat^2 + delta``."""
    ratio = (np.asarray(target_power) + delta) / (np.asarray(sigma_hat) ** 2 + delta)
    return float(np.sum(ratio - np.log(ratio) - 1.0))


def loss_gauss_grad(sigma_hat, target_power, delta=DEFAULT_DELTA):
    q = sigma_hat**2 + delta
    ratio = (target_power + delta) / q
    loss = np.sum(ratio - np.log(ratio) - 1.0)
    return float(loss), {"sigma": -(ratio - 1.0) * 2.0 * sigma_hat / q}


def loss_eb(r_hat, nu_hat, target_power, delta=DEFAULT_DELTA):
    """Empirical-Bayes training loss (negative marginal log-likelihood)."""
    q = np.asarray(r_hat) ** 2 + delta
    nu = np.asarray(nu_hat, dtype=float)
    t = 2.0 * (np.asarray(target_power) + delta) / (nu * q)
    return float(np.sum(np.log(q) + (1.0 + nu / 2.0) * np.log1p(t)))


def loss_eb_grad(r_hat, nu_hat, target_power, delta=DEFAULT_DELTA):
    q = r_hat**2 + delta
    t = 2.0 * (target_power + delta) / (nu_hat * q)
    c = 1.0 + nu_hat / 2.0
    loss = np.sum(np.log(q) + c * np.log1p(t))
    d_r = (2.0 * r_hat / q) * (1.0 - c * t / (1.0 + t))
    d_nu = 0.5 * np.log1p(t) - c * t / ((1.0 + t) * nu_hat)
    return float(loss), {"r": d_r, "nu": d_nu}


def loss_and_grad(params, arch, x, target_power, delta=DEFAULT_DELTA, dropout_rate=0.0, rng=None):
    """Mean per-sample loss over the batch and its parameter gradients."""
    out, cache = forward(params, arch, x, dropout_rate, rng)
    B = len(x)
    if arch.kind == "gauss":
        loss, d_out = loss_gauss_grad(out["sigma"], target_power, delta)
    else:
        loss, d_out = loss_eb_grad(out["r"], out["nu"], target_power, delta)
    d_out = {k: v / B for k, v in d_out.items()}
    return loss / B, backward(params, arch, cache, d_out)


def clip_gradients(grads, max_norm):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
    if norm > max_norm:
        grads = {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads, norm


def sgd_step(params, grads, lr, weight_decay):
    return {k: p - lr * (grads[k] + weight_decay * p) for k, p in params.items()}


def context_features(magnitude, context):
    """Stack each frame with ``context`` neighbours per side (zero padded).

    ``magnitude`` is ``(n_bins, n_frames)``; returns ``(n_frames, n_bins * (2c+1))``.
    """
    I, J = magnitude.shape
    padded = np.zeros((I, J + 2 * context))
    padded[:, context : context + J] = magnitude
    cols = [padded[:, k : k + J] for k in range(2 * context + 1)]
    return np.concatenate(cols, axis=0).T.copy()


class SourceNetwork:
    """Trained parameters plus architecture; usable as a source model."""

    def __init__(self, params, arch, stft=None):
        self.params = params
        self.arch = arch
        self.stft = stft

    def predict(self, magnitude):
        feats = context_features(np.asarray(magnitude, dtype=float), self.arch.context)
        out, _ = forward(self.params, self.arch, feats)
        return {k: np.moveaxis(v, 0, 1) for k, v in out.items()}

    def save(self, path):
        meta = {"format": CHECKPOINT_FORMAT, "arch": asdict(self.arch), "stft": self.stft}
        save_npz(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data:
                raise ConfigError(f"{path}: not a checkpoint (missing metadata)")
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
            params = {k: np.asarray(data[k]) for k in data.files if k != "__meta__"}
        arch = dict(meta["arch"])
        arch["anchors"] = tuple(arch["anchors"])
        net = cls(params, NetworkArchitecture(**arch), meta.get("stft"))
        expected = set(init_params(net.arch, np.random.default_rng(0)))
        if set(params) != expected:
            raise ConfigError(f"{path}: parameter names do not match the architecture")
        return net


@dataclass
class TrainingPair:
    """Complex spectrograms ``(n_bins, n_frames)`` of a target and an interferer."""

    target: np.ndarray
    interferer: np.ndarray


@dataclass
class TrainResult:
    network: SourceNetwork
    loss_curve: list = field(default_factory=list)

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss"])
            writer.writeheader()
            writer.writerows(self.loss_curve)


def _mix_pairs(pairs, cfg, rng, context):
    feats, targets = [], []
    lo, hi = cfg.target_gain
    a, b = cfg.interferer_beta
    for p in pairs:
        g_t = rng.uniform(lo, hi)
        g_i = rng.beta(a, b)
        mix = g_t * p.target + g_i * p.interferer
        feats.append(context_features(np.abs(mix), context))
        targets.append((np.abs(g_t * p.target) ** 2).T)
    return np.concatenate(feats), np.concatenate(targets)


def evaluate_loss(network, x, target_power, delta=DEFAULT_DELTA):
    out, _ = forward(network.params, network.arch, x)
    if network.arch.kind == "gauss":
        return loss_gauss(out["sigma"], target_power, delta) / len(x)
    return loss_eb(out["r"], out["nu"], target_power, delta) / len(x)


def train(dataset, cfg=None, validation=None, stft=None):
    """Fit a source network with gain-augmented minibatches.

    Each epoch redraws a target gain ``U[0.05, 1]`` and an interferer gain
    ``Beta(0.1, 1)`` per training pair, mixes, shuffles all frames and takes
    one clipped, weight-decayed gradient step per minibatch. Validation uses
    one fixed draw of gains; ``loss_curve[0]`` is the untrained model.
    """
    cfg = (cfg or TrainConfig()).validate()
    if not dataset:
        raise ConfigError("training dataset is empty")
    n_bins = dataset[0].target.shape[0]
    arch = NetworkArchitecture(cfg.loss, n_bins, cfg.context_frames, cfg.hidden, tuple(cfg.anchors), cfg.nu_mode)
    rng = np.random.default_rng(cfg.rng_seed)
    params = init_params(arch, rng)
    net = SourceNetwork(params, arch, stft)
    x_val, t_val = _mix_pairs(validation or dataset, cfg, np.random.default_rng(cfg.rng_seed + 1), cfg.context_frames)
    curve = [{"epoch": 0, "train_loss": float("nan"), "val_loss": evaluate_loss(net, x_val, t_val, cfg.delta)}]
    for epoch in range(1, cfg.epochs + 1):
        x, t = _mix_pairs(dataset, cfg, rng, cfg.context_frames)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grad(params, arch, x[idx], t[idx], cfg.delta, cfg.dropout_rate, rng)
            if not np.isfinite(loss):
                raise NumericalError(f"training loss diverged at epoch {epoch}")
            grads, _ = clip_gradients(grads, cfg.grad_clip_norm)
            params = sgd_step(params, grads, cfg.learning_rate, cfg.weight_decay)
            total += loss * len(idx)
        net.params = params
        val = evaluate_loss(net, x_val, t_val, cfg.delta)
        if not np.isfinite(val):
            raise NumericalError(f"validation loss diverged at epoch {epoch}")
        curve.append({"epoch": epoch, "train_loss": total / len(x), "val_loss": val})
    return TrainResult(net, curve)


def proposition1_probe(nu):
    """Derivative of the small-energy approximate EB loss w.r.t. ``nu``.

    ``0.5 * log(1 + 2/nu) - 1/nu``; negative for every ``nu > 0``.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("nu must be positive")
    return 0.5 * np.log1p(2.0 / nu) - 1.0 / nu


def small_energy_loss(nu, delta=DEFAULT_DELTA):
    """Per-bin EB loss when both ``|s|^2`` and ``r_hat^2`` are negligible next to ``delta``."""
    nu = np.asarray(nu, dtype=float)
    return np.log(delta) + (1.0 + nu / 2.0) * np.log1p(2.0 / nu)
