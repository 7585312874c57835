"""Tabular sample synthesis for training augmentation.

Columns are encoded with mode-specific normalization: a per-column Gaussian
mixture is fitted (EM over 1..max_modes components, BIC model selection,
low-weight pruning), and each value becomes a scaled offset
alpha = (x - mu_k) / (4 sigma_k) from a responsibility-sampled mode k plus a
one-hot mode indicator.  A Wasserstein GAN with gradient penalty (optionally
scoring packed groups of rows) is trained on the encoded rows with the class
label appended as a one-hot condition, and synthetic rows are decoded back
to the original scale.

The critic is a plain dense/ReLU stack; the gradient penalty's parameter
gradients are computed by an exact double-backward derived for that shape
(ReLU masks are piecewise constant, so the input-gradient graph is linear
in the weights almost everywhere).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    SCHEMA_VERSION,
    Adam,
    BatchNorm,
    Dense,
    DivergenceError,
    NeuralNet,
    ReLU,
    Sigmoid,
    net_from_dict,
    net_to_dict,
)

__all__ = [
    "ColumnModes",
    "MsnTransformer",
    "GanConfig",
    "GanModel",
    "fit_vgm",
    "msn_encode",
    "msn_decode",
    "build_gan",
    "train_wgan_gp",
    "generate_encoded",
    "sample_synthetic",
    "critic_input_gradient",
    "gradient_penalty_param_grads",
    "save_gan",
    "load_gan",
]

WEIGHT_PRUNE = 0.01
ALPHA_SCALE = 4.0


@dataclass
class ColumnModes:
    """Gaussian mixture describing one column's value distribution."""

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.means)

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnModes":
        return cls(
            np.asarray(d["means"], float),
            np.asarray(d["stds"], float),
            np.asarray(d["weights"], float),
        )


def _log_normal_pdf(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    z = (x[:, None] - mean[None, :]) / std[None, :]
    return -0.5 * z**2 - np.log(std[None, :]) - 0.5 * np.log(2.0 * np.pi)


def _em_fit(x: np.ndarray, k: int, var_floor: float, max_iter: int = 200, tol: float = 1e-7):
    """EM for a 1-d k-component mixture, quantile-initialized.

    Returns (means, stds, weights, mean log-likelihood).
    """
    n = x.size
    qs = (np.arange(k) + 0.5) / k
    means = np.quantile(x, qs)
    stds = np.full(k, max(float(x.std()), np.sqrt(var_floor)))
    weights = np.full(k, 1.0 / k)
    prev = -np.inf
    for _ in range(max_iter):
        log_p = _log_normal_pdf(x, means, stds) + np.log(weights[None, :])
        log_norm = np.logaddexp.reduce(log_p, axis=1)
        loglik = float(log_norm.mean())
        resp = np.exp(log_p - log_norm[:, None])
        nk = resp.sum(axis=0)
        safe_nk = np.maximum(nk, 1e-300)
        weights = nk / n
        means = np.where(nk > 1e-12, (resp * x[:, None]).sum(axis=0) / safe_nk, means)
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / safe_nk
        stds = np.sqrt(np.maximum(var, var_floor))
        if abs(loglik - prev) < tol:
            break
        prev = loglik
    return means, stds, weights, loglik


def fit_vgm(column: np.ndarray, max_modes: int = 10) -> ColumnModes:
    """Fit the per-column mode mixture.

    EM runs for every component count from 1 to ``max_modes``; the count is
    selected by BIC (ties to the smaller count), then components with weight
    below 0.01 are pruned and the weights renormalized.  Deterministic: the
    EM initialization uses value quantiles, not random draws.
    """
    x = np.asarray(column, dtype=np.float64).ravel()
    if x.size < max_modes:
        raise ValueError(f"need at least {max_modes} values, got {x.size}")
    var = float(x.var())
    if var == 0.0:
        return ColumnModes(
            means=np.array([float(x[0])]), stds=np.array([1e-6]), weights=np.array([1.0])
        )
    var_floor = max(1e-6 * var, 1e-12)

    best = None
    for k in range(1, max_modes + 1):
        means, stds, weights, loglik = _em_fit(x, k, var_floor)
        n_params = 3 * k - 1
        bic = -2.0 * loglik * x.size + n_params * np.log(x.size)
        if best is None or bic < best[0] - 1e-9:
            best = (bic, means, stds, weights)
    _, means, stds, weights = best

    keep = weights >= WEIGHT_PRUNE
    if not keep.any():
        keep = weights == weights.max()
    means, stds, weights = means[keep], stds[keep], weights[keep]
    order = np.argsort(means)
    means, stds, weights = means[order], stds[order], weights[order]
    return ColumnModes(means=means, stds=stds, weights=weights / weights.sum())


def _responsibilities(x: np.ndarray, modes: ColumnModes) -> np.ndarray:
    log_p = _log_normal_pdf(x, modes.means, modes.stds) + np.log(modes.weights[None, :])
    log_norm = np.logaddexp.reduce(log_p, axis=1)
    return np.exp(log_p - log_norm[:, None])


def msn_encode(row: np.ndarray, modes: list[ColumnModes], rng: np.random.Generator) -> np.ndarray:
    """Encode one row: per column, a responsibility-sampled mode indicator
    plus the clipped offset alpha from that mode's mean."""
    return msn_encode_matrix(np.asarray(row, float)[None, :], modes, rng)[0]


def msn_encode_matrix(
    values: np.ndarray, modes: list[ColumnModes], rng: np.random.Generator
) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    n, d = values.shape
    if d != len(modes):
        raise ValueError(f"expected {len(modes)} columns, got {d}")
    out = np.zeros((n, encoded_width(modes)))
    pos = 0
    for j, cm in enumerate(modes):
        x = values[:, j]
        if cm.n_modes == 1:
            chosen = np.zeros(n, dtype=np.int64)
        else:
            resp = _responsibilities(x, cm)
            cum = resp.cumsum(axis=1)
            u = rng.random(n)
            chosen = (u[:, None] > cum).sum(axis=1)
            chosen = np.minimum(chosen, cm.n_modes - 1)
        alpha = (x - cm.means[chosen]) / (ALPHA_SCALE * cm.stds[chosen])
        out[:, pos] = np.clip(alpha, -1.0, 1.0)
        out[np.arange(n), pos + 1 + chosen] = 1.0
        pos += 1 + cm.n_modes
    return out


def msn_decode(encoded: np.ndarray, modes: list[ColumnModes]) -> np.ndarray:
    """Invert the encoding: x = alpha * 4 sigma_k + mu_k for the indicated
    mode, clamped at 0.  Accepts single rows or matrices; the mode indicator
    block is resolved by argmax, and a block with no positive entry is an
    error."""
    enc = np.asarray(encoded, dtype=np.float64)
    single = enc.ndim == 1
    if single:
        enc = enc[None, :]
    if enc.shape[1] != encoded_width(modes):
        raise ValueError(f"expected width {encoded_width(modes)}, got {enc.shape[1]}")
    n = enc.shape[0]
    out = np.zeros((n, len(modes)))
    pos = 0
    for j, cm in enumerate(modes):
        alpha = enc[:, pos]
        block = enc[:, pos + 1 : pos + 1 + cm.n_modes]
        if (block.max(axis=1) <= 0).any():
            raise ValueError(f"column {j}: no mode indicated")
        chosen = block.argmax(axis=1)
        out[:, j] = alpha * ALPHA_SCALE * cm.stds[chosen] + cm.means[chosen]
        pos += 1 + cm.n_modes
    out = np.maximum(out, 0.0)
    return out[0] if single else out


def encoded_width(modes: list[ColumnModes]) -> int:
    return sum(1 + cm.n_modes for cm in modes)


def alpha_slot_mask(modes: list[ColumnModes]) -> np.ndarray:
    """Boolean mask over encoded columns marking the alpha slots."""
    mask = np.zeros(encoded_width(modes), dtype=bool)
    pos = 0
    for cm in modes:
        mask[pos] = True
        pos += 1 + cm.n_modes
    return mask


@dataclass
class MsnTransformer:
    """Per-column mode mixtures plus the encoded-row layout."""

    modes: list[ColumnModes]

    @classmethod
    def fit(cls, values: np.ndarray, max_modes: int = 10) -> "MsnTransformer":
        values = np.asarray(values, dtype=np.float64)
        return cls([fit_vgm(values[:, j], max_modes) for j in range(values.shape[1])])

    @property
    def width(self) -> int:
        return encoded_width(self.modes)

    def encode(self, values, rng):
        return msn_encode_matrix(values, self.modes, rng)

    def decode(self, encoded):
        return msn_decode(encoded, self.modes)

    def alpha_mask(self) -> np.ndarray:
        return alpha_slot_mask(self.modes)

    def to_dict(self) -> dict:
        return {"modes": [cm.to_dict() for cm in self.modes]}

    @classmethod
    def from_dict(cls, d: dict) -> "MsnTransformer":
        return cls([ColumnModes.from_dict(m) for m in d["modes"]])


@dataclass
class GanConfig:
    epochs: int = 100
    steps: int | None = None  # generator updates; overrides epochs when set
    batch_size: int = 64
    pac: int = 1
    gp_lambda: float = 10.0
    critic_steps: int = 5
    noise_dim: int = 32
    gen_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (128, 128)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0


@dataclass
class GanModel:
    """Generator/critic pair over encoded rows with a one-hot label condition."""

    generator: NeuralNet
    discriminator: NeuralNet
    noise_dim: int
    pac: int
    gp_lambda: float
    label_width: int
    data_width: int
    alpha_mask: np.ndarray  # encoded columns mapped to [-1, 1]
    critic_history: list[float] = field(default_factory=list)
    generator_history: list[float] = field(default_factory=list)

    def map_output(self, raw: np.ndarray) -> np.ndarray:
        """Generator raw sigmoid output -> encoded-space row."""
        out = raw.copy()
        out[:, self.alpha_mask] = 2.0 * out[:, self.alpha_mask] - 1.0
        return out

    def map_output_grad(self, grad: np.ndarray) -> np.ndarray:
        out = grad.copy()
        out[:, self.alpha_mask] *= 2.0
        return out


def build_gan(
    data_width: int,
    label_width: int,
    alpha_mask: np.ndarray | None,
    config: GanConfig,
) -> GanModel:
    """Construct the generator and critic.

    Generator: dense/batchnorm/ReLU hidden stack, sigmoid output over the
    encoded width (alpha slots are affinely mapped to [-1, 1] afterwards).
    Critic: dense/ReLU stack to a single linear score over one pac-group of
    row+label pairs; no normalization layers, as the gradient penalty needs
    per-sample gradients.
    """
    if alpha_mask is None:
        alpha_mask = np.zeros(data_width, dtype=bool)
    alpha_mask = np.asarray(alpha_mask, dtype=bool)
    if alpha_mask.size != data_width:
        raise ValueError("alpha_mask length must equal data_width")
    rng = np.random.default_rng(config.seed)

    gen_layers = []
    prev = config.noise_dim + label_width
    for h in config.gen_hidden:
        gen_layers.extend([Dense(prev, h, rng), BatchNorm(h), ReLU()])
        prev = h
    gen_layers.extend([Dense(prev, data_width, rng), Sigmoid()])

    critic_layers = []
    prev = config.pac * (data_width + label_width)
    for h in config.critic_hidden:
        critic_layers.extend([Dense(prev, h, rng), ReLU()])
        prev = h
    critic_layers.append(Dense(prev, 1, rng))

    return GanModel(
        generator=NeuralNet(gen_layers),
        discriminator=NeuralNet(critic_layers),
        noise_dim=config.noise_dim,
        pac=config.pac,
        gp_lambda=config.gp_lambda,
        label_width=label_width,
        data_width=data_width,
        alpha_mask=alpha_mask,
    )


def _critic_weights_and_masks(critic: NeuralNet, x: np.ndarray):
    """Forward pass collecting dense weights and ReLU masks."""
    weights = []
    masks = []
    h = x
    for layer in critic.layers:
        if isinstance(layer, Dense):
            weights.append(layer.W)
            h = h @ layer.W + layer.b
        elif isinstance(layer, ReLU):
            mask = h > 0
            masks.append(mask)
            h = h * mask
        else:
            raise TypeError("gradient penalty requires a dense/ReLU critic")
    return h, weights, masks


def critic_input_gradient(critic: NeuralNet, x: np.ndarray) -> np.ndarray:
    """d critic(x) / d x, one row per sample."""
    _, weights, masks = _critic_weights_and_masks(critic, x)
    q = np.ones((x.shape[0], 1))
    for l in range(len(weights) - 1, 0, -1):
        q = (q @ weights[l].T) * masks[l - 1]
    return q @ weights[0].T


def gradient_penalty_param_grads(
    critic: NeuralNet, x_hat: np.ndarray, coeff: float
) -> tuple[float, list[np.ndarray]]:
    """Penalty value and its exact parameter gradients.

    Penalty: coeff * mean_i (||grad_x critic(x_hat_i)|| - 1)^2.  ReLU masks
    are treated as constants (their derivative vanishes almost everywhere),
    which makes the input-gradient graph linear in every weight matrix; bias
    gradients are identically zero.  Returned gradients align with
    ``critic.trainable()``.
    """
    _, weights, masks = _critic_weights_and_masks(critic, x_hat)
    n = x_hat.shape[0]
    L = len(weights)

    # Reverse sweep: q_l = d f / d z_l propagated to the input.
    qs = [None] * L  # qs[l] has width = weights[l] output width
    q = np.ones((n, 1))
    qs[L - 1] = q
    for l in range(L - 1, 0, -1):
        q = (q @ weights[l].T) * masks[l - 1]
        qs[l - 1] = q
    g = q @ weights[0].T

    norms = np.sqrt((g**2).sum(axis=1))
    penalty = coeff * float(((norms - 1.0) ** 2).mean())
    # d penalty / d g, folding in the averaging and coefficient.
    r = (2.0 * coeff / n) * ((norms - 1.0) / np.maximum(norms, 1e-12))[:, None] * g

    dW = [np.zeros_like(W) for W in weights]
    db_shapes = [layer.b for layer in critic.layers if isinstance(layer, Dense)]
    dW[0] += r.T @ qs[0]
    s = r @ weights[0]
    for l in range(1, L):
        p = s * masks[l - 1]
        dW[l] += p.T @ qs[l]
        s = p @ weights[l]

    grads: list[np.ndarray] = []
    for W, b in zip(dW, db_shapes):
        grads.append(W)
        grads.append(np.zeros_like(b))
    return penalty, grads


def _pack(rows: np.ndarray, labels_onehot: np.ndarray, pac: int) -> np.ndarray:
    """Concatenate pac consecutive (row, label) pairs into one critic input."""
    joined = np.concatenate([rows, labels_onehot], axis=1)
    n, w = joined.shape
    if n % pac != 0:
        raise ValueError("row count must be divisible by pac")
    return joined.reshape(n // pac, pac * w)


def _one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(labels), width))
    out[np.arange(len(labels)), labels.astype(np.int64)] = 1.0
    return out


def train_wgan_gp(
    real: np.ndarray,
    labels: np.ndarray,
    config: GanConfig | None = None,
    alpha_mask: np.ndarray | None = None,
) -> GanModel:
    """Adversarial training on encoded rows.

    Per generator update the critic takes ``critic_steps`` updates, each on a
    fresh batch, minimizing mean(score(fake)) - mean(score(real)) plus the
    unit-gradient-norm penalty at interpolates drawn uniformly between real
    and fake pac-groups.  The generator then minimizes -mean(score(fake)).
    Histories of both losses are recorded per generator step.
    """
    if config is None:
        config = GanConfig()
    real = np.asarray(real, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, width = real.shape
    if config.batch_size % config.pac != 0:
        raise ValueError("batch size must be divisible by pac")
    if n < config.batch_size:
        raise ValueError("need at least one full batch of real rows")

    label_width = 2
    model = build_gan(width, label_width, alpha_mask, config)
    rng = np.random.default_rng(config.seed + 1)
    opt_d = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_g = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    steps = config.steps
    if steps is None:
        steps = config.epochs * max(1, n // config.batch_size)
    B = config.batch_size
    critic = model.discriminator
    gen = model.generator

    def make_fake(batch_labels, training):
        noise = rng.standard_normal((len(batch_labels), config.noise_dim))
        gin = np.concatenate([noise, _one_hot(batch_labels, label_width)], axis=1)
        raw, caches = gen.forward(gin, training=training, update_running=training)
        return model.map_output(raw), caches

    for _ in range(steps):
        d_loss = 0.0
        for _ in range(config.critic_steps):
            idx = rng.integers(0, n, size=B)
            real_rows, batch_labels = real[idx], labels[idx]
            onehot = _one_hot(batch_labels, label_width)
            fake_rows, _ = make_fake(batch_labels, training=False)

            real_packed = _pack(real_rows, onehot, config.pac)
            fake_packed = _pack(fake_rows, onehot, config.pac)
            n_packed = real_packed.shape[0]

            out_r, caches_r = critic.forward(real_packed)
            grads_r, _ = critic.backward(caches_r, np.full_like(out_r, -1.0 / n_packed))
            out_f, caches_f = critic.forward(fake_packed)
            grads_f, _ = critic.backward(caches_f, np.full_like(out_f, 1.0 / n_packed))

            u = rng.random((n_packed, 1))
            interp = u * real_packed + (1.0 - u) * fake_packed
            penalty, grads_p = gradient_penalty_param_grads(critic, interp, config.gp_lambda)

            d_loss = float(out_f.mean() - out_r.mean()) + penalty
            if not np.isfinite(d_loss):
                raise DivergenceError(f"critic loss diverged: {d_loss}")
            total = [a + b + c for a, b, c in zip(grads_r, grads_f, grads_p)]
            opt_d.step(critic.trainable(), total)

        idx = rng.integers(0, n, size=B)
        batch_labels = labels[idx]
        onehot = _one_hot(batch_labels, label_width)
        fake_rows, gen_caches = make_fake(batch_labels, training=True)
        fake_packed = _pack(fake_rows, onehot, config.pac)
        n_packed = fake_packed.shape[0]

        out_f, caches_f = critic.forward(fake_packed)
        g_loss = float(-out_f.mean())
        if not np.isfinite(g_loss):
            raise DivergenceError(f"generator loss diverged: {g_loss}")
        _, d_input = critic.backward(caches_f, np.full_like(out_f, -1.0 / n_packed))
        # Unpack the critic-input gradient back to per-row form and strip the
        # label block, which the generator does not produce.
        per_pair = d_input.reshape(B, width + label_width)
        d_rows = model.map_output_grad(per_pair[:, :width])
        gen_grads, _ = gen.backward(gen_caches, d_rows, training=True)
        opt_g.step(gen.trainable(), gen_grads)

        model.critic_history.append(d_loss)
        model.generator_history.append(g_loss)
    return model


def generate_encoded(model: GanModel, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Encoded-space rows for the requested labels."""
    labels = np.asarray(labels, dtype=np.int64)
    noise = rng.standard_normal((len(labels), model.noise_dim))
    gin = np.concatenate([noise, _one_hot(labels, model.label_width)], axis=1)
    return model.map_output(model.generator.predict(gin))


def class_counts(n_total: int, class_ratio: tuple[int, int]) -> tuple[int, int]:
    """(genuine, theft) counts: theft gets the floor share, genuine the rest."""
    a, b = class_ratio
    theft = (n_total * b) // (a + b)
    return n_total - theft, theft


def sample_synthetic(
    model: GanModel,
    modes: list[ColumnModes] | MsnTransformer,
    n_total: int,
    class_ratio: tuple[int, int] = (2, 1),
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw labeled synthetic rows at the original scale.

    Class counts follow the floor rule on ``class_ratio`` (genuine share
    rounds up).  Rows are decoded through the fitted column modes and are
    therefore finite and non-negative.
    """
    if isinstance(modes, MsnTransformer):
        modes = modes.modes
    n_genuine, n_theft = class_counts(n_total, class_ratio)
    labels = np.concatenate([np.zeros(n_genuine, np.int64), np.ones(n_theft, np.int64)])
    rng = np.random.default_rng(seed)
    encoded = generate_encoded(model, labels, rng)
    return msn_decode(encoded, modes), labels


def save_gan(model: GanModel, transformer: MsnTransformer | None, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "generator": net_to_dict(model.generator),
        "discriminator": net_to_dict(model.discriminator),
        "noise_dim": model.noise_dim,
        "pac": model.pac,
        "gp_lambda": model.gp_lambda,
        "label_width": model.label_width,
        "data_width": model.data_width,
        "alpha_mask": model.alpha_mask.astype(int).tolist(),
        "transformer": transformer.to_dict() if transformer else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_gan(path) -> tuple[GanModel, MsnTransformer | None]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"schema version mismatch: expected {SCHEMA_VERSION}, got {doc.get('schema_version')}"
        )
    model = GanModel(
        generator=net_from_dict(doc["generator"]),
        discriminator=net_from_dict(doc["discriminator"]),
        noise_dim=doc["noise_dim"],
        pac=doc["pac"],
        gp_lambda=doc["gp_lambda"],
        label_width=doc["label_width"],
        data_width=doc["data_width"],
        alpha_mask=np.asarray(doc["alpha_mask"], dtype=bool),
    )
    transformer = MsnTransformer.from_dict(doc["transformer"]) if doc["transformer"] else None
    return model, transformer
