"""Stacked autoencoder for dimensionality reduction of consumption rows.

The stack is assembled from individually trained autoencoder stages: stage 1
compresses the input, stage 2 compresses stage 1's codes, and so on.  Each
stage is Dense -> BatchNorm -> ReLU on the way down and Dense (-> BatchNorm)
-> Sigmoid on the way back up; the outermost stage reconstructs directly
through a sigmoid without batch normalization.  After greedy training the
stage weights are copied into one deep encoder/decoder pair.

Default widths are 1034 -> 512 -> 256 -> 128, giving 1,395,850 parameters
in the assembled stack; training targets MSE on [0, 1]-scaled inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import MinMaxScaler
from .nn import (
    SCHEMA_VERSION,
    Adam,
    BatchNorm,
    Dense,
    DivergenceError,
    NeuralNet,
    ReLU,
    Sigmoid,
    count_params,
    mse_loss,
    net_from_dict,
    net_to_dict,
    train_step,
)

__all__ = [
    "StackedAutoencoderModel",
    "build_sae",
    "build_stage_autoencoders",
    "calibrate_batchnorm",
    "train_greedy",
    "encode",
    "reconstruct",
    "reconstruction_error",
    "retained_variance",
    "save_sae",
    "load_sae",
]

DEFAULT_INPUT_DIM = 1034
DEFAULT_DIMS = (512, 256, 128)


@dataclass
class StackedAutoencoderModel:
    """Deep encoder/decoder pair plus the input scaling record."""

    input_dim: int
    dims: tuple[int, ...]
    encoder: NeuralNet
    decoder: NeuralNet
    scaler: MinMaxScaler | None = None
    trained: bool = False
    loss_histories: list[list[float]] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.dims[-1]

    def param_count(self) -> int:
        return count_params(self.encoder) + count_params(self.decoder)


def _validate_dims(input_dim: int, dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise ValueError("dims must name at least one hidden width")
    chain = (int(input_dim),) + dims
    if any(d < 1 for d in chain):
        raise ValueError("all widths must be >= 1")
    if any(b >= a for a, b in zip(chain, chain[1:])):
        raise ValueError(f"widths must be strictly decreasing, got {chain}")
    return dims


def build_sae(input_dim: int = DEFAULT_INPUT_DIM, dims=DEFAULT_DIMS, seed: int = 0) -> StackedAutoencoderModel:
    """Assemble the untrained stacked model.

    Encoder: Dense -> BatchNorm -> ReLU per hidden width; normalizing
    before the rectifier keeps narrow bottleneck units from dying.  Decoder
    mirrors the widths with Dense -> Sigmoid -> BatchNorm, except the final
    reconstruction layer which is Dense -> Sigmoid (its targets already live
    in [0, 1]).  The trailing batch-norm on intermediate decoder layers
    gives them a learnable output scale, which they need because the codes
    they reconstruct are not confined to the sigmoid's range.
    """
    dims = _validate_dims(input_dim, dims)
    rng = np.random.default_rng(seed)
    widths = (input_dim,) + dims
    enc_layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        enc_layers.extend([Dense(a, b, rng), BatchNorm(b), ReLU()])
    dec_layers = []
    rev = widths[::-1]
    for a, b in zip(rev[:-1], rev[1:]):
        dec_layers.extend([Dense(a, b, rng), Sigmoid()])
        if b != input_dim:
            dec_layers.append(BatchNorm(b))
    return StackedAutoencoderModel(
        input_dim=input_dim,
        dims=dims,
        encoder=NeuralNet(enc_layers, input_dim=input_dim),
        decoder=NeuralNet(dec_layers, input_dim=dims[-1]),
    )


def build_stage_autoencoders(input_dim: int = DEFAULT_INPUT_DIM, dims=DEFAULT_DIMS, seed: int = 0) -> list[NeuralNet]:
    """The individually trained stages that make up the stack.

    Stage k maps its input width down to dims[k] and back.  Every stage
    decoder ends in a sigmoid; stages after the first also batch-normalize
    their reconstruction (the first stage reconstructs raw [0,1] data).
    """
    dims = _validate_dims(input_dim, dims)
    rng = np.random.default_rng(seed)
    widths = (input_dim,) + dims
    stages = []
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers = [Dense(a, b, rng), BatchNorm(b), ReLU(), Dense(b, a, rng), Sigmoid()]
        if k > 0:
            layers.append(BatchNorm(a))
        stages.append(NeuralNet(layers, input_dim=a))
    return stages


def _copy_bn(target: BatchNorm, source: BatchNorm) -> None:
    for name in ("gamma", "beta", "running_mean", "running_var"):
        setattr(target, name, getattr(source, name).copy())


def _copy_stage_weights(model: StackedAutoencoderModel, stages: list[NeuralNet]) -> None:
    """Install trained stage parameters into the assembled stack."""
    for k, stage in enumerate(stages):
        target_dense = model.encoder.layers[3 * k]
        target_dense.W = stage.layers[0].W.copy()
        target_dense.b = stage.layers[0].b.copy()
        _copy_bn(model.encoder.layers[3 * k + 1], stage.layers[1])

    # Decoder of stage k sits at mirrored depth: last stage decodes first.
    pos = 0
    for k in reversed(range(len(stages))):
        stage = stages[k]
        target_dense = model.decoder.layers[pos]
        target_dense.W = stage.layers[3].W.copy()
        target_dense.b = stage.layers[3].b.copy()
        pos += 2  # dense, sigmoid
        if k > 0:
            _copy_bn(model.decoder.layers[pos], stage.layers[5])
            pos += 1


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        if idx.size >= 2:  # batchnorm needs at least two samples
            yield idx


def calibrate_batchnorm(net: NeuralNet, data: np.ndarray) -> None:
    """Pin every batch-norm layer's running statistics to the exact
    statistics of its input over ``data``.

    Momentum-averaged running statistics lag the trained weights; after
    training, one exact full-data pass removes the train/inference mismatch.
    """
    x = np.asarray(data, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.running_mean = x.mean(axis=0)
            layer.running_var = x.var(axis=0)
        x, _ = layer.forward(x, training=False)


def train_greedy(
    model: StackedAutoencoderModel,
    data: np.ndarray,
    epochs: int = 100,
    batch_size: int = 64,
    seed: int = 0,
    lr: float = 1e-3,
    *,
    patience: int = 10,
    min_improvement: float = 1e-6,
    fine_tune: bool = False,
    fine_tune_epochs: int = 20,
) -> tuple[StackedAutoencoderModel, list[list[float]]]:
    """Train each stage on the previous stage's codes, then assemble.

    Returns the model (now trained) and one loss history per stage.  Stops a
    stage early when its best epoch loss has not improved by
    ``min_improvement`` for ``patience`` epochs.  A NaN loss aborts with the
    failing stage index.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.input_dim:
        raise ValueError(f"expected data of width {model.input_dim}")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("training data must be scaled to [0, 1]")
    if epochs <= 0:
        model.loss_histories = [[] for _ in model.dims]
        return model, model.loss_histories
    if data.shape[0] < batch_size:
        batch_size = max(2, data.shape[0])

    rng = np.random.default_rng(seed)
    stages = build_stage_autoencoders(model.input_dim, model.dims, seed=seed)
    histories: list[list[float]] = [[] for _ in stages]

    stage_input = data
    for k, stage in enumerate(stages):
        opt = Adam(lr=lr)
        best = np.inf
        since_best = 0
        for _ in range(epochs):
            losses = []
            for idx in _epoch_batches(stage_input.shape[0], batch_size, rng):
                batch = stage_input[idx]
                try:
                    losses.append(train_step(stage, opt, batch, batch, loss="mse"))
                except DivergenceError as exc:
                    raise DivergenceError(f"stage {k + 1} diverged: {exc}") from None
            epoch_loss = float(np.mean(losses))
            histories[k].append(epoch_loss)
            if epoch_loss < best - min_improvement:
                best = epoch_loss
                since_best = 0
            else:
                since_best += 1
                if since_best >= patience:
                    break
        calibrate_batchnorm(stage, stage_input)
        # Codes for the next stage come from the frozen encoder half
        # (dense, batchnorm, relu in inference mode).
        encoder_half = NeuralNet(stage.layers[:3])
        stage_input = encoder_half.predict(stage_input)

    _copy_stage_weights(model, stages)
    calibrate_batchnorm(model.encoder, data)
    calibrate_batchnorm(model.decoder, model.encoder.predict(data))

    if fine_tune:
        joint = NeuralNet(model.encoder.layers + model.decoder.layers)
        opt = Adam(lr=lr)
        for _ in range(fine_tune_epochs):
            for idx in _epoch_batches(data.shape[0], batch_size, rng):
                train_step(joint, opt, data[idx], data[idx], loss="mse")

    model.trained = True
    model.loss_histories = histories
    return model, histories


def encode(model: StackedAutoencoderModel, data: np.ndarray) -> np.ndarray:
    """Deterministic inference-mode pass through the encoder stack."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.input_dim:
        raise ValueError(f"expected data of width {model.input_dim}")
    return model.encoder.predict(data)


def reconstruct(model: StackedAutoencoderModel, data: np.ndarray) -> np.ndarray:
    return model.decoder.predict(encode(model, data))


def retained_variance(data: np.ndarray, reconstruction: np.ndarray) -> float:
    """1 - SSE / SS_total, with SS_total the squared deviation of the data
    about its column means."""
    data = np.asarray(data, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    sse = float(((reconstruction - data) ** 2).sum())
    ss_total = float(((data - data.mean(axis=0)) ** 2).sum())
    if ss_total == 0.0:
        return 1.0 if sse == 0.0 else 0.0
    return 1.0 - sse / ss_total


def reconstruction_error(model: StackedAutoencoderModel, data: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-row reconstruction MSE and the retained-variance ratio."""
    data = np.asarray(data, dtype=np.float64)
    recon = reconstruct(model, data)
    per_row = ((recon - data) ** 2).mean(axis=1)
    return per_row, retained_variance(data, recon)


def save_sae(model: StackedAutoencoderModel, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "input_dim": model.input_dim,
        "dims": list(model.dims),
        "trained": model.trained,
        "encoder": net_to_dict(model.encoder),
        "decoder": net_to_dict(model.decoder),
        "scaler": model.scaler.to_dict() if model.scaler else None,
        "loss_histories": model.loss_histories,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_sae(path) -> StackedAutoencoderModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"schema version mismatch: expected {SCHEMA_VERSION}, got {doc.get('schema_version')}"
        )
    return StackedAutoencoderModel(
        input_dim=doc["input_dim"],
        dims=tuple(doc["dims"]),
        encoder=net_from_dict(doc["encoder"]),
        decoder=net_from_dict(doc["decoder"]),
        scaler=MinMaxScaler.from_dict(doc["scaler"]) if doc["scaler"] else None,
        trained=doc["trained"],
        loss_histories=[list(h) for h in doc["loss_histories"]],
    )
