"""Fully connected SDF network with a random Fourier feature input layer.

Inputs in R^3 are mapped to 64 features ``[sin(2*pi*B p), cos(2*pi*B p)]``
with a frozen Gaussian matrix ``B`` (32 x 3).  The MLP has two linear
outputs: signed distance and confidence.  Everything, including
backpropagation and Adam, is plain numpy.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

N_FREQUENCIES = 32
ENCODED_DIM = 2 * N_FREQUENCIES
ACTIVATIONS = ("tanh", "relu")
CONFIDENCE_HEADS = ("linear", "sigmoid")


class ModelError(RuntimeError):
    pass


class TrainingDiverged(ModelError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class FourierEncoder:
    freq_scale: float = 1.0
    seed: int = 0
    frequency_matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.freq_scale > 0:
            raise ValueError("freq_scale must be > 0")
        if self.frequency_matrix is None:
            z = np.random.default_rng(self.seed).standard_normal((N_FREQUENCIES, 3))
            object.__setattr__(self, "frequency_matrix", self.freq_scale * z)
        else:
            m = np.asarray(self.frequency_matrix, dtype=np.float64)
            if m.shape != (N_FREQUENCIES, 3):
                raise ValueError(f"frequency matrix must be {N_FREQUENCIES}x3, got {m.shape}")
            object.__setattr__(self, "frequency_matrix", m)

    @property
    def output_dim(self) -> int:
        return ENCODED_DIM


def encode(encoder: FourierEncoder, p) -> np.ndarray:
    """Fourier features of one point ``(3,)`` or a batch ``(N, 3)``."""
    p = np.asarray(p, dtype=np.float64)
    v = 2.0 * np.pi * (p @ encoder.frequency_matrix.T)
    return np.concatenate([np.sin(v), np.cos(v)], axis=-1)


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: int = 3
    hidden_width: int = 64
    activation: str = "tanh"
    skip_connections: bool = False
    seed: int = 0
    use_encoder: bool = True
    freq_scale: float = 1.0
    encoder_seed: int = 0
    confidence_head: str = "linear"

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.confidence_head not in CONFIDENCE_HEADS:
            raise ValueError(f"confidence_head must be one of {CONFIDENCE_HEADS}")

    @property
    def input_dim(self) -> int:
        return ENCODED_DIM if self.use_encoder else 3

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.hidden_width
        return [(self.input_dim, w)] + [(w, w)] * (self.hidden_layers - 1) + [(w, 2)]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.4
    huber_delta: float = 1.0
    confidence_weight: float = 1.0
    batch_size: int = 256
    epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be > 0")
        if not self.confidence_weight >= 0:
            raise ValueError("confidence_weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def parameter_count(hidden_layers: int, width: int, input_dim: int = ENCODED_DIM) -> int:
    return input_dim * width + width + (hidden_layers - 1) * (width * width + width) + 2 * width + 2


class SdfModel:
    """Parameters are kept as a flat list ``[W0, b0, W1, b1, ..., W_head, b_head]``."""

    def __init__(self, config: MlpConfig, params: list, encoder: Optional[FourierEncoder] = None):
        self.config = config
        self.encoder = encoder
        self.params = params

    @classmethod
    def initialize(cls, config: MlpConfig) -> "SdfModel":
        rng = np.random.default_rng(config.seed)
        params = []
        for fan_in, fan_out in config.layer_shapes():
            bound = 1.0 / math.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            params.append(rng.uniform(-bound, bound, fan_out))
        encoder = FourierEncoder(config.freq_scale, config.encoder_seed) if config.use_encoder else None
        return cls(config, params, encoder)

    @property
    def weights(self) -> list:
        return self.params[0::2]

    @property
    def biases(self) -> list:
        return self.params[1::2]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "SdfModel":
        return SdfModel(self.config, [p.copy() for p in self.params], self.encoder)

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``(sdf, confidence)`` for an ``(N, 3)`` array."""
        out, _ = _forward(self, np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return out[:, 0], out[:, 1]

    def __call__(self, points):
        return self.predict(points)


def _activate(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _activation_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(np.float64)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_finite(model: SdfModel):
    for i, p in enumerate(model.params):
        if not np.all(np.isfinite(p)):
            raise ModelError(f"non-finite value in parameter block {i}")


def _forward(model: SdfModel, x: np.ndarray):
    """Forward pass returning ``(outputs, cache)``; outputs are ``(N, 2)``."""
    _check_finite(model)
    cfg = model.config
    h = encode(model.encoder, x) if model.encoder is not None else x
    hs, zs, acts = [h], [], []
    for k in range(cfg.hidden_layers):
        W, b = model.params[2 * k], model.params[2 * k + 1]
        z = h @ W + b
        a = _activate(cfg.activation, z)
        zs.append(z)
        acts.append(a)
        h = a + h if cfg.skip_connections and k > 0 else a
        hs.append(h)
    out = h @ model.params[-2] + model.params[-1]
    if cfg.confidence_head == "sigmoid":
        out = out.copy()
        out[:, 1] = _sigmoid(out[:, 1])
    return out, (hs, zs, acts)


def forward(model: SdfModel, p) -> tuple[float, float]:
    """``(sdf, confidence)`` at a single point."""
    out, _ = _forward(model, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(out[0, 0]), float(out[0, 1])


def huber(residual, delta: float):
    r = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def huber_grad(residual, delta: float):
    r = np.asarray(residual, dtype=np.float64)
    return np.clip(r, -delta, delta)


def _batch_arrays(batch):
    return (np.asarray(batch.positions, dtype=np.float64).reshape(-1, 3),
            np.asarray(batch.sdf, dtype=np.float64),
            np.asarray(batch.confidence, dtype=np.float64))


def batch_loss(model: SdfModel, batch, tc: TrainConfig) -> float:
    x, sdf, conf = _batch_arrays(batch)
    if len(x) == 0:
        raise ValueError("empty batch")
    out, _ = _forward(model, x)
    return _loss_from_outputs(out, sdf, conf, tc)


def _loss_from_outputs(out, sdf, conf, tc):
    per_sample = huber(out[:, 0] - sdf, tc.huber_delta) + tc.confidence_weight * huber(out[:, 1] - conf, tc.huber_delta)
    return float(np.mean(per_sample))


def loss_and_gradients(model: SdfModel, batch, tc: TrainConfig):
    """Mean batch loss and its exact gradient for every parameter block."""
    x, sdf, conf = _batch_arrays(batch)
    n = len(x)
    if n == 0:
        raise ValueError("empty batch")
    cfg = model.config
    out, (hs, zs, acts) = _forward(model, x)
    loss = _loss_from_outputs(out, sdf, conf, tc)

    g_out = np.empty_like(out)
    g_out[:, 0] = huber_grad(out[:, 0] - sdf, tc.huber_delta) / n
    g_out[:, 1] = tc.confidence_weight * huber_grad(out[:, 1] - conf, tc.huber_delta) / n
    if cfg.confidence_head == "sigmoid":
        s = out[:, 1]
        g_out[:, 1] *= s * (1.0 - s)

    grads = [None] * len(model.params)
    grads[-2] = hs[-1].T @ g_out
    grads[-1] = g_out.sum(axis=0)
    g_h = g_out @ model.params[-2].T
    for k in range(cfg.hidden_layers - 1, -1, -1):
        g_z = g_h * _activation_grad(cfg.activation, zs[k], acts[k])
        grads[2 * k] = hs[k].T @ g_z
        grads[2 * k + 1] = g_z.sum(axis=0)
        if k > 0:
            g_prev = g_z @ model.params[2 * k].T
            if cfg.skip_connections:
                g_prev = g_prev + g_h
            g_h = g_prev

    if not (np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
        raise TrainingDiverged(f"non-finite loss or gradient (loss={loss})")
    return loss, grads


def gradients(model: SdfModel, batch, tc: TrainConfig) -> list:
    return loss_and_gradients(model, batch, tc)[1]


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(model: SdfModel, state: AdamState, grads, tc: TrainConfig):
    """Bias-corrected Adam update, applied in place.  Returns ``(model, state)``."""
    b1, b2 = tc.adam_beta1, tc.adam_beta2
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= tc.learning_rate * (m / c1) / (np.sqrt(v / c2) + tc.adam_eps)
    return model, state


def train(dataset, mc: MlpConfig, tc: TrainConfig, model: Optional[SdfModel] = None,
          on_epoch=None) -> tuple[SdfModel, list]:
    """Minibatch Adam training; returns the model and the mean loss of every epoch.

    ``on_epoch(epoch, mean_loss, model)`` is called after each epoch if given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = SdfModel.initialize(mc) if model is None else model
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(tc.seed)
    x, sdf, conf = _batch_arrays(dataset)
    n = len(x)
    history = []
    for epoch in range(tc.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = perm[start:start + tc.batch_size]
            batch = _ArrayBatch(x[idx], sdf[idx], conf[idx])
            try:
                # overflow shows up as a non-finite loss, reported below
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_gradients(model, batch, tc)
            except (TrainingDiverged, ModelError) as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch starting at {start}: {exc}") from exc
            adam_step(model, state, grads, tc)
            total += loss * len(idx)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    return model, history


@dataclass(frozen=True)
class _ArrayBatch:
    positions: np.ndarray
    sdf: np.ndarray
    confidence: np.ndarray


def write_loss_csv(history, path) -> None:
    lines = ["epoch,mean_loss"] + [f"{i},{loss!r}" for i, loss in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")


# Checkpoint container (all integers little-endian):
#   8s   magic  b"LSDFCKPT"
#   u32  format version
#   u64  header length H, then H bytes of UTF-8 JSON:
#        {"config": MlpConfig fields, "encoder": {"seed", "freq_scale"} | null,
#         "blocks": [{"name", "shape"}, ...]}
#   u64  payload length P, then P bytes: the blocks in manifest order as
#        float64 little-endian, C order
#   u32  CRC-32 of the payload
MAGIC = b"LSDFCKPT"
FORMAT_VERSION = 1


def _block_names(config: MlpConfig) -> list[str]:
    names = []
    for k in range(config.hidden_layers):
        names += [f"hidden{k}.weight", f"hidden{k}.bias"]
    return names + ["head.weight", "head.bias"]


def save_checkpoint(model: SdfModel, path) -> None:
    names = _block_names(model.config)
    blocks = list(zip(names, model.params))
    if model.encoder is not None:
        blocks.append(("encoder.frequency_matrix", model.encoder.frequency_matrix))
    header = {
        "config": asdict(model.config),
        "encoder": None if model.encoder is None else
        {"seed": model.encoder.seed, "freq_scale": model.encoder.freq_scale},
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path, expected: Optional[MlpConfig] = None) -> SdfModel:
    """Read a checkpoint; with ``expected`` the stored layer shapes must match it."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return bytes(chunk)

    if take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<Q", take(8))
    try:
        header = json.loads(take(header_len).decode())
        config = MlpConfig(**header["config"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    (payload_len,) = struct.unpack("<Q", take(8))
    payload = take(payload_len)
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    manifest = header["blocks"]
    sizes = [int(np.prod(b["shape"], dtype=np.int64)) * 8 for b in manifest]
    if sum(sizes) != payload_len:
        raise CheckpointError(f"{path}: shape manifest disagrees with payload length")
    arrays, offset = {}, 0
    for block, size in zip(manifest, sizes):
        arrays[block["name"]] = np.frombuffer(payload, dtype="<f8", count=size // 8,
                                              offset=offset).reshape(block["shape"]).astype(np.float64)
        offset += size

    names = _block_names(config)
    shapes = [s for layer in config.layer_shapes() for s in (layer, (layer[1],))]
    params = []
    for name, shape in zip(names, shapes):
        if name not in arrays or arrays[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: block {name} missing or not shaped {tuple(shape)}")
        params.append(arrays[name])
    if expected is not None:
        mismatched = [f for f in ("hidden_layers", "hidden_width", "use_encoder")
                      if getattr(expected, f) != getattr(config, f)]
        if mismatched:
            raise CheckpointError(
                f"{path}: checkpoint shapes {config.layer_shapes()} do not match expected "
                f"{expected.layer_shapes()} ({', '.join(mismatched)})"
            )

    encoder = None
    if config.use_encoder:
        enc = header.get("encoder") or {}
        matrix = arrays.get("encoder.frequency_matrix")
        if matrix is None:
            raise CheckpointError(f"{path}: encoder matrix missing")
        encoder = FourierEncoder(enc.get("freq_scale", config.freq_scale), enc.get("seed", config.encoder_seed), matrix)
    return SdfModel(config, params, encoder)
