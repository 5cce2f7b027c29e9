"""Fixed-architecture MLP with RBF hidden units: forward pass, exact
reverse-mode parameter gradients, data likelihoods, and parameter-vector
serialization.

Heads by task:
  * ``regression``   -- single linear output, Gaussian noise ``noise_sd``.
  * ``k_class``      -- ``n_classes`` linear outputs, softmax probabilities.
  * ``binary_logit`` -- single linear output ``phi`` read through a logistic
    sigmoid, ``prob = sigmoid(phi)``.

The flat parameter order is layer-major: layer-0 weights (row-major), then
layer-0 biases, then layer 1, and so on. This order is part of the on-disk
format and must not change.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import kernels

TASKS = ("regression", "k_class", "binary_logit")

PARAM_MAGIC = b"OCPV"
FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the architecture."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during network evaluation."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class ClampCounter:
    """Counts likelihood evaluations that hit the probability floor."""

    def __init__(self) -> None:
        self.count = 0

    def reset(self) -> None:
        self.count = 0


#: Incremented whenever a predicted class probability is clamped to the
#: floor inside ``log_likelihood`` (a confident wrong prediction).
clamp_warnings = ClampCounter()


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    hidden_layers: tuple[int, ...]
    task: str
    n_classes: int = 0
    noise_sd: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1:
            raise ShapeError("input_dim must be positive")
        if not self.hidden_layers or any(h < 1 for h in self.hidden_layers):
            raise ShapeError("hidden_layers must be a nonempty sequence of positive ints")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "k_class" and self.n_classes < 2:
            raise ValueError("k_class requires n_classes >= 2")
        if self.task == "regression" and self.noise_sd <= 0:
            raise ValueError("regression requires noise_sd > 0")

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.task == "k_class" else 1

    @property
    def sizes(self) -> np.ndarray:
        return np.array((self.input_dim, *self.hidden_layers, self.out_dim), dtype=np.int64)

    @property
    def n_params(self) -> int:
        return kernels.param_count(self.sizes)

    def fingerprint(self) -> dict:
        fp = {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "task": self.task,
        }
        if self.task == "k_class":
            fp["n_classes"] = self.n_classes
        if self.task == "regression":
            fp["noise_sd"] = self.noise_sd
        return fp

    @staticmethod
    def from_fingerprint(fp: dict) -> "NetworkArch":
        return NetworkArch(
            input_dim=int(fp["input_dim"]),
            hidden_layers=tuple(fp["hidden_layers"]),
            task=str(fp["task"]),
            n_classes=int(fp.get("n_classes", 0)),
            noise_sd=float(fp.get("noise_sd", 0.1)),
        )


@dataclass
class Dataset:
    """Supervised data: ``inputs`` (N, Q) and per-row ``targets``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(np.atleast_2d(np.asarray(self.inputs, dtype=np.float64)))
        self.targets = np.asarray(self.targets)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError("inputs and targets disagree on N")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def validate_for(self, arch: NetworkArch) -> None:
        if len(self) and self.inputs.shape[1] != arch.input_dim:
            raise ShapeError(
                f"dataset has {self.inputs.shape[1]} features, arch expects {arch.input_dim}"
            )
        if arch.task == "k_class" and len(self):
            t = self.targets.astype(np.int64)
            if t.min() < 0 or t.max() >= arch.n_classes:
                raise ValueError("class indices out of range")


class BinaryOutput(NamedTuple):
    logit: float
    prob: float


def flatten_layers(arch: NetworkArch, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Flatten per-layer (weights, biases) pairs into the canonical order."""
    sizes = arch.sizes
    if len(layers) != len(sizes) - 1:
        raise ShapeError("wrong number of layers")
    parts = []
    for l, (wm, b) in enumerate(layers):
        wm = np.asarray(wm, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if wm.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
            raise ShapeError(f"layer {l} has shape {wm.shape}/{b.shape}")
        parts.append(wm.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(arch: NetworkArch, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    w = _check_params(arch, w)
    sizes = arch.sizes
    out = []
    off = 0
    for l in range(len(sizes) - 1):
        r, c = int(sizes[l]), int(sizes[l + 1])
        wm = w[off:off + r * c].reshape(r, c).copy()
        off += r * c
        b = w[off:off + c].copy()
        off += c
        out.append((wm, b))
    return out


def zero_params(arch: NetworkArch) -> np.ndarray:
    return np.zeros(arch.n_params)


def random_params(arch: NetworkArch, sd: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, sd, size=arch.n_params)


def _check_params(arch: NetworkArch, w: np.ndarray) -> np.ndarray:
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64).ravel())
    if w.shape[0] != arch.n_params:
        raise ShapeError(f"parameter vector has length {w.shape[0]}, arch needs {arch.n_params}")
    return w


def _check_input(arch: NetworkArch, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != arch.input_dim:
        raise ShapeError(f"input has {x.shape[1]} features, arch expects {arch.input_dim}")
    return np.ascontiguousarray(x)


def _locate_nonfinite_layer(arch: NetworkArch, w: np.ndarray, x: np.ndarray) -> int:
    """Re-run the forward pass layer by layer to name the first bad layer."""
    sizes = arch.sizes
    a = x
    off = 0
    for l in range(len(sizes) - 1):
        r, c = int(sizes[l]), int(sizes[l + 1])
        wm = w[off:off + r * c].reshape(r, c)
        off += r * c
        b = w[off:off + c]
        off += c
        z = a @ wm + b
        a = np.exp(-z * z) if l < len(sizes) - 2 else z
        if not np.all(np.isfinite(a)):
            return l
    return len(sizes) - 2


def raw_outputs(arch: NetworkArch, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pre-head outputs (n, out_dim); raises NumericError if non-finite."""
    w = _check_params(arch, w)
    xb = _check_input(arch, x)
    raw = kernels.forward_batch(w, arch.sizes, xb)
    if not np.all(np.isfinite(raw)):
        layer = _locate_nonfinite_layer(arch, w, xb)
        raise NumericError(f"non-finite activation in layer {layer}", layer=layer)
    return raw


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def forward(arch: NetworkArch, w: np.ndarray, x: np.ndarray):
    """Network output at a single input.

    Returns a float (regression), a probability vector (k_class), or a
    ``BinaryOutput(logit, prob)`` pair (binary_logit).
    """
    raw = raw_outputs(arch, w, x)
    if raw.shape[0] != 1:
        raise ShapeError("forward takes a single input; use raw_outputs for batches")
    if arch.task == "regression":
        return float(raw[0, 0])
    if arch.task == "k_class":
        return softmax(raw[0])
    phi = float(raw[0, 0])
    return BinaryOutput(logit=phi, prob=float(sigmoid(phi)))


def grad_params(
    arch: NetworkArch,
    w: np.ndarray,
    functional: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
) -> np.ndarray:
    """Exact reverse-mode gradient of ``functional`` of the raw outputs.

    ``functional`` maps the raw head outputs (out_dim,) to a scalar and its
    gradient with respect to those outputs.
    """
    w = _check_params(arch, w)
    xb = _check_input(arch, x)
    if xb.shape[0] != 1:
        raise ShapeError("grad_params takes a single input")
    raw = kernels.forward_batch(w, arch.sizes, xb)
    _, draw = functional(raw[0])
    draw = np.asarray(draw, dtype=np.float64).reshape(1, arch.out_dim)
    _, grad = kernels.vjp_batch(w, arch.sizes, xb, draw)
    if not np.all(np.isfinite(grad)):
        layer = _locate_nonfinite_layer(arch, w, xb)
        raise NumericError(f"non-finite gradient through layer {layer}", layer=layer)
    return grad


def log_likelihood(
    arch: NetworkArch,
    w: np.ndarray,
    data: Dataset,
    clamp_floor: float = 1e-12,
    counter: ClampCounter | None = None,
) -> float:
    """Summed log-likelihood of the dataset under the network's head.

    Class probabilities are clamped below at ``clamp_floor`` so that a
    confident wrong prediction keeps the energy finite; each clamped entry
    bumps the warning counter.
    """
    if len(data) == 0:
        return 0.0
    counter = counter if counter is not None else clamp_warnings
    raw = raw_outputs(arch, w, data.inputs)
    return _loglik_from_raw(arch, raw, data.targets, clamp_floor, counter)


def _loglik_from_raw(arch, raw, targets, clamp_floor, counter) -> float:
    if arch.task == "regression":
        y = np.asarray(targets, dtype=np.float64)
        resid = y - raw[:, 0]
        var = arch.noise_sd ** 2
        return float(-0.5 * np.sum(resid * resid) / var
                     - 0.5 * len(y) * np.log(2.0 * np.pi * var))
    if arch.task == "k_class":
        probs = softmax(raw)
        idx = np.asarray(targets, dtype=np.int64)
        picked = probs[np.arange(len(idx)), idx]
        n_clamped = int(np.sum(picked < clamp_floor))
        if n_clamped:
            counter.count += n_clamped
        return float(np.sum(np.log(np.maximum(picked, clamp_floor))))
    # binary_logit
    y = np.asarray(targets, dtype=np.float64)
    p = sigmoid(raw[:, 0])
    picked = np.where(y > 0.5, p, 1.0 - p)
    n_clamped = int(np.sum(picked < clamp_floor))
    if n_clamped:
        counter.count += n_clamped
    return float(np.sum(np.log(np.maximum(picked, clamp_floor))))


def grad_log_likelihood(arch: NetworkArch, w: np.ndarray, data: Dataset) -> np.ndarray:
    """Parameter gradient of ``log_likelihood`` (exact; clamping ignored)."""
    if len(data) == 0:
        return np.zeros(arch.n_params)
    w = _check_params(arch, w)
    xb = _check_input(arch, data.inputs)
    raw = kernels.forward_batch(w, arch.sizes, xb)
    out_grad = _loglik_out_grad(arch, raw, data.targets)
    _, grad = kernels.vjp_batch(w, arch.sizes, xb, out_grad)
    return grad


def _loglik_out_grad(arch, raw, targets) -> np.ndarray:
    if arch.task == "regression":
        y = np.asarray(targets, dtype=np.float64)
        return ((y - raw[:, 0]) / arch.noise_sd ** 2).reshape(-1, 1)
    if arch.task == "k_class":
        probs = softmax(raw)
        idx = np.asarray(targets, dtype=np.int64)
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(idx)), idx] = 1.0
        return onehot - probs
    y = np.asarray(targets, dtype=np.float64)
    return (y - sigmoid(raw[:, 0])).reshape(-1, 1)


def predictive_probs(arch: NetworkArch, raw: np.ndarray) -> np.ndarray:
    """Per-row class probabilities from raw head outputs."""
    if arch.task == "k_class":
        return softmax(raw)
    if arch.task == "binary_logit":
        p1 = sigmoid(raw[:, 0])
        return np.stack([1.0 - p1, p1], axis=1)
    raise ValueError("predictive_probs is undefined for regression")


# ---------------------------------------------------------------------------
# Serialization: little-endian float64 payload, length-prefixed, preceded by a
# JSON arch-fingerprint header.

def _write_header(fh, magic: bytes, header: dict) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<HI", FORMAT_VERSION, len(blob)))
    fh.write(blob)


def _read_header(fh, magic: bytes) -> dict:
    got = fh.read(4)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    version, hlen = struct.unpack("<HI", fh.read(6))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    return json.loads(fh.read(hlen).decode("utf-8"))


def save_params(path, arch: NetworkArch, w: np.ndarray) -> None:
    w = _check_params(arch, w)
    with open(path, "wb") as fh:
        _write_header(fh, PARAM_MAGIC, {"arch": arch.fingerprint()})
        fh.write(struct.pack("<Q", w.shape[0]))
        fh.write(w.astype("<f8").tobytes())


def load_params(path, expected_arch: NetworkArch | None = None) -> tuple[NetworkArch, np.ndarray]:
    with open(path, "rb") as fh:
        header = _read_header(fh, PARAM_MAGIC)
        arch = NetworkArch.from_fingerprint(header["arch"])
        if expected_arch is not None and arch.fingerprint() != expected_arch.fingerprint():
            raise ValueError("parameter file was written for a different architecture")
        (n,) = struct.unpack("<Q", fh.read(8))
        w = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
    if w.shape[0] != arch.n_params:
        raise ValueError("parameter payload length does not match architecture")
    return arch, w
