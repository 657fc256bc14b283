"""Small feedforward networks in plain numpy.

Rectifier hidden layers, identity output, exact reverse-mode gradients
(including the gradient with respect to the input), Adam, and a versioned
binary model container.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LEAPEMDL"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class MLP:
    """Weights ``W[k]`` of shape (in, out) and biases ``b[k]`` of shape (out,)."""

    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: bad shapes {W.shape} / {b.shape}")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input size does not chain")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)

    def __call__(self, x):
        return forward(self, x)[0]


def init_params(layer_dims, seed) -> MLP:
    """Glorot-uniform weights, zero biases; deterministic in `seed`."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dimensions {layer_dims!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases)


def forward(params: MLP, x):
    """Evaluate the network on a sample (D,) or batch (B, D).

    Returns the output and the cache needed by `backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.shape[1] != params.layer_dims[0]:
        raise ValueError(f"input has {h.shape[1]} features, network expects {params.layer_dims[0]}")
    acts = [h]
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    out = h[0] if single else h
    return out, {"acts": acts, "single": single}


def backward(params: MLP, cache, grad_out):
    """Reverse-mode gradients.

    Returns ``(grads, grad_x)`` where ``grads`` is a list of ``(dW, db)``
    pairs aligned with the layers.  The rectifier derivative at 0 is 0.
    """
    acts = cache["acts"]
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        g = g[None]
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match cached output "
                         f"{acts[-1].shape}")
    if len(acts) != len(params.weights) + 1:
        raise ValueError("cache does not belong to this network")
    grads = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        W = params.weights[k]
        if k < len(params.weights) - 1:
            g = g * (acts[k + 1] > 0)
        grads[k] = (acts[k].T @ g, g.sum(axis=0))
        g = g @ W.T
    return grads, (g[0] if cache["single"] else g)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MLP) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params: MLP, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; `params` and `state` are updated in place."""
    flat = []
    for dW, db in grads:
        flat += [dW, db]
    arrays = params.arrays()
    if len(flat) != len(arrays) or any(g.shape != a.shape for g, a in zip(flat, arrays)):
        raise ValueError("gradient shapes do not match the parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for a, g, m, v in zip(arrays, flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def mse_loss(pred, target):
    """Mean squared error over all entries and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def composite_loss(c_hat, c, e_fo, alpha):
    """Batch sum of ``alpha ||c_hat - c||^2 + e_fo``.

    Returns ``(loss, grad_c_hat, grad_e_fo)``.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    c_hat = np.atleast_2d(np.asarray(c_hat, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    e_fo = np.asarray(e_fo, dtype=np.float64).reshape(-1)
    if c_hat.shape != c.shape or e_fo.shape[0] != c_hat.shape[0]:
        raise ValueError("shape mismatch between coefficients and FO errors")
    d = c_hat - c
    loss = float(alpha * np.sum(d * d) + np.sum(e_fo))
    return loss, 2.0 * alpha * d, np.ones_like(e_fo)


def numerical_gradient(f, x, h=1e-6, coords=None):
    """Central-difference gradient of scalar `f` at `x` (optionally on a subset of coordinates)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = {}
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


# --- model container ------------------------------------------------------

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_model(params, meta, arrays=None) -> bytes:
    """Serialise network(s) plus metadata.

    Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
    manifest, then the little-endian float64 blob whose length and per-array
    shapes the manifest declares.

    Parameters
    ----------
    params : MLP or dict of str -> MLP
    meta : dict
        JSON-serialisable metadata, stored verbatim.
    arrays : dict of str -> ndarray, optional
        Extra float arrays stored alongside the networks.
    """
    nets = params if isinstance(params, dict) else {"mlp": params}
    arrays = arrays or {}
    entries, chunks, offset = [], [], 0

    def add(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size

    net_meta = {}
    for name in sorted(nets):
        net = nets[name]
        net_meta[name] = {"layer_dims": net.layer_dims,
                          "hidden_activation": net.hidden_activation,
                          "output_activation": net.output_activation}
        for k, (W, b) in enumerate(zip(net.weights, net.biases)):
            add(f"{name}/W{k}", W)
            add(f"{name}/b{k}", b)
    for name in sorted(arrays):
        add(f"array/{name}", arrays[name])
    manifest = {"format_version": FORMAT_VERSION, "networks": net_meta, "tensors": entries,
                "blob_float64_count": offset, "meta": meta}
    head = _canonical_json(manifest)
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def load_model(data: bytes):
    """Inverse of `save_model`: returns ``(params, meta, arrays)``.

    `params` is an `MLP` if a single unnamed network was saved, else a dict.
    """
    if len(data) < 16 or data[:8] != MAGIC:
        raise ModelFormatError("not a model file (bad magic header)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise ModelFormatError("truncated manifest")
    try:
        manifest = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt manifest: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {manifest.get('format_version')!r}")
    count = manifest["blob_float64_count"]
    blob = data[16 + hlen:]
    if len(blob) != 8 * count:
        raise ModelFormatError(f"parameter blob has {len(blob)} bytes, manifest declares {8 * count}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    tensors = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        tensors[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
    nets = {}
    for name, info in manifest["networks"].items():
        depth = len(info["layer_dims"]) - 1
        nets[name] = MLP([tensors[f"{name}/W{k}"] for k in range(depth)],
                         [tensors[f"{name}/b{k}"] for k in range(depth)],
                         info["hidden_activation"], info["output_activation"])
    arrays = {k[len("array/"):]: v for k, v in tensors.items() if k.startswith("array/")}
    params = nets["mlp"] if list(nets) == ["mlp"] else nets
    return params, manifest["meta"], arrays
