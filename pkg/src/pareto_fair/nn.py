"""Small feed-forward binary classifier with hand-written backprop.

Hidden layers use ReLU; the output is one logit clamped to
``[-LOGIT_CLAMP, LOGIT_CLAMP]`` before the sigmoid, which keeps cross
entropy finite and probabilities strictly inside (0, 1).  Gradients
through the clamp are zero outside the bound.

Losses (see :func:`loss_and_grad`):

* ``CrossEntropy``   mean binary cross-entropy
* ``PEFLoss``        CE + lam * (alpha*sum(w*eps) + (1-alpha)*var(w*eps)),
                     eps_g = max(0, 1 - softacc_g / opt_g)
* ``ParityLoss``     CE + lam * sum_g |softacc_g - softacc|
* ``AdversarialLoss`` CE on the label head plus a softmax group head on the
                     last hidden layer; the group head's gradient into the
                     shared layers is multiplied by ``-reversal_strength``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

LOGIT_CLAMP = 30.0
CHECKPOINT_MAGIC = "PFNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    hidden_sizes: tuple = (256, 128, 64)
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(h) for h in self.hidden_sizes)
        if any(h < 1 for h in sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.activation != "relu":
            raise ValueError("only 'relu' hidden activation is supported")
        object.__setattr__(self, "hidden_sizes", sizes)


@dataclass(frozen=True, eq=False)
class NetworkParams:
    weights: tuple
    biases: tuple
    adv_weight: np.ndarray | None = None
    adv_bias: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input width does not chain")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("final layer must have a single output")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[1],):
                raise ValueError("bias shape does not match its layer")

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(W.shape[1] for W in self.weights[:-1])

    def arrays(self) -> list:
        out = list(self.weights) + list(self.biases)
        if self.adv_weight is not None:
            out += [self.adv_weight, self.adv_bias]
        return out

    def label_arrays(self) -> list:
        return list(self.weights) + list(self.biases)


@dataclass(frozen=True, eq=False)
class GradientSet:
    weights: tuple
    biases: tuple
    adv_weight: np.ndarray | None = None
    adv_bias: np.ndarray | None = None

    def arrays(self) -> list:
        out = list(self.weights) + list(self.biases)
        if self.adv_weight is not None:
            out += [self.adv_weight, self.adv_bias]
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    group_ids: np.ndarray | None = None
    n_groups: int = 0


@dataclass(frozen=True)
class CrossEntropy:
    kind = "plain"


@dataclass(frozen=True)
class PEFLoss:
    lam: float
    alpha: float
    optima: tuple
    weights: tuple | None = None
    kind = "pef"


@dataclass(frozen=True)
class ParityLoss:
    lam: float
    kind = "parity"


@dataclass(frozen=True)
class AdversarialLoss:
    reversal_strength: float
    head_weight: float = 1.0
    kind = "adversarial"


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def init_params(spec: LayerSpec, n_features: int, seed: int,
                adversary_groups: int | None = None) -> NetworkParams:
    """Glorot-uniform weights, zero biases.

    Limit is ``sqrt(6 / (fan_in + fan_out))``.  The adversary head draws
    from its own stream so the label network is identical with or
    without it.
    """
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    rng = _stream(seed, 0)
    widths = [n_features, *spec.hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    adv_w = adv_b = None
    if adversary_groups:
        r = widths[-2]
        lim = np.sqrt(6.0 / (r + adversary_groups))
        adv_w = _stream(seed, 1).uniform(-lim, lim, size=(r, adversary_groups))
        adv_b = np.zeros(adversary_groups)
    return NetworkParams(tuple(weights), tuple(biases), adv_w, adv_b, seed)


def _check_width(params, X):
    if X.ndim != 2 or X.shape[1] != params.n_features:
        raise ValueError(f"feature width {X.shape[-1] if X.ndim else 0} does not match "
                         f"network input width {params.n_features}")


def _forward(params, X):
    acts, pre = [X], []
    a = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    logit = (a @ params.weights[-1] + params.biases[-1])[:, 0]
    return acts, pre, logit


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def predict_logit(params: NetworkParams, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    _check_width(params, X)
    return np.clip(_forward(params, X)[2], -LOGIT_CLAMP, LOGIT_CLAMP)


def predict_proba(params: NetworkParams, features) -> np.ndarray:
    return sigmoid(predict_logit(params, features))


def predict(params: NetworkParams, features, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(params, features) > threshold).astype(np.int64)


def _group_stats(gid, G, s):
    size = np.bincount(gid, minlength=G).astype(np.float64)
    if (size == 0).any():
        missing = np.flatnonzero(size == 0).tolist()
        raise ValueError(f"batch has no examples for group(s) {missing}; "
                         "use group-proportionate batches so every group is represented")
    f = np.bincount(gid, weights=s, minlength=G) / size
    return size, f


def _penalty_terms(spec, p, y, gid, G):
    """Penalty value and d(penalty)/d(p_i)."""
    s = y * p + (1.0 - y) * (1.0 - p)
    ds_dp = 2.0 * y - 1.0
    size, f = _group_stats(gid, G, s)
    if isinstance(spec, PEFLoss):
        opt = np.asarray(spec.optima, dtype=np.float64)
        if opt.shape != (G,):
            raise ValueError("PEF optima must have one entry per group")
        w = np.ones(G) if spec.weights is None else np.asarray(spec.weights, dtype=np.float64)
        raw = 1.0 - f / opt
        eps = np.maximum(raw, 0.0)
        v = w * eps
        a = spec.alpha
        pen = a * v.sum() + (1.0 - a) * v.var()
        dv = a + (1.0 - a) * 2.0 * (v - v.mean()) / G
        df = dv * w * (raw > 0) * (-1.0 / opt)
        ds = (df / size)[gid]
    else:  # parity
        overall = s.mean()
        sg = np.sign(f - overall)
        pen = np.abs(f - overall).sum()
        ds = (sg / size)[gid] - sg.sum() / s.size
    return float(pen), ds * ds_dp


def loss_terms(params: NetworkParams, batch: Batch, spec) -> dict:
    """Scalar components of the loss (no gradients)."""
    return _loss_and_grad(params, batch, spec, need_grad=False)[0]


def loss_and_grad(params: NetworkParams, batch: Batch, spec) -> tuple[float, GradientSet]:
    """Total loss and gradients for one minibatch.

    For ``AdversarialLoss`` the returned loss is CE + head_weight * CE_group
    and the gradient is the reversal update, not the gradient of that sum.
    """
    terms, grads = _loss_and_grad(params, batch, spec, need_grad=True)
    return terms["total"], grads


def _loss_and_grad(params, batch, spec, need_grad):
    X = np.asarray(batch.features, dtype=np.float64)
    y = np.asarray(batch.labels, dtype=np.float64)
    _check_width(params, X)
    n = X.shape[0]
    acts, pre, logit = _forward(params, X)
    inside = np.abs(logit) < LOGIT_CLAMP
    z = np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP)
    p = sigmoid(z)
    ce = float(np.mean(np.logaddexp(0.0, z) - y * z))
    terms = {"ce": ce, "penalty": 0.0, "adversary": 0.0}

    dz = (p - y) / n
    lam = 0.0
    if isinstance(spec, (PEFLoss, ParityLoss)):
        if batch.group_ids is None:
            raise ValueError(f"{type(spec).__name__} needs per-example group ids")
        lam = float(spec.lam)
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        pen, dpen_dp = _penalty_terms(spec, p, y, np.asarray(batch.group_ids), batch.n_groups)
        terms["penalty"] = pen
        dz = dz + lam * dpen_dp * p * (1.0 - p)
    elif not isinstance(spec, (CrossEntropy, AdversarialLoss)):
        raise TypeError(f"unknown loss spec {spec!r}")
    dz = dz * inside
    terms["total"] = ce + lam * terms["penalty"]

    adv = isinstance(spec, AdversarialLoss)
    if adv:
        if params.adv_weight is None:
            raise ValueError("adversarial loss needs parameters with an adversary head")
        if batch.group_ids is None:
            raise ValueError("adversarial loss needs per-example group ids")
        gid = np.asarray(batch.group_ids)
        r = acts[-1]
        la = r @ params.adv_weight + params.adv_bias
        la = la - la.max(axis=1, keepdims=True)
        logZ = np.log(np.exp(la).sum(axis=1))
        ce_adv = float(np.mean(logZ - la[np.arange(n), gid]))
        terms["adversary"] = ce_adv
        terms["total"] = ce + spec.head_weight * ce_adv

    if not need_grad:
        return terms, None

    L = len(params.weights)
    gW = [None] * L
    gb = [None] * L
    g_out = dz[:, None]
    gW[-1] = acts[-1].T @ g_out
    gb[-1] = g_out.sum(axis=0)
    da = g_out @ params.weights[-1].T

    gaw = gab = None
    if adv:
        P = np.exp(la - logZ[:, None])
        P[np.arange(n), gid] -= 1.0
        dla = spec.head_weight * P / n
        gaw = r.T @ dla
        gab = dla.sum(axis=0)
        da = da - spec.reversal_strength * (dla @ params.adv_weight.T)

    for l in range(L - 2, -1, -1):
        dzl = da * (pre[l] > 0)
        gW[l] = acts[l].T @ dzl
        gb[l] = dzl.sum(axis=0)
        if l:
            da = dzl @ params.weights[l].T
    return terms, GradientSet(tuple(gW), tuple(gb), gaw, gab)


def sgd_step(params: NetworkParams, grads: GradientSet, learning_rate: float) -> NetworkParams:
    """Return ``params - learning_rate * grads`` as new parameters."""
    if not learning_rate > 0:
        raise ValueError("learning_rate must be positive")
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient")
    W = tuple(w - learning_rate * g for w, g in zip(params.weights, grads.weights))
    b = tuple(v - learning_rate * g for v, g in zip(params.biases, grads.biases))
    aw, ab = params.adv_weight, params.adv_bias
    if aw is not None and grads.adv_weight is not None:
        aw = aw - learning_rate * grads.adv_weight
        ab = ab - learning_rate * grads.adv_bias
    return replace(params, weights=W, biases=b, adv_weight=aw, adv_bias=ab)


# -- checkpoints ---------------------------------------------------------------
#
# Layout:  b"PFNN <version>\n" + one JSON header line + raw little-endian
# float64 arrays in header order.  The header lists name and shape of
# every array ("W0".., "b0".., optional "adv_W", "adv_b") and the seed.

def _named_arrays(params):
    L = len(params.weights)
    named = [(f"W{i}", params.weights[i]) for i in range(L)]
    named += [(f"b{i}", params.biases[i]) for i in range(L)]
    if params.adv_weight is not None:
        named += [("adv_W", params.adv_weight), ("adv_b", params.adv_bias)]
    return named


def dumps_params(params: NetworkParams) -> bytes:
    named = _named_arrays(params)
    header = {"seed": params.seed, "dtype": "<f8",
              "arrays": [{"name": k, "shape": list(a.shape)} for k, a in named]}
    buf = io.BytesIO()
    buf.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode())
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for _, a in named:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_params(blob: bytes) -> NetworkParams:
    first, rest = blob.split(b"\n", 1)
    magic, version = first.decode().split()
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a parameter checkpoint")
    if int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    head, data = rest.split(b"\n", 1)
    header = json.loads(head)
    arrays, off = {}, 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count,
                                             offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise ValueError("checkpoint payload size does not match its header")
    L = sum(1 for k in arrays if k.startswith("W"))
    return NetworkParams(tuple(arrays[f"W{i}"] for i in range(L)),
                         tuple(arrays[f"b{i}"] for i in range(L)),
                         arrays.get("adv_W"), arrays.get("adv_b"), header["seed"])


def save_params(params: NetworkParams, path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path) -> NetworkParams:
    return loads_params(Path(path).read_bytes())
