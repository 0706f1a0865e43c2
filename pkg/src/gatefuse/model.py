"""Context-informed gated fusion network, trained from scratch.

Architecture, per window:
  * each modality's channel rows pass through two strided 1-D convolutions
    (ReLU) followed by global average pooling over time and a linear map to
    the shared embedding dimension;
  * the 3-dim context vector [progress, sin(2*pi*p), cos(2*pi*p)] passes
    through a one-layer ReLU encoder;
  * a per-modality sigmoid gate scores [embedding; context], forced to
    exactly zero for unavailable modalities;
  * embeddings are fused by a normalized gated average (gate sum + epsilon
    in the denominator) and the head maps [fused; context] to a scalar on
    the encoded 0..4 label scale.

Training minimizes L1 loss (subgradient 0 at the kink) with per-parameter
adaptive moments; every gradient here is derived by hand and checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .channels import default_channel_spec
from .corpus import ChannelStandardizer, WindowCorpus
from .errors import (
    EmptyTrainingSet,
    MalformedFile,
    NonFiniteLoss,
    ShapeMismatch,
)
from .metrics import round_clip
from .validation import check_fitted, check_fold_tag

CONTEXT_DIM = 3
CHECKPOINT_FORMAT = "gatefuse-checkpoint"


def context_vector(progress: float) -> np.ndarray:
    """[progress, sin(2*pi*progress), cos(2*pi*progress)]."""
    p = float(progress)
    return np.array([p, np.sin(2.0 * np.pi * p), np.cos(2.0 * np.pi * p)])


def context_vectors(progress) -> np.ndarray:
    p = np.asarray(progress, dtype=np.float64)
    return np.stack([p, np.sin(2.0 * np.pi * p), np.cos(2.0 * np.pi * p)], axis=1)


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def fuse(embeddings, gates, epsilon: float = 1e-8) -> np.ndarray:
    """Normalized gated average: sum(gamma_m h_m) / (sum(gamma_m) + eps)."""
    h = np.asarray(embeddings, dtype=np.float64)
    g = np.asarray(gates, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("gates must be non-negative")
    return (g[:, None] * h).sum(axis=0) / (g.sum() + epsilon)


class _ScratchPool:
    """Reusable work buffers keyed by name.

    Fresh multi-megabyte numpy allocations per batch cost more in page
    faults than the GEMMs they feed; reusing stable-shaped buffers across
    batches removes that. A pooled buffer is only valid until the next
    request under the same name, which makes a net instance single-writer.
    """

    def __init__(self):
        self._buffers = {}

    def get(self, name, shape, dtype):
        buf = self._buffers.get(name)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype=dtype)
            self._buffers[name] = buf
        return buf

    def __getstate__(self):
        return {}  # buffers are scratch; never ship them across processes

    def __setstate__(self, state):
        self._buffers = {}


def _im2col(x_cbl, kernel, stride, pool, key):
    """Column buffer for the conv GEMM.

    ``x_cbl`` is (C, B, L_in) contiguous. The buffer is laid out k-major,
    (K*C, B*L_out), filled by K strided slice copies - the one copy pattern
    numpy executes at near-memcpy speed - so each convolution is a single
    large matmul.
    """
    c, b, l_in = x_cbl.shape
    l_out = _out_len(l_in, kernel, stride)
    cols = pool.get(key, (kernel, c, b, l_out), x_cbl.dtype)
    for k in range(kernel):
        np.copyto(cols[k], x_cbl[:, :, k:k + stride * l_out:stride])
    return cols.reshape(kernel * c, b * l_out), l_out


def _w2d(weights):
    """(F, C, K) weights reordered to match the k-major column layout."""
    f = weights.shape[0]
    return np.ascontiguousarray(weights.transpose(0, 2, 1)).reshape(f, -1)


def _conv_forward(x_cbl, weights, bias, stride, pool, key):
    """Strided 1-D convolution; returns (pre_activation (F, B*L), cols, L)."""
    cols, l_out = _im2col(x_cbl, weights.shape[2], stride, pool, key)
    pre = pool.get(key + ".pre", (weights.shape[0], cols.shape[1]), cols.dtype)
    np.matmul(_w2d(weights), cols, out=pre)
    pre += bias[:, None]
    return pre, cols, l_out


def _conv_backward(dpre, cols, weights, stride, in_shape=None):
    """Gradients of _conv_forward given dL/dpre as (F, B*L_out).

    ``in_shape`` requests the input gradient (as (C, B, L_in)); the first
    layer passes None since nothing sits below it.
    """
    f, c, kernel = weights.shape
    dw2d = dpre @ cols.T  # (F, K*C)
    d_weights = np.ascontiguousarray(dw2d.reshape(f, kernel, c).transpose(0, 2, 1))
    dbias = dpre.sum(axis=1)
    dx = None
    if in_shape is not None:
        _, b, l_in = in_shape
        l_out = dpre.shape[1] // b
        dcols = _w2d(weights).T @ dpre
        d4 = dcols.reshape(kernel, c, b, l_out)
        dx = np.zeros(in_shape, dtype=dpre.dtype)
        for k in range(kernel):
            dx[:, :, k:k + stride * l_out:stride] += d4[k]
    return d_weights, dbias, dx


def _out_len(n_time, kernel, stride):
    return (n_time - kernel) // stride + 1


@dataclass
class TrainConfig:
    """Optimization settings for the fusion model."""

    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    patience: int = 30
    val_fraction: float = 0.2
    embed_dim: int = 32
    conv_filters: int = 8
    kernel_size: int = 9
    stride: int = 4

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must lie in (0, 1)")
        if min(self.embed_dim, self.conv_filters, self.kernel_size, self.stride) < 1:
            raise ValueError("architecture dims must be >= 1")


class GatedFusionNet:
    """Parameter container plus vectorized forward/backward passes.

    ``channel_rows`` maps each modality to the row indices it occupies in
    the input tensor; inputs may carry more rows than the model consumes
    (ablated subsets index into the full 28-row layout).
    """

    def __init__(self, modalities, channel_rows, conv_filters=8, kernel_size=9,
                 stride=4, embed_dim=32, context_dim=CONTEXT_DIM, epsilon=1e-8,
                 seed=0, dtype=np.float64):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.modalities = tuple(modalities)
        self.channel_rows = {m: tuple(channel_rows[m]) for m in self.modalities}
        self.conv_filters = conv_filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.embed_dim = embed_dim
        self.context_dim = context_dim
        self.epsilon = float(epsilon)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(np.random.default_rng(seed))
        self._pool = _ScratchPool()

    # -- parameters ---------------------------------------------------------

    def param_order(self):
        names = []
        f, k, d, dc = self.conv_filters, self.kernel_size, self.embed_dim, self.context_dim
        for mod in self.modalities:
            c = len(self.channel_rows[mod])
            names += [
                (f"{mod}.conv1_w", (f, c, k)),
                (f"{mod}.conv1_b", (f,)),
                (f"{mod}.conv2_w", (f, f, k)),
                (f"{mod}.conv2_b", (f,)),
                (f"{mod}.proj_w", (d, f)),
                (f"{mod}.proj_b", (d,)),
                (f"{mod}.gate_w", (d + dc,)),
                (f"{mod}.gate_b", ()),
            ]
        names += [
            ("ctx_w", (dc, dc)),
            ("ctx_b", (dc,)),
            ("head_w", (d + dc,)),
            ("head_b", ()),
        ]
        return names

    def _init_params(self, rng):
        # Uniform fan-in scaling: U(-1/sqrt(fan_in), +1/sqrt(fan_in)) for
        # weights and biases alike.
        fan_in = {
            "conv1_w": lambda shape: shape[1] * shape[2],
            "conv2_w": lambda shape: shape[1] * shape[2],
            "proj_w": lambda shape: shape[1],
            "gate_w": lambda shape: shape[0],
            "ctx_w": lambda shape: shape[1],
            "head_w": lambda shape: shape[0],
        }
        params = {}
        bound_for_bias = {}
        for name, shape in self.param_order():
            leaf = name.split(".")[-1]
            if leaf.endswith("_w"):
                bound = 1.0 / np.sqrt(fan_in[leaf](shape))
                bound_for_bias[name.replace("_w", "_b")] = bound
            else:
                bound = bound_for_bias.get(name, 1.0)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        return params

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward ------------------------------------------------------------

    def _encode(self, params, x_cbt_full, mod, cache=None):
        """One modality's temporal encoder: conv -> conv -> GAP -> linear.

        ``x_cbt_full`` is the whole batch in channel-major (C_all, B, T)
        layout; each modality takes its (usually contiguous) row block.
        """
        f, k, s = self.conv_filters, self.kernel_size, self.stride
        rows = list(self.channel_rows[mod])
        if x_cbt_full.shape[0] <= max(rows):
            raise ShapeMismatch(
                f"input has {x_cbt_full.shape[0]} rows but modality {mod} "
                f"needs row {max(rows)}"
            )
        b, t = x_cbt_full.shape[1], x_cbt_full.shape[2]
        len1 = _out_len(t, k, s)
        if len1 < 1 or _out_len(len1, k, s) < 1:
            raise ShapeMismatch(f"time axis {t} too short for two strided convs")
        if rows == list(range(rows[0], rows[-1] + 1)):
            x_cbt = x_cbt_full[rows[0]:rows[-1] + 1]  # contiguous view
        else:
            x_cbt = np.ascontiguousarray(x_cbt_full[rows])
        pool = self._pool
        pre1, cols1, len1 = _conv_forward(x_cbt, params[f"{mod}.conv1_w"],
                                          params[f"{mod}.conv1_b"], s,
                                          pool, f"{mod}.1")
        a1 = pool.get(f"{mod}.a1", pre1.shape, pre1.dtype)
        np.maximum(pre1, 0.0, out=a1)
        a1 = a1.reshape(f, b, len1)
        pre2, cols2, len2 = _conv_forward(a1, params[f"{mod}.conv2_w"],
                                          params[f"{mod}.conv2_b"], s,
                                          pool, f"{mod}.2")
        a2 = np.maximum(pre2, 0.0)  # (F, B*len2)
        pooled = a2.reshape(f, b, len2).mean(axis=2)  # (F, B)
        h = pooled.T @ params[f"{mod}.proj_w"].T + params[f"{mod}.proj_b"]
        if cache is not None:
            cache[mod] = {
                "cols1": cols1, "relu1": pre1 > 0, "cols2": cols2,
                "relu2": pre2 > 0, "pooled": pooled, "a1_shape": a1.shape,
                "len1": len1, "len2": len2, "batch": b,
            }
        return h

    def forward(self, x, mask, context, params=None, need_cache=False):
        """Batched forward pass.

        Args:
            x: (B, C, T) standardized tensors (C covers all channel rows the
               configured modalities index).
            mask: (B, M) availability per modality.
            context: (B, 3) context vectors.

        Returns (yhat, cache); cache is None unless requested.
        """
        params = params or self.params
        x = np.asarray(x, dtype=self.dtype)
        mask = np.asarray(mask, dtype=bool)
        context = np.asarray(context, dtype=self.dtype)
        b = x.shape[0]
        m_count = len(self.modalities)
        if mask.shape != (b, m_count):
            raise ShapeMismatch(f"mask must be ({b}, {m_count}), got {mask.shape}")
        if context.shape != (b, self.context_dim):
            raise ShapeMismatch("context must be (B, 3)")

        cache = {"mods": {}} if need_cache else None
        ctx_pre = context @ params["ctx_w"].T + params["ctx_b"]
        ctx = np.maximum(ctx_pre, 0.0)

        x_cbt_full = self._pool.get("xT", (x.shape[1], b, x.shape[2]), x.dtype)
        np.copyto(x_cbt_full, x.transpose(1, 0, 2))
        h = np.empty((b, m_count, self.embed_dim), dtype=self.dtype)
        sig = np.zeros((b, m_count), dtype=self.dtype)
        gains = np.empty((b, m_count, self.embed_dim + self.context_dim),
                         dtype=self.dtype)
        for mi, mod in enumerate(self.modalities):
            hm = self._encode(params, x_cbt_full, mod,
                              cache["mods"] if need_cache else None)
            gin = np.concatenate([hm, ctx], axis=1)
            a = gin @ params[f"{mod}.gate_w"] + params[f"{mod}.gate_b"]
            h[:, mi] = hm
            sig[:, mi] = sigmoid(a)
            gains[:, mi] = gin

        gamma = sig * mask  # unavailable modalities gate to exactly zero
        denom = gamma.sum(axis=1) + self.epsilon
        z = np.einsum("bm,bmd->bd", gamma, h) / denom[:, None]
        hin = np.concatenate([z, ctx], axis=1)
        yhat = hin @ params["head_w"] + params["head_b"]

        if need_cache:
            cache.update(x=x, mask=mask, context=context, ctx_pre=ctx_pre,
                         ctx=ctx, h=h, sig=sig, gamma=gamma, denom=denom,
                         z=z, hin=hin, gate_inputs=gains)
        return yhat, cache

    def predict_batched(self, x, mask, context, chunk: int = 64,
                        collect_gates: bool = False):
        """Forward over many windows in fixed-size chunks.

        Returns (yhat, gates); gates is (N, M) when requested, else None.
        Chunking keeps the scratch pool small on corpus-sized inputs.
        """
        outs, gates = [], []
        n = len(x)
        for lo in range(0, n, chunk):
            sl = slice(lo, min(lo + chunk, n))
            yh, cache = self.forward(x[sl], mask[sl], context[sl],
                                     need_cache=collect_gates)
            outs.append(yh)
            if collect_gates:
                gates.append(cache["gamma"].copy())
        yhat = np.concatenate(outs) if outs else np.empty(0, dtype=self.dtype)
        return yhat, (np.concatenate(gates) if gates else None)

    def gate_values(self, x, mask, context, chunk: int = 64) -> np.ndarray:
        """Per-window, per-modality gate values (N, M)."""
        _, gates = self.predict_batched(x, mask, context, chunk=chunk,
                                        collect_gates=True)
        return gates

    # -- backward -----------------------------------------------------------

    def backward(self, cache, dy, params=None):
        """Gradients of the cached forward pass, reverse-mode by hand.

        ``dy`` is dL/dyhat, shape (B,). Returns a dict matching params.
        """
        params = params or self.params
        f, k, s = self.conv_filters, self.kernel_size, self.stride
        d, dc = self.embed_dim, self.context_dim
        grads = {}

        hin, dy = cache["hin"], np.asarray(dy, dtype=self.dtype)
        grads["head_w"] = hin.T @ dy
        grads["head_b"] = np.asarray(dy.sum())
        dhin = dy[:, None] * params["head_w"][None, :]
        dz = dhin[:, :d]
        dctx = dhin[:, d:].copy()

        # Fusion quotient: z = sum(gamma h) / (sum(gamma) + eps)
        h, gamma, denom, z = cache["h"], cache["gamma"], cache["denom"], cache["z"]
        dgamma = np.einsum("bmd,bd->bm", h - z[:, None, :], dz) / denom[:, None]
        dh = (gamma / denom[:, None])[:, :, None] * dz[:, None, :]

        sig, mask = cache["sig"], cache["mask"]
        da = dgamma * sig * (1.0 - sig) * mask  # masked gates carry no gradient
        for mi, mod in enumerate(self.modalities):
            gin = cache["gate_inputs"][:, mi]
            grads[f"{mod}.gate_w"] = gin.T @ da[:, mi]
            grads[f"{mod}.gate_b"] = np.asarray(da[:, mi].sum())
            dgin = da[:, mi][:, None] * params[f"{mod}.gate_w"][None, :]
            dh[:, mi] += dgin[:, :d]
            dctx += dgin[:, d:]

        dctx_pre = dctx * (cache["ctx_pre"] > 0)
        grads["ctx_w"] = dctx_pre.T @ cache["context"]
        grads["ctx_b"] = dctx_pre.sum(axis=0)

        for mi, mod in enumerate(self.modalities):
            mc = cache["mods"][mod]
            len2 = mc["len2"]
            dhm = dh[:, mi]  # (B, d)
            grads[f"{mod}.proj_w"] = dhm.T @ mc["pooled"].T
            grads[f"{mod}.proj_b"] = dhm.sum(axis=0)
            dpooled = params[f"{mod}.proj_w"].T @ dhm.T  # (F, B)
            da2 = np.repeat(dpooled / len2, len2, axis=1) * mc["relu2"]
            dw2, db2, da1 = _conv_backward(da2, mc["cols2"],
                                           params[f"{mod}.conv2_w"], s,
                                           in_shape=mc["a1_shape"])
            grads[f"{mod}.conv2_w"] = dw2
            grads[f"{mod}.conv2_b"] = db2
            da1 = da1.reshape(f, -1) * mc["relu1"]
            dw1, db1, _ = _conv_backward(da1, mc["cols1"],
                                         params[f"{mod}.conv1_w"], s)
            grads[f"{mod}.conv1_w"] = dw1
            grads[f"{mod}.conv1_b"] = db1
        return grads


def l1_loss_and_grad(yhat, y):
    """Mean absolute error and its subgradient (0 at the kink)."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = yhat - y
    loss = float(np.mean(np.abs(diff)))
    return loss, np.sign(diff) / len(y)


# -- spec-level scalar operations -------------------------------------------

def encode_modality(net: GatedFusionNet, modality: str, x_m: np.ndarray) -> np.ndarray:
    """Embedding of one modality's (C_m, T) rows."""
    rows = net.channel_rows[modality]
    x_m = np.asarray(x_m, dtype=net.dtype)
    if x_m.ndim != 2 or x_m.shape[0] != len(rows):
        raise ShapeMismatch(
            f"modality {modality} expects {len(rows)} rows, got {x_m.shape}")
    full = np.zeros((1, max(r for rs in net.channel_rows.values() for r in rs) + 1,
                     x_m.shape[1]), dtype=net.dtype)
    full[0, list(rows)] = x_m
    return net._encode(net.params, full, modality)[0]


def encode_context(net: GatedFusionNet, c) -> np.ndarray:
    c = np.asarray(c, dtype=net.dtype).reshape(1, -1)
    pre = c @ net.params["ctx_w"].T + net.params["ctx_b"]
    return np.maximum(pre, 0.0)[0]


def gate(net: GatedFusionNet, modality: str, h_m, c_tilde,
         available: bool = True) -> float:
    """Sigmoid gate over [embedding; encoded context]; exactly 0 when the
    modality is unavailable (the gate network is not evaluated)."""
    if not available:
        return 0.0
    gin = np.concatenate([np.asarray(h_m, dtype=np.float64),
                          np.asarray(c_tilde, dtype=np.float64)])
    a = gin @ net.params[f"{modality}.gate_w"] + net.params[f"{modality}.gate_b"]
    return float(sigmoid(a))


def predict_window(net: GatedFusionNet, tensor, mask, progress) -> float:
    """Full forward pass for one standardized window; encoded-scale output."""
    yhat, _ = net.forward(tensor[None], np.asarray(mask, dtype=bool)[None],
                          context_vectors([progress]))
    return float(yhat[0])


# -- training ----------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = -1
    gate_matrix: np.ndarray | None = None


def train(net: GatedFusionNet, x, mask, context, y_encoded,
          config: TrainConfig) -> TrainResult:
    """Mini-batch training with adaptive moments and early stopping.

    A seeded fraction of windows is held out for validation; the best
    validation parameters are restored at the end. Per-window gate values
    of the returned model over all provided windows are recorded.
    Deterministic for fixed (data, config).
    """
    config.validate()
    n = len(y_encoded)
    if n == 0:
        raise EmptyTrainingSet("no training windows")
    x = np.asarray(x, dtype=net.dtype)
    mask = np.asarray(mask, dtype=bool)
    context = np.asarray(context, dtype=net.dtype)
    y = np.asarray(y_encoded, dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n)) if n >= 2 else 0
    n_val = min(max(n_val, 1 if n >= 2 else 0), n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    m_state = {k: np.zeros_like(v) for k, v in net.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in net.params.items()}
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    def eval_loss(indices):
        if len(indices) == 0:
            return np.nan
        yhat, _ = net.forward(x[indices], mask[indices], context[indices])
        return float(np.mean(np.abs(yhat - y[indices])))

    best_params = net.copy_params()
    best_val = eval_loss(val_idx) if n_val else eval_loss(train_idx)
    best_epoch = -1
    bad_epochs = 0
    history = []

    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            yhat, cache = net.forward(x[batch], mask[batch], context[batch],
                                      need_cache=True)
            loss, dy = l1_loss_and_grad(yhat, y[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch}")
            epoch_losses.append(loss)
            grads = net.backward(cache, dy)
            step += 1
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for name, g in grads.items():
                m_state[name] = beta1 * m_state[name] + (1 - beta1) * g
                v_state[name] = beta2 * v_state[name] + (1 - beta2) * (g * g)
                net.params[name] = net.params[name] - config.learning_rate * (
                    (m_state[name] / bc1) / (np.sqrt(v_state[name] / bc2) + adam_eps))

        val_loss = eval_loss(val_idx) if n_val else eval_loss(train_idx)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss diverged at epoch {epoch}")
        history.append((epoch, float(np.mean(epoch_losses)) if epoch_losses else np.nan,
                        val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = net.copy_params()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break

    net.params = best_params
    gate_matrix = net.gate_values(x, mask, context) if n else None
    return TrainResult(params=net.params, history=history,
                       best_epoch=best_epoch, gate_matrix=gate_matrix)


# -- sklearn-style estimator --------------------------------------------------

class GatedFusionRegressor(BaseEstimator, RegressorMixin):
    """Fit/predict wrapper: standardizes with training-fold stats, trains the
    fusion net, and decodes predictions back to labels 1..5.

    ``modalities=None`` uses all eleven groups; an ablated subset passes a
    tuple of modality names. The embedded standardizer carries the fold tag,
    so predicting a fold the model was not fitted for raises.
    """

    def __init__(self, modalities=None, conv_filters=8, kernel_size=9, stride=4,
                 embed_dim=32, epsilon=1e-8, learning_rate=1e-3, batch_size=32,
                 epochs=300, val_fraction=0.2, patience=30, seed=0, fold_tag=None):
        self.modalities = modalities
        self.conv_filters = conv_filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.embed_dim = embed_dim
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.patience = patience
        self.seed = seed
        self.fold_tag = fold_tag

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, patience=self.patience,
            val_fraction=self.val_fraction, embed_dim=self.embed_dim,
            conv_filters=self.conv_filters, kernel_size=self.kernel_size,
            stride=self.stride)

    def _mask_columns(self, corpus: WindowCorpus) -> np.ndarray:
        cols = [corpus.spec.modality_index(m) for m in self.modalities_]
        return corpus.masks()[:, cols]

    def fit(self, corpus: WindowCorpus, y=None):
        if len(corpus) == 0:
            raise EmptyTrainingSet("empty corpus")
        spec = corpus.spec
        self.modalities_ = tuple(self.modalities) if self.modalities else spec.modalities
        unknown = set(self.modalities_) - set(spec.modalities)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")

        self.standardizer_ = ChannelStandardizer(fold_tag=self.fold_tag).fit(corpus)
        x = self.standardizer_.transform_tensors(corpus.tensors())
        mask = self._mask_columns(corpus)
        ctx = context_vectors(corpus.progress())
        y_enc = (corpus.labels() - 1).astype(np.float64)

        self.net_ = GatedFusionNet(
            self.modalities_,
            {m: spec.modality_rows(m) for m in self.modalities_},
            conv_filters=self.conv_filters, kernel_size=self.kernel_size,
            stride=self.stride, embed_dim=self.embed_dim, epsilon=self.epsilon,
            seed=self.seed)
        result = train(self.net_, x, mask, ctx, y_enc, self._train_config())
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.train_gate_log_ = _gate_rows(corpus, self.modalities_,
                                          result.gate_matrix)
        return self

    def predict(self, corpus: WindowCorpus, fold=None) -> np.ndarray:
        """Encoded-scale (0..4) real-valued predictions."""
        check_fitted(self, "net_")
        check_fold_tag(self.fold_tag, fold)
        x = self.standardizer_.transform_tensors(corpus.tensors(), fold=fold)
        mask = self._mask_columns(corpus)
        ctx = context_vectors(corpus.progress())
        yhat, cache = self.net_.forward(x, mask, ctx, need_cache=True)
        self.gate_log_ = _gate_rows(corpus, self.modalities_, cache["gamma"])
        return yhat

    def predict_labels(self, corpus: WindowCorpus, fold=None) -> np.ndarray:
        return round_clip(self.predict(corpus, fold=fold))


def _gate_rows(corpus, modalities, gate_matrix):
    if gate_matrix is None:
        return []
    ids = corpus.window_ids()
    return [(wid, mod, float(gate_matrix[i, mi]))
            for i, wid in enumerate(ids)
            for mi, mod in enumerate(modalities)]


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, regressor: GatedFusionRegressor) -> None:
    """JSON header (architecture, dims, seed, channel-spec hash, stats) plus
    a little-endian float32 parameter blob in canonical order."""
    check_fitted(regressor, "net_")
    net = regressor.net_
    stats = regressor.standardizer_.stats_
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "channel_spec_hash": default_channel_spec().spec_hash(),
        "modalities": list(net.modalities),
        "channel_rows": {m: list(r) for m, r in net.channel_rows.items()},
        "dims": {"conv_filters": net.conv_filters, "kernel_size": net.kernel_size,
                 "stride": net.stride, "embed_dim": net.embed_dim,
                 "context_dim": net.context_dim},
        "epsilon": net.epsilon,
        "seed": net.seed,
        "params": [{"name": n, "shape": list(s)} for n, s in net.param_order()],
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist(),
                  "std_floor": stats.std_floor, "fold_tag": stats.fold_tag},
        "fold_tag": regressor.fold_tag,
        "train": {k: getattr(regressor, k) for k in
                  ("learning_rate", "batch_size", "epochs", "val_fraction",
                   "patience")},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for name, _ in net.param_order():
            fh.write(np.ascontiguousarray(net.params[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> GatedFusionRegressor:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFile(f"{path}: bad checkpoint header") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise MalformedFile(f"{path}: not a checkpoint")
        if header["channel_spec_hash"] != default_channel_spec().spec_hash():
            raise MalformedFile(f"{path}: checkpoint built for another channel layout")
        blob = fh.read()

    dims = header["dims"]
    reg = GatedFusionRegressor(
        modalities=tuple(header["modalities"]),
        conv_filters=dims["conv_filters"], kernel_size=dims["kernel_size"],
        stride=dims["stride"], embed_dim=dims["embed_dim"],
        epsilon=header["epsilon"], seed=header["seed"],
        fold_tag=header.get("fold_tag"), **header.get("train", {}))
    net = GatedFusionNet(
        tuple(header["modalities"]),
        {m: tuple(r) for m, r in header["channel_rows"].items()},
        conv_filters=dims["conv_filters"], kernel_size=dims["kernel_size"],
        stride=dims["stride"], embed_dim=dims["embed_dim"],
        context_dim=dims["context_dim"], epsilon=header["epsilon"],
        seed=header["seed"])

    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        net.params[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 4
    if offset != len(blob):
        raise MalformedFile(f"{path}: parameter blob size mismatch")

    from .corpus import ChannelStats
    stats = header["stats"]
    standardizer = ChannelStandardizer(std_floor=stats["std_floor"],
                                       fold_tag=stats["fold_tag"])
    standardizer.stats_ = ChannelStats(
        mean=np.array(stats["mean"]), std=np.array(stats["std"]),
        std_floor=stats["std_floor"], fold_tag=stats["fold_tag"])
    reg.net_ = net
    reg.standardizer_ = standardizer
    reg.modalities_ = tuple(header["modalities"])
    reg.history_ = []
    reg.best_epoch_ = -1
    return reg
