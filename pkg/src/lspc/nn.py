"""Dense-network math kernel.

Everything is plain numpy with hand-written backward passes: MLPs with an
optional diagonal-Gaussian output head, Adam, soft target updates, the
asymmetric squared (expectile) loss, closed-form KL against the standard
normal, and a finite-difference gradient checker. Training runs in float32;
gradient verification always runs on float64 copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_ACTIVATIONS = ("relu", "tanh")
_HEADS = ("linear", "gaussian")

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian given by per-dimension mean and log standard deviation."""

    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


class GradientBuffer:
    """Per-parameter gradient arrays mirroring an MlpNet's weights/biases."""

    def __init__(self, d_weights, d_biases):
        self.d_weights = d_weights
        self.d_biases = d_biases

    @classmethod
    def zeros_like(cls, net: "MlpNet") -> "GradientBuffer":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )

    def tensors(self):
        for k, (dw, db) in enumerate(zip(self.d_weights, self.d_biases)):
            yield f"L{k}.w", dw
            yield f"L{k}.b", db

    def add_(self, other: "GradientBuffer") -> "GradientBuffer":
        for dw, ow in zip(self.d_weights, other.d_weights):
            dw += ow
        for db, ob in zip(self.d_biases, other.d_biases):
            db += ob
        return self

    def scale_(self, c: float) -> "GradientBuffer":
        for dw in self.d_weights:
            dw *= dw.dtype.type(c)
        for db in self.d_biases:
            db *= db.dtype.type(c)
        return self

    def max_abs(self) -> float:
        vals = [float(np.max(np.abs(t))) if t.size else 0.0 for _, t in self.tensors()]
        return max(vals) if vals else 0.0


class MlpNet:
    """Fully connected network: hidden activations plus a linear or Gaussian head.

    layer_sizes includes input and output widths, e.g. [2, 64, 64, 1]. For the
    gaussian head the final size is the *raw* output width and must be even;
    the first half is the mean, the second half the log-std (clamped to
    [LOG_STD_MIN, LOG_STD_MAX] before use).
    """

    def __init__(self, layer_sizes, activation="relu", head="linear",
                 dtype=np.float32, rng=None):
        if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
            raise UsageError(f"invalid layer sizes {layer_sizes!r}")
        if activation not in _ACTIVATIONS:
            raise UsageError(f"unknown activation {activation!r}")
        if head not in _HEADS:
            raise UsageError(f"unknown head {head!r}")
        if head == "gaussian" and layer_sizes[-1] % 2 != 0:
            raise UsageError("gaussian head needs an even raw output width")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.activation = activation
        self.head = head
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w.astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        """Width of the head output (per-dimension for gaussian heads)."""
        raw = self.layer_sizes[-1]
        return raw // 2 if self.head == "gaussian" else raw

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def same_architecture(self, other: "MlpNet") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and self.activation == other.activation
                and self.head == other.head)

    def copy(self, dtype=None) -> "MlpNet":
        out = MlpNet(self.layer_sizes, self.activation, self.head,
                     dtype=dtype or self.dtype)
        for k in range(self.n_layers):
            out.weights[k] = self.weights[k].astype(out.dtype)
            out.biases[k] = self.biases[k].astype(out.dtype)
        return out

    def tensors(self):
        for k in range(self.n_layers):
            yield f"L{k}.w", self.weights[k]
            yield f"L{k}.b", self.biases[k]

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        kind = name.split(".")[-1]
        k = int(name.split(".")[0][1:])
        target = self.weights if kind == "w" else self.biases
        if target[k].shape != value.shape:
            raise UsageError(f"shape mismatch for {name}: {target[k].shape} vs {value.shape}")
        target[k] = value.astype(self.dtype)

    # -- forward / backward ------------------------------------------------

    def _activate(self, z):
        if self.activation == "relu":
            return np.maximum(z, 0)
        return np.tanh(z)

    def _activate_grad(self, z, a):
        if self.activation == "relu":
            return (z > 0).astype(z.dtype)
        return 1.0 - a * a

    def forward_cached(self, x: np.ndarray):
        """Run the net on a batch (or single vector); returns (output, cache)."""
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise UsageError(
                f"input of shape {x.shape} does not match input width {self.in_dim}")
        pre: list[np.ndarray] = []
        acts: list[np.ndarray] = [x]
        h = x
        for k in range(self.n_layers - 1):
            z = h @ self.weights[k] + self.biases[k]
            pre.append(z)
            h = self._activate(z)
            acts.append(h)
        raw = h @ self.weights[-1] + self.biases[-1]
        cache = _ForwardCache(self, pre, acts, raw, squeeze)
        if self.head == "gaussian":
            d = self.out_dim
            mean = raw[:, :d]
            # sigmoid rescaling keeps log_std inside [MIN, MAX] with gradient
            # flowing everywhere (a hard clip would trap saturated units)
            sig = 1.0 / (1.0 + np.exp(-raw[:, d:]))
            log_std = LOG_STD_MIN + (LOG_STD_MAX - LOG_STD_MIN) * sig
            cache.clip_mask = (self.dtype.type(LOG_STD_MAX - LOG_STD_MIN)
                               * sig * (1.0 - sig))
            if squeeze:
                return DiagGaussian(mean[0], log_std[0]), cache
            return DiagGaussian(mean, log_std), cache
        if squeeze:
            return raw[0], cache
        return raw, cache

    def forward(self, x: np.ndarray):
        out, _ = self.forward_cached(x)
        return out

    def backward(self, cache: "_ForwardCache", upstream):
        """Backpropagate; upstream matches the head output.

        Linear head: an array shaped like the output. Gaussian head: a pair
        (d_mean, d_log_std). Returns (GradientBuffer, d_input).
        """
        if cache is None or cache.net is not self:
            raise UsageError("backward needs the cache from this net's forward pass")
        if self.head == "gaussian":
            d_mean, d_log_std = upstream
            d_mean = np.asarray(d_mean, dtype=self.dtype)
            d_log_std = np.asarray(d_log_std, dtype=self.dtype)
            if cache.squeeze:
                d_mean = d_mean[None, :]
                d_log_std = d_log_std[None, :]
            d_raw = np.concatenate([d_mean, d_log_std * cache.clip_mask], axis=1)
        else:
            d_raw = np.asarray(upstream, dtype=self.dtype)
            if cache.squeeze:
                d_raw = d_raw[None, :]
        grads = GradientBuffer.zeros_like(self)
        delta = d_raw
        for k in range(self.n_layers - 1, -1, -1):
            grads.d_weights[k] = cache.acts[k].T @ delta
            grads.d_biases[k] = delta.sum(axis=0)
            if k > 0:
                d_act = delta @ self.weights[k].T
                delta = d_act * self._activate_grad(cache.pre[k - 1], cache.acts[k])
        d_input = delta @ self.weights[0].T
        if cache.squeeze:
            d_input = d_input[0]
        return grads, d_input


@dataclass
class _ForwardCache:
    net: MlpNet
    pre: list
    acts: list
    raw: np.ndarray
    squeeze: bool
    clip_mask: np.ndarray | None = None


def mlp_forward(net: MlpNet, x: np.ndarray):
    return net.forward(x)


def mlp_backward(net: MlpNet, cache, upstream):
    return net.backward(cache, upstream)


# -- optimizer ---------------------------------------------------------------


class AdamState:
    """First/second moment estimates plus the step counter for one net."""

    def __init__(self, net: MlpNet, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(w) for w in net.weights] + [np.zeros_like(b) for b in net.biases]
        self.v = [np.zeros_like(a) for a in self.m]

    def tensors(self):
        n = len(self.m) // 2
        for k in range(n):
            yield f"m.L{k}.w", self.m[k]
            yield f"m.L{k}.b", self.m[n + k]
            yield f"v.L{k}.w", self.v[k]
            yield f"v.L{k}.b", self.v[n + k]

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        which, layer, kind = name.split(".")
        k = int(layer[1:])
        n = len(self.m) // 2
        idx = k if kind == "w" else n + k
        store = self.m if which == "m" else self.v
        if store[idx].shape != value.shape:
            raise UsageError(f"shape mismatch for adam tensor {name}")
        store[idx] = value.astype(store[idx].dtype)


def adam_step(state: AdamState, net: MlpNet, grads: GradientBuffer, lr: float) -> None:
    """In-place Adam update with bias correction; aborts on non-finite grads."""
    params = list(net.weights) + list(net.biases)
    names = [f"L{k}.w" for k in range(net.n_layers)] + [f"L{k}.b" for k in range(net.n_layers)]
    gs = list(grads.d_weights) + list(grads.d_biases)
    for name, p, g in zip(names, params, gs):
        if p.shape != g.shape:
            raise UsageError(f"gradient shape mismatch on {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name}")
    state.t += 1
    dt = net.dtype.type
    b1, b2 = dt(state.beta1), dt(state.beta2)
    bc1 = dt(1.0 - state.beta1 ** state.t)
    bc2 = dt(1.0 - state.beta2 ** state.t)
    lr_t = dt(lr)
    eps = dt(state.eps)
    one = dt(1.0)
    for i, (p, g) in enumerate(zip(params, gs)):
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (one - b1) * g
        v *= b2
        v += (one - b2) * g * g
        p -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + eps)


def soft_update(target: MlpNet, online: MlpNet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, element-wise."""
    if not target.same_architecture(online):
        raise UsageError("soft_update requires identical architectures")
    dt = target.dtype.type
    t = dt(tau)
    one = dt(1.0)
    for k in range(target.n_layers):
        target.weights[k] = (one - t) * target.weights[k] + t * online.weights[k]
        target.biases[k] = (one - t) * target.biases[k] + t * online.biases[k]


# -- scalar losses and Gaussian utilities ------------------------------------


def expectile_loss(u, xi):
    """Asymmetric squared error |xi - 1(u<0)| * u^2."""
    u = np.asarray(u)
    w = np.abs(xi - (u < 0))
    return w * u * u


def expectile_loss_grad(u, xi):
    u = np.asarray(u)
    dt = u.dtype.type if u.dtype.kind == "f" else float
    return dt(2.0) * np.abs(dt(xi) - (u < 0)) * u


def expectile_of(values, xi, tol=1e-12):
    """The xi-expectile of a sample: the constant minimizing sum expectile_loss(v - c).

    The objective is convex with a strictly increasing derivative, so bisection
    on the derivative is exact up to tol.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = float(values.min())
    hi = float(values.max())

    def dloss(c):
        return float(np.sum(expectile_loss_grad(values - c, xi)))

    # derivative of the objective in c is -dloss; root of dloss is the minimizer
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dloss(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def kl_to_standard_normal(g: DiagGaussian):
    """Closed-form KL(N(mean, diag std^2) || N(0, I)), summed over dimensions."""
    var = np.exp(2.0 * g.log_std)
    term = g.mean * g.mean + var - 2.0 * g.log_std - 1.0
    return 0.5 * term.sum(axis=-1)


def gaussian_sample(g: DiagGaussian, noise: np.ndarray) -> np.ndarray:
    """Reparameterized draw mean + std * noise."""
    noise = np.asarray(noise)
    if noise.shape[-1] != g.mean.shape[-1]:
        raise UsageError("noise dimension does not match the Gaussian")
    return g.mean + np.exp(g.log_std) * noise


def gaussian_log_prob(g: DiagGaussian, x: np.ndarray):
    """log N(x; mean, diag std^2), summed over dimensions."""
    x = np.asarray(x)
    z = (x - g.mean) * np.exp(-g.log_std)
    dt = z.dtype.type if z.dtype.kind == "f" else float
    term = -dt(0.5) * z * z - g.log_std - dt(0.5 * LOG_2PI)
    return term.sum(axis=-1)


# -- finite-difference gradient checking -------------------------------------


@dataclass
class GradCheckReport:
    loss_name: str
    max_rel_err: float
    n_params: int
    n_resampled: int = 0
    worst_tensor: str = ""

    def passed(self, tol=1e-4) -> bool:
        return self.max_rel_err < tol


def _rel_err(a, n):
    return abs(a - n) / max(1e-6, abs(a), abs(n))


def grad_check(loss_fn, params: dict[str, MlpNet], h=1e-5, name="loss") -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central finite differences.

    loss_fn() -> (scalar loss, {group: GradientBuffer}) evaluated at the
    current parameters; params maps group names to the nets whose tensors are
    perturbed. Nets must be float64 for the differences to be trustworthy.
    """
    for gname, net in params.items():
        if net.dtype != np.float64:
            raise UsageError(f"grad_check requires float64 nets (got {net.dtype} for {gname})")
    _, analytic = loss_fn()
    max_rel = 0.0
    worst = ""
    n_params = 0
    for gname, net in params.items():
        gbuf = analytic[gname]
        for (tname, tensor), (_, gten) in zip(net.tensors(), gbuf.tensors()):
            flat = tensor.reshape(-1)
            gflat = gten.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = loss_fn()
                flat[i] = orig - h
                lm, _ = loss_fn()
                flat[i] = orig
                numeric = (lp - lm) / (2.0 * h)
                rel = _rel_err(float(gflat[i]), float(numeric))
                n_params += 1
                if rel > max_rel:
                    max_rel = rel
                    worst = f"{gname}.{tname}[{i}]"
    return GradCheckReport(loss_name=name, max_rel_err=max_rel,
                           n_params=n_params, worst_tensor=worst)
