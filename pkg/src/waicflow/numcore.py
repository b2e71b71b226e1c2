"""Deterministic numerics: a small ReLU MLP with hand-derived backprop,
the Adam optimizer, and seeded random number generation.

All matrix products go through :func:`matmul` (numpy einsum), whose per-row
results do not depend on how many rows are in the batch. That keeps batched
evaluation bitwise identical to row-at-a-time evaluation, which the scoring
layer relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError, TrainingError, UsageError


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; same seed + call sequence => same stream."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base_seed: int, index: int) -> int:
    """Stable 64-bit child seed for member/stage `index` under `base_seed`."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-stable product x @ w.T for x of shape (..., i) and w of shape (o, i)."""
    return np.einsum('...i,oi->...o', x, w)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_mask(pre: np.ndarray) -> np.ndarray:
    """Subgradient mask of ReLU; the derivative at 0 is taken as 0."""
    return (pre > 0).astype(np.float64)


def gaussian_init(rng: np.random.Generator, n_out: int, fan_in: int) -> np.ndarray:
    """(n_out, fan_in) weight matrix, i.i.d. normal with std sqrt(1/fan_in)."""
    if fan_in <= 0 or n_out <= 0:
        raise UsageError(f"invalid architecture: fan_in={fan_in}, n_out={n_out}")
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(n_out, fan_in))


@dataclass
class Mlp:
    """Three weight layers (two hidden ReLU layers, identity output)."""

    weights: list[np.ndarray]   # each (out, in)
    biases: list[np.ndarray]    # each (out,)

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeError(f"mlp needs exactly 3 weight layers, got {len(self.weights)}")
        for k in range(3):
            if self.biases[k].shape != (self.weights[k].shape[0],):
                raise ShapeError(f"layer {k}: bias shape {self.biases[k].shape} "
                                 f"does not match weight rows {self.weights[k].shape[0]}")
            if k > 0 and self.weights[k].shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k}: in-dim {self.weights[k].shape[1]} does not "
                                 f"compose with layer {k - 1} out-dim {self.weights[k - 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[2].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_mlp(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> Mlp:
    """Gaussian weights (std sqrt(1/fan_in)), zero biases."""
    return Mlp(
        weights=[gaussian_init(rng, hidden, in_dim),
                 gaussian_init(rng, hidden, hidden),
                 gaussian_init(rng, out_dim, hidden)],
        biases=[np.zeros(hidden), np.zeros(hidden), np.zeros(out_dim)],
    )


def mlp_forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Forward pass; x is a vector (in_dim,) or batch (n, in_dim).

    Returns the output and a cache of pre/post activations for mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ShapeError(f"layer 0 expects input dim {net.in_dim}, got {x.shape[-1]}")
    z1 = matmul(x, net.weights[0]) + net.biases[0]
    a1 = relu(z1)
    z2 = matmul(a1, net.weights[1]) + net.biases[1]
    a2 = relu(z2)
    out = matmul(a2, net.weights[2]) + net.biases[2]
    return out, (x, z1, a1, z2, a2)


def mlp_backward(net: Mlp, cache: tuple, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain rule through the MLP for a scalar loss.

    `upstream` is dL/d(output), shaped like the forward output. Returns the
    flattened parameter gradient (order W1,b1,W2,b2,W3,b3, each row-major,
    summed over the batch) and dL/d(input) with the input's shape.
    """
    x, z1, a1, z2, a2 = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape[-1] != net.out_dim or g.shape != a2.shape[:-1] + (net.out_dim,):
        raise ShapeError(f"upstream gradient shape {g.shape} does not match "
                         f"cached activations for output dim {net.out_dim}")
    batched = g.ndim == 2
    gb = g if batched else g[None, :]
    xb, z1b, a1b, z2b, a2b = (v if batched else v[None, :] for v in (x, z1, a1, z2, a2))

    gW3 = np.einsum('bo,bh->oh', gb, a2b)
    gb3 = gb.sum(axis=0)
    gz2 = np.einsum('bo,oh->bh', gb, net.weights[2]) * relu_mask(z2b)
    gW2 = np.einsum('bo,bh->oh', gz2, a1b)
    gb2 = gz2.sum(axis=0)
    gz1 = np.einsum('bo,oh->bh', gz2, net.weights[1]) * relu_mask(z1b)
    gW1 = np.einsum('bo,bi->oi', gz1, xb)
    gb1 = gz1.sum(axis=0)
    gx = np.einsum('bo,oi->bi', gz1, net.weights[0])

    flat = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])
    return flat, (gx if batched else gx[0])


def mlp_get_params(net: Mlp) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b])
                           for w, b in zip(net.weights, net.biases)])


def mlp_set_params(net: Mlp, flat: np.ndarray) -> None:
    if flat.size != net.n_params:
        raise ShapeError(f"parameter vector length {flat.size} != {net.n_params}")
    i = 0
    for k in range(3):
        w, b = net.weights[k], net.biases[k]
        net.weights[k] = flat[i:i + w.size].reshape(w.shape).copy()
        i += w.size
        net.biases[k] = flat[i:i + b.size].copy()
        i += b.size


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    hyper: AdamHyper

    @classmethod
    def initial(cls, n_params: int, hyper: AdamHyper | None = None) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, hyper or AdamHyper())

    def with_learning_rate(self, lr: float) -> "AdamState":
        return AdamState(self.first_moment, self.second_moment, self.step_count,
                         replace(self.hyper, learning_rate=lr))


def adam_step(state: AdamState, params: np.ndarray,
              grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and new state."""
    if not (params.shape == grads.shape == state.first_moment.shape):
        raise ShapeError(f"params/grads/moments lengths differ: "
                         f"{params.shape}/{grads.shape}/{state.first_moment.shape}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise TrainingError(f"non-finite gradient at component {int(bad[0])}")
    h = state.hyper
    t = state.step_count + 1
    m = h.beta1 * state.first_moment + (1 - h.beta1) * grads
    v = h.beta2 * state.second_moment + (1 - h.beta2) * grads * grads
    m_hat = m / (1 - h.beta1 ** t)
    v_hat = v / (1 - h.beta2 ** t)
    new_params = params - h.learning_rate * m_hat / (np.sqrt(v_hat) + h.epsilon)
    return new_params, AdamState(m, v, t, h)
