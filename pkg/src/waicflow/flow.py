"""Invertible network built from affine coupling blocks and fixed permutations.

Each block leaves the first half of its input untouched, feeds it through a
small MLP that emits per-coordinate log-scales and offsets for the second
half, and applies `y2 = x2 * exp(s) + t`. The log-scale is soft-clamped with
a tanh so every block stays invertible and exp() cannot overflow. Because the
Jacobian of such a block is triangular, its log-determinant is just the sum
of the clamped log-scales, which makes the change-of-variables log-likelihood
exact and cheap:

    log p(x) = -0.5 * ||z||^2 - (n/2) * log(2*pi) + logdet,   z = forward(x)

with a standard-normal latent. Permutations are fixed seeded shuffles; their
determinant has magnitude 1 and contributes nothing to logdet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, OracleError, ShapeError, UsageError
from .numcore import (Mlp, init_mlp, make_rng, mlp_backward,
                      mlp_forward, mlp_get_params, mlp_set_params)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CouplingBlock:
    """One affine coupling transform over vectors of length `dim`."""

    subnet: Mlp
    dim: int
    clamp_alpha: float = 2.0

    def __post_init__(self):
        if self.dim < 2:
            raise ShapeError(f"coupling blocks need dim >= 2, got {self.dim}")
        if self.clamp_alpha <= 0:
            raise UsageError(f"clamp_alpha must be positive, got {self.clamp_alpha}")
        d1, d2 = split_sizes(self.dim)
        if self.subnet.in_dim != d1 or self.subnet.out_dim != 2 * d2:
            raise ShapeError(f"subnet maps {self.subnet.in_dim}->{self.subnet.out_dim}, "
                             f"block needs {d1}->{2 * d2}")


@dataclass
class FlowModel:
    """Stack of (coupling block, permutation) pairs sharing one input dim."""

    input_dim: int
    blocks: list[CouplingBlock]
    permutations: list[np.ndarray]
    clamp_alpha: float
    hidden_width: int
    seed: int
    loss_curve: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.blocks) != len(self.permutations):
            raise ShapeError("one permutation per coupling block required")
        for p in self.permutations:
            if sorted(p.tolist()) != list(range(self.input_dim)):
                raise UsageError("permutation is not a bijection on the input coordinates")
        self._inverse_perms = [np.argsort(p) for p in self.permutations]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def inverse_permutations(self) -> list[np.ndarray]:
        return self._inverse_perms


def split_sizes(dim: int) -> tuple[int, int]:
    """Coupling split point: the untouched half has ceil(dim/2) coordinates."""
    d1 = (dim + 1) // 2
    return d1, dim - d1


def init_flow_model(input_dim: int, n_blocks: int = 10, hidden_width: int = 64,
                    clamp_alpha: float = 2.0, seed: int = 0) -> FlowModel:
    """Fresh model: Gaussian subnet weights and seeded shuffle permutations."""
    if input_dim < 2:
        raise ShapeError(f"flow input_dim must be >= 2, got {input_dim}")
    if n_blocks < 1:
        raise UsageError(f"need at least one block, got {n_blocks}")
    rng = make_rng(seed)
    d1, d2 = split_sizes(input_dim)
    blocks = []
    perms = []
    for _ in range(n_blocks):
        subnet = init_mlp(rng, d1, hidden_width, 2 * d2)
        blocks.append(CouplingBlock(subnet, input_dim, clamp_alpha))
        perms.append(rng.permutation(input_dim))
    return FlowModel(input_dim, blocks, perms, clamp_alpha, hidden_width, int(seed))


def _clamped_scale(block: CouplingBlock, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Soft clamp alpha*tanh(raw/alpha); returns (clamped, tanh(raw/alpha))."""
    th = np.tanh(raw / block.clamp_alpha)
    return block.clamp_alpha * th, th


def coupling_forward(block: CouplingBlock, x: np.ndarray,
                     with_cache: bool = False):
    """Apply one block; returns (y, logdet) and optionally a backprop cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != block.dim:
        raise ShapeError(f"block expects dim {block.dim}, got {x.shape[-1]}")
    d1, _ = split_sizes(block.dim)
    x1, x2 = x[..., :d1], x[..., d1:]
    u, net_cache = mlp_forward(block.subnet, x1)
    raw_s, t = u[..., :x2.shape[-1]], u[..., x2.shape[-1]:]
    s, th = _clamped_scale(block, raw_s)
    es = np.exp(s)
    y2 = x2 * es + t
    y = np.concatenate([x1, y2], axis=-1)
    logdet = s.sum(axis=-1)
    if with_cache:
        return y, logdet, (net_cache, x2, th, es)
    return y, logdet


def coupling_inverse(block: CouplingBlock, y: np.ndarray) -> np.ndarray:
    """Exact algebraic inverse of coupling_forward."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise EvaluationError("coupling_inverse got non-finite input")
    if y.shape[-1] != block.dim:
        raise ShapeError(f"block expects dim {block.dim}, got {y.shape[-1]}")
    d1, _ = split_sizes(block.dim)
    y1, y2 = y[..., :d1], y[..., d1:]
    u, _ = mlp_forward(block.subnet, y1)
    raw_s, t = u[..., :y2.shape[-1]], u[..., y2.shape[-1]:]
    s, _ = _clamped_scale(block, raw_s)
    x2 = (y2 - t) * np.exp(-s)
    return np.concatenate([y1, x2], axis=-1)


def coupling_backward(block: CouplingBlock, cache, grad_y: np.ndarray,
                      grad_logdet: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients through one block.

    grad_y is dL/dy (batch, dim); grad_logdet is dL/dlogdet (batch,).
    Returns (flattened subnet parameter gradient, dL/dx).
    """
    net_cache, x2, th, es = cache
    d1, _ = split_sizes(block.dim)
    gy1, gy2 = grad_y[..., :d1], grad_y[..., d1:]
    gx2 = gy2 * es
    g_s = gy2 * x2 * es + grad_logdet[..., None]
    g_raw = g_s * (1.0 - th * th)
    g_u = np.concatenate([g_raw, gy2], axis=-1)
    param_grads, gx1_net = mlp_backward(block.subnet, net_cache, g_u)
    gx1 = gy1 + gx1_net
    return param_grads, np.concatenate([gx1, gx2], axis=-1)


def flow_forward(model: FlowModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map data to latent space; returns (z, total_logdet).

    Accepts a vector (input_dim,) or batch (n, input_dim); total_logdet is a
    scalar or (n,) accordingly. Raises EvaluationError naming the block that
    first produced a non-finite value.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"flow expects dim {model.input_dim}, got {x.shape[-1]}")
    total = np.zeros(x.shape[:-1])
    for k, (block, perm) in enumerate(zip(model.blocks, model.permutations)):
        x, logdet = coupling_forward(block, x)
        if not np.all(np.isfinite(x)):
            raise EvaluationError(f"non-finite activation after block {k}")
        x = x[..., perm]
        total = total + logdet
    return x, total


def flow_inverse(model: FlowModel, z: np.ndarray) -> np.ndarray:
    """Inverse composition in reverse order; exact up to float rounding."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.input_dim:
        raise ShapeError(f"flow expects dim {model.input_dim}, got {z.shape[-1]}")
    for block, inv_perm in zip(reversed(model.blocks),
                               reversed(model.inverse_permutations())):
        z = z[..., inv_perm]
        z = coupling_inverse(block, z)
    return z


def log_likelihood(model: FlowModel, x: np.ndarray) -> np.ndarray | float:
    """Change-of-variables log density under the standard-normal latent."""
    z, logdet = flow_forward(model, x)
    sq = np.sum(z * z, axis=-1)
    logp = -0.5 * sq - 0.5 * model.input_dim * LOG_2PI + logdet
    return float(logp) if np.ndim(logp) == 0 else logp


def _forward_with_caches(model, batch):
    caches = []
    x = batch
    total = np.zeros(batch.shape[0])
    for k, (block, perm) in enumerate(zip(model.blocks, model.permutations)):
        x, logdet, cache = coupling_forward(block, x, with_cache=True)
        if not np.all(np.isfinite(x)):
            raise EvaluationError(f"non-finite activation after block {k}")
        caches.append(cache)
        x = x[..., perm]
        total = total + logdet
    return x, total, caches


def nll_loss_and_grad(model: FlowModel, batch: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its parameter gradient.

    The gradient covers every subnet parameter, flattened in block order with
    the layout of get_flat_params.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise UsageError("nll_loss_and_grad needs a nonempty (n, dim) batch")
    if batch.shape[1] != model.input_dim:
        raise ShapeError(f"batch dim {batch.shape[1]} != model dim {model.input_dim}")
    n_rows = batch.shape[0]
    z, logdet, caches = _forward_with_caches(model, batch)
    with np.errstate(over="ignore"):  # divergence is reported, not warned
        loss = float(np.mean(0.5 * np.sum(z * z, axis=-1) - logdet)
                     + 0.5 * model.input_dim * LOG_2PI)
    grad_x = z / n_rows
    grad_logdet = np.full(n_rows, -1.0 / n_rows)
    block_grads: list[np.ndarray] = [np.empty(0)] * model.n_blocks
    for k in range(model.n_blocks - 1, -1, -1):
        grad_x = grad_x[..., model.inverse_permutations()[k]]
        block_grads[k], grad_x = coupling_backward(
            model.blocks[k], caches[k], grad_x, grad_logdet)
    return loss, np.concatenate(block_grads)


def get_flat_params(model: FlowModel) -> np.ndarray:
    return np.concatenate([mlp_get_params(b.subnet) for b in model.blocks])


def set_flat_params(model: FlowModel, flat: np.ndarray) -> None:
    i = 0
    for block in model.blocks:
        n = block.subnet.n_params
        mlp_set_params(block.subnet, flat[i:i + n])
        i += n
    if i != flat.size:
        raise ShapeError(f"parameter vector length {flat.size}, model has {i}")


def sample(model: FlowModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` rows by pushing standard-normal latents through the inverse."""
    if count < 1:
        raise UsageError(f"count must be >= 1, got {count}")
    z = rng.standard_normal((count, model.input_dim))
    return flow_inverse(model, z)


def numerical_logdet_oracle(model: FlowModel, x: np.ndarray, h: float = 1e-5) -> float:
    """log|det J| via central differences of flow_forward; test oracle only."""
    if not (1e-7 <= h <= 1e-3):
        raise UsageError(f"step size h={h} outside [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    n = model.input_dim
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        z_plus, _ = flow_forward(model, x + e)
        z_minus, _ = flow_forward(model, x - e)
        jac[:, j] = (z_plus - z_minus) / (2.0 * h)
    sign, logabs = np.linalg.slogdet(jac)
    if sign == 0 or not np.isfinite(logabs):
        raise OracleError("numerical Jacobian is singular; the model is broken")
    return float(logabs)
