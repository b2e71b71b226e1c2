"""Ensembles of flows as posterior samples, and the WAIC outlier score.

For a sample x and ensemble members theta_1..theta_m,

    waic(x) = Var[log p(x|theta)] - Mean[log p(x|theta)]

with the unbiased sample variance (divisor m - 1). Higher means further from
the training distribution; a zero-variance ensemble reduces the score to the
negative mean log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, TrainingError, UsageError
from .flow import (FlowModel, get_flat_params, init_flow_model, log_likelihood,
                   nll_loss_and_grad, set_flat_params)
from .numcore import AdamHyper, AdamState, adam_step, derive_seed, make_rng


@dataclass(frozen=True)
class TrainConfig:
    """Flow architecture and optimization schedule."""

    n_blocks: int = 10
    hidden_width: int = 64
    clamp_alpha: float = 2.0
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # lr is halved at each third of the epoch schedule
    lr_decay: float = 0.5
    # additive training-time dither; breaks the exact sum-to-one constraint of
    # band vectors so maximum likelihood cannot chase a zero-volume subspace
    jitter_sigma: float = 1e-4
    # global-norm gradient clip; binds only on rare spike batches and keeps a
    # single bad step from ejecting a member out of its optimum
    max_grad_norm: float = 5000.0


@dataclass
class Ensemble:
    members: list[FlowModel]
    member_seeds: list[int]

    def __post_init__(self):
        if len(self.members) < 2:
            raise UsageError(f"an ensemble needs >= 2 members, got {len(self.members)}")
        if len(self.member_seeds) != len(self.members):
            raise UsageError("one seed per member required")
        dims = {m.input_dim for m in self.members}
        if len(dims) != 1:
            raise UsageError(f"members disagree on input_dim: {sorted(dims)}")

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def n_members(self) -> int:
        return len(self.members)

    def prefix(self, m: int) -> "Ensemble":
        """First m members, for ensemble-size studies."""
        if not 2 <= m <= self.n_members:
            raise UsageError(f"prefix size {m} outside [2, {self.n_members}]")
        return Ensemble(self.members[:m], self.member_seeds[:m])


@dataclass
class WaicScore:
    waic: float
    mean_logp: float
    var_logp: float
    per_member_logp: np.ndarray

    def __post_init__(self):
        if self.var_logp < 0:
            raise UsageError(f"variance must be non-negative, got {self.var_logp}")
        if self.waic != self.var_logp - self.mean_logp:
            raise UsageError("waic must equal var_logp - mean_logp exactly")


def _epoch_learning_rate(config: TrainConfig, epoch: int) -> float:
    decays = (epoch * 3) // max(config.epochs, 1)
    return config.learning_rate * config.lr_decay ** decays


def train_member(config: TrainConfig, train_data: np.ndarray, seed: int) -> FlowModel:
    """Maximum-likelihood training of one flow on `train_data` rows.

    The seed determines initialization, epoch shuffles, and dither draws, so
    the returned model is a deterministic function of (config, data, seed).
    """
    data = np.asarray(train_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise UsageError("train_member needs a nonempty (n, dim) matrix")
    model = init_flow_model(data.shape[1], config.n_blocks, config.hidden_width,
                            config.clamp_alpha, seed)
    rng = make_rng(derive_seed(seed, 1))
    params = get_flat_params(model)
    hyper = AdamHyper(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    state = AdamState.initial(params.size, hyper)
    n = data.shape[0]
    for epoch in range(config.epochs):
        state = state.with_learning_rate(_epoch_learning_rate(config, epoch))
        order = rng.permutation(n)
        total = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            batch = data[order[lo:lo + config.batch_size]]
            if config.jitter_sigma > 0:
                batch = batch + config.jitter_sigma * rng.standard_normal(batch.shape)
            try:
                loss, grads = nll_loss_and_grad(model, batch)
            except EvaluationError as err:
                raise TrainingError(f"epoch {epoch}: {err}") from err
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            if config.max_grad_norm > 0:
                norm = float(np.linalg.norm(grads))
                if norm > config.max_grad_norm:
                    grads = grads * (config.max_grad_norm / norm)
            try:
                params, state = adam_step(state, params, grads)
            except TrainingError as err:
                raise TrainingError(f"epoch {epoch}: {err}") from err
            set_flat_params(model, params)
            total += loss
            n_batches += 1
        model.loss_curve.append(total / n_batches)
    return model


def train_ensemble(config: TrainConfig, train_data: np.ndarray, base_seed: int,
                   n_members: int = 5) -> Ensemble:
    """Train `n_members` flows that differ only in init seed and shuffle order."""
    if n_members < 2:
        raise UsageError(f"an ensemble needs >= 2 members, got {n_members}")
    seeds = [derive_seed(base_seed, 1000 + i) for i in range(n_members)]
    if len(set(seeds)) != n_members:
        raise UsageError("derived member seeds collide; change base_seed")
    members = []
    for i, seed in enumerate(seeds):
        try:
            members.append(train_member(config, train_data, seed))
        except (TrainingError, UsageError) as err:
            raise TrainingError(f"member {i} failed: {err}") from err
    return Ensemble(members, seeds)


def member_log_likelihoods(ensemble: Ensemble, xs: np.ndarray) -> np.ndarray:
    """(n_members, n_rows) matrix of log-likelihoods; rows evaluated batched."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise UsageError("member_log_likelihoods needs an (n, dim) matrix")
    out = np.empty((ensemble.n_members, xs.shape[0]))
    for i, member in enumerate(ensemble.members):
        try:
            out[i] = log_likelihood(member, xs)
        except EvaluationError as err:
            raise EvaluationError(f"member {i}: {err}") from err
    return out


def waic_from_logps(logps: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(waic, mean, var) per column of an (n_members, n_rows) log-likelihood matrix."""
    mean = logps.mean(axis=0)
    var = logps.var(axis=0, ddof=1)
    return var - mean, mean, var


def waic_score(ensemble: Ensemble, x: np.ndarray) -> WaicScore:
    """WAIC of a single spectrum."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise UsageError("waic_score takes a single vector; use waic_batch for matrices")
    return waic_batch(ensemble, x[None, :])[0]


def waic_batch(ensemble: Ensemble, xs: np.ndarray) -> list[WaicScore]:
    """Rowwise WAIC scores, order-preserving.

    Identical to calling waic_score per row: the underlying evaluation is
    row-stable, so batching does not change any bit of the result.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise UsageError("waic_batch needs an (n, dim) matrix")
    if xs.shape[1] != ensemble.input_dim:
        raise UsageError(f"rows have dim {xs.shape[1]}, ensemble expects {ensemble.input_dim}")
    logps = member_log_likelihoods(ensemble, xs)
    bad_member, bad_row = np.where(~np.isfinite(logps))
    if bad_member.size:
        raise EvaluationError(f"non-finite log-likelihood from member {int(bad_member[0])} "
                              f"on row {int(bad_row[0])}")
    waic, mean, var = waic_from_logps(logps)
    return [WaicScore(float(waic[j]), float(mean[j]), float(var[j]), logps[:, j].copy())
            for j in range(xs.shape[0])]
