"""Loss, optimizer, training loop, and evaluation metrics.

The loss has four quadratic terms: trajectory error in the original
coordinates, in the fast coordinates, in the slow coordinates (weighted by
1/eps per trajectory), and the squared fast coordinate of manifold
samples. Fast-scale trajectories are integrated with the IMEX scheme;
slow-scale trajectories go through the reduced (y = 0) integration path,
with their data-side y penalized against zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .dynamics import (FenichelModel, IMEXTableau, fsnn_rollout, slow_step,
                       ssp2_tableau, transform, untransform)
from .systems import Dataset, Trajectory


class TrainingDiverged(RuntimeError):
    """Raised when the loss blows up; carries the last finite-loss model so
    callers can save a usable checkpoint."""

    def __init__(self, msg, model=None, history=None, opt=None):
        super().__init__(msg)
        self.model = model
        self.history = history
        self.opt = opt


# ---------------------------------------------------------------------------
# trajectory error


def traj_error_L(t, z, z_model) -> Tensor:
    """Trapezoidal approximation of the time integral of squared error.

    t has shape (T,) or (B, T); z and z_model are (T, ..., dim) with the
    time axis leading. Returns the per-trajectory batch of errors.
    """
    z, z_model = as_tensor(z), as_tensor(z_model)
    t = np.asarray(t, dtype=np.float64)
    n_t = t.shape[-1]
    if z.shape[0] != n_t or z_model.shape[0] != n_t:
        raise ValueError("timestamp/state length mismatch")
    if n_t < 2:
        raise ValueError("need at least two samples")
    diff = z - z_model
    sq = ad.tsum(diff * diff, axis=-1)  # (T, ...)
    if t.ndim > 1:
        t = np.moveaxis(t, -1, 0)  # time axis leading, matching states
    dts = np.diff(t, axis=0)
    total = None
    for n in range(n_t - 1):
        seg = 0.5 * (sq[n + 1] + sq[n]) * dts[n]
        total = seg if total is None else total + seg
    return total


# ---------------------------------------------------------------------------
# batching: group equal-length trajectories into arrays


@dataclass(frozen=True)
class TrajBatch:
    """Equal-length trajectories stacked for vectorized rollouts."""

    t: np.ndarray  # (B, T)
    z: np.ndarray  # (B, T, dim)
    eps: np.ndarray  # (B,)

    @classmethod
    def stack(cls, trajectories) -> "TrajBatch":
        lengths = {len(tr.t) for tr in trajectories}
        if len(lengths) != 1:
            raise ValueError("cannot stack trajectories of different lengths")
        return cls(t=np.stack([tr.t for tr in trajectories]),
                   z=np.stack([tr.z for tr in trajectories]),
                   eps=np.array([tr.eps for tr in trajectories]))

    def __len__(self) -> int:
        return len(self.eps)


def batch_all(trajectories) -> list:
    """Group a trajectory list into stacked batches by sequence length."""
    by_len: dict = {}
    for tr in trajectories:
        by_len.setdefault(len(tr.t), []).append(tr)
    return [TrajBatch.stack(group) for _, group in sorted(by_len.items())]


def manifold_batch(points) -> tuple[np.ndarray, np.ndarray]:
    zs = np.stack([np.asarray(z, float) for z, _ in points])
    eps = np.array([e for _, e in points])
    return zs, eps


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossBreakdown:
    system: float
    fast: float
    slow: float
    manifold: float

    @property
    def total(self) -> float:
        return self.system + self.fast + self.slow + self.manifold


def _fast_batch_terms(m, batch: TrajBatch, tab):
    times = batch.t - batch.t[:, :1]  # rollout is autonomous; shift to 0
    ys_m, xs_m, zs_m = fsnn_rollout(m, Tensor(batch.z[:, 0]), batch.eps,
                                    times, tab)
    z_data = np.moveaxis(batch.z, 1, 0)  # (T, B, dim)
    y_data, x_data = transform(m, Tensor(z_data), batch.eps)
    l_sys = traj_error_L(batch.t, Tensor(z_data), zs_m)
    l_fast = traj_error_L(batch.t, y_data, ys_m)
    l_slow = traj_error_L(batch.t, x_data, xs_m) * (1.0 / batch.eps)
    return ad.tsum(l_sys), ad.tsum(l_fast), ad.tsum(l_slow)


def _slow_batch_terms(m, batch: TrajBatch, tab):
    z_data = np.moveaxis(batch.z, 1, 0)
    y_data, x_data = transform(m, Tensor(z_data), batch.eps)
    zero = Tensor(np.zeros(y_data.shape[1:]))
    x = x_data[0]
    xs_m, zs_m = [x], [untransform(m, zero, x, batch.eps)]
    dts = np.diff(batch.t, axis=-1)
    for n in range(dts.shape[-1]):
        x = slow_step(m, x, batch.eps, dts[:, n], tab)
        xs_m.append(x)
        zs_m.append(untransform(m, zero, x, batch.eps))
    xs_m, zs_m = ad.stack(xs_m, axis=0), ad.stack(zs_m, axis=0)
    l_sys = traj_error_L(batch.t, Tensor(z_data), zs_m)
    l_fast = traj_error_L(batch.t, y_data, ad.stack([zero] * len(batch.t[0]), axis=0))
    l_slow = traj_error_L(batch.t, x_data, xs_m) * (1.0 / batch.eps)
    return ad.tsum(l_sys), ad.tsum(l_fast), ad.tsum(l_slow)


def total_loss(m: FenichelModel, fast_trajs, slow_trajs, manifold_points,
               tab: IMEXTableau | None = None, weights=(1.0, 1.0, 1.0, 1.0)):
    """Four-term loss; returns (scalar Tensor, LossBreakdown).

    Empty batches contribute zero to their terms. The trajectory count
    normalizer covers both scale subsets together.
    """
    tab = tab or ssp2_tableau()
    n_d = len(fast_trajs) + len(slow_trajs)
    zero = Tensor(np.zeros(()))
    l_sys = l_fast = l_slow = zero
    for batch in batch_all(fast_trajs):
        a, b, c = _fast_batch_terms(m, batch, tab)
        l_sys, l_fast, l_slow = l_sys + a, l_fast + b, l_slow + c
    for batch in batch_all(slow_trajs):
        a, b, c = _slow_batch_terms(m, batch, tab)
        l_sys, l_fast, l_slow = l_sys + a, l_fast + b, l_slow + c
    if n_d > 0:
        l_sys, l_fast, l_slow = (l_sys * (1.0 / n_d), l_fast * (1.0 / n_d),
                                 l_slow * (1.0 / n_d))
    l_man = zero
    if manifold_points:
        zs, eps = manifold_batch(manifold_points)
        y, _ = transform(m, Tensor(zs), eps)
        l_man = ad.tmean(ad.tsum(y * y, axis=-1))
    w_sys, w_fast, w_slow, w_man = weights
    total = w_sys * l_sys + w_fast * l_fast + w_slow * l_slow + w_man * l_man
    breakdown = LossBreakdown(system=float(w_sys * l_sys.value),
                              fast=float(w_fast * l_fast.value),
                              slow=float(w_slow * l_slow.value),
                              manifold=float(w_man * l_man.value))
    return total, breakdown


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def init(cls, params: dict, lr: float = 1e-3) -> "AdamState":
        return cls(m=ad.tree_zeros_like(params), v=ad.tree_zeros_like(params), lr=lr)


def adam_step(state: AdamState, params: dict, grads: dict,
              lr: float | None = None) -> tuple[AdamState, dict]:
    """Bias-corrected Adam update; tree structures must match."""
    flat_p = dict(ad.tree_flatten(params))
    flat_g = dict(ad.tree_flatten(grads))
    flat_m = dict(ad.tree_flatten(state.m))
    flat_v = dict(ad.tree_flatten(state.v))
    if set(flat_p) != set(flat_g) or set(flat_p) != set(flat_m):
        raise ValueError("parameter/gradient/moment structure mismatch")
    t = state.step + 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k in flat_p:
        g = np.asarray(ad.value_of(flat_g[k]), dtype=np.float64)
        m_k = b1 * flat_m[k] + (1 - b1) * g
        v_k = b2 * flat_v[k] + (1 - b2) * g * g
        m_hat = m_k / (1 - b1**t)
        v_hat = v_k / (1 - b2**t)
        new_p[k] = np.asarray(ad.value_of(flat_p[k])) - lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
        new_m[k], new_v[k] = m_k, v_k
    new_state = replace(state, step=t,
                        m=ad.tree_unflatten(sorted(new_m.items())),
                        v=ad.tree_unflatten(sorted(new_v.items())))
    return new_state, ad.tree_unflatten(sorted(new_p.items()))


def cosine_lr(base_lr: float, step: int, total_steps: int,
              floor: float = 0.0) -> float:
    if total_steps <= 0:
        return base_lr
    frac = min(max(step / total_steps, 0.0), 1.0)
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_fast: int = 32
    batch_slow: int = 32
    batch_manifold: int = 128
    lr: float = 1e-3
    lr_floor: float = 1e-5
    seed: int = 0
    weights: tuple = (1.0, 1.0, 1.0, 1.0)
    divergence_factor: float = 1e6

    def __post_init__(self):
        if min(self.batch_fast, self.batch_slow, self.batch_manifold) < 1:
            raise ValueError("batch sizes must be positive")
        if self.steps < 0:
            raise ValueError("step count must be nonnegative")


def _sample(rng, pool, size):
    if not pool:
        return []
    idx = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
    return [pool[i] for i in sorted(idx)]


def train(m: FenichelModel, data: Dataset, cfg: TrainConfig,
          tab: IMEXTableau | None = None, callback=None,
          opt: AdamState | None = None):
    """Minibatch Adam loop; deterministic given cfg.seed.

    Returns (trained model, history, optimizer state) where history is a
    list of (step, LossBreakdown). Aborts if the total loss exceeds
    divergence_factor times its initial value. Pass a saved AdamState to
    continue a previous run.
    """
    tab = tab or ssp2_tableau()
    fast_pool = data.subset("fast")
    slow_pool = data.subset("slow")
    man_pool = data.manifold_points
    rng = np.random.default_rng(cfg.seed)
    params = m.params
    opt = opt or AdamState.init(params, lr=cfg.lr)
    history = []
    initial_total = None
    for step in range(cfg.steps):
        batch_fast = _sample(rng, fast_pool, cfg.batch_fast)
        batch_slow = _sample(rng, slow_pool, cfg.batch_slow)
        batch_man = _sample(rng, man_pool, cfg.batch_manifold)

        def objective(p):
            total, objective.breakdown = total_loss(
                FenichelModel(m.cfg, p), batch_fast, batch_slow, batch_man,
                tab, cfg.weights)
            return total

        value, grads = ad.gradient(objective, params)
        breakdown = objective.breakdown
        history.append((step, breakdown))
        if initial_total is None:
            initial_total = max(breakdown.total, 1e-30)
        if not math.isfinite(breakdown.total) or \
                breakdown.total > cfg.divergence_factor * initial_total:
            raise TrainingDiverged(
                f"loss {breakdown.total:.3e} at step {step} exceeds "
                f"{cfg.divergence_factor:.0e} x initial {initial_total:.3e}",
                model=FenichelModel(m.cfg, params), history=history, opt=opt)
        lr = cosine_lr(cfg.lr, step, cfg.steps, cfg.lr_floor)
        opt, params = adam_step(opt, params, grads, lr=lr)
        if callback is not None:
            callback(step, breakdown, FenichelModel(m.cfg, params))
    return FenichelModel(m.cfg, params), history, opt


def history_csv(history) -> str:
    lines = ["step,system,fast,slow,manifold,total"]
    for step, b in history:
        lines.append(f"{step},{b.system:.17g},{b.fast:.17g},{b.slow:.17g},"
                     f"{b.manifold:.17g},{b.total:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# evaluation


def greedy_match(values, reference) -> np.ndarray:
    """Pair each reference eigenvalue with the nearest unused model value;
    returns the per-pair absolute errors."""
    vals = list(values)
    errs = []
    for r in reference:
        j = int(np.argmin([abs(v - r) for v in vals]))
        errs.append(abs(vals.pop(j) - r))
    return np.array(errs)


def eval_eigenvalues(m: FenichelModel, probe_xs, reference=None) -> dict:
    """Eigenvalues of the learned fast linearization at each probe point."""
    from .dynamics import linear_fast
    from .structured import schur_eigenvalues

    with ad.no_grad():
        t = linear_fast(m, Tensor(np.asarray(probe_xs, float)))
    eigs = schur_eigenvalues(t.value)
    out = {"eigenvalues": eigs}
    if reference is not None:
        errs = np.stack([greedy_match(e, reference) for e in eigs])
        out.update(reference=np.asarray(reference),
                   mean_error=float(errs.mean()),
                   max_error=float(errs.max()))
    return out


def eval_manifold_error(m: FenichelModel, sample_manifold, n: int,
                        seed: int = 0, eps: float = 0.0) -> dict:
    """Distribution of ||y|| over h-mapped analytic manifold samples."""
    rng = np.random.default_rng(seed)
    zs = np.stack([sample_manifold(rng) for _ in range(n)])
    with ad.no_grad():
        y, _ = transform(m, Tensor(zs), eps)
    norms = np.linalg.norm(y.value, axis=-1)
    return {"max": float(norms.max()), "mean": float(norms.mean()),
            "p50": float(np.percentile(norms, 50)),
            "p90": float(np.percentile(norms, 90)),
            "norms": norms}
