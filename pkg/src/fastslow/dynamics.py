"""Model assembly and time integration.

The learned dynamics in transformed coordinates are

    dy/dt = T(x) y + B(x, y, eps)(y, y) + eps C(x, y, eps) y
    dx/dt = eps g(x, y, eps)

with T stable by construction. The linear fast term is integrated
implicitly (additive IMEX Runge-Kutta), everything else explicitly. The
implicit stage solves exploit the block upper triangular shape of T via
backward substitution. Starting exactly on y = 0, every stage and update
is a product with zero, so the manifold is invariant bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .layers import FFNConfig, INNConfig, eps_features, ffn_eval, inn_forward, inn_inverse
from .structured import (BilinearNetConfig, SchurNetConfig, bilinear_net,
                         schur_layout, schur_net)


class IntegrationError(RuntimeError):
    pass


def _col(v):
    """Scalar passthrough; per-sample arrays gain a trailing axis so they
    broadcast against (..., dim) state tensors."""
    v = np.asarray(v, dtype=np.float64)
    return v[..., None] if v.ndim else float(v)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class FastSlowState:
    """State of a fast-slow system: slow x, fast y, stiffness eps, time t."""

    x: np.ndarray
    y: np.ndarray
    eps: float
    t: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError("eps must be positive and finite")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("state must be finite")


@dataclass(frozen=True)
class FenichelConfig:
    """Hyperparameters of the full model: coordinate change h plus the
    networks T, B, C, g of the normal-form right-hand side."""

    n_fast: int
    n_slow: int
    inn_blocks: int = 1
    inn_hidden: int = 10
    inn_depth: int = 1
    L: float = 2.0
    schur_hidden: tuple = (32,)
    delta: float = 1e-3
    init_eig: float = -0.5
    bilinear_rank: int = 1
    bilinear_hidden: tuple = (32,)
    c_hidden: tuple = (32,)
    g_hidden: tuple = (32,)
    first_orth: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.n_fast + self.n_slow

    @property
    def inn(self) -> INNConfig:
        return INNConfig(self.n_fast, self.n_slow, n_blocks=self.inn_blocks,
                         L=self.L, hidden=self.inn_hidden, depth=self.inn_depth,
                         first_orth=self.first_orth)

    @property
    def schur(self) -> SchurNetConfig:
        return SchurNetConfig(self.n_slow, self.n_fast, hidden=self.schur_hidden,
                              delta=self.delta, init_eig=self.init_eig)

    @property
    def bilinear(self) -> BilinearNetConfig:
        return BilinearNetConfig(self.n_slow, self.n_fast, rank=self.bilinear_rank,
                                 hidden=self.bilinear_hidden)

    @property
    def cnet(self) -> FFNConfig:
        n_in = self.n_slow + self.n_fast + 2
        return FFNConfig((n_in,) + self.c_hidden + (self.n_fast * self.n_fast,),
                         zero_init_last=True)

    @property
    def gnet(self) -> FFNConfig:
        n_in = self.n_slow + self.n_fast + 2
        return FFNConfig((n_in,) + self.g_hidden + (self.n_slow,),
                         zero_init_last=True)

    def init(self, rng: np.random.Generator) -> dict:
        return {
            "inn": self.inn.init(rng),
            "schur": self.schur.init(rng),
            "bilinear": self.bilinear.init(rng),
            "cnet": self.cnet.init(rng),
            "gnet": self.gnet.init(rng),
        }


@dataclass
class FenichelModel:
    cfg: FenichelConfig
    params: dict

    @classmethod
    def init(cls, cfg: FenichelConfig, rng: np.random.Generator) -> "FenichelModel":
        return cls(cfg, cfg.init(rng))


def transform(m: FenichelModel, z, eps) -> tuple[Tensor, Tensor]:
    """z -> (y, x) through the invertible coordinate change."""
    return inn_forward(m.cfg.inn, m.params["inn"], z, eps)


def untransform(m: FenichelModel, y, x, eps) -> Tensor:
    return inn_inverse(m.cfg.inn, m.params["inn"], y, x, eps)


def linear_fast(m: FenichelModel, x) -> Tensor:
    """The stable block upper triangular matrix T(x)."""
    return schur_net(m.cfg.schur, m.params["schur"], x)


def _xye(x, y, eps):
    x, y = as_tensor(x), as_tensor(y)
    return ad.concat([x, y, eps_features(eps, x.shape[:-1])], axis=-1)


def rhs_fast(m: FenichelModel, x, y, eps) -> Tensor:
    """Nonlinear part f(x,y,eps) = B(x,y,eps)(y,y) + eps*C(x,y,eps)y.

    The linear part T(x)y is handled separately by the integrator; use
    linear_fast for it. Every term carries a factor of y, so f(x,0,eps)
    is exactly zero.
    """
    x, y = as_tensor(x), as_tensor(y)
    quad = bilinear_net(m.cfg.bilinear, m.params["bilinear"], x, y, eps)
    nf = m.cfg.n_fast
    cmat = ad.reshape(ffn_eval(m.cfg.cnet, m.params["cnet"], _xye(x, y, eps)),
                      x.shape[:-1] + (nf, nf))
    cy = ad.reshape(ad.matmul(cmat, y[..., None]), y.shape)
    out = quad + _col(eps) * cy
    if not np.all(np.isfinite(out.value)):
        raise IntegrationError("non-finite fast right-hand side")
    return out


def rhs_slow(m: FenichelModel, x, y, eps) -> Tensor:
    """g(x,y,eps); the eps factor of dx/dt is applied by the integrator."""
    out = ffn_eval(m.cfg.gnet, m.params["gnet"], _xye(x, y, eps))
    if not np.all(np.isfinite(out.value)):
        raise IntegrationError("non-finite slow right-hand side")
    return out


# ---------------------------------------------------------------------------
# IMEX tableau


@dataclass(frozen=True)
class IMEXTableau:
    """Additive Runge-Kutta pair: implicit (a, b) for the stiff linear term,
    explicit (alpha, beta) for everything else. Order-2 conditions and
    L-stability of the implicit part are checked at construction."""

    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        al, be = np.asarray(self.alpha, float), np.asarray(self.beta, float)
        s = len(b)
        if a.shape != (s, s) or al.shape != (s, s) or be.shape != (s,):
            raise ValueError("inconsistent tableau shapes")
        if np.any(np.triu(a, 1) != 0) or np.any(np.triu(al) != 0):
            raise ValueError("implicit part must be lower triangular, explicit strictly lower")
        if np.any(np.diag(a) <= 0):
            raise ValueError("implicit diagonal must be positive")
        c, c_hat = a.sum(axis=1), al.sum(axis=1)
        checks = (b.sum() - 1.0, be.sum() - 1.0, b @ c - 0.5, be @ c_hat - 0.5)
        if max(abs(v) for v in checks) > 1e-12:
            raise ValueError("order-2 conditions violated")
        if abs(self.amplification(-1e4)) >= 0.05:
            raise ValueError("implicit part is not stiffly damping")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", al)
        object.__setattr__(self, "beta", be)

    @property
    def stages(self) -> int:
        return len(self.b)

    def amplification(self, z: float) -> float:
        """One-step factor of the implicit scheme on y' = lambda*y, z = lambda*dt."""
        s = len(self.b)
        stages = np.linalg.solve(np.eye(s) - z * np.asarray(self.a, float), np.ones(s))
        return 1.0 + z * np.asarray(self.b, float) @ stages


def ssp2_tableau() -> IMEXTableau:
    """Two-stage second-order strong-stability-preserving IMEX pair with an
    L-stable implicit half (diagonal gamma = 1 - 1/sqrt(2))."""
    g = 1.0 - 1.0 / np.sqrt(2.0)
    return IMEXTableau(a=np.array([[g, 0.0], [1.0 - 2.0 * g, g]]),
                       b=np.array([0.5, 0.5]),
                       alpha=np.array([[0.0, 0.0], [1.0, 0.0]]),
                       beta=np.array([0.5, 0.5]))


# ---------------------------------------------------------------------------
# implicit stage solve


def block_backsub(t, a: float, dt: float, rhs) -> Tensor:
    """Solve (I - dt*a*T) Y = rhs for block upper triangular T.

    Bottom-up substitution with closed-form 1x1 / 2x2 diagonal solves;
    O(n^2) work. A zero rhs yields an exactly zero Y.
    """
    t, rhs = as_tensor(t), as_tensor(rhs)
    n = t.shape[-1]
    _, _, sizes = schur_layout(n)
    offsets = np.cumsum([0] + sizes)
    c = np.asarray(dt, dtype=np.float64) * a
    sol: list[Tensor | None] = [None] * len(sizes)
    for i in reversed(range(len(sizes))):
        o, s = offsets[i], sizes[i]
        acc = rhs[..., o : o + s]
        for j in range(i + 1, len(sizes)):
            oj, sj = offsets[j], sizes[j]
            blk = t[..., o : o + s, oj : oj + sj]
            acc = acc + _col(c) * ad.reshape(ad.matmul(blk, sol[j][..., None]),
                                             acc.shape)
        if s == 1:
            den = 1.0 - c * t[..., o, o]
            if np.any(den.value == 0):
                raise IntegrationError("singular diagonal block")
            sol[i] = (acc[..., 0] / den)[..., None]
        else:
            m00 = 1.0 - c * t[..., o, o]
            m01 = -c * t[..., o, o + 1]
            m10 = -c * t[..., o + 1, o]
            m11 = 1.0 - c * t[..., o + 1, o + 1]
            det = m00 * m11 - m01 * m10
            if np.any(det.value == 0):
                raise IntegrationError("singular diagonal block")
            y0 = (m11 * acc[..., 0] - m01 * acc[..., 1]) / det
            y1 = (m00 * acc[..., 1] - m10 * acc[..., 0]) / det
            sol[i] = ad.stack([y0, y1], axis=-1)
    return ad.concat(sol, axis=-1)


# ---------------------------------------------------------------------------
# steppers


def imex_step_generic(t_of, f_of, g_of, x, y, eps: float, dt: float,
                      tab: IMEXTableau) -> tuple[Tensor, Tensor]:
    """One additive IMEX step of dy/dt = T(x)y + f(x,y), dx/dt = eps*g(x,y).

    t_of(x) -> block upper triangular Tensor; f_of(x, y) and g_of(x, y)
    -> Tensors. Stage values X^i are explicit in g; Y^i solve the implicit
    stage equations via backward substitution.
    """
    x, y = as_tensor(x), as_tensor(y)
    s = tab.stages
    xs: list[Tensor] = []
    ys: list[Tensor] = []
    ts: list[Tensor] = []
    fs: list[Tensor] = []
    gs: list[Tensor] = []
    for i in range(s):
        xi = x
        for j in range(i):
            if tab.alpha[i, j] != 0.0:
                xi = xi + _col(dt * eps * tab.alpha[i, j]) * gs[j]
        acc = y
        for j in range(i):
            if tab.a[i, j] != 0.0:
                ty = ad.reshape(ad.matmul(ts[j], ys[j][..., None]), y.shape)
                acc = acc + _col(dt * tab.a[i, j]) * ty
            if tab.alpha[i, j] != 0.0:
                acc = acc + _col(dt * tab.alpha[i, j]) * fs[j]
        ti = t_of(xi)
        yi = block_backsub(ti, tab.a[i, i], dt, acc)
        if not (np.all(np.isfinite(yi.value)) and np.all(np.isfinite(xi.value))):
            raise IntegrationError(f"non-finite value at stage {i + 1}")
        xs.append(xi)
        ys.append(yi)
        ts.append(ti)
        fs.append(f_of(xi, yi))
        gs.append(g_of(xi, yi))
    y_new, x_new = y, x
    for i in range(s):
        ty = ad.reshape(ad.matmul(ts[i], ys[i][..., None]), y.shape)
        y_new = y_new + _col(dt * tab.b[i]) * ty + _col(dt * tab.beta[i]) * fs[i]
        x_new = x_new + _col(dt * eps * tab.beta[i]) * gs[i]
    return y_new, x_new


def imex_step(m: FenichelModel, x, y, eps, dt,
              tab: IMEXTableau) -> tuple[Tensor, Tensor]:
    """One fast-time step of the learned normal-form dynamics; eps and dt
    may be per-sample arrays over the batch."""
    if np.any(np.asarray(dt) <= 0):
        raise ValueError("dt must be positive")
    return imex_step_generic(
        lambda xi: linear_fast(m, xi),
        lambda xi, yi: rhs_fast(m, xi, yi, eps),
        lambda xi, yi: rhs_slow(m, xi, yi, eps),
        x, y, eps, dt, tab)


def slow_step(m: FenichelModel, x, eps, dt,
              tab: IMEXTableau) -> Tensor:
    """Explicit step of the reduced system dx/dt = eps*g(x, 0, eps).

    The caller asserts on-manifold semantics (y = 0); dt may be of order
    1/eps since the reduced system is non-stiff, and may be negative to
    run the reduced flow backwards (e.g. forward-time prediction from a
    model trained on a time-reversed system).
    """
    if np.any(np.asarray(dt) == 0):
        raise ValueError("dt must be nonzero")
    x = as_tensor(x)
    zero = Tensor(np.zeros(x.shape[:-1] + (m.cfg.n_fast,)))
    gs: list[Tensor] = []
    for i in range(tab.stages):
        xi = x
        for j in range(i):
            if tab.alpha[i, j] != 0.0:
                xi = xi + _col(dt * eps * tab.alpha[i, j]) * gs[j]
        gs.append(rhs_slow(m, xi, zero, eps))
    x_new = x
    for i in range(tab.stages):
        x_new = x_new + _col(dt * eps * tab.beta[i]) * gs[i]
    if not np.all(np.isfinite(x_new.value)):
        raise IntegrationError("non-finite slow step")
    return x_new


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class IntegrationConfig:
    dt_fast: float
    dt_slow: float
    tau_y: float = 1e-8
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.dt_fast <= 0 or self.dt_slow <= 0:
            raise ValueError("time steps must be positive")
        if self.tau_y < 0:
            raise ValueError("hybrid threshold must be nonnegative")


def fsnn_rollout(m: FenichelModel, z0, eps: float, timestamps,
                 tab: IMEXTableau | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Integrate from z0 at the given timestamps.

    z0 is transformed to (y, x), stepped with the IMEX scheme using
    per-interval dt from the timestamp gaps, and mapped back after every
    step. Returns (ys, xs, zs) stacked along a leading time axis; a
    single-timestamp list returns the transformed z0 alone.
    """
    tab = tab or ssp2_tableau()
    timestamps = np.asarray(timestamps, float)
    if timestamps.shape[-1] < 1:
        raise ValueError("need at least one timestamp")
    dts = np.diff(timestamps, axis=-1)
    if np.any(dts <= 0):
        raise ValueError("timestamps must be strictly increasing")
    y, x = transform(m, z0, eps)
    ys, xs, zs = [y], [x], [untransform(m, y, x, eps)]
    for n in range(dts.shape[-1]):
        y, x = imex_step(m, x, y, eps, dts[..., n], tab)
        ys.append(y)
        xs.append(x)
        zs.append(untransform(m, y, x, eps))
    return ad.stack(ys, axis=0), ad.stack(xs, axis=0), ad.stack(zs, axis=0)


def closure_predict(m: FenichelModel, z0, eps: float, timestamps,
                    tab: IMEXTableau | None = None) -> Tensor:
    """Slow-manifold prediction: transform, project y to zero, integrate the
    reduced system at the (slow) timestamps, map back with y = 0."""
    tab = tab or ssp2_tableau()
    timestamps = np.asarray(timestamps, float)
    dts = np.diff(timestamps, axis=-1)
    if not (np.all(dts > 0) or np.all(dts < 0)):
        raise ValueError("timestamps must be strictly monotone")
    _, x = transform(m, z0, eps)
    zero = Tensor(np.zeros(x.shape[:-1] + (m.cfg.n_fast,)))
    zs = [untransform(m, zero, x, eps)]
    for n in range(dts.shape[-1]):
        x = slow_step(m, x, eps, dts[..., n], tab)
        zs.append(untransform(m, zero, x, eps))
    return ad.stack(zs, axis=0)


def hybrid_rollout(m: FenichelModel, state: FastSlowState, config: IntegrationConfig,
                   t_end: float, tab: IMEXTableau | None = None):
    """Fast integration until ||y|| < tau_y, then reduced (slow) integration.

    Returns (times, ys, xs, switch_index) as numpy arrays; switch_index is
    the step at which integration moved to the manifold (0 if immediate,
    len(times)-1 if never).
    """
    tab = tab or ssp2_tableau()
    x, y = as_tensor(state.x), as_tensor(state.y)
    eps, t = state.eps, state.t
    times, ys, xs = [t], [y.value.copy()], [x.value.copy()]
    switch = None
    with ad.no_grad():
        n = 0
        while t < t_end - 1e-12 * max(1.0, abs(t_end)):
            if switch is None and np.max(np.linalg.norm(y.value, axis=-1)) < config.tau_y:
                switch = n
                y = Tensor(np.zeros_like(y.value))
            if switch is None:
                dt = min(config.dt_fast, t_end - t)
                y, x = imex_step(m, x, y, eps, dt, tab)
            else:
                dt = min(config.dt_slow, t_end - t)
                x = slow_step(m, x, eps, dt, tab)
            t += dt
            n += 1
            if n > config.max_steps:
                raise IntegrationError("max step count exceeded")
            times.append(t)
            ys.append(y.value.copy())
            xs.append(x.value.copy())
    if switch is None:
        switch = len(times) - 1
    return np.array(times), np.stack(ys), np.stack(xs), switch
