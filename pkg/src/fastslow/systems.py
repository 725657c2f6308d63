"""Ground-truth example systems, reference integration, and dataset generation.

All right-hand sides are written in fast-time units, in which the fast
variables relax at O(1) rates and the slow variables move at O(eps).
Each system declares which state components are fast so that models can be
initialized with a matching coordinate split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import RK45, solve_ivp

EPS_RANGE_DEFAULT = (1e-5, 1e-2)

# tokamak equilibrium constants
Q0, Q2, MINOR_A, R0, B0 = 1.2, 2.8, 1.5, 3.0, 1.0


class ReferenceSolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class SystemSpec:
    """A fast-slow example system.

    fast_idx lists which components of z are fast; rhs(z, eps) is the
    full right-hand side in fast time; manifold(rng, n) samples points on
    the eps = 0 invariant graph; fast_eigs gives the analytic eigenvalues
    of the fast Jacobian on the manifold where known.
    """

    name: str
    dim: int
    fast_idx: tuple
    rhs: Callable
    sample_ic: Callable
    sample_manifold: Callable
    fast_eigs: Callable | None = None

    @property
    def n_fast(self) -> int:
        return len(self.fast_idx)

    @property
    def n_slow(self) -> int:
        return self.dim - self.n_fast

    @property
    def slow_idx(self) -> tuple:
        return tuple(i for i in range(self.dim) if i not in self.fast_idx)

    def split_permutation(self) -> np.ndarray:
        """Orthogonal matrix Q with z @ Q.T = (z[fast_idx], z[slow_idx])."""
        order = list(self.fast_idx) + list(self.slow_idx)
        q = np.zeros((self.dim, self.dim))
        q[np.arange(self.dim), order] = 1.0
        return q


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    eps: float
    scale: str  # "fast" | "slow"

    def __post_init__(self):
        if len(self.t) != len(self.z):
            raise ValueError("timestamp/state length mismatch")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.eps <= 0:
            raise ValueError("eps must be positive for dynamics data")
        if self.scale not in ("fast", "slow"):
            raise ValueError(f"unknown scale tag {self.scale!r}")


@dataclass
class Dataset:
    system: str
    trajectories: list  # of Trajectory
    manifold_points: list  # of (z, eps) pairs
    metadata: dict = field(default_factory=dict)

    def subset(self, scale: str) -> list:
        return [tr for tr in self.trajectories if tr.scale == scale]


# ---------------------------------------------------------------------------
# toy 2-d system


def toy_lambda(z1):
    return -1.0 - 0.1 * np.cos(2.0 * z1)


def toy_theta(z1):
    return 2.0 * np.tanh(z1)


def toy_rhs(z, eps):
    z = np.asarray(z, float)
    z1, z2 = z[..., 0], z[..., 1]
    return np.stack([-eps * (np.sin(z1) + z2),
                     toy_lambda(z1) * (z2 - toy_theta(z1))], axis=-1)


# ---------------------------------------------------------------------------
# Grad moment system (3-mode Fourier truncation)


def grad_fourier_matrix(k: int, eps: float) -> np.ndarray:
    """The 5x5 complex system matrix for Fourier mode k acting on
    (rho, u, T, sigma, q), in fast time."""
    ike = 1j * k * eps
    return np.array([
        [0.0, -ike, 0.0, 0.0, 0.0],
        [-ike, 0.0, -ike, -ike, 0.0],
        [0.0, -(2.0 / 3.0) * ike, 0.0, 0.0, -(2.0 / 3.0) * ike],
        [0.0, -(4.0 / 3.0) * ike, 0.0, -1.0, -(8.0 / 15.0) * ike],
        [0.0, 0.0, -(5.0 / 2.0) * ike, -ike, -2.0 / 3.0],
    ], dtype=complex)


GRAD_MODES = (0, 1, -1)
GRAD_SLOW_FIELDS = (0, 1, 2)  # rho, u, T
GRAD_FAST_FIELDS = (3, 4)  # sigma, q
GRAD_DIM = 30


def _grad_layout() -> tuple[list, list]:
    """Indices of every (mode, field, re/im) component in the realified
    30-dim state: all slow components first, then all fast ones."""
    slow, fast = [], []
    for mode_pos, _ in enumerate(GRAD_MODES):
        for f in GRAD_SLOW_FIELDS:
            slow += [(mode_pos, f, 0), (mode_pos, f, 1)]
        for f in GRAD_FAST_FIELDS:
            fast += [(mode_pos, f, 0), (mode_pos, f, 1)]
    return slow, fast


def grad_real_matrix(eps: float) -> np.ndarray:
    """Realified 30x30 matrix; slow components (rho, u, T over the three
    modes) occupy indices 0..17, fast ones (sigma, q) 18..29."""
    slow, fast = _grad_layout()
    comps = slow + fast
    m = np.zeros((GRAD_DIM, GRAD_DIM))
    for i, (mp_i, f_i, p_i) in enumerate(comps):
        for j, (mp_j, f_j, p_j) in enumerate(comps):
            if mp_i != mp_j:
                continue
            a = grad_fourier_matrix(GRAD_MODES[mp_i], eps)[f_i, f_j]
            if p_i == 0:
                m[i, j] = a.real if p_j == 0 else -a.imag
            else:
                m[i, j] = a.imag if p_j == 0 else a.real
    return m


def grad_rhs(z, eps):
    m = grad_real_matrix(eps)
    return np.asarray(z, float) @ m.T


def grad_exact_solution(z0, eps, times):
    """Exact solution of the linear Grad system via eigendecomposition;
    usable at arbitrary horizons where explicit stepping is impractical."""
    lam, vecs = np.linalg.eig(grad_real_matrix(eps))
    coeffs = np.linalg.solve(vecs, np.asarray(z0, complex))
    times = np.asarray(times, float)
    z = (vecs @ (np.exp(np.outer(lam, times)) * coeffs[:, None])).T
    if np.max(np.abs(z.imag)) > 1e-9 * max(1.0, np.max(np.abs(z.real))):
        raise ReferenceSolverError("eigendecomposition solution lost realness")
    return z.real


def grad_pack(coeffs: np.ndarray) -> np.ndarray:
    """(3, 5) complex mode coefficients -> realified 30-vector."""
    slow, fast = _grad_layout()
    z = np.empty(GRAD_DIM)
    for i, (mp, f, p) in enumerate(slow + fast):
        c = coeffs[mp, f]
        z[i] = c.real if p == 0 else c.imag
    return z


GRAD_TRUE_EIGS = np.array([-1.0] * 6 + [-2.0 / 3.0] * 6)


# ---------------------------------------------------------------------------
# two-scale Lorenz96


def lorenz96_rhs(z, eps, J=4, K=4):
    z = np.asarray(z, float)
    x = z[..., :K]
    y = z[..., K:].reshape(z.shape[:-1] + (J, K))
    xm1, xm2, xp1 = np.roll(x, 1, -1), np.roll(x, 2, -1), np.roll(x, -1, -1)
    dx = -eps * xm1 * (xm2 - xp1) - eps * x - eps**2 * y.sum(axis=-2)
    yp1, yp2, ym1 = np.roll(y, -1, -2), np.roll(y, -2, -2), np.roll(y, 1, -2)
    dy = -yp1 * (yp2 - ym1) - y + x[..., None, :]
    return np.concatenate([dx, dy.reshape(z.shape[:-1] + (J * K,))], axis=-1)


def lorenz96_energy(z, eps, J=4, K=4):
    z = np.asarray(z, float)
    return 0.5 * np.sum(z[..., :K] ** 2, axis=-1) + \
        0.5 * eps**2 * np.sum(z[..., K:] ** 2, axis=-1)


def lorenz_circulant_eigs(chi: float, J: int) -> np.ndarray:
    """Eigenvalues of the fast Jacobian at the fixed point y = chi."""
    if J < 1:
        raise ValueError("J must be positive")
    j = np.arange(J)
    return -1.0 - chi * (np.exp(1j * j * 4 * np.pi / J) - np.exp(-1j * j * 2 * np.pi / J))


def lorenz_fast_jacobian(y: np.ndarray) -> np.ndarray:
    """Jacobian of the single-column fast equations at state y (length J)."""
    y = np.asarray(y, float)
    J = len(y)
    m = np.zeros((J, J))
    for j in range(J):
        m[j, j] -= 1.0
        m[j, (j + 1) % J] -= y[(j + 2) % J] - y[(j - 1) % J]
        m[j, (j + 2) % J] -= y[(j + 1) % J]
        m[j, (j - 1) % J] += y[(j + 1) % J]
    return m


def stability_region_check(chi: float, J: int | None = None) -> bool:
    """True iff every fast eigenvalue at y = chi has negative real part.

    J = None checks the dense-sampling limit of infinitely many modes.
    """
    if J is None:
        xi = np.linspace(0.0, 2 * np.pi, 20001)
        re = -1.0 - chi * (np.cos(2 * xi) - np.cos(xi))
        return bool(np.max(re) < 0)
    return bool(np.max(lorenz_circulant_eigs(chi, J).real) < 0)


# ---------------------------------------------------------------------------
# Abraham-Lorentz in a tokamak field


def tokamak_field(pos) -> np.ndarray:
    """Idealized tokamak equilibrium field at Cartesian position(s)."""
    pos = np.asarray(pos, float)
    x1, x2, z = pos[..., 0], pos[..., 1], pos[..., 2]
    r = np.sqrt(x1**2 + x2**2)
    if np.any(r <= 0):
        raise ValueError("field is singular on the axis r = 0")
    q = Q0 + Q2 * ((r - R0) ** 2 + z**2) / MINOR_A**2
    b_r = -z / (q * r) * B0
    b_phi = R0 / r * B0
    b_z = (r - R0) / (q * r) * B0
    cos_p, sin_p = x1 / r, x2 / r
    return np.stack([b_r * cos_p - b_phi * sin_p,
                     b_r * sin_p + b_phi * cos_p,
                     b_z], axis=-1)


def abraham_lorentz_rhs(state, eps, direction="reverse", zeta=1.0):
    """Radiation-reaction equations for (a, v, x) in fast time.

    Forward time: da/dt = a - zeta v x B, dv/dt = (2/3) eps a,
    dx/dt = (2/3) eps v. The reverse-time system negates everything and is
    the normally stable one used for training.
    """
    state = np.asarray(state, float)
    a, v, x = state[..., 0:3], state[..., 3:6], state[..., 6:9]
    b = tokamak_field(x)
    da = a - zeta * np.cross(v, b)
    dv = (2.0 / 3.0) * eps * a
    dx = (2.0 / 3.0) * eps * v
    out = np.concatenate([da, dv, dx], axis=-1)
    if direction == "reverse":
        return -out
    if direction == "forward":
        return out
    raise ValueError(f"unknown direction {direction!r}")


def al_manifold_expansion(x, v, eps, zeta=1.0):
    """Two-term slow-manifold acceleration a*(x, v, eps).

    Leading term zeta v x B plus a first-order term (3/2) eps (v x B) x B.
    Note the first-order coefficient leaves an O(eps) invariance defect;
    al_manifold_corrected carries the O(eps^2)-accurate term.
    """
    b = tokamak_field(x)
    vxb = np.cross(v, b)
    return zeta * vxb + 1.5 * eps * np.cross(vxb, b)


def _field_jacobian(x, step=1e-7):
    x = np.asarray(x, float)
    jac = np.empty(x.shape[:-1] + (3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        jac[..., :, j] = (tokamak_field(x + e) - tokamak_field(x - e)) / (2 * step)
    return jac


def al_manifold_corrected(x, v, eps, zeta=1.0):
    """Slow-manifold acceleration with the first-order term that makes the
    reverse-time invariance residual O(eps^2):
    a* = zeta v x B + (2/3) eps [(v x B) x B + zeta v x (DB v)]."""
    b = tokamak_field(x)
    vxb = np.cross(v, b)
    db_v = np.einsum("...ij,...j->...i", _field_jacobian(x), np.asarray(v, float))
    return zeta * vxb + (2.0 / 3.0) * eps * (np.cross(vxb, b) + zeta * np.cross(v, db_v))


def guiding_center(x, v, eps, zeta=1.0):
    """Gyro-averaged position of a particle on the slow manifold.

    The slow system rotates v about w = (2/3) eps zeta B at rate |w| while
    x moves at (2/3) eps v, so x + (2/3) eps (v x w)/|w|^2 removes the
    gyration up to higher-order drifts.
    """
    x, v = np.asarray(x, float), np.asarray(v, float)
    w = (2.0 / 3.0) * eps * zeta * tokamak_field(x)
    w2 = np.sum(w * w, axis=-1, keepdims=True)
    return x + (2.0 / 3.0) * eps * np.cross(v, w) / w2


# ---------------------------------------------------------------------------
# reference solver


def rk45_integrate(rhs, z0, eps, t_end=None, tol=1e-8, t_eval=None,
                   n_steps=None, t0=0.0):
    """Adaptive embedded Runge-Kutta (Dormand-Prince) reference solution.

    Either pass t_eval for dense interpolated output, n_steps to take
    exactly that many adaptive solver steps, or t_end alone for all solver
    steps up to it. Returns (t, z) arrays.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    z0 = np.asarray(z0, float)
    if n_steps is not None:
        stepper = RK45(lambda t, z: rhs(z, eps), t0, z0,
                       t_bound=np.inf if t_end is None else t_end,
                       rtol=tol, atol=tol)
        t, z = [t0], [z0]
        for _ in range(n_steps):
            msg = stepper.step()
            if stepper.status == "failed":
                raise ReferenceSolverError(
                    f"reference solver failed near t = {stepper.t}: {msg}")
            t.append(stepper.t)
            z.append(stepper.y.copy())
        return np.array(t), np.stack(z)
    if t_end is None:
        raise ValueError("need t_end or n_steps")
    sol = solve_ivp(lambda t, z: rhs(z, eps), (t0, t_end), z0,
                    method="RK45", rtol=tol, atol=tol, t_eval=t_eval)
    if not sol.success:
        t_fail = sol.t[-1] if len(sol.t) else t0
        raise ReferenceSolverError(f"reference solver failed near t = {t_fail}: {sol.message}")
    return sol.t, sol.y.T


def rk45_dense(rhs, z0, eps, t_eval, tol=1e-8):
    t_eval = np.asarray(t_eval, float)
    t, z = rk45_integrate(rhs, z0, eps, float(t_eval[-1]), tol=tol,
                          t_eval=t_eval, t0=float(t_eval[0]))
    return t, z


# ---------------------------------------------------------------------------
# system registry


def _toy_sample_ic(rng, eps):
    return rng.uniform(-1.0, 1.0, size=2)


def _toy_sample_manifold(rng):
    z1 = rng.uniform(-1.0, 1.0)
    return np.array([z1, toy_theta(z1)])


def _grad_sample_ic(rng, eps):
    coeffs = rng.uniform(-1.0, 1.0, size=(3, 5)) + 1j * rng.uniform(-1.0, 1.0, size=(3, 5))
    return grad_pack(coeffs)


def _grad_sample_manifold(rng):
    coeffs = rng.uniform(-1.0, 1.0, size=(3, 5)) + 1j * rng.uniform(-1.0, 1.0, size=(3, 5))
    coeffs[:, list(GRAD_FAST_FIELDS)] = 0.0
    return grad_pack(coeffs)


def _lorenz_sample_ic(rng, eps, J=4, K=4):
    x = rng.uniform(-0.5, 1.0, size=K)
    y = rng.normal(size=J * K)
    return np.concatenate([x, y])


def _lorenz_sample_manifold(rng, J=4, K=4):
    x = rng.uniform(-0.5, 1.0, size=K)
    return np.concatenate([x, np.tile(x, J)])


def _al_sample_xv(rng):
    r = rng.uniform(2.0, 4.0)
    phi = rng.uniform(0.0, 2 * np.pi)
    x = np.array([r * np.cos(phi), r * np.sin(phi), rng.uniform(-1.0, 1.0)])
    v = rng.normal(size=3)
    v *= rng.uniform(0.0, 1.0) ** (1 / 3) / np.linalg.norm(v)
    return x, v


def _al_sample_ic(rng, eps, zeta=1.0):
    x, v = _al_sample_xv(rng)
    da = rng.normal(size=3)
    da *= rng.uniform(0.0, 1.0) ** (1 / 3) / np.linalg.norm(da)
    a = al_manifold_expansion(x, v, eps, zeta) + da
    return np.concatenate([a, v, x])


def _al_sample_manifold(rng, zeta=1.0):
    x, v = _al_sample_xv(rng)
    a = zeta * np.cross(v, tokamak_field(x))
    return np.concatenate([a, v, x])


TOY = SystemSpec(
    name="toy", dim=2, fast_idx=(1,), rhs=toy_rhs,
    sample_ic=_toy_sample_ic, sample_manifold=_toy_sample_manifold,
    fast_eigs=lambda z: np.array([toy_lambda(np.asarray(z)[..., 0])]))

GRAD = SystemSpec(
    name="grad", dim=GRAD_DIM, fast_idx=tuple(range(18, 30)), rhs=grad_rhs,
    sample_ic=_grad_sample_ic, sample_manifold=_grad_sample_manifold,
    fast_eigs=lambda z: GRAD_TRUE_EIGS.copy())

LORENZ96 = SystemSpec(
    name="lorenz96", dim=20, fast_idx=tuple(range(4, 20)),
    rhs=lambda z, eps: lorenz96_rhs(z, eps, J=4, K=4),
    sample_ic=_lorenz_sample_ic, sample_manifold=_lorenz_sample_manifold,
    fast_eigs=None)

ABRAHAM_LORENTZ = SystemSpec(
    name="abraham_lorentz", dim=9, fast_idx=(0, 1, 2),
    rhs=lambda z, eps: abraham_lorentz_rhs(z, eps, direction="reverse"),
    sample_ic=_al_sample_ic, sample_manifold=_al_sample_manifold,
    fast_eigs=lambda z: np.array([-1.0, -1.0, -1.0]))

SYSTEMS = {s.name: s for s in (TOY, GRAD, LORENZ96, ABRAHAM_LORENTZ)}


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class GenConfig:
    """Dataset recipe. Defaults reproduce the full-scale generation
    protocols; desk-scale runs shrink the counts."""

    system: str
    n_traj: int = 1000
    n_manifold: int = 1000
    n_steps: int = 5  # adaptive fast steps kept (toy/lorenz/AL)
    n_grad_steps: int = 50  # fixed-grid steps for the Grad system
    seq_len: int = 10  # sequence length for AL batching
    n_slow_seq: int = 1000  # slow-scale sequences for AL
    eps_range: tuple = EPS_RANGE_DEFAULT
    rk_tol: float = 1e-8
    dt_fast: float = 0.25
    dt_slow_factor: float = 0.25  # dt_slow = factor / eps (Grad grid)
    al_dt_slow_factor: float = 0.025  # dt_slow = factor / eps (AL coarse grid)
    slow_burn_in: float = 15.0  # fast-time lead before the AL coarse grid
    zeta: float = 1.0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if min(self.n_traj, self.n_manifold, self.n_steps, self.seq_len) < 1:
            raise ValueError("counts must be positive")


def _substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream: independent of worker layout."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _sample_eps(rng, eps_range):
    lo, hi = np.log10(eps_range[0]), np.log10(eps_range[1])
    return float(10.0 ** rng.uniform(lo, hi))


def _gen_toy_like(spec, cfg, seed):
    trajectories = []
    for k in range(cfg.n_traj):
        rng = _substream(seed, k)
        eps = _sample_eps(rng, cfg.eps_range)
        z0 = spec.sample_ic(rng, eps)
        t, z = rk45_integrate(spec.rhs, z0, eps, t_end=1e12, tol=cfg.rk_tol,
                              n_steps=cfg.n_steps)
        trajectories.append(Trajectory(t, z, eps, "fast"))
    return trajectories


def _gen_grad(spec, cfg, seed):
    trajectories = []
    for k in range(cfg.n_traj):
        rng = _substream(seed, k)
        eps = _sample_eps(rng, cfg.eps_range)
        z0 = spec.sample_ic(rng, eps)
        n = cfg.n_grad_steps
        t_fast = cfg.dt_fast * np.arange(n + 1)
        trajectories.append(Trajectory(t_fast, grad_exact_solution(z0, eps, t_fast),
                                       eps, "fast"))
        # slow-scale trajectory offset one slow step from t = 0
        dt_slow = cfg.dt_slow_factor / eps
        t_slow = dt_slow * np.arange(1, n + 2)
        trajectories.append(Trajectory(t_slow, grad_exact_solution(z0, eps, t_slow),
                                       eps, "slow"))
    return trajectories


def _gen_al(spec, cfg, seed):
    trajectories = []
    n_fast_steps = 4 * cfg.seq_len  # "first 40 steps" at full scale
    per_traj_slow = max(1, cfg.n_slow_seq // cfg.n_traj)
    for k in range(cfg.n_traj):
        rng = _substream(seed, k)
        eps = _sample_eps(rng, cfg.eps_range)
        z0 = spec.sample_ic(rng, eps)
        t, z = rk45_integrate(spec.rhs, z0, eps, t_end=1e12, tol=cfg.rk_tol,
                              n_steps=n_fast_steps)
        for s in range(0, n_fast_steps, cfg.seq_len):
            trajectories.append(
                Trajectory(t[s : s + cfg.seq_len + 1], z[s : s + cfg.seq_len + 1],
                           eps, "fast"))
        # slow-scale sequences from dense output on the coarse grid; the
        # grid starts after a fast-time burn-in so the off-manifold
        # transient of the initial condition has fully decayed
        dt_slow = cfg.al_dt_slow_factor / eps
        n_grid = cfg.seq_len + per_traj_slow
        t_grid = cfg.slow_burn_in + dt_slow * np.arange(n_grid + 1)
        _, z_burn = rk45_dense(spec.rhs, z0, eps,
                               np.concatenate([[0.0], t_grid]), tol=cfg.rk_tol)
        z_grid = z_burn[1:]
        for _ in range(per_traj_slow):
            s = int(rng.integers(0, n_grid - cfg.seq_len + 1))
            trajectories.append(
                Trajectory(t_grid[s : s + cfg.seq_len + 1],
                           z_grid[s : s + cfg.seq_len + 1], eps, "slow"))
    return trajectories


def gen_dataset(cfg: GenConfig, seed: int) -> Dataset:
    """Deterministic dataset per (config, seed); trajectory k draws from a
    counter-based substream so generation parallelizes safely."""
    spec = SYSTEMS[cfg.system]
    if cfg.system == "grad":
        trajectories = _gen_grad(spec, cfg, seed)
    elif cfg.system == "abraham_lorentz":
        trajectories = _gen_al(spec, cfg, seed)
    else:
        trajectories = _gen_toy_like(spec, cfg, seed)
    manifold = []
    for k in range(cfg.n_manifold):
        rng = _substream(seed, 10_000_000 + k)
        manifold.append((spec.sample_manifold(rng), 0.0))
    meta = {"system": cfg.system, "seed": seed,
            "config": {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}}
    return Dataset(cfg.system, trajectories, manifold, meta)


# ---------------------------------------------------------------------------
# dataset files: newline-delimited self-describing records


def save_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w") as f:
        meta = dict(ds.metadata)
        meta["record"] = "header"
        f.write(json.dumps(meta) + "\n")
        for tr in ds.trajectories:
            f.write(json.dumps({"record": "trajectory", "system": ds.system,
                                "epsilon": tr.eps, "scale": tr.scale,
                                "t": tr.t.tolist(), "z": tr.z.tolist()}) + "\n")
        for z, eps in ds.manifold_points:
            f.write(json.dumps({"record": "manifold", "system": ds.system,
                                "epsilon": eps, "z": np.asarray(z).tolist()}) + "\n")


def load_dataset(path: str) -> Dataset:
    trajectories, manifold, meta, system = [], [], {}, None
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "header":
                meta = rec
                system = rec.get("system")
            elif kind == "trajectory":
                trajectories.append(Trajectory(np.array(rec["t"]), np.array(rec["z"]),
                                               rec["epsilon"], rec["scale"]))
            elif kind == "manifold":
                manifold.append((np.array(rec["z"]), rec["epsilon"]))
            else:
                raise ValueError(f"unknown record type {kind!r}")
    return Dataset(system or "unknown", trajectories, manifold, meta)
