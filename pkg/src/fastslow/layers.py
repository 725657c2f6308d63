"""Invertible transformation into fast-slow coordinates.

Building blocks: bi-Lipschitz affine (bLAT) layers whose singular values
are confined to [1/L, L], affine coupling layers with closed-form inverses,
and their alternating composition. Plain feed-forward networks used by the
coupling layers and by the dynamics nets also live here.

All forward/inverse maps accept a leading batch dimension and work on
Tensors (recording) or raw arrays (lifted to constant Tensors).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

# floor added to epsilon before taking log10 so the on-manifold samples
# (epsilon = 0) still produce a finite conditioning feature
EPS_LOG_FLOOR = 1e-6


def theta_L(s, L: float):
    """Smooth squashing of an unconstrained real into [1/L, L]."""
    if L < 1.0:
        raise ValueError(f"range bound L must be >= 1, got {L}")
    return ad.exp(float(np.log(L)) * ad.tanh(s))


def eps_features(eps, batch_shape: tuple) -> Tensor:
    """Two conditioning features per sample: epsilon and log10(epsilon + floor)."""
    e = np.asarray(eps, dtype=np.float64)[..., None]
    e = np.broadcast_to(e, batch_shape + (1,))
    return Tensor(np.concatenate([e, np.log10(e + EPS_LOG_FLOOR)], axis=-1))


# ---------------------------------------------------------------------------
# feed-forward networks


@dataclass(frozen=True)
class FFNConfig:
    """Affine + tanh alternation, final layer affine."""

    widths: tuple  # (in, hidden..., out)
    zero_init_last: bool = False
    init_scale: float = 0.1

    def init(self, rng: np.random.Generator) -> dict:
        p: dict = {}
        n = len(self.widths) - 1
        for i in range(n):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            scale = self.init_scale / np.sqrt(fan_in)
            w = rng.normal(0.0, scale, size=(fan_out, fan_in))
            if self.zero_init_last and i == n - 1:
                w = np.zeros_like(w)
            p[f"w{i}"] = w
            p[f"b{i}"] = np.zeros(fan_out)
        return p


def ffn_eval(cfg: FFNConfig, p: dict, x) -> Tensor:
    """Evaluate the network; `x` is (..., widths[0])."""
    h = as_tensor(x)
    if h.shape[-1] != cfg.widths[0]:
        raise ValueError(f"ffn input width {h.shape[-1]} != {cfg.widths[0]}")
    n = len(cfg.widths) - 1
    for i in range(n):
        h = ad.matmul(h, ad.swapaxes(as_tensor(p[f"w{i}"]), -1, -2)) + as_tensor(p[f"b{i}"])
        if i < n - 1:
            h = ad.tanh(h)
    return h


# ---------------------------------------------------------------------------
# bLAT layers


@dataclass(frozen=True)
class BLATConfig:
    in_dim: int
    out_dim: int
    L: float = 2.0
    init_scale: float = 0.01
    # optional constant orthogonal post-factors folded into U and V; used to
    # start a network at a chosen signed permutation instead of the identity
    u_fixed: np.ndarray | None = field(default=None, compare=False)

    @property
    def rank(self) -> int:
        return min(self.in_dim, self.out_dim)

    @property
    def square(self) -> bool:
        return self.in_dim == self.out_dim

    def init(self, rng: np.random.Generator) -> dict:
        r = self.rank
        if self.square:
            u = rng.normal(0.0, self.init_scale, size=(self.out_dim, self.out_dim))
            v = rng.normal(0.0, self.init_scale, size=(self.in_dim, self.in_dim))
        else:
            u = rng.normal(0.0, self.init_scale, size=(r, self.out_dim))
            v = rng.normal(0.0, self.init_scale, size=(r, self.in_dim))
        return {
            "u_raw": u,
            "v_raw": v,
            "sigma_raw": rng.normal(0.0, self.init_scale, size=r),
            "bias": np.zeros(self.out_dim),
        }


def _skew(a: Tensor) -> Tensor:
    return a - ad.swapaxes(a, -1, -2)


def blat_factors(cfg: BLATConfig, p: dict) -> tuple[Tensor, Tensor, Tensor]:
    """Orthogonal U (MxR), V (NxR) and the bounded singular values (R,)."""
    if cfg.square:
        u = ad.expm_skew(_skew(as_tensor(p["u_raw"])), check=False)
        v = ad.expm_skew(_skew(as_tensor(p["v_raw"])), check=False)
    else:
        u = ad.householder_orthogonal(as_tensor(p["u_raw"]), cfg.rank)
        v = ad.householder_orthogonal(as_tensor(p["v_raw"]), cfg.rank)
    if cfg.u_fixed is not None:
        u = ad.matmul(u, Tensor(cfg.u_fixed))
    sigma = theta_L(as_tensor(p["sigma_raw"]), cfg.L)
    return u, v, sigma


def blat_forward(cfg: BLATConfig, p: dict, x) -> Tensor:
    """U diag(sigma) V^T x + b."""
    x = as_tensor(x)
    if x.shape[-1] != cfg.in_dim:
        raise ValueError(f"blat input width {x.shape[-1]} != {cfg.in_dim}")
    u, v, sigma = blat_factors(cfg, p)
    h = ad.matmul(x, v) * sigma
    return ad.matmul(h, ad.swapaxes(u, -1, -2)) + as_tensor(p["bias"])


def blat_inverse(cfg: BLATConfig, p: dict, y) -> Tensor:
    """V diag(1/sigma) U^T (y - b); square layers only."""
    if not cfg.square:
        raise ValueError("rectangular bLAT layers have no inverse")
    y = as_tensor(y)
    u, v, sigma = blat_factors(cfg, p)
    h = ad.matmul(y - as_tensor(p["bias"]), u) / sigma
    return ad.matmul(h, ad.swapaxes(v, -1, -2))


# ---------------------------------------------------------------------------
# affine coupling layers


@dataclass(frozen=True)
class CouplingConfig:
    width: int
    d: int  # split index; first block has size d
    L: float = 2.0
    hidden: int = 10
    depth: int = 1  # hidden layers in each subnet

    def __post_init__(self):
        if not 1 <= self.d < self.width:
            raise ValueError(f"split index d={self.d} out of range for width {self.width}")

    def _subnet(self, n_in: int, n_out: int) -> FFNConfig:
        # +2 for the epsilon features appended to every subnet input
        return FFNConfig((n_in + 2,) + (self.hidden,) * self.depth + (n_out,),
                         zero_init_last=True)

    @property
    def nets(self) -> dict:
        d, m = self.d, self.width
        return {
            "F": self._subnet(m - d, d),
            "B": self._subnet(m - d, d),
            "G": self._subnet(d, m - d),
            "C": self._subnet(d, m - d),
        }

    def init(self, rng: np.random.Generator) -> dict:
        return {name: net.init(rng) for name, net in self.nets.items()}


def _coupling_scales(cfg: CouplingConfig, p: dict, cond: Tensor, feats: Tensor,
                     scale_net: str, shift_net: str) -> tuple[Tensor, Tensor]:
    inp = ad.concat([cond, feats], axis=-1)
    nets = cfg.nets
    scale = theta_L(ffn_eval(nets[scale_net], p[scale_net], inp), cfg.L)
    shift = ffn_eval(nets[shift_net], p[shift_net], inp)
    return scale, shift


def coupling_forward(cfg: CouplingConfig, p: dict, x, eps) -> Tensor:
    x = as_tensor(x)
    feats = eps_features(eps, x.shape[:-1])
    x1, x2 = x[..., : cfg.d], x[..., cfg.d :]
    f, b = _coupling_scales(cfg, p, x2, feats, "F", "B")
    y1 = f * x1 + b
    g, c = _coupling_scales(cfg, p, y1, feats, "G", "C")
    y2 = g * x2 + c
    return ad.concat([y1, y2], axis=-1)


def coupling_inverse(cfg: CouplingConfig, p: dict, y, eps) -> Tensor:
    y = as_tensor(y)
    feats = eps_features(eps, y.shape[:-1])
    y1, y2 = y[..., : cfg.d], y[..., cfg.d :]
    g, c = _coupling_scales(cfg, p, y1, feats, "G", "C")
    x2 = (y2 - c) / g
    f, b = _coupling_scales(cfg, p, x2, feats, "F", "B")
    x1 = (y1 - b) / f
    return ad.concat([x1, x2], axis=-1)


# ---------------------------------------------------------------------------
# the full invertible network


@dataclass(frozen=True)
class INNConfig:
    """Alternating bLAT / coupling composition of width n_fast + n_slow.

    The forward map orders its output fast-first: the first n_fast entries
    are the fast coordinates y, the rest the slow coordinates x.
    """

    n_fast: int
    n_slow: int
    n_blocks: int = 1
    L: float = 2.0
    hidden: int = 10
    depth: int = 1
    d: int | None = None  # coupling split; defaults to ceil(width/2)
    first_orth: np.ndarray | None = field(default=None, compare=False)

    @property
    def width(self) -> int:
        return self.n_fast + self.n_slow

    def layer_configs(self) -> list[tuple[str, object]]:
        d = self.d if self.d is not None else (self.width + 1) // 2
        layers: list[tuple[str, object]] = []
        for k in range(self.n_blocks):
            fixed = self.first_orth if k == 0 else None
            layers.append((f"blat{k}", BLATConfig(self.width, self.width, self.L,
                                                  u_fixed=fixed)))
            layers.append((f"cpl{k}", CouplingConfig(self.width, d, self.L,
                                                     self.hidden, self.depth)))
        return layers

    def init(self, rng: np.random.Generator) -> dict:
        return {name: cfg.init(rng) for name, cfg in self.layer_configs()}


def inn_apply(cfg: INNConfig, p: dict, z, eps) -> Tensor:
    """Raw forward composition; output is the stacked (y, x) vector."""
    h = as_tensor(z)
    if h.shape[-1] != cfg.width:
        raise ValueError(f"inn input width {h.shape[-1]} != {cfg.width}")
    for name, lcfg in cfg.layer_configs():
        if isinstance(lcfg, BLATConfig):
            h = blat_forward(lcfg, p[name], h)
        else:
            h = coupling_forward(lcfg, p[name], h, eps)
    return h


def inn_forward(cfg: INNConfig, p: dict, z, eps) -> tuple[Tensor, Tensor]:
    """Transform into fast-slow coordinates; returns (y, x)."""
    out = inn_apply(cfg, p, z, eps)
    return out[..., : cfg.n_fast], out[..., cfg.n_fast :]


def inn_inverse(cfg: INNConfig, p: dict, y, x, eps) -> Tensor:
    """Map fast-slow coordinates back to the original state."""
    h = ad.concat([as_tensor(y), as_tensor(x)], axis=-1)
    for name, lcfg in reversed(cfg.layer_configs()):
        if isinstance(lcfg, BLATConfig):
            h = blat_inverse(lcfg, p[name], h)
        else:
            h = coupling_inverse(lcfg, p[name], h, eps)
    return h
