"""Stability-bearing pieces of the fast dynamics.

The Schur-form network maps the slow coordinate x to a block upper
triangular matrix T(x) whose diagonal 2x2 (and odd trailing 1x1) blocks are
parameterized so that every eigenvalue sits strictly left of the imaginary
axis, for any parameter values. The low-rank bilinear network provides the
quadratic term of the fast equation, with coefficient matrices produced by
a feed-forward net of (x, y, epsilon).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .layers import FFNConfig, eps_features, ffn_eval

HALF_PI = np.pi / 2.0


# ---------------------------------------------------------------------------
# block layout helpers


def schur_layout(n: int) -> tuple[int, bool, list[int]]:
    """(number of 2x2 blocks, has trailing scalar, block sizes)."""
    if n < 1:
        raise ValueError("matrix dimension must be positive")
    nb2, odd = divmod(n, 2)
    return nb2, bool(odd), [2] * nb2 + ([1] if odd else [])


def schur_param_count(n: int) -> int:
    """Raw parameters: 4 per 2x2 diagonal block, 1 per scalar block, plus
    every entry of the strictly upper off-diagonal blocks."""
    nb2, odd, sizes = schur_layout(n)
    off = (n * n - sum(s * s for s in sizes)) // 2
    return 4 * nb2 + (1 if odd else 0) + off


def restrict_block(r_bar, s_bar, th_bar, ph_bar, delta: float):
    """Map unconstrained block parameters onto the stable region.

    Returns (R, r, theta, phi) with R = -(|r_bar| + delta) e^{|R_bar|} so
    R < -delta and |R| > |r| strictly; delta = 0 recovers the unmodified
    map (which allows eigenvalues to touch the imaginary axis).
    """
    if delta < 0:
        raise ValueError("stability margin must be nonnegative")
    big_r = -(ad.absolute(s_bar) + delta) * ad.exp(ad.absolute(r_bar))
    theta = HALF_PI * ad.tanh(th_bar)
    return big_r, as_tensor(s_bar), theta, as_tensor(ph_bar)


def assemble_block(big_r, r, theta, phi) -> Tensor:
    """R * rotation(theta) + r * reflection(phi), shape (..., 2, 2)."""
    rv, sv = np.asarray(ad.value_of(big_r)), np.asarray(ad.value_of(r))
    if np.any(rv >= 0) or np.any(np.abs(rv) < np.abs(sv)) or \
            np.any(np.abs(ad.value_of(theta)) >= HALF_PI):
        raise ValueError("block parameters violate the stability restrictions")
    big_r, r = as_tensor(big_r), as_tensor(r)
    ct, st = ad.cos(theta), ad.sin(theta)
    cp, sp = ad.cos(phi), ad.sin(phi)
    a = big_r * ct + r * cp
    b = big_r * st + r * sp
    c = -big_r * st + r * sp
    d = big_r * ct - r * cp
    row0 = ad.stack([a, b], axis=-1)
    row1 = ad.stack([c, d], axis=-1)
    return ad.stack([row0, row1], axis=-2)


def block_eigenvalues(block: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues m +- sqrt(m^2 - p) of a (..., 2, 2) block."""
    m = 0.5 * (block[..., 0, 0] + block[..., 1, 1])
    p = block[..., 0, 0] * block[..., 1, 1] - block[..., 0, 1] * block[..., 1, 0]
    disc = np.asarray(m * m - p, dtype=complex)
    root = np.sqrt(disc)
    return np.stack([m + root, m - root], axis=-1)


@dataclass(frozen=True)
class SchurNetConfig:
    """Feed-forward net from x to the raw Schur parameters for T(x)."""

    n_slow: int
    n_fast: int
    hidden: tuple = (32,)
    delta: float = 1e-3
    init_eig: float = -0.5
    init_spread: float = 0.05  # |r_bar| at init; sets the eigenvalue pair split

    @property
    def ffn(self) -> FFNConfig:
        widths = (self.n_slow,) + self.hidden + (schur_param_count(self.n_fast),)
        return FFNConfig(widths, zero_init_last=True)

    def init(self, rng: np.random.Generator) -> dict:
        p = self.ffn.init(rng)
        nb2, odd, _ = schur_layout(self.n_fast)
        bias = p[f"b{len(self.ffn.widths) - 2}"]
        # biases chosen so T(x) at zero weights has eigenvalues near init_eig;
        # a small |r_bar| keeps the gradient of R w.r.t. r_bar well scaled
        r_bar0 = np.log(abs(self.init_eig) / (self.init_spread + self.delta))
        for i in range(nb2):
            bias[4 * i : 4 * i + 4] = (r_bar0, self.init_spread, 0.0, 0.0)
        if odd:
            bias[4 * nb2] = np.log(abs(self.init_eig))
        return p


def assemble_schur(raw, n: int, delta: float) -> Tensor:
    """Assemble (..., n, n) negative Schur form matrices from raw parameters.

    Layout of `raw` along the last axis: 4 entries per 2x2 diagonal block,
    then the trailing scalar parameter if n is odd, then the off-diagonal
    block entries row-major, upper blocks left to right.
    """
    raw = as_tensor(raw)
    if raw.shape[-1] != schur_param_count(n):
        raise ValueError(
            f"raw parameter vector has length {raw.shape[-1]}, "
            f"expected {schur_param_count(n)} for dimension {n}"
        )
    nb2, odd, sizes = schur_layout(n)
    batch = raw.shape[:-1]
    diag: list[Tensor] = []
    for i in range(nb2):
        params = restrict_block(raw[..., 4 * i], raw[..., 4 * i + 1],
                                raw[..., 4 * i + 2], raw[..., 4 * i + 3], delta)
        diag.append(assemble_block(*params))
    pos = 4 * nb2
    if odd:
        scalar = -ad.exp(raw[..., pos])
        diag.append(ad.reshape(scalar, batch + (1, 1)))
        pos += 1
    # off-diagonal blocks, copied verbatim
    offsets = np.cumsum([0] + sizes)
    rows = []
    for i, si in enumerate(sizes):
        row = []
        if offsets[i] > 0:
            row.append(Tensor(np.zeros(batch + (si, offsets[i]))))
        row.append(diag[i])
        for j in range(i + 1, len(sizes)):
            sj = sizes[j]
            blk = ad.reshape(raw[..., pos : pos + si * sj], batch + (si, sj))
            row.append(blk)
            pos += si * sj
        rows.append(ad.concat(row, axis=-1))
    return ad.concat(rows, axis=-2)


def schur_eigenvalues(t: np.ndarray) -> np.ndarray:
    """Eigenvalues of an assembled block upper triangular matrix via the
    per-block closed form; raises if the matrix is not in block form."""
    t = np.asarray(t, dtype=np.float64)
    n = t.shape[-1]
    _, _, sizes = schur_layout(n)
    offsets = np.cumsum([0] + sizes)
    mask = np.ones((n, n), dtype=bool)
    for off, s in zip(offsets, sizes):
        mask[off : off + s, off : off + s] = False
    mask = np.tril(mask)
    if np.any(np.abs(t[..., mask]) > 0):
        raise ValueError("matrix has entries below the diagonal blocks")
    eigs = []
    for off, s in zip(offsets, sizes):
        if s == 2:
            eigs.append(block_eigenvalues(t[..., off : off + 2, off : off + 2]))
        else:
            eigs.append(t[..., off : off + 1, off].astype(complex))
    return np.concatenate(eigs, axis=-1)


def schur_net(cfg: SchurNetConfig, p: dict, x) -> Tensor:
    """T(x): stable-by-construction block upper triangular matrix."""
    raw = ffn_eval(cfg.ffn, p, x)
    return assemble_schur(raw, cfg.n_fast, cfg.delta)


# ---------------------------------------------------------------------------
# low-rank bilinear network


def bilinear_apply(c, d, u, v) -> Tensor:
    """sum_r (C^(r) u) hadamard (D^(r) v).

    `c` has shape (..., R, n_out, n_u), `d` (..., R, n_out, n_v);
    `u`, `v` are (..., n_u) and (..., n_v). Bilinear in (u, v).
    """
    c, d, u, v = as_tensor(c), as_tensor(d), as_tensor(u), as_tensor(v)
    batch = u.shape[:-1]
    cu = ad.matmul(c, ad.reshape(u, batch + (1, u.shape[-1], 1)))
    dv = ad.matmul(d, ad.reshape(v, batch + (1, v.shape[-1], 1)))
    out = ad.tsum(cu * dv, axis=-3)
    return ad.reshape(out, batch + (out.shape[-2],))


@dataclass(frozen=True)
class BilinearNetConfig:
    """Coefficients C^(r), D^(r) of the quadratic fast term, as functions of
    (x, y, epsilon) through a feed-forward net."""

    n_slow: int
    n_fast: int
    rank: int = 1
    hidden: tuple = (32,)

    @property
    def ffn(self) -> FFNConfig:
        n_out = 2 * self.rank * self.n_fast * self.n_fast
        return FFNConfig((self.n_slow + self.n_fast + 2,) + self.hidden + (n_out,),
                         zero_init_last=True)

    def init(self, rng: np.random.Generator) -> dict:
        return self.ffn.init(rng)


def bilinear_coeffs(cfg: BilinearNetConfig, p: dict, x, y, eps) -> tuple[Tensor, Tensor]:
    x, y = as_tensor(x), as_tensor(y)
    batch = x.shape[:-1]
    inp = ad.concat([x, y, eps_features(eps, batch)], axis=-1)
    out = ffn_eval(cfg.ffn, p, inp)
    nf, r = cfg.n_fast, cfg.rank
    half = r * nf * nf
    c = ad.reshape(out[..., :half], batch + (r, nf, nf))
    d = ad.reshape(out[..., half:], batch + (r, nf, nf))
    return c, d


def bilinear_net(cfg: BilinearNetConfig, p: dict, x, y, eps) -> Tensor:
    """B(x, y, eps)(y, y); vanishes identically at y = 0."""
    c, d = bilinear_coeffs(cfg, p, x, y, eps)
    return bilinear_apply(c, d, y, y)
