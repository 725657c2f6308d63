"""Command-line surface: dataset generation, training, evaluation,
prediction, the attracting-manifold demo, and eigenvalue tables.

Also defines the on-disk run-config and checkpoint formats. Both are JSON;
checkpoints store every parameter array as decimal floats with 17
significant digits, which round-trip float64 exactly.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .dynamics import (FastSlowState, FenichelConfig, FenichelModel,
                       IntegrationConfig, IntegrationError, closure_predict,
                       fsnn_rollout, hybrid_rollout, ssp2_tableau, transform,
                       untransform)
from .systems import (SYSTEMS, Dataset, GenConfig, ReferenceSolverError,
                      gen_dataset, load_dataset, save_dataset)
from .training import (AdamState, TrainConfig, TrainingDiverged, eval_eigenvalues,
                       eval_manifold_error, greedy_match, history_csv, train)


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, in one self-describing JSON document.

    Serialized form includes every default so the output metadata fully
    documents the run.
    """

    system: str
    n_slow: int
    n_fast: int
    # model
    inn_blocks: int = 2
    inn_hidden: int = 16
    inn_depth: int = 1
    L: float = 5.0
    schur_hidden: tuple = (16,)
    delta: float = 1e-3
    init_eig: float = -0.5
    bilinear_rank: int = 1
    bilinear_hidden: tuple = (16,)
    c_hidden: tuple = (16,)
    g_hidden: tuple = (16,)
    # integration
    dt_fast: float = 0.25
    dt_slow: float = 25.0
    tau_y: float = 1e-8
    max_steps: int = 1_000_000
    # data generation (forwarded to GenConfig)
    gen: dict = field(default_factory=dict)
    # training
    steps: int = 1000
    batch_fast: int = 32
    batch_slow: int = 32
    batch_manifold: int = 128
    lr: float = 1e-3
    lr_floor: float = 1e-5
    weights: tuple = (1.0, 1.0, 1.0, 1.0)
    divergence_factor: float = 1e6
    snapshot_every: int = 0  # 0 disables periodic checkpoints
    # bookkeeping
    seed: int = 0
    dataset_path: str | None = None
    checkpoint_path: str | None = None
    resume: str | None = None
    ic_path: str | None = None
    eps: float = 1e-2
    t_end: float = 4.0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValidationError(f"unknown system {self.system!r}; "
                                  f"choose from {sorted(SYSTEMS)}")
        spec = SYSTEMS[self.system]
        if self.n_slow + self.n_fast != spec.dim:
            raise ValidationError(
                f"n_slow + n_fast = {self.n_slow + self.n_fast} does not match "
                f"system dimension {spec.dim}")
        if self.n_fast != spec.n_fast:
            raise ValidationError(
                f"n_fast = {self.n_fast} does not match the system's "
                f"{spec.n_fast} fast components")

    @property
    def spec(self):
        return SYSTEMS[self.system]

    def model_config(self) -> FenichelConfig:
        return FenichelConfig(
            n_fast=self.n_fast, n_slow=self.n_slow, inn_blocks=self.inn_blocks,
            inn_hidden=self.inn_hidden, inn_depth=self.inn_depth, L=self.L,
            schur_hidden=tuple(self.schur_hidden), delta=self.delta,
            init_eig=self.init_eig, bilinear_rank=self.bilinear_rank,
            bilinear_hidden=tuple(self.bilinear_hidden),
            c_hidden=tuple(self.c_hidden), g_hidden=tuple(self.g_hidden),
            first_orth=self.spec.split_permutation())

    def gen_config(self) -> GenConfig:
        kwargs = dict(self.gen)
        kwargs.setdefault("system", self.system)
        if kwargs["system"] != self.system:
            raise ValidationError("gen.system disagrees with top-level system")
        if "eps_range" in kwargs:
            kwargs["eps_range"] = tuple(kwargs["eps_range"])
        return GenConfig(**kwargs)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            steps=self.steps, batch_fast=self.batch_fast,
            batch_slow=self.batch_slow, batch_manifold=self.batch_manifold,
            lr=self.lr, lr_floor=self.lr_floor,
            seed=self.seed if seed is None else seed,
            weights=tuple(self.weights),
            divergence_factor=self.divergence_factor)

    def integration_config(self) -> IntegrationConfig:
        return IntegrationConfig(dt_fast=self.dt_fast, dt_slow=self.dt_slow,
                                 tau_y=self.tau_y, max_steps=self.max_steps)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        kwargs = dict(d)
        for k in ("schur_hidden", "bilinear_hidden", "c_hidden", "g_hidden",
                  "weights"):
            if k in kwargs:
                kwargs[k] = tuple(kwargs[k])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}")
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# checkpoint format

CHECKPOINT_FORMAT = "fsnn-checkpoint-1"


def _encode_tree(tree: dict) -> dict:
    """ParamTree -> {dotted path: {shape, data}} with 17-significant-digit
    decimal floats (exact for float64)."""
    out = {}
    for path, leaf in ad.tree_flatten(tree):
        arr = np.asarray(ad.value_of(leaf), dtype=np.float64)
        out[path] = {"shape": list(arr.shape),
                     "data": [format(v, ".17g") for v in arr.ravel().tolist()]}
    return out


def _decode_tree(enc: dict) -> dict:
    items = []
    for path, rec in enc.items():
        arr = np.array([float(s) for s in rec["data"]], dtype=np.float64)
        items.append((path, arr.reshape(rec["shape"])))
    return ad.tree_unflatten(sorted(items))


def save_checkpoint(path: str, cfg: RunConfig, model: FenichelModel,
                    step: int, opt: AdamState | None = None) -> None:
    doc = {"format": CHECKPOINT_FORMAT, "step": step,
           "config": cfg.to_dict(), "params": _encode_tree(model.params)}
    if opt is not None:
        doc["opt"] = {"step": opt.step, "lr": format(opt.lr, ".17g"),
                      "beta1": format(opt.beta1, ".17g"),
                      "beta2": format(opt.beta2, ".17g"),
                      "eps_adam": format(opt.eps_adam, ".17g"),
                      "m": _encode_tree(opt.m), "v": _encode_tree(opt.v)}
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Returns (RunConfig, FenichelModel, step, AdamState | None)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"checkpoint is not valid JSON: {e}")
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unrecognized checkpoint format "
                              f"{doc.get('format')!r}")
    cfg = RunConfig.from_dict(doc["config"])
    model = FenichelModel(cfg.model_config(), _decode_tree(doc["params"]))
    opt = None
    if "opt" in doc:
        o = doc["opt"]
        opt = AdamState(m=_decode_tree(o["m"]), v=_decode_tree(o["v"]),
                        step=int(o["step"]), lr=float(o["lr"]),
                        beta1=float(o["beta1"]), beta2=float(o["beta2"]),
                        eps_adam=float(o["eps_adam"]))
    return cfg, model, int(doc["step"]), opt


# ---------------------------------------------------------------------------
# commands


def _require(value, what: str):
    if value is None:
        raise ValidationError(f"missing {what}")
    return value


def cmd_gen_data(cfg: RunConfig, seed: int, out: str, workers: int = 1) -> int:
    gcfg = cfg.gen_config()
    ds = gen_dataset(gcfg, seed=seed)
    save_dataset(ds, out)
    fast = len(ds.subset("fast"))
    slow = len(ds.subset("slow"))
    eps_all = [t.eps for t in ds.trajectories] + [e for _, e in ds.manifold_points]
    print(f"wrote {out}: system={ds.system} trajectories={len(ds.trajectories)} "
          f"(fast={fast}, slow={slow}) manifold_points={len(ds.manifold_points)}")
    if eps_all:
        print(f"eps range: [{min(eps_all):.3e}, {max(eps_all):.3e}]")
    return 0


def _load_run_dataset(cfg: RunConfig) -> Dataset:
    path = _require(cfg.dataset_path, "dataset_path in config")
    try:
        ds = load_dataset(path)
    except FileNotFoundError:
        raise ValidationError(f"dataset not found: {path}")
    if ds.system != cfg.system:
        raise ValidationError(f"dataset system {ds.system!r} does not match "
                              f"config system {cfg.system!r}")
    for traj in ds.trajectories[:1]:
        if traj.z.shape[-1] != cfg.n_slow + cfg.n_fast:
            raise ValidationError("dataset dimension does not match model dims")
    return ds


def cmd_train(cfg: RunConfig, seed: int, out: str, workers: int = 1) -> int:
    ds = _load_run_dataset(cfg)
    step0, opt = 0, None
    if cfg.resume:
        prev_cfg, model, step0, opt = load_checkpoint(cfg.resume)
        if prev_cfg.system != cfg.system:
            raise ValidationError("resume checkpoint is for a different system")
        print(f"resuming from {cfg.resume} at step {step0}")
    else:
        model = FenichelModel.init(cfg.model_config(),
                                   np.random.default_rng(seed))
    tcfg = cfg.train_config(seed=seed)
    csv_path = out + ".loss.csv"

    def snapshot(step, breakdown, m):
        if cfg.snapshot_every and (step + 1) % cfg.snapshot_every == 0:
            save_checkpoint(f"{out}.step{step0 + step + 1}", cfg, m,
                            step0 + step + 1)

    t0 = time.time()
    try:
        model, history, opt = train(model, ds, tcfg, callback=snapshot, opt=opt)
    except TrainingDiverged as e:
        if e.model is not None:
            save_checkpoint(out, cfg, e.model, step0 + len(e.history), e.opt)
            with open(csv_path, "w") as f:
                f.write(history_csv(e.history))
            print(f"diverged; last-good checkpoint saved to {out}", file=sys.stderr)
        raise
    save_checkpoint(out, cfg, model, step0 + tcfg.steps, opt)
    with open(csv_path, "w") as f:
        f.write(history_csv(history))
    first = history[0][1].total if history else float("nan")
    last = history[-1][1].total if history else float("nan")
    print(f"trained {tcfg.steps} steps in {time.time() - t0:.1f}s; "
          f"loss {first:.4e} -> {last:.4e}")
    print(f"checkpoint: {out}\nloss csv: {csv_path}")
    return 0


def eigenvalue_table(model: FenichelModel, cfg: RunConfig,
                     probe_x: np.ndarray) -> str:
    """Plain-text table of ground-truth vs learned fast eigenvalues,
    greedily paired; or a notice when no ground truth is known."""
    spec = cfg.spec
    if spec.fast_eigs is None:
        return (f"eigenvalue table omitted: no analytic fast eigenvalues "
                f"known for system {cfg.system!r}\n")
    ref = np.asarray(spec.fast_eigs(np.zeros(spec.dim)), dtype=complex)
    res = eval_eigenvalues(model, probe_x[None], reference=ref)
    eigs = list(res["eigenvalues"][0])
    lines = [f"{'ground truth':>24} {'model':>24} {'abs error':>12}"]
    for r in ref:
        j = int(np.argmin([abs(v - r) for v in eigs]))
        v = eigs.pop(j)
        lines.append(f"{_fmt_c(r):>24} {_fmt_c(v):>24} {abs(v - r):12.4e}")
    lines.append(f"max abs error: {res['max_error']:.4e}")
    return "\n".join(lines) + "\n"


def _fmt_c(v: complex) -> str:
    v = complex(v)
    if v.imag == 0:
        return f"{v.real:.6f}"
    return f"{v.real:.6f}{v.imag:+.6f}j"


def cmd_eval(cfg: RunConfig, seed: int, out: str, workers: int = 1) -> int:
    ckpt_path = _require(cfg.checkpoint_path, "checkpoint_path in config")
    _, model, step, _ = load_checkpoint(ckpt_path)
    ds = _load_run_dataset(cfg)
    tab = ssp2_tableau()

    # probe point for the eigenvalue table: x-image of the first manifold
    # sample (or of a zero state if none)
    if ds.manifold_points:
        z_probe, eps_probe = ds.manifold_points[0]
    else:
        z_probe, eps_probe = np.zeros(cfg.spec.dim), 0.0
    with ad.no_grad():
        _, x_probe = transform(model, Tensor(np.asarray(z_probe)), eps_probe)
    table = eigenvalue_table(model, cfg, x_probe.value)

    # per-trajectory error vs time in original / fast / slow coordinates
    rows = ["traj,scale,time,err_z,err_y,err_x"]
    with ad.no_grad():
        for i, traj in enumerate(ds.trajectories):
            yd, xd = transform(model, Tensor(traj.z), traj.eps)
            if traj.scale == "fast":
                _, _, zs = fsnn_rollout(model, traj.z[0], traj.eps, traj.t, tab)
            else:
                zs = closure_predict(model, traj.z[0], traj.eps, traj.t, tab)
            ym, xm = transform(model, zs, traj.eps)
            ez = np.linalg.norm(zs.value - traj.z, axis=-1)
            ey = np.linalg.norm(ym.value - yd.value, axis=-1)
            ex = np.linalg.norm(xm.value - xd.value, axis=-1)
            for n, t in enumerate(traj.t):
                rows.append(f"{i},{traj.scale},{t:.17g},{ez[n]:.17g},"
                            f"{ey[n]:.17g},{ex[n]:.17g}")
    csv_path = out + ".errors.csv"
    with open(csv_path, "w") as f:
        f.write("\n".join(rows) + "\n")

    # manifold statistics: ||y|| of the transformed manifold points
    man_lines = ["manifold ||y|| statistics: no manifold points in dataset"]
    if ds.manifold_points:
        with ad.no_grad():
            norms = []
            for z, e in ds.manifold_points:
                y, _ = transform(model, Tensor(np.asarray(z)), e)
                norms.append(float(np.linalg.norm(y.value)))
        norms = np.array(norms)
        man_lines = ["manifold ||y|| statistics:",
                     f"  n={len(norms)} mean={norms.mean():.4e} "
                     f"max={norms.max():.4e} p50={np.percentile(norms, 50):.4e} "
                     f"p90={np.percentile(norms, 90):.4e}"]

    report_path = out + ".report.txt"
    with open(report_path, "w") as f:
        f.write(f"evaluation of {ckpt_path} (step {step}) on "
                f"{cfg.dataset_path}\n\n")
        f.write(table + "\n")
        f.write("\n".join(man_lines) + "\n")
        f.write(f"\nper-trajectory errors: {csv_path}\n")
    print(open(report_path).read())
    print(f"report: {report_path}")
    return 0


def _load_ic(path: str) -> tuple[np.ndarray, float, np.ndarray | None, float | None]:
    try:
        with open(path) as f:
            d = json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"initial-condition file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"initial-condition file is not valid JSON: {e}")
    if "z0" not in d:
        raise ValidationError("initial-condition file must contain 'z0'")
    z0 = np.asarray(d["z0"], dtype=np.float64)
    eps = float(d.get("eps", 1e-2))
    times = np.asarray(d["times"], float) if "times" in d else None
    t_end = float(d["t_end"]) if "t_end" in d else None
    return z0, eps, times, t_end


def _traj_csv(times: np.ndarray, zs: np.ndarray) -> str:
    dim = zs.shape[-1]
    lines = ["t," + ",".join(f"z{i}" for i in range(dim))]
    for t, z in zip(times, zs):
        lines.append(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in z))
    return "\n".join(lines) + "\n"


def cmd_predict(cfg: RunConfig, seed: int, out: str, mode: str,
                workers: int = 1) -> int:
    if mode not in ("fast", "slow", "hybrid"):
        raise ValidationError(f"unknown mode {mode!r}; use fast|slow|hybrid")
    ckpt_path = _require(cfg.checkpoint_path, "checkpoint_path in config")
    _, model, _, _ = load_checkpoint(ckpt_path)
    ic_path = _require(cfg.ic_path, "ic_path in config")
    z0, eps, times, t_end = _load_ic(ic_path)
    if z0.shape[-1] != cfg.n_slow + cfg.n_fast:
        raise ValidationError(f"initial condition dimension {z0.shape[-1]} "
                              f"does not match model dimension "
                              f"{cfg.n_slow + cfg.n_fast}")
    if t_end is None:
        t_end = cfg.t_end
    tab = ssp2_tableau()
    meta = {"mode": mode, "eps": eps, "checkpoint": ckpt_path}
    with ad.no_grad():
        if mode == "hybrid":
            state = _hybrid_ic(model, z0, eps)
            ts, ys, xs, switch = hybrid_rollout(model, state,
                                                cfg.integration_config(),
                                                t_end, tab)
            zs = np.stack([untransform(model, Tensor(y), Tensor(x), eps).value
                           for y, x in zip(ys, xs)])
            meta["switch_index"] = switch
            meta["switch_time"] = float(ts[switch])
        else:
            dt = cfg.dt_fast if mode == "fast" else cfg.dt_slow
            if times is None:
                if t_end < 0 and mode != "slow":
                    raise ValidationError(
                        "negative horizons are only meaningful in slow mode")
                n = max(int(round(abs(t_end) / dt)), 0)
                times = np.sign(t_end) * dt * np.arange(n + 1)
            ts = np.asarray(times, float)
            if mode == "fast":
                _, _, zs = fsnn_rollout(model, z0, eps, ts, tab)
            else:
                zs = closure_predict(model, z0, eps, ts, tab)
            zs = zs.value
            meta["n_steps"] = len(ts) - 1
    with open(out, "w") as f:
        f.write("# " + json.dumps(meta) + "\n")
        f.write(_traj_csv(ts, zs))
    print(f"wrote {out}: mode={mode} steps={len(ts) - 1}")
    return 0


def _hybrid_ic(model: FenichelModel, z0: np.ndarray, eps: float) -> FastSlowState:
    with ad.no_grad():
        y, x = transform(model, Tensor(z0), eps)
    return FastSlowState(x=x.value, y=y.value, eps=eps, t=0.0)


def demo_manifold_data(seed: int, n_models: int = 3, n_ic: int = 100,
                       eps: float = 0.01, t_end: float = 4.0,
                       dt: float = 0.02, init_eig: float = -2.5):
    """Random 1+1-dimensional models: standard-normal initial conditions
    integrated to t_end, plus the learned manifold curve z = h^{-1}(0, x).

    Returns a list of dicts with keys model, starts, ends, curve (curve is
    an (n_grid, 2) array of full-state points with y = 0).
    """
    tab = ssp2_tableau()
    out = []
    for k in range(n_models):
        rng = np.random.default_rng(np.random.Philox(key=[seed, k]))
        cfg = FenichelConfig(n_fast=1, n_slow=1, inn_blocks=2, inn_hidden=8,
                             L=2.0, init_eig=init_eig)
        model = FenichelModel.init(cfg, rng)
        z0 = rng.normal(size=(n_ic, 2))
        times = dt * np.arange(int(round(t_end / dt)) + 1)
        with ad.no_grad():
            _, _, zs = fsnn_rollout(model, z0, eps, times, tab)
            ends = zs.value[-1]
            # manifold curve over the x-range the endpoints land on
            _, x_end = transform(model, Tensor(ends), eps)
            lo, hi = x_end.value.min() - 1.0, x_end.value.max() + 1.0
            x_grid = np.linspace(lo, hi, 2001)[:, None]
            curve = untransform(model, Tensor(np.zeros_like(x_grid)),
                                Tensor(x_grid), eps).value
        out.append({"model": k, "starts": z0, "ends": ends, "curve": curve})
    return out


def endpoint_curve_distance(ends: np.ndarray, curve: np.ndarray) -> float:
    """Sup over endpoints of the distance to the polyline curve."""
    a, b = curve[:-1], curve[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=-1), 1e-300)
    dists = []
    for p in ends:
        ap = p[None] - a
        s = np.clip((ap * ab).sum(axis=-1) / denom, 0.0, 1.0)
        proj = a + s[:, None] * ab
        dists.append(np.linalg.norm(p[None] - proj, axis=-1).min())
    return float(np.max(dists))


def cmd_demo_manifold(seed: int, out: str, workers: int = 1) -> int:
    results = demo_manifold_data(seed)
    lines = ["model,kind,index,z0,z1"]
    for res in results:
        k = res["model"]
        for name in ("starts", "ends", "curve"):
            for i, z in enumerate(res[name]):
                kind = name.rstrip("s") if name != "starts" else "start"
                lines.append(f"{k},{kind},{i},{z[0]:.17g},{z[1]:.17g}")
    with open(out, "w") as f:
        f.write("\n".join(lines) + "\n")
    sup = max(endpoint_curve_distance(r["ends"], r["curve"]) for r in results)
    print(f"wrote {out}: 3 models x 100 trajectories to t=4")
    print(f"sup endpoint distance to manifold curve: {sup:.3e}")
    return 0


def cmd_eig_table(cfg: RunConfig, seed: int, out: str | None,
                  workers: int = 1) -> int:
    ckpt_path = _require(cfg.checkpoint_path, "checkpoint_path in config")
    _, model, _, _ = load_checkpoint(ckpt_path)
    spec = cfg.spec
    rng = np.random.default_rng(seed)
    z_probe = spec.sample_manifold(rng)
    with ad.no_grad():
        _, x_probe = transform(model, Tensor(z_probe), 0.0)
    table = eigenvalue_table(model, cfg, x_probe.value)
    if out:
        with open(out, "w") as f:
            f.write(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fastslow",
        description="Fast-slow neural network: data, training, prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, needs_config=True, needs_out=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=needs_config,
                        help="path to a JSON run config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", required=needs_out, help="output path prefix")
        sp.add_argument("--workers", type=int, default=1,
                        help="max worker count (results are independent of it)")
        sp.add_argument("--mode", default="fast",
                        choices=("fast", "slow", "hybrid"),
                        help="integration mode (predict only)")
        return sp

    add("gen-data", "generate a dataset from a run config")
    add("train", "train a model on a generated dataset")
    add("eval", "evaluate a checkpoint against a dataset")
    add("predict", "integrate a checkpointed model from an initial condition")
    add("demo-manifold", "sample endpoint clouds of random 1+1 models",
        needs_config=False)
    add("eig-table", "print ground-truth vs learned fast eigenvalues",
        needs_config=True, needs_out=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else None
        seed = args.seed if args.seed is not None else \
            (cfg.seed if cfg else 0)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, seed, args.out, args.workers)
        if args.command == "train":
            return cmd_train(cfg, seed, args.out, args.workers)
        if args.command == "eval":
            return cmd_eval(cfg, seed, args.out, args.workers)
        if args.command == "predict":
            return cmd_predict(cfg, seed, args.out, args.mode, args.workers)
        if args.command == "demo-manifold":
            return cmd_demo_manifold(seed, args.out, args.workers)
        if args.command == "eig-table":
            return cmd_eig_table(cfg, seed, args.out, args.workers)
        raise ValidationError(f"unknown command {args.command!r}")
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NonFiniteError, IntegrationError, TrainingDiverged,
            ReferenceSolverError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
