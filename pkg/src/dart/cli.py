"""Command-line entry point: ``dart precompute|render|fit|eval``."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .geometry import MeshError, build_direction_grid, load_mesh, subdivide
from .materials import COMPONENT_SETS, MaterialModel, init_np, init_p, resolve_components
from .metrics import average, compare
from .optim import FitConfig, LossWeights, Measurement, fit
from .precompute import precompute, reduce
from .spectral import SolverConfig
from .transport import ReceiverConfig, SourceConfig, render

CACHE_NAME = "operators.dartc"


class CliError(Exception):
    pass


@dataclass(frozen=True)
class SceneConfig:
    mesh: str = ""
    max_edge: float = 0.5
    n_ele: int = 12
    n_azi: int = 12
    K: int = 100
    M: int = 4096
    M_geometry: int = 10000
    n_ray: int = 10000
    T: int = 320
    gamma: float = 1e-3
    n_order: int = 40
    variant: str = "np"
    components: str = "all"
    alpha: float = 0.5
    shared: bool = False
    steps: int = 25000
    lr: float = 1e-2
    weight_decay: float = 1e-2
    n_validations: int = 25
    w_nmse: float = 1.0
    w_edc: float = 1.0
    w_object: float = 1.0
    w_symmetry: float = 1.0
    seed: int = 0
    output_dir: str = "."
    cache: str = ""
    manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    checkpoint: str = ""

    def solver(self) -> SolverConfig:
        return SolverConfig(self.T, self.gamma, self.n_order)

    def fit_config(self) -> FitConfig:
        return FitConfig(self.steps, self.lr, weight_decay=self.weight_decay,
                         n_validations=self.n_validations,
                         weights=LossWeights(self.w_nmse, self.w_edc, self.w_object, self.w_symmetry))


_PATH_KEYS = ("mesh", "output_dir", "cache", "manifest", "val_manifest", "test_manifest", "checkpoint")


def _convert(kind, value: str, key: str):
    try:
        if kind in (bool, "bool"):
            v = value.lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return v in ("true", "1", "yes")
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
        return value
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {value!r}") from None


def load_config(path) -> SceneConfig:
    if path is None:
        return SceneConfig()
    raw = io.read_config(path)
    known = {f.name: f.type for f in fields(SceneConfig)}
    base = Path(path).resolve().parent
    values = {}
    for k, v in raw.items():
        if k not in known:
            raise CliError(f"{path}: unknown config key {k!r}")
        values[k] = _convert(known[k], v, k)
        if k in _PATH_KEYS and values[k]:
            values[k] = str((base / values[k]).resolve())
    return SceneConfig(**values)


def _variant(cfg: SceneConfig, variant: str | None, components: str | None):
    v = (variant or cfg.variant).lower()
    comps = components or cfg.components
    if v.startswith("p-"):
        comps = v[2:]
        v = "p"
    if v not in ("np", "p"):
        raise CliError(f"unknown variant {v!r}")
    if comps not in COMPONENT_SETS:
        resolve_components(comps)
    return v, comps


def cache_path(cfg: SceneConfig) -> Path:
    env = os.environ.get("DART_CACHE_DIR")
    if env:
        return Path(env) / (Path(cfg.cache).name if cfg.cache else CACHE_NAME)
    if cfg.cache:
        return Path(cfg.cache)
    return Path(cfg.output_dir) / CACHE_NAME


class Outputs:
    """Tracks written files so a failing command leaves nothing behind."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def remove(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


# --------------------------------------------------------------------------


def cmd_precompute(cfg: SceneConfig, out: Outputs) -> int:
    if not cfg.mesh:
        raise CliError("config has no mesh path")
    if not Path(cfg.mesh).exists():
        raise CliError(f"mesh file not found: {cfg.mesh}")
    t0 = time.perf_counter()
    mesh = load_mesh(cfg.mesh)
    patches = subdivide(mesh, cfg.max_edge)
    grid = build_direction_grid(cfg.n_ele, cfg.n_azi)
    pre = precompute(patches, grid, cfg.K, cfg.M, cfg.M_geometry, cfg.seed)
    path = out.add(cache_path(cfg))
    io.save_precomputed(pre, path)
    pattern = np.any(pre.components() != 0, axis=0)
    red = reduce(pre.visibility, [], [], pattern, grid.n_dir)
    n_mat = int(sum(np.count_nonzero(pattern[np.ix_(b, b)]) for b in
                    (red.keep[s] % grid.n_dir for s in red.patch_slices(grid.n_dir).values())))
    print(f"patches          {patches.n_patches}")
    print(f"directions       {grid.n_dir}")
    print(f"radiances        {pre.n_rad}")
    print(f"retained         {red.n_reduced} ({red.retained_fraction:.3f} of all)")
    print(f"visibility nnz   {pre.visibility.nnz}")
    print(f"material nnz     {n_mat} (parametric pattern)")
    print(f"wall time        {time.perf_counter() - t0:.2f} s")
    print(f"cache            {path}")
    return 0


def _load_cache(cfg):
    path = cache_path(cfg)
    if not path.exists():
        raise CliError(f"operator cache not found: {path} (run 'dart precompute' first)")
    return io.load_precomputed(path)


def _model(cfg, pre, variant, components, checkpoint=None) -> MaterialModel:
    ckpt = checkpoint or cfg.checkpoint
    if ckpt:
        if not Path(ckpt).exists():
            raise CliError(f"checkpoint not found: {ckpt}")
        model = io.load_checkpoint(ckpt)
        if variant is not None and model.variant != variant:
            raise CliError(f"checkpoint variant {model.variant!r} does not match requested {variant!r}")
        if model.n_pat != pre.patches.n_patches or model.n_dir != pre.grid.n_dir:
            raise CliError("checkpoint does not match the cached scene")
        return model
    variant = variant or "np"
    block = pre.patches.group if cfg.shared else None
    if variant == "np":
        return init_np(pre.patches.n_patches, pre.grid, cfg.alpha, block)
    return init_p(pre.patches.n_patches, pre.grid, components, cfg.alpha, block)


def _pairs(cfg, args):
    if args.source or args.receiver:
        if not (args.source and args.receiver):
            raise CliError("--source and --receiver must be given together")
        s = [float(x) for x in args.source.split(",")]
        r = [float(x) for x in args.receiver.split(",")]
        o = [float(x) for x in args.orientation.split(",")] if args.orientation else [0.0, 0.0, 1.0]
        return [("pair0", SourceConfig(tuple(s), tuple(o), cfg.n_ray), ReceiverConfig(tuple(r), n_ray=cfg.n_ray), None)]
    manifest = args.manifest or cfg.test_manifest or cfg.manifest
    if not manifest:
        raise CliError("no pairs: give --source/--receiver or a manifest")
    if not Path(manifest).exists():
        raise CliError(f"manifest not found: {manifest}")
    return io.read_manifest(manifest, cfg.n_ray)


def cmd_render(cfg: SceneConfig, args, out: Outputs) -> int:
    from .oracle import echogram_oracle

    pre = _load_cache(cfg)
    variant = None
    if args.variant:
        variant, _ = _variant(cfg, args.variant, args.components)
    _, comps = _variant(cfg, args.variant, args.components)
    model = _model(cfg, pre, variant, comps, args.checkpoint)
    solver = cfg.solver()
    outdir = Path(args.output or cfg.output_dir)
    for k, (mid, src, rcv, _) in enumerate(_pairs(cfg, args)):
        res = render(pre, model, src, rcv, solver, cfg.seed, key=k)
        io.write_echogram_csv(res.energy, out.add(outdir / f"{mid}.csv"))
        if args.edc:
            io.write_edc_db(res.energy, out.add(outdir / f"{mid}.edc.csv"))
        msg = f"{mid}: total energy {res.energy.sum():.6g}"
        if args.oracle:
            ref = echogram_oracle(pre, model, src, rcv, solver, cfg.seed, key=k)
            io.write_echogram_csv(ref.energy, out.add(outdir / f"{mid}.oracle.csv"))
            gap = np.linalg.norm(res.energy - ref.energy) / max(np.linalg.norm(ref.energy), 1e-300)
            msg += f", oracle relative L2 gap {gap:.3e}"
        print(msg)
    return 0


def _measurements(path, cfg):
    if not path:
        return []
    if not Path(path).exists():
        raise CliError(f"manifest not found: {path}")
    rows = io.read_manifest(path, cfg.n_ray)
    out = []
    for mid, src, rcv, epath in rows:
        e = io.read_echogram(epath)
        if e.size < cfg.T:
            e = np.concatenate([e, np.zeros(cfg.T - e.size)])
        out.append(Measurement(src, rcv, e[:cfg.T], mid))
    return out


def cmd_fit(cfg: SceneConfig, args, out: Outputs) -> int:
    pre = _load_cache(cfg)
    variant, comps = _variant(cfg, args.variant, args.components)
    model = _model(cfg, pre, variant, comps, args.checkpoint)
    train = _measurements(args.manifest or cfg.manifest, cfg)
    if not train:
        raise CliError("fit needs a training manifest")
    val = _measurements(cfg.val_manifest, cfg)
    fc = cfg.fit_config()
    if args.steps is not None:
        fc = replace(fc, steps=args.steps)
    outdir = Path(args.output or cfg.output_dir)

    def progress(row):
        print(f"step {row['step']:>6}  lr {row['lr']:.2e}  total {row['total']:.5f}  val_l1 {row['val_l1']:.5g}")

    result = fit(pre, model, train, fc, cfg.solver(), val, cfg.seed, progress=progress)
    io.save_checkpoint(result.best, out.add(outdir / "best.ckpt"))
    io.save_checkpoint(result.final, out.add(outdir / "final.ckpt"))
    from .optim import write_log
    write_log(result.log, out.add(outdir / "train_log.csv"))
    io.write_alpha_csv(result.best, pre.patches, out.add(outdir / "alpha.csv"))
    print(f"best checkpoint at step {result.best_step}; outputs in {outdir}")
    return 0


def _baseline(train, src, rcv, k: int):
    keys = np.array([[*m.source.position, *m.receiver.position] for m in train])
    q = np.array([*src.position, *rcv.position])
    d = np.linalg.norm(keys - q, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    if k == 1 or d[order[0]] == 0:
        return train[order[0]].echogram
    w = 1.0 / d[order]
    return sum(wi * train[i].echogram for wi, i in zip(w, order)) / w.sum()


def cmd_eval(cfg: SceneConfig, args, out: Outputs) -> int:
    pre = _load_cache(cfg)
    variant = _variant(cfg, args.variant, args.components)[0] if args.variant else None
    _, comps = _variant(cfg, args.variant, args.components)
    model = _model(cfg, pre, variant, comps, args.checkpoint)
    test = _measurements(args.manifest or cfg.test_manifest, cfg)
    if not test:
        raise CliError("eval needs a test manifest")
    train = _measurements(cfg.manifest, cfg) if cfg.manifest else []
    methods = {"dart": lambda k, m: render(pre, model, m.source, m.receiver, cfg.solver(), cfg.seed, key=k).energy}
    if train:
        methods["nearest"] = lambda k, m: _baseline(train, m.source, m.receiver, 1)
        methods["linear"] = lambda k, m: _baseline(train, m.source, m.receiver, 2)
    path = out.add(Path(args.output or cfg.output_dir) / "metrics.csv")
    rows = {name: [] for name in methods}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "method", "L1", "T60", "EDT", "C50"])
        for k, m in enumerate(test):
            for name, fn in methods.items():
                d = compare(fn(k, m), m.echogram)
                rows[name].append(d)
                wr.writerow([m.id, name, *(repr(float(x)) for x in d.as_row())])
        for name, ds in rows.items():
            means, excluded = average(ds)
            wr.writerow(["mean", name, *(repr(float(x)) for x in means)])
            wr.writerow(["excluded", name, *(int(x) for x in excluded)])
            print(f"{name:8s} L1 {means[0]:.5g}  T60 {means[1]:.3g} %  EDT {means[2]:.4g} s  "
                  f"C50 {means[3]:.3g} dB  (undefined: {excluded.tolist()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dart", description="Room echogram simulation and material fitting.")
    ap.add_argument("command", choices=["precompute", "render", "fit", "eval"])
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--threads", type=int, help="worker threads for ray tracing")
    ap.add_argument("--oracle", action="store_true", help="render: also write the time-domain reference")
    ap.add_argument("--edc", action="store_true", help="render: also write the decay curve in dB")
    ap.add_argument("--variant", help="np, p, p-reflection-only or p-diffuse-only")
    ap.add_argument("--components", help="parametric components (set name or comma list)")
    ap.add_argument("--steps", type=int, help="fit: number of optimization steps")
    ap.add_argument("--manifest", help="measurement manifest (overrides the config)")
    ap.add_argument("--checkpoint", help="material checkpoint to load")
    ap.add_argument("--output", help="output directory (overrides the config)")
    ap.add_argument("--source", help="render: source position x,y,z")
    ap.add_argument("--orientation", help="render: source orientation x,y,z")
    ap.add_argument("--receiver", help="render: receiver position x,y,z")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Outputs()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            import numba
            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        if args.command == "precompute":
            return cmd_precompute(cfg, out)
        if args.command == "render":
            return cmd_render(cfg, args, out)
        if args.command == "fit":
            return cmd_fit(cfg, args, out)
        return cmd_eval(cfg, args, out)
    except (CliError, MeshError, io.FormatError, FileNotFoundError, ValueError, RuntimeError) as exc:
        out.remove()
        print(f"dart {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
