"""Command-line pipeline: synth -> fit -> ortho -> extend -> edit/traverse -> eval, plus train/ablate/metrics.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .axes import RESIDUAL, MODES, LatentDataset, build_bank, extend_axis
from .editing import apply_edit, traverse
from .errors import TrainingDiverged, ValidationError
from .fileio import (
    read_bank, read_dataset, read_image, read_json, read_world, write_bank, write_dataset,
    write_image, write_json, write_world, atomic_write,
)
from .losses import PIXEL_KINDS, FeaturePyramidSpec, PixelLossKind, reconstruct
from .toyworld import decode, make_world, sample_dataset, training_images
from .trainer import OptimizerConfig, train_encoder

ABLATE_ORDER = ("log_cosh", "mse", "mae", "ms_ssim_mse")


def derive_seed(master: int, stage: str) -> int:
    """Per-stage seed from the master seed and a stage label."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _names(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _floats(text):
    return [float(s) for s in _names(text)]


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _echo(report: dict, args: dict, master_seed):
    report = dict(report)
    report["config"] = args
    report["master_seed"] = master_seed
    return report


# RunConfig

@dataclass
class RunConfig:
    p: int = 64
    k: int = 10
    rho: float = 0.5
    noise_sigma: float = 0.01
    img_h: int = 64
    img_w: int = 64
    names: list | None = None
    n: int = 4000
    base: list = field(default_factory=lambda: ["natural", "happy", "angry", "fear", "sad", "surprise"])
    extensions: list = field(default_factory=lambda: ["beard", "mouth", "eyebrow", "eye"])
    mode: str = RESIDUAL
    edit_range: tuple = (-3.0, 3.0)
    edit_steps: int = 7
    trials: int = 100
    alpha: float = 6.0
    loss_kind: str = "ms_ssim_mse"
    optimizer: dict = field(default_factory=dict)
    out_dir: str = "run_out"
    master_seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown RunConfig fields {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self):
        names = self.names or make_world(self.p, self.k, self.rho, seed=0).names
        missing = [n for n in list(self.base) + list(self.extensions) if n not in names]
        if missing:
            raise ValidationError(f"RunConfig references unknown attributes {missing}")
        if set(self.base) & set(self.extensions):
            raise ValidationError("base and extension attribute lists overlap")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.loss_kind not in PIXEL_KINDS:
            raise ValidationError(f"loss_kind must be one of {PIXEL_KINDS}")
        try:
            OptimizerConfig(**self.optimizer)
        except TypeError as exc:
            raise ValidationError(f"bad optimizer settings: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["edit_range"] = list(self.edit_range)
        return d


# subcommands

def cmd_synth(args):
    out = _out_dir(args.out)
    world = make_world(args.p, args.k, args.rho, args.noise, args.img_h, args.img_w,
                       seed=derive_seed(args.seed, "world"), names=_names(args.names) or None)
    ds = sample_dataset(world, args.n, derive_seed(args.seed, "dataset"))
    write_world(os.path.join(out, "world.json"), world)
    write_dataset(os.path.join(out, "dataset.csv"), ds)
    report = _echo({"world": world.params, "n": ds.n}, vars_of(args), args.seed)
    write_json(os.path.join(out, "synth_report.json"), report)
    print(f"world p={world.p} k={world.k} rho={world.rho} -> {out}/world.json; {ds.n} samples -> {out}/dataset.csv")
    return 0


def _fit_report(bank):
    return {
        "axes": [
            {"name": a.name, "bias": a.bias, "rss": a.rss, "r_squared": a.r_squared,
             "n_samples": a.n_samples, "rank_deficient": a.rank_deficient}
            for a in bank.base_raw
        ]
    }


def cmd_fit(args):
    ds = read_dataset(args.data)
    bank = build_bank(ds, _names(args.base))
    write_bank(args.out, bank)
    for a in bank.base_raw:
        flag = " (rank deficient)" if a.rank_deficient else ""
        print(f"{a.name:>12s}  r2={a.r_squared:.6f}  bias={a.bias:+.6f}{flag}")
    if args.report:
        write_json(args.report, _echo(_fit_report(bank), vars_of(args), None))
    return 0


def gram_report(bank):
    B = np.vstack(bank.base_ortho)
    G = B @ B.T
    R = np.vstack([a.direction for a in bank.base_raw])
    return {
        "names": bank.base_names,
        "gram": G,
        "max_deviation": float(np.max(np.abs(G - np.eye(len(B))))),
        "raw_cosines": R @ R.T,
    }


def cmd_ortho(args):
    bank = read_bank(args.bank)
    rep = gram_report(bank)
    print("raw fitted-axis cosines:")
    for name, row in zip(rep["names"], rep["raw_cosines"]):
        print(f"{name:>12s} " + " ".join(f"{v:+.4f}" for v in row))
    print(f"orthonormalized Gram max |G - I| = {rep['max_deviation']:.3e}")
    if args.report:
        write_json(args.report, _echo(rep, vars_of(args), None))
    return 0


def cmd_extend(args):
    bank = read_bank(args.bank)
    ds = read_dataset(args.data)
    weights = _floats(args.weights) or None
    for name in _names(args.names):
        bank = extend_axis(bank, ds, name, mode=args.mode, weights=weights)
        ext = bank.extensions[-1]
        leak = float(np.max(np.abs(np.vstack(bank.base_ortho) @ ext.d_out)))
        print(f"{name:>12s}  mode={ext.mode}  max |e_i . d_out| = {leak:.3e}")
    write_bank(args.out, bank)
    return 0


def _latent_rows(path, rows):
    ds = read_dataset(path)
    for r in rows:
        if not 0 <= r < ds.n:
            raise ValidationError(f"row {r} out of range for {ds.n} samples")
    return ds.latents[rows]


def _write_latents(path, Z):
    write_dataset(path, LatentDataset(np.asarray(Z), {}))


def cmd_edit(args):
    bank = read_bank(args.bank)
    out = _out_dir(args.out)
    Z = _latent_rows(args.data, [args.row])
    z2 = apply_edit(Z[0], bank, args.axis, args.alpha, raw=args.raw)
    _write_latents(os.path.join(out, "edited.csv"), [Z[0], z2])
    if args.world:
        world = read_world(args.world)
        write_image(os.path.join(out, "before.pgm"), decode(world, Z[0], clamp=True))
        write_image(os.path.join(out, "after.pgm"), decode(world, z2, clamp=True))
    print(f"edited row {args.row} along {args.axis!r} by {args.alpha} -> {out}")
    return 0


def cmd_traverse(args):
    bank = read_bank(args.bank)
    out = _out_dir(args.out)
    Z = _latent_rows(args.data, [args.row])
    frames = traverse(Z[0], bank, args.axis, args.start, args.end, args.steps, raw=args.raw)
    _write_latents(os.path.join(out, "traversal.csv"), frames)
    if args.world:
        world = read_world(args.world)
        for i, z in enumerate(frames):
            write_image(os.path.join(out, f"frame_{i:03d}.pgm"), decode(world, z, clamp=True))
    print(f"{len(frames)} frames along {args.axis!r} -> {out}")
    return 0


def evaluate_bank(world, bank, trials, alpha, seed):
    """Flip accuracy and leakage for every bank axis, decoupled vs raw."""
    rows = {"names": bank.names, "ortho": [], "raw": [], "ortho_leakage": [], "raw_leakage": []}
    for i, name in enumerate(bank.names):
        s = derive_seed(seed, f"eval:{i}")
        o = metrics.flip_accuracy(world, bank, name, trials, alpha, s)
        r = metrics.flip_accuracy(world, bank, name, trials, alpha, s, raw=True)
        rows["ortho"].append(o.accuracy)
        rows["raw"].append(r.accuracy)
        rows["ortho_leakage"].append(o.mean_leakage)
        rows["raw_leakage"].append(r.mean_leakage)
    return rows


def format_eval_table(rows) -> str:
    names = rows["names"]
    lines = ["| axes | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for label, key, fmt in (("decoupled accuracy", "ortho", "{:.2f}"), ("raw accuracy", "raw", "{:.2f}"),
                            ("decoupled leakage", "ortho_leakage", "{:.4f}"),
                            ("raw leakage", "raw_leakage", "{:.4f}")):
        lines.append(f"| {label} | " + " | ".join(fmt.format(v) for v in rows[key]) + " |")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    world = read_world(args.world)
    bank = read_bank(args.bank)
    rows = evaluate_bank(world, bank, args.trials, args.alpha, args.seed)
    table = format_eval_table(rows)
    print(table, end="")
    if args.out:
        out = _out_dir(args.out)
        write_json(os.path.join(out, "eval.json"), _echo(rows, vars_of(args), args.seed))
        atomic_write(os.path.join(out, "eval.md"), table.encode())
    return 0


def _world_from_args(args):
    if args.world:
        return read_world(args.world)
    return make_world(args.p, args.k, 0.0, 0.0, args.img_size, args.img_size, seed=derive_seed(args.seed, "world"))


def cmd_train(args):
    world = _world_from_args(args)
    images = training_images(world, args.images, derive_seed(args.seed, "train-images"))
    cfg = OptimizerConfig(max_epochs=args.epochs, lr0=args.lr, halve_every=args.halve_every,
                          batch=args.batch, seed=derive_seed(args.seed, "encoder"))
    spec = FeaturePyramidSpec(seed=derive_seed(args.seed, "pyramid"))
    rep = train_encoder(world, spec, PixelLossKind(args.kind), images, cfg, workers=args.workers)
    out = _out_dir(args.out)
    write_image(os.path.join(out, "encoder.f64"), rep.encoder, "f64raw")
    write_json(os.path.join(out, "train_report.json"),
               _echo({"losses": rep.losses, "final_loss": rep.final_loss, "epochs": rep.epochs},
                     vars_of(args), args.seed))
    print(f"{rep.epochs} epochs: loss {rep.losses[0]:.6g} -> {rep.final_loss:.6g} ({rep.wall_time:.1f} s)")
    return 0


def run_ablation(world, n_train, n_test, epochs, seed):
    """Train one encoder per pixel-loss kind and score held-out reconstructions."""
    train = training_images(world, n_train, derive_seed(seed, "ablate-train"))
    test = training_images(world, n_test, derive_seed(seed, "ablate-test"))
    D = world.decoder_matrix()
    spec = FeaturePyramidSpec(seed=derive_seed(seed, "pyramid"))
    cfg = OptimizerConfig(max_epochs=epochs, seed=derive_seed(seed, "encoder"))
    rows = []
    for kind in ABLATE_ORDER:
        rep = train_encoder(world, spec, PixelLossKind(kind), train, cfg)
        rec = reconstruct(D, rep.encoder, test)
        scores = [metrics.psnr(a, b) for a, b in zip(test, rec)]
        rows.append({
            "loss": kind,
            "psnr": float(np.mean(scores)),
            "min_psnr": float(min(scores)),
            "ssim": float(np.mean([metrics.ssim(a, b) for a, b in zip(test, rec)])),
            "final_train_loss": rep.final_loss,
        })
    return rows


ABLATE_LABELS = {"log_cosh": "Log-Cosh", "mse": "MSE", "mae": "MAE", "ms_ssim_mse": "MS-SSIM+MSE"}


def format_ablation(rows) -> str:
    lines = ["| Loss Function | PSNR | SSIM |", "|---|---|---|"]
    for r in rows:
        lines.append(f"| {ABLATE_LABELS[r['loss']]} | {r['psnr']:.2f} | {r['ssim']:.2f} |")
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    world = _world_from_args(args)
    rows = run_ablation(world, args.images, args.test_images, args.epochs, args.seed)
    table = format_ablation(rows)
    print(table, end="")
    if args.out:
        out = _out_dir(args.out)
        write_json(os.path.join(out, "ablate.json"), _echo({"rows": rows}, vars_of(args), args.seed))
        atomic_write(os.path.join(out, "ablate.md"), table.encode())
    return 0


def cmd_metrics(args):
    a, b = read_image(args.a), read_image(args.b)
    scales = args.scales
    if scales is None:
        scales = PixelLossKind().resolve_scales(*a.shape)
    print(f"psnr    {metrics.psnr(a, b, args.max_val):.6f}")
    print(f"ssim    {metrics.ssim(a, b):.6f}")
    print(f"ms_ssim {metrics.ms_ssim(a, b, scales=scales):.6f}  (scales={scales})")
    return 0


def run_pipeline(cfg: RunConfig):
    """synth -> fit -> extend -> eval from a single config; returns the eval rows."""
    out = _out_dir(cfg.out_dir)
    seed = cfg.master_seed
    world = make_world(cfg.p, cfg.k, cfg.rho, cfg.noise_sigma, cfg.img_h, cfg.img_w,
                       seed=derive_seed(seed, "world"), names=cfg.names)
    ds = sample_dataset(world, cfg.n, derive_seed(seed, "dataset"))
    write_json(os.path.join(out, "config.json"), _echo({}, cfg.to_dict(), seed))
    write_world(os.path.join(out, "world.json"), world)
    write_dataset(os.path.join(out, "dataset.csv"), ds)
    # every later stage reads what the previous one wrote
    ds = read_dataset(os.path.join(out, "dataset.csv"))
    bank = build_bank(ds, cfg.base)
    write_bank(os.path.join(out, "bank_base.json"), bank)
    bank = read_bank(os.path.join(out, "bank_base.json"))
    for name in cfg.extensions:
        bank = extend_axis(bank, ds, name, mode=cfg.mode)
    write_bank(os.path.join(out, "bank.json"), bank)
    bank = read_bank(os.path.join(out, "bank.json"))
    world = read_world(os.path.join(out, "world.json"))
    rows = evaluate_bank(world, bank, cfg.trials, cfg.alpha, derive_seed(seed, "eval"))
    write_json(os.path.join(out, "eval.json"), _echo(rows, cfg.to_dict(), seed))
    atomic_write(os.path.join(out, "eval.md"), format_eval_table(rows).encode())
    lo, hi = cfg.edit_range
    frames = traverse(ds.latents[0], bank, bank.names[0], lo, hi, cfg.edit_steps)
    for i, z in enumerate(frames):
        write_image(os.path.join(out, f"traverse_{i:03d}.pgm"), decode(world, z, clamp=True))
    return rows


def cmd_run(args):
    cfg = RunConfig.from_dict(read_json(args.config))
    if args.out:
        cfg.out_dir = args.out
    rows = run_pipeline(cfg)
    print(format_eval_table(rows), end="")
    return 0


def vars_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentaxes", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="make a toy world and a labeled latent dataset")
    s.add_argument("--p", type=int, default=64)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--n", type=int, default=4000)
    s.add_argument("--img-h", type=int, default=64)
    s.add_argument("--img-w", type=int, default=64)
    s.add_argument("--names", default="")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="fit and orthonormalize base attribute axes")
    s.add_argument("--data", required=True)
    s.add_argument("--base", required=True, help="comma-separated attribute names, in order")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("ortho", help="report the Gram matrix of a bank")
    s.add_argument("--bank", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_ortho)

    s = sub.add_parser("extend", help="add new attribute axes decoupled from the base")
    s.add_argument("--bank", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--names", required=True)
    s.add_argument("--mode", choices=MODES, default=RESIDUAL)
    s.add_argument("--weights", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extend)

    for name, fn in (("edit", cmd_edit), ("traverse", cmd_traverse)):
        s = sub.add_parser(name, help=f"{name} a dataset latent along an axis")
        s.add_argument("--bank", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--row", type=int, default=0)
        s.add_argument("--axis", required=True)
        s.add_argument("--raw", action="store_true", help="use the fitted direction before decoupling")
        s.add_argument("--world", help="world file for preview images")
        s.add_argument("--out", required=True)
        if name == "edit":
            s.add_argument("--alpha", type=float, required=True)
        else:
            s.add_argument("--start", type=float, default=-3.0)
            s.add_argument("--end", type=float, default=3.0)
            s.add_argument("--steps", type=int, default=7)
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="flip accuracy and leakage per axis")
    s.add_argument("--world", required=True)
    s.add_argument("--bank", required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--alpha", type=float, default=6.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    for name, fn in (("train", cmd_train), ("ablate", cmd_ablate)):
        s = sub.add_parser(name, help="train the toy encoder" if name == "train" else "compare pixel losses")
        s.add_argument("--world", help="world file; otherwise a fresh world is made from --p/--k/--img-size")
        s.add_argument("--p", type=int, default=16)
        s.add_argument("--k", type=int, default=6)
        s.add_argument("--img-size", type=int, default=32)
        s.add_argument("--images", type=int, default=8)
        s.add_argument("--epochs", type=int, default=2000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out")
        if name == "train":
            s.add_argument("--kind", choices=PIXEL_KINDS, default="ms_ssim_mse")
            s.add_argument("--lr", type=float, default=0.001)
            s.add_argument("--halve-every", type=int, default=500)
            s.add_argument("--batch", type=int, default=0)
            s.add_argument("--workers", type=int, default=1)
        else:
            s.add_argument("--test-images", type=int, default=16)
        s.set_defaults(func=fn)

    s = sub.add_parser("metrics", help="PSNR / SSIM / MS-SSIM between two images")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--max-val", type=float, default=1.0)
    s.add_argument("--scales", type=int)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("run", help="full synth/fit/extend/eval pipeline from a RunConfig JSON")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "train" and args.out is None:
            args.out = "."
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValidationError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
