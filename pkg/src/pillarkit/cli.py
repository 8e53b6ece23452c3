"""``pillarkit`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, toy_config
from .ddconv import memory_ratio, param_count
from .numcore import save_tensor

log = logging.getLogger("pillarkit")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def _common(p):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    p.add_argument("--threads", type=int, default=1, help="worker threads for pillar gathering")


def _load(args, base: RunConfig | None = None) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides, base=base)


# ---------------------------------------------------------------------------

def cmd_voxelize(args) -> int:
    from .pointcloud import crop, load_lidar_bin
    from .voxelizer import grid_dims, voxelize

    cfg = _load(args)
    vcfg = cfg.voxel_config()
    try:
        raw = load_lidar_bin(args.input)
    except ValueError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    cloud = crop(raw, vcfg.crop)
    batches = voxelize(cloud, vcfg, threads=args.threads)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = grid_dims(vcfg)
    print(f"points={len(cloud)} grid={h}x{w}")
    for b in batches:
        save_tensor(out / f"scale{b.scale}_pillars.pipt", b.decorated)
        lines = ["row,col,count"] + [f"{r},{c},{n}" for (r, c), n in zip(b.indices, b.counts)]
        (out / f"scale{b.scale}_cells.csv").write_text("\n".join(lines) + "\n")
        gathered = int(b.counts.sum())
        mean = gathered / len(b) if len(b) else 0.0
        print(f"scale={b.scale} pillars={len(b)} points={gathered} "
              f"mean_points={mean:.2f} occupancy={len(b) / (h * w):.5f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_suite

    cfg = _load(args)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    failed = 0
    for s in seeds:
        for r in run_suite(s):
            print(f"seed={s} {r.line()}")
            failed += not r.passed
    print(f"{'FAILED' if failed else 'OK'}: {failed} check(s) over tolerance")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_train_toy(args) -> int:
    from .train import dump_features, make_scenes, save_checkpoint, train_toy

    cfg = _load(args, base=toy_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.serialize())

    def progress(step, parts):
        if step == 1 or step % args.log_every == 0 or step == cfg.steps:
            log.info("step %d total=%.5f loc=%.5f cls=%.5f dir=%.5f sim=%.5f",
                     step, parts.total, parts.loc, parts.cls, parts.dir, parts.sim)

    try:
        res = train_toy(cfg, threads=args.threads, progress=progress)
    except FloatingPointError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    (out / "loss.csv").write_text(res.csv())
    save_checkpoint(res.model, out / "checkpoint")
    if args.dump_features:
        dump_features(res.model, make_scenes(cfg)[0], args.dump_features)
    if res.history:
        print(f"steps={len(res.history)} initial={res.initial_loss:.6f} final={res.final_loss:.6f} "
              f"ratio={res.final_loss / res.initial_loss:.4f}")
    print(f"basis_mean_abs_cos start={res.cosine_start:.6f} end={res.cosine_end:.6f}")
    return EXIT_OK


def cmd_params(args) -> int:
    from .voxelizer import grid_dims

    cfg = _load(args)
    fcfg = cfg.fusion_config()
    h, w = fcfg.output_dims(*grid_dims(cfg.voxel_config()))[0]
    s = args.kernel
    c = args.cin if args.cin is not None else fcfg.out_channels
    c_out = args.cout if args.cout is not None else fcfg.anchors_per_position * (fcfg.box_size + 1 + fcfg.dir_bins)
    h = args.height if args.height is not None else h
    w = args.width if args.width is not None else w
    m = args.bases if args.bases is not None else cfg.num_bases
    counts = param_count(s, c, c_out, h, w, m)
    ratio = memory_ratio(s, c, c_out, h, w, m)
    print(f"s={s} c={c} c'={c_out} h={h} w={w} M={m}")
    for key in ("dynamic_basis", "dynamic_total", "shared", "generated_total", "per_position"):
        print(f"{key:<16} {counts[key]:>14,d}")
    print(f"{'memory_ratio':<16} {ratio:.6e}")
    print(f"{'inverse_ratio':<16} {1 / ratio:,.2f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .model import concat_frames
    from .pointcloud import DensityProfile, crop, synth_scene
    from .train import build_model
    from .voxelizer import voxelize

    cfg = _load(args)
    if args.frames <= 0:
        print("frames=0")
        return EXIT_OK
    vcfg = cfg.voxel_config()
    prof = DensityProfile(crop=vcfg.crop, scale=args.density, clutter_points=args.clutter,
                          min_separation=5.0)
    frames = [synth_scene(cfg.seed * 1000 + i, args.boxes, prof) for i in range(args.frames)]
    clouds = [crop(c, vcfg.crop) for c, _ in frames]

    single, fps1 = timed_list(clouds, lambda c: voxelize(c, vcfg, threads=1))
    multi, fpsn = timed_list(clouds, lambda c: voxelize(c, vcfg, threads=args.threads))
    same = all(np.array_equal(a.decorated, b.decorated) and np.array_equal(a.indices, b.indices)
               for fa, fb in zip(single, multi) for a, b in zip(fa, fb))
    print(f"points/frame={np.mean([len(c) for c in clouds]):.0f}")
    print(f"pillars/frame={[int(np.mean([len(f[k]) for f in single])) for k in range(vcfg.num_scales)]}")
    print(f"voxelize threads=1 {fps1:.2f} frames/s")
    print(f"voxelize threads={args.threads} {fpsn:.2f} frames/s identical={same}")

    model = build_model(cfg)
    model.set_train(False)
    h, w = model.grid

    def enc(f):
        fb = concat_frames([f])
        return model.encoder.forward(fb.batches, h, w, fb.batch_index, 1)

    _, fps_enc = timed_list(single, enc)
    print(f"encode {fps_enc:.2f} frames/s")
    if not args.skip_forward:
        _, fps_fwd = timed_list(single, lambda f: model.forward(concat_frames([f])))
        print(f"full_forward {fps_fwd:.2f} frames/s")
    return EXIT_OK if same else EXIT_VERIFY


def timed_list(items, fn):
    t = time.perf_counter()
    r = [fn(x) for x in items]
    return r, len(items) / (time.perf_counter() - t)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pillarkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="voxelize a KITTI .bin scan into per-scale pillar dumps")
    p.add_argument("input", type=Path)
    p.add_argument("outdir", type=Path)
    _common(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="train on seeded synthetic scenes")
    p.add_argument("--out", type=Path, default=Path("toy_run"))
    p.add_argument("--dump-features", type=Path, help="write intermediate maps as PIPT tensors")
    p.add_argument("--log-every", type=int, default=20)
    _common(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("params", help="dynamic-filter parameter and memory accounting")
    p.add_argument("--kernel", type=int, default=1)
    p.add_argument("--cin", type=int)
    p.add_argument("--cout", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--bases", type=int)
    _common(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("bench", help="throughput of voxelize / encode / forward on synthetic frames")
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--boxes", type=int, default=20)
    p.add_argument("--density", type=float, default=60000.0)
    p.add_argument("--clutter", type=int, default=20000)
    p.add_argument("--skip-forward", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
