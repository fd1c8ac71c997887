"""Command-line interface: ``bscale-recog <command> ...``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bscale import compute_wbs, threshold_wbs, default_interval
from .config import Config, ConfigError
from .evaluation import all_subsets, combination_sweep, loocv, prepare_features, summarize, write_csv
from .modelio import ModelFormatError, load_assembly, save_assembly
from .phantom import PhantomSpec, load_dataset, save_dataset
from .recognition import coarse_recognize, extract_body, probe_delta_f, refine_with_skin, with_pose
from .training import train_assembly
from .volume import load_volume, save_volume

log = logging.getLogger("bscale_recog")
PROG = "bscale-recog"
_D = Config()


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    return "auto" if v is None else str(v)


def _common() -> argparse.ArgumentParser:
    # global flags, accepted before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS,
                   help="JSON config file; explicit flags win over its values")
    p.add_argument("--threads", type=int, metavar="N", default=argparse.SUPPRESS,
                   help=f"worker threads, 0 = all cores (default: {_D.threads})")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                   help="more logging (repeat for debug output)")
    return p


def _bscale_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma", type=float, help=f"homogeneity scale (default: {_fmt(_D.sigma)}, "
                                               "half the mean absolute neighbor difference)")
    p.add_argument("--ts", type=float, help=f"fraction-of-object threshold t_s (default: {_D.ts})")
    p.add_argument("--kmax", type=int, help=f"largest ball radius tested (default: {_D.kmax})")


def _threshold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--percentile", type=float,
                   help=f"lower bound percentile of nonzero WBs values (default: {_D.percentile})")
    p.add_argument("--interval", type=float, nargs=2, metavar=("LO", "HI"),
                   help="fixed WBs threshold interval, overrides --percentile")


def _objects_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objects", default="all", help="comma-separated object labels or 'all' (default: all)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog=PROG, parents=[common], formatter_class=fmt,
                     description="Object recognition in 3D scenes from weighted ball-scale structure.",
                     epilog=f"defaults: ts={_D.ts} kmax={_D.kmax} percentile={_D.percentile}")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("bscale", parents=[common], help="compute the weighted b-scale scene")
    p.add_argument("--input", required=True, help="scene (.mhd/.mha)")
    p.add_argument("--out-wbs", help="output weighted b-scale scene (.mhd)")
    p.add_argument("--out-r", help="output integer radius scene (.mhd)")
    _bscale_flags(p)

    p = sub.add_parser("wbs-threshold", parents=[common], help="threshold a WBs scene into a mask")
    p.add_argument("--input", required=True, help="WBs scene (.mhd)")
    p.add_argument("--out", required=True, help="output mask (.mhd)")
    p.add_argument("--lo", type=float, help="lower interval bound (default: percentile of nonzero values)")
    p.add_argument("--hi", type=float, help="upper interval bound (default: maximum value)")
    p.add_argument("--percentile", type=float,
                   help=f"lower bound percentile of nonzero WBs values (default: {_D.percentile})")

    p = sub.add_parser("model", parents=[common], help="model assembly commands")
    msub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = msub.add_parser("build", parents=[common], help="train a model assembly on a dataset")
    q.add_argument("--masks", "--data", dest="data", required=True,
                   help="dataset directory with subject_*/scene.mhd and <label>.mhd masks")
    q.add_argument("--out", required=True, help="output model (.json)")
    _objects_flag(q)
    _bscale_flags(q)
    _threshold_flags(q)

    p = sub.add_parser("recognize", parents=[common], help="place a model assembly in a scene")
    p.add_argument("--input", required=True, help="test scene (.mhd/.mha)")
    p.add_argument("--model", required=True, help="model (.json)")
    p.add_argument("--out", required=True, help="output result (.json)")
    p.add_argument("--refine-skin", action="store_true", help="align the skin model to the body outline")
    p.add_argument("--probe-deltaf", action="store_true", help="grid probe within one training spread")
    p.add_argument("--skin-cutoff", type=float,
                   help=f"body cutoff as a fraction of the scene maximum (default: {_D.skin_cutoff})")
    _bscale_flags(p)
    _threshold_flags(p)

    p = sub.add_parser("phantom", parents=[common], help="synthetic phantom commands")
    psub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = psub.add_parser("gen", parents=[common], help="write a phantom dataset")
    q.add_argument("--spec", help="phantom spec (.json); built-in default when omitted")
    q.add_argument("--n", type=int, default=10, help="number of subjects (default: 10)")
    q.add_argument("--seed", type=int, help=f"random seed (default: {_D.seed})")
    q.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", parents=[common], help="leave-one-out evaluation")
    esub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    for name, helptext in (("loocv", "evaluate one object subset"), ("sweep", "evaluate every object subset")):
        q = esub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--data", required=True, help="dataset directory")
        q.add_argument("--out", required=True, help="output CSV")
        _objects_flag(q)
        _bscale_flags(q)
        _threshold_flags(q)

    p = sub.add_parser("config", parents=[common], help="configuration commands")
    csub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = csub.add_parser("show", parents=[common], help="print the resolved configuration")
    _bscale_flags(q)
    _threshold_flags(q)
    return parser


def _resolve_config(args: argparse.Namespace, base: Config | None = None) -> Config:
    cfg = base or Config()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        Config.from_dict(raw)  # validates keys and ranges on their own
        cfg = cfg.merged(raw)
    flags = {k: getattr(args, k, None) for k in ("sigma", "ts", "kmax", "percentile", "interval",
                                                  "threads", "skin_cutoff", "seed")}
    return cfg.merged(flags)


def _labels(spec: str, available: Sequence[str]) -> list[str]:
    if spec == "all":
        return list(available)
    labels = [s.strip() for s in spec.split(",") if s.strip()]
    missing = [l for l in labels if l not in available]
    if missing or not labels:
        raise UsageError(f"unknown objects {missing}; available: {list(available)}")
    return labels


def _dataset(data: str, objects: str):
    root = Path(data)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    meta = root / "dataset.json"
    available = json.loads(meta.read_text())["labels"] if meta.exists() else None
    subjects = load_dataset(root)
    if available is None:
        available = list(subjects[0].masks)
    labels = _labels(objects, available)
    return subjects, labels


def cmd_bscale(args, cfg: Config) -> None:
    if not (args.out_wbs or args.out_r):
        raise UsageError("bscale: give --out-wbs and/or --out-r")
    scene = load_volume(args.input)
    settings = cfg.wbs_settings()
    res = compute_wbs(scene, settings.params_for(scene), cfg.kmax, cfg.threads)
    if args.out_wbs:
        save_volume(res.wbs, args.out_wbs)
    if args.out_r:
        save_volume(res.radius, args.out_r)
    lo, hi = default_interval(res.wbs, cfg.percentile)
    log.info("sigma=%.4g ts=%g kmax=%d; default interval [%g, %g]", res.params.sigma, cfg.ts, cfg.kmax, lo, hi)


def cmd_threshold(args, cfg: Config) -> None:
    wbs = load_volume(args.input)
    lo, hi = cfg.interval or default_interval(wbs, cfg.percentile)
    interval = (lo if args.lo is None else args.lo, hi if args.hi is None else args.hi)
    if interval[0] > interval[1]:
        raise UsageError(f"empty threshold interval {interval}")
    mask = threshold_wbs(wbs, interval)
    save_volume(mask, args.out)
    log.info("interval [%g, %g]: %d voxels", interval[0], interval[1], mask.count)


def cmd_model_build(args, cfg: Config) -> None:
    subjects, labels = _dataset(args.data, args.objects)
    feats = prepare_features(subjects, cfg.wbs_settings(), cfg.landmarks)
    asm = train_assembly(feats, labels, cfg.variance_kept)
    asm.meta["config"] = cfg.to_dict()
    save_assembly(asm, args.out)
    log.info("model of %s on %d subjects written to %s", labels, len(subjects), args.out)


def cmd_recognize(args, cfg: Config) -> None:
    asm = load_assembly(args.model)
    if "config" in asm.meta:
        # training-time settings first, then the config file, then flags
        cfg = _resolve_config(args, Config.from_dict(asm.meta["config"]).merged({"threads": _D.threads}))
    scene = load_volume(args.input)
    result = coarse_recognize(scene, asm, cfg.wbs_settings())
    extra = {}
    if args.probe_deltaf:
        result = with_pose(result, asm, probe_delta_f(result, asm, result.wbs_mask), probed=True)
    if args.refine_skin:
        ref = refine_with_skin(result, asm, extract_body(scene, cfg.skin_cutoff))
        result = with_pose(result, asm, ref.pose, skin_refined=ref.applied)
        extra["containment"] = ref.containment
    out = result.to_dict()
    out["diagnostics"].update(extra)
    out["config"] = cfg.to_dict()
    Path(args.out).write_text(json.dumps(out, indent=1))
    p = result.pose
    log.info("pose: s=%.4f t=%s", p.s, np.round(p.t, 3).tolist())


def cmd_phantom_gen(args, cfg: Config) -> None:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    spec = PhantomSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec else PhantomSpec()
    if args.seed is not None or not args.spec:
        spec.seed = cfg.seed
    save_dataset(args.out, spec, args.n)
    log.info("%d subjects written to %s", args.n, args.out)


def cmd_eval(args, cfg: Config) -> None:
    subjects, labels = _dataset(args.data, args.objects)
    feats = prepare_features(subjects, cfg.wbs_settings(), cfg.landmarks)
    if args.action == "loocv":
        records = loocv(feats, labels, cfg.threads)
        s = summarize(records)
        print(f"{'+'.join(labels)}: mean translation error {s.t_err_mean:.3f} mm "
              f"(std {s.t_err_std:.3f}); orientation error {np.round(s.rot_err_mean, 3).tolist()} deg")
    else:
        table = combination_sweep(feats, labels, all_subsets(labels), cfg.threads)
        records = [r for _, recs in table for r in recs]
        for s, _ in table:
            print(f"{'+'.join(s.subset):40s} {s.t_err_mean:8.3f} mm")
    write_csv(args.out, records, cfg.to_dict())


def cmd_config_show(args, cfg: Config) -> None:
    print(json.dumps(cfg.to_dict(), indent=2))


def _handler(args):
    cmd, action = args.command, getattr(args, "action", None)
    table = {
        ("bscale", None): cmd_bscale,
        ("wbs-threshold", None): cmd_threshold,
        ("model", "build"): cmd_model_build,
        ("recognize", None): cmd_recognize,
        ("phantom", "gen"): cmd_phantom_gen,
        ("eval", "loocv"): cmd_eval,
        ("eval", "sweep"): cmd_eval,
        ("config", "show"): cmd_config_show,
    }
    if (cmd, action) not in table:
        raise UsageError(f"{PROG} {cmd}: missing action")
    return table[cmd, action]


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 2
        level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        logging.getLogger("bscale_recog").setLevel(level)
        handler = _handler(args)
        cfg = _resolve_config(args)
        handler(args, cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"{PROG}: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, ModelFormatError) as exc:
        print(f"{PROG}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
