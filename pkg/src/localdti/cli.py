"""Command-line entry point: ``localdti <subcommand> ...``.

Configs are JSON files.  Every subcommand exits 0 on success; failures print
``localdti: [stage] message`` to stderr and exit 1.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import default_scheme, load_scheme
from .eigen import scalar_maps
from .evaluation import confusion, isolated_counts, qq_chi2, roc
from .fdr import FdrConfig, decide
from .localtest import TestConfig, test_volume
from .neighborhood import NeighborhoodConfig
from .phantom import default_phantom, isotropic_phantom, simulate
from .pipeline import StageError, load_config, run_pipeline
from .tensor import fit_volume
from .volume import DEFAULT_VOXEL_SIZE, DecisionMask, GridShape, LabelVolume, ScalarVolume, read_volume, write_volume


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def _expect(vol, cls, path):
    if not isinstance(vol, cls):
        raise TypeError(f"{path} holds a '{vol.kind}' volume, expected '{cls.kind}'")
    return vol


def cmd_simulate(args):
    cfg = _read_json(args.phantom) if args.phantom else {}
    shape = GridShape(*cfg.get("shape", (256, 256, 30)), voxel_size=tuple(cfg.get("voxel_size", DEFAULT_VOXEL_SIZE)))
    make = isotropic_phantom if cfg.get("kind", "default") == "isotropic" else default_phantom
    spec = make(shape, snr=args.snr, geometry=cfg.get("geometry"))
    scheme = load_scheme(args.scheme) if args.scheme else default_scheme()
    dwi = simulate(spec, scheme, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(dwi, out / "dwi.vol")
    write_volume(spec.labels, out / "labels.vol")
    _write_json(
        {"version": __version__, "snr": args.snr, "seed": args.seed, "phantom": cfg, "scheme": scheme.to_dict()},
        out / "manifest.json",
    )


def cmd_fit(args):
    dwi = read_volume(args.dwi)
    if args.scheme:
        dwi.scheme = load_scheme(args.scheme)
    tensors = fit_volume(dwi, intercept=args.intercept)
    write_volume(tensors, args.out)


def cmd_scalars(args):
    tensors = read_volume(args.tensors)
    maps = scalar_maps(tensors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("fa", "ra", "md"):
        write_volume(getattr(maps, name), out / f"{name}.vol")


def _test_config(path):
    if not path:
        return TestConfig()
    raw = _read_json(path)
    nb = NeighborhoodConfig(**raw.pop("neighborhood", {}))
    if "contrast" in raw:
        raw["contrast"] = tuple(tuple(r) for r in raw["contrast"])
    return TestConfig(neighborhood=nb, **raw)


def cmd_test(args):
    tensors = read_volume(args.tensors)
    cfg = _test_config(args.cfg)
    maps = scalar_maps(tensors)
    res = test_volume(tensors, maps.lambdas, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(res.chik, out / "chik.vol")
    write_volume(res.p, out / "p.vol")
    write_volume(ScalarVolume(tensors.shape, res.testable.astype(np.float64), tensors.mask), out / "testable.vol")
    manifest = res.manifest()
    manifest["config"] = cfg.to_dict()
    manifest["version"] = __version__
    _write_json(manifest, out / "manifest.json")


def cmd_fdr(args):
    p = _expect(read_volume(args.p), ScalarVolume, args.p)
    dm = decide(p, FdrConfig(level=args.level, lam=args.lam, mode=args.mode))
    write_volume(dm, args.out)
    print(f"{dm.n_rejected} voxels rejected; threshold {dm.threshold:.6g}, pi0 {dm.pi0_hat:.4f}")


def cmd_evaluate(args):
    truth = _expect(read_volume(args.truth), LabelVolume, args.truth)
    report = {}
    if args.decision:
        dm = _expect(read_volume(args.decision), DecisionMask, args.decision)
        report["confusion"] = confusion(dm, truth).to_dict()
        report["S1"], report["S2"] = isolated_counts(dm.reject)
    if args.stat:
        stat = _expect(read_volume(args.stat), ScalarVolume, args.stat)
        curve = roc(stat, truth, args.direction)
        report["auc"] = curve.auc
        if args.csv_dir:
            d = Path(args.csv_dir)
            d.mkdir(parents=True, exist_ok=True)
            with open(d / "roc.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["fpr", "tpr", "threshold"])
                w.writerows(zip(curve.fpr.tolist(), curve.tpr.tolist(), curve.thresholds.tolist()))
    if args.chik:
        chik = _expect(read_volume(args.chik), ScalarVolume, args.chik)
        report["qq"] = qq_chi2(chik, truth.isotropic & chik.mask, df=args.df).to_dict()
    if not report:
        raise ValueError("nothing to evaluate: pass --decision, --stat or --chik")
    _write_json(report, args.out)


def cmd_qq(args):
    chik = _expect(read_volume(args.chik), ScalarVolume, args.chik)
    sel = chik.mask
    if args.truth:
        sel = sel & _expect(read_volume(args.truth), LabelVolume, args.truth).isotropic
    qq = qq_chi2(chik, sel, df=args.df)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["percent", "empirical", "chi2"])
        w.writerows(zip(qq.percent.tolist(), qq.empirical.tolist(), qq.theoretical.tolist()))
    print(f"max relative deviation {qq.max_relative_deviation:.4f}")


def cmd_run(args):
    cfg = load_config(args.config)
    manifest = run_pipeline(cfg, args.out)
    for run in manifest["runs"]:
        line = [f"snr={run['snr']:g} seed={run['seed']}"]
        for mode, d in run["decisions"].items():
            line.append(f"{mode}: se={d['sensitivity']:.4f} sp={d['specificity']:.4f}")
        print("  ".join(line))


def build_parser():
    ap = argparse.ArgumentParser(prog="localdti", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a DWI phantom")
    s.add_argument("--phantom", help="phantom JSON (shape, voxel_size, kind, geometry)")
    s.add_argument("--scheme", help="acquisition scheme JSON (b, gradients)")
    s.add_argument("--snr", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate, stage="simulate")

    s = sub.add_parser("fit", help="log-linear tensor fit")
    s.add_argument("--dwi", required=True)
    s.add_argument("--scheme", help="override the scheme stored in the DWI file")
    s.add_argument("--intercept", action="store_true", help="also estimate log phi0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit, stage="fit")

    s = sub.add_parser("scalars", help="FA, RA and MD maps")
    s.add_argument("--tensors", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scalars, stage="scalars")

    s = sub.add_parser("test", help="local chiK test")
    s.add_argument("--tensors", required=True)
    s.add_argument("--cfg", help="test config JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_test, stage="test")

    s = sub.add_parser("fdr", help="FDR decision on a p-value volume")
    s.add_argument("--p", required=True)
    s.add_argument("--mode", choices=("fdr", "fdr_l"), default="fdr")
    s.add_argument("--level", type=float, default=0.01)
    s.add_argument("--lambda", dest="lam", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fdr, stage="fdr")

    s = sub.add_parser("evaluate", help="compare against ground truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--decision")
    s.add_argument("--stat")
    s.add_argument("--direction", choices=("greater", "less"), default="less")
    s.add_argument("--chik")
    s.add_argument("--df", type=int, default=2)
    s.add_argument("--csv-dir", help="also write roc.csv here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate, stage="evaluate")

    s = sub.add_parser("qq", help="chiK percentiles against chi-square")
    s.add_argument("--chik", required=True)
    s.add_argument("--truth", help="restrict to isotropic voxels of this label volume")
    s.add_argument("--df", type=int, default=2)
    s.add_argument("--out", required=True, help="CSV output")
    s.set_defaults(func=cmd_qq, stage="qq")

    s = sub.add_parser("run", help="full pipeline from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override the config's output directory")
    s.set_defaults(func=cmd_run, stage="run")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"localdti: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        print(f"localdti: [{args.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
