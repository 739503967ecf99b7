"""Batch command-line surface for scripted evaluation pipelines.

One binary, subcommands: skeletonize, smooth, mpr, metrics, loss-eval,
grad-check, thin, phantom, report.  Structured results go to stdout as JSON
(CSV for metric batches), diagnostics to stderr.  Exit codes: 0 success,
2 validation/usage error, 1 runtime error.  Every run is deterministic given
its flags, including seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .errors import CurvitopoError


class UsageError(Exception):
    pass


_MODULE_DEFAULTS = {
    "format": "npy",
    "k": 3,
    "alpha": None,  # per-loss default resolved later
    "n": 10,
    "seed": 0,
    "rho": 2.0,
    "threshold": 0.5,
    "axes": "xyz",
    "step": 1e-4,
    "coords": 64,
    "jobs": None,  # resolved from CURVITOPO_JOBS
    "bins": 20,
}

_LOSS_ALPHA = {"gats": 0.5, "cldice": 0.65}


def _add_common(p, *names, config_help=True):
    if config_help:
        p.add_argument("--config", default=None,
                       help="JSON file of option defaults (flags win)")
    for name in names:
        if name == "format":
            p.add_argument("--format", choices=["npy", "raw+json"], default=None,
                           help="volume file format (default npy)")
        elif name == "k":
            p.add_argument("--k", type=int, default=None,
                           help="iteration count (default 3 where optional)")
        elif name == "auto-k":
            p.add_argument("--auto-k", action="store_true",
                           help="derive k from the mean-pixel-radius estimate")
        elif name == "alpha":
            p.add_argument("--alpha", type=float, default=None,
                           help="loss mixing weight (default 0.5 gats / 0.65 cldice)")
        elif name == "n":
            p.add_argument("--n", type=int, default=None,
                           help="number of random slices (default 10)")
        elif name == "seed":
            p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        elif name == "rho":
            p.add_argument("--rho", type=float, default=None,
                           help="centerline tolerance radius in voxels (default 2)")
        elif name == "threshold":
            p.add_argument("--threshold", type=float, default=None,
                           help="binarization threshold (default 0.5)")
        elif name == "axes":
            p.add_argument("--axes", default=None,
                           help="axes to slice across, e.g. xyz or z (default xyz)")
        elif name == "jobs":
            p.add_argument("--jobs", type=int, default=None,
                           help="parallel workers for batch runs "
                                "(default $CURVITOPO_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="curvitopo",
        description="Topology-preserving segmentation assessment toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("skeletonize", help="soft skeletonization of a volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, "format", "k", "auto-k", "n", "seed", "threshold", "axes")

    p = sub.add_parser("smooth", help="topological smoothing of a volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, "format", "k", "auto-k", "n", "seed", "threshold", "axes")

    p = sub.add_parser("mpr", help="mean-pixel-radius iteration estimate")
    p.add_argument("--in", dest="infile", required=True, nargs="+")
    _add_common(p, "format", "n", "seed", "threshold", "axes", "jobs")

    p = sub.add_parser("metrics", help="evaluation report for prediction/gt pairs")
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--gt", required=True, nargs="+")
    p.add_argument("--out-format", choices=["json", "csv"], default="csv",
                   help="report format (default csv)")
    p.add_argument("--normalized-betti", action="store_true",
                   help="divide Betti errors by voxel count")
    _add_common(p, "format", "k", "rho", "threshold", "jobs")

    p = sub.add_parser("loss-eval", help="evaluate a differentiable loss")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--loss", choices=["gats", "cldice"], default="gats")
    p.add_argument("--grad-out", default=None,
                   help="write the gradient volume to this path")
    _add_common(p, "format", "k", "auto-k", "alpha", "n", "seed", "threshold", "axes")

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--loss", choices=["gats", "cldice", "quadratic"], default="gats")
    p.add_argument("--step", type=float, default=None,
                   help="finite-difference step (default 1e-4)")
    p.add_argument("--coords", type=int, default=None,
                   help="coordinate sample size (default 64)")
    p.add_argument("--rel-threshold", type=float, default=1e-3,
                   help="relative-error bound (default 1e-3)")
    _add_common(p, "format", "k", "alpha", "seed")

    p = sub.add_parser("thin", help="binarize and thin to a 1-voxel centerline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, "format", "threshold")

    p = sub.add_parser("phantom", help="generate a synthetic phantom with ground truth")
    p.add_argument("--kind", choices=["straight_tube", "torus", "helix",
                                      "bifurcation", "two_tubes"], default=None)
    p.add_argument("--spec", default=None, help="JSON PhantomSpec file (flags win)")
    p.add_argument("--shape", type=int, nargs=3, default=None)
    p.add_argument("--radius", type=float, nargs="+", default=None)
    p.add_argument("--axis", choices=["x", "y", "z"], default=None)
    p.add_argument("--length", type=float, default=None)
    p.add_argument("--major-radius", type=float, default=None)
    p.add_argument("--pitch", type=float, default=None)
    p.add_argument("--turns", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--salt-pepper", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--centerline-out", default=None)
    p.add_argument("--truth-out", default=None)
    _add_common(p, "format", "seed")

    p = sub.add_parser("report", help="thinning-vs-smoothing difference report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--step", dest="at_step", type=int, default=None,
                   help="iterate compared against the input (default 2)")
    p.add_argument("--bins", type=int, default=None)
    _add_common(p, "format", "k", "auto-k", "n", "seed", "threshold", "axes")

    return ap


def _merge_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; validated before any volume IO."""
    cfg = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    opts = {}
    # the transforms have no sensible built-in k: thinning depth is the whole
    # point, so it comes from --k, the config file, or --auto-k
    no_default = {"k"} if args.command in ("skeletonize", "smooth", "report") else set()
    for key, val in vars(args).items():
        if key == "config":
            continue
        if val is None:
            val = cfg.get(key, None if key in no_default else _MODULE_DEFAULTS.get(key))
        opts[key] = val
    if opts.get("jobs") is None:
        opts["jobs"] = int(os.environ.get("CURVITOPO_JOBS", "1"))
    _validate(opts)
    return opts


def _validate(o: dict):
    def bad(msg):
        raise UsageError(msg)

    cmd = o.get("command")
    if o.get("k") is not None and o["k"] < 0:
        bad("k must be >= 0")
    if o.get("alpha") is not None and not 0 <= o["alpha"] <= 1:
        bad("alpha must be in [0, 1]")
    if o.get("n") is not None and o["n"] < 1:
        bad("n must be >= 1")
    if o.get("rho") is not None and o["rho"] < 0:
        bad("rho must be >= 0")
    if o.get("threshold") is not None and not 0 <= o["threshold"] <= 1:
        bad("threshold must be in [0, 1]")
    if o.get("jobs") is not None and o["jobs"] < 1:
        bad("jobs must be >= 1")
    if o.get("axes") is not None and (
        not o["axes"] or any(a not in "xyz" for a in o["axes"])
    ):
        bad("axes must be a non-empty subset of 'xyz'")
    if cmd in ("skeletonize", "smooth", "report") and not o.get("auto_k") and o.get("k") is None:
        bad(f"{cmd} needs --k or --auto-k")
    if cmd == "metrics" and len(o["pred"]) != len(o["gt"]):
        bad("--pred and --gt need the same number of files")
    if cmd == "grad-check" and o.get("step") is not None and o["step"] <= 0:
        bad("step must be positive")


def _resolve_k(opts, volume):
    from .geometry import mpr

    if opts.get("auto_k"):
        res = mpr(volume, opts["n"], opts["seed"],
                  binarize_threshold=opts["threshold"], axes=opts["axes"])
        print(f"auto-k from mean pixel radius: k={res.k}", file=sys.stderr)
        return res.k
    return opts["k"]


def _cmd_transform(opts, smooth: bool) -> int:
    from .morphology import soft_skeletonize, topo_smooth
    from .volume import read_volume, write_volume

    v = read_volume(opts["infile"], opts["format"])
    k = _resolve_k(opts, v)
    out = (topo_smooth if smooth else soft_skeletonize)(v, k)
    write_volume(out, opts["out"], opts["format"])
    print(json.dumps({"out": opts["out"], "k": k}))
    return 0


def _cmd_mpr(opts) -> int:
    from .geometry import mpr
    from .volume import read_volume

    def run(path):
        v = read_volume(path, opts["format"])
        return mpr(v, opts["n"], opts["seed"],
                   binarize_threshold=opts["threshold"], axes=opts["axes"])

    files = opts["infile"]
    with ThreadPoolExecutor(max_workers=opts["jobs"]) as ex:
        results = list(ex.map(run, files))
    for path, res in zip(files, results):
        body = res.to_json()
        if len(files) > 1:
            body = {"file": path, **body}
        print(json.dumps(body))
    return 0


def _cmd_metrics(opts) -> int:
    from . import metrics as M
    from .geometry import thin3d
    from .volume import read_volume

    def run(pair):
        pred_path, gt_path = pair
        p = read_volume(pred_path, opts["format"])
        g = read_volume(gt_path, opts["format"])
        pb = p.binarize(opts["threshold"])
        gb = g.binarize(opts["threshold"])
        cl, flags = M.cldice_score(p, g, opts["k"])
        rd, rflags = M.rho_dice(thin3d(pb), thin3d(gb), opts["rho"])
        e0, e1 = M.betti_error(pb, gb, normalized=opts["normalized_betti"])
        return M.MetricReport(
            dice=M.dice(p, g),
            cldice=cl,
            rho_dice=rd,
            ari=M.ari(pb, gb),
            betti0_error=e0,
            betti1_error=e1,
            flags=flags | rflags,
        )

    pairs = list(zip(opts["pred"], opts["gt"]))
    with ThreadPoolExecutor(max_workers=opts["jobs"]) as ex:
        reports = list(ex.map(run, pairs))
    if opts["out_format"] == "csv":
        w = csv.writer(sys.stdout)
        w.writerow(("pred", "gt") + M.MetricReport.CSV_COLUMNS)
        for (pp, gp), rep in zip(pairs, reports):
            w.writerow([pp, gp] + rep.csv_row())
    else:
        for (pp, gp), rep in zip(pairs, reports):
            print(json.dumps({"pred": pp, "gt": gp, **rep.to_json()}))
    return 0


def _cmd_loss_eval(opts) -> int:
    from .loss import cldice_loss, gats_loss
    from .volume import read_volume, write_volume

    pred = read_volume(opts["pred"], opts["format"])
    gt = read_volume(opts["gt"], opts["format"])
    alpha = opts["alpha"] if opts["alpha"] is not None else _LOSS_ALPHA[opts["loss"]]
    k = _resolve_k({**opts, "k": opts["k"]}, gt)
    fn = gats_loss if opts["loss"] == "gats" else cldice_loss
    lv = fn(pred, gt, alpha, k)
    if opts.get("grad_out"):
        write_volume(lv.gradient, opts["grad_out"], opts["format"])
    print(json.dumps({
        "loss": lv.value,
        "alpha": alpha,
        "k": k,
        "flags": sorted(lv.flags),
        **({"grad_out": opts["grad_out"]} if opts.get("grad_out") else {}),
    }))
    return 0


def _cmd_grad_check(opts) -> int:
    from .loss import grad_check
    from .volume import read_volume

    pred = read_volume(opts["pred"], opts["format"])
    gt = read_volume(opts["gt"], opts["format"])
    alpha = opts["alpha"] if opts["alpha"] is not None else _LOSS_ALPHA.get(opts["loss"], 0.5)
    rep = grad_check(opts["loss"], pred, gt, step=opts["step"], alpha=alpha,
                     k=opts["k"], max_coords=opts["coords"], seed=opts["seed"],
                     rel_threshold=opts["rel_threshold"])
    print(json.dumps(rep.to_json()))
    return 0 if rep.passed else 1


def _cmd_thin(opts) -> int:
    from .geometry import thin3d
    from .volume import read_volume, write_volume

    v = read_volume(opts["infile"], opts["format"])
    out = thin3d(v.binarize(opts["threshold"]))
    write_volume(out.to_volume(), opts["out"], opts["format"])
    print(json.dumps({"out": opts["out"], "voxels": int(out.bits.sum())}))
    return 0


def _cmd_phantom(opts) -> int:
    from .phantom import PhantomSpec, generate
    from .volume import write_volume

    base = {}
    if opts.get("spec"):
        try:
            with open(opts["spec"]) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read spec {opts['spec']}: {exc}") from exc
    for key in ("kind", "shape", "axis", "length", "pitch", "turns"):
        if opts.get(key) is not None:
            base[key] = opts[key]
    if opts.get("radius") is not None:
        base["radius"] = opts["radius"][0] if len(opts["radius"]) == 1 else tuple(opts["radius"])
    for flag, key in (("major_radius", "major_radius"),
                      ("noise_sigma", "noise_sigma"),
                      ("salt_pepper", "salt_pepper")):
        if opts.get(flag) is not None:
            base[key] = opts[flag]
    if "kind" not in base:
        raise UsageError("phantom needs --kind or a --spec file")
    if "shape" in base:
        base["shape"] = tuple(base["shape"])
    try:
        spec = PhantomSpec(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad phantom spec: {exc}") from exc

    v, truth = generate(spec, seed=opts["seed"])
    write_volume(v, opts["out"], opts["format"])
    body = {"out": opts["out"], "betti": list(truth.betti.as_tuple()),
            "max_radius": truth.max_radius}
    if opts.get("centerline_out"):
        write_volume(truth.centerline.to_volume(), opts["centerline_out"], opts["format"])
        body["centerline_out"] = opts["centerline_out"]
    if opts.get("truth_out"):
        with open(opts["truth_out"], "w") as fh:
            json.dump({"spec": spec.to_json(), "betti": list(truth.betti.as_tuple()),
                       "max_radius": truth.max_radius}, fh, indent=2)
        body["truth_out"] = opts["truth_out"]
    print(json.dumps(body))
    return 0


def _cmd_report(opts) -> int:
    from .report import write_report
    from .volume import read_volume

    v = read_volume(opts["infile"], opts["format"])
    k = _resolve_k(opts, v)
    manifest = write_report(v, k, opts["out_dir"], step=opts.get("at_step"),
                            bins=opts["bins"])
    print(json.dumps(manifest))
    return 0


_HANDLERS = {
    "skeletonize": lambda o: _cmd_transform(o, smooth=False),
    "smooth": lambda o: _cmd_transform(o, smooth=True),
    "mpr": _cmd_mpr,
    "metrics": _cmd_metrics,
    "loss-eval": _cmd_loss_eval,
    "grad-check": _cmd_grad_check,
    "thin": _cmd_thin,
    "phantom": _cmd_phantom,
    "report": _cmd_report,
}


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = _merge_config(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[opts["command"]](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CurvitopoError as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
