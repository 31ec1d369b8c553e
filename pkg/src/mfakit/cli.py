"""Command-line interface: ``mfakit <subcommand> ...``.

IDX inputs must be uncompressed (gunzip MNIST downloads first).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .em import EmConfig, fit_em
from .errors import MfaError
from .model import PrecisionModel, sample
from .scoring import roc_auc, score_samples
from .sgd import SgdConfig, fit_sgd

log = logging.getLogger("mfakit")


class UsageError(Exception):
    pass


def parse_classes(text):
    """``"0,1,2"`` or ``"0-8"`` (or a mix, ``"0-3,7"``) -> sorted list of ints."""
    if text is None:
        return None
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    if not out:
        raise UsageError(f"empty class list {text!r}")
    return sorted(out)


def parse_shape(text):
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise UsageError(f"image shape must look like 28x28, got {text!r}") from None


def _require(path):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def load_dataset(path, labels=None, header=False, classes=None):
    path = _require(path)
    labels = _require(labels)
    if path.suffix.lower() == ".csv":
        ds = dataio.load_csv(path, has_header=header)
    else:
        ds = dataio.load_idx(path, labels)
    if classes is not None:
        ds = ds.select_classes(classes)
    return ds


def _add_data_args(p, prefix="", required=True):
    flag = f"--{prefix}data"
    p.add_argument(flag, required=required, help="CSV file or uncompressed IDX image file")
    p.add_argument(f"--{prefix}labels", help="IDX label file matching an IDX image file")
    p.add_argument(f"--{prefix}classes", help="keep only these labels, e.g. 0,1,2 or 0-8")


def _dataset_from(args, prefix=""):
    attr = prefix.replace("-", "_")
    return load_dataset(getattr(args, f"{attr}data"), getattr(args, f"{attr}labels"),
                        args.header, parse_classes(getattr(args, f"{attr}classes")))


def cmd_fit_em(args):
    ds = _dataset_from(args)
    config = EmConfig(max_iters=args.max_iters, rel_tol=args.tol, psi_mode=args.psi,
                      seed=args.seed)
    model, report = fit_em(ds.data, args.k, args.m, config)
    dataio.save_model(model, args.out)
    print(f"iterations: {report.iterations_run} converged: {report.converged}")
    print(f"final log-likelihood: {report.final_loglik!r}")
    return 0


def cmd_fit_sgd(args):
    ds = _dataset_from(args)
    config = SgdConfig(epochs_phase1=args.epochs1, epochs_phase2=args.epochs2,
                       batch_size=args.batch, learning_rate=args.lr, d_max=args.dmax,
                       m_min=args.mmin, seed=args.seed,
                       grad_weights=tuple(float(v) for v in args.grad_weights.split(",")))
    model, report = fit_sgd(ds.data, args.k, args.m, config)
    dataio.save_model(model, args.out)
    print(f"epochs: {report.iterations_run}")
    print(f"final log-likelihood: {report.final_loglik!r}")
    return 0


def cmd_sample(args):
    model = dataio.load_model(_require(args.model))
    x, labels = sample(model, args.n, args.seed, component=args.component)
    if args.image_shape:
        dataio.write_image_grid(x, parse_shape(args.image_shape), args.out, (0.0, 1.0))
    else:
        dataio.write_csv(args.out, x.reshape(args.n, model.dims[1]), labels)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _write_lines(values, out):
    text = "".join(f"{v!r}\n" for v in values)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_score(args):
    model = dataio.load_model(_require(args.model))
    ds = _dataset_from(args)
    _write_lines([float(v) for v in score_samples(model, ds.data)], args.out)
    return 0


def _read_scores(path):
    text = _require(path).read_text().split()
    try:
        return np.array([float(t) for t in text])
    except ValueError as exc:
        raise MfaError(f"{path}: {exc}") from None


def cmd_auc(args):
    if args.scores_a or args.scores_b:
        if not (args.scores_a and args.scores_b):
            raise UsageError("--scores-a and --scores-b go together")
        inl, outl = _read_scores(args.scores_a), _read_scores(args.scores_b)
    else:
        if not (args.model and args.inlier_data and args.outlier_data):
            raise UsageError("need --model, --inlier-data and --outlier-data "
                             "(or --scores-a/--scores-b)")
        model = dataio.load_model(_require(args.model))
        inl = score_samples(model, _dataset_from(args, "inlier-").data)
        outl = score_samples(model, _dataset_from(args, "outlier-").data)
    auc = roc_auc(inl, outl)
    print(repr(auc))
    if args.out:
        Path(args.out).write_text(f"{auc!r}\n")
    return 0


def cmd_export(args):
    model = dataio.load_model(_require(args.model))
    shape = parse_shape(args.image_shape)
    out = Path(args.out)
    if args.what == "means":
        dataio.write_image_grid(model.means, shape, out, _range(args, (0.0, 1.0)))
        print(f"wrote {out}")
        return 0
    if args.what == "noise":
        if isinstance(model, PrecisionModel):
            values = model.prec_diag
        else:
            values = model.noise
        dataio.write_image_grid(values, shape, out,
                                _range(args, (float(values.min()), float(values.max()) + 1e-12)))
        print(f"wrote {out}")
        return 0
    loadings = model.prec_loading if isinstance(model, PrecisionModel) else model.loadings
    k, d, m = loadings.shape
    for j in range(m):
        target = out.with_name(f"{out.stem}_{j}{out.suffix or '.pgm'}")
        dataio.write_image_grid(loadings[:, :, j], shape, target, _range(args, (-1.0, 1.0)))
        print(f"wrote {target}")
    return 0


def _range(args, default):
    if args.range is None:
        return default
    lo, hi = (float(v) for v in args.range.split(","))
    return lo, hi


def build_parser():
    parser = argparse.ArgumentParser(prog="mfakit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.add_argument("--header", action="store_true", help="CSV inputs have a header row")

    p = sub.add_parser("fit-em", help="fit a covariance-form model by EM")
    common(p)
    _add_data_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--psi", choices=["free", "tied", "isotropic"], default="free")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_fit_em, needs_out=True)

    p = sub.add_parser("fit-sgd", help="fit a precision-form model by constrained SGD")
    common(p)
    _add_data_args(p)
    defaults = SgdConfig()
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--epochs1", type=int, default=defaults.epochs_phase1)
    p.add_argument("--epochs2", type=int, default=defaults.epochs_phase2)
    p.add_argument("--batch", type=int, default=defaults.batch_size)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--dmax", type=float, default=defaults.d_max)
    p.add_argument("--mmin", type=float, default=defaults.m_min)
    p.add_argument("--grad-weights", default=",".join(str(w) for w in defaults.grad_weights),
                   help="phase-II gradient weights for means,precisions,loadings")
    p.set_defaults(func=cmd_fit_sgd, needs_out=True)

    p = sub.add_parser("sample", help="draw samples from a model file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--component", type=int)
    p.add_argument("--image-shape", help="RxC; write a PGM grid instead of CSV")
    p.set_defaults(func=cmd_sample, needs_out=True)

    p = sub.add_parser("score", help="per-sample log-likelihoods, one per line")
    common(p)
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_score, needs_out=False)

    p = sub.add_parser("auc", help="outlier-detection ROC AUC")
    common(p)
    p.add_argument("--model")
    _add_data_args(p, "inlier-", required=False)
    _add_data_args(p, "outlier-", required=False)
    p.add_argument("--scores-a", help="inlier scores, one per line")
    p.add_argument("--scores-b", help="outlier scores, one per line")
    p.set_defaults(func=cmd_auc, needs_out=False)

    p = sub.add_parser("export", help="write means/loadings/noise as PGM tile grids")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--what", choices=["means", "loadings", "noise"], required=True)
    p.add_argument("--image-shape", required=True)
    p.add_argument("--range", help="lo,hi value range mapped to 0..255")
    p.set_defaults(func=cmd_export, needs_out=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.needs_out and not args.out:
            raise UsageError(f"{args.command} needs --out")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mfakit: error: {exc}", file=sys.stderr)
        return 2
    except (MfaError, ValueError, OSError) as exc:
        print(f"mfakit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
