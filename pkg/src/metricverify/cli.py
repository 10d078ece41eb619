"""Command-line entry point: ``metricverify <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import io
from .backbone import Backbone, extract_dataset
from .config import Settings, parse_overrides
from .evaluation import EvalReport, classifier_eval, tenfold_cosine_eval
from .exceptions import ConfigurationError, MetricVerifyError, TrainingError
from .pipeline import generate_data, run_pipeline
from .report import audit_published_tables, audit_text, comparison_table
from .sampling import make_eval_pairs
from .tensor import RngStream
from .training import SWEEP_AXES, run_sweep, train_backbone, train_joint, train_verifier
from .verifier import VerifierModel

log = logging.getLogger("metricverify")

# flag -> dotted config key
FLAG_KEYS = {
    "ids": "data.ids",
    "per_id": "data.per_id",
    "dim": "data.dim",
    "sigma": "data.sigma",
    "seed": "train.seed",
    "steps": "train.steps",
    "lr": "train.lr",
    "mode": "eval.mode",
}


def _settings(args) -> Settings:
    overrides = parse_overrides(args.set)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value).replace("-", "_") if flag == "mode" else str(value)
    return Settings.load(args.config, overrides)


def _write(text: str, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _save_partial(exc: TrainingError, paths):
    models = exc.last_good if isinstance(exc.last_good, tuple) else (exc.last_good,)
    for model, path in zip(models, paths):
        if model is not None and path:
            io.save_checkpoint(model, path)
            log.warning("saved last good state to %s", path)


def cmd_gen_data(args):
    s = _settings(args)
    ds = generate_data(s)
    io.write_embeddings(ds, args.out)
    log.info("wrote %d identities x %d samples (D=%d) to %s", len(ds), s.data.per_id, ds.dim, args.out)


def cmd_make_pairs(args):
    s = _settings(args)
    ds = io.read_embeddings(args.data)
    pairs = make_eval_pairs(ds, args.n_pairs, RngStream(s.train.seed, "eval"))
    io.write_pairs(pairs, args.out)


def cmd_train_backbone(args):
    s = _settings(args)
    ds = io.read_embeddings(args.data)
    try:
        backbone, curve = train_backbone(ds, s.backbone_config(ds.dim, len(ds)), s.train_config())
    except TrainingError as exc:
        _save_partial(exc, [args.out])
        raise
    io.save_checkpoint(backbone, args.out)
    if curve.loss:
        log.info("final backbone loss %.6g", curve.loss[-1])


def cmd_extract(args):
    backbone = io.load_checkpoint(args.backbone)
    if not isinstance(backbone, Backbone):
        raise ConfigurationError(f"{args.backbone} is not a backbone checkpoint")
    ds = io.read_embeddings(args.data)
    io.write_embeddings(extract_dataset(backbone, ds, args.flip), args.out)


def cmd_train_verifier(args):
    s = _settings(args)
    feats = io.read_embeddings(args.features)
    try:
        model, curve = train_verifier(feats, s.verifier_config(feats.dim), s.train_config())
    except TrainingError as exc:
        _save_partial(exc, [args.out])
        raise
    io.save_checkpoint(model, args.out)
    if curve.loss:
        log.info("final verifier loss %.6g", curve.loss[-1])


def cmd_train_joint(args):
    s = _settings(args)
    ds = io.read_embeddings(args.data)
    bcfg = s.backbone_config(ds.dim, len(ds))
    try:
        backbone, verifier, _ = train_joint(ds, bcfg, s.verifier_config(2 * bcfg.bottleneck),
                                            s.train_config())
    except TrainingError as exc:
        _save_partial(exc, [args.out_backbone, args.out_verifier])
        raise
    io.save_checkpoint(backbone, args.out_backbone)
    io.save_checkpoint(verifier, args.out_verifier)


def cmd_eval_cosine(args):
    s = _settings(args)
    report = tenfold_cosine_eval(io.read_pairs(args.pairs), s.eval.mode)
    _write(report.to_text(), args.out)


def cmd_eval_verifier(args):
    model = io.load_checkpoint(args.model)
    if not isinstance(model, VerifierModel):
        raise ConfigurationError(f"{args.model} is not a verifier checkpoint")
    _write(classifier_eval(model, io.read_pairs(args.pairs)).to_text(), args.out)


def cmd_sweep(args):
    s = _settings(args)
    feats = io.read_embeddings(args.features)
    pairs = io.read_pairs(args.pairs)
    table = run_sweep(args.axis, s.verifier_config(feats.dim), s.train_config(), feats, pairs)
    _write(table.to_text(), args.out)


def cmd_report(args):
    parts = []
    if args.reports:
        reports = {}
        for path in args.reports:
            with open(path) as fh:
                rep = EvalReport.from_text(fh.read())
            reports[rep.protocol if rep.protocol not in reports else path] = rep
        parts.append(comparison_table(reports))
    if args.audit or not args.reports:
        parts.append(audit_text(audit_published_tables()))
    _write("\n".join(parts), args.out)


def cmd_pipeline(args):
    s = _settings(args)
    result = run_pipeline(s, joint=args.joint)
    text = result.report_text() + "\n" + comparison_table(
        {"cosine_10fold": result.cosine, "verifier": result.classifier})
    _write(text, args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="metricverify", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "write a synthetic identity embedding file")
    p.add_argument("--ids", type=int)
    p.add_argument("--per-id", dest="per_id", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", required=True)

    p = add("make-pairs", cmd_make_pairs, "draw a balanced pair list from an embedding file")
    p.add_argument("--data", required=True)
    p.add_argument("--n-pairs", dest="n_pairs", type=int, default=600)
    p.add_argument("--out", required=True)

    p = add("train-backbone", cmd_train_backbone, "train the embedding backbone")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("extract", cmd_extract, "map an embedding file through a backbone")
    p.add_argument("--backbone", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--flip", choices=("reverse", "identity"))
    p.add_argument("--out", required=True)

    p = add("train-verifier", cmd_train_verifier, "train the verification classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = add("train-joint", cmd_train_joint, "train backbone and verifier end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--out-backbone", dest="out_backbone", required=True)
    p.add_argument("--out-verifier", dest="out_verifier", required=True)

    p = add("eval-cosine", cmd_eval_cosine, "10-fold cosine/threshold evaluation")
    p.add_argument("--pairs", required=True)
    p.add_argument("--mode", choices=("max-accuracy", "eer", "max_accuracy"))
    p.add_argument("--out")

    p = add("eval-verifier", cmd_eval_verifier, "threshold-free verifier evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")

    p = add("sweep", cmd_sweep, "architecture sweep over one axis")
    p.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")

    p = add("report", cmd_report, "merge reports and audit the published tables")
    p.add_argument("--reports", nargs="*")
    p.add_argument("--audit", action="store_true")
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "generate, train and evaluate both protocols in one run")
    p.add_argument("--ids", type=int)
    p.add_argument("--per-id", dest="per_id", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--mode", choices=("max-accuracy", "eer", "max_accuracy"))
    p.add_argument("--joint", action="store_true")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (MetricVerifyError, OSError) as exc:
        print(f"metricverify {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
