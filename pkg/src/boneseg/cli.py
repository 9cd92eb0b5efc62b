"""Command-line entry point: ``boneseg <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import BonesegError, ConfigError

log = logging.getLogger("boneseg")

RESOLVED_CONFIG = "config.resolved.txt"


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return cfg.updated(**overrides) if overrides else cfg


def _prepare_out(args, cfg: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / RESOLVED_CONFIG)
    return out


def _load_cases(data):
    """Benchmark cases from a manifest CSV or a directory containing ``manifest.csv``."""
    from .phantom import load_benchmark

    path = Path(data)
    if path.is_dir():
        path = path / "manifest.csv"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return load_benchmark(path)


def _training_samples(cases, which: str):
    from .selftrain import Sample

    out = []
    for c in cases:
        label = c.clean if which == "clean" else c.gt
        if label is None:
            raise ConfigError(f"case {c.case_id} has no {which} labels")
        out.append(Sample(c.image, label, c.case_id))
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_phantom_gen(args, cfg):
    from .phantom import generate_benchmark

    out = _prepare_out(args, cfg)
    n = args.n if args.n is not None else cfg["phantom.n_cases"]
    cases = generate_benchmark(n, cfg.phantom_spec(), cfg.corruption_spec(), seed=cfg["seed"], out_dir=out)
    print(f"wrote {len(cases)} cases to {out / 'manifest.csv'}")


def cmd_preprocess(args, cfg):
    from .io import list_volumes, load_volume, store_volume
    from .volume import preprocess_volume

    out = _prepare_out(args, cfg)
    inputs = list_volumes(args.input)
    if not inputs:
        raise FileNotFoundError(f"no volumes in {args.input}")
    for hdr in inputs:
        vol = preprocess_volume(load_volume(hdr), cfg["preprocess.spacing"], cfg["preprocess.dims"])
        store_volume(vol, out / hdr.stem)
    print(f"preprocessed {len(inputs)} volumes into {out}")


def cmd_train(args, cfg):
    from .network import init_model
    from .selftrain import write_round
    from .trainer import train

    out = _prepare_out(args, cfg)
    samples = _training_samples(_load_cases(args.data), cfg["train.labels"])
    tcfg = cfg.train_config()
    model, tlog = train(init_model(cfg.network_config(), tcfg.seed), samples, tcfg)
    write_round(out, 0, model, tlog, samples, cfg["selftrain.save_volumes"])
    print(f"final loss {tlog.losses[-1]:.6f}; checkpoint {out / 'model_r0.npz'}")


def cmd_selftrain(args, cfg):
    from .selftrain import self_reinforced_train, write_round

    out = _prepare_out(args, cfg)
    samples = _training_samples(_load_cases(args.data), cfg["train.labels"])

    def on_round(r, model, tlog, data):
        write_round(out, r, model, tlog, data, cfg["selftrain.save_volumes"])
        print(f"round {r}: {len(data)} pairs, final loss {tlog.losses[-1]:.6f}")

    self_reinforced_train(samples, cfg.network_config(), cfg.train_config(), cfg.round_plan(), on_round=on_round)


def cmd_predict(args, cfg):
    from .io import list_volumes, load_volume, store_volume
    from .network import load_checkpoint
    from .selftrain import pseudo_label
    from .volume import ScalarVolume

    out = _prepare_out(args, cfg)
    model = load_checkpoint(args.model)
    src = Path(args.data)
    if src.is_dir() and not (src / "manifest.csv").exists():
        items = [(h.stem, load_volume(h)) for h in list_volumes(src)]
        items = [(name, v) for name, v in items if isinstance(v, ScalarVolume)]
    else:
        items = [(c.case_id, c.image) for c in _load_cases(src)]
    if not items:
        raise FileNotFoundError(f"no images in {src}")
    for name, image in items:
        store_volume(pseudo_label(model, image), out / name)
    print(f"wrote {len(items)} label volumes to {out}")


def _truth_volumes(truth, reference: str) -> dict:
    from .io import list_volumes, load_volume

    path = Path(truth)
    if path.suffix == ".csv" or (path / "manifest.csv").exists():
        return {c.case_id: (c.clean if reference == "clean" else c.gt) for c in _load_cases(path)}
    return {h.stem: load_volume(h) for h in list_volumes(path)}


def cmd_evaluate(args, cfg):
    from .io import list_volumes, load_volume
    from .metrics import aggregate, evaluate_case, write_reports_csv

    out = _prepare_out(args, cfg)
    truth = _truth_volumes(args.truth, args.reference or cfg["crossval.reference"])
    reports = []
    for hdr in list_volumes(args.pred):
        if hdr.stem not in truth:
            raise FileNotFoundError(f"no reference labels for {hdr.stem}")
        reports.append(evaluate_case(load_volume(hdr), truth[hdr.stem], hdr.stem, cfg["metrics.hd_percentile"]))
    if not reports:
        raise FileNotFoundError(f"no predictions in {args.pred}")
    write_reports_csv(reports, out / "metrics.csv")
    mean = aggregate(reports)
    write_reports_csv([mean], out / "metrics_mean.csv")
    for t, m in mean.targets.items():
        print(f"{t:8s} DSC {m.dsc:.3f}  HD {m.hd:.3f}  ASD {m.asd:.3f}")


def cmd_crossval(args, cfg):
    import csv

    from .crossval import run_crossval
    from .metrics import write_reports_csv

    out = _prepare_out(args, cfg)
    cases = _load_cases(args.data)
    result = run_crossval(
        cases,
        cfg.network_config(),
        cfg.train_config(),
        cfg.round_plan(),
        k=cfg["crossval.k"],
        seed=cfg["seed"],
        reference=cfg["crossval.reference"],
        percentile=cfg["metrics.hd_percentile"],
        jobs=args.jobs or cfg["jobs"],
    )
    result.to_csv(out / "crossval.csv")
    case_reports = []
    for g in result.groups:
        for r, reps in enumerate(g.case_reports):
            for rep in reps:
                case_reports.append(type(rep)(rep.targets, f"G{g.group + 1}_R{r}_{rep.case_id}"))
        for r, tlog in enumerate(g.logs):
            tlog.to_csv(out / "logs" / f"G{g.group + 1}_trainlog_r{r}.csv")
        for r, entries in enumerate(g.manifests):
            p = out / "manifests" / f"G{g.group + 1}_manifest_r{r}.csv"
            p.parent.mkdir(parents=True, exist_ok=True)
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["case_id", "provenance", "held_out"])
                for cid, prov in entries:
                    w.writerow([cid, prov, int(cid in g.test_ids)])
    write_reports_csv(case_reports, out / "crossval_cases.csv")
    with (out / "folds.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "fold"])
        for c, f in zip(cases, result.plan.assignment):
            w.writerow([c.case_id, f])
    print(f"wrote {out / 'crossval.csv'}")


def cmd_report(args, cfg):
    from .report import render_reports

    out = _prepare_out(args, cfg)
    written = render_reports(Path(args.input), out)
    if not written:
        raise FileNotFoundError(f"nothing to report in {args.input}")
    for p in written:
        print(p)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="boneseg", description="3D humerus/scapula segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="synthetic benchmark tools")
    ph_sub = ph.add_subparsers(dest="phantom_command", required=True)
    gen = ph_sub.add_parser("gen", parents=[common], help="generate a phantom benchmark")
    gen.add_argument("--n", type=int, help="number of cases (default phantom.n_cases)")
    gen.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("preprocess", parents=[common], help="resample, crop/pad and normalize volumes")
    p.add_argument("--input", required=True, help="directory of volumes")
    p.set_defaults(func=cmd_preprocess)

    for name, func, text in (
        ("train", cmd_train, "supervised training (round 0)"),
        ("selftrain", cmd_selftrain, "self-reinforced training rounds"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", required=True, help="benchmark manifest or its directory")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", parents=[common], help="label volumes with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="manifest or directory of images")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="DSC/HD/ASD of predictions")
    p.add_argument("--pred", required=True, help="directory of predicted label volumes")
    p.add_argument("--truth", required=True, help="directory of reference labels or a manifest")
    p.add_argument("--reference", choices=("clean", "gt"), help="manifest column to score against")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", parents=[common], help="k-fold cross-validation table")
    p.add_argument("--data", required=True)
    p.add_argument("--jobs", type=int, help="groups run in parallel")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("report", parents=[common], help="render CSV tables and loss curves")
    p.add_argument("--input", required=True, help="run directory to scan")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"usage error: [config] {exc}", file=sys.stderr)
        return 2
    except BonesegError as exc:
        print(f"error: [{exc.category}] {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError) as exc:
        print(f"error: [io] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
