"""``saccade`` command line: fixtures, phase-wise training, simulation, cost and gradient reports.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cost, gradcheck, io
from . import pipeline as P
from .config import ConfigError, RunConfig
from .data import as_arrays, gen_dataset, translating_blob_attention

log = logging.getLogger("saccade")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
PHASES = ("features", "hallucinator", "spatial", "temporal")
TEST_FIRST_ID = 1_000_000
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class PhaseOrderError(UsageError):
    pass


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _prepare_out(args, cfg):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
    except OSError as e:
        raise UsageError(f"cannot write to {out}: {e.strerror}") from None
    return out


def train_split(cfg):
    return as_arrays(gen_dataset(cfg.n_train, cfg.classes, cfg.image_size, cfg.frames, cfg.seed))


def held_out_split(cfg):
    return as_arrays(gen_dataset(cfg.n_test, cfg.classes, cfg.image_size, cfg.frames, cfg.seed, first_id=TEST_FIRST_ID))


def _ckpt(args, name):
    return Path(args.checkpoints or args.out) / f"{name}.ckpt"


def _require(args, phase, needed):
    for prev in needed:
        path = _ckpt(args, prev)
        if not path.exists():
            raise PhaseOrderError(f"phase {phase!r} needs the {prev!r} checkpoint first (missing {path})")
    return [_ckpt(args, prev) for prev in needed]


# ---------------------------------------------------------------------------


def cmd_gen_fixtures(args, cfg):
    out = _prepare_out(args, cfg)
    n = cfg.n_train if args.n is None else args.n
    seqs = gen_dataset(n, cfg.classes, cfg.image_size, cfg.frames, cfg.seed)
    backbone = None
    features = _ckpt(args, "features")
    if args.checkpoints and features.exists():
        backbone = P.load_backbone(features, cfg)
    h, w = cfg.attention_size
    streams = None if backbone is not None else translating_blob_attention(n, cfg.frames, cfg.channels, max(h, w), seed=cfg.seed)
    (out / "videos").mkdir(exist_ok=True)
    (out / "attention").mkdir(exist_ok=True)
    rows = []
    for i, seq in enumerate(seqs):
        sid = seq.params["sequence_id"]
        if backbone is not None:
            att = P.encode(backbone, seq.frames[None], cfg, 0).attention[0]
        else:
            att = streams[i, :, :, :h, :w]
        video_path, att_path = f"videos/seq_{sid:06d}.bin", f"attention/seq_{sid:06d}.attn"
        io.write_fixture(out / video_path, seq.frames)
        io.write_fixture(out / att_path, att)
        rows.append((sid, cfg.seed, seq.label, seq.trajectory, video_path, att_path))
    _write_csv(out / "manifest.csv", ["seq_id", "seed", "label", "trajectory", "video", "attention"], rows)
    print(f"wrote {len(rows)} sequences to {out} (attention from {'backbone' if backbone else 'synthetic streams'})")
    return EXIT_OK


def cmd_train(args, cfg):
    phases = PHASES if args.phase == "all" else (args.phase,)
    needed = PHASES[: PHASES.index(phases[0])]
    _require(args, phases[0], needed)
    out = _prepare_out(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    X, y = train_split(cfg)
    if len(X) == 0:
        raise UsageError("n_train is 0: nothing to train on")
    rows = []
    backbone = P.load_backbone(_ckpt(args, "features"), cfg) if "features" in needed else None
    hal = P.load_hallucinator_ckpt(_ckpt(args, "hallucinator"), cfg) if "hallucinator" in needed else None
    clf = P.load_classifier(_ckpt(args, "spatial"), cfg) if "spatial" in needed else None
    cache = None
    for phase in phases:
        if phase == "features":
            backbone, _, r = P.train_features(X, y, cfg, rng)
            P.save_backbone(out / "features.ckpt", backbone, cfg)
        elif phase == "hallucinator":
            cache = P.encode(backbone, X, cfg, cfg.k)
            hal, r = P.train_hallucinator_phase(backbone, X, cfg, rng, cache)
            P.save_hallucinator_ckpt(out / "hallucinator.ckpt", hal, cfg)
        elif phase == "spatial":
            cache = cache or P.encode(backbone, X, cfg, cfg.k)
            clf, r = P.train_spatial(cache, y, cfg, cfg.k, rng)
            P.save_classifier(out / "spatial.ckpt", clf, cfg)
        else:
            cache = cache or P.encode(backbone, X, cfg, cfg.k)
            policy, tclf, r = P.train_joint(cache, y, clf, hal, cfg, cfg.theta_e, rng, policy=P.new_policy(cfg, rng))
            P.save_temporal(out / "temporal.ckpt", policy, tclf, cfg)
        rows += [(e, term if args.phase != "all" else f"{phase}:{term}", _fmt(v)) for e, term, v in r]
        print(f"phase {phase}: wrote {out / (phase + '.ckpt')}")
    _write_csv(out / "loss.csv", ["epoch", "term", "value"], rows)
    return EXIT_OK


def load_pipeline(args, cfg, mode):
    needed = PHASES if mode == "adaptive" else PHASES[:3]
    _require(args, "simulate", needed)
    backbone = P.load_backbone(_ckpt(args, "features"), cfg)
    hal = P.load_hallucinator_ckpt(_ckpt(args, "hallucinator"), cfg)
    clf = P.load_classifier(_ckpt(args, "spatial"), cfg)
    policy = None
    if mode == "adaptive":
        policy, clf = P.load_temporal(_ckpt(args, "temporal"), cfg)
    return P.Pipeline(cfg, backbone, hal, clf, policy)


def cmd_simulate(args, cfg):
    pipe = load_pipeline(args, cfg, args.mode)
    out = _prepare_out(args, cfg)
    X, y = held_out_split(cfg)
    if len(X) == 0:
        raise UsageError("n_test is 0: nothing to simulate")
    rep = P.evaluate(X, y, pipe, args.mode, jobs=args.jobs)
    report, trace = [], []
    first = TEST_FIRST_ID
    for i, (res, label) in enumerate(zip(rep["results"], rep["labels"])):
        n_full, n_pre, n_skip = (sum(d.status is s for d in res.decisions) for s in P.FrameStatus)
        total = sum(d.flops for d in res.decisions)
        pred = res.prediction
        report.append((first + i, len(res.decisions), n_full, n_pre, n_skip, _fmt(float(total)), pred, int(label), int(pred == label)))
        trace += [(first + i, t, status.value, _fmt(score), m) for t, status, score, m in res.trace]
    _write_csv(out / "report.csv", ["seq_id", "frames", "n_full", "n_pre", "n_skip", "flops_total", "pred", "label", "correct"], report)
    _write_csv(out / "trace.csv", ["seq", "t", "status", "ssim", "m_star"], trace)
    st = rep["stats"]
    summary = [
        ("mode", args.mode), ("sequences", len(X)), ("top1", _fmt(rep["top1"])), ("top5", _fmt(rep["top5"])),
        ("n_full", st.n_full), ("n_pre", st.n_pre), ("n_skip", st.n_skip),
        ("flops_total", _fmt(float(st.total_flops))), ("avg_flops", _fmt(float(st.avg_flops))),
        ("speedup_vs_always_full", _fmt(rep["speedup"])), ("tradeoff_gflops_per_top1", _fmt(rep["tradeoff"])),
    ]
    text = _write_csv(out / "summary.csv", ["metric", "value"], summary)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cost_report(args, cfg):
    cb = P.pipeline_costs(cfg)
    table = P.ToyBackbone(cfg.channels, cfg.head_channels, cfg.footprint).cost_table(cfg.split)
    if args.table:
        try:
            table = cost.LayerCostTable.load(args.table)
        except ValueError as e:
            raise UsageError(str(e)) from None
        cb = cost.breakdown(table, table.split, cb.hallucinator, cb.sampler, cfg.low_size, (cfg.crop_size, cfg.crop_size), cfg.k, cb.classifier)
    rows = [("O_pre", cb.o_pre), ("O_rest", cb.o_rest), ("O_full", cb.o_full), ("O_full-O_pre-O_rest", cb.o_full - cb.o_pre - cb.o_rest)]
    rows += [("O_pre/O_full", cb.o_pre / cb.o_full), ("crop_cost", cb.crop_unit)]
    rows += [(f"scaling_N{n}", c) for n, c in cost.scaling_curve(table, args.sides)]
    if args.gflops is not None:
        if args.top1 is None:
            raise UsageError("--gflops needs --top1")
        rows.append(("tradeoff", cost.tradeoff(args.gflops, args.top1)))
    if args.ref_avg is not None:
        if args.model_avg is None:
            raise UsageError("--ref-avg needs --model-avg")
        rows.append(("speedup", cost.speedup(args.ref_avg, args.model_avg)))
    rows = [(k, _fmt(v)) for k, v in rows]
    if args.out:
        out = _prepare_out(args, cfg)
        text = _write_csv(out / "cost_report.csv", ["metric", "value"], rows)
    else:
        buf = _io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([("metric", "value")] + rows)
        text = buf.getvalue()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = gradcheck.run_suite(cfg.seed, corrupt=args.corrupt)
    rows = [(r.op, f"{r.max_rel_err:.3e}", f"{r.threshold:.0e}", r.verdict) for r in results]
    header = ["op", "max_rel_err", "threshold", "verdict"]
    if args.out:
        out = _prepare_out(args, cfg)
        text = _write_csv(out / "gradcheck.csv", header, rows)
    else:
        buf = _io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([header] + rows)
        text = buf.getvalue()
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# ---------------------------------------------------------------------------


def _sides(text):
    try:
        sides = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sides or min(sides) < 1:
        raise argparse.ArgumentTypeError("sides must be positive")
    return sides


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--jobs", type=_positive, default=argparse.SUPPRESS, help="worker processes for evaluation")

    parser = argparse.ArgumentParser(prog="saccade", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", parents=[common], help="synthetic clips, attention fixtures and a manifest")
    p.add_argument("--n", type=int, default=None, help="number of sequences (default: n_train)")
    p.add_argument("--checkpoints", default=None, help="directory with features.ckpt for backbone attention")
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("train", parents=[common], help="train one phase (or all) and write its checkpoint")
    p.add_argument("--phase", choices=PHASES + ("all",), required=True)
    p.add_argument("--checkpoints", default=None, help="directory with earlier-phase checkpoints (default: --out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", parents=[common], help="evaluate on held-out clips; writes report.csv and trace.csv")
    p.add_argument("--mode", choices=("adaptive", "always_full"), default="adaptive")
    p.add_argument("--checkpoints", default=None, help="checkpoint directory (default: --out)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cost-report", parents=[common], help="per-frame costs, scaling curve and derived metrics")
    p.add_argument("--table", default=None, help="cost table file (kind c_in c_out kernel stride lines plus 'split N')")
    p.add_argument("--sides", type=_sides, default=[64, 112, 224])
    p.add_argument("--gflops", type=float, default=None)
    p.add_argument("--top1", type=float, default=None)
    p.add_argument("--ref-avg", type=float, default=None)
    p.add_argument("--model-avg", type=float, default=None)
    p.set_defaults(func=cmd_cost_report)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every differentiable op")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _setup_logging():
    name = os.environ.get("SACCADE_LOG", "warn").lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level is None:
        log.warning("SACCADE_LOG=%r not one of %s; using warn", name, sorted(LOG_LEVELS))


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    for name, default in (("config", None), ("seed", None), ("out", None), ("jobs", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.command in ("gen-fixtures", "train", "simulate") and not args.out:
        args.out = "out"
    try:
        overrides = {} if args.seed is None else {"seed": args.seed}
        cfg = RunConfig.load(args.config, **overrides)
        return args.func(args, cfg)
    except (ConfigError, UsageError, io.FormatError) as e:
        print(f"saccade: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"saccade: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
