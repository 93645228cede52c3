"""Command-line entry point: ``smartbar <command> [options]``.

Exit status is 0 on success, 1 on usage or input errors and 2 when an
evaluation regresses against its ``--baseline`` file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import datasets, evaluation, symbology, tinynet
from .imaging import DegradationSpec, RenderOpts, degrade, read_pgm, render, write_pgm
from .soft_decoder import SoftDecoder

DEFAULT_SEED = 20201018
EXIT_USAGE = 1
EXIT_REGRESSION = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _param(text: str):
    name, _, rng = text.partition("=")
    try:
        parts = [float(x) for x in rng.split(",")]
    except ValueError:
        parts = []
    if not name or len(parts) not in (1, 2):
        raise argparse.ArgumentTypeError(f"expected name=lo,hi or name=value, got {text!r}")
    return name, (parts[0], parts[-1])


# --- shared option groups ------------------------------------------------------

def _add_data(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", help="dataset directory or samples.jsonl (default: generate)")
    g.add_argument("--manifest", help="JSON manifest of [preset, count] pairs to generate")
    g.add_argument("--scale", type=float, default=0.01, help="down-scaling of the preset mix (default 0.01)")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--jobs", type=int, default=1, help="worker threads")


def _add_source(p, modes=True):
    p.add_argument("--source", choices=("soft", "model", "ndjson"), default="soft")
    p.add_argument("--model", help="checkpoint for --source model")
    p.add_argument("--ndjson", help="logit records for --source ndjson")
    p.add_argument("--beta", type=float, default=40.0, help="soft decoder sharpness")
    if modes:
        p.add_argument("--mode", choices=evaluation.MODES, default="mpa")
        p.add_argument("--max", type=int, default=1, dest="max_iter")


def _add_report(p):
    p.add_argument("--report", choices=("json", "markdown"), default="markdown")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--baseline", help="golden counts file; written if absent, else checked")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields (byte-stable reports)")


def _dataset(args) -> List[datasets.Sample]:
    if args.data:
        return datasets.load_dataset(args.data)
    manifest = datasets.load_manifest(args.manifest) if args.manifest else datasets.table1_manifest(args.scale)
    return datasets.generate_dataset(manifest, args.seed, jobs=args.jobs)


def _source(args):
    if args.source == "soft":
        return SoftDecoder(beta=args.beta)
    if args.source == "model":
        if not args.model:
            raise UsageError("--source model needs --model CHECKPOINT")
        return tinynet.load_checkpoint(args.model)
    return None


def _items(args):
    if args.source == "ndjson":
        if not args.ndjson:
            raise UsageError("--source ndjson needs --ndjson FILE")
        return evaluation.ingest_logits(args.ndjson)
    return _dataset(args)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _finish(reports, args, body: str) -> int:
    _emit(body, args.out)
    if args.baseline:
        problems = evaluation.check_baseline(reports, args.baseline)
        for msg in problems:
            print(f"regression: {msg}", file=sys.stderr)
        if problems:
            return EXIT_REGRESSION
    return 0


# --- commands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    samples = _dataset(args)
    index = datasets.save_dataset(samples, args.out_dir)
    print(f"wrote {len(samples)} samples to {index}")
    return 0


def cmd_render(args) -> int:
    seq = symbology.as_sequence(args.digits)
    if not symbology.validate_checksum(seq):
        raise UsageError(f"{args.digits}: check digit does not match")
    opts = RenderOpts(module_width=args.module_width, bar_height=args.bar_height,
                      quiet_zone=args.quiet_zone, canvas=args.canvas)
    write_pgm(args.output, render(symbology.encode(seq), opts))
    return 0


def cmd_degrade(args) -> int:
    img = read_pgm(args.input)
    if args.preset:
        specs = datasets.resolve(args.preset)[1]
    elif args.kind:
        specs = (DegradationSpec(args.kind, dict(args.param or [])),)
    else:
        raise UsageError("give --preset or --kind")
    for k, spec in enumerate(specs):
        step = int(np.random.SeedSequence([args.seed, k]).generate_state(1, np.uint32)[0])
        img = degrade(img, spec, step)
    write_pgm(args.output, img)
    return 0


def cmd_decode(args) -> int:
    src = _source(args)
    if args.source == "ndjson":
        items = _items(args)
    else:
        if not args.images:
            raise UsageError("no images given")
        items = [datasets.Sample(read_pgm(p), (0,) * 13, (), 0, p) for p in args.images]
    variant = evaluation.make_variant(args.mode, src, args.max_iter)
    for item in items:
        seq = variant(item)
        label = item.id if isinstance(item, evaluation.LogitRecord) else item.condition
        print(f"{label}\t{symbology.to_text(seq) if seq is not None else 'NoResult'}")
    return 0


def cmd_eval(args) -> int:
    items = _items(args)
    src = evaluation.CachedSource(_source(args)) if args.source != "ndjson" else None
    name = evaluation.variant_name(args.mode, args.max_iter)
    rep = evaluation.evaluate(evaluation.make_variant(args.mode, src, args.max_iter), items, name, args.jobs)
    timing = not args.no_timing
    if args.report == "json":
        body = json.dumps(rep.to_json(timing), indent=2, sort_keys=True) + "\n"
    else:
        body = evaluation.report_markdown([rep], timing)
    return _finish([rep], args, body)


def cmd_grid(args) -> int:
    items = _items(args)
    sources: Dict[str, object] = {}
    if args.source == "ndjson":
        if args.family != "mpa":
            raise UsageError("precomputed logits support the mpa family only")
        sources["ndjson"] = None
    else:
        sources[args.source] = _source(args)
        for path in args.extra_model or []:
            sources[Path(path).stem] = tinynet.load_checkpoint(path)
    grid = evaluation.compare_grid(sources, args.max_list, items, args.family, args.jobs)
    timing = not args.no_timing
    if args.report == "json":
        body = json.dumps(grid.to_json(timing), indent=2, sort_keys=True) + "\n"
    else:
        body = evaluation.grid_markdown(grid)
    if args.figures:
        from .plotting import plot_grid
        for p in plot_grid(grid, args.figures):
            print(f"wrote {p}", file=sys.stderr)
    return _finish(list(grid.reports.values()), args, body)


def _spec(args) -> tinynet.InputSpec:
    return tinynet.InputSpec(args.width, args.height, not args.no_crop)


def _train_cfg(args) -> tinynet.TrainConfig:
    return tinynet.TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)


def cmd_train(args) -> int:
    stages = [_dataset(args)]
    if args.stage2:
        stages.append(datasets.load_dataset(args.stage2))
    model = tinynet.MultidigitModel.init(tuple(args.hidden), _spec(args), seed=args.seed)
    model, history = tinynet.train_curriculum(model, stages, _train_cfg(args))
    tinynet.save_checkpoint(model, args.output)
    if args.history:
        tinynet.write_history(history, args.history)
    print(f"{model.n_params} parameters, final loss {history[-1]:.4f}" if history else "no epochs run")
    return 0


def cmd_distill(args) -> int:
    teacher = tinynet.load_checkpoint(args.teacher)
    train_set = _dataset(args)
    kd = tinynet.KDConfig(alpha=args.alpha, temperature=args.temperature)
    cfg = tinynet.TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs)
    spec = _spec(args)
    if args.held_out:
        held_out = datasets.load_dataset(args.held_out)
        runs, students = tinynet.compare_distillation(teacher, train_set, held_out, tuple(args.hidden),
                                                      args.seeds, cfg, kd, spec)
        rows = [r.to_json() for r in runs]
    else:
        students = [tinynet.train(tinynet.MultidigitModel.init(tuple(args.hidden), spec, seed=seed), train_set,
                                  replace(cfg, seed=seed), kd=(teacher, kd))[0] for seed in args.seeds]
        rows = [{"seed": seed} for seed in args.seeds]
    if args.output:
        out = Path(args.output)
        for seed, student in zip(args.seeds, students):
            path = out if len(args.seeds) == 1 else out.with_name(f"{out.stem}-seed{seed}{out.suffix}")
            tinynet.save_checkpoint(student, path)
    if args.report == "json":
        body = json.dumps({"alpha": kd.alpha, "temperature": kd.temperature, "runs": rows}, indent=2) + "\n"
    else:
        body = tinynet.distill_markdown(rows, kd)
    _emit(body, args.out)
    return 0


def cmd_ingest(args) -> int:
    if args.export:
        samples = _dataset(args)
        n = evaluation.export_logits(samples, _source(args), args.export)
        print(f"wrote {n} records to {args.export}")
        return 0
    if not args.input:
        raise UsageError("give an NDJSON file to ingest or --export PATH")
    records = evaluation.ingest_logits(args.input)
    grid = evaluation.compare_grid({"ndjson": None}, args.max_list, records, "mpa")
    if args.report == "json":
        body = json.dumps(grid.to_json(not args.no_timing), indent=2, sort_keys=True) + "\n"
    else:
        body = f"{len(records)} records\n\n" + evaluation.grid_markdown(grid)
    return _finish(list(grid.reports.values()), args, body)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smartbar", description="EAN-13 decoding with checksum-constrained candidate search.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a degraded corpus")
    _add_data(g)
    g.add_argument("out_dir")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("render", help="render a 13-digit code as PGM")
    r.add_argument("digits")
    r.add_argument("output")
    r.add_argument("--module-width", type=int, default=2)
    r.add_argument("--bar-height", type=int, default=180)
    r.add_argument("--quiet-zone", type=int, default=20)
    r.add_argument("--canvas", type=int, default=285)
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("degrade", help="apply a preset or a single degradation to a PGM")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--preset", choices=sorted(datasets.PRESETS))
    d.add_argument("--kind")
    d.add_argument("--param", type=_param, action="append", help="name=lo,hi (repeatable)")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_degrade)

    dc = sub.add_parser("decode", help="decode PGM images or logit records")
    dc.add_argument("images", nargs="*")
    _add_source(dc)
    dc.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="evaluate one decoder variant on a corpus")
    _add_data(e)
    _add_source(e)
    _add_report(e)
    e.set_defaults(func=cmd_eval)

    gr = sub.add_parser("grid", help="greedy vs max_iter sweep (accuracy and error tables)")
    _add_data(gr)
    _add_source(gr, modes=False)
    _add_report(gr)
    gr.add_argument("--family", choices=evaluation.MODES[1:], default="mpa")
    gr.add_argument("--max-list", type=_int_list, default=[1, 2, 3, 4])
    gr.add_argument("--extra-model", action="append", help="additional checkpoint row (repeatable)")
    gr.add_argument("--figures", help="directory for accuracy/error plots")
    gr.set_defaults(func=cmd_grid)

    for name, helptext in (("train", "train a multidigit model"), ("distill", "distil a student from a teacher")):
        t = sub.add_parser(name, help=helptext)
        _add_data(t)
        t.add_argument("--hidden", type=_int_list, default=[256] if name == "train" else [64])
        t.add_argument("--width", type=int, default=tinynet.InputSpec.width)
        t.add_argument("--height", type=int, default=tinynet.InputSpec.height)
        t.add_argument("--no-crop", action="store_true")
        t.add_argument("--epochs", type=int, default=tinynet.TrainConfig.epochs)
        t.add_argument("--lr", type=float, default=tinynet.TrainConfig.lr)
        t.add_argument("--batch-size", type=int, default=32)
        if name == "train":
            t.add_argument("--stage2", help="second-stage dataset (curriculum)")
            t.add_argument("--history", help="loss history CSV")
            t.add_argument("output")
            t.set_defaults(func=cmd_train)
        else:
            t.add_argument("--teacher", required=True)
            t.add_argument("--alpha", type=float, default=tinynet.KDConfig.alpha)
            t.add_argument("--temperature", type=float, default=tinynet.KDConfig.temperature)
            t.add_argument("--seeds", type=_int_list, default=[0])
            t.add_argument("--held-out", help="dataset for plain-vs-distilled accuracy")
            t.add_argument("--output", help="student checkpoint path")
            t.add_argument("--report", choices=("json", "markdown"), default="markdown")
            t.add_argument("--out")
            t.set_defaults(func=cmd_distill)

    i = sub.add_parser("ingest", help="evaluate or export NDJSON logit records")
    i.add_argument("input", nargs="?")
    i.add_argument("--export", help="write soft-decoder logits of a corpus to this path")
    _add_data(i)
    _add_source(i, modes=False)
    _add_report(i)
    i.add_argument("--max-list", type=_int_list, default=[1, 2, 3, 4])
    i.set_defaults(func=cmd_ingest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError, evaluation.SchemaError) as exc:
        print(f"smartbar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
