"""``sma`` command line: gen, train, eval, score, inspect and gradcheck.

Exit codes: 0 success, 1 a check failed (gradcheck), 2 usage or validation
error.  Every command validates its inputs before writing anything.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import GRADCHECK, ConfigError, load_config
from .features.instances import InstanceFormatError, load_instances, save_instances
from .features.synthetic import RULES, RULE_NAMES, generate_dataset, resolve_rule
from .metrics import EvalRecord, evaluate, read_predictions
from .model import CapacityError, SMAModel
from .numerics.container import ContainerError

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
METRICS = ("accuracy", "anls", "ocr_ub")


class UsageError(Exception):
    pass


def _out_path(raw: str) -> Path:
    p = Path(raw)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    if p.is_dir():
        raise UsageError(f"output path is a directory: {p}")
    return p


def _metric_list(raw: str) -> list[str]:
    wanted = [m.strip() for m in raw.split(",") if m.strip()]
    bad = [m for m in wanted if m not in METRICS]
    if bad or not wanted:
        raise UsageError(f"--metrics must be a comma list drawn from {','.join(METRICS)}")
    return wanted


def _load_data(path: str, cfg) -> list:
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    try:
        return load_instances(path, n_max=cfg.n_max, m_max=cfg.m_max)
    except InstanceFormatError as exc:
        raise UsageError(str(exc)) from None


def _load_ckpt(path: str):
    from .training import load_checkpoint

    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (ContainerError, ConfigError, KeyError) as exc:
        raise UsageError(f"bad checkpoint: {exc}") from None


def _check_fit(model: SMAModel, instances) -> None:
    for inst in instances:
        try:
            model.check_instance(inst)
        except CapacityError as exc:
            raise UsageError(f"data does not fit the model: {exc}") from None


def _report_lines(report) -> list[str]:
    return ["metric\tvalue"] + [f"{k}\t{v:.6f}" for k, v in report.to_dict().items()]


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    try:
        rule = resolve_rule(args.rule)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    out = _out_path(args.out)
    save_instances(out, generate_dataset(rule, args.count, args.seed))
    print(f"wrote {args.count} {RULE_NAMES[rule]} instances to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .training import Trainer, save_checkpoint, write_loss_log

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    instances = _load_data(args.data, cfg)
    if not instances and args.steps > 0:
        raise UsageError("cannot train on an empty dataset")
    ckpt = _out_path(args.out_ckpt)
    log_path = _out_path(args.loss_log or f"{ckpt}.loss.tsv")
    plot_path = _out_path(args.plot) if args.plot else None
    try:
        model = SMAModel(cfg)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot build model from config: {exc}") from None
    _check_fit(model, instances)

    trainer = Trainer(model)
    every = max(1, args.steps // 20)

    def progress(rec):
        if not args.quiet and (rec.step % every == 0 or rec.step == args.steps):
            print(f"step {rec.step}\tloss {rec.loss:.6f}\tlr {rec.lr:.2e}", file=sys.stderr)

    log = trainer.fit(instances, args.steps, on_step=progress)
    digest = save_checkpoint(ckpt, trainer)
    write_loss_log(log_path, log)
    if plot_path:
        plot_loss_curve(log, plot_path)
    print(f"checkpoint\t{ckpt}\nsha256\t{digest}\nloss_log\t{log_path}")
    if plot_path:
        print(f"loss_plot\t{plot_path}")
    return EXIT_OK


def _predict(model: SMAModel, instances, batch_size: int = 64):
    out = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        out.extend(model.decode(model.batch(chunk)))
    return out


def cmd_eval(args) -> int:
    metrics = _metric_list(args.metrics)
    trainer = _load_ckpt(args.ckpt)
    model = trainer.model
    instances = _load_data(args.data, model.cfg)
    _check_fit(model, instances)
    out = _out_path(args.out) if args.out else None
    pred_path = _out_path(args.predictions) if args.predictions else None

    decoded = _predict(model, instances)
    records = [EvalRecord(i.id, d.answer, i.answers, i.ocr_tokens) for i, d in zip(instances, decoded)]
    report = evaluate(records, metrics)
    text = "\n".join(_report_lines(report)) + "\n"
    sys.stdout.write(text)
    if out:
        out.write_text(text, encoding="utf-8")
    if pred_path:
        lines = [json.dumps(d.to_dict(), sort_keys=True) for d in decoded]
        pred_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return EXIT_OK


def cmd_score(args) -> int:
    """Score an existing prediction file against an instance file."""
    metrics = _metric_list(args.metrics)
    if not Path(args.predictions).is_file():
        raise UsageError(f"prediction file not found: {args.predictions}")
    if not Path(args.data).is_file():
        raise UsageError(f"data file not found: {args.data}")
    try:
        instances = load_instances(args.data)
    except InstanceFormatError as exc:
        raise UsageError(str(exc)) from None
    try:
        preds = read_predictions(args.predictions)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from None
    missing = [i.id for i in instances if i.id not in preds]
    if missing:
        raise UsageError(f"{len(missing)} instance(s) lack a prediction, e.g. {missing[0]}")
    records = [EvalRecord(i.id, preds[i.id], i.answers, i.ocr_tokens) for i in instances]
    sys.stdout.write("\n".join(_report_lines(evaluate(records, metrics))) + "\n")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .diagnostics import attention_dump
    from .plotting import plot_attention

    trainer = _load_ckpt(args.ckpt)
    model = trainer.model
    instances = _load_data(args.data, model.cfg)
    by_id = {i.id: i for i in instances}
    if args.instance_id not in by_id:
        raise UsageError(f"unknown instance id {args.instance_id!r}")
    inst = by_id[args.instance_id]
    _check_fit(model, [inst])
    out = _out_path(args.out) if args.out else None
    plot_path = _out_path(args.plot) if args.plot else None

    text = json.dumps(attention_dump(model, inst), indent=2, sort_keys=True) + "\n"
    if out:
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if plot_path:
        plot_attention(json.loads(text), plot_path)
        print(f"attention_plot\t{plot_path}", file=sys.stderr)
    return EXIT_OK


def _double_block(block: str):
    def hook(name, grad):
        return grad * 2.0 if name == block else grad

    return hook


def cmd_gradcheck(args) -> int:
    from .diagnostics import model_gradcheck

    try:
        cfg = load_config(args.config) if args.config else GRADCHECK
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    hook = None
    if args.double_grad:
        names = set(SMAModel(cfg).params)
        if args.double_grad not in names:
            raise UsageError(f"unknown parameter block {args.double_grad!r}")
        hook = _double_block(args.double_grad)
    max_coords = args.max_coords if args.max_coords > 0 else None
    report = model_gradcheck(cfg, seed=args.seed, max_coords=max_coords, grad_hook=hook)
    print("block\tmax_rel_err\tchecked\tstatus")
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"PASS\tmax_rel_err={report.max_error:.3e}\ttol={report.tol:g}")
        return EXIT_OK
    worst = sorted(report.failed, key=lambda n: -report.errors[n])
    print(f"FAIL\t{len(worst)} block(s)\t" + ",".join(f"{n}={report.errors[n]:.3e}" for n in worst))
    return EXIT_CHECK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sma", description="Structured multimodal attention for text-based VQA.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance file")
    g.add_argument("--rule", required=True, help=f"one of {', '.join(RULES)} (or its long name)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from scratch and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON config path or preset name (default: $SMA_CONFIG, then desk)")
    t.add_argument("--out-ckpt", required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--loss-log", help="loss log path (default: <out-ckpt>.loss.tsv)")
    t.add_argument("--plot", help="write a loss-curve PNG here")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="decode a dataset and report metrics")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--metrics", default=",".join(METRICS))
    e.add_argument("--out", help="also write the report here")
    e.add_argument("--predictions", help="write decoded answers (JSON lines) here")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="score a prediction file without a model")
    s.add_argument("--data", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--metrics", default=",".join(METRICS))
    s.set_defaults(func=cmd_score)

    i = sub.add_parser("inspect", help="dump attention weights and the decode trace for one instance")
    i.add_argument("--data", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--instance-id", required=True)
    i.add_argument("--out", help="write the JSON dump here instead of stdout")
    i.add_argument("--plot", help="write an attention figure PNG here")
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    c.add_argument("--config", help="JSON config path or preset name (default: gradcheck preset)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-coords", type=int, default=16, help="coordinates sampled per block; 0 checks all")
    c.add_argument("--double-grad", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sma {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
