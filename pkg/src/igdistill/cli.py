"""Command-line surface.

Subcommands mirror the experiment pipeline: train-teacher, precompute-logits,
precompute-ig, distill, grid-search, monte-carlo, bench, filtered-eval,
report. Exit codes: 0 success, 2 config error, 3 data error.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import attribution, bench, blocks, data, harness, report
from .config import ConfigError, RunConfig, load_config
from .errors import DataError
from .losses import PRESETS


def _add_data_args(p):
    p.add_argument("--data-kind", choices=("synthetic", "cifar10"))
    p.add_argument("--data-path")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--test-n-per-class", type=int)
    p.add_argument("--data-seed", type=int)


def _add_config_arg(p):
    p.add_argument("--config", help="run config file (key = value sections)")


_ARG_TO_FIELD = {
    "data_kind": "data_kind", "data_path": "data_path",
    "n_per_class": "n_per_class", "test_n_per_class": "test_n_per_class",
    "data_seed": "data_seed", "alpha": "alpha", "temperature": "temperature",
    "gamma": "gamma", "overlay_p": "overlay_p",
    "blocks_removed": "blocks_removed", "seed": "seed", "epochs": "epochs",
    "batch_size": "batch_size", "runs": "runs", "fraction": "fraction",
    "family": "family", "out_dir": "out_dir", "teacher": "teacher",
    "logits": "logits", "attention": "attention", "ig_maps": "ig_maps",
    "use_kd": "use_kd", "use_at": "use_at", "use_ig": "use_ig",
}


def _config_from_args(args):
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else RunConfig()
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from "
                              f"{sorted(PRESETS)}")
        hp = PRESETS[preset]
        cfg = replace(cfg, alpha=hp.alpha, temperature=hp.temperature,
                      gamma=hp.gamma, overlay_p=hp.overlay_p)
    overrides = {}
    for arg, fieldname in _ARG_TO_FIELD.items():
        value = getattr(args, arg, None)
        if value is not None:
            overrides[fieldname] = value
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _load_datasets(cfg):
    if cfg.data_kind == "synthetic":
        train = data.generate_synthetic(cfg.n_per_class, seed=cfg.data_seed,
                                        split="train")
        test = data.generate_synthetic(cfg.test_n_per_class,
                                       seed=cfg.data_seed + 1, split="test")
        return train, test
    if cfg.data_kind == "cifar10":
        if not cfg.data_path:
            raise ConfigError("data kind 'cifar10' requires a data path")
        return data.load_cifar10_binary(cfg.data_path)
    raise ConfigError(f"unknown data kind {cfg.data_kind!r}")


def _train_plain(model, train, test, cfg, seed, config_id):
    return harness.train_student(model, train, test, hyper=cfg.hyper(),
                                 seed=seed, config_id=config_id)


def cmd_train_teacher(args):
    cfg = _config_from_args(args)
    train, test = _load_datasets(cfg)
    teacher = blocks.build_teacher(train.num_classes, cfg.family,
                                   seed=cfg.seed)
    record = _train_plain(teacher, train, test, cfg, cfg.seed, "teacher")
    blocks.save_checkpoint(teacher, args.out)
    print(f"teacher trained: test accuracy "
          f"{record.final_test_accuracy:.4f}, saved to {args.out}")
    return 0


def cmd_precompute_logits(args):
    cfg = _config_from_args(args)
    train, _ = _load_datasets(cfg)
    teacher = blocks.load_checkpoint(args.teacher)
    outputs = harness.precompute_teacher_outputs(
        teacher, train, tap=args.tap, attention_power=args.attention_power)
    harness.save_teacher_outputs(args.out, outputs, train.checksum())
    extra = "" if args.tap is None else f" + attention maps (tap {args.tap})"
    print(f"wrote teacher logits{extra} for {len(train)} images to "
          f"{args.out}.*")
    return 0


def cmd_precompute_ig(args):
    cfg = _config_from_args(args)
    train, _ = _load_datasets(cfg)
    teacher = blocks.load_checkpoint(args.teacher)
    ig_cfg = attribution.IGConfig(steps=args.steps)
    attribution.precompute_dataset(teacher, train, ig_cfg, args.out)
    if not args.skip_convergence_check:
        probe = attribution.IGConfig(steps=args.steps,
                                     target=int(train.labels[0]))
        try:
            ratio = attribution.convergence_ratio(teacher, train.images[0],
                                                  probe)
            if ratio > 0.5:
                print(f"warning: doubling the step count only shrinks the "
                      f"completeness residual by {ratio:.2f}x; consider "
                      f"--steps {2 * args.steps}", file=sys.stderr)
        except attribution.DegenerateBaselineError:
            pass
    print(f"wrote {len(train)} attribution maps ({args.steps} steps) to "
          f"{args.out}")
    return 0


def _prepare_distill_inputs(cfg, train):
    """Teacher model, logits/attention stores and IG store per the config."""
    teacher = None
    teacher_logits = None
    teacher_attn = None
    ig_store = None
    needs_teacher = cfg.use_kd or cfg.use_at or cfg.use_ig
    if needs_teacher:
        if not cfg.teacher:
            raise ConfigError("use_kd/use_at/use_ig require [paths] teacher")
        teacher = blocks.load_checkpoint(cfg.teacher)
    student_spec = None
    if teacher is not None:
        student_spec = blocks.derive_student(teacher.spec, cfg.blocks_removed)
    else:
        base = blocks.teacher_spec(train.num_classes, cfg.family)
        student_spec = blocks.derive_student(base, cfg.blocks_removed)

    if cfg.use_kd or cfg.use_at:
        fingerprint = blocks.model_fingerprint(teacher)
        tap = student_spec.attention_source if cfg.use_at else None
        if cfg.logits:
            outputs = harness.load_teacher_outputs(
                cfg.logits, expect_fingerprint=fingerprint,
                expect_dataset_sha=train.checksum())
            if cfg.use_at and outputs.tap != tap:
                raise DataError(
                    f"teacher attention was tapped at block {outputs.tap} "
                    f"but the student needs block {tap}; re-run "
                    "precompute-logits with the matching tap")
        else:
            outputs = harness.precompute_teacher_outputs(
                teacher, train, tap=tap,
                attention_power=cfg.attention_power)
        if cfg.use_kd:
            teacher_logits = outputs.logits
        if cfg.use_at:
            teacher_attn = outputs.attention_maps
    if cfg.use_ig:
        if not cfg.ig_maps:
            raise ConfigError("use_ig requires [paths] ig_maps (run "
                              "precompute-ig first)")
        ig_store = attribution.load_ig_store(
            cfg.ig_maps,
            expect_fingerprint=blocks.model_fingerprint(teacher),
            expect_dataset_sha=train.checksum())
    return teacher, student_spec, teacher_logits, teacher_attn, ig_store


def _run_config_id(cfg, teacher_spec_obj, student_spec):
    cf = blocks.compression_factor(teacher_spec_obj, student_spec)
    return f"{cfg.method_name()}|cf={cf:.2f}"


def cmd_distill(args):
    cfg = _config_from_args(args)
    cfg.validate_paths()
    train, test = _load_datasets(cfg)
    teacher, student_spec, teacher_logits, teacher_attn, ig_store = \
        _prepare_distill_inputs(cfg, train)
    base_spec = (teacher.spec if teacher is not None
                 else blocks.teacher_spec(train.num_classes, cfg.family))
    config_id = _run_config_id(cfg, base_spec, student_spec)
    records = []
    last_student = None
    for i in range(cfg.runs):
        seed = cfg.seed + i
        student = blocks.build_model(student_spec, seed=seed)
        records.append(harness.train_student(
            student, train, test, hyper=cfg.hyper(), seed=seed,
            teacher_logits=teacher_logits, teacher_attn=teacher_attn,
            ig_store=ig_store, config_id=config_id))
        last_student = student
    summaries = [report.MethodSummary(
        method=cfg.method_name(), summary=harness.summarize(records),
        compression_factor=blocks.compression_factor(base_spec,
                                                     student_spec))]
    paths = report.write_report(records, summaries, cfg.out_dir)
    if args.save_student:
        blocks.save_checkpoint(last_student, args.save_student)
    accs = [r.final_test_accuracy for r in records]
    print(f"{config_id}: mean test accuracy {np.mean(accs):.4f} over "
          f"{cfg.runs} run(s); report in {paths['runs']}")
    return 0


def cmd_grid_search(args):
    cfg = _config_from_args(args)
    cfg.validate_paths()
    train, test = _load_datasets(cfg)
    axes = {}
    for spec_str in args.axis or ["alpha=0.0005,0.005,0.01,0.025,0.05",
                                  "temperature=1.5,2,2.5,3,4"]:
        name, _, values = spec_str.partition("=")
        if name not in ("alpha", "temperature", "overlay_p", "gamma"):
            raise ConfigError(f"unknown grid axis {name!r}")
        try:
            axes[name] = [float(v) for v in values.split(",") if v]
        except ValueError as exc:
            raise ConfigError(f"bad axis values in {spec_str!r}") from exc
    teacher, student_spec, teacher_logits, teacher_attn, ig_store = \
        _prepare_distill_inputs(cfg, train)

    def run_fn(params, seed):
        run_cfg = replace(cfg, **params)
        student = blocks.build_model(student_spec, seed=seed)
        return harness.train_student(
            student, train, test, hyper=run_cfg.hyper(), seed=seed,
            teacher_logits=teacher_logits, teacher_attn=teacher_attn,
            ig_store=ig_store,
            config_id=";".join(f"{k}={v}" for k, v in params.items()))

    cells, best = harness.grid_search(axes, args.runs_per_cell, run_fn,
                                      master_seed=cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "grid.csv")
    names = list(axes)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names + ["mean", "std", "max", "min", "n",
                                   "best"]) + "\n")
        for i, cell in enumerate(cells):
            row = [repr(cell.params[n]) for n in names]
            s = cell.summary
            row += [repr(s.mean), repr(s.std), repr(s.max), repr(s.min),
                    str(s.n), "1" if i == best else "0"]
            fh.write(",".join(row) + "\n")
    print(f"grid search over {len(cells)} cells written to {out_path}; "
          f"best cell: {cells[best].params} "
          f"(mean accuracy {cells[best].summary.mean:.4f})")
    return 0


def cmd_monte_carlo(args):
    cfg = _config_from_args(args)
    cfg.validate_paths()
    train, test = _load_datasets(cfg)
    teacher, student_spec, teacher_logits, teacher_attn, ig_store = \
        _prepare_distill_inputs(cfg, train)
    base_spec = (teacher.spec if teacher is not None
                 else blocks.teacher_spec(train.num_classes, cfg.family))

    def make_run_fn(with_teacher, config_id):
        def run_fn(k, seed, subset):
            student = blocks.build_model(student_spec, seed=seed)
            return harness.train_student(
                student, train, test, hyper=cfg.hyper(), seed=seed,
                teacher_logits=teacher_logits if with_teacher else None,
                teacher_attn=teacher_attn if with_teacher else None,
                ig_store=ig_store if with_teacher else None,
                subset_indices=subset, subsample_fraction=args.fraction,
                config_id=config_id)
        return run_fn

    method_id = _run_config_id(cfg, base_spec, student_spec)
    method_records = harness.monte_carlo(
        make_run_fn(True, method_id), len(train), args.runs, args.fraction,
        master_seed=cfg.seed, batch_size=cfg.batch_size)
    records = list(method_records)
    summaries = []
    cf = blocks.compression_factor(base_spec, student_spec)
    if cfg.method_name() != "student":
        baseline_id = f"student|cf={cf:.2f}"
        baseline_records = harness.monte_carlo(
            make_run_fn(False, baseline_id), len(train), args.runs,
            args.fraction, master_seed=cfg.seed, batch_size=cfg.batch_size)
        records = baseline_records + records
        summaries.append(report.MethodSummary(
            method="student", summary=harness.summarize(baseline_records),
            compression_factor=cf))
        summaries.append(report.MethodSummary(
            method=cfg.method_name(),
            summary=harness.summarize(method_records, baseline_records),
            compression_factor=cf))
    else:
        summaries.append(report.MethodSummary(
            method="student", summary=harness.summarize(method_records),
            compression_factor=cf))
    paths = report.write_report(records, summaries, cfg.out_dir)
    print(f"monte carlo: {args.runs} runs at fraction {args.fraction}; "
          f"summary in {paths['summary']}")
    return 0


def cmd_bench(args):
    cfg = _config_from_args(args)
    if args.kernels:
        rows = bench.compare_kernel_backends()
        print(f"kernel backends on {bench.host_descriptor()}")
        for row in rows:
            n, c, h, w, o, k, s = row["shape"]
            print(f"  conv {c}->{o} k{k} s{s} on {n}x{h}x{w}: "
                  f"{row['backend']:>6} {row['seconds'] * 1e3:8.2f} ms")
        return 0
    spec = blocks.teacher_spec(10, cfg.family)
    fam_removals = blocks.student_removals(cfg.family)
    named = [("teacher", blocks.build_model(spec, seed=0))]
    for n in fam_removals:
        named.append((f"student-{n}",
                      blocks.build_model(blocks.derive_student(spec, n),
                                         seed=0)))
    rng = np.random.default_rng(cfg.seed)
    batch = rng.random((args.batch_size, *spec.input_shape),
                       dtype=np.float32)
    reports = bench.bench_models(named, batch,
                                 measured_iters=args.measured_iters)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "bench.csv")
    report.write_bench_csv(out_path, reports)
    for r in reports:
        print(f"  {r.model_id:>10}: {r.param_count:>9} params, "
              f"{r.mean_batch_latency_s * 1e3:9.2f} ms/batch, "
              f"speedup {r.speedup_vs_reference:6.2f}x")
    print(f"bench table written to {out_path}")
    return 0


def cmd_filtered_eval(args):
    cfg = _config_from_args(args)
    _, test = _load_datasets(cfg)
    model = blocks.load_checkpoint(args.model)
    teacher = blocks.load_checkpoint(args.teacher)
    try:
        result = harness.filtered_eval(model, test, teacher)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(f"teacher-filtered evaluation on {result.kept}/{result.total} "
          f"samples: raw accuracy {result.raw_accuracy:.4f}, balanced "
          f"accuracy {result.balanced_accuracy:.4f}")
    return 0


def cmd_report(args):
    records = report.read_runs_csv(args.runs)
    by_id = {}
    for r in records:
        by_id.setdefault(r.config_id, []).append(r)
    baseline_key = None
    for key in by_id:
        if key.split("|")[0] == args.baseline:
            baseline_key = key
            break
    summaries = []
    for key, recs in by_id.items():
        method, _, cf_part = key.partition("|cf=")
        cf = float(cf_part) if cf_part else None
        baseline_recs = by_id.get(baseline_key)
        use_baseline = (baseline_key is not None and key != baseline_key
                        and baseline_recs is not None
                        and len(baseline_recs) == len(recs))
        summary = harness.summarize(
            recs, baseline_recs if use_baseline else None)
        delta = None
        if use_baseline:
            delta = summary.mean - harness.summarize(baseline_recs).mean
        summaries.append(report.MethodSummary(
            method=method, summary=summary, delta_acc=delta,
            compression_factor=cf))
    paths = report.write_report(records, summaries, args.out_dir)
    print(f"report written: {paths['summary']}, {paths['curves']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="igdistill",
        description="Model compression via knowledge distillation with "
                    "attribution-map data augmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train and save a teacher")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--family", choices=("micronet", "mobilenetv2"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("precompute-logits",
                       help="store eval-mode teacher logits (and attention)")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--tap", type=int)
    p.add_argument("--attention-power", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_precompute_logits)

    p = sub.add_parser("precompute-ig",
                       help="store aggregated attribution maps")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--skip-convergence-check", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_precompute_ig)

    p = sub.add_parser("distill", help="train a student")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--overlay-p", dest="overlay_p", type=float)
    p.add_argument("--blocks-removed", dest="blocks_removed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--use-kd", dest="use_kd", action="store_const",
                   const=True)
    p.add_argument("--use-at", dest="use_at", action="store_const",
                   const=True)
    p.add_argument("--use-ig", dest="use_ig", action="store_const",
                   const=True)
    p.add_argument("--teacher", dest="teacher")
    p.add_argument("--logits", dest="logits")
    p.add_argument("--ig-maps", dest="ig_maps")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--save-student")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("grid-search", help="hyperparameter grid")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--axis", action="append",
                   help="axis as name=v1,v2,... (repeatable)")
    p.add_argument("--runs-per-cell", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--blocks-removed", dest="blocks_removed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_grid_search)

    p = sub.add_parser("monte-carlo",
                       help="repeated runs on random training subsets")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--blocks-removed", dest="blocks_removed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_monte_carlo)

    p = sub.add_parser("bench", help="latency/memory accounting")
    _add_config_arg(p)
    p.add_argument("--family", choices=("micronet", "mobilenetv2"))
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--measured-iters", type=int, default=10)
    p.add_argument("--kernels", action="store_true",
                   help="compare kernel backends instead of models")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("filtered-eval",
                       help="evaluate on the teacher-correct subset")
    _add_config_arg(p)
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--teacher", required=True)
    p.set_defaults(fn=cmd_filtered_eval)

    p = sub.add_parser("report", help="summaries and curves from runs.csv")
    p.add_argument("--runs", required=True, help="path to runs.csv")
    p.add_argument("--baseline", default="student")
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.set_defaults(fn=cmd_report)

    return parser


def cli_dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
