"""Command-line interface: ``bilstm-ids {gen,pcap2csv,train,eval,predict,params}``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
Settings resolve flag > config file (canonical key=value) > default.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import accounting
from .data import (CLASS_NAMES, NUM_FEATURES, ClassLabel, NormStats, PcapError, SynthProfile,
                   extract_flows, load_flow_csv, materialize, parse_pcap, prepare_splits,
                   save_flow_csv, synth_generate, window_indices)
from .data.flows import FlowCsvError
from .kvtext import read_kv
from .metrics import format_report, per_class_metrics, summary_report
from .model import (BuildError, CheckpointError, ModelConfig, build_model, count_params,
                    init_params, load_checkpoint, save_checkpoint)
from .numerics import make_rng
from .training import (TrainConfig, evaluate, export_history, predict_proba, split_indices,
                       train)


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"input_features", "seed"}
TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "optimizer", "split_ratios"}
PIPELINE_KEYS = {"seed", "sequence_padding"}


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _banner(settings: dict) -> None:
    print("# effective settings")
    for k in sorted(settings):
        print(f"# {k}={settings[k]}")
    sys.stdout.flush()


def _resolve(args, file_keys: set, flag_map: dict) -> dict[str, str]:
    """Merge config-file values and explicit flags into one string dict."""
    merged: dict[str, str] = {}
    if getattr(args, "config", None):
        try:
            kv = read_kv(args.config)
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(kv) - file_keys
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(kv)
    for key, attr in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            merged[key] = v if isinstance(v, str) else str(v)
    return merged


def _model_config(values: dict, input_features: int, seed: int) -> ModelConfig:
    kv = {k: v for k, v in values.items() if k in MODEL_KEYS}
    kv["input_features"] = str(input_features)
    kv["seed"] = str(seed)
    return ModelConfig.from_kv(kv)


def _train_config(values: dict, seed: int) -> TrainConfig:
    kw = {}
    for key, conv in (("epochs", int), ("batch_size", int), ("learning_rate", float),
                      ("optimizer", str)):
        if key in values:
            kw[key] = conv(values[key])
    if "split_ratios" in values:
        kw["split_ratios"] = tuple(float(x) for x in values["split_ratios"].split(","))
    return TrainConfig(shuffle_seed=seed, **kw)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    profile = SynthProfile.load(args.profile) if args.profile else SynthProfile()
    _banner({"out": args.out, "per_class": args.per_class, "seed": args.seed,
             **{f"profile.{k}": v for k, v in profile.to_kv().items()}})
    flows = synth_generate(profile, args.per_class, make_rng(args.seed, "synth"))
    try:
        save_flow_csv(flows, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    counts = Counter(f.label.name for f in flows)
    for name in CLASS_NAMES:
        print(f"{name}={counts[name]}")
    return 0


def cmd_pcap2csv(args) -> int:
    label = ClassLabel.parse(args.label) if args.label else None
    _banner({"in": args.input, "out": args.out, "window": args.window,
             "label": label.name if label else "Normal (placeholder)"})
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc}") from None
    try:
        packets = parse_pcap(data)
    except PcapError as exc:
        raise CliError(f"{args.input}: {exc}") from None
    flows = extract_flows(packets, args.window)
    for f in flows:
        f.label = label or ClassLabel.Normal
    if label is None:
        print("warning: label column set to the placeholder 'Normal'; assign real labels "
              "before training", file=sys.stderr)
    try:
        save_flow_csv(flows, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    print(f"packets={len(packets)}")
    print(f"flows={len(flows)}")
    return 0


def _load_labeled(path):
    try:
        flows = load_flow_csv(path, require_labels=True)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except FlowCsvError as exc:
        raise CliError(str(exc)) from None
    if not flows:
        raise CliError(f"{path}: no flow rows")
    return flows


def cmd_train(args) -> int:
    values = _resolve(args, MODEL_KEYS | TRAIN_KEYS | PIPELINE_KEYS, {
        "epochs": "epochs", "batch_size": "batch_size", "learning_rate": "lr",
        "optimizer": "optimizer", "bilstm_hidden": "bilstm_hidden",
        "dense_sizes": "dense_sizes", "conv_kernels": "conv_kernels",
        "num_classes": "num_classes", "seed": "seed", "sequence_padding": "sequence_padding"})
    seed = int(values.get("seed", 0))
    padding = values.get("sequence_padding", "back")
    try:
        mcfg = _model_config(values, NUM_FEATURES, seed)
        tcfg = _train_config(values, seed)
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}") from None

    # banner keys are canonical config keys, so the banner doubles as a config file
    settings = {k: v for k, v in mcfg.to_kv().items() if k in MODEL_KEYS}
    settings.update({"epochs": tcfg.epochs, "batch_size": tcfg.batch_size,
                     "learning_rate": tcfg.learning_rate, "optimizer": tcfg.optimizer,
                     "split_ratios": ",".join(repr(r) for r in tcfg.split_ratios),
                     "seed": seed, "sequence_padding": padding})
    print(f"# epochs={tcfg.epochs} batch={tcfg.batch_size} lr={tcfg.learning_rate} "
          f"seed={seed} data={args.data} input_features={mcfg.input_features}")
    _banner(settings)

    flows = _load_labeled(args.data)
    if max(int(f.label) for f in flows) >= mcfg.num_classes:
        raise CliError(f"labels exceed num_classes={mcfg.num_classes}")
    try:
        tr, va, te, stats = prepare_splits(flows, mcfg.time_steps, tcfg.split_ratios, seed, padding)
        model = build_model(mcfg)
    except (ValueError, BuildError) as exc:
        raise CliError(str(exc)) from None
    init_params(model, make_rng(seed, "init"))
    print(f"samples train={len(tr)} val={len(va)} test={len(te)}")
    hist = train(model, tr, va, tcfg)

    model.meta.update({f"norm.{k}": v for k, v in stats.to_kv().items()})
    model.meta.update({"sequence_padding": padding, "split_seed": str(seed),
                       "split_ratios": ",".join(repr(r) for r in tcfg.split_ratios)})
    try:
        save_checkpoint(model, args.out_model)
        export_history(hist, args.history)
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}") from None

    print(f"final train_loss={hist.train_loss[-1]:.6f} train_acc={hist.train_accuracy[-1]:.6f}")
    if len(va):
        _, m = evaluate(model, va)
        print(f"validation Accuracy={m.accuracy:.6f} Precision={m.precision:.6f} "
              f"Recall={m.recall:.6f} F1-Score={m.f1:.6f}")
    return 0


def _model_and_stats(path):
    try:
        model = load_checkpoint(path)
        stats = NormStats.from_kv({k[5:]: v for k, v in model.meta.items()
                                   if k.startswith("norm.")})
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except (CheckpointError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None
    return model, stats


def _sequences(model, stats, flows, split="all"):
    idx, labels = window_indices(flows, model.config.time_steps,
                                 model.meta.get("sequence_padding", "back"))
    if split != "all":
        ratios = tuple(float(r) for r in model.meta.get("split_ratios", "0.6,0.2,0.2").split(","))
        parts = split_indices(len(idx), ratios, int(model.meta.get("split_seed", "0")), labels)
        sel = parts[("train", "val", "test").index(split)]
        idx, labels = idx[sel], labels[sel]
    return materialize(flows, idx, stats, labels)


def cmd_eval(args) -> int:
    _banner({"model": ",".join(args.model), "data": args.data, "report": args.report or "",
             "split": args.split, "compare": args.paper_compare})
    flows = _load_labeled(args.data)
    trials, cms, counts = [], [], None
    for path in args.model:
        model, stats = _model_and_stats(path)
        seqs = _sequences(model, stats, flows, args.split)
        if len(seqs) == 0:
            raise CliError("no samples to evaluate")
        cm, m = evaluate(model, seqs)
        trials.append(m)
        cms.append(cm)
        counts = count_params(model)
    rep = summary_report(trials, counts, args.paper_compare)
    names = CLASS_NAMES[:cms[0].counts.shape[0]]
    text = format_report(rep, cms[0], names)
    for name, pm in zip(names, per_class_metrics(cms[0])):
        text += f"class.{name}=precision:{pm.precision:.6f},recall:{pm.recall:.6f},f1:{pm.f1:.6f}\n"
    print(text, end="")
    if args.report:
        try:
            Path(args.report).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot write {args.report}: {exc}") from None
    return 0


def cmd_predict(args) -> int:
    _banner({"model": args.model, "data": args.data, "out": args.out})
    model, stats = _model_and_stats(args.model)
    try:
        flows = load_flow_csv(args.data)
    except OSError as exc:
        raise CliError(f"cannot read {args.data}: {exc}") from None
    except FlowCsvError as exc:
        raise CliError(str(exc)) from None
    seqs = _sequences(model, stats, flows)
    probs = predict_proba(model, seqs.X)
    names = CLASS_NAMES[:model.config.num_classes]
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_start", "src_ip", "dst_ip", "dst_port", "predicted"]
                       + [f"p_{n}" for n in names])
            for row, p in zip(seqs.flow_index, probs):
                f = flows[row[row >= 0][-1]]
                w.writerow([f"{f.window_start:.6f}", f.src_ip, f.dst_ip, f.dst_port,
                            names[int(np.argmax(p))]] + [f"{v:.6f}" for v in p])
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    print(f"samples={len(seqs)}")
    return 0


def cmd_params(args) -> int:
    values = _resolve(args, MODEL_KEYS | TRAIN_KEYS | PIPELINE_KEYS, {
        "bilstm_hidden": "bilstm_hidden", "dense_sizes": "dense_sizes",
        "conv_kernels": "conv_kernels", "num_classes": "num_classes"})
    try:
        cfg = _model_config(values, args.input_features, 0)
        model = build_model(cfg)
    except (ValueError, BuildError) as exc:
        raise CliError(f"invalid configuration: {exc}") from None
    _banner({f"model.{k}": v for k, v in cfg.to_kv().items()})
    print(f"{'layer':<10} {'type':<44} {'trainable':>10} {'all':>10}")
    for name, desc, tr, tot in model.layer_param_counts():
        print(f"{name:<10} {desc:<44} {tr:>10} {tot:>10}")
    trainable, total = count_params(model)
    closed = accounting.closed_form_counts(cfg)
    print(f"total trainable={trainable} all={total}")
    print(f"closed-form trainable={closed[0]} all={closed[1]} "
          f"{'agree' if closed == (trainable, total) else 'DISAGREE'}")
    if args.search:
        target = tuple(int(x) for x in args.target.split(","))
        if len(target) != 2:
            raise CliError("--target takes TRAINABLE,ALL")
        res = accounting.search_widths(target)
        print(f"search target trainable={target[0]} all={target[1]}")
        print(res.explain_gap())
        print(f"configurations evaluated={res.evaluated}")
        if not res.matches:
            print("no match in grid")
        for m in res.matches:
            print("match " + " ".join(f"{k}={v}" for k, v in m.to_kv().items()
                                      if k not in ("seed", "bn_momentum", "bn_epsilon")))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bilstm-ids", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic labeled flow CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--per-class", type=_positive_int, default=100)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--profile", help="SynthProfile key=value file")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("pcap2csv", help="convert a classic pcap into a flow CSV")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--window", type=_positive_float, default=1.0, help="flow window in seconds")
    c.add_argument("--label", help=f"class for every flow ({', '.join(CLASS_NAMES)})")
    c.set_defaults(func=cmd_pcap2csv)

    t = sub.add_parser("train", help="train the hybrid model on a labeled flow CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key=value file with model/training settings")
    t.add_argument("--out-model", required=True)
    t.add_argument("--history", required=True)
    t.add_argument("--seed", type=_seed)
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--bilstm-hidden", help="comma-separated widths, one per BiLSTM layer")
    t.add_argument("--dense-sizes", help="comma-separated hidden dense widths")
    t.add_argument("--conv-kernels", type=_positive_int)
    t.add_argument("--num-classes", type=_positive_int)
    t.add_argument("--sequence-padding", choices=("back", "front"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy, precision, recall, F1 and parameter counts for a checkpoint")
    e.add_argument("--model", required=True, action="append",
                   help="checkpoint; repeat for multi-trial mean reporting")
    e.add_argument("--data", required=True)
    e.add_argument("--report")
    e.add_argument("--split", choices=("all", "train", "val", "test"), default="all",
                   help="re-derive a split recorded in the checkpoint")
    e.add_argument("--paper-compare", action="store_true",
                   help="label the report paper-comparable (within 3 points of 98.93%% accuracy) or divergent")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="per-sample class probabilities")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    pa = sub.add_parser("params", help="per-layer parameter counts")
    pa.add_argument("--config")
    pa.add_argument("--input-features", type=_positive_int, default=NUM_FEATURES)
    pa.add_argument("--bilstm-hidden")
    pa.add_argument("--dense-sizes")
    pa.add_argument("--conv-kernels", type=_positive_int)
    pa.add_argument("--num-classes", type=_positive_int)
    pa.add_argument("--search", action="store_true", help="search widths matching --target")
    pa.add_argument("--target", default="42180,42182")
    pa.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
