"""Command-line entry point: ``neurorrm <subcommand> ...``.

Exit status: 0 on success, 1 for usage or configuration errors, 2 when a
command fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import cnn as cnn_mod
from . import snn as snn_mod
from .config import ConfigError, load_config
from .encoding import EncoderSpec, TemParams
from .evaluation import evaluate_cnn, evaluate_snn
from .metrics import (COMPARE_FIELDS, MetricsReport, compare_models, read_table,
                      write_table)
from .oracle import ObjectiveWeights, load_dataset, relabel, save_dataset
from .pipeline import (features_path, generate_dataset, load_features, read_manifest,
                       version_string, write_manifest)
from .sweep import SweepReference, SweepSpec, parse_values, run_sweep, write_sweep

log = logging.getLogger("neurorrm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers ---------------------------------------------------------------------

def _overrides(args, mapping: dict[str, tuple[str, str]]) -> dict:
    out: dict = {}
    for attr, (section, key) in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            out.setdefault(section, {})[key] = v
    return out


def _encoder_spec(cfg: dict) -> EncoderSpec:
    e = cfg["encoder"]
    return EncoderSpec(e["kind"], int(e["T"]),
                       TemParams(e["alpha_u"], e["alpha_v"], e["threshold"], int(e["replicas"])))


def _neuron(cfg: dict) -> snn_mod.NeuronParams:
    s = cfg["snn"]
    return snn_mod.NeuronParams(s["tau_syn"], s["tau_mem"], s["threshold"], s["surrogate_width"])


def _snn_hyper(cfg: dict) -> snn_mod.TrainHyper:
    s = cfg["snn"]
    return snn_mod.TrainHyper(rho=s["rho"], rho_f=s["rho_f"], epochs=int(s["epochs"]),
                              batch_size=int(s["batch_size"]), lr=s["lr"], seed=int(s["seed"]),
                              detach_reset=bool(s["detach_reset"]))


def _cnn_hyper(cfg: dict) -> cnn_mod.SgdHyper:
    c = cfg["cnn"]
    return cnn_mod.SgdHyper(lr=c["lr"], momentum=c["momentum"], nesterov=bool(c["nesterov"]),
                            epochs=int(c["epochs"]), batch_size=int(c["batch_size"]),
                            seed=int(c["seed"]), loss=c["loss"], patience=int(c["patience"]))


def _flat(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(len(x), -1)


def _need_dir(path: str) -> Path:
    p = Path(path)
    if not (p / "manifest.json").exists():
        raise UsageError(f"{path} is not a dataset directory (no manifest.json)")
    return p


def _progress_printer(label: str, every: int = 500):
    def cb(i, n):
        if i % every == 0 or i == n:
            print(f"{label}: {i}/{n}", file=sys.stderr, flush=True)
    return cb


# --- commands --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, _overrides(args, {
        "samples": ("data", "samples"), "seed": ("data", "seed"),
        "pmax": ("data", "p_max_w"), "wmax": ("data", "w_max_hz"),
        "beta0": ("data", "beta0"), "beta1": ("data", "beta1"), "beta2": ("data", "beta2"),
        "min_support": ("data", "min_support")}))
    if args.store_grids:
        cfg["data"]["store_grids"] = True
    t0 = time.perf_counter()
    ds = generate_dataset(args.out, cfg["data"], progress=_progress_printer("gen-data"),
                          extra_manifest={"command": "gen-data", "config": cfg})
    m = read_manifest(args.out)
    print(json.dumps({"samples": len(ds), "classes": ds.n_classes, "support": m["support"],
                      "labels_sha256": m["labels_sha256"],
                      "features": {k: v["sha256"] for k, v in m["features"].items()},
                      "seconds": round(time.perf_counter() - t0, 2)}, indent=1))
    return EXIT_OK


def cmd_label(args) -> int:
    src = _need_dir(args.data)
    ds = load_dataset(src)
    m = read_manifest(src)
    weights = ObjectiveWeights(
        args.beta0 if args.beta0 is not None else ds.weights.beta0,
        args.beta1 if args.beta1 is not None else ds.weights.beta1,
        args.beta2 if args.beta2 is not None else ds.weights.beta2)
    min_support = args.min_support if args.min_support is not None else m["min_support"]
    new = relabel(ds, p_max=args.pmax if args.pmax is not None else ds.p_max,
                  w_max=args.wmax if args.wmax is not None else ds.w_max,
                  weights=weights, min_support=min_support)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    if out.resolve() != src.resolve():
        for f in m.get("features", {}).values():
            shutil.copy2(src / f["file"], out / f["file"])
        if m.get("grids"):
            shutil.copy2(src / m["grids"], out / m["grids"])
            shutil.copy2(src / (m["grids"] + ".json"), out / (m["grids"] + ".json"))
    keep = {k: m[k] for k in ("features", "percentile", "config") if k in m}
    keep.update({"version": version_string(), "command": "label"})
    save_dataset(new, out, min_support, extra=keep)
    print(json.dumps({"classes": new.n_classes, "support": list(new.catalog.support)}))
    return EXIT_OK


def cmd_train_snn(args) -> int:
    cfg = load_config(args.config, _overrides(args, {
        "encoder": ("encoder", "kind"), "T": ("encoder", "T"), "ds": ("snn", "ds"),
        "epochs": ("snn", "epochs"), "seed": ("snn", "seed"), "rho": ("snn", "rho")}))
    data = _need_dir(args.data)
    ds = load_dataset(data)
    m = read_manifest(data)
    X = _flat(load_features(data, int(cfg["snn"]["ds"]), dataset=ds))
    enc = _encoder_spec(cfg)
    R = enc.encode(X, seeds=ds.sample_seeds)
    net = snn_mod.init_snn(R.shape[1], ds.n_classes, int(cfg["snn"]["seed"]),
                           tuple(cfg["snn"]["hidden"]), _neuron(cfg), cfg["snn"]["init_gain"])

    def prog(epoch, h):
        va = f" val_acc={h.val_accuracy[-1]:.4f}" if h.val_accuracy else ""
        print(f"epoch {epoch}: loss={h.train_loss[-1]:.5f}{va}", file=sys.stderr, flush=True)

    net, hist = snn_mod.train(net, snn_mod.EncodedSet(R[ds.train_idx], ds.labels[ds.train_idx]),
                              snn_mod.EncodedSet(R[ds.val_idx], ds.labels[ds.val_idx]),
                              _snn_hyper(cfg), progress=prog)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pre = {"ds": int(cfg["snn"]["ds"]), "percentile": m.get("percentile", 99.0)}
    snn_mod.save_snn(out, net, enc.to_dict(), pre, int(cfg["snn"]["seed"]),
                     {"dataset": str(data.resolve()), "labels_sha256": m["labels_sha256"],
                      "history": hist.to_dict(), "config": cfg})
    write_manifest(out.parent, out.name, {"kind": "snn", "config": cfg, "history": hist.to_dict(),
                                          "weights_sha256": net.weight_hash(),
                                          "dataset": str(data.resolve())})
    print(json.dumps({"best_val_accuracy": max(hist.val_accuracy) if hist.val_accuracy else None,
                      "best_epoch": hist.best_epoch}))
    return EXIT_OK


def cmd_train_cnn(args) -> int:
    cfg = load_config(args.config, _overrides(args, {
        "ds": ("cnn", "ds"), "epochs": ("cnn", "epochs"), "seed": ("cnn", "seed")}))
    data = _need_dir(args.data)
    ds = load_dataset(data)
    m = read_manifest(data)
    X = load_features(data, int(cfg["cnn"]["ds"]), dataset=ds)
    spec = cnn_mod.CnnSpec(tuple(X.shape[1:]), ds.n_classes, tuple(cfg["cnn"]["conv_filters"]),
                           dense=tuple(cfg["cnn"]["dense"]))
    if cfg["cnn"]["standardize"]:
        spec = cnn_mod.standardized(spec, X[ds.train_idx])

    def prog(epoch, h):
        print(f"epoch {epoch}: loss={h.train_loss[-1]:.5f} val_loss={h.val_loss[-1]:.5f} "
              f"val_acc={h.val_accuracy[-1]:.4f}", file=sys.stderr, flush=True)

    params, hist = cnn_mod.cnn_train(spec, np.asarray(X[ds.train_idx]), ds.labels[ds.train_idx],
                                     np.asarray(X[ds.val_idx]), ds.labels[ds.val_idx],
                                     _cnn_hyper(cfg), progress=prog)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pre = {"ds": int(cfg["cnn"]["ds"]), "percentile": m.get("percentile", 99.0)}
    cnn_mod.save_cnn(out, spec, params, pre, int(cfg["cnn"]["seed"]),
                     {"dataset": str(data.resolve()), "labels_sha256": m["labels_sha256"],
                      "history": hist.to_dict(), "config": cfg})
    write_manifest(out.parent, out.name, {"kind": "cnn", "config": cfg, "history": hist.to_dict(),
                                          "weights_sha256": cnn_mod.weight_hash(params),
                                          "dataset": str(data.resolve())})
    print(json.dumps({"best_val_accuracy": max(hist.val_accuracy) if hist.val_accuracy else None,
                      "best_epoch": hist.best_epoch, "params": cnn_mod.param_count(spec)}))
    return EXIT_OK


def _evaluate_model(model_path: Path, data: Path, split: str) -> tuple[str, MetricsReport, dict]:
    from .checkpoint import load_arrays
    header, _ = load_arrays(model_path)
    ds = load_dataset(data)
    idx = ds.split(split)
    caps = ds.catalog.capacities()
    kind = header.get("model")
    if kind == "snn":
        net, header = snn_mod.load_snn(model_path)
        if net.sizes[-1] != ds.n_classes:
            raise UsageError("model and dataset disagree on the number of classes")
        X = _flat(load_features(data, int(header["preprocess"]["ds"]), dataset=ds))
        enc = EncoderSpec.from_dict(header["encoder"])
        R = enc.encode(X[idx], seeds=ds.sample_seeds[idx])
        rep, spikes = evaluate_snn(net, R, ds.labels[idx], split=idx,
                                   demands=ds.demands[idx], class_capacities=caps)
        return kind, rep, {"spikes": spikes}
    if kind == "cnn":
        spec, params, header = cnn_mod.load_cnn(model_path)
        if spec.n_classes != ds.n_classes:
            raise UsageError("model and dataset disagree on the number of classes")
        X = load_features(data, int(header["preprocess"]["ds"]), dataset=ds)
        rep = evaluate_cnn(spec, params, np.asarray(X[idx]), ds.labels[idx], split=idx,
                           demands=ds.demands[idx], class_capacities=caps)
        return kind, rep, {"params": cnn_mod.param_count(spec)}
    raise UsageError(f"{model_path}: unknown model kind {kind!r}")


def write_report(directory: Path, kind: str, rep: MetricsReport, extra: dict):
    """report.json, report.csv, confusion.csv and roc_<class>.csv."""
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"model": kind, **rep.summary(), "split_id": rep.split_id,
               "precision": rep.precision.tolist(), "recall": rep.recall.tolist(),
               "f1": rep.f1.tolist(), "auc": [None if np.isnan(a) else a for a in rep.auc],
               "support": rep.support.tolist(), "confusion": rep.confusion.tolist(), **extra}
    (directory / "report.json").write_text(json.dumps(payload, indent=1))
    rows = [{"class": k, "support": int(rep.support[k]), "precision": rep.precision[k],
             "recall": rep.recall[k], "f1": rep.f1[k], "auc": rep.auc[k]}
            for k in range(rep.n_classes)]
    write_table(directory / "report.csv", rows)
    np.savetxt(directory / "confusion.csv", rep.confusion, fmt="%d", delimiter=",")
    for k, (fpr, tpr) in rep.roc.items():
        write_table(directory / f"roc_{k}.csv",
                    [{"fpr": a, "tpr": b} for a, b in zip(fpr, tpr)])


def load_report(directory: str | Path) -> MetricsReport:
    d = json.loads((Path(directory) / "report.json").read_text())
    auc = np.array([np.nan if a is None else a for a in d["auc"]])
    return MetricsReport(d["accuracy"], np.array(d["precision"]), np.array(d["recall"]),
                         np.array(d["f1"]), np.array(d["support"]), np.array(d["confusion"]),
                         {}, auc, d.get("capacity_gap_bps"), d.get("latency_s"),
                         d.get("ops_per_example"), d.get("split_id", ""))


def cmd_eval(args) -> int:
    data = _need_dir(args.data)
    kind, rep, extra = _evaluate_model(Path(args.model), data, args.split)
    out = Path(args.out) if args.out else Path(args.model).parent / f"eval_{args.split}"
    write_report(out, kind, rep, extra)
    write_manifest(out, "report.json", {"model": str(Path(args.model).resolve()),
                                        "dataset": str(data.resolve()), "split": args.split})
    print(json.dumps({"model": kind, **rep.summary()}, indent=1))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    data = _need_dir(args.data)
    ds = load_dataset(data)
    try:
        values = parse_values(args.axis, args.values)
        s = cfg["snn"]
        e = cfg["encoder"]
        ref = SweepReference(e["kind"], int(e["T"]), int(s["ds"]), s["rho"], e["threshold"],
                             TemParams(e["alpha_u"], e["alpha_v"], e["threshold"],
                                       int(e["replicas"])),
                             _snn_hyper(cfg), tuple(s["hidden"]), _neuron(cfg), s["init_gain"])
        spec = SweepSpec(args.axis, values, ref)
    except ValueError as err:
        raise UsageError(str(err)) from err
    cache: dict[int, np.ndarray] = {}

    def features(k):
        if k not in cache:
            cache[k] = _flat(load_features(data, k, dataset=ds))
        return cache[k]

    rows = run_sweep(spec, features, ds.labels, ds.train_idx, ds.val_idx, ds.sample_seeds,
                     ds.n_classes, progress=lambda r: print(json.dumps(r), file=sys.stderr))
    write_sweep(rows, args.out)
    write_manifest(args.out, "sweep.csv", {"axis": args.axis, "values": list(values),
                                           "config": cfg, "dataset": str(data.resolve())})
    for r in rows:
        print(f"{r['axis']}={r['value']}: accuracy={r['accuracy']:.4f} synops={r['synops']:.0f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    snn_rep, cnn_rep = load_report(args.snn), load_report(args.cnn)
    try:
        rows = compare_models(snn_rep, cnn_rep)
    except ValueError as err:
        raise UsageError(str(err)) from err
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, rows, COMPARE_FIELDS)
    write_manifest(out.parent, out.name, {"snn": str(Path(args.snn).resolve()),
                                          "cnn": str(Path(args.cnn).resolve())})
    for r in rows:
        print(f"{r['metric']}: {r['value']:.6g}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .sweep import line_chart
    data = _need_dir(args.data)
    out = Path(args.out)
    reports = {}
    for kind, path in (("snn", args.snn), ("cnn", args.cnn)):
        if path is None:
            continue
        k, rep, extra = _evaluate_model(Path(path), data, args.split)
        write_report(out / kind, k, rep, extra)
        _roc_svg(out / kind / "roc.svg", rep, f"{kind.upper()} one-vs-rest ROC")
        reports[kind] = rep
    if not reports:
        raise UsageError("report needs --snn and/or --cnn")
    rows = [{"model": k, **{m: (float("nan") if v is None else v)
                            for m, v in r.summary().items()}} for k, r in reports.items()]
    write_table(out / "report.csv", rows)
    for k, r in reports.items():
        line_chart(out / f"f1_{k}.svg", [str(c) for c in range(r.n_classes)], r.f1.tolist(),
                   "class", "F1")
    if len(reports) == 2:
        write_table(out / "comparison.csv", compare_models(reports["snn"], reports["cnn"]),
                    COMPARE_FIELDS)
    write_manifest(out, "report", {"dataset": str(data.resolve()), "split": args.split,
                                   "snn": args.snn, "cnn": args.cnn})
    print(read_table(out / "report.csv"))
    return EXIT_OK


def _roc_svg(path: Path, rep: MetricsReport, title: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4))
    for k, (fpr, tpr) in rep.roc.items():
        ax.plot(fpr, tpr, label=f"class {k} (AUC {rep.auc[k]:.3f})")
    ax.plot([0, 1], [0, 1], ls=":", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    # fixed id salt and no date, so reruns write identical bytes
    with plt.rc_context({"svg.hashsalt": "neurorrm"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neurorrm", description="Payload-configuration classifiers for "
                "multibeam satellite resource management.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate and label a synthetic dataset")
    g.add_argument("--samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--store-grids", action="store_true", help="also keep the full demand maps")
    for flag in ("pmax", "wmax", "beta0", "beta1", "beta2"):
        g.add_argument(f"--{flag}", type=float)
    g.add_argument("--min-support", type=float, dest="min_support")
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("label", help="relabel a dataset under new constraints or weights")
    g.add_argument("--data", required=True)
    g.add_argument("--out")
    for flag in ("pmax", "wmax", "beta0", "beta1", "beta2"):
        g.add_argument(f"--{flag}", type=float)
    g.add_argument("--min-support", type=float, dest="min_support")
    g.set_defaults(func=cmd_label)

    g = sub.add_parser("train-snn", help="train the spiking classifier")
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="checkpoint path")
    g.add_argument("--encoder", choices=("tem", "rate"))
    g.add_argument("--T", type=int)
    g.add_argument("--ds", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_train_snn)

    g = sub.add_parser("train-cnn", help="train the convolutional baseline")
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="checkpoint path")
    g.add_argument("--ds", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_train_cnn)

    g = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--split", default="val", choices=("train", "val", "all"))
    g.add_argument("--out")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("sweep", help="train one SNN per value of a hyperparameter")
    g.add_argument("--data", required=True)
    g.add_argument("--axis", required=True, choices=("encoder", "T", "ds", "rho", "theta_enc"))
    g.add_argument("--values", required=True, help="comma separated")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_sweep)

    g = sub.add_parser("compare", help="compare an SNN and a CNN evaluation")
    g.add_argument("--snn", required=True, help="SNN eval directory")
    g.add_argument("--cnn", required=True, help="CNN eval directory")
    g.add_argument("--out", required=True, help="CSV path")
    g.set_defaults(func=cmd_compare)

    g = sub.add_parser("report", help="full evaluation report with CSV and SVG output")
    g.add_argument("--data", required=True)
    g.add_argument("--snn")
    g.add_argument("--cnn")
    g.add_argument("--split", default="val", choices=("train", "val", "all"))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"neurorrm {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 - report any failure as a runtime error
        log.debug("failure", exc_info=True)
        print(f"neurorrm {args.command}: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
