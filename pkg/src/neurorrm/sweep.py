"""One-axis hyperparameter sweeps of the spiking classifier."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoding import EncoderSpec, TemParams
from .evaluation import evaluate_snn
from .snn import EncodedSet, NeuronParams, TrainHyper, init_snn, train

AXES = ("encoder", "T", "ds", "rho", "theta_enc")
SWEEP_FIELDS = ("axis", "value", "accuracy", "latency_s", "synops", "input_spikes",
                "hidden_spikes", "output_spikes")


@dataclass(frozen=True)
class SweepReference:
    """The fixed point every sweep varies one coordinate of."""
    encoder: str = "tem"
    T: int = 8
    ds: int = 32
    rho: float = 0.5
    theta_enc: float = 1.0
    tem: TemParams = TemParams()
    hyper: TrainHyper = TrainHyper()
    hidden: tuple[int, ...] = (512, 256, 512)
    neuron: NeuronParams = NeuronParams()
    init_gain: float = 1.0


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    reference: SweepReference = field(default_factory=SweepReference)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if len(self.values) == 0:
            raise ValueError("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            raise ValueError("sweep values must be sorted")
        if self.axis == "encoder" and not set(self.values) <= {"rate", "tem"}:
            raise ValueError("encoder values must be 'rate' and/or 'tem'")

    def point(self, value) -> SweepReference:
        ref = self.reference
        if self.axis == "encoder":
            return replace(ref, encoder=str(value))
        if self.axis == "T":
            return replace(ref, T=int(value))
        if self.axis == "ds":
            return replace(ref, ds=int(value))
        if self.axis == "rho":
            return replace(ref, rho=float(value), hyper=replace(ref.hyper, rho=float(value)))
        return replace(ref, theta_enc=float(value),
                       tem=replace(ref.tem, threshold=float(value)))


def parse_values(axis: str, text: str) -> tuple:
    items = [v.strip() for v in text.split(",") if v.strip()]
    if axis == "encoder":
        return tuple(sorted(items))
    conv = int if axis in ("T", "ds") else float
    return tuple(sorted(conv(v) for v in items))


def run_sweep(spec: SweepSpec, features: Callable[[int], np.ndarray], labels: np.ndarray,
              train_idx: np.ndarray, val_idx: np.ndarray, sample_seeds: np.ndarray,
              n_classes: int, progress=None) -> list[dict]:
    """Train and evaluate one model per value; everything else stays at the reference.

    ``features(ds)`` returns the (S, F) pooled feature matrix for a stride.
    Rate-coded rasters use each sample's own seed, so the same sample always
    gets the same spike train within a run.
    """
    labels = np.asarray(labels)
    rows = []
    for value in spec.values:
        pt = spec.point(value)
        X = features(pt.ds)
        enc = EncoderSpec(pt.encoder, pt.T, pt.tem)
        R = enc.encode(X, seeds=sample_seeds)
        net = init_snn(R.shape[1], n_classes, pt.hyper.seed, pt.hidden, pt.neuron, pt.init_gain)
        net, _ = train(net, EncodedSet(R[train_idx], labels[train_idx]),
                       EncodedSet(R[val_idx], labels[val_idx]), pt.hyper)
        rep, spikes = evaluate_snn(net, R[val_idx], labels[val_idx], split=val_idx)
        row = {"axis": spec.axis, "value": value, "accuracy": rep.accuracy,
               "latency_s": rep.latency, "synops": rep.ops_per_example,
               "input_spikes": spikes["input"], "hidden_spikes": spikes["hidden"],
               "output_spikes": spikes["output"]}
        rows.append(row)
        if progress:
            progress(row)
    return rows


def write_sweep(rows: Sequence[dict], directory: str | Path) -> list[Path]:
    """CSV of the table plus one SVG line chart per metric."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "sweep.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    out = [csv_path]
    axis = rows[0]["axis"] if rows else "value"
    for metric in ("accuracy", "synops", "input_spikes", "hidden_spikes", "latency_s"):
        path = directory / f"sweep_{metric}.svg"
        line_chart(path, [str(r["value"]) for r in rows], [r[metric] for r in rows],
                   axis, metric)
        out.append(path)
    return out


def line_chart(path, xs, ys, xlabel, ylabel, title=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(range(len(xs)), ys, marker="o")
    ax.set_xticks(range(len(xs)), xs)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    # fixed id salt and no date, so reruns write identical bytes
    with plt.rc_context({"svg.hashsalt": "neurorrm"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
