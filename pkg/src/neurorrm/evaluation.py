"""Model evaluation producing MetricsReport objects for both classifiers."""
from __future__ import annotations

import time

import numpy as np

from . import cnn as cnn_mod
from . import snn as snn_mod
from .metrics import MetricsReport, capacity_gap, classification_report, offered_capacities


def evaluate_snn(net: snn_mod.LayeredSNN, rasters: np.ndarray, labels, *,
                 split=None, demands=None, class_capacities=None) -> tuple[MetricsReport, dict]:
    """Event-driven inference of every example.

    Scores are output spike counts over T. Returns the report and a dict of
    mean per-layer spike counts.
    """
    n = len(rasters)
    Z = net.sizes[-1]
    scores = np.empty((n, Z))
    synops = np.empty(n)
    wall = np.empty(n)
    layer_spikes = np.zeros(len(net.sizes))
    wts = snn_mod.prepare(net)
    for i in range(n):
        out, st = snn_mod.forward(net, rasters[i], prepared=wts)
        T = out.shape[1]
        scores[i] = out.sum(axis=1) / T
        synops[i] = st.synops
        wall[i] = st.wall_clock
        layer_spikes += st.total_spikes
    rep = classification_report(labels, scores, Z, split=split)
    rep.latency = float(wall.mean())
    rep.ops_per_example = float(synops.mean())
    if demands is not None and class_capacities is not None:
        rep.capacity_gap = capacity_gap(demands, offered_capacities(rep.predictions,
                                                                    class_capacities))
    spikes = {"input": float(layer_spikes[0] / n),
              "hidden": float(layer_spikes[1:-1].sum() / n),
              "output": float(layer_spikes[-1] / n)}
    return rep, spikes


def evaluate_cnn(spec: cnn_mod.CnnSpec, params, x: np.ndarray, labels, *, split=None,
                 demands=None, class_capacities=None) -> MetricsReport:
    """Per-example inference; scores are softmax probabilities."""
    n = len(x)
    probs = np.empty((n, spec.n_classes))
    wall = np.empty(n)
    for i in range(n):
        t0 = time.perf_counter()
        probs[i] = cnn_mod.cnn_forward(spec, params, x[i])
        wall[i] = time.perf_counter() - t0
    rep = classification_report(labels, probs, spec.n_classes, split=split)
    rep.latency = float(wall.mean())
    rep.ops_per_example = float(cnn_mod.mac_count(spec))
    if demands is not None and class_capacities is not None:
        rep.capacity_gap = capacity_gap(demands, offered_capacities(rep.predictions,
                                                                    class_capacities))
    return rep
