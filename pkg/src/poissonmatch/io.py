"""File formats: instance JSON, config JSON, CSV dumps.

Instance JSON (test fixtures and the ``match`` subcommand):

    {"vertices": [...], "colors": {...} | [...] (optional),
     "weights": [[id, id, w], ...]}            with "inf" allowed as w

or, delegating weight construction to the point models:

    {"rule": "asymmetric_two_type", "metric": "euclidean_torus",
     "side": 10.0, "dimension": 2, "positions": [[..], ..], "colors": [..]}

Config JSON for sampled experiments:

    {"rate": 1.0, "dimension": 2, "side": 20.0, "color_probs": [0.75, 0.25],
     "rule": "asymmetric_two_type", "metric": "euclidean_torus", "seed": 1}

All CSV output is written with a fixed float format (shortest repr) so that
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from typing import Optional

import numpy as np

from .matching import Matching, WeightedInstance
from .points import MetricKind, PointConfig, build_instance, rule_by_name


def fmt(x) -> str:
    """Deterministic scalar formatting for CSV cells."""
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(c) for c in row])


def _parse_weight(w) -> float:
    if isinstance(w, str):
        if w.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        return float(w)
    return float(w)


def load_instance(path) -> WeightedInstance:
    """Read an instance JSON file (either explicit weights or rule+positions)."""
    with open(path) as fh:
        doc = json.load(fh)
    if "weights" in doc:
        ids = doc["vertices"]
        colors = doc.get("colors")
        if isinstance(colors, dict):
            colors = {k if k in ids else type(ids[0])(k): v for k, v in colors.items()}
        elif isinstance(colors, list):
            colors = dict(zip(ids, colors))
        pairs = [(row[0], row[1], _parse_weight(row[2])) for row in doc["weights"]]
        return WeightedInstance.from_weight_map(ids, pairs, colors=colors)
    if "positions" in doc:
        positions = np.asarray(doc["positions"], dtype=np.float64)
        if positions.ndim == 1:
            positions = positions[:, None]
        dim = positions.shape[1]
        rule = rule_by_name(doc["rule"], int(doc.get("k", 2)))
        colors = np.asarray(doc.get("colors", np.zeros(len(positions), dtype=int)))
        config = PointConfig(dim, float(doc["side"]), positions, colors)
        metric = MetricKind(doc.get("metric", "euclidean_torus"))
        return build_instance(config, rule, metric)
    raise ValueError("instance JSON needs either 'weights' or 'positions'")


def write_matching_csv(path, instance: WeightedInstance, matching: Matching) -> None:
    rows = []
    for i, vid in enumerate(instance.ids):
        p = int(matching.partner[i])
        rows.append(
            [
                vid,
                instance.ids[p] if p != i else -1,
                matching.match_weight[i],
            ]
        )
    write_csv(path, ["vertex", "partner", "match_weight"], rows)


def write_points_csv(path, config: PointConfig, matching: Optional[Matching] = None) -> None:
    """Point dump: index, coords..., color, partner_index | -1, match_distance | inf."""
    header = ["index"] + [f"x{j}" for j in range(config.dimension)] + [
        "color",
        "partner_index",
        "match_distance",
    ]
    rows = []
    for i in range(config.n):
        partner = -1
        dist = math.inf
        if matching is not None:
            p = int(matching.partner[i])
            if p != i:
                partner = p
                dist = float(matching.match_weight[i])
        rows.append([i, *config.points[i].tolist(), int(config.colors[i]), partner, dist])
    write_csv(path, header, rows)


def load_experiment_config(path) -> dict:
    """Read and validate a sampled-experiment config JSON."""
    with open(path) as fh:
        doc = json.load(fh)
    required = {"rate", "dimension", "side", "color_probs", "rule", "seed"}
    missing = required - doc.keys()
    if missing:
        raise ValueError(f"config is missing fields: {sorted(missing)}")
    if not isinstance(doc["color_probs"], list):
        raise ValueError("color_probs must be a list")
    doc.setdefault("metric", "euclidean_torus")
    return doc
