"""Corpus-level reporting: feature correlation and score distributions.

Outputs are plain CSV/JSON for external plotting tools; nothing here renders.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import INDIVIDUAL_FEATURES, INTERACTION_FEATURES

SCENE_VARIANTS = ("gt", "fe", "combined", "as", "ac")

# per-agent aggregation over the pairs an agent participates in
_PAIR_AGG = {"min_thw": min, "min_ttc": min, "max_drac": max,
             "min_delta_mttcp_traj": min, "min_delta_mttcp_map": min,
             "collision_count": lambda a, b: a + b}


def agent_feature_frame(features_list, variant: str = "gt") -> dict:
    """Rectangular per-agent table: individual features directly, interaction
    features folded per agent (min/max/sum to match each feature's sense).
    Agents with no interaction pairs get NaN interaction entries, which the
    pairwise-complete correlation then drops."""
    cols: dict = {name: [] for name in INDIVIDUAL_FEATURES + INTERACTION_FEATURES}
    for sf in sorted(features_list, key=lambda s: s.scenario_id):
        agg: dict = {}
        for pair in sf.pairs:
            if variant == "gt" or variant == "fe":
                feats = {pair.agent_i: pair.features[variant],
                         pair.agent_j: pair.features[variant]}
            else:
                feats = {pair.agent_i: pair.features["as_i"],
                         pair.agent_j: pair.features["as_j"]}
            for agent_id, f in feats.items():
                slot = agg.setdefault(agent_id, {})
                for name, value in f.as_dict().items():
                    slot[name] = (_PAIR_AGG[name](slot[name], value)
                                  if name in slot else value)
        for agent_id in sorted(sf.agents):
            ind_variant = "gt" if variant == "gt" else "fe"
            for name, value in sf.agents[agent_id].individual[ind_variant].as_dict().items():
                cols[name].append(value)
            slot = agg.get(agent_id)
            for name in INTERACTION_FEATURES:
                cols[name].append(slot[name] if slot is not None else math.nan)
    return {name: np.asarray(vals, float) for name, vals in cols.items()}


def correlation_matrix(table: dict, columns=None):
    """(names, matrix, flagged pairs). Pearson over pairwise-complete rows;
    degenerate pairs (under 2 rows or zero variance) record 0 and a flag."""
    names = list(columns) if columns is not None else list(table.keys())
    arrays = [np.asarray(table[n], float) for n in names]
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"ragged columns: lengths {sorted(lengths)}")
    if lengths and next(iter(lengths)) < 2:
        raise ValueError("need at least 2 rows")
    k = len(names)
    mat = np.eye(k)
    flags = []
    for i in range(k):
        for j in range(i + 1, k):
            mask = np.isfinite(arrays[i]) & np.isfinite(arrays[j])
            x = arrays[i][mask]
            y = arrays[j][mask]
            sx = x.std() if len(x) else 0.0
            sy = y.std() if len(y) else 0.0
            if len(x) < 2 or sx == 0.0 or sy == 0.0:
                c = 0.0
                flags.append((names[i], names[j]))
            else:
                c = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
                c = min(1.0, max(-1.0, c))
            mat[i, j] = mat[j, i] = c
    return names, mat, flags


def write_correlation_csv(names, mat, path):
    lines = ["feature," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(repr(float(v)) for v in mat[i]))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class VariantHistogram:
    variant: str
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    skewness: float
    std: float
    n: int


def sample_skewness(values) -> float:
    """Moment skewness m3 / m2^1.5; constant samples report 0."""
    x = np.asarray(values, float)
    m = x.mean()
    m2 = ((x - m) ** 2).mean()
    # constant up to the rounding of the mean itself, not just exactly so
    if m2 <= 1e-24 * max(1.0, m * m):
        return 0.0
    m3 = ((x - m) ** 3).mean()
    return float(m3 / m2 ** 1.5)


def score_histogram(records, bins: int = 100) -> dict:
    """Per-variant density histogram + spread stats over scene-level scores.

    Accepts score_corpus results, SceneScore objects, or records read back
    from a score file.
    """
    variants = {key: [] for key in SCENE_VARIANTS}
    for rec in records:
        if isinstance(rec, tuple):
            rec = rec[0]
        scene = rec["scene"] if isinstance(rec, dict) else rec.variants
        for key in SCENE_VARIANTS:
            variants[key].append(scene[key])
    out = {}
    for key, vals in variants.items():
        x = np.asarray(vals, float)
        if len(x) < 2:
            raise ValueError("need at least 2 scores")
        counts, edges = np.histogram(x, bins=bins)
        widths = np.diff(edges)
        total = counts.sum()
        density = counts / (total * widths)
        out[key] = VariantHistogram(variant=key, edges=edges, counts=counts,
                                    density=density, skewness=sample_skewness(x),
                                    std=float(x.std(ddof=1)), n=len(x))
    return out


def write_histogram_csv(hists: dict, path):
    lines = ["variant,bin_lo,bin_hi,count,density"]
    for key in SCENE_VARIANTS:
        h = hists[key]
        for i in range(len(h.counts)):
            lines.append(f"{key},{h.edges[i]!r},{h.edges[i + 1]!r},"
                         f"{int(h.counts[i])},{h.density[i]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def histogram_summary(hists: dict) -> str:
    return json.dumps({key: {"skewness": hists[key].skewness, "std": hists[key].std,
                             "n": hists[key].n}
                       for key in SCENE_VARIANTS}, indent=2)
