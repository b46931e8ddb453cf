"""Corpus partitioning: seeded uniform splits and score-ordered holdouts.

The score-ordered split banks the top-scoring fraction as an out-of-
distribution test partition; remaining ids shuffle into train/val. All
shuffles run over sorted id lists so manifests are byte-identical across runs
regardless of input enumeration order.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PARTITIONS = ("train", "val", "test")


class SplitError(ValueError):
    pass


@dataclass
class SplitAssignment:
    mapping: dict            # scenario_id -> partition
    method: str
    seed: int
    params: dict

    def ids(self, partition: str):
        return sorted(sid for sid, p in self.mapping.items() if p == partition)

    def counts(self) -> dict:
        out = {p: 0 for p in PARTITIONS}
        for p in self.mapping.values():
            out[p] += 1
        return out


def _check_ids(ids) -> list:
    ids = list(ids)
    if not ids:
        raise SplitError("no scenario ids to split")
    if len(set(ids)) != len(ids):
        raise SplitError("duplicate scenario ids")
    return sorted(ids)


def uniform_split(ids, ratios=(0.64, 0.16, 0.20), seed: int = 0) -> SplitAssignment:
    """Seeded shuffle then contiguous slicing; floor sizes, remainder to train."""
    ids = _check_ids(ids)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise SplitError(f"ratios must be 3 nonnegative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(ids)
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test
    mapping = {}
    for sid in order[:n_train]:
        mapping[sid] = "train"
    for sid in order[n_train:n_train + n_val]:
        mapping[sid] = "val"
    for sid in order[n_train + n_val:]:
        mapping[sid] = "test"
    return SplitAssignment(mapping=mapping, method="uniform", seed=seed,
                           params={"ratios": list(ratios)})


def scoring_split(scene_scores: dict, ood_fraction: float = 0.2,
                  val_fraction: float = 0.2, seed: int = 0) -> SplitAssignment:
    """Hold out the ceil(ood_fraction * |S|) top-scoring scenarios as test
    (ties broken by ascending scenario_id); shuffle the rest into train/val."""
    ids = _check_ids(scene_scores)
    if not 0.0 < ood_fraction < 1.0:
        raise SplitError(f"ood_fraction must be in (0, 1), got {ood_fraction}")
    n_test = math.ceil(ood_fraction * len(ids))
    ranked = sorted(ids, key=lambda sid: (-scene_scores[sid], sid))
    test = set(ranked[:n_test])
    rest = [sid for sid in ids if sid not in test]
    rng = np.random.default_rng(seed)
    order = [rest[i] for i in rng.permutation(len(rest))]
    n_val = math.floor(val_fraction * len(rest))
    mapping = {sid: "test" for sid in test}
    for sid in order[:n_val]:
        mapping[sid] = "val"
    for sid in order[n_val:]:
        mapping[sid] = "train"
    return SplitAssignment(mapping=mapping, method="scoring", seed=seed,
                           params={"ood_fraction": ood_fraction, "val_fraction": val_fraction})


def write_manifest(split: SplitAssignment, path):
    """Header line of JSON metadata, then one `id<TAB>partition` line per
    scenario, sorted by id."""
    header = json.dumps({"method": split.method, "seed": split.seed,
                         "params": split.params, "counts": split.counts()},
                        separators=(",", ":"))
    lines = [f"# {header}"]
    lines += [f"{sid}\t{split.mapping[sid]}" for sid in sorted(split.mapping)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> SplitAssignment:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise SplitError(f"{path}: missing JSON header line")
    meta = json.loads(text[0][2:])
    mapping = {}
    for i, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in PARTITIONS:
            raise SplitError(f"{path}:{i}: expected 'id<TAB>partition', got {line!r}")
        if parts[0] in mapping:
            raise SplitError(f"{path}:{i}: duplicate scenario id {parts[0]!r}")
        mapping[parts[0]] = parts[1]
    return SplitAssignment(mapping=mapping, method=meta.get("method", "unknown"),
                           seed=int(meta.get("seed", 0)), params=meta.get("params", {}))
