"""Workload generators: synthetic word counts with a tunable key-overlap
knob, full-overlap gradient sums, and a file-based word count path.

A partition is a list of (key, value) records with byte-string keys. All
generators are deterministic in their seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .codec import KEY_BYTES

Record = tuple[bytes, int]


@dataclass
class WorkloadSpec:
    kind: str  # "gradsum" | "words" | "file"
    vocab: int = 100  # K: distinct keys (gradsum: keys per mapper)
    records: int = 200  # per-mapper record count (word kinds)
    overlap: float = 1.0  # 0 = disjoint key sets, 1 = fully shared vocabulary
    dist: str = "uniform"  # or "zipf:<s>"
    seed: int = 1
    path: str = ""  # file kind
    value_range: int = 1 << 20  # gradsum values drawn from +-range


def parse_workload(text: str) -> WorkloadSpec:
    """Compact colon form used in dataset paths, e.g.
    `synth:gradsum:k=1000:seed=3` or `synth:words:k=50:n=200:overlap=0.5:dist=zipf1.2`."""
    parts = text.split(":")
    if parts[0] == "synth":
        parts = parts[1:]
    if not parts:
        raise ValueError("empty workload spec")
    kind = parts[0]
    if kind not in ("gradsum", "words"):
        raise ValueError(f"unknown workload kind {kind!r}")
    w = WorkloadSpec(kind)
    for p in parts[1:]:
        if "=" not in p:
            raise ValueError(f"bad workload field {p!r}")
        k, v = p.split("=", 1)
        if k == "k":
            w.vocab = int(v)
        elif k == "n":
            w.records = int(v)
        elif k == "overlap":
            w.overlap = float(v)
        elif k == "dist":
            w.dist = v if v == "uniform" else (v if v.startswith("zipf") else "")
            if not w.dist:
                raise ValueError(f"unknown distribution {v!r}")
        elif k == "seed":
            w.seed = int(v)
        elif k == "vrange":
            w.value_range = int(v)
        else:
            raise ValueError(f"unknown workload field {k!r}")
    return w


def _zipf_weights(n: int, s: float) -> list[float]:
    return [1.0 / (i**s) for i in range(1, n + 1)]


def generate_workload(w: WorkloadSpec, n_mappers: int) -> list[list[Record]]:
    """Per-mapper partitions, deterministic in (spec.seed, mapper index)."""
    if w.kind == "gradsum":
        return [
            _gradsum_partition(w, i) for i in range(n_mappers)
        ]
    if w.kind == "words":
        return [_words_partition(w, n_mappers, i) for i in range(n_mappers)]
    if w.kind == "file":
        raise ValueError("file workloads are loaded per mapper via load_text_partition")
    raise ValueError(f"unknown workload kind {w.kind!r}")


def _gradsum_partition(w: WorkloadSpec, mapper_idx: int) -> list[Record]:
    # Every mapper carries the full key range: the tensor-index pattern where
    # each worker contributes a value for every model coordinate.
    rng = random.Random((w.seed << 16) ^ (mapper_idx + 1))
    lim = max(1, w.value_range)
    return [
        (str(i).encode(), rng.randrange(-lim, lim)) for i in range(w.vocab)
    ]


def _words_partition(w: WorkloadSpec, n_mappers: int, mapper_idx: int) -> list[Record]:
    rng = random.Random((w.seed << 16) ^ (mapper_idx + 1))
    shared = int(round(w.overlap * w.vocab))
    own = w.vocab - shared
    vocab = [f"w{j}".encode() for j in range(shared)]
    vocab += [f"m{mapper_idx}x{j}".encode() for j in range(own)]
    if w.dist.startswith("zipf"):
        s = float(w.dist[4:] or "1.0")
        weights = _zipf_weights(len(vocab), s)
        keys = rng.choices(vocab, weights=weights, k=w.records)
    else:
        keys = rng.choices(vocab, k=w.records)
    return [(k, 1) for k in keys]


def load_text_partition(path: str) -> list[Record]:
    """Word-count records from a whitespace-tokenized text file. Tokens are
    truncated to the wire key width so arbitrary local text stays loadable."""
    records = []
    with open(path, "rb") as fp:
        for token in fp.read().split():
            records.append((token[:KEY_BYTES], 1))
    return records


def partitions_for_manifest(manifest, seed: int) -> dict[str, list[Record]]:
    """Resolve each mapper's dataset path into records. `synth:` paths go
    through the generators with the run seed mixed in (mapper position in the
    manifest picks its slice); anything else is read as a local text file."""
    parts: dict[str, list[Record]] = {}
    for idx, mp in enumerate(manifest.mappers):
        if mp.dataset_path.startswith("synth:"):
            w = parse_workload(mp.dataset_path)
            w.seed = (w.seed << 8) ^ seed
            if w.kind == "gradsum":
                parts[mp.mapper_id] = _gradsum_partition(w, idx)
            else:
                parts[mp.mapper_id] = _words_partition(w, len(manifest.mappers), idx)
        else:
            parts[mp.mapper_id] = load_text_partition(mp.dataset_path)
    return parts
