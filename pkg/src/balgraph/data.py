"""Dataset containers, topology assembly, chunking, splits, and a synthetic generator.

Samples are multichannel time series (channels x time) with a binary label
and a subject id. The graph a sample lives on is a product graph: H temporal
copies of a spatial graph with positive edges joining consecutive copies of
the same node. Node ordering is chunk-major, so chunk h of channel c maps to
node h * N + c, matching the rows produced by :func:`chunk`.

The synthetic generator draws each class from the low-frequency subspace of
its own balanced signed graph: class polarities differ on a configurable
fraction of nodes and the subspace dimensions differ per class, so the two
classes are separable by construction at finite noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import SIGNED_AFFINITY, WeightScheme, assign_weights
from .errors import TooShort
from .graphs import (
    COMBINATORIAL,
    SignedGraph,
    build_laplacian,
    format_graph,
    gct_shift,
    normalize_weights,
    parse_graph,
    similarity_transform,
)
from .spectral import eigh

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "balgraph-dataset/1"


@dataclass(frozen=True)
class Sample:
    signal: np.ndarray  # channels x time
    label: int
    subject_id: int


@dataclass(frozen=True)
class LabeledDataset:
    samples: list[Sample]
    sample_rate: float = 1.0
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        shapes = {s.signal.shape for s in self.samples}
        if len(shapes) > 1:
            raise ValueError(f"samples must share one shape, got {sorted(shapes)}")
        labels = {s.label for s in self.samples}
        if not labels <= {0, 1}:
            raise ValueError("labels must be binary")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            [self.samples[i] for i in indices], self.sample_rate, self.channel_names
        )

    def by_label(self, label: int) -> list[Sample]:
        return [s for s in self.samples if s.label == label]

    def subjects(self) -> list[int]:
        return sorted({s.subject_id for s in self.samples})


# ---------------------------------------------------------------------------
# Topology assembly
# ---------------------------------------------------------------------------

def build_line_graph(g0: SignedGraph) -> SignedGraph:
    """Line graph: one node per edge of ``g0``, adjacency on shared endpoints.

    Weights are unit placeholders; the learning pipeline replaces them. Node
    k corresponds to the k-th edge in ``g0.edge_list()`` order.
    """
    if g0.n_edges == 0:
        raise ValueError("line graph needs at least one edge")
    endpoints = list(zip(g0.edge_i.tolist(), g0.edge_j.tolist()))
    edges = []
    for a in range(len(endpoints)):
        ia, ja = endpoints[a]
        for b in range(a + 1, len(endpoints)):
            ib, jb = endpoints[b]
            if len({ia, ja} & {ib, jb}) > 0:
                edges.append((a, b, 1.0))
    return SignedGraph.from_edges(len(endpoints), edges)


def build_product_graph(spatial: SignedGraph, H: int, temporal_w: float = 1.0) -> SignedGraph:
    """H stacked copies of the spatial graph with positive temporal edges.

    Node (i, h) has index h * N + i; copies h and h+1 of node i are joined
    with weight ``temporal_w`` (always positive regardless of any polarity
    assignment).
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if H > 1 and temporal_w <= 0:
        raise ValueError("temporal edge weight must be positive")
    if H == 1:
        return spatial
    n = spatial.n_nodes
    edges: list[tuple[int, int, float]] = []
    for h in range(H):
        off = h * n
        for i, j, w in spatial.edge_list():
            edges.append((off + i, off + j, w))
    for h in range(H - 1):
        for i in range(n):
            edges.append((h * n + i, (h + 1) * n + i, temporal_w))
    loops = np.tile(spatial.self_loops, H)
    return SignedGraph.from_edges(n * H, edges, loops)


def chunk(signal: np.ndarray, H: int, D: int, drop_head: int = 0, drop_tail: int = 0) -> np.ndarray:
    """Per-node embeddings from a channels x time signal.

    The first ``drop_head`` and last ``drop_tail`` samples are discarded and
    the remainder split into H non-overlapping chunks of duration D (extra
    trailing samples beyond H*D are ignored). Output row h * C + c holds the
    length-D series of channel c in chunk h.
    """
    X = np.asarray(signal, dtype=float)
    if X.ndim != 2:
        raise ValueError("signal must be channels x time")
    C, T = X.shape
    if T < drop_head + drop_tail + H * D:
        raise TooShort(
            f"time length {T} < drop_head {drop_head} + drop_tail {drop_tail} + H*D {H * D}"
        )
    body = X[:, drop_head : drop_head + H * D]
    out = np.empty((H * C, D))
    for h in range(H):
        out[h * C : (h + 1) * C] = body[:, h * D : (h + 1) * D]
    return out


def unchunk(embeddings: np.ndarray, C: int) -> np.ndarray:
    """Inverse of :func:`chunk` for the trimmed body (channels x H*D)."""
    HC, D = embeddings.shape
    if HC % C:
        raise ValueError("row count is not a multiple of the channel count")
    H = HC // C
    return np.concatenate([embeddings[h * C : (h + 1) * C] for h in range(H)], axis=1)


def random_connected_topology(n: int, extra_edge_prob: float, rng: np.random.Generator) -> SignedGraph:
    """Random spanning tree plus extra edges; unit weights."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a = int(order[k])
        b = int(order[int(rng.integers(0, k))])
        edges.add((min(a, b), max(a, b)))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra_edge_prob:
                edges.add((i, j))
    return SignedGraph.from_edges(n, [(i, j, 1.0) for i, j in sorted(edges)])


# ---------------------------------------------------------------------------
# Synthetic two-class generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 30
    graph_seed: int = 7
    sample_seed: int = 11
    subspace_dims: tuple[int, int] = (4, 12)
    anti_fraction: float = 0.5
    n_samples: int = 400
    snr_db: float | None = 10.0
    subjects: int = 4
    time_len: int = 64
    edge_prob: float = 0.15
    spectrum_decay: float = 0.6  # coefficient scale s_k = decay^k, k = 0..dim-1

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be >= 3")
        w0, w1 = self.subspace_dims
        if not (1 <= w0 <= self.n_nodes and 1 <= w1 <= self.n_nodes):
            raise ValueError("subspace dims must lie in [1, n_nodes]")
        if w0 == w1 and self.anti_fraction <= 0:
            raise ValueError("classes must differ in subspace dim or polarity pattern")
        if self.n_samples < 2 or self.subjects < 1 or self.time_len < 1:
            raise ValueError("invalid sample counts")
        if not (0.0 <= self.anti_fraction <= 1.0):
            raise ValueError("anti_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground-truth structure behind a generated dataset."""

    topology: SignedGraph
    betas: tuple[np.ndarray, np.ndarray]
    laplacians: tuple[np.ndarray, np.ndarray]  # positive-graph Laplacians
    bases: tuple[np.ndarray, np.ndarray]  # balanced-domain subspace bases


def _class_structure(cfg: SynthConfig):
    rng = np.random.default_rng(cfg.graph_seed)
    topo = random_connected_topology(cfg.n_nodes, cfg.edge_prob, rng)
    beta0 = rng.choice([-1, 1], size=cfg.n_nodes).astype(np.int64)
    n_flip = int(round(cfg.anti_fraction * cfg.n_nodes))
    flip = rng.permutation(cfg.n_nodes)[:n_flip]
    beta1 = beta0.copy()
    beta1[flip] *= -1
    scheme = WeightScheme(SIGNED_AFFINITY)
    betas, laps, bases = [], [], []
    for c, beta in enumerate((beta0, beta1)):
        d = rng.uniform(0.1, 1.5, size=(cfg.n_nodes, cfg.n_nodes))
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        g = assign_weights(d, beta, scheme, topo)
        L = build_laplacian(normalize_weights(g), COMBINATORIAL)
        shifted, _ = gct_shift(L)
        L_pos = similarity_transform(shifted, beta)
        pair = eigh(L_pos)
        k = cfg.subspace_dims[c]
        basis = pair.eigenvectors[:, :k] * beta[:, None]  # balanced-domain basis T V
        betas.append(beta)
        laps.append(L_pos.matrix)
        bases.append(basis)
    return topo, betas, laps, bases


def synth_two_class(cfg: SynthConfig) -> tuple[LabeledDataset, SyntheticTruth]:
    """Two-class dataset of balanced-graph low-frequency signals plus AWGN.

    Class c signals are random coefficient mixes of the first
    ``subspace_dims[c]`` eigenvectors of the class-c positive Laplacian,
    mapped back to the balanced domain through the class polarity. Labels
    alternate and subject ids rotate round-robin within each class, so every
    subject carries both classes. ``snr_db = None`` means noiseless.
    """
    topo, betas, laps, bases = _class_structure(cfg)
    rng = np.random.default_rng(cfg.sample_seed)
    samples = []
    for s in range(cfg.n_samples):
        label = s % 2
        basis = bases[label]
        k = basis.shape[1]
        # Decaying spectral envelope: the lowest frequency dominates, so the
        # class polarity pattern shows up directly in the sample covariance.
        scales = cfg.spectrum_decay ** np.arange(k)
        coeff = scales[:, None] * rng.normal(size=(k, cfg.time_len))
        X = basis @ coeff
        X = X / np.sqrt(np.mean(X * X))  # unit RMS before noise
        if cfg.snr_db is not None and np.isfinite(cfg.snr_db):
            sigma = float(np.sqrt(10.0 ** (-cfg.snr_db / 10.0)))
            X = X + sigma * rng.normal(size=X.shape)
        samples.append(Sample(signal=X, label=label, subject_id=(s // 2) % cfg.subjects))
    names = [f"ch{c:02d}" for c in range(cfg.n_nodes)]
    dataset = LabeledDataset(samples, sample_rate=1.0, channel_names=names)
    truth = SyntheticTruth(
        topology=topo,
        betas=(betas[0], betas[1]),
        laplacians=(laps[0], laps[1]),
        bases=(bases[0], bases[1]),
    )
    return dataset, truth


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def split_ratio(dataset: LabeledDataset, seed: int, ratios=(8, 1, 1)):
    """Seeded shuffle then partition into train/val/test by the given ratio."""
    n = len(dataset)
    total = sum(ratios)
    n_train = int(n * ratios[0] / total)
    n_val = int(n * ratios[1] / total)
    if n_train == 0 or n_val == 0 or n - n_train - n_val == 0:
        raise ValueError("empty partition; dataset too small for the ratio")
    perm = np.random.default_rng(seed).permutation(n)
    train = dataset.subset(perm[:n_train])
    val = dataset.subset(perm[n_train : n_train + n_val])
    test = dataset.subset(perm[n_train + n_val :])
    return train, val, test


def split_loso(dataset: LabeledDataset, subject: int, seed: int):
    """Hold out one subject's samples as test; remainder split 9:1 train/val."""
    test_idx = [i for i, s in enumerate(dataset.samples) if s.subject_id == subject]
    rest_idx = [i for i, s in enumerate(dataset.samples) if s.subject_id != subject]
    if not test_idx:
        raise ValueError(f"subject {subject} not present")
    if not rest_idx:
        raise ValueError("no samples left to train on")
    perm = np.random.default_rng(seed).permutation(len(rest_idx))
    rest = [rest_idx[i] for i in perm]
    n_train = int(len(rest) * 0.9)
    if n_train == 0 or n_train == len(rest):
        raise ValueError("empty partition in the 9:1 train/val split")
    return dataset.subset(rest[:n_train]), dataset.subset(rest[n_train:]), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# CSV + JSON sidecar storage
# ---------------------------------------------------------------------------

def _write_csv(path: Path, signal: np.ndarray) -> None:
    # One row per time step, one column per channel; shortest round-trip
    # float formatting keeps rereads bit-exact.
    with open(path, "w", encoding="utf-8") as fh:
        for t in range(signal.shape[1]):
            fh.write(",".join(repr(float(v)) for v in signal[:, t]))
            fh.write("\n")


def _read_csv(path: Path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    return rows.T.copy()  # back to channels x time


def save_dataset(dataset: LabeledDataset, out_dir, topology: SignedGraph | None = None,
                 extra: dict | None = None) -> Path:
    """Write samples as CSV + JSON sidecars plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(dataset.samples):
        csv_name = f"sample_{k:04d}.csv"
        sidecar_name = f"sample_{k:04d}.json"
        _write_csv(out / csv_name, s.signal)
        sidecar = {
            "sample_rate": dataset.sample_rate,
            "label": int(s.label),
            "subject_id": int(s.subject_id),
        }
        (out / sidecar_name).write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")
        entries.append(
            {"csv": csv_name, "sidecar": sidecar_name, "label": int(s.label), "subject_id": int(s.subject_id)}
        )
    manifest = {
        "format": DATASET_FORMAT,
        "sample_rate": dataset.sample_rate,
        "channels": dataset.channel_names,
        "n_samples": len(dataset),
        "samples": entries,
    }
    if topology is not None:
        (out / "topology.txt").write_text(format_graph(topology), encoding="utf-8")
        manifest["topology"] = "topology.txt"
    if extra:
        manifest["generator"] = extra
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(src_dir) -> tuple[LabeledDataset, dict, SignedGraph | None]:
    """Read a dataset directory written by :func:`save_dataset`."""
    src = Path(src_dir)
    manifest = json.loads((src / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"unknown dataset format {manifest.get('format')!r}")
    samples = []
    for entry in manifest["samples"]:
        signal = _read_csv(src / entry["csv"])
        sidecar = json.loads((src / entry["sidecar"]).read_text(encoding="utf-8"))
        samples.append(
            Sample(signal=signal, label=int(sidecar["label"]), subject_id=int(sidecar["subject_id"]))
        )
    dataset = LabeledDataset(
        samples, sample_rate=float(manifest["sample_rate"]), channel_names=list(manifest["channels"])
    )
    topology = None
    if "topology" in manifest:
        topology = parse_graph((src / manifest["topology"]).read_text(encoding="utf-8"))
    return dataset, manifest, topology
