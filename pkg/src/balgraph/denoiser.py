"""Stacked graph-learning / low-pass-filter denoiser.

Each block rebuilds the graph from the current signal estimate and then
filters the estimate on it:

1. a shallow 1-d convolutional stack maps every node's time series to a
   feature vector,
2. pairwise Mahalanobis distances under a learned PSD metric Q Q^T are
   min-max normalized per sample,
3. distances become signed edge weights on the fixed topology (polarity
   signs keep the graph balanced), one greedy polarity sweep refines the
   node polarities against the current estimate,
4. symmetric degree normalization, the Gershgorin diagonal shift, and the
   polarity similarity transform produce a PSD positive-graph Laplacian,
5. the estimate is mapped to the positive-graph domain, low-pass filtered,
   and mapped back.

After normalization the edge magnitudes equal softmax-style attention
weights exp(-d_ij) / sqrt(sum_l exp(-d_il) * sum_k exp(-d_kj)), so each
block acts as a single-head self-attention layer whose value map is the
spectral filter.

Signals are node-major matrices (one row per graph node, one column per
retained time step); a single column works too. The model is immutable
during inference and ``denoise`` is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .balance import (
    BALANCED_CHT,
    LOGISTIC_UNBALANCED,
    POSITIVE_ONLY,
    SIGNED_AFFINITY,
    WeightScheme,
    assign_weights,
    update_polarities,
)
from .graphs import (
    COMBINATORIAL,
    SIGNED,
    Laplacian,
    SignedGraph,
    build_laplacian,
    gct_shift,
    normalize_weights,
    similarity_transform,
    validate_polarity,
)
from .spectral import EXACT, EigenPair, FilterSpec, eigh, lp_filter

MODEL_FORMAT = "balgraph-model/1"

BALANCED = "balanced"
POSITIVE = "positive"
UNBALANCED = "unbalanced"
_GRAPH_MODES = (BALANCED, POSITIVE, UNBALANCED)

_BN_EPS = 1e-5
_LEAKY_SLOPE = 0.01


# ---------------------------------------------------------------------------
# Feature extractor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvBlock:
    """One conv / batch-norm / leaky-ReLU stage acting along the time axis."""

    weights: np.ndarray  # (out_ch, in_ch, kernel)
    bias: np.ndarray  # (out_ch,)
    stride: int
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray


@dataclass(frozen=True)
class FeatureExtractorParams:
    """Shared per-node CNN: conv stack, 1x1 channel projection, average pool."""

    conv_blocks: tuple[ConvBlock, ...]
    proj_weight: np.ndarray  # (last_channels,)
    proj_bias: float
    feature_dim: int


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Valid-mode strided convolution; x is (n, in_ch, T)."""
    k = w.shape[2]
    T = x.shape[2]
    if T < k:
        raise ValueError(f"time length {T} shorter than kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    # tensordot over (in_ch, kernel); path search in einsum costs more than
    # the contraction at these sizes
    out = np.tensordot(windows, w, axes=[(1, 3), (1, 2)])  # (n, T_out, out_ch)
    return np.ascontiguousarray(out.transpose(0, 2, 1)) + b[None, :, None]


def _adaptive_avg_pool(x: np.ndarray, out_len: int) -> np.ndarray:
    """Average pooling to a fixed length; x is (n, T)."""
    T = x.shape[1]
    if T == out_len:
        return x
    out = np.empty((x.shape[0], out_len))
    for i in range(out_len):
        lo = (i * T) // out_len
        hi = -(-((i + 1) * T) // out_len)  # ceil
        out[:, i] = x[:, lo:hi].mean(axis=1)
    return out


def extract_features(params: FeatureExtractorParams, embeddings: np.ndarray) -> np.ndarray:
    """Per-node feature vectors from per-node time series (n, E) -> (n, K).

    Inference mode: batch-norm uses the stored running statistics, so the
    output is deterministic and identical rows map to identical features.
    """
    X = np.asarray(embeddings, dtype=float)
    if X.ndim != 2:
        raise ValueError("embeddings must be a (nodes, length) matrix")
    x = X[:, None, :]  # (n, 1, T)
    for blk in params.conv_blocks:
        x = _conv1d(x, blk.weights, blk.bias, blk.stride)
        inv = 1.0 / np.sqrt(blk.bn_var + _BN_EPS)
        x = (x - blk.bn_mean[None, :, None]) * (blk.bn_scale * inv)[None, :, None]
        x = x + blk.bn_shift[None, :, None]
        x = np.where(x >= 0, x, _LEAKY_SLOPE * x)
    x = np.tensordot(x, params.proj_weight, axes=[(1,), (0,)]) + params.proj_bias
    return _adaptive_avg_pool(x, params.feature_dim)


def init_feature_extractor(
    rng: np.random.Generator,
    in_len: int,
    channels: tuple[int, ...] = (4, 4, 4),
    kernel: int = 5,
    stride: int = 2,
    feature_dim: int = 8,
) -> FeatureExtractorParams:
    """Seeded random extractor; validates that the conv stack fits ``in_len``."""
    blocks = []
    c_in, T = 1, in_len
    for c_out in channels:
        k = min(kernel, T)
        if T < 1:
            raise ValueError("conv stack consumed the whole time axis")
        std = 1.0 / np.sqrt(c_in * k)
        blocks.append(
            ConvBlock(
                weights=rng.normal(scale=std, size=(c_out, c_in, k)),
                bias=np.zeros(c_out),
                stride=stride,
                bn_scale=np.ones(c_out),
                bn_shift=np.zeros(c_out),
                bn_mean=np.zeros(c_out),
                bn_var=np.ones(c_out),
            )
        )
        T = (T - k) // stride + 1
        c_in = c_out
    proj = rng.normal(scale=1.0 / np.sqrt(c_in), size=c_in)
    return FeatureExtractorParams(
        conv_blocks=tuple(blocks),
        proj_weight=proj,
        proj_bias=0.0,
        feature_dim=feature_dim,
    )


# ---------------------------------------------------------------------------
# Metric and distances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricFactor:
    """Low-rank factor Q of the PSD metric M = Q Q^T used by the distances."""

    q: np.ndarray  # (K, r)


def mahalanobis_distances(
    features: np.ndarray, metric: MetricFactor, normalize: bool = True
) -> np.ndarray:
    """Pairwise d_ij = (f_i - f_j)^T Q Q^T (f_i - f_j), optionally min-max scaled.

    The factored form guarantees nonnegativity; normalization maps the
    off-diagonal entries to [0, 1] per call, with an all-equal field mapping
    to zeros.
    """
    F = np.asarray(features, dtype=float)
    G = F @ metric.q
    sq = np.sum(G * G, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (G @ G.T)
    np.maximum(d, 0.0, out=d)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    if not normalize:
        return d
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    lo = d[off].min() if n > 1 else 0.0
    hi = d[off].max() if n > 1 else 0.0
    if hi - lo <= 1e-300:
        return np.zeros_like(d)
    out = (d - lo) / (hi - lo)
    np.fill_diagonal(out, 0.0)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    extractor: FeatureExtractorParams
    metric: MetricFactor
    filter_spec: FilterSpec


@dataclass(frozen=True)
class DenoiserModel:
    """Ordered blocks plus the fixed topology, initial polarities, and chunking."""

    blocks: tuple[Block, ...]
    topology: SignedGraph
    beta0: np.ndarray
    chunking: tuple[int, int, int]  # (channels N, chunks H, chunk length D)
    graph_mode: str = BALANCED
    scheme: WeightScheme = WeightScheme(SIGNED_AFFINITY)
    polarity_sweeps: int = 1

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("model needs at least one block")
        if self.graph_mode not in _GRAPH_MODES:
            raise ValueError(f"unknown graph mode {self.graph_mode!r}")
        N, H, _ = self.chunking
        if self.topology.n_nodes != N * H:
            raise ValueError(
                f"topology has {self.topology.n_nodes} nodes, chunking implies {N * H}"
            )
        validate_polarity(self.beta0, self.topology.n_nodes)
        self.topology.incident  # materialize once; reweighted copies share it

    @property
    def n_nodes(self) -> int:
        return self.topology.n_nodes


def init_denoiser_model(
    topology: SignedGraph,
    beta0: np.ndarray,
    chunking: tuple[int, int, int],
    rng: np.random.Generator,
    n_blocks: int = 3,
    channels: tuple[int, ...] = (4, 4, 4),
    kernel: int = 5,
    stride: int = 2,
    feature_dim: int = 8,
    metric_rank: int = 4,
    omega_init: float = 1.0,
    alpha: float = 10.0,
    filter_mode: str = "sigmoid",
    graph_mode: str = BALANCED,
    scheme: WeightScheme | None = None,
    polarity_sweeps: int = 1,
) -> DenoiserModel:
    """Seeded random model with identical architecture in every block."""
    _, _, D = chunking
    blocks = []
    for _ in range(n_blocks):
        extractor = init_feature_extractor(
            rng, in_len=D, channels=channels, kernel=kernel, stride=stride, feature_dim=feature_dim
        )
        q = rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(feature_dim, metric_rank))
        spec = FilterSpec(omega=omega_init, alpha=alpha, mode=filter_mode, backend=EXACT)
        blocks.append(Block(extractor=extractor, metric=MetricFactor(q), filter_spec=spec))
    if scheme is None:
        scheme = WeightScheme(SIGNED_AFFINITY if graph_mode == BALANCED else POSITIVE_ONLY)
        if graph_mode == UNBALANCED:
            scheme = WeightScheme(LOGISTIC_UNBALANCED, d_star=0.5)
    return DenoiserModel(
        blocks=tuple(blocks),
        topology=topology,
        beta0=np.asarray(beta0, dtype=np.int64),
        chunking=tuple(chunking),
        graph_mode=graph_mode,
        scheme=scheme,
        polarity_sweeps=polarity_sweeps,
    )


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockGraph:
    """Graph state produced by one graph-learning stage."""

    laplacian: Laplacian  # positive-graph (or PSD signed) Laplacian
    beta: np.ndarray
    normalized_graph: SignedGraph
    delta: float


def bgl_block(
    model: DenoiserModel,
    block: Block,
    embeddings: np.ndarray,
    beta: np.ndarray,
    signals: np.ndarray,
) -> BlockGraph:
    """Features -> distances -> signed weights -> normalization -> PSD Laplacian."""
    f = extract_features(block.extractor, embeddings)
    d = mahalanobis_distances(f, block.metric)
    if model.graph_mode == BALANCED:
        g = assign_weights(d, beta, model.scheme, model.topology)
        if model.polarity_sweeps > 0:
            upd = update_polarities(g, beta, signals, max_sweeps=model.polarity_sweeps)
            beta = upd.beta
            g = assign_weights(d, beta, model.scheme, model.topology)
        gn = normalize_weights(g)
        L = build_laplacian(gn, COMBINATORIAL)
        shifted, delta = gct_shift(L)
        L_out = similarity_transform(shifted, beta)
    else:
        beta = np.ones(model.n_nodes, dtype=np.int64)
        g = assign_weights(d, None, model.scheme, model.topology)
        gn = normalize_weights(g)
        variant = SIGNED if model.graph_mode == UNBALANCED else COMBINATORIAL
        L = build_laplacian(gn, variant)
        L_out, delta = gct_shift(L)
    return BlockGraph(laplacian=L_out, beta=beta, normalized_graph=gn, delta=delta)


@dataclass(frozen=True)
class BlockTrace:
    """Per-block record kept for analytic cutoff gradients."""

    beta: np.ndarray
    eigen: EigenPair
    x_in: np.ndarray  # block input in the original (balanced) domain


def _forward(model: DenoiserModel, y: np.ndarray, collect_trace: bool):
    Y = np.asarray(y, dtype=float)
    vector_in = Y.ndim == 1
    X = Y[:, None] if vector_in else Y
    if X.shape[0] != model.n_nodes:
        raise ValueError(f"signal has {X.shape[0]} rows, model expects {model.n_nodes}")
    beta = model.beta0
    trace: list[BlockTrace] = []
    for block in model.blocks:
        bg = bgl_block(model, block, X, beta, X)
        beta = bg.beta
        b = beta.astype(float)[:, None]
        y_plus = b * X
        if collect_trace:
            if block.filter_spec.backend != EXACT:
                raise ValueError("trace collection requires exact-backend filters")
            pair = eigh(bg.laplacian)
            trace.append(BlockTrace(beta=beta.copy(), eigen=pair, x_in=X))
            x_plus = lp_filter(bg.laplacian, y_plus, block.filter_spec, pair=pair)
        else:
            x_plus = lp_filter(bg.laplacian, y_plus, block.filter_spec)
        X = b * x_plus
    out = X[:, 0] if vector_in else X
    return out, trace


def denoise(model: DenoiserModel, y: np.ndarray) -> np.ndarray:
    """Run every block on a node-major signal (vector or matrix of columns)."""
    out, _ = _forward(model, y, collect_trace=False)
    return out


def denoise_with_trace(model: DenoiserModel, y: np.ndarray):
    """Forward pass that also returns per-block (beta, eigenpair, input) records."""
    return _forward(model, y, collect_trace=True)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _arr(a: np.ndarray) -> list:
    return np.asarray(a).tolist()


def model_to_doc(model: DenoiserModel) -> dict:
    """Self-describing JSON document with explicit shapes and a format tag."""
    blocks = []
    for blk in model.blocks:
        conv = [
            {
                "weights": _arr(cb.weights),
                "shape": list(cb.weights.shape),
                "bias": _arr(cb.bias),
                "stride": cb.stride,
                "bn_scale": _arr(cb.bn_scale),
                "bn_shift": _arr(cb.bn_shift),
                "bn_mean": _arr(cb.bn_mean),
                "bn_var": _arr(cb.bn_var),
            }
            for cb in blk.extractor.conv_blocks
        ]
        spec = blk.filter_spec
        blocks.append(
            {
                "conv_blocks": conv,
                "proj_weight": _arr(blk.extractor.proj_weight),
                "proj_bias": blk.extractor.proj_bias,
                "feature_dim": blk.extractor.feature_dim,
                "metric_q": _arr(blk.metric.q),
                "metric_shape": list(blk.metric.q.shape),
                "filter": {
                    "omega": spec.omega,
                    "alpha": spec.alpha,
                    "mode": spec.mode,
                    "backend": spec.backend,
                    "m": spec.m,
                },
            }
        )
    return {
        "format": MODEL_FORMAT,
        "graph_mode": model.graph_mode,
        "scheme": {"kind": model.scheme.kind, "d_star": model.scheme.d_star},
        "polarity_sweeps": model.polarity_sweeps,
        "chunking": list(model.chunking),
        "beta0": _arr(model.beta0),
        "topology": {
            "n_nodes": model.topology.n_nodes,
            "edges": [[i, j, w] for i, j, w in model.topology.edge_list()],
            "self_loops": _arr(model.topology.self_loops),
        },
        "n_blocks": len(model.blocks),
        "blocks": blocks,
    }


def model_from_doc(doc: dict) -> DenoiserModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unknown model format {doc.get('format')!r}")
    topo = SignedGraph.from_edges(
        doc["topology"]["n_nodes"],
        [(int(i), int(j), float(w)) for i, j, w in doc["topology"]["edges"]],
        np.asarray(doc["topology"]["self_loops"], dtype=float),
    )
    blocks = []
    for b in doc["blocks"]:
        conv = tuple(
            ConvBlock(
                weights=np.asarray(cb["weights"], dtype=float),
                bias=np.asarray(cb["bias"], dtype=float),
                stride=int(cb["stride"]),
                bn_scale=np.asarray(cb["bn_scale"], dtype=float),
                bn_shift=np.asarray(cb["bn_shift"], dtype=float),
                bn_mean=np.asarray(cb["bn_mean"], dtype=float),
                bn_var=np.asarray(cb["bn_var"], dtype=float),
            )
            for cb in b["conv_blocks"]
        )
        extractor = FeatureExtractorParams(
            conv_blocks=conv,
            proj_weight=np.asarray(b["proj_weight"], dtype=float),
            proj_bias=float(b["proj_bias"]),
            feature_dim=int(b["feature_dim"]),
        )
        f = b["filter"]
        spec = FilterSpec(
            omega=f["omega"],
            alpha=f["alpha"],
            mode=f["mode"],
            backend=f["backend"],
            m=f["m"],
        )
        blocks.append(Block(extractor=extractor, metric=MetricFactor(np.asarray(b["metric_q"], dtype=float)), filter_spec=spec))
    return DenoiserModel(
        blocks=tuple(blocks),
        topology=topo,
        beta0=np.asarray(doc["beta0"], dtype=np.int64),
        chunking=tuple(doc["chunking"]),
        graph_mode=doc["graph_mode"],
        scheme=WeightScheme(doc["scheme"]["kind"], d_star=float(doc["scheme"]["d_star"])),
        polarity_sweeps=int(doc["polarity_sweeps"]),
    )


def save_model(model: DenoiserModel, path) -> None:
    Path(path).write_text(
        json.dumps(model_to_doc(model), sort_keys=True) + "\n", encoding="utf-8"
    )


def load_model(path) -> DenoiserModel:
    return model_from_doc(json.loads(Path(path).read_text(encoding="utf-8")))


def with_filter_specs(model: DenoiserModel, specs) -> DenoiserModel:
    """Copy of the model with one FilterSpec per block replaced."""
    if len(specs) != len(model.blocks):
        raise ValueError("one spec per block required")
    new_blocks = tuple(replace(b, filter_spec=s) for b, s in zip(model.blocks, specs))
    return replace(model, blocks=new_blocks)
