"""Learned feasibility screening for candidate cliques.

A candidate (vehicle + request set) is featurized as a small graph, embedded
with a few rounds of message passing, and mapped to a feasibility
probability. Candidates below the threshold skip the exact travel search.
Training is plain mini-batch SGD with manually derived gradients so the
whole layer stays dependency-light and exactly reproducible.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demand import Request
from .fleet import Vehicle
from .network import TravelTimeOracle

PARAMS_FORMAT_VERSION = 1
NODE_FEATURES = 4
EDGE_FEATURES = 1


@dataclass(frozen=True)
class FeatureScaling:
    """Normalizers for clique features; all strictly positive."""

    max_wait: int
    max_delay: int
    trip_time_norm: int

    def __post_init__(self):
        for name in ("max_wait", "max_delay", "trip_time_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive to normalize features")


@dataclass(frozen=True)
class CliqueGraph:
    """Featurized candidate: vehicle node first, then requests by ascending id.

    node_features: (n, 4) float64; edge_index: (m, 2) int64 with i < j;
    edge_features: (m, 1) float64. Request nodes are fully connected (every
    candidate reaching this layer is a shareability clique) and the vehicle
    node connects to all request nodes.
    """

    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray

    def __post_init__(self):
        if self.node_features.ndim != 2 or self.node_features.shape[1] != NODE_FEATURES:
            raise ValueError(f"node_features must be (n, {NODE_FEATURES})")
        if self.node_features.shape[0] < 2:
            raise ValueError("a clique graph needs at least 2 nodes")
        if not np.all(np.isfinite(self.node_features)):
            raise ValueError("node features must be finite")
        if len(self.edge_index) != len(self.edge_features):
            raise ValueError("edge_index and edge_features disagree")

    @property
    def n_nodes(self) -> int:
        return int(self.node_features.shape[0])

    @property
    def n_requests(self) -> int:
        return self.n_nodes - 1


@dataclass
class EmbeddingParams:
    """Learnable message-passing weights and readout."""

    w1: np.ndarray  # (d_p, d_x)
    w2: np.ndarray  # (d_p, d_p)
    w3: np.ndarray  # (d_p, d_p)
    w4: np.ndarray  # (d_p, d_e)
    readout: np.ndarray  # (d_p,)
    bias: float
    rounds: int

    def __post_init__(self):
        d_p = self.w1.shape[0]
        if self.w2.shape != (d_p, d_p) or self.w3.shape != (d_p, d_p):
            raise ValueError("w2/w3 shape mismatch")
        if self.w4.shape[0] != d_p or self.readout.shape != (d_p,):
            raise ValueError("w4/readout shape mismatch")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @property
    def dim(self) -> int:
        return int(self.w1.shape[0])

    @staticmethod
    def init(d_p: int, rounds: int, rng: np.random.Generator) -> "EmbeddingParams":
        scale = 0.1
        return EmbeddingParams(
            w1=rng.normal(0.0, scale, (d_p, NODE_FEATURES)),
            w2=rng.normal(0.0, scale, (d_p, d_p)),
            w3=rng.normal(0.0, scale, (d_p, d_p)),
            w4=rng.normal(0.0, scale, (d_p, EDGE_FEATURES)),
            readout=rng.normal(0.0, scale, d_p),
            bias=0.0,
            rounds=rounds,
        )

    def save(self, path: str) -> None:
        doc = {
            "version": PARAMS_FORMAT_VERSION,
            "dim": self.dim,
            "rounds": self.rounds,
            "node_feature_dim": NODE_FEATURES,
            "edge_feature_dim": EDGE_FEATURES,
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
            "w3": self.w3.tolist(),
            "w4": self.w4.tolist(),
            "readout": self.readout.tolist(),
            "bias": self.bias,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @staticmethod
    def load(path: str) -> "EmbeddingParams":
        with open(path) as fh:
            doc = json.load(fh)
        if "version" not in doc:
            raise ValueError(f"{path}: missing version field")
        if doc["version"] != PARAMS_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {doc['version']}")
        return EmbeddingParams(
            w1=np.asarray(doc["w1"], dtype=float),
            w2=np.asarray(doc["w2"], dtype=float),
            w3=np.asarray(doc["w3"], dtype=float),
            w4=np.asarray(doc["w4"], dtype=float),
            readout=np.asarray(doc["readout"], dtype=float),
            bias=float(doc["bias"]),
            rounds=int(doc["rounds"]),
        )


@dataclass(frozen=True)
class FilterConfig:
    threshold: float = 0.0
    min_applied_size: int = 2
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0,1], got {self.threshold}")


@dataclass(frozen=True)
class CliqueSample:
    graph: CliqueGraph
    label: int
    epoch: int


def featurize(
    vehicle: Vehicle,
    requests: Sequence[Request],
    now: int,
    oracle: TravelTimeOracle,
    scaling: FeatureScaling,
) -> CliqueGraph:
    """Deterministic clique features; see CliqueGraph for the layout.

    Request node: [pickup slack, remaining delay allowance if picked up now
    and driven directly, direct trip time, 0], all normalized. Vehicle node:
    [free seat fraction, time to the earliest onboard dropoff deadline
    (1.0 when empty), 0, 1].
    """
    reqs = sorted(requests, key=lambda r: r.id)
    if not reqs:
        raise ValueError("featurize needs at least one request")
    n = len(reqs) + 1

    feats = np.zeros((n, NODE_FEATURES), dtype=float)
    if vehicle.onboard:
        earliest = min(p.t_latest_dropoff for p in vehicle.onboard)
        onboard_slack = (earliest - now) / scaling.max_delay
    else:
        onboard_slack = 1.0
    feats[0] = [vehicle.free_seats / vehicle.capacity, onboard_slack, 0.0, 1.0]

    direct: dict[int, int] = {}
    for i, r in enumerate(reqs, start=1):
        d = oracle.shortest_time(r.origin, r.destination)
        direct[r.id] = d if d is not None else scaling.trip_time_norm
        feats[i] = [
            (r.t_latest_pickup - now) / scaling.max_wait,
            (r.t_latest_dropoff - now - direct[r.id]) / scaling.max_delay,
            direct[r.id] / scaling.trip_time_norm,
            0.0,
        ]

    INF = 1 << 40
    def tt(u: int, v: int) -> int:
        t = oracle.shortest_time(u, v)
        return INF if t is None else t

    veh_node = vehicle.effective_node
    veh_delay = vehicle.effective_delay
    edges: list[tuple[int, int]] = []
    efeats: list[float] = []
    for i, r in enumerate(reqs, start=1):
        edges.append((0, i))
        efeats.append((veh_delay + tt(veh_node, r.origin)) / scaling.max_wait)
    for i in range(1, n):
        for j in range(i + 1, n):
            ri, rj = reqs[i - 1], reqs[j - 1]
            detour = tt(ri.origin, rj.origin) + tt(rj.origin, ri.destination) - direct[ri.id]
            edges.append((i, j))
            efeats.append(detour / scaling.max_delay)

    return CliqueGraph(
        node_features=feats,
        edge_index=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_features=np.asarray(efeats, dtype=float).reshape(-1, 1),
    )


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _graph_arrays(g: CliqueGraph) -> tuple[np.ndarray, np.ndarray]:
    """Dense adjacency and per-node aggregated edge messages' input."""
    n = g.n_nodes
    adj = np.zeros((n, n), dtype=float)
    for (i, j) in g.edge_index:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    return adj, g.edge_features


def _forward(g: CliqueGraph, p: EmbeddingParams):
    """All intermediate states needed for both inference and backprop."""
    n = g.n_nodes
    adj, efeat = _graph_arrays(g)
    x = g.node_features

    edge_pre = efeat @ p.w4.T            # (m, d_p)
    edge_act = _relu(edge_pre)
    msg = np.zeros((n, p.dim), dtype=float)
    for e, (i, j) in enumerate(g.edge_index):
        msg[i] += edge_act[e]
        msg[j] += edge_act[e]

    base = x @ p.w1.T + msg @ p.w3.T     # constant across rounds
    mu = np.zeros((n, p.dim), dtype=float)
    pre_list = []
    mu_list = [mu]
    for _ in range(p.rounds):
        pre = base + (adj @ mu) @ p.w2.T
        mu = _relu(pre)
        pre_list.append(pre)
        mu_list.append(mu)
    emb = mu.sum(axis=0)
    logit = float(p.readout @ emb + p.bias)
    return {
        "adj": adj,
        "x": x,
        "edge_pre": edge_pre,
        "edge_act": edge_act,
        "msg": msg,
        "pre_list": pre_list,
        "mu_list": mu_list,
        "emb": emb,
        "logit": logit,
    }


def embed(g: CliqueGraph, p: EmbeddingParams) -> np.ndarray:
    """Sum-pooled node embedding after `rounds` of message passing."""
    return _forward(g, p)["emb"]


def predict(g: CliqueGraph, p: EmbeddingParams) -> float:
    """Feasibility probability in (0, 1)."""
    logit = _forward(g, p)["logit"]
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    z = math.exp(logit)
    return z / (1.0 + z)


def gate(g: CliqueGraph, p: EmbeddingParams, cfg: FilterConfig) -> bool:
    """True = skip the travel call. Evaluates at the threshold boundary."""
    if not cfg.enabled:
        return False
    if g.n_requests < cfg.min_applied_size:
        return False
    return predict(g, p) < cfg.threshold


def _zero_grads(p: EmbeddingParams) -> dict:
    return {
        "w1": np.zeros_like(p.w1),
        "w2": np.zeros_like(p.w2),
        "w3": np.zeros_like(p.w3),
        "w4": np.zeros_like(p.w4),
        "readout": np.zeros_like(p.readout),
        "bias": 0.0,
    }


def loss_and_gradients(p: EmbeddingParams, samples: Sequence[CliqueSample]) -> tuple[float, dict]:
    """Mean binary cross-entropy and its exact gradients over a batch."""
    if not samples:
        raise ValueError("empty batch")
    grads = _zero_grads(p)
    total_loss = 0.0
    inv = 1.0 / len(samples)
    for sample in samples:
        g = sample.graph
        y = float(sample.label)
        f = _forward(g, p)
        logit = f["logit"]
        # stable BCE on the logit
        total_loss += max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))
        prob = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else (
            math.exp(logit) / (1.0 + math.exp(logit))
        )
        dlogit = (prob - y) * inv

        grads["readout"] += dlogit * f["emb"]
        grads["bias"] += dlogit
        dmu = np.tile(dlogit * p.readout, (g.n_nodes, 1))  # d loss / d mu_T

        adj = f["adj"]
        dbase = np.zeros_like(dmu)
        for t in range(p.rounds - 1, -1, -1):
            dpre = dmu * (f["pre_list"][t] > 0)
            agg = adj @ f["mu_list"][t]
            grads["w2"] += dpre.T @ agg
            dbase += dpre
            dmu = adj @ (dpre @ p.w2)
        grads["w1"] += dbase.T @ f["x"]
        grads["w3"] += dbase.T @ f["msg"]
        dmsg = dbase @ p.w3
        dedge_act = np.zeros_like(f["edge_act"])
        for e, (i, j) in enumerate(g.edge_index):
            dedge_act[e] = dmsg[i] + dmsg[j]
        dedge_pre = dedge_act * (f["edge_pre"] > 0)
        grads["w4"] += dedge_pre.T @ g.edge_features

    return total_loss * inv, grads


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-2
    batches: int = 500
    batch_size: int = 64
    seed: int = 0
    rounds: int = 3
    dim: int = 16


@dataclass
class TrainReport:
    params: EmbeddingParams
    final_loss: float
    ranking_score: float
    n_samples: int


def train(samples: Sequence[CliqueSample], hyper: TrainHyper) -> TrainReport:
    """Mini-batch SGD on mean BCE; deterministic for a fixed seed.

    The ranking score is the fraction of (positive, negative) sample pairs
    the trained model orders correctly (ties count one half).
    """
    labels = {s.label for s in samples}
    if not samples or labels != {0, 1}:
        raise ValueError("training needs at least one sample of each label")
    rng = np.random.default_rng(hyper.seed)
    params = EmbeddingParams.init(hyper.dim, hyper.rounds, rng)

    n = len(samples)
    final_loss = math.inf
    for _ in range(hyper.batches):
        idx = rng.integers(0, n, size=min(hyper.batch_size, n))
        batch = [samples[i] for i in idx]
        loss, grads = loss_and_gradients(params, batch)
        final_loss = loss
        params.w1 -= hyper.lr * grads["w1"]
        params.w2 -= hyper.lr * grads["w2"]
        params.w3 -= hyper.lr * grads["w3"]
        params.w4 -= hyper.lr * grads["w4"]
        params.readout -= hyper.lr * grads["readout"]
        params.bias -= hyper.lr * grads["bias"]

    scores = [(predict(s.graph, params), s.label) for s in samples]
    pos = [p for p, y in scores if y == 1]
    neg = [p for p, y in scores if y == 0]
    correct = 0.0
    for pp in pos:
        for pn in neg:
            if pp > pn:
                correct += 1.0
            elif pp == pn:
                correct += 0.5
    ranking = correct / (len(pos) * len(neg))
    return TrainReport(params=params, final_loss=final_loss, ranking_score=ranking, n_samples=n)


# ---------------------------------------------------------------------------
# sample logging
# ---------------------------------------------------------------------------


def sample_to_record(g: CliqueGraph, label: int, epoch: int) -> dict:
    return {
        "epoch": int(epoch),
        "label": int(label),
        "nodes": [[float(v) for v in row] for row in g.node_features],
        "edges": [
            [int(i), int(j), float(f[0])]
            for (i, j), f in zip(g.edge_index, g.edge_features)
        ],
    }


def record_to_sample(record: dict) -> CliqueSample:
    edges = record["edges"]
    return CliqueSample(
        graph=CliqueGraph(
            node_features=np.asarray(record["nodes"], dtype=float),
            edge_index=np.asarray([[e[0], e[1]] for e in edges], dtype=np.int64).reshape(-1, 2),
            edge_features=np.asarray([[e[2]] for e in edges], dtype=float).reshape(-1, 1),
        ),
        label=int(record["label"]),
        epoch=int(record["epoch"]),
    )


class SampleSink:
    """Append-only line-delimited JSON writer, flushed at epoch boundaries."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "w")
        self._lock = threading.Lock()
        self.n_written = 0

    def log_sample(self, g: CliqueGraph, label: int, epoch: int) -> None:
        line = json.dumps(sample_to_record(g, label, epoch), sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self.n_written += 1

    def flush_epoch(self) -> None:
        with self._lock:
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def log_sample(sink: SampleSink, g: CliqueGraph, label: int, epoch: int) -> None:
    sink.log_sample(g, label, epoch)


def read_samples(path: str) -> list[CliqueSample]:
    out: list[CliqueSample] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_to_sample(json.loads(line)))
    return out
