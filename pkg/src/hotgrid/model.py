"""Forward pass of the hotspot predictor and its loss.

Per input window the unit's snapshot runs through two graph
convolutions: an edge-weighted layer (neighbors weighted by one minus
the min-max-normalized distance into each destination) and an
edge-enhanced layer (per-edge messages gated by the normalized
distance, max-pooled per node). Node embeddings average into one row
per window, an LSTM walks the T rows, and a sigmoid head emits 32
per-sub-area hotspot probabilities.

Everything here runs on the autodiff tape so training gets exact
gradients; the distance normalizations are precomputed in prepare_*
because edge features are inputs, not parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError, ShapeError
from .stgraph import SUB_AREAS, Snapshot, UnitSequence

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    d1: int = 64  # edge-weighted conv width
    d2: int = 64  # edge-enhanced conv width
    hidden: int = 64  # LSTM state size
    self_loops: bool = True  # weight-1 self edge in the first conv
    self_messages: bool = True  # norm-0 self message in the second conv
    undirected: bool = False  # mirror every edge before aggregation
    normalize_input: bool = True  # scale X by the sequence's max intensity


_LSTM_GATES = ("f", "i", "c", "o")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in a fixed order."""
    shapes: dict[str, tuple[int, ...]] = {
        "w_alpha": (SUB_AREAS, cfg.d1),
        "b_ew": (cfg.d1,),
        "w_phi": (cfg.d1, cfg.d2),
        "b_phi": (cfg.d2,),
        "w_theta": (cfg.d1, cfg.d2),
        "b_theta": (cfg.d2,),
    }
    for gate in _LSTM_GATES:
        shapes[f"w_lstm_{gate}"] = (cfg.hidden + cfg.d2, cfg.hidden)
        shapes[f"b_lstm_{gate}"] = (cfg.hidden,)
    shapes["w_head"] = (cfg.hidden, SUB_AREAS)
    shapes["b_head"] = (SUB_AREAS,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, ad.Tensor]

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def ordered(self) -> list[ad.Tensor]:
        return [self.tensors[k] for k in param_shapes(self.config)]

    def copy_data(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_data(self, blobs: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            t.data = blobs[k].copy()

    def validate(self) -> None:
        shapes = param_shapes(self.config)
        if set(self.tensors) != set(shapes):
            raise DataError(
                f"parameter names {sorted(self.tensors)} do not match {sorted(shapes)}"
            )
        for k, want in shapes.items():
            got = self.tensors[k].data.shape
            if got != want:
                raise DataError(f"tensor {k} has shape {got}, expected {want}")
            if not np.all(np.isfinite(self.tensors[k].data)):
                raise NumericError(f"tensor {k} contains non-finite values")


# --- checkpoint file ---------------------------------------------------------

_CKPT_FORMAT = "hotgrid-params"
_CKPT_VERSION = 1


def save_params(params: ModelParams, path: str | Path) -> None:
    params.validate()
    doc = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "config": asdict(params.config),
        "tensors": {
            k: {"shape": list(t.data.shape), "data": [float(v) for v in t.data.ravel()]}
            for k, t in params.tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _CKPT_FORMAT:
        raise DataError(f"{path} is not a parameter checkpoint")
    if doc.get("version") != _CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = ModelConfig(**doc["config"])
        shapes = param_shapes(config)
        tensors: dict[str, ad.Tensor] = {}
        for name in shapes:
            entry = doc["tensors"][name]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            tensors[name] = ad.Tensor(arr)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from exc
    params = ModelParams(config=config, tensors=tensors)
    params.validate()
    return params


# --- snapshot preparation ----------------------------------------------------


def _per_dest_minmax(dists: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    """Min-max normalize distances within each destination's incoming set.

    A destination whose incoming distances are all equal (including the
    single-edge case) gets zeros, the documented degenerate convention.
    """
    out = np.zeros_like(dists, dtype=np.float64)
    for i in range(n):
        sel = dst == i
        if not np.any(sel):
            continue
        vals = dists[sel]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            out[sel] = (vals - lo) / (hi - lo)
    return out


def edge_weights(dists: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    """First-layer weights: 1 at each destination's nearest source, 0 at
    its farthest, 1 everywhere on degenerate rows."""
    dists = np.asarray(dists, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.int64)
    return 1.0 - _per_dest_minmax(dists, dst, n)


def edge_norm(dists: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    """Second-layer distance gate: the same normalization, unflipped."""
    dists = np.asarray(dists, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.int64)
    return _per_dest_minmax(dists, dst, n)


@dataclass
class PreparedSnapshot:
    n: int
    X: np.ndarray  # (n, 32), possibly rescaled
    A_w: np.ndarray  # (n, n) weighted adjacency incl. optional self-loops
    msg_src: np.ndarray  # (m,) message source rows
    msg_dst: np.ndarray  # (m,) message destination rows
    msg_norm: np.ndarray  # (m, 1) distance gate per message


@dataclass
class PreparedSequence:
    unit: str
    category: str
    label: np.ndarray  # (32,)
    snaps: list[PreparedSnapshot] = field(default_factory=list)


def prepare_snapshot(snap: Snapshot, cfg: ModelConfig, scale: float = 1.0) -> PreparedSnapshot:
    n = snap.n_nodes
    X = snap.X / scale if scale not in (0.0, 1.0) else snap.X.copy()
    if n == 0:
        return PreparedSnapshot(
            n=0,
            X=X,
            A_w=np.zeros((0, 0)),
            msg_src=np.zeros(0, dtype=np.int64),
            msg_dst=np.zeros(0, dtype=np.int64),
            msg_norm=np.zeros((0, 1)),
        )

    pairs: list[tuple[int, int]] = [(int(s), int(d)) for s, d in snap.edges]
    dists = [float(v) for v in snap.dists]
    if cfg.undirected:
        have = set(pairs)
        for (s, d), km in zip(list(pairs), list(dists)):
            if (d, s) not in have:
                have.add((d, s))
                pairs.append((d, s))
                dists.append(km)
    src = np.asarray([p[0] for p in pairs], dtype=np.int64)
    dst = np.asarray([p[1] for p in pairs], dtype=np.int64)
    km = np.asarray(dists, dtype=np.float64)

    A_w = np.zeros((n, n))
    A_w[dst, src] = edge_weights(km, dst, n)
    if cfg.self_loops:
        A_w[np.arange(n), np.arange(n)] = 1.0

    norm = edge_norm(km, dst, n)
    if cfg.self_messages:
        selfs = np.arange(n, dtype=np.int64)
    else:
        # isolated nodes still need one message to pool over
        indeg = np.bincount(dst, minlength=n)
        selfs = np.flatnonzero(indeg == 0).astype(np.int64)
    msg_src = np.concatenate([src, selfs])
    msg_dst = np.concatenate([dst, selfs])
    msg_norm = np.concatenate([norm, np.zeros(len(selfs))]).reshape(-1, 1)
    return PreparedSnapshot(n=n, X=X, A_w=A_w, msg_src=msg_src, msg_dst=msg_dst, msg_norm=msg_norm)


def prepare_sequence(seq: UnitSequence, cfg: ModelConfig) -> PreparedSequence:
    scale = 1.0
    if cfg.normalize_input:
        peak = max((float(s.X.max()) if s.X.size else 0.0) for s in seq.snapshots)
        if peak > 0:
            scale = peak
    prepared = PreparedSequence(unit=seq.unit, category=seq.category, label=seq.label.copy())
    for snap in seq.snapshots:
        prepared.snaps.append(prepare_snapshot(snap, cfg, scale))
    return prepared


def prepare_all(seqs: Sequence[UnitSequence], cfg: ModelConfig) -> list[PreparedSequence]:
    return [prepare_sequence(s, cfg) for s in seqs]


# --- forward pass ------------------------------------------------------------


def ew_conv(prep: PreparedSnapshot, params: ModelParams) -> ad.Tensor:
    xw = ad.matmul(ad.Tensor(prep.X), params["w_alpha"])
    agg = ad.matmul(ad.Tensor(prep.A_w), xw)
    return ad.relu(ad.add(agg, params["b_ew"]))


def ee_conv(prep: PreparedSnapshot, h1: ad.Tensor, params: ModelParams) -> ad.Tensor:
    gated = ad.mul(ad.take_rows(h1, prep.msg_src), ad.Tensor(prep.msg_norm))
    msg = ad.add(ad.matmul(gated, params["w_phi"]), params["b_phi"])
    keep = ad.add(ad.matmul(h1, params["w_theta"]), params["b_theta"])
    combined = ad.relu(ad.add(msg, ad.take_rows(keep, prep.msg_dst)))
    return ad.segment_max(combined, prep.msg_dst, prep.n)


def readout(h2: ad.Tensor) -> ad.Tensor:
    return ad.mean_rows(h2)


def snapshot_embedding(prep: PreparedSnapshot, params: ModelParams) -> ad.Tensor:
    if prep.n == 0:
        return ad.Tensor(np.zeros((1, params.config.d2)))
    return readout(ee_conv(prep, ew_conv(prep, params), params))


def lstm_forward(xs: Sequence[ad.Tensor], params: ModelParams) -> ad.Tensor:
    """Run the gated recurrence over T rows; returns the last hidden state."""
    if not xs:
        raise ShapeError("lstm_forward needs at least one step")
    batch = xs[0].data.shape[0]
    hidden = params.config.hidden
    h = ad.Tensor(np.zeros((batch, hidden)))
    c = ad.Tensor(np.zeros((batch, hidden)))
    for x in xs:
        z = ad.concat_cols(h, x)
        f = ad.sigmoid(ad.add(ad.matmul(z, params["w_lstm_f"]), params["b_lstm_f"]))
        i = ad.sigmoid(ad.add(ad.matmul(z, params["w_lstm_i"]), params["b_lstm_i"]))
        g = ad.tanh(ad.add(ad.matmul(z, params["w_lstm_c"]), params["b_lstm_c"]))
        o = ad.sigmoid(ad.add(ad.matmul(z, params["w_lstm_o"]), params["b_lstm_o"]))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
    return h


def head(o: ad.Tensor, params: ModelParams) -> ad.Tensor:
    return ad.sigmoid(ad.add(ad.matmul(o, params["w_head"]), params["b_head"]))


def forward_batch(preps: Sequence[PreparedSequence], params: ModelParams) -> ad.Tensor:
    """Probabilities for a batch of sequences: (batch, 32)."""
    if not preps:
        raise ShapeError("forward_batch of an empty batch")
    T = len(preps[0].snaps)
    for p in preps:
        if len(p.snaps) != T:
            raise ShapeError("sequences in one batch must share T")
    xs = []
    for t in range(T):
        xs.append(ad.stack_rows([snapshot_embedding(p.snaps[t], params) for p in preps]))
    return head(lstm_forward(xs, params), params)


def forward(seq: UnitSequence, params: ModelParams) -> np.ndarray:
    """Convenience single-sequence inference: a plain (32,) probability row."""
    prep = prepare_sequence(seq, params.config)
    return forward_batch([prep], params).data[0]


def bce_loss(probs: ad.Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> ad.Tensor:
    """Mean binary cross-entropy; the positive term scales by pos_weight."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.data.shape:
        raise ShapeError(f"labels {y.shape} do not match probabilities {probs.data.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("labels must be 0/1")
    p = ad.clamp(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)
    pos = ad.mul(ad.Tensor(y * pos_weight), ad.log(p))
    neg = ad.mul(ad.Tensor(1.0 - y), ad.log(1.0 - p))
    return -ad.mean_all(ad.add(pos, neg))
