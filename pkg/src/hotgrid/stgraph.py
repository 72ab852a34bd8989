"""Request-graph construction, windowing, features and hotspot labels.

The pipeline stage between raw records and the model:

1. build one global directed graph over all records (edges follow
   share links and friendships, always oriented earlier to later),
2. cut time into fixed, aligned windows anchored at the first record,
3. per content category and per length-6 unit, take the induced
   subgraph of each input window as a snapshot with node features
   (one-hot sub-area times intensity) and edge features (km between
   cell centers),
4. label each unit's 32 sub-areas by thresholding the final window's
   intensities against the global per-category cutoff.

Sequences serialize to a line-oriented text format so the expensive
graph pass can be cached between CLI stages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import geocode
from .errors import ConfigError, DataError
from .ingest import CdsRecord

log = logging.getLogger(__name__)

SUB_AREAS = 32  # length-7 children of one length-6 unit
UNIT_LEN = 6
NODE_LEN = 7


@dataclass
class GlobalGraph:
    """One node per record; directed edges run earlier -> later."""

    records: list[CdsRecord]
    codes7: list[str]  # row-aligned with records
    edges: list[tuple[int, int]]  # (src, dst) indices, deduplicated, sorted

    def units(self) -> list[str]:
        return sorted({c[:UNIT_LEN] for c in self.codes7})


@dataclass
class Snapshot:
    """Induced subgraph of one (category, unit, window)."""

    unit: str
    window: int
    record_ids: list[str]
    codes: list[str]  # length-7, all sharing the unit prefix
    X: np.ndarray  # (n, 32) node features
    edges: np.ndarray  # (e, 2) local src,dst indices
    dists: np.ndarray  # (e,) km

    @property
    def n_nodes(self) -> int:
        return len(self.codes)


@dataclass
class UnitSequence:
    """T input snapshots plus the next window's hotspot row."""

    unit: str
    category: str
    snapshots: list[Snapshot]
    label: np.ndarray  # (32,) of 0/1
    label_window: int


@dataclass
class SequenceSet:
    sequences: list[UnitSequence]
    t0: float
    window_len: float
    T: int
    p_cut: float
    taus: dict[str, float] = field(default_factory=dict)  # category -> cutoff


@dataclass(frozen=True)
class WindowPlan:
    t0: float
    window_len: float
    n_windows: int
    T: int

    @property
    def label_window(self) -> int:
        return self.n_windows - 1

    @property
    def input_windows(self) -> range:
        return range(self.label_window - self.T, self.label_window)

    def index(self, ts: float) -> int:
        i = int((ts - self.t0) // self.window_len)
        # the dataset's last instant belongs to the last window
        return min(i, self.n_windows - 1)


def plan_windows(records: Sequence[CdsRecord], T: int, window_len: float | None = None) -> WindowPlan:
    """Fix the aligned window grid for a dataset.

    Windows are half-open [t0 + i*L, t0 + (i+1)*L), anchored at the
    first record. When window_len is omitted the span is divided into
    exactly T+1 windows (T inputs plus the label window).
    """
    if T < 2:
        raise ConfigError(f"need at least 2 input windows, got T={T}")
    if not records:
        raise DataError("no records to window")
    t0 = min(r.timestamp for r in records)
    span = max(r.timestamp for r in records) - t0
    if window_len is None:
        if span <= 0:
            raise ConfigError("all records share one timestamp, cannot infer a window length")
        window_len = span / (T + 1)
        n_windows = T + 1
    else:
        window_len = float(window_len)
        if window_len <= 0:
            raise ConfigError(f"window length must be positive, got {window_len}")
        n_windows = int(span // window_len) + 1
    if n_windows < T + 1:
        raise ConfigError(
            f"dataset spans {n_windows} windows of {window_len} s, needs at least {T + 1}"
        )
    return WindowPlan(t0=t0, window_len=window_len, n_windows=n_windows, T=T)


def build_global_graph(
    records: Sequence[CdsRecord],
    social_edges: Iterable[tuple[str, str]],
    friend_cap: int = 5,
) -> GlobalGraph:
    """Build the dataset-wide request graph.

    Every record becomes a node tagged with its length-7 cell. A
    directed edge runs from the earlier to the later record for every
    share link, and between friends' records. Friendship edges connect
    each new record to at most friend_cap most recent prior records per
    friend, which keeps the edge count linear in active friendships.

    Records must arrive timestamp-sorted (the ingest contract).
    """
    recs = list(records)
    for a, b in zip(recs, recs[1:]):
        if a.timestamp > b.timestamp:
            raise DataError("records are not timestamp-sorted")
    codes7 = [geocode.encode(r.point.lat, r.point.lon, NODE_LEN) for r in recs]
    index_of = {r.record_id: i for i, r in enumerate(recs)}

    friends: dict[str, list[str]] = {}
    for a, b in sorted(set(social_edges)):
        friends.setdefault(a, []).append(b)
        friends.setdefault(b, []).append(a)

    edges: set[tuple[int, int]] = set()
    recent: dict[str, list[int]] = {}  # user -> node indices, oldest first
    for i, r in enumerate(recs):
        if r.parent_record_id is not None:
            j = index_of.get(r.parent_record_id)
            if j is None:
                log.warning(
                    "record %r shares unknown record %r, edge skipped",
                    r.record_id,
                    r.parent_record_id,
                )
            else:
                edges.add((j, i))
        for f in friends.get(r.user_id, ()):
            for j in recent.get(f, ())[-friend_cap:]:
                edges.add((j, i))
        recent.setdefault(r.user_id, []).append(i)

    return GlobalGraph(records=recs, codes7=codes7, edges=sorted(edges))


def cds_intensity(codes: Iterable[str], unit: str) -> np.ndarray:
    """Count requests per sub-area: a 32-vector for one (unit, window)."""
    out = np.zeros(SUB_AREAS, dtype=np.int64)
    for code in codes:
        if len(code) != NODE_LEN or not code.startswith(unit):
            raise DataError(f"code {code!r} does not belong to unit {unit!r}")
        out[geocode.last_digit_index(code)] += 1
    return out


def node_feature_matrix(codes: Sequence[str], intensity: np.ndarray) -> np.ndarray:
    """One row per node: the sub-area's intensity at its one-hot column."""
    X = np.zeros((len(codes), SUB_AREAS))
    for i, code in enumerate(codes):
        j = geocode.last_digit_index(code)
        X[i, j] = intensity[j]
    return X


def edge_feature(code_a: str, code_b: str) -> float:
    """Distance in km between two cells' centers."""
    return geocode.haversine_km(geocode.decode_center(code_a), geocode.decode_center(code_b))


def hotspot_threshold(intensities: np.ndarray, p_cut: float) -> float:
    """Cutoff between the mean and the max of all areas' intensities."""
    intensities = np.asarray(intensities, dtype=np.float64)
    if intensities.size == 0:
        raise DataError("cannot threshold an empty intensity vector")
    if not 0.0 <= p_cut <= 1.0:
        raise DataError(f"cutoff fraction must be in [0, 1], got {p_cut}")
    mean = float(intensities.mean())
    peak = float(intensities.max())
    return mean + (peak - mean) * p_cut


def label_hotspots(intensities: np.ndarray, tau: float) -> np.ndarray:
    """Flag areas whose intensity strictly exceeds the cutoff."""
    if not np.isfinite(tau):
        raise DataError(f"cutoff must be finite, got {tau}")
    return (np.asarray(intensities, dtype=np.float64) > tau).astype(np.int64)


def history_mask(seq: UnitSequence) -> np.ndarray:
    """True for sub-areas holding at least one node in the input windows."""
    mask = np.zeros(SUB_AREAS, dtype=bool)
    for snap in seq.snapshots:
        for code in snap.codes:
            mask[geocode.last_digit_index(code)] = True
    return mask


def hot_rate(sequences: Sequence[UnitSequence]) -> float:
    """Fraction of flagged sub-areas over all labeled areas."""
    if not sequences:
        return 0.0
    total = sum(int(s.label.sum()) for s in sequences)
    return total / (SUB_AREAS * len(sequences))


def _keep_nearest_in_edges(
    edges: list[tuple[int, int]], dists: list[float], cap: int
) -> tuple[list[tuple[int, int]], list[float]]:
    """Per destination, keep the cap nearest incoming edges (ties by order)."""
    by_dst: dict[int, list[int]] = {}
    for pos, (_, dst) in enumerate(edges):
        by_dst.setdefault(dst, []).append(pos)
    keep: list[int] = []
    for dst in sorted(by_dst):
        ranked = sorted(by_dst[dst], key=lambda p: (dists[p], p))
        keep.extend(sorted(ranked[:cap]))
    keep.sort()
    return [edges[p] for p in keep], [dists[p] for p in keep]


def extract_sequences(
    gg: GlobalGraph,
    T: int,
    window_len: float | None = None,
    p_cut: float = 0.5,
    use_raw_gps: bool = False,
    neighbor_cap: int | None = None,
) -> SequenceSet:
    """Cut the global graph into per-(category, unit) labeled sequences.

    Every distinct unit seen in a category gets one sequence: T induced
    snapshots over the last T input windows and a 0/1 label row from
    the final window. The cutoff is computed per category across all of
    that category's areas, once, from label-window intensities. Edges
    survive only when both endpoints share category, unit and window.
    """
    plan = plan_windows(gg.records, T, window_len)

    # group node indices by (category, unit, window)
    node_unit = [c[:UNIT_LEN] for c in gg.codes7]
    node_window = [plan.index(r.timestamp) for r in gg.records]
    groups: dict[tuple[str, str, int], list[int]] = {}
    cat_units: dict[str, set[str]] = {}
    for i, r in enumerate(gg.records):
        groups.setdefault((r.category, node_unit[i], node_window[i]), []).append(i)
        cat_units.setdefault(r.category, set()).add(node_unit[i])

    edge_groups: dict[tuple[str, str, int], list[tuple[int, int]]] = {}
    for i, j in gg.edges:
        if (
            gg.records[i].category == gg.records[j].category
            and node_unit[i] == node_unit[j]
            and node_window[i] == node_window[j]
        ):
            key = (gg.records[i].category, node_unit[i], node_window[i])
            edge_groups.setdefault(key, []).append((i, j))

    # per-category global cutoff over the label window
    taus: dict[str, float] = {}
    flags: dict[tuple[str, str], np.ndarray] = {}
    for cat in sorted(cat_units):
        units = sorted(cat_units[cat])
        per_unit = {}
        for unit in units:
            members = groups.get((cat, unit, plan.label_window), [])
            per_unit[unit] = cds_intensity([gg.codes7[i] for i in members], unit)
        stacked = np.concatenate([per_unit[u] for u in units])
        tau = hotspot_threshold(stacked, p_cut)
        taus[cat] = tau
        for unit in units:
            flags[(cat, unit)] = label_hotspots(per_unit[unit], tau)

    sequences: list[UnitSequence] = []
    for cat in sorted(cat_units):
        for unit in sorted(cat_units[cat]):
            snapshots = []
            for w in plan.input_windows:
                members = groups.get((cat, unit, w), [])
                ids = [gg.records[i].record_id for i in members]
                codes = [gg.codes7[i] for i in members]
                intensity = cds_intensity(codes, unit)
                X = node_feature_matrix(codes, intensity)
                local = {i: p for p, i in enumerate(members)}
                e_pairs: list[tuple[int, int]] = []
                e_dists: list[float] = []
                for i, j in edge_groups.get((cat, unit, w), ()):
                    if use_raw_gps:
                        d = geocode.haversine_km(gg.records[i].point, gg.records[j].point)
                    else:
                        d = edge_feature(gg.codes7[i], gg.codes7[j])
                    e_pairs.append((local[i], local[j]))
                    e_dists.append(d)
                if neighbor_cap is not None:
                    e_pairs, e_dists = _keep_nearest_in_edges(e_pairs, e_dists, neighbor_cap)
                snapshots.append(
                    Snapshot(
                        unit=unit,
                        window=w,
                        record_ids=ids,
                        codes=codes,
                        X=X,
                        edges=np.asarray(e_pairs, dtype=np.int64).reshape(-1, 2),
                        dists=np.asarray(e_dists, dtype=np.float64),
                    )
                )
            sequences.append(
                UnitSequence(
                    unit=unit,
                    category=cat,
                    snapshots=snapshots,
                    label=flags[(cat, unit)],
                    label_window=plan.label_window,
                )
            )
    return SequenceSet(
        sequences=sequences,
        t0=plan.t0,
        window_len=plan.window_len,
        T=T,
        p_cut=p_cut,
        taus=taus,
    )


# ---------------------------------------------------------------------------
# cache format: line-oriented, one token stream per sequence


_MAGIC = "HOTGRID-SEQS 1"


def _token(value: str, what: str) -> str:
    if not value or any(ch.isspace() for ch in value):
        raise DataError(f"{what} {value!r} cannot be empty or contain whitespace")
    return value


def serialize_sequences(sset: SequenceSet) -> str:
    """Render a SequenceSet in the documented line format.

    Grammar, one item per line, space-separated:
      HOTGRID-SEQS 1
      META t0=<float> window_len=<float> T=<int> p_cut=<float>
      TAU category=<token> tau=<float>          (one per category)
      SEQ unit=<code6> category=<token> label_window=<int> label=<32x 0/1>
      SNAP window=<int> nodes=<n> edges=<e>     (T per SEQ)
      N <record_id> <code7> <intensity>         (n per SNAP)
      E <src> <dst> <km>                        (e per SNAP)
    """
    lines = [_MAGIC]
    lines.append(
        f"META t0={sset.t0!r} window_len={sset.window_len!r} T={sset.T} p_cut={sset.p_cut!r}"
    )
    for cat in sorted(sset.taus):
        lines.append(f"TAU category={_token(cat, 'category')} tau={sset.taus[cat]!r}")
    for seq in sset.sequences:
        label = "".join(str(int(v)) for v in seq.label)
        lines.append(
            f"SEQ unit={_token(seq.unit, 'unit')} category={_token(seq.category, 'category')} "
            f"label_window={seq.label_window} label={label}"
        )
        for snap in seq.snapshots:
            lines.append(
                f"SNAP window={snap.window} nodes={snap.n_nodes} edges={len(snap.edges)}"
            )
            for row, (rid, code) in enumerate(zip(snap.record_ids, snap.codes)):
                j = geocode.last_digit_index(code)
                lines.append(f"N {_token(rid, 'record_id')} {code} {int(round(float(snap.X[row, j])))}")
            for (src, dst), km in zip(snap.edges, snap.dists):
                lines.append(f"E {int(src)} {int(dst)} {float(km)!r}")
    return "\n".join(lines) + "\n"


def _parse_kv(parts: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for part in parts:
        key, sep, value = part.partition("=")
        if not sep:
            raise DataError(f"line {line_no}: expected key=value, got {part!r}")
        out[key] = value
    return out


def parse_sequences(text: str) -> SequenceSet:
    """Inverse of serialize_sequences. Raises DataError on any malformation."""
    lines = text.splitlines()
    if not lines or lines[0] != _MAGIC:
        raise DataError("not a sequence cache file (bad magic line)")

    sset: SequenceSet | None = None
    sequences: list[UnitSequence] = []
    taus: dict[str, float] = {}
    seq: UnitSequence | None = None
    snap: Snapshot | None = None
    want_nodes = want_edges = 0
    pend_edges: list[tuple[int, int]] = []
    pend_dists: list[float] = []
    pend_ids: list[str] = []
    pend_codes: list[str] = []
    pend_intens: list[int] = []

    def close_snap():
        nonlocal snap
        if snap is None:
            return
        if len(pend_ids) != want_nodes or len(pend_edges) != want_edges:
            raise DataError(
                f"snapshot {snap.unit}/{snap.window}: expected {want_nodes} nodes "
                f"and {want_edges} edges, got {len(pend_ids)}/{len(pend_edges)}"
            )
        intensity = np.zeros(SUB_AREAS, dtype=np.int64)
        for code, inten in zip(pend_codes, pend_intens):
            intensity[geocode.last_digit_index(code)] = inten
        snap.record_ids = list(pend_ids)
        snap.codes = list(pend_codes)
        snap.X = node_feature_matrix(pend_codes, intensity)
        snap.edges = np.asarray(pend_edges, dtype=np.int64).reshape(-1, 2)
        snap.dists = np.asarray(pend_dists, dtype=np.float64)
        assert seq is not None
        seq.snapshots.append(snap)
        snap = None
        pend_ids.clear()
        pend_codes.clear()
        pend_intens.clear()
        pend_edges.clear()
        pend_dists.clear()

    try:
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            kind, *parts = line.split()
            if kind == "META":
                kv = _parse_kv(parts, line_no)
                sset = SequenceSet(
                    sequences=sequences,
                    t0=float(kv["t0"]),
                    window_len=float(kv["window_len"]),
                    T=int(kv["T"]),
                    p_cut=float(kv["p_cut"]),
                    taus=taus,
                )
            elif kind == "TAU":
                kv = _parse_kv(parts, line_no)
                taus[kv["category"]] = float(kv["tau"])
            elif kind == "SEQ":
                close_snap()
                kv = _parse_kv(parts, line_no)
                label = kv["label"]
                if len(label) != SUB_AREAS or set(label) - {"0", "1"}:
                    raise DataError(f"line {line_no}: bad label {label!r}")
                seq = UnitSequence(
                    unit=geocode.validate_code(kv["unit"]),
                    category=kv["category"],
                    snapshots=[],
                    label=np.asarray([int(c) for c in label], dtype=np.int64),
                    label_window=int(kv["label_window"]),
                )
                sequences.append(seq)
            elif kind == "SNAP":
                close_snap()
                if seq is None:
                    raise DataError(f"line {line_no}: SNAP before any SEQ")
                kv = _parse_kv(parts, line_no)
                want_nodes, want_edges = int(kv["nodes"]), int(kv["edges"])
                snap = Snapshot(
                    unit=seq.unit,
                    window=int(kv["window"]),
                    record_ids=[],
                    codes=[],
                    X=np.zeros((0, SUB_AREAS)),
                    edges=np.zeros((0, 2), dtype=np.int64),
                    dists=np.zeros(0),
                )
            elif kind == "N":
                if snap is None or len(parts) != 3:
                    raise DataError(f"line {line_no}: stray or malformed node line")
                rid, code, inten = parts
                pend_ids.append(rid)
                pend_codes.append(geocode.validate_code(code))
                pend_intens.append(int(inten))
            elif kind == "E":
                if snap is None or len(parts) != 3:
                    raise DataError(f"line {line_no}: stray or malformed edge line")
                pend_edges.append((int(parts[0]), int(parts[1])))
                pend_dists.append(float(parts[2]))
            else:
                raise DataError(f"line {line_no}: unknown line kind {kind!r}")
    except (KeyError, ValueError) as exc:
        raise DataError(f"cache parse failed near line {line_no}: {exc}") from exc
    close_snap()
    if sset is None:
        raise DataError("cache file has no META line")
    for s in sequences:
        if len(s.snapshots) != sset.T:
            raise DataError(f"sequence {s.category}/{s.unit} has {len(s.snapshots)} snapshots, wants {sset.T}")
    return sset
