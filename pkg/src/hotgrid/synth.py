"""Synthetic CDS traces with planted spatial, temporal and social structure.

The generator works on the length-7 cell lattice directly: user homes and
request locations both snap to cell centers, so the realized intensity of
every area is exact and the manifest can be checked against a recount of
the emitted CSV.  Everything is driven by one seeded generator in a fixed
draw order, which makes outputs byte-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import geocode, ingest
from .errors import ConfigError

MANIFEST_FORMAT = "hotgrid-synth-manifest"

# south-west corner of the generated region, snapped onto the length-6 grid
# (dyadic fractions, so encoding never lands on a cell boundary)
_LAT6, _LON6 = geocode.cell_size_deg(6)
_LAT7, _LON7 = geocode.cell_size_deg(7)
ORIGIN_LAT = math.floor((40.0 + 90.0) / _LAT6) * _LAT6 - 90.0
ORIGIN_LON = math.floor((-100.0 + 180.0) / _LON6) * _LON6 - 180.0


class Center(NamedTuple):
    """A hotspot source on the global sub-area grid."""

    row: int
    col: int
    rate: float  # expected requests per window at the center cell
    radius: float  # exp(-distance/radius) falloff in cell widths; 0 = point


class Migration(NamedTuple):
    """From `window` on, shift `center` by (drow, dcol) cells."""

    center: int
    window: int
    drow: int
    dcol: int


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_users: int = 100
    n_units: int = 25
    windows: int = 10
    window_len: float = 3600.0
    base_rate: float = 0.05
    categories: tuple[str, ...] = ("video",)
    centers: tuple[Center, ...] = ()
    amplitude: float = 0.0
    period: int = 5
    friend_scale: float = 1.0
    friend_lambda_km: float = 2.0
    share_p: float = 0.0
    migrations: tuple[Migration, ...] = ()

    @property
    def side(self) -> int:
        return max(1, math.ceil(math.sqrt(self.n_units)))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.side * 4, self.side * 8


class SynthDataset(NamedTuple):
    records: list[ingest.CdsRecord]
    edges: list[tuple[str, str]]
    manifest: dict


def _unit_of_cell(cfg: SynthConfig, row: int, col: int) -> int:
    return (row // 4) * cfg.side + (col // 8)


def validate_config(cfg: SynthConfig) -> None:
    if cfg.n_users < 1 or cfg.n_units < 1 or cfg.windows < 1:
        raise ConfigError("n_users, n_units and windows must be positive")
    if cfg.window_len <= 0:
        raise ConfigError(f"window_len must be positive: {cfg.window_len}")
    if cfg.base_rate < 0:
        raise ConfigError(f"base_rate must be non-negative: {cfg.base_rate}")
    if not cfg.categories:
        raise ConfigError("at least one category is required")
    if not 0.0 <= cfg.share_p <= 1.0:
        raise ConfigError(f"share_p must be a probability: {cfg.share_p}")
    if not 0.0 <= cfg.amplitude <= 1.0:
        raise ConfigError(f"amplitude must be in [0, 1]: {cfg.amplitude}")
    if cfg.period < 1:
        raise ConfigError(f"period must be at least 1 window: {cfg.period}")
    if cfg.friend_scale < 0 or cfg.friend_lambda_km <= 0:
        raise ConfigError("friendship decay needs scale >= 0 and lambda > 0")
    rows, cols = cfg.grid_shape
    for k, c in enumerate(cfg.centers):
        if c.rate < 0 or c.radius < 0:
            raise ConfigError(f"center {k}: rate and radius must be non-negative")
        if not (0 <= c.row < rows and 0 <= c.col < cols):
            raise ConfigError(f"center {k} at ({c.row}, {c.col}) is outside the grid")
        if _unit_of_cell(cfg, c.row, c.col) >= cfg.n_units:
            raise ConfigError(f"center {k} falls in an inactive unit")
    for m in cfg.migrations:
        if not 0 <= m.center < len(cfg.centers):
            raise ConfigError(f"migration references unknown center {m.center}")
        if not 0 <= m.window < cfg.windows:
            raise ConfigError(f"migration window {m.window} out of range")
    for k in range(len(cfg.centers)):
        for row, col in _center_track(cfg, k):
            if not (0 <= row < rows and 0 <= col < cols):
                raise ConfigError(f"center {k} migrates off the grid to ({row}, {col})")
            if _unit_of_cell(cfg, row, col) >= cfg.n_units:
                raise ConfigError(f"center {k} migrates into an inactive unit")


def _center_track(cfg: SynthConfig, k: int) -> list[tuple[int, int]]:
    """Position of center k in every window after applying its migrations."""
    moves = sorted((m.window, m.drow, m.dcol) for m in cfg.migrations if m.center == k)
    row, col = cfg.centers[k].row, cfg.centers[k].col
    track = []
    pending = list(moves)
    for w in range(cfg.windows):
        while pending and pending[0][0] <= w:
            _, drow, dcol = pending.pop(0)
            row, col = row + drow, col + dcol
        track.append((row, col))
    return track


def _cell_centers(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = cfg.grid_shape
    lat = ORIGIN_LAT + (np.arange(rows) + 0.5) * _LAT7
    lon = ORIGIN_LON + (np.arange(cols) + 0.5) * _LON7
    return lat, lon


def _active_mask(cfg: SynthConfig) -> np.ndarray:
    rows, cols = cfg.grid_shape
    unit_idx = (np.arange(rows)[:, None] // 4) * cfg.side + np.arange(cols)[None, :] // 8
    return unit_idx < cfg.n_units


def _intensity_field(cfg: SynthConfig, tracks: list[list[tuple[int, int]]], w: int) -> np.ndarray:
    """Expected requests per cell in window w, before temporal modulation."""
    rows, cols = cfg.grid_shape
    field = np.full((rows, cols), float(cfg.base_rate))
    rr = np.arange(rows)[:, None]
    cc = np.arange(cols)[None, :]
    for k, c in enumerate(cfg.centers):
        row, col = tracks[k][w]
        if c.radius == 0:
            field[row, col] += c.rate
        else:
            d = np.sqrt((rr - row) ** 2 + (cc - col) ** 2)
            field += c.rate * np.exp(-d / c.radius)
    field[~_active_mask(cfg)] = 0.0
    return field


def _modulation(cfg: SynthConfig, w: int) -> float:
    return 1.0 + cfg.amplitude * math.sin(2.0 * math.pi * w / cfg.period)


def _sample_friendships(cfg: SynthConfig, rng, home_lat, home_lon) -> list[tuple[int, int]]:
    n = cfg.n_users
    lat = np.radians(home_lat)
    lon = np.radians(home_lon)
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    dist = 2.0 * geocode.EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    iu, ju = np.triu_indices(n, k=1)
    p = np.minimum(1.0, cfg.friend_scale * np.exp(-dist[iu, ju] / cfg.friend_lambda_km))
    hit = rng.random(p.size) < p
    return [(int(a), int(b)) for a, b in zip(iu[hit], ju[hit])]


def generate(cfg: SynthConfig) -> SynthDataset:
    """Sample a full trace; the same config always yields the same dataset."""
    validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows, cols = cfg.grid_shape
    lat_ax, lon_ax = _cell_centers(cfg)
    tracks = [_center_track(cfg, k) for k in range(len(cfg.centers))]

    home_row = rng.integers(0, rows, size=cfg.n_users)
    home_col = rng.integers(0, cols, size=cfg.n_users)
    active = _active_mask(cfg)
    for i in range(cfg.n_users):  # re-draw homes that landed on inactive cells
        while not active[home_row[i], home_col[i]]:
            home_row[i] = rng.integers(0, rows)
            home_col[i] = rng.integers(0, cols)
    home_lat = lat_ax[home_row]
    home_lon = lon_ax[home_col]

    pairs = _sample_friendships(cfg, rng, home_lat, home_lon)
    user_ids = [f"u{i:05d}" for i in range(cfg.n_users)]
    friends: list[list[int]] = [[] for _ in range(cfg.n_users)]
    for a, b in pairs:
        friends[a].append(b)
        friends[b].append(a)
    edges = [(user_ids[a], user_ids[b]) for a, b in pairs]

    unit_codes = []
    for u in range(cfg.n_units):
        ur, uc = divmod(u, cfg.side)
        unit_codes.append(
            geocode.encode(ORIGIN_LAT + (ur + 0.5) * _LAT6, ORIGIN_LON + (uc + 0.5) * _LON6, 6)
        )
    sub_index = np.zeros((4, 8), dtype=np.int64)
    for i, code in enumerate(geocode.sub_areas(unit_codes[0])):
        c, r = geocode.sub_grid_position(code)
        sub_index[r, c] = i

    counts = {
        cat: np.zeros((cfg.n_units, cfg.windows, 32), dtype=np.int64) for cat in cfg.categories
    }
    records: list[ingest.CdsRecord] = []
    next_id = 0
    t0 = cfg.window_len  # trace starts one window in so every timestamp is > 0

    def emit(user: int, ts: float, row: int, col: int, cat: str, parent: str | None) -> str:
        nonlocal next_id
        rid = f"r{next_id:08d}"
        next_id += 1
        records.append(
            ingest.CdsRecord(
                record_id=rid,
                user_id=user_ids[user],
                timestamp=ts,
                point=geocode.GpsPoint(float(lat_ax[row]), float(lon_ax[col])),
                category=cat,
                parent_record_id=parent,
            )
        )
        w = min(int((ts - t0) // cfg.window_len), cfg.windows - 1)
        counts[cat][_unit_of_cell(cfg, row, col), w, sub_index[row % 4, col % 8]] += 1
        return rid

    for w in range(cfg.windows):
        t_lo = t0 + w * cfg.window_len
        scale = _modulation(cfg, w)
        for cat in cfg.categories:
            field = _intensity_field(cfg, tracks, w) * scale
            draw = rng.poisson(field)
            cell_rows, cell_cols = np.nonzero(draw)
            reps = draw[cell_rows, cell_cols]
            ev_row = np.repeat(cell_rows, reps)
            ev_col = np.repeat(cell_cols, reps)
            n_ev = ev_row.size
            ev_user = rng.integers(0, cfg.n_users, size=n_ev)
            ev_ts = t_lo + rng.uniform(0.0, cfg.window_len, size=n_ev)
            shared = rng.random(n_ev) < cfg.share_p
            order = np.argsort(ev_ts, kind="stable")
            for i in order:
                rid = emit(int(ev_user[i]), float(ev_ts[i]), int(ev_row[i]), int(ev_col[i]), cat, None)
                circle = friends[ev_user[i]]
                if shared[i] and circle:
                    sharer = circle[int(rng.integers(0, len(circle)))]
                    t_end = t_lo + cfg.window_len
                    share_ts = ev_ts[i] + rng.random() * (t_end - ev_ts[i])
                    emit(sharer, float(share_ts), int(ev_row[i]), int(ev_col[i]), cat, rid)

    records.sort(key=lambda r: (r.timestamp, r.record_id))
    if records and records[0].timestamp < t0 + cfg.window_len:
        # pin the trace start so downstream window planning aligns exactly
        first = records[0]
        records[0] = ingest.CdsRecord(
            record_id=first.record_id,
            user_id=first.user_id,
            timestamp=t0,
            point=first.point,
            category=first.category,
            parent_record_id=first.parent_record_id,
        )

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": asdict(cfg),
        "t0": t0,
        "side": cfg.side,
        "grid_rows": rows,
        "grid_cols": cols,
        "origin": [ORIGIN_LAT, ORIGIN_LON],
        "units": unit_codes,
        "center_tracks": [[list(pos) for pos in track] for track in tracks],
        "homes": {user_ids[i]: [float(home_lat[i]), float(home_lon[i])] for i in range(cfg.n_users)},
        "counts": {
            cat: {unit_codes[u]: arr[u].tolist() for u in range(cfg.n_units)}
            for cat, arr in counts.items()
        },
    }
    return SynthDataset(records=records, edges=sorted(set(edges)), manifest=manifest)


def write_dataset(ds: SynthDataset, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.csv",
        "edges": out / "edges.csv",
        "manifest": out / "manifest.json",
    }
    ingest.write_records(ds.records, paths["records"])
    ingest.write_edges(ds.edges, paths["edges"])
    paths["manifest"].write_text(
        json.dumps(ds.manifest, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    return paths


def load_manifest(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"not a synth manifest: {path}")
    return manifest


# --- presets ---------------------------------------------------------------


def periodic_preset(seed: int = 0, n_units: int = 225, windows: int = 10) -> SynthConfig:
    """Alternating hotspot pairs plus a sinusoidal load swing.

    Each unit gets two point-ish sources two rows apart that take turns
    window by window, so the hot cell at the next window is predictable
    from the phase of the sequence but not from the last window alone.
    """
    side = max(1, math.ceil(math.sqrt(n_units)))
    rng = np.random.default_rng(seed + 104729)
    centers: list[Center] = []
    migrations: list[Migration] = []
    for u in range(n_units):
        ur, uc = divmod(u, side)
        row = ur * 4 + int(rng.integers(0, 2))
        col = uc * 8 + int(rng.integers(0, 8))
        centers.append(Center(row=row, col=col, rate=8.0, radius=0.6))
        k = len(centers) - 1
        for w in range(1, windows):  # hop down two rows and back, every window
            migrations.append(Migration(center=k, window=w, drow=2 if w % 2 else -2, dcol=0))
    return SynthConfig(
        seed=seed,
        n_users=500,
        n_units=n_units,
        windows=windows,
        base_rate=0.04,
        centers=tuple(centers),
        amplitude=0.3,
        period=5,
        friend_scale=1.0,
        friend_lambda_km=2.0,
        share_p=0.1,
        migrations=tuple(migrations),
    )


def migrate_preset(seed: int = 0, n_units: int = 225, windows: int = 10) -> SynthConfig:
    """Stable hotspots that all shift one cell east at the final window.

    The destination cells carry only the (tiny) background before the
    shift, so most positive labels land on areas with no history at all.
    """
    side = max(1, math.ceil(math.sqrt(n_units)))
    rng = np.random.default_rng(seed + 224737)
    centers: list[Center] = []
    migrations: list[Migration] = []
    for u in range(n_units):
        ur, uc = divmod(u, side)
        row = ur * 4 + int(rng.integers(0, 4))
        col = uc * 8 + int(rng.integers(0, 7))  # keep the eastward hop inside the unit
        centers.append(Center(row=row, col=col, rate=12.0, radius=0.0))
        migrations.append(Migration(center=u, window=windows - 1, drow=0, dcol=1))
    return SynthConfig(
        seed=seed,
        n_users=500,
        n_units=n_units,
        windows=windows,
        base_rate=0.01,
        centers=tuple(centers),
        amplitude=0.0,
        friend_scale=0.8,
        friend_lambda_km=2.0,
        share_p=0.05,
        migrations=tuple(migrations),
    )


def uniform_preset(seed: int = 0, n_units: int = 9, windows: int = 30) -> SynthConfig:
    """Featureless background only; the control for the structure checks."""
    return SynthConfig(
        seed=seed,
        n_users=60,
        n_units=n_units,
        windows=windows,
        base_rate=1.0,
        amplitude=0.0,
        share_p=0.0,
    )


def smoke_preset(seed: int = 0) -> SynthConfig:
    """Small enough for quick end-to-end runs in tests."""
    rng = np.random.default_rng(seed + 15485863)
    centers = []
    for u in range(4):
        ur, uc = divmod(u, 2)
        centers.append(
            Center(row=ur * 4 + int(rng.integers(0, 4)), col=uc * 8 + int(rng.integers(0, 8)),
                   rate=6.0, radius=0.5)
        )
    return SynthConfig(
        seed=seed,
        n_users=30,
        n_units=4,
        windows=5,
        base_rate=0.1,
        centers=tuple(centers),
        amplitude=0.4,
        period=3,
        share_p=0.2,
    )


PRESETS = {
    "periodic": periodic_preset,
    "migrate": migrate_preset,
    "uniform": uniform_preset,
    "smoke": smoke_preset,
}


# --- observation checks ------------------------------------------------------


def _count_matrix(manifest: dict) -> np.ndarray:
    """(units*32, windows) realized counts summed over categories."""
    units = manifest["units"]
    blocks = []
    for unit in units:
        total = None
        for cat in manifest["counts"]:
            arr = np.asarray(manifest["counts"][cat][unit], dtype=np.float64)  # (W, 32)
            total = arr if total is None else total + arr
        blocks.append(total.T)  # (32, W)
    return np.concatenate(blocks, axis=0)


def adjacent_pearson(manifest: dict) -> dict:
    """Mean correlation of per-window counts between touching sub-areas."""
    some_unit = manifest["units"][0]
    pos_to_sub = {
        geocode.sub_grid_position(code): i
        for i, code in enumerate(geocode.sub_areas(some_unit))
    }

    cors = []
    for cat in manifest["counts"]:
        for unit in manifest["units"]:
            arr = np.asarray(manifest["counts"][cat][unit], dtype=np.float64)  # (W, 32)
            for (c, r), i in pos_to_sub.items():
                for dc, dr in ((0, 1), (1, 0)):
                    j = pos_to_sub.get((c + dc, r + dr))
                    if j is None:
                        continue
                    a, b = arr[:, i], arr[:, j]
                    if a.std() == 0 or b.std() == 0:
                        continue
                    cors.append(float(np.corrcoef(a, b)[0, 1]))
    return {"mean": float(np.mean(cors)) if cors else 0.0, "n_pairs": len(cors)}


def friend_distance_report(manifest: dict, edges: Sequence[tuple[str, str]], seed: int = 0) -> dict:
    """Friend home distances against a same-size uniform re-pairing."""
    homes = manifest["homes"]
    users = sorted(homes)
    actual = np.array(
        [geocode.haversine_km(tuple(homes[a]), tuple(homes[b])) for a, b in edges]
    )
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, len(users), size=max(1, actual.size))
    ib = rng.integers(0, len(users), size=max(1, actual.size))
    keep = ia != ib
    control = np.array(
        [
            geocode.haversine_km(tuple(homes[users[a]]), tuple(homes[users[b]]))
            for a, b in zip(ia[keep], ib[keep])
        ]
    )
    grid = np.sort(np.concatenate([actual, control]))
    cdf_a = np.searchsorted(np.sort(actual), grid, side="right") / max(1, actual.size)
    cdf_c = np.searchsorted(np.sort(control), grid, side="right") / max(1, control.size)
    return {
        "n_edges": int(actual.size),
        "mean_km": float(actual.mean()) if actual.size else 0.0,
        "uniform_mean_km": float(control.mean()) if control.size else 0.0,
        "ks": float(np.abs(cdf_a - cdf_c).max()) if actual.size and control.size else 0.0,
    }


def periodicity_report(manifest: dict) -> dict:
    """Dominant period of the per-window total load, from the FFT."""
    totals = _count_matrix(manifest).sum(axis=0)
    w = totals.size
    if w < 4 or totals.std() == 0:
        return {"dominant_period": None, "peak_to_median": 0.0, "totals": totals.tolist()}
    spectrum = np.abs(np.fft.rfft(totals - totals.mean()))[1:]
    peak = int(np.argmax(spectrum))
    others = np.delete(spectrum, peak)
    med = float(np.median(others)) if others.size else 0.0
    return {
        "dominant_period": w / (peak + 1),
        "peak_to_median": float(spectrum[peak] / med) if med > 0 else float("inf"),
        "totals": totals.tolist(),
    }


def verify_observations(manifest: dict, edges: Sequence[tuple[str, str]]) -> dict:
    """Measure the three planted structures on a generated dataset."""
    return {
        "adjacent_pearson": adjacent_pearson(manifest),
        "friend_distance": friend_distance_report(manifest, edges),
        "periodicity": periodicity_report(manifest),
    }
