"""Command-line pipeline: synthesize, window, train, score and render."""

from __future__ import annotations

import os
import sys


def _pin_threads_from_argv() -> None:
    """Apply --threads before numpy loads its thread pools."""
    argv = sys.argv[1:]
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value and value.isdigit():
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = value


_pin_threads_from_argv()

import argparse
import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import autodiff, figures, geocode, ingest, metrics, model, stgraph, synth
from . import train as train_mod
from .errors import DataError, NumericError

log = logging.getLogger("hotgrid")


class Cli(argparse.ArgumentParser):
    """argparse, except usage problems exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: usage error: {message}\n")


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def _read_toml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad TOML in {path}: {exc}") from None


def _load_sequences(path: str) -> stgraph.SequenceSet:
    with ingest.open_text(path) as fh:
        return stgraph.parse_sequences(fh.read())


def _seq_key(seq: stgraph.UnitSequence) -> str:
    return f"{seq.unit}:{seq.category}"


def _window_seconds(args) -> float | None:
    if getattr(args, "window_days", None) is not None:
        return args.window_days * 86400.0
    if getattr(args, "window_seconds", None) is not None:
        return args.window_seconds
    return None


# --- synth -------------------------------------------------------------------


def _synth_config(args) -> synth.SynthConfig:
    data = _read_toml(args.config)
    if data:
        try:
            centers = tuple(synth.Center(*c) for c in data.pop("centers", []))
            migrations = tuple(synth.Migration(*m) for m in data.pop("migrations", []))
            if "categories" in data:
                data["categories"] = tuple(data["categories"])
            cfg = synth.SynthConfig(centers=centers, migrations=migrations, **data)
        except TypeError as exc:
            raise DataError(f"bad synth config: {exc}") from None
    else:
        factory = synth.PRESETS[args.preset]
        kwargs = {}
        if args.units is not None and args.preset != "smoke":
            kwargs["n_units"] = args.units
        if args.windows is not None and args.preset != "smoke":
            kwargs["windows"] = args.windows
        cfg = factory(args.seed if args.seed is not None else 0, **kwargs)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.users is not None:
        cfg = dataclasses.replace(cfg, n_users=args.users)
    return cfg


def _cmd_synth(args) -> int:
    cfg = _synth_config(args)
    ds = synth.generate(cfg)
    paths = synth.write_dataset(ds, args.out)
    print(f"wrote {len(ds.records)} records, {len(ds.edges)} edges to {Path(args.out)}")
    for p in paths.values():
        log.info("wrote %s", p)
    return 0


# --- build-graphs ------------------------------------------------------------


def _cmd_build_graphs(args) -> int:
    records = ingest.load_records(args.records, strict=args.strict)
    edges = ingest.load_edges(args.edges, strict=args.strict) if args.edges else set()
    gg = stgraph.build_global_graph(records, edges, friend_cap=args.friend_cap)
    sset = stgraph.extract_sequences(
        gg,
        T=args.T,
        window_len=_window_seconds(args),
        p_cut=args.pcut,
        use_raw_gps=args.raw_gps,
        neighbor_cap=args.neighbor_cap,
    )
    ingest.write_text(args.out, stgraph.serialize_sequences(sset))
    print(f"wrote {len(sset.sequences)} unit sequences (T={sset.T}) to {args.out}")
    return 0


# --- train -------------------------------------------------------------------


def _train_config(args, sset: stgraph.SequenceSet) -> tuple[train_mod.TrainConfig, tuple, int]:
    data = _read_toml(args.config)
    model_cfg = model.ModelConfig(**data.get("model", {}))
    fields = dict(data.get("train", {}))
    for name, value in (
        ("seed", args.seed),
        ("epochs", args.epochs),
        ("lr", args.lr),
        ("batch_size", args.batch),
        ("patience", args.patience),
    ):
        if value is not None:
            fields[name] = value
    try:
        cfg = train_mod.TrainConfig(model=model_cfg, **fields)
    except TypeError as exc:
        raise DataError(f"bad train config: {exc}") from None
    cfg = dataclasses.replace(cfg, T=sset.T, p_cut=sset.p_cut)
    split_section = data.get("split", {})
    ratios = tuple(split_section.get("ratios", (0.7, 0.15, 0.15)))
    split_seed = int(split_section.get("seed", cfg.seed))
    return cfg, ratios, split_seed


def _cmd_train(args) -> int:
    sset = _load_sequences(args.graphs)
    cfg, ratios, split_seed = _train_config(args, sset)
    tr, va, te = train_mod.split(sset.sequences, ratios, seed=split_seed)
    params, history = train_mod.train(tr, va, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save_params(params, out / "checkpoint.json")
    (out / "history.csv").write_text(train_mod.history_csv(history), encoding="utf-8")
    figures.save_history_plot(history, out / "history.png")
    split_doc = {
        "ratios": list(ratios),
        "seed": split_seed,
        "parts": {
            "train": sorted(_seq_key(s) for s in tr),
            "val": sorted(_seq_key(s) for s in va),
            "test": sorted(_seq_key(s) for s in te),
        },
    }
    (out / "split.json").write_text(
        json.dumps(split_doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    best = max((h["val_auc"] for h in history if np.isfinite(h["val_auc"])), default=float("nan"))
    print(
        f"trained {len(history)} epochs on {len(tr)} units "
        f"(val {len(va)}, test {len(te)}), best val AUC {best:.4f}"
    )
    return 0


# --- predict / evaluate ------------------------------------------------------


def _ordered(sequences) -> list[stgraph.UnitSequence]:
    return sorted(sequences, key=lambda s: (s.category, s.unit))


def _select_part(sset: stgraph.SequenceSet, args) -> list[stgraph.UnitSequence]:
    seqs = _ordered(sset.sequences)
    if getattr(args, "split", None) is None:
        return seqs
    if args.part == "all":
        return seqs
    try:
        with open(args.split, encoding="utf-8") as fh:
            doc = json.load(fh)
        keys = set(doc["parts"][args.part])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read split part {args.part!r} from {args.split}: {exc}") from None
    chosen = [s for s in seqs if _seq_key(s) in keys]
    if not chosen:
        raise DataError(f"split part {args.part!r} matches no sequences")
    return chosen


def _prediction_rows(seqs, params) -> tuple[list[str], list[np.ndarray]]:
    lines = ["unit,category," + ",".join(f"p{j:02d}" for j in range(32))]
    scores = []
    for seq in seqs:
        probs = model.forward(seq, params)
        scores.append(probs)
        lines.append(f"{seq.unit},{seq.category}," + ",".join(repr(float(p)) for p in probs))
    return lines, scores


def _cmd_predict(args) -> int:
    sset = _load_sequences(args.graphs)
    params = model.load_params(args.checkpoint)
    seqs = _select_part(sset, args)
    lines, _ = _prediction_rows(seqs, params)
    ingest.write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(seqs)} prediction rows to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    sset = _load_sequences(args.graphs)
    params = model.load_params(args.checkpoint)
    seqs = _select_part(sset, args)
    lines, scores = _prediction_rows(seqs, params)
    persistence = [metrics.persistence_baseline(s) for s in seqs]
    echo = {
        "T": sset.T,
        "window_len": sset.window_len,
        "p_cut": sset.p_cut,
        "part": getattr(args, "part", "all"),
    }
    report = {
        "n_sequences": len(seqs),
        "threshold": args.threshold,
        "model": metrics.build_report(seqs, scores, sset.taus, args.threshold, echo),
        "persistence": metrics.build_report(seqs, persistence, sset.taus, args.threshold, echo),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures.save_metrics_plot(report["model"], report["persistence"], out / "metrics.png")
    overall = report["model"]["overall"]
    base = report["persistence"]["overall"]
    print(
        f"model auc={_fmt(overall['auc'])} f1={_fmt(overall['f1'])} | "
        f"persistence auc={_fmt(base['auc'])} f1={_fmt(base['f1'])} | "
        f"{len(seqs)} sequences -> {out / 'metrics.json'}"
    )
    return 0


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


# --- heatmap -----------------------------------------------------------------


def _unit_grid_positions(units: list[str]) -> dict[str, tuple[int, int]]:
    """Row/col of each length-6 unit on the lattice, north-west at (0, 0)."""
    lat_step, lon_step = geocode.cell_size_deg(6)
    centers = {u: geocode.decode_center(u) for u in units}
    max_lat = max(c.lat for c in centers.values())
    min_lon = min(c.lon for c in centers.values())
    out = {}
    for u, c in centers.items():
        out[u] = (int(round((max_lat - c.lat) / lat_step)), int(round((c.lon - min_lon) / lon_step)))
    return out


def _cmd_heatmap(args) -> int:
    sset = _load_sequences(args.graphs)
    params = model.load_params(args.checkpoint)
    cats = sorted({s.category for s in sset.sequences})
    category = args.category or cats[0]
    if category not in cats:
        raise DataError(f"category {category!r} not in dataset (have {cats})")
    seqs = [s for s in _ordered(sset.sequences) if s.category == category]

    positions = _unit_grid_positions([s.unit for s in seqs])
    n_rows = 4 * (1 + max(r for r, _ in positions.values()))
    n_cols = 8 * (1 + max(c for _, c in positions.values()))
    size = args.size
    if n_rows < size or n_cols < size:
        raise DataError(
            f"dataset spans {n_rows}x{n_cols} areas, cannot cut a {size}x{size} block"
        )
    truth = np.zeros((n_rows, n_cols))
    pred = np.zeros((n_rows, n_cols))
    offsets = [geocode.sub_grid_position(seqs[0].unit + ch) for ch in geocode.ALPHABET]
    for seq in seqs:
        urow, ucol = positions[seq.unit]
        probs = model.forward(seq, params)
        for j, (c_off, r_off) in enumerate(offsets):
            row = urow * 4 + (3 - r_off)  # row 0 is the north edge
            col = ucol * 8 + c_off
            truth[row, col] = float(seq.label[j])
            pred[row, col] = float(probs[j])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, grid in (("truth", truth[:size, :size]), ("pred", pred[:size, :size])):
        figures.write_grid_csv(grid, out / f"{name}.csv")
        figures.write_pgm(grid, out / f"{name}.pgm")
        figures.save_grid_plot(grid, out / f"{name}.png", f"{category}: {name}")
    print(f"wrote {size}x{size} heatmap grids for {category!r} to {out}")
    return 0


# --- gradcheck ---------------------------------------------------------------


def _random_params(cfg: model.ModelConfig, seed: int) -> model.ModelParams:
    """Generic-position parameters: biases non-zero so no relu sits on a kink."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in model.param_shapes(cfg).items():
        fan = shape[0] if len(shape) > 1 else 1
        tensors[name] = autodiff.Tensor(rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan))
    return model.ModelParams(config=cfg, tensors=tensors)


def _cmd_gradcheck(args) -> int:
    ds = synth.generate(synth.smoke_preset(args.seed))
    gg = stgraph.build_global_graph(ds.records, set(ds.edges))
    sset = stgraph.extract_sequences(
        gg, T=args.T, window_len=ds.manifest["config"]["window_len"]
    )
    seqs = sset.sequences[:2]
    cfg = model.ModelConfig(d1=args.dim, d2=args.dim, hidden=args.dim)
    params = _random_params(cfg, args.seed)
    preps = model.prepare_all(seqs, cfg)
    labels = np.stack([p.label for p in preps]).astype(np.float64)

    def loss_fn():
        return model.bce_loss(model.forward_batch(preps, params), labels, 1.5)

    worst = autodiff.grad_check(loss_fn, params.ordered(), eps=args.eps)
    print(f"gradcheck worst relative error {worst:.3e} (eps {args.eps:g})")
    if not worst < args.tol:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> Cli:
    parser = Cli(prog="hotgrid", description="Fine-grained CDS hotspot prediction pipeline.")
    parser.add_argument("--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Cli)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="smoke")
    p.add_argument("--config", help="TOML file with generator settings (overrides --preset)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--units", type=int, default=None, help="number of prediction units")
    p.add_argument("--windows", type=int, default=None, help="number of time windows")
    p.add_argument("--users", type=int, default=None, help="number of simulated users")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="thread pool cap")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-graphs", help="window records into unit graph sequences")
    p.add_argument("--records", required=True)
    p.add_argument("--edges", default=None, help="social edges CSV")
    p.add_argument("--out", required=True, help="output sequences file (.gz ok)")
    p.add_argument("--T", type=int, required=True, help="input windows per sequence")
    p.add_argument("--window-days", type=float, default=None)
    p.add_argument("--window-seconds", type=float, default=None)
    p.add_argument("--pcut", type=float, default=0.5, help="hotspot threshold position")
    p.add_argument("--friend-cap", type=int, default=5)
    p.add_argument("--neighbor-cap", type=int, default=None)
    p.add_argument("--raw-gps", action="store_true", help="edge lengths from raw coordinates")
    p.add_argument("--strict", action="store_true", help="abort on any malformed row")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_build_graphs)

    p = sub.add_parser("train", help="fit the model on cached sequences")
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="TOML with [model]/[train]/[split] tables")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write per-unit hotspot probabilities")
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--split", default=None, help="split.json from train")
    p.add_argument("--part", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", default=None, help="split.json from train")
    p.add_argument("--part", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("heatmap", help="render truth/prediction area grids")
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--category", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("gradcheck", help="verify gradients on a small random instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as exc:
        print(f"hotgrid: data error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hotgrid: data error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"hotgrid: numeric error: {_one_line(exc)}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
