"""Command-line pipeline: simulate -> extract -> encode -> doa -> eval.

Every subcommand exits 0 on success, 2 on validation errors, 1 on internal
errors, and re-runs on identical inputs/config/seed are byte-identical.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, config_hash, load_pipeline_config
from .container import TENSOR_MAGIC, read_header, read_tensor, write_tensor
from .encoder import (
    WEIGHTS_MAGIC,
    encode,
    init_weights,
    load_weights,
    save_weights,
    token_count,
)
from .errors import ValidationError
from .foa import ChannelConvention, Normalization, Ordering, load_foa_wav, save_foa_wav
from .scene import (
    SeldFrameLabels,
    corpus_stats,
    export_metadata,
    import_metadata,
    load_scene_spec,
    render_scene,
)
from .seldeval import DoaEstimate, direction_from_angles, evaluate, intensity_doa
from .spectral import mel_filterbank, stft
from .sscv import SscvTensor, banded_covariance, devectorize, extract_features, smooth

DOA_HEADER = ("frame", "time", "azimuth", "elevation", "confidence")


def spur_threads() -> int | None:
    """Parallelism cap from SPUR_THREADS; absent means the hardware default."""
    raw = os.environ.get("SPUR_THREADS", "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"SPUR_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ValidationError(f"SPUR_THREADS must be >= 1, got {value}")
    return value


def _convention(args) -> ChannelConvention:
    return ChannelConvention(Ordering(args.ordering), Normalization(args.normalization))


def _load_config(args) -> PipelineConfig:
    cfg = load_pipeline_config(getattr(args, "config", None))
    if getattr(args, "alpha", None) is not None:
        cfg = dataclasses.replace(cfg, alpha=args.alpha)
        cfg.extraction()
    return cfg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> dict:
    spec = load_scene_spec(args.scene_spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = args.name or Path(args.scene_spec).stem

    def render_one(index: int | None):
        scene = spec if index is None else dataclasses.replace(spec, seed=spec.seed + index)
        stem = name if index is None else f"{name}_{index:03d}"
        clip, labels = render_scene(scene)
        save_foa_wav(clip, out_dir / f"{stem}.wav")
        export_metadata(labels, out_dir / f"{stem}.csv")
        return stem

    if args.batch is None:
        stems = [render_one(None)]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spur_threads()) as pool:
            stems = list(pool.map(render_one, range(args.batch)))
    return {"command": "simulate", "outputs": [f"{out_dir / s}.wav" for s in stems]}


def cmd_extract(args) -> dict:
    cfg = _load_config(args)
    clip = load_foa_wav(args.wav, _convention(args))
    features = extract_features(clip, cfg.extraction())
    write_tensor(args.out, features.values, provenance=config_hash(cfg))
    return {
        "command": "extract",
        "out": str(args.out),
        "dims": list(features.values.shape),
    }


def cmd_encode(args) -> dict:
    cfg = _load_config(args)
    values, _ = read_tensor(args.sscv)
    features = SscvTensor(values.astype(np.float64), epsilon=cfg.epsilon)
    if args.weights is not None:
        weights = load_weights(args.weights)
    else:
        seed = cfg.seed if args.init_seed is None else args.init_seed
        weights = init_weights(cfg.encoder, seed)
    tokens = encode(features, weights, cfg.encoder)
    write_tensor(args.out, tokens.tokens, provenance=config_hash(cfg))
    return {
        "command": "encode",
        "out": str(args.out),
        "dims": list(tokens.tokens.shape),
        "expected_tokens": token_count(cfg.encoder, features.n_frames, features.n_bands),
    }


def cmd_init_weights(args) -> dict:
    cfg = _load_config(args)
    weights = init_weights(cfg.encoder, cfg.seed if args.init_seed is None else args.init_seed)
    save_weights(weights, args.out)
    return {"command": "init-weights", "out": str(args.out), "tensors": len(weights.tensors)}


def _doa_estimate_from_input(path, cfg: PipelineConfig, sample_rate: int, convention):
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == TENSOR_MAGIC:
        values, _ = read_tensor(path)
        if values.ndim != 3 or values.shape[2] != 16:
            raise ValidationError(f"{path}: container dims {values.shape} are not a feature tensor")
        cov = devectorize(SscvTensor(values.astype(np.float64), epsilon=cfg.epsilon))
        frame_s = cfg.stft.hop / sample_rate
    elif magic[:4] == b"RIFF":
        clip = load_foa_wav(path, convention)
        spectra = stft(clip, cfg.stft)
        bands = mel_filterbank(cfg.stft.n_fft, clip.sample_rate, cfg.n_mel_bands)
        cov = smooth(banded_covariance(spectra, bands), cfg.alpha)
        frame_s = cfg.stft.hop / clip.sample_rate
    else:
        raise ValidationError(f"{path}: neither a WAV file nor a tensor container")
    return intensity_doa(cov), frame_s


def cmd_doa(args) -> dict:
    if args.hist:
        return _write_histograms(_collect_labels([args.input]), Path(args.out), plot=False)
    cfg = _load_config(args)
    est, frame_s = _doa_estimate_from_input(args.input, cfg, args.sample_rate, _convention(args))
    az = est.azimuth_deg
    el = est.elevation_deg
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DOA_HEADER)
        for n in range(est.n_frames):
            writer.writerow(
                [n, repr(n * frame_s), repr(float(az[n])), repr(float(el[n])), repr(float(est.confidence[n]))]
            )
    return {"command": "doa", "out": str(args.out), "frames": est.n_frames}


def _read_doa_csv(path) -> tuple[DoaEstimate, float]:
    times, az, el, conf = [], [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for line_no, cells in enumerate(reader, start=1):
            if line_no == 1:
                if tuple(cells) != DOA_HEADER:
                    raise ValidationError(f"{path}: line 1: expected header {','.join(DOA_HEADER)}")
                continue
            if not cells:
                continue
            if len(cells) != 5:
                raise ValidationError(f"{path}: line {line_no}: expected 5 columns, got {len(cells)}")
            try:
                times.append(float(cells[1]))
                az.append(float(cells[2]))
                el.append(float(cells[3]))
                conf.append(float(cells[4]))
            except ValueError:
                raise ValidationError(f"{path}: line {line_no}: non-numeric field in {cells}")
    if not times:
        raise ValidationError(f"{path}: no estimate rows")
    az_arr = np.asarray(az)
    el_arr = np.asarray(el)
    conf_arr = np.asarray(conf)
    usable = np.isfinite(az_arr) & np.isfinite(el_arr) & (conf_arr > 0)
    directions = np.zeros((len(times), 3))
    directions[usable] = direction_from_angles(az_arr[usable], el_arr[usable])
    estimate = DoaEstimate(directions=directions, confidence=np.where(usable, conf_arr, 0.0))
    frame_s = float(np.median(np.diff(times))) if len(times) > 1 else 0.1
    return estimate, frame_s


def cmd_eval(args) -> dict:
    est, frame_s = _read_doa_csv(args.doa_csv)
    ref = import_metadata(args.metadata_csv)
    metrics = evaluate(est, ref, threshold_deg=args.threshold, est_frame_s=frame_s)
    report = "".join(f"{key}={value}\n" for key, value in metrics.as_dict().items())
    sys.stdout.write(report)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    if args.csv:
        items = metrics.as_dict()
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(items.keys())
            writer.writerow(items.values())
    return {"command": "eval", **metrics.as_dict()}


def _collect_labels(paths) -> list[SeldFrameLabels]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        else:
            files.append(p)
    if not files:
        raise ValidationError(f"no metadata CSV files found under {list(paths)}")
    return [import_metadata(f) for f in files]


def _write_histograms(labels_list, out_dir: Path, plot: bool) -> dict:
    stats = corpus_stats(labels_list)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for stem, edges, counts in (
        ("azimuth_hist", stats.azimuth_edges(), stats.azimuth_counts),
        ("elevation_hist", stats.elevation_edges(), stats.elevation_counts),
    ):
        path = out_dir / f"{stem}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo_deg", "bin_hi_deg", "count"])
            for lo, hi, count in zip(edges[:-1], edges[1:], counts):
                writer.writerow([int(lo), int(hi), int(count)])
        outputs.append(str(path))
    if plot:
        outputs.append(_plot_histograms(stats, out_dir))
    return {"command": "stats", "rows": stats.n_rows, "outputs": outputs}


def _plot_histograms(stats, out_dir: Path) -> str:
    try:
        import matplotlib
    except ImportError:
        raise ValidationError("--plot needs matplotlib (pip install spur[plot])")
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_az, ax_el) = plt.subplots(1, 2, figsize=(10, 4))
    ax_az.bar(stats.azimuth_edges()[:-1], stats.azimuth_counts, width=10, align="edge")
    ax_az.set_xlabel("azimuth (deg)")
    ax_az.set_ylabel("label rows")
    ax_el.bar(stats.elevation_edges()[:-1], stats.elevation_counts, width=10, align="edge")
    ax_el.set_xlabel("elevation (deg)")
    fig.tight_layout()
    path = out_dir / "histograms.png"
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def cmd_stats(args) -> dict:
    return _write_histograms(_collect_labels(args.paths), Path(args.out_dir), plot=args.plot)


def cmd_inspect(args) -> dict:
    with open(args.file, "rb") as fh:
        magic = fh.read(8)
    if magic == TENSOR_MAGIC:
        header = read_header(args.file)
        info = {
            "command": "inspect",
            "kind": "tensor",
            "version": header["version"],
            "dtype": header["dtype"],
            "dims": list(header["dims"]),
            "provenance": header["provenance"],
        }
    elif magic == WEIGHTS_MAGIC:
        weights = load_weights(args.file)
        info = {
            "command": "inspect",
            "kind": "weights",
            "tensors": {name: list(t.shape) for name, t in weights.tensors.items()},
        }
    else:
        raise ValidationError(f"{args.file}: unknown magic {magic!r}")
    if not args.json:
        for key, value in info.items():
            if key == "command":
                continue
            if isinstance(value, dict):
                for name, shape in value.items():
                    print(f"{name}={shape}")
            else:
                print(f"{key}={value}")
    return info


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------


def _add_common(sub, config=False, convention=False):
    sub.add_argument("--json", action="store_true", help="machine-readable diagnostics")
    if config:
        sub.add_argument("--config", default=None, help="pipeline config TOML file")
    if convention:
        sub.add_argument("--ordering", choices=[o.value for o in Ordering], default="wxyz")
        sub.add_argument(
            "--normalization", choices=[n.value for n in Normalization], default="sn3d"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spur", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spur {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="render a scene spec to WAV + metadata CSV")
    p.add_argument("scene_spec")
    p.add_argument("out_dir")
    p.add_argument("--name", default=None, help="output stem (default: spec file stem)")
    p.add_argument("--seed", type=int, default=None, help="override the scene file's seed")
    p.add_argument("--batch", type=int, default=None, help="render N scenes, seeds seed+0..N-1")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("extract", help="feature tensor (T, B, 16) from a 4-channel WAV")
    p.add_argument("wav")
    p.add_argument("out")
    p.add_argument("--alpha", type=float, default=None, help="override smoothing coefficient")
    _add_common(p, config=True, convention=True)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("encode", help="token tensor (P, out_dim) from a feature tensor")
    p.add_argument("sscv")
    p.add_argument("out")
    p.add_argument("--weights", default=None, help="weights file (default: seeded init)")
    p.add_argument("--init-seed", type=int, default=None, help="seed for random-weight encode")
    _add_common(p, config=True)
    p.set_defaults(func=cmd_encode)

    p = subs.add_parser("init-weights", help="write a deterministic seeded weights file")
    p.add_argument("out")
    p.add_argument("--init-seed", type=int, default=None)
    _add_common(p, config=True)
    p.set_defaults(func=cmd_init_weights)

    p = subs.add_parser("doa", help="per-frame direction estimates from WAV or features")
    p.add_argument("input", help="4-channel WAV, feature container, or metadata dir with --hist")
    p.add_argument("out", help="output CSV (or directory with --hist)")
    p.add_argument("--sample-rate", type=int, default=16000, help="rate for container inputs")
    p.add_argument("--hist", action="store_true", help="histogram a metadata directory instead")
    _add_common(p, config=True, convention=True)
    p.set_defaults(func=cmd_doa)

    p = subs.add_parser("eval", help="localization metrics from DoA CSV vs metadata CSV")
    p.add_argument("doa_csv")
    p.add_argument("metadata_csv")
    p.add_argument("--threshold", type=float, default=20.0, help="match threshold in degrees")
    p.add_argument("--out", default=None, help="also write the text report here")
    p.add_argument("--csv", default=None, help="also write the metrics as CSV here")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("stats", help="azimuth/elevation histograms over metadata CSVs")
    p.add_argument("paths", nargs="+", help="metadata CSV files or directories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plot", action="store_true", help="also write histograms.png")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = subs.add_parser("inspect", help="dump any container or weights file header")
    p.add_argument("file")
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (ValidationError, OSError) as exc:
        _emit_error(args, "validation", exc)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _emit_error(args, "internal", exc)
        return 1
    if args.json:
        print(json.dumps({"status": "ok", **result}, sort_keys=True))
    return 0


def _emit_error(args, kind: str, exc: Exception) -> None:
    if getattr(args, "json", False):
        print(
            json.dumps({"status": "error", "kind": kind, "message": str(exc)}, sort_keys=True),
            file=sys.stderr,
        )
    else:
        print(f"spur: error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
