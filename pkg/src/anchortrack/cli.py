"""Command-line pipeline: generate data, train, track, link, evaluate, report.

Every subcommand reads the same YAML config (all flags optional; defaults are
sensible for a quick smoke run) plus ``-s section.key=value`` overrides, does
one stage of work, and leaves a ``run.json`` manifest (config snapshot, seed,
library versions) next to its outputs so any artifact can be reproduced from
the manifest alone.  ``pipeline`` chains all stages over the standard
ablation ladder and renders the final report.

Exit codes group failures by kind: 2 config/parse, 3 data, 4 numeric.
"""

from __future__ import annotations

import functools
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import PipelineConfig, apply_overrides, config_snapshot, load_config
from .data import build_dataset, load_sequence, load_split, sequence_dirs
from .data.dataset import pseudo_clip_pool, video_clip_pool
from .data.mot_io import load_mot_annotations, load_seqinfo, write_mot_results
from .errors import (AnchorTrackError, CheckpointError, ConfigError, DataError,
                     GenerationError, NumericError, ParseError)
from .linker import link_tracks
from .metrics import evaluate_sequences
from .model import AnchorTrackModel, load_checkpoint
from .report import ABLATION_ORDER, load_eval_records, write_eval_record, write_report
from .tracker import run_sequence
from .training import train

log = logging.getLogger("anchortrack")

_EXIT_CODES = (
    (ConfigError, 2),
    (ParseError, 2),
    (NumericError, 4),
    (AnchorTrackError, 3),  # DataError, GenerationError, CheckpointError
)


def _command(fn):
    """Map package exceptions onto the documented exit-code categories."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AnchorTrackError as exc:
            code = next(c for cls, c in _EXIT_CODES if isinstance(exc, cls))
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(code)

    return wrapper


def _config_options(fn):
    fn = click.option("--config", "-c", "config_path",
                      type=click.Path(dir_okay=False, path_type=Path),
                      default=None, help="YAML pipeline config.")(fn)
    fn = click.option("--set", "-s", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config value by dotted path.")(fn)
    return fn


def _write_manifest(out_dir: Path, command: str, cfg: PipelineConfig,
                    extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "config": config_snapshot(cfg),
        "seed": cfg.seed,
        "versions": {
            "anchortrack": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": _torch_version(),
            "scipy": _scipy_version(),
        },
    }
    if extra:
        doc.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _torch_version() -> str:
    import torch
    return torch.__version__


def _scipy_version() -> str:
    import scipy
    return scipy.__version__


@click.group()
@click.version_option(__version__, prog_name="anchortrack")
@click.option("--verbose", "-v", is_flag=True, help="Debug-level logging.")
def main(verbose: bool) -> None:
    """Query-based multi-object tracking on synthetic benchmarks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )


# ----- gen-data ---------------------------------------------------------------

@main.command("gen-data")
@_config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Dataset root (default: paths.data_root).")
@click.option("--force", is_flag=True, help="Replace an existing non-empty dataset.")
@_command
def gen_data(config_path: Path | None, overrides: tuple[str, ...],
             out_dir: Path | None, force: bool) -> None:
    """Generate the synthetic benchmark (sequences + static pseudo sources)."""
    cfg = load_config(config_path, overrides)
    out = out_dir or Path(cfg.paths.data_root)
    manifest = build_dataset(out, cfg.synth, force=force)
    _write_manifest(out, "gen-data", cfg)
    counts = {split: len(names) for split, names in manifest["splits"].items()}
    click.echo(f"dataset written to {out}: " +
               ", ".join(f"{n} {s}" for s, n in counts.items()))


# ----- train ------------------------------------------------------------------

@main.command("train")
@_config_options
@click.option("--data", "data_root", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Dataset root (default: paths.data_root).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Checkpoint directory (default: paths.checkpoints).")
@click.option("--no-val", is_flag=True, help="Skip per-epoch validation tracking.")
@_command
def train_cmd(config_path: Path | None, overrides: tuple[str, ...],
              data_root: Path | None, out_dir: Path | None, no_val: bool) -> None:
    """Train the tracker on video clips (optionally mixed with pseudo clips)."""
    cfg = load_config(config_path, overrides)
    data = data_root or Path(cfg.paths.data_root)
    out = out_dir or Path(cfg.paths.checkpoints)

    train_seqs = load_split(data, "train")
    if not train_seqs:
        raise DataError(f"no training sequences under {data}/train")
    info = train_seqs[0].info
    model_cfg = cfg.train.model
    if (info.width, info.height) != (model_cfg.width, model_cfg.height):
        raise ConfigError(
            f"model expects {model_cfg.width}x{model_cfg.height} frames but the "
            f"dataset provides {info.width}x{info.height}; set train.model.width/height")

    video_pool = video_clip_pool(train_seqs, cfg.train.clip_len)
    pseudo_pool = []
    if cfg.train.mix_ratios[1] > 0:
        statics = load_split(data, "static")
        pseudo_pool = pseudo_clip_pool(
            statics, cfg.train.clip_len, cfg.motion, seed=cfg.seed,
            clips_per_image=cfg.train.pseudo_clips_per_image)

    val_sequences = None
    if not no_val:
        try:
            val_sequences = load_split(data, "val") or None
        except DataError:
            val_sequences = None

    model = AnchorTrackModel(model_cfg)
    result = train(model, cfg.train, (video_pool, pseudo_pool), out,
                   val_sequences=val_sequences, tracker_cfg=cfg.tracker)
    _write_manifest(out, "train", cfg, {
        "clips": {"video": len(video_pool), "pseudo": len(pseudo_pool)},
    })
    final = result.history[-1] if result.history else {}
    click.echo(f"trained {cfg.train.epochs} epochs -> {result.checkpoint}"
               + (f" (val HOTA {final['val']['hota']:.1f})" if "val" in final else ""))


# ----- track ------------------------------------------------------------------

def _track_one(task: tuple) -> tuple[str, int]:
    ckpt, seq_dir, tracker_cfg, result_path, use_proposals = task
    model, _ = load_checkpoint(ckpt)
    seq = load_sequence(seq_dir)
    tracks = run_sequence(
        model, seq.frames, tracker_cfg,
        proposals=seq.proposals if use_proposals else None,
        result_path=result_path,
        frame_size=(seq.info.width, seq.info.height))
    return seq.name, len(tracks.identities)


@main.command("track")
@_config_options
@click.option("--data", "data_root", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Dataset root (default: paths.data_root).")
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path),
              default=None, help="Model checkpoint (default: <paths.checkpoints>/final.pt).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Directory for MOT result files.")
@click.option("--split", default=None, help="Dataset split (default: eval.split).")
@click.option("--no-proposals", is_flag=True,
              help="Track from the learnable anchors alone, ignoring proposal files.")
@click.option("--workers", default=1, show_default=True,
              help="Parallel worker processes, one sequence each.")
@_command
def track_cmd(config_path: Path | None, overrides: tuple[str, ...],
              data_root: Path | None, checkpoint: Path | None, out_dir: Path | None,
              split: str | None, no_proposals: bool, workers: int) -> None:
    """Run the online tracker over a split, writing one MOT file per sequence."""
    cfg = load_config(config_path, overrides)
    data = data_root or Path(cfg.paths.data_root)
    ckpt = checkpoint or Path(cfg.paths.checkpoints) / "final.pt"
    split = split or cfg.eval.split
    out = out_dir or Path(cfg.paths.results) / f"tracks-{split}"
    out.mkdir(parents=True, exist_ok=True)

    load_checkpoint(ckpt)  # fail early with a CheckpointError if unusable
    tasks = [
        (ckpt, seq_dir, cfg.tracker, out / f"{seq_dir.name}.txt", not no_proposals)
        for seq_dir in sequence_dirs(data, split)
    ]
    if not tasks:
        raise DataError(f"split '{split}' under {data} contains no sequences")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_track_one, tasks))
    else:
        outcomes = [_track_one(task) for task in tasks]

    _write_manifest(out, "track", cfg, {
        "checkpoint": str(ckpt), "split": split,
        "proposals": not no_proposals,
        "sequences": {name: n for name, n in outcomes},
    })
    total = sum(n for _, n in outcomes)
    click.echo(f"tracked {len(outcomes)} sequences -> {out} ({total} identities)")


# ----- link -------------------------------------------------------------------

@main.command("link")
@_config_options
@click.option("--tracks", "tracks_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path),
              help="Directory of MOT result files to link.")
@click.option("--data", "data_root", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Dataset root (default: paths.data_root).")
@click.option("--split", default=None, help="Dataset split (default: eval.split).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Output directory (default: <tracks>-linked).")
@_command
def link_cmd(config_path: Path | None, overrides: tuple[str, ...], tracks_dir: Path,
             data_root: Path | None, split: str | None, out_dir: Path | None) -> None:
    """Re-associate track fragments across long occlusion gaps."""
    cfg = load_config(config_path, overrides)
    data = data_root or Path(cfg.paths.data_root)
    split = split or cfg.eval.split
    out = out_dir or tracks_dir.with_name(tracks_dir.name + "-linked")
    out.mkdir(parents=True, exist_ok=True)

    result_files = sorted(tracks_dir.glob("*.txt"))
    if not result_files:
        raise DataError(f"no MOT result files (*.txt) in {tracks_dir}")

    all_events: dict[str, list[dict]] = {}
    for path in result_files:
        info_path = Path(data) / split / path.stem / "seqinfo.ini"
        if not info_path.is_file():
            raise DataError(f"no sequence metadata for {path.name}: {info_path}")
        info = load_seqinfo(info_path)
        tracks = load_mot_annotations(path, (info.width, info.height))
        merged, events = link_tracks(tracks, cfg.linker)
        write_mot_results(out / path.name, merged, (info.width, info.height))
        all_events[path.stem] = [
            {"exiting": e.exiting, "entering": e.entering,
             "gap": e.gap, "window": list(e.window)}
            for e in events
        ]
    (out / "events.json").write_text(json.dumps(all_events, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "link", cfg, {"source": str(tracks_dir), "split": split})
    n_events = sum(len(v) for v in all_events.values())
    click.echo(f"linked {len(result_files)} sequences -> {out} ({n_events} link events)")


# ----- eval -------------------------------------------------------------------

@main.command("eval")
@_config_options
@click.option("--tracks", "tracks_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path),
              help="Directory of MOT result files to score.")
@click.option("--data", "data_root", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Dataset root (default: paths.data_root).")
@click.option("--split", default=None, help="Dataset split (default: eval.split).")
@click.option("--name", default=None, help="Record name (default: tracks dir name).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path),
              default=None, help="Record file (default: <paths.results>/<name>.json).")
@click.option("--workers", default=1, show_default=True,
              help="Parallel worker processes, one sequence each.")
@_command
def eval_cmd(config_path: Path | None, overrides: tuple[str, ...], tracks_dir: Path,
             data_root: Path | None, split: str | None, name: str | None,
             out_path: Path | None, workers: int) -> None:
    """Score tracking results against ground truth (HOTA/DetA/AssA)."""
    cfg = load_config(config_path, overrides)
    data = data_root or Path(cfg.paths.data_root)
    split = split or cfg.eval.split
    name = name or tracks_dir.name
    out = out_path or Path(cfg.paths.results) / f"{name}.json"

    sequences = load_split(data, split, with_images=False)
    if not sequences:
        raise DataError(f"split '{split}' under {data} contains no sequences")
    pairs = []
    for seq in sequences:
        pred_path = tracks_dir / f"{seq.name}.txt"
        if not pred_path.is_file():
            raise DataError(f"missing tracking result for '{seq.name}': {pred_path}")
        pairs.append((seq.tracks, load_mot_annotations(pred_path, seq.info.size)))

    result = evaluate_sequences(pairs, workers=workers)
    per_sequence = {
        seq.name: round(evaluate_sequences([pair]).hota, 3)
        for seq, pair in zip(sequences, pairs)
    }
    write_eval_record(out, name, result, extra={
        "split": split, "tracks": str(tracks_dir), "per_sequence": per_sequence,
    })
    for seq_name, value in per_sequence.items():
        click.echo(f"  {seq_name}: HOTA {value:.1f}")
    click.echo(f"{name}: {result.summary()}  -> {out}")


# ----- report -----------------------------------------------------------------

@main.command("report")
@_config_options
@click.option("--results", "results_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Directory of eval records (default: paths.results).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Report directory (default: same as --results).")
@_command
def report_cmd(config_path: Path | None, overrides: tuple[str, ...],
               results_dir: Path | None, out_dir: Path | None) -> None:
    """Render the metric table and summary figures from eval records."""
    cfg = load_config(config_path, overrides)
    results = results_dir or Path(cfg.paths.results)
    paths = write_report(results, out_dir)
    for record in load_eval_records(results):
        click.echo(f"  {record['name']:<20s} HOTA {record['hota']:6.2f}  "
                   f"DetA {record['deta']:6.2f}  AssA {record['assa']:6.2f}")
    click.echo("report: " + ", ".join(str(p) for p in paths.values()))


# ----- pipeline ---------------------------------------------------------------

# The standard ablation ladder: each row adds one mechanism on top of the
# previous row; the last row post-processes the +QD row's tracking output.
_ROWS: tuple[tuple[str, tuple[str, ...], bool, bool], ...] = (
    # name, config overrides, track with proposals, apply linker
    ("baseline",
     ("train.use_proposals=false", "train.model.n_learn=300",
      "train.mix_ratios=[1.0, 0.0]", "train.dn_enabled=false"),
     False, False),
    ("+proposals",
     ("train.use_proposals=true", "train.model.n_learn=10",
      "train.mix_ratios=[1.0, 0.0]", "train.dn_enabled=false"),
     True, False),
    ("+pseudo-clips",
     ("train.use_proposals=true", "train.model.n_learn=10",
      "train.mix_ratios=[0.7, 0.3]", "train.dn_enabled=false"),
     True, False),
    ("+QD",
     ("train.use_proposals=true", "train.model.n_learn=10",
      "train.mix_ratios=[0.7, 0.3]", "train.dn_enabled=true"),
     True, False),
    ("+extra-association", (), True, True),
)


def _slug(name: str) -> str:
    return name.lstrip("+").replace(" ", "-").lower()


@main.command("pipeline")
@_config_options
@click.option("--workdir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("pipeline"), show_default=True,
              help="Root directory for all pipeline artifacts.")
@click.option("--seeds", default=1, show_default=True,
              help="Number of training seeds per ablation row.")
@click.option("--workers", default=1, show_default=True,
              help="Parallel workers for tracking and evaluation.")
@click.option("--force", is_flag=True, help="Regenerate the dataset if present.")
@_command
def pipeline_cmd(config_path: Path | None, overrides: tuple[str, ...], workdir: Path,
                 seeds: int, workers: int, force: bool) -> None:
    """Run the full ablation ladder and render the report."""
    if seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {seeds}")
    base_cfg = load_config(config_path, overrides)
    data = workdir / "data"
    results_dir = workdir / "results"

    if force or not (data / "manifest.json").exists():
        build_dataset(data, base_cfg.synth, force=force)
        _write_manifest(data, "gen-data", base_cfg)
        click.echo(f"dataset -> {data}")
    else:
        click.echo(f"dataset exists, reusing {data}")

    track_dirs: dict[tuple[str, int], Path] = {}
    records: dict[str, dict[int, dict]] = {}
    for row_name, row_overrides, with_proposals, apply_linker in _ROWS:
        slug = _slug(row_name)
        records[row_name] = {}
        for k in range(seeds):
            seed = base_cfg.seed + k
            row_cfg = load_config(
                config_path, tuple(overrides) + row_overrides + (f"seed={seed}",))
            run_dir = workdir / "runs" / slug / f"seed-{k}"
            tracks = workdir / "tracks" / slug / f"seed-{k}"

            row_args = tuple(overrides) + row_overrides + (f"seed={seed}",)
            if apply_linker:
                source = track_dirs[("+QD", k)]
                _invoke(link_cmd, config_path, overrides=row_args,
                        tracks_dir=source, data_root=data,
                        split=row_cfg.eval.split, out_dir=tracks)
            else:
                click.echo(f"[{row_name} seed {seed}] training...")
                _invoke(train_cmd, config_path, overrides=row_args,
                        data_root=data, out_dir=run_dir, no_val=True)
                _invoke(track_cmd, config_path, overrides=row_args,
                        data_root=data, checkpoint=run_dir / "final.pt",
                        out_dir=tracks, split=row_cfg.eval.split,
                        no_proposals=not with_proposals, workers=workers)
            track_dirs[(row_name, k)] = tracks

            sequences = load_split(data, row_cfg.eval.split, with_images=False)
            pairs = [
                (seq.tracks,
                 load_mot_annotations(tracks / f"{seq.name}.txt", seq.info.size))
                for seq in sequences
            ]
            seed_result = evaluate_sequences(pairs, workers=workers)
            records[row_name][seed] = {
                "hota": seed_result.hota, "deta": seed_result.deta,
                "assa": seed_result.assa,
            }
            click.echo(f"[{row_name} seed {seed}] {seed_result.summary()}")

        # Pool every seed's sequences into the row's headline record.
        sequences = load_split(data, base_cfg.eval.split, with_images=False)
        pooled_pairs = [
            (seq.tracks,
             load_mot_annotations(track_dirs[(row_name, k)] / f"{seq.name}.txt",
                                  seq.info.size))
            for k in range(seeds) for seq in sequences
        ]
        pooled = evaluate_sequences(pooled_pairs, workers=workers)
        write_eval_record(results_dir / f"{slug}.json", row_name, pooled, extra={
            "per_seed": {str(base_cfg.seed + k): records[row_name][base_cfg.seed + k]
                         for k in range(seeds)},
        })

    paths = write_report(results_dir, workdir / "report")
    click.echo("ablation results:")
    for record in load_eval_records(results_dir):
        click.echo(f"  {record['name']:<20s} HOTA {record['hota']:6.2f}  "
                   f"DetA {record['deta']:6.2f}  AssA {record['assa']:6.2f}")
    click.echo("report: " + ", ".join(str(p) for p in paths.values()))


def _invoke(command: click.Command, config_path: Path | None, **kwargs) -> None:
    """Call another subcommand's implementation in-process."""
    callback = command.callback
    assert callback is not None
    callback(config_path=config_path, **kwargs)


if __name__ == "__main__":
    main()
