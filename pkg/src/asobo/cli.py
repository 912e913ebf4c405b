"""Command-line entry point: design, simulate, train, infer, eval.

Settings come from built-in defaults, then ``--config`` (YAML), then ``--set key=value``
overrides, then the explicit ``--seed`` flag.

Exit codes: 0 success, 2 bad input, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import dsp
from .array import ArrayGeometry, SpatialFilterBank, design_filterbank
from .config import dump_config, load_config
from .metrics import (assign_overlap, frames_from_segments, frames_to_segments, localization_metrics,
                      localize, nearest_filter, osd_metrics, vad_metrics)
from .pipeline import AsoboModel, TrainingItem, frames_in, train
from .simulate import (RoomConfig, ScenarioSpec, activity_segments, frame_labels, generate_scenario,
                       read_manifest, read_rttm, scenario_rng, write_manifest, write_rttm)
from .store import file_digest
from .tcn import TcnConfig, derive_vad_osd

log = logging.getLogger("asobo")

EXIT_BAD_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def geometry_from(cfg):
    return ArrayGeometry.uniform(cfg.array.mic_count, cfg.array.radius, cfg.array.sound_speed)


def room_from(cfg):
    return RoomConfig(tuple(cfg.room.dims), cfg.room.t60, tuple(cfg.room.array_center),
                      geometry_from(cfg), cfg.room.max_order)


def scenario_spec_from(cfg):
    s = cfg.scenario
    return ScenarioSpec(s.num_sources, s.mode, cfg.beam.filter_count, tuple(s.distance_range),
                        s.duration, s.snr_db, cfg.seed)


def tcn_config_from(cfg):
    m = cfg.model
    return TcnConfig(m.n_mels, m.hidden_channels, m.kernel_size, m.blocks, m.layers_per_block)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- design -------------------------------------------------------------------

def cmd_design(cfg, args):
    out = _out_dir(args)
    bank = design_filterbank(geometry_from(cfg), cfg.beam.filter_count, dsp.rfft_freqs(),
                             cfg.beam.loading, cfg.beam.noise_model)
    path = out / "filterbank.zip"
    bank.save(path, {"config_hash": cfg.config_hash()})
    print(path)
    return path


# --- simulate -----------------------------------------------------------------

def _simulate_one(job):
    cfg, index, out = job
    sc = generate_scenario(scenario_spec_from(cfg), room_from(cfg), scenario_rng(cfg.seed, index))
    sid = f"scn_{index:05d}"
    wav = Path("wav") / f"{sid}.wav"
    rttm = Path("labels") / f"{sid}.rttm"
    dsp.write_wav(out / wav, sc.samples)
    write_rttm(out / rttm, sid, activity_segments(sc.activity), {"config_hash": cfg.config_hash()})
    rec = sc.record(sid, str(wav), str(rttm))
    rec["config_hash"] = cfg.config_hash()
    rec["filter_count"] = cfg.beam.filter_count
    return rec


def cmd_simulate(cfg, args):
    out = _out_dir(args)
    (out / "wav").mkdir(exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    jobs = [(cfg, i, out) for i in range(args.n)]
    if args.jobs > 1 and len(jobs) > 1:
        with Pool(args.jobs) as pool:
            records = pool.map(_simulate_one, jobs)
    else:
        records = [_simulate_one(j) for j in jobs]
    write_manifest(out / "manifest.jsonl", records)
    print(out / "manifest.jsonl")
    return records


# --- train --------------------------------------------------------------------

def _load_items(manifest_path):
    root = Path(manifest_path).parent
    items = []
    for rec in read_manifest(manifest_path):
        wave = dsp.read_wav(root / rec["wave"])
        labels = frame_labels(rec["activity"], dsp.num_frames(wave.samples.shape[1]))
        items.append(TrainingItem(wave.samples, labels))
    return items


def _bank_reference(path):
    # the path is kept as given so checkpoints do not depend on the working directory
    return {"filterbank_path": str(path), "filterbank_hash": file_digest(path)}


def cmd_train(cfg, args):
    out = _out_dir(args)
    bank_path = args.filterbank or cfg.paths.filterbank
    bank = SpatialFilterBank.load(bank_path)
    ref = _bank_reference(bank_path)
    items = _load_items(args.manifest)
    if not items:
        raise InputError(f"{args.manifest}: manifest is empty")
    rng = np.random.default_rng(cfg.seed)
    if args.init:
        model, meta = AsoboModel.load(args.init)
        if meta.get("filterbank_hash") != ref["filterbank_hash"]:
            raise InputError(f"{args.init} was trained with a different filter bank "
                             f"({meta.get('filterbank_hash')} != {ref['filterbank_hash']})")
    else:
        model = AsoboModel.init(len(bank.bin_freqs), cfg.model.hidden, tcn_config_from(cfg), rng=rng)
    t = cfg.train
    steps = args.steps if args.steps is not None else t.steps
    if not steps:
        segs = sum(max(1, int(it.samples.shape[1] / dsp.SAMPLE_RATE // t.segment_seconds)) for it in items)
        steps = t.epochs * math.ceil(segs / t.batch_size)
    batch = args.batch_size or t.batch_size
    losses = train(model, items, bank, steps, batch, t.segment_seconds, t.lr, rng,
                   on_step=lambda s, l: log.info("step %d loss %.6f", s, l))
    ckpt = out / "model.zip"
    model.save(ckpt, {**ref, "config_hash": cfg.config_hash(), "seed": cfg.seed, "steps": steps,
                      "batch_size": batch, "config": cfg.to_dict()})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "config_hash"])
        for i, l in enumerate(losses):
            w.writerow([i, repr(l), cfg.config_hash()])
    print(ckpt)
    return ckpt, losses


# --- infer --------------------------------------------------------------------

def _infer_one(job):
    cfg, ckpt_path, bank_path, wav_path, out = job
    model, meta = AsoboModel.load(ckpt_path)
    bank = SpatialFilterBank.load(bank_path)
    wave = dsp.read_wav(wav_path)
    if wave.num_channels != bank.geometry.mic_count:
        raise InputError(f"{wav_path}: {wave.num_channels} channels, filter bank expects "
                         f"{bank.geometry.mic_count}")
    y_pow = dsp.beam_power(wave, bank)
    hop_frames = int(round(cfg.infer.hop_seconds * dsp.SAMPLE_RATE / dsp.HOP_LEN))
    probs, weights = model.infer(y_pow, frames_in(cfg.infer.window_seconds), hop_frames)
    vad, osd = derive_vad_osd(probs, cfg.infer.vad_threshold, cfg.infer.osd_threshold,
                              cfg.infer.smoothing or None)
    stem = Path(wav_path).stem
    centers = dsp.frame_centers(len(probs))
    hop = dsp.HOP_LEN / dsp.SAMPLE_RATE
    segs = [(a, b, "speech") for a, b in frames_to_segments(vad, centers, hop)]
    segs += [(a, b, "overlap") for a, b in frames_to_segments(osd, centers, hop)]
    write_rttm(out / f"{stem}.rttm", stem, segs, {"config_hash": cfg.config_hash()})
    np.savetxt(out / f"{stem}.posteriors.csv", probs, delimiter=",", fmt="%.17g",
               header="p_nonspeech,p_single,p_overlap", comments="")
    np.savetxt(out / f"{stem}.weights.csv", weights, delimiter=",", fmt="%.17g",
               header=",".join(f"w{p}" for p in range(weights.shape[1])), comments="")
    decision = localize(weights, cfg.tau)
    summary = {"file": stem, "frames": int(len(probs)), "config_hash": cfg.config_hash(),
               "checkpoint_config_hash": meta.get("config_hash"),
               "mean_weights": [float(x) for x in decision.mean_weights], "tau": decision.threshold,
               "selected": list(decision.selected)}
    with open(out / f"{stem}.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def cmd_infer(cfg, args):
    out = _out_dir(args)
    _, meta = AsoboModel.load(args.checkpoint)
    bank_path = args.filterbank or meta["filterbank_path"]
    if file_digest(bank_path) != meta["filterbank_hash"]:
        raise InputError(f"{bank_path} does not match the filter bank the checkpoint was trained with")
    wavs = list(args.wav)
    if args.manifest:
        root = Path(args.manifest).parent
        wavs += [str(root / r["wave"]) for r in read_manifest(args.manifest)]
    jobs = [(cfg, args.checkpoint, bank_path, w, out) for w in wavs]
    if args.jobs > 1 and len(jobs) > 1:
        with Pool(args.jobs) as pool:
            summaries = pool.map(_infer_one, jobs)
    else:
        summaries = [_infer_one(j) for j in jobs]
    for s in summaries:
        print(out / f"{s['file']}.rttm")
    return summaries


# --- eval ---------------------------------------------------------------------

def _check_hash(a, b, what, force):
    if a and b and a != b and not force:
        raise InputError(f"config hash mismatch for {what}: {a} != {b} (use --force to score anyway)")


def _pred_frames(segs, n, centers):
    """VAD/OSD frames from ``speech``/``overlap`` segments, or from per-speaker segments."""
    if any(lab in ("speech", "overlap") for _, _, lab in segs):
        vad = frames_from_segments([s for s in segs if s[2] == "speech"], n, centers) > 0
        osd = frames_from_segments([s for s in segs if s[2] == "overlap"], n, centers) > 0
        return vad, osd
    count = frames_from_segments(segs, n, centers)
    return count > 0, count >= 2


def _eval_seg(pred_dir, ref_dir, force):
    label_dir = ref_dir / "labels" if (ref_dir / "labels").is_dir() else ref_dir
    preds = {p.stem: p for p in pred_dir.glob("*.rttm")}
    refs = {p.stem: p for p in label_dir.glob("*.rttm")}
    if set(preds) != set(refs):
        raise InputError(f"file lists differ: only in pred {sorted(set(preds) - set(refs))}, "
                         f"only in ref {sorted(set(refs) - set(preds))}")
    per_file = {}
    all_vp, all_vr, all_op, all_or = [], [], [], []
    for stem in sorted(preds):
        pred_segs, ph = read_rttm(preds[stem])
        ref_segs, rh = read_rttm(refs[stem])
        _check_hash(ph.get("config_hash"), rh.get("config_hash"), stem, force)
        info = pred_dir / f"{stem}.json"
        if info.exists():
            n = json.loads(info.read_text())["frames"]
        else:
            end = max([b for _, b, _ in pred_segs + ref_segs] + [0.0])
            n = dsp.num_frames(int(round(end * dsp.SAMPLE_RATE)))
        centers = dsp.frame_centers(n)
        count = frames_from_segments(ref_segs, n, centers)
        vad_pred, osd_pred = _pred_frames(pred_segs, n, centers)
        per_file[stem] = {"vad": vad_metrics(vad_pred, count > 0).as_dict(),
                          "osd": osd_metrics(osd_pred, count >= 2).as_dict()}
        all_vp.append(vad_pred)
        all_vr.append(count > 0)
        all_op.append(osd_pred)
        all_or.append(count >= 2)
    total = {"vad": vad_metrics(np.concatenate(all_vp or [[]]), np.concatenate(all_vr or [[]])).as_dict(),
             "osd": osd_metrics(np.concatenate(all_op or [[]]), np.concatenate(all_or or [[]])).as_dict()}
    return {"mode": "seg", "total": total, "files": per_file}, None


def _eval_loc(pred_dir, ref_dir, force):
    manifest = ref_dir / "manifest.jsonl" if ref_dir.is_dir() else ref_dir
    records = {Path(r["wave"]).stem: r for r in read_manifest(manifest)}
    preds = {p.stem: p for p in pred_dir.glob("*.json") if p.name != "metrics.json"}
    if set(preds) != set(records):
        raise InputError(f"file lists differ: only in pred {sorted(set(preds) - set(records))}, "
                         f"only in ref {sorted(set(records) - set(preds))}")
    rows, selected, truths = [], [], []
    for stem in sorted(preds):
        p = json.loads(preds[stem].read_text())
        r = records[stem]
        _check_hash(p.get("config_hash"), r.get("config_hash"), stem, force)
        P = len(p["mean_weights"])
        truth = sorted({nearest_filter(np.radians(a), P) for a in r["true_angles_deg"]})
        selected.append(p["selected"])
        truths.append(truth)
        rows.append([stem, " ".join(f"{w:.6f}" for w in p["mean_weights"]),
                     " ".join(map(str, p["selected"])), " ".join(map(str, truth))])
    score = localization_metrics(selected, truths)
    return {"mode": "loc", "total": score.as_dict(), "scenarios": len(rows)}, rows


def _text_report(report):
    lines = [f"mode: {report['mode']}"]

    def fmt(v):
        return f"{v:8.2f}" if isinstance(v, float) else f"{v!s:>8}"

    total = report["total"]
    groups = total.items() if report["mode"] == "seg" else [("loc", total)]
    for name, d in groups:
        lines.append(f"{name:<6}" + "".join(f"  {k}={fmt(v)}" for k, v in d.items()))
    return "\n".join(lines) + "\n"


def cmd_eval(cfg, args):
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    if args.mode == "seg":
        report, rows = _eval_seg(pred_dir, ref_dir, args.force)
    else:
        report, rows = _eval_loc(pred_dir, ref_dir, args.force)
    report["config_hash"] = cfg.config_hash()
    out = _out_dir(args)
    with open(out / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=float)
    text = _text_report(report)
    (out / "metrics.txt").write_text(text)
    if rows is not None:
        with open(out / "localization.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "mean_weights", "selected", "truth"])
            w.writerows(rows)
    sys.stdout.write(text)
    return report


# --- overlap assignment helper ------------------------------------------------

def cmd_assign(cfg, args):
    diar, _ = read_rttm(args.diarization)
    osd, _ = read_rttm(args.osd)
    augmented, flagged = assign_overlap(diar, [(a, b) for a, b, _ in osd])
    out = _out_dir(args)
    stem = Path(args.diarization).stem
    write_rttm(out / f"{stem}.rttm", stem, augmented, {"config_hash": cfg.config_hash()})
    for a, b in flagged:
        log.warning("overlap %.3f-%.3f left unassigned (fewer than two candidate speakers)", a, b)
    return augmented, flagged


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set beam.filter_count=4")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="asobo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("design", parents=[common], help="design the fixed beamformer bank")

    s = sub.add_parser("simulate", parents=[common], help="simulate spatialized scenarios")
    s.add_argument("--n", type=int, required=True, help="number of scenarios")

    t = sub.add_parser("train", parents=[common], help="train the combinator and classifier")
    t.add_argument("--manifest", required=True)
    t.add_argument("--filterbank")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--init", help="checkpoint to continue from")

    i = sub.add_parser("infer", parents=[common], help="posteriors, segments and weight maps")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--filterbank")
    i.add_argument("--manifest", help="also process every wave listed in this manifest")
    i.add_argument("wav", nargs="*")

    e = sub.add_parser("eval", parents=[common], help="score predictions against references")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--mode", choices=["seg", "loc"], default="seg")
    e.add_argument("--force", action="store_true", help="score despite config hash mismatches")

    a = sub.add_parser("assign-overlap", parents=[common],
                       help="add closest-in-time second speakers to overlap segments")
    a.add_argument("--diarization", required=True)
    a.add_argument("--osd", required=True)
    return p


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "assign-overlap": cmd_assign}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "design":
            os.makedirs(args.out, exist_ok=True)
            dump_config(cfg, Path(args.out) / "config.yaml")
        COMMANDS[args.command](cfg, args)
    # LinAlgError derives from ValueError, so it has to be caught first
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"asobo {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"asobo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
