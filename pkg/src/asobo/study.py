"""Desk-scale pseudo-localization study.

Train the full model for frame classification on simulated two-speaker rooms, then
read source directions off the time-averaged attention weights of held-out easy
(on-grid) and hard (off-grid) scenarios and compare with random filter selection.
"""

import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool

import numpy as np

from . import dsp
from .array import design_filterbank
from .metrics import localization_metrics, localize, random_selection_f1, two_class_f1
from .pipeline import AsoboModel, TrainingItem, train
from .simulate import RoomConfig, ScenarioSpec, generate_scenario, scenario_rng
from .tcn import TcnConfig


@dataclass
class StudyConfig:
    train_scenarios: int = 200
    eval_scenarios: int = 50
    filter_count: int = 8
    num_sources: int = 2
    t60: float = 0.3
    duration: float = 4.0
    snr_db: float = 0.0
    peak: float = 0.9  # every mixture is rescaled to this peak before feature extraction
    steps: int = 400
    batch_size: int = 16
    segment_seconds: float = 2.0
    lr: float = 1e-3
    hidden: int = 256
    tcn: TcnConfig = field(default_factory=TcnConfig)
    tau: float = None  # None -> 2/P
    seed: int = 0
    jobs: int = 1
    random_scenarios: int = 10000


@dataclass
class ModeResult:
    mode: str
    f1: float  # two-class micro F1, the convention of the random baseline
    precision: float  # positive class only from here on
    recall: float
    positive_f1: float
    top_hits: float  # fraction of true filters among the L largest mean weights
    mean_max_weight: float
    vad_accuracy: float
    max_row_error: float


@dataclass
class StudyResult:
    config: StudyConfig
    easy: ModeResult
    hard: ModeResult
    random_f1: float
    random_positive_f1: float
    losses: list
    seconds: dict

    def lines(self):
        out = [f"random selection: F1 {self.random_f1:.1f} (positive class {self.random_positive_f1:.1f})"]
        for r in (self.easy, self.hard):
            out.append(f"{r.mode}: F1 {r.f1:.1f}  P/R/F1+ {r.precision:.1f}/{r.recall:.1f}/{r.positive_f1:.1f}"
                       f"  top-{self.config.num_sources} hits {r.top_hits:.2f}"
                       f"  max mean weight {r.mean_max_weight:.3f}  VAD acc {r.vad_accuracy:.1f}")
        first, last = np.mean(self.losses[:10]), np.mean(self.losses[-10:])
        out.append(f"loss {first:.3f} -> {last:.3f}; " +
                   ", ".join(f"{k} {v:.0f} s" for k, v in self.seconds.items()))
        return out

    def as_dict(self):
        d = asdict(self)
        d["config"]["tcn"] = self.config.tcn.to_dict()
        return d


def _one(job):
    spec, room, base, i = job
    return generate_scenario(spec, room, scenario_rng(base, i))


def simulate_set(cfg, n, modes, base, room):
    """``n`` scenarios cycling through ``modes``, each on its own RNG stream."""
    jobs = [(ScenarioSpec(cfg.num_sources, modes[i % len(modes)], cfg.filter_count,
                          duration=cfg.duration, snr_db=cfg.snr_db), room, base, i) for i in range(n)]
    if cfg.jobs > 1 and n > 1:
        with Pool(cfg.jobs) as pool:
            scenarios = pool.map(_one, jobs)
    else:
        scenarios = [_one(j) for j in jobs]
    for s in scenarios:
        s.samples = s.samples * (cfg.peak / max(np.abs(s.samples).max(), 1e-12))
    return scenarios


def evaluate(model, bank, scenarios, tau, L, mode):
    selected, truths, means, hits, acc, row_err = [], [], [], [], [], 0.0
    for s in scenarios:
        probs, w = model.infer(dsp.beam_power(s.samples, bank))
        d = localize(w, tau)
        selected.append(d.selected)
        truths.append(s.true_filter_indices)
        means.append(d.mean_weights)
        hits.append(len(set(np.argsort(d.mean_weights)[-L:]) & set(s.true_filter_indices)) / L)
        acc.append(np.mean((probs[:, 0] < 0.5) == (s.labels > 0)))
        row_err = max(row_err, float(np.max(np.abs(probs.sum(1) - 1))))
    pos = localization_metrics(selected, truths)
    P = bank.filter_count
    return ModeResult(mode, two_class_f1(selected, truths, P), pos.precision, pos.recall, pos.f1,
                      float(np.mean(hits)), float(np.mean([m.max() for m in means])),
                      100.0 * float(np.mean(acc)), row_err)


def run_study(cfg=StudyConfig(), log=print):
    t0 = time.perf_counter()
    room = RoomConfig(t60=cfg.t60)
    bank = design_filterbank(room.geometry, cfg.filter_count, dsp.rfft_freqs())
    base = 1000 * cfg.seed
    train_set = simulate_set(cfg, cfg.train_scenarios, ("easy", "hard"), base + 1, room)
    easy = simulate_set(cfg, cfg.eval_scenarios, ("easy",), base + 2, room)
    hard = simulate_set(cfg, cfg.eval_scenarios, ("hard",), base + 3, room)
    t1 = time.perf_counter()
    log(f"simulated {len(train_set)} + {len(easy)} + {len(hard)} scenarios in {t1 - t0:.0f} s")

    model = AsoboModel.init(hidden=cfg.hidden, tcn_config=cfg.tcn, rng=cfg.seed)
    items = [TrainingItem(s.samples, s.labels) for s in train_set]

    def progress(step, loss):
        if (step + 1) % 50 == 0:
            log(f"step {step + 1}/{cfg.steps} loss {loss:.4f} ({time.perf_counter() - t1:.0f} s)")

    losses = train(model, items, bank, cfg.steps, cfg.batch_size, cfg.segment_seconds, cfg.lr,
                   rng=cfg.seed + 1, on_step=progress)
    t2 = time.perf_counter()
    tau = cfg.tau if cfg.tau is not None else 2.0 / cfg.filter_count
    res_easy = evaluate(model, bank, easy, tau, cfg.num_sources, "easy")
    res_hard = evaluate(model, bank, hard, tau, cfg.num_sources, "hard")
    pos, both = random_selection_f1(cfg.random_scenarios, cfg.filter_count, cfg.num_sources, cfg.seed + 2)
    t3 = time.perf_counter()
    result = StudyResult(cfg, res_easy, res_hard, both, pos.f1, losses,
                         {"simulate": t1 - t0, "train": t2 - t1, "evaluate": t3 - t2, "total": t3 - t0})
    for line in result.lines():
        log(line)
    return result
