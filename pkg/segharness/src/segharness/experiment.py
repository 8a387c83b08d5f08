"""The two-domain transfer-learning experiment at toy scale.

Subjects are synthesized with the fetalsim CLI (phantom -> simulate ->
reconstruct), once per domain preset; this package consumes only the files it
writes (NIfTI volumes + manifests). Per experiment seed the subject pool is
split into source-training / fine-tuning / held-out test sets, the five
configurations are trained, and every model is evaluated on the target-like
test reconstructions against the phantom ground truth:

* GoldStandard  - trained on target-like reconstructions, ground-truth labels
* Baseline      - trained on all non-test source-like reconstructions
* Init          - trained on the source-like training subset only
* DA_FaBiAN_*   - Baseline/Init weights fine-tuned on target-like
                  reconstructions with *propagated+fused* labels (the
                  annotations come for free from the simulation geometry)

Outputs: per-seed and combined per-subject DSC CSVs in the evaluation schema
(subject, cohort, configuration, tissue, dsc), saved weights and histories.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import niftiio
from .infer import infer
from .patches import PatchSample, extract_all_views
from .train import TrainConfig, save_weights, train

log = logging.getLogger("segharness")

TISSUES = ("csf", "cortical_gm", "wm", "ventricles", "cerebellum", "deep_gm", "brain_stem")
DOMAINS = ("source-like", "target-like")
COMPARISONS = [["DA_FaBiAN_Baseline", "Baseline"], ["DA_FaBiAN_Init", "Baseline"]]


@dataclass(frozen=True)
class SuiteConfig:
    n_subjects: int = 15
    n_train: int = 8
    n_finetune: int = 4
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    data_seed: int = 1000
    motion: str = "little"
    recon_max_iters: int = 25
    train_stride: int = 16
    infer_stride: int = 32
    slice_step: int = 4  # patch extraction uses every k-th slice (CPU budget)
    epochs: int = 2
    da_epochs: int = 2
    base_lr: float = 5e-3
    lr_decay: float = 0.85
    batch_size: int = 16
    data_dir: str = "suite-data"
    out_dir: str = "suite-results"

    def __post_init__(self):
        if self.n_train + self.n_finetune >= self.n_subjects:
            raise ValueError("need at least one held-out test subject")

    @property
    def n_test(self) -> int:
        return self.n_subjects - self.n_train - self.n_finetune


def _fetalsim(*args: str) -> None:
    cmd = [sys.executable, "-m", "fetalsim.cli", *args]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"fetalsim failed: {' '.join(args)}\n{proc.stderr}")


def generate_subject(cfg: SuiteConfig, index: int) -> Path:
    """Create one subject (phantom + both domain reconstructions) through the
    simulation CLI; cached by manifest presence."""
    subj_dir = Path(cfg.data_dir) / f"sub{index:02d}"
    seed = cfg.data_seed + index
    pathological = index % 2 == 1
    phantom_cfg = subj_dir / "phantom_config.json"
    if not (subj_dir / "phantom_manifest.json").exists():
        subj_dir.mkdir(parents=True, exist_ok=True)
        phantom_cfg.write_text(
            json.dumps({"schema": 1, "seed": seed, "phantom": {"pathological": pathological}})
        )
        _fetalsim("phantom", "--config", str(phantom_cfg), "-o", str(subj_dir))
    labels_path = subj_dir / "phantom" / "labels.nii"

    for domain in DOMAINS:
        dom_dir = subj_dir / domain
        if (dom_dir / "reconstruct_manifest.json").exists():
            continue
        _fetalsim(
            "simulate", "--seed", str(seed), "-o", str(dom_dir),
            "--preset", domain, "--motion", cfg.motion, "--labels", str(labels_path),
        )
        recon_cfg = dom_dir / "recon_config.json"
        recon_cfg.write_text(
            json.dumps(
                {
                    "schema": 1,
                    "solver": {
                        "max_iters": cfg.recon_max_iters,
                        "grid_like": str(labels_path),
                        "stacks": str(dom_dir / "stacks"),
                    },
                }
            )
        )
        _fetalsim("reconstruct", "--config", str(recon_cfg), "-o", str(dom_dir))
    return subj_dir


@dataclass
class Subject:
    index: int
    cohort: str
    gt_labels: np.ndarray
    images: dict  # domain -> float32 volume
    fused_labels: dict  # domain -> uint8 volume

    @property
    def name(self) -> str:
        return f"sub{self.index:02d}"


def load_subject(cfg: SuiteConfig, index: int) -> Subject:
    subj_dir = generate_subject(cfg, index)
    gt, _ = niftiio.read_volume(subj_dir / "phantom" / "labels.nii")
    images, fused = {}, {}
    for domain in DOMAINS:
        images[domain], _ = niftiio.read_volume(subj_dir / domain / "recon" / "sr.nii")
        fused[domain], _ = niftiio.read_volume(subj_dir / domain / "recon" / "fused_labels.nii")
    cohort = "pathological" if index % 2 == 1 else "neurotypical"
    return Subject(index, cohort, gt, images, fused)


class PatchBank:
    """Per-(subject, domain, label kind) patch cache shared across seeds."""

    def __init__(self, cfg: SuiteConfig):
        self.cfg = cfg
        self._cache: dict[tuple[int, str, str], list[PatchSample]] = {}

    def get(self, subj: "Subject", domain: str, labels_attr: str) -> list[PatchSample]:
        key = (subj.index, domain, labels_attr)
        if key not in self._cache:
            labels = subj.gt_labels if labels_attr == "gt" else subj.fused_labels[domain]
            samples = extract_all_views(
                subj.images[domain], labels, stride=self.cfg.train_stride, subject=subj.name
            )
            self._cache[key] = [
                s for s in samples if s.slice_index % self.cfg.slice_step == 0
            ]
        return self._cache[key]


def _patches(cfg: SuiteConfig, subjects, domain: str, labels_attr: str,
             bank: "PatchBank | None" = None) -> list[PatchSample]:
    bank = bank or PatchBank(cfg)
    out = []
    for subj in subjects:
        out.extend(bank.get(subj, domain, labels_attr))
    return out


def dice_score(pred: np.ndarray, truth: np.ndarray, label: int) -> float:
    p = pred == label
    t = truth == label
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / denom


def run_seed(cfg: SuiteConfig, subjects: list[Subject], seed: int, out_dir: Path,
             bank: "PatchBank | None" = None):
    """Train all five configurations for one experiment seed and return the
    DSC rows of the held-out target-like test subjects."""
    bank = bank or PatchBank(cfg)
    order = np.random.default_rng(seed).permutation(cfg.n_subjects)
    train_ids = [subjects[i] for i in order[: cfg.n_train]]
    ft_ids = [subjects[i] for i in order[cfg.n_train : cfg.n_train + cfg.n_finetune]]
    test_ids = [subjects[i] for i in order[cfg.n_train + cfg.n_finetune :]]
    log.info(
        "seed %d split: train %s / finetune %s / test %s",
        seed,
        [s.index for s in train_ids], [s.index for s in ft_ids], [s.index for s in test_ids],
    )

    base_kwargs = dict(
        epochs=cfg.epochs, base_lr=cfg.base_lr, lr_decay=cfg.lr_decay,
        batch_size=cfg.batch_size, seed=seed,
    )
    sets = {
        "Baseline": _patches(cfg, train_ids + ft_ids, "source-like", "gt", bank),
        "Init": _patches(cfg, train_ids, "source-like", "gt", bank),
        "GoldStandard": _patches(cfg, train_ids, "target-like", "gt", bank),
    }
    ft_patches = _patches(cfg, ft_ids, "target-like", "fused", bank)

    weights = {}
    seed_dir = out_dir / f"seed{seed}"
    for name in ("Baseline", "Init", "GoldStandard"):
        config = TrainConfig(name=name, **base_kwargs)
        model, history = train(config, sets[name])
        weights[name] = seed_dir / f"{name}.pt"
        save_weights(weights[name], model, config, history)
        del model
    models = {}
    for name, parent in (("DA_FaBiAN_Baseline", "Baseline"), ("DA_FaBiAN_Init", "Init")):
        config = TrainConfig(
            name=name, epochs=cfg.da_epochs, base_lr=cfg.base_lr, lr_decay=cfg.lr_decay,
            batch_size=cfg.batch_size, seed=seed, init_weights=str(weights[parent]),
        )
        model, history = train(config, ft_patches)
        weights[name] = seed_dir / f"{name}.pt"
        save_weights(weights[name], model, config, history)
        del model

    from .train import load_weights

    rows = []
    for name, path in weights.items():
        model = load_weights(path)
        for subj in test_ids:
            pred = infer(subj.images["target-like"], model, stride=cfg.infer_stride)
            for label, tissue in enumerate(TISSUES, start=1):
                rows.append(
                    {
                        "subject": f"seed{seed}_{subj.name}",
                        "cohort": subj.cohort,
                        "configuration": name,
                        "tissue": tissue,
                        "dsc": dice_score(pred, subj.gt_labels, label),
                    }
                )
    return rows


def write_dsc_csv(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["subject,cohort,configuration,tissue,dsc"]
    for r in rows:
        lines.append(
            f"{r['subject']},{r['cohort']},{r['configuration']},{r['tissue']},{r['dsc']:.6f}"
        )
    path.write_text("\n".join(lines) + "\n")


def overall_by_config(rows) -> dict[str, float]:
    """Mean over subjects of the per-subject mean over the 7 tissue DSCs."""
    per_subject: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        per_subject.setdefault((r["configuration"], r["subject"]), []).append(r["dsc"])
    out: dict[str, list[float]] = {}
    for (config, _), values in per_subject.items():
        out.setdefault(config, []).append(float(np.mean(values)))
    return {config: float(np.mean(v)) for config, v in out.items()}


def run_experiment(cfg: SuiteConfig) -> dict:
    """Full suite: data generation (cached), all seeds, combined DSC CSV, and
    a summary JSON with per-seed overall scores."""
    subjects = [load_subject(cfg, i) for i in range(cfg.n_subjects)]
    bank = PatchBank(cfg)
    out_dir = Path(cfg.out_dir)
    all_rows = []
    summary = {"seeds": {}, "comparisons": COMPARISONS}
    for seed in cfg.seeds:
        rows = run_seed(cfg, subjects, seed, out_dir, bank)
        write_dsc_csv(rows, out_dir / f"dsc_seed{seed}.csv")
        overall = overall_by_config(rows)
        summary["seeds"][str(seed)] = overall
        log.info("seed %d overall: %s", seed, {k: round(v, 4) for k, v in overall.items()})
        all_rows.extend(rows)
    csv_path = out_dir / "dsc_all_seeds.csv"
    write_dsc_csv(all_rows, csv_path)
    summary["dsc_csv"] = str(csv_path)
    wins = sum(
        1
        for seed in cfg.seeds
        if summary["seeds"][str(seed)]["DA_FaBiAN_Baseline"]
        > summary["seeds"][str(seed)]["Baseline"]
    )
    summary["da_baseline_wins"] = wins
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
