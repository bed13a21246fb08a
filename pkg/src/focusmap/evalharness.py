"""Multi-task evaluation model and the metrics used to compare supervision maps."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import rankdata

from .dataset import Dataset, pair_key
from .errors import ConfigError, InputError
from .imaging import resize_bilinear
from .trainer import load_map_set

SWEEP = tuple(round(0.1 * k, 1) for k in range(1, 10))


def auc(scores, labels) -> float:
    """Probability that a random fake outscores a random real (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class MapMetrics(NamedTuple):
    iou: float
    precision: float
    recall: float
    degenerate: bool = False


def map_metrics(values: np.ndarray, gt_mask: np.ndarray, threshold: float = 0.5) -> MapMetrics:
    """IoU, precision and recall of a thresholded map against a binary mask.

    The map is bilinearly resized to the mask size first. Empty denominators
    give 0 and set ``degenerate``.
    """
    gt = np.asarray(gt_mask).astype(bool)
    values = np.asarray(values, dtype=float)
    if values.shape != gt.shape:
        values = resize_bilinear(values, *gt.shape)
    pred = values >= threshold
    inter = float((pred & gt).sum())
    union = float((pred | gt).sum())
    n_pred, n_gt = float(pred.sum()), float(gt.sum())
    degenerate = union == 0 or n_pred == 0 or n_gt == 0
    return MapMetrics(
        iou=inter / union if union else 0.0,
        precision=inter / n_pred if n_pred else 0.0,
        recall=inter / n_gt if n_gt else 0.0,
        degenerate=degenerate,
    )


class EvalModel(nn.Module):
    """Small conv backbone with a classification head and a dense map head."""

    def __init__(self, out_size: int = 32, widths: tuple[int, ...] = (16, 32, 64, 64)):
        super().__init__()
        stages, c_in = [], 3
        for w in widths:
            stages.append(nn.Sequential(nn.Conv2d(c_in, w, 3, stride=2, padding=1), nn.BatchNorm2d(w), nn.GELU()))
            c_in = w
        self.stages = nn.ModuleList(stages)
        self.classifier = nn.Linear(widths[-1], 2)
        self.out_size = out_size
        self.dense_in = nn.Conv2d(widths[2], 32, 3, padding=1)
        self.dense_out = nn.Conv2d(32, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, H, W) -> class logits (B, 2), dense map in (0, 1) (B, S, S)."""
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        logits = self.classifier(x.mean(dim=(2, 3)))
        d = F.gelu(self.dense_in(feats[2]))
        d = F.interpolate(d, size=(self.out_size, self.out_size), mode="bilinear", align_corners=True)
        return logits, torch.sigmoid(self.dense_out(d)).squeeze(1)


@dataclass
class EvalConfig:
    out_size: int | None = None
    iterations: int = 600
    batch_size: int = 32
    learning_rate: float = 2e-3
    bce_weight: float = 0.1
    train_fraction: float = 0.8
    seed: int = 0
    map_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown eval config keys: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class EvalReport:
    supervision_source: str
    accuracy: float
    auc: float
    map_iou: float
    map_precision: float
    map_recall: float
    mean_dense_output: float
    n_train: int
    n_test: int
    seed: int
    config_hash: str
    threshold_sweep: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def split_ids(ids: list[str], train_fraction: float = 0.8) -> np.ndarray:
    """Boolean train mask; a real/fake pair always lands on the same side."""
    def bucket(sample_id: str) -> float:
        digest = hashlib.sha256(pair_key(sample_id).encode()).digest()
        return int.from_bytes(digest[:8], "little") / 2**64

    return np.array([bucket(i) < train_fraction for i in ids])


def _supervision_targets(maps: dict, data: Dataset, size: int) -> tuple[np.ndarray, str]:
    targets = np.empty((len(data), size, size))
    sources = set()
    for i, sample_id in enumerate(data.ids):
        if sample_id not in maps:
            raise InputError(f"no supervision map for sample {sample_id}")
        values, meta = maps[sample_id]
        targets[i] = resize_bilinear(values, size, size)
        sources.add(meta.get("generator", "unknown"))
    return targets, "+".join(sorted(sources))


def train_eval_model(maps: str | os.PathLike | dict, data: Dataset, config: EvalConfig | None = None,
                     source: str | None = None) -> EvalReport:
    """Train the evaluation model under ``L_ce + bce_weight * L_bce`` and score the held-out split."""
    config = config or EvalConfig()
    if not isinstance(maps, dict):
        maps = load_map_set(maps)
    size = config.out_size or data.image_size
    targets, found_source = _supervision_targets(maps, data, size)

    is_train = split_ids(data.ids, config.train_fraction)
    train_idx = np.flatnonzero(is_train)
    test_idx = np.flatnonzero(~is_train)
    if not len(train_idx) or not len(test_idx):
        raise InputError("train/test split left one side empty")

    torch.manual_seed(config.seed)
    model = EvalModel(out_size=size).float()
    images = torch.as_tensor(data.images, dtype=torch.float32).permute(0, 3, 1, 2).contiguous()
    labels = torch.as_tensor(data.labels)
    target_t = torch.as_tensor(targets, dtype=torch.float32)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = []
    model.train()
    for step in range(config.iterations):
        idx = torch.as_tensor(rng.choice(train_idx, config.batch_size))
        logits, dense = model(images[idx])
        ce = F.cross_entropy(logits, labels[idx])
        bce = F.binary_cross_entropy(dense, target_t[idx])
        loss = ce + config.bce_weight * bce
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))

    model.eval()
    with torch.no_grad():
        logits, dense = model(images[torch.as_tensor(test_idx)])
        probs = torch.softmax(logits, dim=-1)[:, 1].numpy()
        dense = dense.numpy()
    test_labels = data.labels[test_idx]
    accuracy = float(((probs >= 0.5).astype(int) == test_labels).mean())
    auc_value = auc(probs, test_labels) if len(set(test_labels.tolist())) == 2 else float("nan")

    sweep = {t: [] for t in SWEEP}
    for j, i in enumerate(test_idx):
        if data.labels[i] == 1 and data.masks[i] is not None:
            for t in SWEEP:
                sweep[t].append(map_metrics(dense[j], data.masks[i], t))

    def summary(ms: list[MapMetrics]) -> dict:
        if not ms:
            return {"iou": 0.0, "precision": 0.0, "recall": 0.0}
        return {k: float(np.mean([getattr(m, k) for m in ms])) for k in ("iou", "precision", "recall")}

    at_threshold = summary([map_metrics(dense[j], data.masks[i], config.map_threshold)
                            for j, i in enumerate(test_idx)
                            if data.labels[i] == 1 and data.masks[i] is not None])
    return EvalReport(
        supervision_source=source or found_source,
        accuracy=accuracy,
        auc=auc_value,
        map_iou=at_threshold["iou"],
        map_precision=at_threshold["precision"],
        map_recall=at_threshold["recall"],
        mean_dense_output=float(dense.mean()),
        n_train=len(train_idx),
        n_test=len(test_idx),
        seed=config.seed,
        config_hash=config.digest(),
        threshold_sweep={str(t): summary(v) for t, v in sweep.items()},
        loss_history=history,
    )


def format_table(reports: list[EvalReport]) -> str:
    """Plain-text comparison table, one row per report."""
    header = f"{'source':<14} {'seed':>4} {'acc':>7} {'auc':>7} {'iou':>7} {'prec':>7} {'recall':>7}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(f"{r.supervision_source:<14} {r.seed:>4} {r.accuracy:7.4f} {r.auc:7.4f} "
                    f"{r.map_iou:7.4f} {r.map_precision:7.4f} {r.map_recall:7.4f}")
    return "\n".join(rows)
