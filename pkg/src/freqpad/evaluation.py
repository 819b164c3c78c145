"""PAD metrics and protocol runners.

Decision rule, fixed artifact-wide: score >= threshold => predicted bona
fide. Rates follow the ISO-style definitions: APCER per attack instrument
(PAI), worst-case APCER as the max over PAIs, BPCER over bona fides,
ACER = (APCER_wc + BPCER)/2, HTER = (pooled APCER + BPCER)/2, and AUC
with ties counted one half (Mann-Whitney convention).
"""

from __future__ import annotations

import bisect
import csv
import decimal
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import LABEL_ATTACK, LABEL_BONA_FIDE
from .errors import ValidationError


@dataclass
class ScoreRecord:
    video_id: str
    score: float
    label: str
    pai: str = "none"
    dataset_id: str = "default"

    @property
    def is_bona_fide(self) -> bool:
        return self.label == LABEL_BONA_FIDE


def write_scores(records, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "score", "label", "pai", "dataset_id"])
        for r in records:
            writer.writerow([r.video_id, repr(r.score), r.label, r.pai, r.dataset_id])


def read_scores(path: str) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(ScoreRecord(
                video_id=row["video_id"], score=float(row["score"]),
                label=row["label"], pai=row["pai"], dataset_id=row["dataset_id"]))
    return records


def _split_classes(records):
    bona = [r for r in records if r.is_bona_fide]
    attacks = [r for r in records if not r.is_bona_fide]
    return bona, attacks


def apcer(records, threshold: float) -> float:
    """Fraction of one PAI's attacks accepted as bona fide."""
    records = list(records)
    if not records:
        raise ValidationError("apcer needs at least one attack record")
    pais = {r.pai for r in records}
    if len(pais) != 1 or any(r.is_bona_fide for r in records):
        raise ValidationError(f"apcer expects attacks of a single PAI, got {pais}")
    return sum(r.score >= threshold for r in records) / len(records)


def apcer_per_pai(records, threshold: float) -> dict:
    attacks = [r for r in records if not r.is_bona_fide]
    if not attacks:
        raise ValidationError("no attack records")
    out = {}
    for pai in sorted({r.pai for r in attacks}):
        out[pai] = apcer([r for r in attacks if r.pai == pai], threshold)
    return out


def apcer_wc(records, threshold: float) -> float:
    """Worst case over PAIs."""
    return max(apcer_per_pai(records, threshold).values())


def apcer_pooled(records, threshold: float) -> float:
    attacks = [r for r in records if not r.is_bona_fide]
    if not attacks:
        raise ValidationError("no attack records")
    return sum(r.score >= threshold for r in attacks) / len(attacks)


def bpcer(records, threshold: float) -> float:
    """Fraction of bona fides rejected as attacks."""
    bona = [r for r in records if r.is_bona_fide]
    if not bona:
        raise ValidationError("no bona fide records")
    return sum(r.score < threshold for r in bona) / len(bona)


def acer(apcer_wc_value: float, bpcer_value: float) -> float:
    return (apcer_wc_value + bpcer_value) / 2.0


def hter(apcer_value: float, bpcer_value: float) -> float:
    return (apcer_value + bpcer_value) / 2.0


def auc(records) -> float:
    """ROC area by pair counting; ties between classes count one half."""
    bona, attacks = _split_classes(records)
    if not bona or not attacks:
        raise ValidationError("auc needs both classes")
    attack_scores = sorted(r.score for r in attacks)
    wins = ties = 0
    for r in bona:
        lo = bisect.bisect_left(attack_scores, r.score)
        hi = bisect.bisect_right(attack_scores, r.score)
        wins += lo
        ties += hi - lo
    return (wins + 0.5 * ties) / (len(bona) * len(attacks))


def eer_threshold(records) -> float:
    """Threshold minimizing |pooled APCER - BPCER| over candidate
    thresholds (midpoints of adjacent distinct scores plus the two
    boundaries); ties broken toward lower BPCER, then lower threshold."""
    bona, attacks = _split_classes(records)
    if not bona or not attacks:
        raise ValidationError("eer_threshold needs both classes")
    distinct = sorted({r.score for r in records})
    candidates = [distinct[0] - 0.5]
    candidates += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    candidates += [distinct[-1] + 0.5]
    best = None
    for t in candidates:
        a = apcer_pooled(records, t)
        b = bpcer(records, t)
        key = (abs(a - b), b, t)
        if best is None or key < best[0]:
            best = (key, t)
    return best[1]


def format_rate(value: float) -> str:
    """Render a rate as a percentage at one decimal, rounding halves up
    (so 0.0195 prints as "2.0", the convention of the reported tables)."""
    percent = decimal.Decimal(repr(100.0 * value))
    return str(percent.quantize(decimal.Decimal("0.1"),
                                rounding=decimal.ROUND_HALF_UP))


@dataclass
class MetricReport:
    apcer_per_pai: dict
    apcer_wc: float
    apcer_pooled: float
    bpcer: float
    acer: float
    hter: float
    auc: float
    threshold: float
    n_bona_fide: int
    n_attacks_per_pai: dict
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "threshold": self.threshold,
            "apcer_per_pai": self.apcer_per_pai,
            "apcer_wc": self.apcer_wc,
            "apcer_pooled": self.apcer_pooled,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "hter": self.hter,
            "auc": self.auc,
            "n_bona_fide": self.n_bona_fide,
            "n_attacks_per_pai": self.n_attacks_per_pai,
        }

    def format_table(self) -> str:
        """Rates as percentages at one decimal; raw values live in to_dict."""
        lines = [f"== {self.name or 'report'} (threshold {self.threshold:.6g}) =="]
        for pai, v in self.apcer_per_pai.items():
            lines.append(f"  APCER[{pai}]: {format_rate(v)}%")
        lines.append(f"  APCER_wc:  {format_rate(self.apcer_wc)}%")
        lines.append(f"  BPCER:     {format_rate(self.bpcer)}%")
        lines.append(f"  ACER:      {format_rate(self.acer)}%")
        lines.append(f"  HTER:      {format_rate(self.hter)}%")
        lines.append(f"  AUC:       {format_rate(self.auc)}%")
        return "\n".join(lines)


def compute_report(records, threshold: float, name: str = "") -> MetricReport:
    records = list(records)
    per_pai = apcer_per_pai(records, threshold)
    wc = max(per_pai.values())
    pooled = apcer_pooled(records, threshold)
    b = bpcer(records, threshold)
    attacks = [r for r in records if not r.is_bona_fide]
    return MetricReport(
        apcer_per_pai=per_pai,
        apcer_wc=wc,
        apcer_pooled=pooled,
        bpcer=b,
        acer=acer(wc, b),
        hter=hter(pooled, b),
        auc=auc(records),
        threshold=threshold,
        n_bona_fide=sum(r.is_bona_fide for r in records),
        n_attacks_per_pai={p: sum(r.pai == p for r in attacks) for p in per_pai},
        name=name,
    )


@dataclass
class FoldSpec:
    name: str
    train_datasets: list = field(default_factory=list)
    test_dataset: str = ""
    dataset: str = ""  # intra-dataset folds filter on a single dataset


@dataclass
class ProtocolConfig:
    name: str
    kind: str  # "intra" | "cross_dataset"
    folds: list

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        kind = d.get("kind")
        if kind not in ("intra", "cross_dataset"):
            raise ValidationError(f"protocol kind must be intra or cross_dataset, got {kind!r}")
        folds = [FoldSpec(
            name=f["name"],
            train_datasets=list(f.get("train_datasets", [])),
            test_dataset=f.get("test_dataset", ""),
            dataset=f.get("dataset", ""),
        ) for f in d.get("folds", [])]
        if not folds:
            raise ValidationError("protocol defines no folds")
        return cls(name=d.get("name", "protocol"), kind=kind, folds=folds)


def fold_mean_std(values) -> tuple:
    """Population convention (divisor n)."""
    values = list(values)
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def run_protocol(protocol: ProtocolConfig, manifest, score_fn) -> dict:
    """Evaluate one scoring function under a protocol definition.

    score_fn maps a list of SampleRecords to per-video ScoreRecords.
    Intra folds fix the threshold on the dev split; cross-dataset folds
    validate train/test disjointness and take the threshold from the
    evaluation set itself (the convention of the compared literature).
    """
    reports = []
    for fold in protocol.folds:
        if protocol.kind == "cross_dataset":
            if not fold.test_dataset or not fold.train_datasets:
                raise ValidationError(f"fold {fold.name}: cross-dataset folds need "
                                      "train_datasets and test_dataset")
            if fold.test_dataset in fold.train_datasets:
                raise ValidationError(
                    f"fold {fold.name}: test dataset {fold.test_dataset!r} "
                    "appears in the training datasets")
            test_records = [r for r in manifest.records if r.dataset_id == fold.test_dataset]
            if not test_records:
                raise ValidationError(f"fold {fold.name}: no records for {fold.test_dataset!r}")
            scores = score_fn(test_records)
            threshold = eer_threshold(scores)
        else:
            records = [r for r in manifest.records
                       if not fold.dataset or r.dataset_id == fold.dataset]
            dev = [r for r in records if r.split == "dev"]
            test_records = [r for r in records if r.split == "test"]
            if not dev or not test_records:
                raise ValidationError(f"fold {fold.name}: missing dev or test split")
            threshold = eer_threshold(score_fn(dev))
            scores = score_fn(test_records)
        reports.append(compute_report(scores, threshold, name=fold.name))

    result = {"protocol": protocol.name, "kind": protocol.kind,
              "folds": [r.to_dict() for r in reports]}
    if len(reports) > 1:
        agg = {}
        for key in ("apcer_wc", "bpcer", "acer", "hter", "auc"):
            mean, std = fold_mean_std([getattr(r, key) for r in reports])
            agg[key] = {"mean": mean, "std": std}
        result["aggregate"] = agg
    return result


def report_to_json(result: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2)


def reduce_embeddings(embeddings: np.ndarray, n_components: int = 128):
    """Centered PCA to n_components, then PCA to 2-D as a plotting
    fallback. Returns (reduced, coords_2d)."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need at least 2 embedding vectors")
    k = min(n_components, x.shape[1], x.shape[0] - 1)
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    reduced = xc @ vt[:k].T
    k2 = min(2, reduced.shape[1])
    rc = reduced - reduced.mean(axis=0)
    _, _, vt2 = np.linalg.svd(rc, full_matrices=False)
    coords = rc @ vt2[:k2].T
    return reduced, coords
