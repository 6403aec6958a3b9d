"""
Evaluation harness: repeated balanced trials, confusion matrices, timing
comparisons between full- and reduced-size models, and per-application
accuracy tables.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cnn import CnnModel, predict
from .dataset import EncodedDataset
from .encoder import EncoderConfig, downsample, encode_many
from .errors import ClassMismatch, EmptyTestSet, HpcError
from .pcap import LabeledDataset, RawPacket, SplitSpec
from .pipeline import HierarchicalClassifier
from .trainer import model_to_bytes


STAT_ROWS = ("Maximum", "Average", "Minimum")


def fingerprint(encoder: EncoderConfig | None = None, models: Sequence[CnnModel] = (), split: SplitSpec | None = None, **extra) -> str:
    """Short stable hash of everything that determines a report."""
    doc = {
        "encoder": encoder.as_dict() if encoder else None,
        "models": [{**m.architecture(), "crc": zlib.crc32(model_to_bytes(m))} for m in models],
        "split": {"train_fraction": split.train_fraction, "seed": split.seed} if split else None,
        **extra,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _fmt(v: float) -> str:
    return f"{v:.6f}"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    class_names: tuple[str, ...]
    counts: np.ndarray

    @classmethod
    def from_labels(cls, true: np.ndarray, predicted: np.ndarray, class_names: Sequence[str]) -> "ConfusionMatrix":
        n = len(class_names)
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (np.asarray(true), np.asarray(predicted)), 1)
        return cls(tuple(class_names), counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def per_class_accuracy(self) -> np.ndarray:
        rows = self.row_sums()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / rows, np.nan)

    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")


@dataclass
class ClassificationReport:
    class_names: tuple[str, ...]
    confusion: ConfusionMatrix  # mean counts over trials (may be fractional)
    per_class: np.ndarray  # (3, N): max / mean / min over trials
    overall: np.ndarray  # (3,): max / mean / min over trials
    trials: int
    per_class_sample: int
    seconds_total: float
    seconds_per_packet: float
    fingerprint: str
    settings: dict = field(default_factory=dict)
    per_trial: np.ndarray | None = None  # (trials, N) per-class accuracy of each trial

    @property
    def mean_accuracy(self) -> dict[str, float]:
        return dict(zip(self.class_names, self.per_class[1].tolist()))

    def to_csv(self) -> str:
        """Flat ``section,row,col,value`` triples; timing is left out so the output is reproducible."""
        lines = [f"# fingerprint {self.fingerprint}"]
        lines += [f"# {k} {v}" for k, v in sorted(self.settings.items())]
        lines.append("section,row,col,value")
        for r, row in enumerate(STAT_ROWS):
            for c, name in enumerate(self.class_names):
                lines.append(f"accuracy,{row},{name},{_fmt(self.per_class[r, c])}")
        for r, row in enumerate(STAT_ROWS):
            lines.append(f"overall,{row},all,{_fmt(self.overall[r])}")
        for i, true in enumerate(self.class_names):
            for j, pred in enumerate(self.class_names):
                lines.append(f"confusion,{true},{pred},{_fmt(self.confusion.counts[i, j])}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(12, *(len(n) + 2 for n in self.class_names))
        out = [f"fingerprint {self.fingerprint}", f"{self.trials} trials x {self.per_class_sample} packets per class", ""]
        out.append("".ljust(10) + "".join(n.rjust(width) for n in self.class_names) + "overall".rjust(width))
        for r, row in enumerate(STAT_ROWS):
            cells = "".join(f"{v:.4f}".rjust(width) for v in self.per_class[r])
            out.append(row.ljust(10) + cells + f"{self.overall[r]:.4f}".rjust(width))
        out += ["", "mean confusion (rows true, columns predicted)"]
        out.append("".ljust(width) + "".join(n.rjust(width) for n in self.class_names))
        for i, name in enumerate(self.class_names):
            out.append(name.ljust(width) + "".join(f"{v:.1f}".rjust(width) for v in self.confusion.counts[i]))
        out += ["", f"inference {self.seconds_total:.3f} s total, {self.seconds_per_packet * 1e6:.1f} us/packet"]
        return "\n".join(out) + "\n"


def _predict_names(classifier, test_set: EncodedDataset, level: str) -> tuple[list[str], tuple[str, ...], list[CnnModel]]:
    """Predicted label per test sample, the classifier's class list, and the models involved."""
    if isinstance(classifier, CnnModel):
        pred = predict(classifier, test_set.at_side(classifier.input_side))
        return [classifier.class_names[i] for i in pred], classifier.class_names, [classifier]
    if isinstance(classifier, HierarchicalClassifier):
        verdicts = classifier.classify_matrices(test_set.matrices)
        models = [classifier.service_model, *classifier.app_models.values()]
        if level == "service":
            return [v.service for v in verdicts], classifier.catalog.services, models
        names = [v.application for v in verdicts]
        if any(n is None for n in names):
            raise ClassMismatch("application-level evaluation needs an application model for every predicted service")
        apps = tuple(a for m in classifier.app_models.values() for a in m.class_names)
        return names, apps, models
    raise TypeError(f"cannot evaluate {type(classifier).__name__}")


def evaluate(
    classifier: CnnModel | HierarchicalClassifier,
    test_set: EncodedDataset,
    trials: int = 100,
    per_class: int | None = None,
    seed: int = 0,
    label_map: Mapping[str, str] | None = None,
    level: str = "application",
    split: SplitSpec | None = None,
) -> ClassificationReport:
    """
    Accuracy over ``trials`` balanced random samples of ``test_set``.

    Every trial draws ``per_class`` packets from each class without replacement
    (default: the smallest class count), using seed ``seed + trial``. Reports
    the max/mean/min accuracy per class and overall, and the mean confusion
    matrix. ``label_map`` translates dataset labels to classifier classes
    (e.g. application -> service); a hierarchical classifier with
    ``level="service"`` does this through its catalog.
    """
    if trials < 1:
        raise HpcError("trials must be positive")
    if len(test_set) == 0:
        raise EmptyTestSet("no test packets")
    if isinstance(classifier, HierarchicalClassifier) and level == "service" and label_map is None:
        label_map = classifier.catalog.app_to_service

    start = time.perf_counter()
    predicted, class_names, models = _predict_names(classifier, test_set, level)
    seconds = time.perf_counter() - start

    index = {n: i for i, n in enumerate(class_names)}
    try:
        true_names = [label_map[n] if label_map else n for n in test_set.class_names]
    except KeyError as e:
        raise ClassMismatch(f"no mapping for dataset class {e.args[0]!r}") from None
    if set(true_names) != set(class_names):
        raise ClassMismatch(f"test classes {sorted(set(true_names))} do not match classifier classes {list(class_names)}")
    true = np.array([index[true_names[l]] for l in test_set.labels])
    pred = np.array([index.get(n, -1) for n in predicted])
    if np.any(pred < 0):
        raise ClassMismatch("classifier produced a label outside its class list")

    members = [np.flatnonzero(true == c) for c in range(len(class_names))]
    smallest = min(len(m) for m in members)
    if smallest == 0:
        raise EmptyTestSet("a class has no test packets")
    sample = smallest if per_class is None else per_class
    if not 1 <= sample <= smallest:
        raise HpcError(f"per-class sample {sample} outside [1, {smallest}]")

    n = len(class_names)
    acc = np.zeros((trials, n))
    overall = np.zeros(trials)
    confusion = np.zeros((n, n))
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        chosen = np.concatenate([rng.choice(m, size=sample, replace=False) for m in members])
        cm = ConfusionMatrix.from_labels(true[chosen], pred[chosen], class_names)
        acc[t] = cm.per_class_accuracy()
        overall[t] = cm.overall_accuracy()
        confusion += cm.counts
    confusion /= trials

    settings = {"trials": trials, "per_class": sample, "seed": seed, "level": level}
    return ClassificationReport(
        class_names=tuple(class_names),
        confusion=ConfusionMatrix(tuple(class_names), confusion),
        per_class=np.stack([acc.max(axis=0), acc.mean(axis=0), acc.min(axis=0)]),
        overall=np.array([overall.max(), overall.mean(), overall.min()]),
        trials=trials,
        per_class_sample=sample,
        seconds_total=seconds,
        seconds_per_packet=seconds / len(test_set),
        fingerprint=fingerprint(test_set.encoder, models, split, **settings),
        settings=settings,
        per_trial=acc,
    )


@dataclass
class BenchReport:
    n_packets: int
    repetitions: int
    full_infer: list[float]
    reduced_infer: list[float]
    full_encode: list[float]
    reduced_encode: list[float]
    include_encode: bool = False
    fingerprint: str = ""

    @staticmethod
    def _mean(xs):
        return float(np.mean(xs))

    @property
    def full_seconds(self) -> float:
        return self._mean(self.full_infer) + (self._mean(self.full_encode) if self.include_encode else 0.0)

    @property
    def reduced_seconds(self) -> float:
        return self._mean(self.reduced_infer) + (self._mean(self.reduced_encode) if self.include_encode else 0.0)

    @property
    def saving(self) -> float:
        return 1.0 - self.reduced_seconds / self.full_seconds

    def to_csv(self) -> str:
        lines = [f"# fingerprint {self.fingerprint}", f"# packets {self.n_packets} repetitions {self.repetitions}", "section,row,col,value"]
        for name, xs in (("full", self.full_infer), ("reduced", self.reduced_infer)):
            for i, x in enumerate(xs):
                lines.append(f"inference,{name},{i},{_fmt(x)}")
        for name, xs in (("full", self.full_encode), ("reduced", self.reduced_encode)):
            for i, x in enumerate(xs):
                lines.append(f"encode,{name},{i},{_fmt(x)}")
        lines.append(f"summary,full,mean_seconds,{_fmt(self.full_seconds)}")
        lines.append(f"summary,reduced,mean_seconds,{_fmt(self.reduced_seconds)}")
        lines.append(f"summary,saving,ratio,{_fmt(self.saving)}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        mode = "encode + inference" if self.include_encode else "inference only"
        return (
            f"{self.n_packets} packets, {self.repetitions} repetitions ({mode})\n"
            f"full     {self.full_seconds:.3f} s  (encode {self._mean(self.full_encode):.3f} s)\n"
            f"reduced  {self.reduced_seconds:.3f} s  (encode {self._mean(self.reduced_encode):.3f} s)\n"
            f"saving   {self.saving * 100:.1f}%\n"
        )


def _encode_for(model: CnnModel, packets, config: EncoderConfig) -> np.ndarray:
    if isinstance(packets, EncodedDataset):
        return packets.at_side(model.input_side)
    full = encode_many(packets, config)
    return full if model.input_side == config.full_side else downsample(full, model.input_side)


def bench_timing(
    model_full: CnnModel,
    model_reduced: CnnModel,
    packets: Sequence[RawPacket] | LabeledDataset | EncodedDataset,
    config: EncoderConfig = EncoderConfig(),
    repetitions: int = 3,
    include_encode: bool = False,
) -> BenchReport:
    """
    Time classifying every packet with each model, ``repetitions`` times.

    Encoding is timed separately from inference. Raw packets are encoded from
    their bytes; an :class:`EncodedDataset` only pays for interpolating its
    cached full-size matrices.
    """
    if isinstance(packets, LabeledDataset):
        packets = packets.packets
    if len(packets) == 0:
        raise EmptyTestSet("nothing to time")
    if isinstance(packets, EncodedDataset):
        config = packets.encoder
    times = {"full_infer": [], "reduced_infer": [], "full_encode": [], "reduced_encode": []}
    for _ in range(repetitions):
        for name, model in (("full", model_full), ("reduced", model_reduced)):
            t0 = time.perf_counter()
            x = _encode_for(model, packets, config)
            t1 = time.perf_counter()
            predict(model, x)
            t2 = time.perf_counter()
            times[f"{name}_encode"].append(t1 - t0)
            times[f"{name}_infer"].append(t2 - t1)
    return BenchReport(
        n_packets=len(packets),
        repetitions=repetitions,
        include_encode=include_encode,
        fingerprint=fingerprint(config, [model_full, model_reduced], None, repetitions=repetitions, include_encode=include_encode),
        **times,
    )


@dataclass
class AppComparison:
    applications: list[str]
    full_accuracy: list[float]
    reduced_accuracy: list[float]
    counts: list[int]
    full_label: str
    reduced_label: str
    fingerprint: str = ""

    def wins(self) -> int:
        """Applications where the full-size model is at least as accurate."""
        return sum(f >= r for f, r in zip(self.full_accuracy, self.reduced_accuracy))

    def to_csv(self) -> str:
        lines = [f"# fingerprint {self.fingerprint}", "section,row,col,value"]
        for app, f, r, n in zip(self.applications, self.full_accuracy, self.reduced_accuracy, self.counts):
            lines.append(f"app_accuracy,{app},{self.full_label},{_fmt(f)}")
            lines.append(f"app_accuracy,{app},{self.reduced_label},{_fmt(r)}")
            lines.append(f"app_accuracy,{app},packets,{n}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(16, *(len(a) + 2 for a in self.applications)) if self.applications else 16
        out = ["application".ljust(width) + self.full_label.rjust(12) + self.reduced_label.rjust(12) + "packets".rjust(10)]
        for app, f, r, n in zip(self.applications, self.full_accuracy, self.reduced_accuracy, self.counts):
            out.append(app.ljust(width) + f"{f:.4f}".rjust(12) + f"{r:.4f}".rjust(12) + str(n).rjust(10))
        return "\n".join(out) + "\n"


def compare_app_level(full_model: CnnModel, reduced_model: CnnModel, test_set: EncodedDataset) -> AppComparison:
    """
    Per-application accuracy of a service-specific full-size model against a
    reduced-size model over all applications, on the packets of the
    applications the first model knows.
    """
    apps = full_model.class_names
    missing = set(apps) - set(reduced_model.class_names)
    if missing:
        raise ClassMismatch(f"reduced model lacks applications {sorted(missing)}")
    present = [a for a in apps if a in test_set.class_names and test_set.counts[a] > 0]
    for a in apps:
        if a not in present:
            warnings.warn(f"application {a!r} absent from the test set; row omitted")
    if not present:
        raise EmptyTestSet("no test packets for any application of the full-size model")

    subset = test_set.restrict(present)
    pred_full = np.asarray(full_model.class_names)[predict(full_model, subset.at_side(full_model.input_side))]
    pred_red = np.asarray(reduced_model.class_names)[predict(reduced_model, subset.at_side(reduced_model.input_side))]
    truth = np.asarray(present)[subset.labels]

    full_acc, red_acc, counts = [], [], []
    for app in present:
        rows = truth == app
        counts.append(int(rows.sum()))
        full_acc.append(float(np.mean(pred_full[rows] == app)))
        red_acc.append(float(np.mean(pred_red[rows] == app)))
    return AppComparison(
        applications=present,
        full_accuracy=full_acc,
        reduced_accuracy=red_acc,
        counts=counts,
        full_label=f"full_{full_model.num_classes}",
        reduced_label=f"reduced_{reduced_model.num_classes}",
        fingerprint=fingerprint(test_set.encoder, [full_model, reduced_model], None),
    )
