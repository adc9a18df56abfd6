"""Training loops, post selection, class balancing, metrics, and synthetic data.

Everything here is deterministic given a master seed: every random decision
draws from its own named stream derived with `derive_seed`, so repeated runs
produce identical logs, identical checkpoints, and identical corpora.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    DIAGNOSED,
    Post,
    RiskLabel,
    ThreadInstance,
    UserRecord,
    Vocabulary,
    tokenize,
    write_labels,
    write_posts,
    write_threads,
)
from .models import DepressionModel, RiskModel, instance_matrices
from .nn import AdamState, ParamNodes, adam_step, backward, scale

RISK_CLASS_NAMES = ("green", "amber", "red", "crisis")
DETECTION_CLASS_NAMES = ("control", "diagnosed")


def derive_seed(master: int, name: str) -> int:
    """Stable 64-bit seed for the named stream of a master seed."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# Post selection

SELECTION_STRATEGIES = ("earliest", "latest", "random")


@dataclass(frozen=True)
class SelectionConfig:
    """Which of a user's posts feed the model, and how much of each."""

    strategy: str = "random"
    n_post: int = 1500
    n_term: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in SELECTION_STRATEGIES:
            raise ValueError(f"unknown selection strategy {self.strategy!r}")
        if self.n_post < 1 or self.n_term < 1:
            raise ValueError("n_post and n_term must be positive")


def tokenize_users(users: Iterable[UserRecord],
                   vocab: Vocabulary) -> list[UserRecord]:
    """Users with every post's text mapped to vocabulary token ids."""
    out = []
    for u in users:
        posts = tuple(p.with_tokens(tokenize(p.text, vocab)) for p in u.posts)
        out.append(UserRecord(u.user_id, posts, u.label, u.diagnosis_post_id))
    return out


def select_posts(user: UserRecord, cfg: SelectionConfig) -> list[tuple[int, ...]]:
    """Up to n_post token sequences in time order, each cut to n_term tokens.

    The random strategy draws a per-user stream from the config seed, so the
    selection is a pure function of (user, cfg).
    """
    posts = user.posts
    if cfg.strategy == "earliest":
        chosen = posts[:cfg.n_post]
    elif cfg.strategy == "latest":
        chosen = posts[-cfg.n_post:]
    elif len(posts) <= cfg.n_post:
        chosen = posts
    else:
        rng = np.random.default_rng(derive_seed(cfg.seed, f"select:{user.user_id}"))
        keep = np.sort(rng.choice(len(posts), size=cfg.n_post, replace=False))
        chosen = tuple(posts[i] for i in keep)
    return [tuple(p.tokens[:cfg.n_term]) for p in chosen]


# ---------------------------------------------------------------------------
# Class balancing

BALANCE_MODES = ("weighted", "sampled")


@dataclass(frozen=True)
class BalanceConfig:
    mode: str

    def __post_init__(self):
        if self.mode not in BALANCE_MODES:
            raise ValueError(f"unknown balance mode {self.mode!r}")


def class_weights(labels: Sequence[int], n_classes: int) -> list[float]:
    """Per-class loss weights N/(t*N_c); every class must be populated."""
    counts = [0] * n_classes
    for y in labels:
        counts[y] += 1
    if any(c == 0 for c in counts):
        missing = [i for i, c in enumerate(counts) if c == 0]
        raise ValueError(f"classes {missing} have no instances")
    total = len(labels)
    return [total / (n_classes * c) for c in counts]


def balance(instances: Sequence[tuple[Any, int]], cfg: BalanceConfig,
            n_classes: int,
            rng: np.random.Generator | None = None) -> list[tuple[Any, int, float]]:
    """One epoch's training set as (item, label, weight) triples.

    Weighted mode keeps every instance and attaches its class weight; sampled
    mode draws the minimum class size from each class without replacement and
    shuffles, with unit weights.
    """
    labels = [y for _, y in instances]
    if cfg.mode == "weighted":
        weights = class_weights(labels, n_classes)
        return [(x, y, weights[y]) for x, y in instances]
    if rng is None:
        raise ValueError("sampled balancing draws per epoch and needs an rng")
    by_class: list[list[int]] = [[] for _ in range(n_classes)]
    for i, y in enumerate(labels):
        by_class[y].append(i)
    if any(not idx for idx in by_class):
        missing = [i for i, idx in enumerate(by_class) if not idx]
        raise ValueError(f"classes {missing} have no instances")
    take = min(len(idx) for idx in by_class)
    picked: list[int] = []
    for idx in by_class:
        picked.extend(int(i) for i in rng.choice(idx, size=take, replace=False))
    order = rng.permutation(len(picked))
    return [(instances[picked[i]][0], instances[picked[i]][1], 1.0) for i in order]


# ---------------------------------------------------------------------------
# Metrics

def confusion_matrix(gold: Sequence[int], pred: Sequence[int],
                     n_classes: int) -> list[list[int]]:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    matrix = [[0] * n_classes for _ in range(n_classes)]
    for g, p in zip(gold, pred):
        matrix[g][p] += 1
    return matrix


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision/recall/F1 with zero denominators defined as 0.

    F1 uses the single-division form 2tp/(2tp+fp+fn) so simple fixtures come
    out exact in floating point.
    """
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return precision, recall, f1


def _per_class_prf(matrix: list[list[int]]) -> list[dict[str, float]]:
    n = len(matrix)
    scores = []
    for c in range(n):
        tp = matrix[c][c]
        fp = sum(matrix[g][c] for g in range(n)) - tp
        fn = sum(matrix[c]) - tp
        precision, recall, f1 = _prf(tp, fp, fn)
        scores.append({"precision": precision, "recall": recall, "f1": f1})
    return scores


def binary_metrics(gold: Sequence[int], pred: Sequence[int],
                   positive: int = 1) -> tuple[float, float, float]:
    """Precision, recall, F1 of the positive class; 0/0 counts as 0."""
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    tp = sum(1 for g, p in zip(gold, pred) if g == positive and p == positive)
    fp = sum(1 for g, p in zip(gold, pred) if g != positive and p == positive)
    fn = sum(1 for g, p in zip(gold, pred) if g == positive and p != positive)
    return _prf(tp, fp, fn)


@dataclass
class EvalReport:
    """Confusion matrix, per-class scores, and grouped summaries."""

    n_classes: int
    n_instances: int
    confusion: list[list[int]]
    per_class: list[dict[str, float]]
    accuracy: float
    groupings: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_instances": self.n_instances,
            "confusion": self.confusion,
            "per_class": self.per_class,
            "accuracy": self.accuracy,
            "groupings": self.groupings,
        }

    def to_text(self, class_names: Sequence[str] | None = None) -> str:
        names = list(class_names or
                     (RISK_CLASS_NAMES if self.n_classes == 4 else
                      DETECTION_CLASS_NAMES if self.n_classes == 2 else
                      [f"class{i}" for i in range(self.n_classes)]))
        width = max(9, max(len(n) for n in names) + 1)
        lines = []
        if self.groupings:
            lines.append("group summary")
            lines.append(f"{'non-green':>10} | {'flagged':^14} | "
                         f"{'urgent':^14} | {'all':^14}")
            lines.append(f"{'F1':>10} | {'F1':>6} {'acc':>6}  | "
                         f"{'F1':>6} {'acc':>6}  | {'F1':>6} {'acc':>6}")
            g = self.groupings
            lines.append(
                f"{g['non_green']['f1']:>10.2f} | "
                f"{g['flagged']['f1']:>6.2f} {g['flagged']['accuracy']:>6.2f}  | "
                f"{g['urgent']['f1']:>6.2f} {g['urgent']['accuracy']:>6.2f}  | "
                f"{g['all']['f1']:>6.2f} {g['all']['accuracy']:>6.2f}")
            lines.append("")
        lines.append(f"accuracy: {self.accuracy:.4f} over {self.n_instances} instances")
        lines.append("")
        header = " " * width + "".join(f"{n:>{width}}" for n in names)
        lines.append("confusion (rows gold, cols predicted)")
        lines.append(header)
        for name, row in zip(names, self.confusion):
            lines.append(f"{name:>{width}}" + "".join(f"{v:>{width}}" for v in row))
        lines.append("")
        lines.append(f"{'class':>{width}}{'precision':>10}{'recall':>10}{'F1':>10}")
        for name, sc in zip(names, self.per_class):
            lines.append(f"{name:>{width}}{sc['precision']:>10.4f}"
                         f"{sc['recall']:>10.4f}{sc['f1']:>10.4f}")
        return "\n".join(lines) + "\n"


def _collapse_stats(gold: Sequence[int], pred: Sequence[int],
                    to_positive) -> dict[str, float]:
    """Binary collapse scores: macro-F1 over both meta-classes plus extras."""
    g2 = [int(to_positive(y)) for y in gold]
    p2 = [int(to_positive(y)) for y in pred]
    matrix = confusion_matrix(g2, p2, 2)
    scores = _per_class_prf(matrix)
    correct = matrix[0][0] + matrix[1][1]
    return {
        "f1": (scores[0]["f1"] + scores[1]["f1"]) / 2,
        "positive_f1": scores[1]["f1"],
        "accuracy": correct / len(g2) if g2 else 0.0,
    }


def triage_report(gold: Sequence[int], pred: Sequence[int]) -> EvalReport:
    """Severity evaluation: per-class scores plus the standard groupings.

    non_green averages F1 over the three elevated classes (its accuracy is
    the 4-way accuracy restricted to gold non-green instances); flagged
    collapses green vs rest and urgent collapses {green,amber} vs
    {red,crisis}, both scored as macro-F1 over the two meta-classes (the
    positive meta-class F1 is included separately); all averages F1 over the
    four classes.
    """
    gold = [int(y) for y in gold]
    pred = [int(y) for y in pred]
    matrix = confusion_matrix(gold, pred, 4)
    per_class = _per_class_prf(matrix)
    n = len(gold)
    accuracy = sum(matrix[c][c] for c in range(4)) / n if n else 0.0

    elevated = [(g, p) for g, p in zip(gold, pred) if g != 0]
    non_green_acc = (sum(1 for g, p in elevated if g == p) / len(elevated)
                     if elevated else 0.0)
    groupings = {
        "non_green": {
            "f1": sum(per_class[c]["f1"] for c in (1, 2, 3)) / 3,
            "accuracy": non_green_acc,
        },
        "flagged": _collapse_stats(gold, pred, lambda y: y != 0),
        "urgent": _collapse_stats(gold, pred, lambda y: y >= 2),
        "all": {
            "f1": sum(sc["f1"] for sc in per_class) / 4,
            "accuracy": accuracy,
        },
    }
    return EvalReport(4, n, matrix, per_class, accuracy, groupings)


def detection_report(gold: Sequence[int], pred: Sequence[int]) -> EvalReport:
    """2-class evaluation for the user-level detection task."""
    gold = [int(y) for y in gold]
    pred = [int(y) for y in pred]
    matrix = confusion_matrix(gold, pred, 2)
    per_class = _per_class_prf(matrix)
    n = len(gold)
    accuracy = (matrix[0][0] + matrix[1][1]) / n if n else 0.0
    return EvalReport(2, n, matrix, per_class, accuracy)


def mcnemar(pred_a: Sequence[int], pred_b: Sequence[int],
            gold: Sequence[int]) -> tuple[float, float]:
    """Continuity-corrected McNemar statistic and its chi-square(1) p-value.

    b counts instances only model a got right, c those only model b got
    right. With b+c = 0 the models are indistinguishable and p is 1 by
    convention. The tail probability uses the closed form
    erfc(sqrt(x/2)) for one degree of freedom.
    """
    if not (len(pred_a) == len(pred_b) == len(gold)):
        raise ValueError("prediction and gold sequences must have equal length")
    b = sum(1 for a, y, g in zip(pred_a, pred_b, gold) if a == g and y != g)
    c = sum(1 for a, y, g in zip(pred_a, pred_b, gold) if a != g and y == g)
    if b + c == 0:
        return 0.0, 1.0
    statistic = (abs(b - c) - 1.0) ** 2 / (b + c)
    return statistic, math.erfc(math.sqrt(statistic / 2.0))


# ---------------------------------------------------------------------------
# Training loops

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    balance: str | None = None  # None -> the model config's default mode


@dataclass
class TrainResult:
    best_epoch: int
    best_metric: float
    log: list[dict]


def write_epoch_log(path: str | Path, log: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _epoch_order(labels: Sequence[int], mode: str, n_classes: int,
                 rng: np.random.Generator,
                 weights: Sequence[float] | None) -> list[tuple[int, float]]:
    """Instance indices (with loss weights) for one epoch, shuffled."""
    if mode == "weighted":
        order = rng.permutation(len(labels))
        return [(int(i), weights[labels[i]]) for i in order]
    triples = balance(list(zip(range(len(labels)), labels)),
                      BalanceConfig("sampled"), n_classes, rng)
    return [(idx, w) for idx, _, w in triples]


def train_depression(model: DepressionModel, train_users: Sequence[UserRecord],
                     val_users: Sequence[UserRecord],
                     selection: SelectionConfig,
                     cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam training of the detection model, one user per step.

    Validation runs after every epoch; the weights kept are those of the
    epoch with the best positive-class F1. Any non-finite loss or gradient
    aborts with a diagnostic.
    """
    train_users = sorted(train_users, key=lambda u: u.user_id)
    val_users = sorted(val_users, key=lambda u: u.user_id)
    examples = [(select_posts(u, selection), int(u.label == DIAGNOSED))
                for u in train_users]
    val_examples = [(select_posts(u, selection), int(u.label == DIAGNOSED))
                    for u in val_users]
    labels = [y for _, y in examples]
    mode = cfg.balance or model.config.balance
    weights = class_weights(labels, 2) if mode == "weighted" else None

    state = AdamState(model.params, lr=cfg.lr)
    best = model.params.copy()
    best_epoch, best_metric = -1, -1.0
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"epoch:{epoch}"))
        order = _epoch_order(labels, mode, 2, rng, weights)
        total = 0.0
        for idx, weight in order:
            posts, label = examples[idx]
            nodes = ParamNodes(model.params)
            drop_rng = np.random.default_rng(derive_seed(cfg.seed, f"dropout:{step}"))
            try:
                loss = model.loss(posts, label, nodes, train=True, rng=drop_rng)
                if weight != 1.0:
                    loss = scale(loss, weight)
                total += float(loss.value)
                backward(loss)
                adam_step(model.params, nodes.grads(), state)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch} step {step}: {exc}") from None
            step += 1
        log.append({"epoch": epoch, "split": "train",
                    "loss": total / max(1, len(order)), "instances": len(order)})
        gold = [y for _, y in val_examples]
        pred = [int(np.argmax(model.classify_user(posts)))
                for posts, _ in val_examples]
        precision, recall, f1 = binary_metrics(gold, pred)
        log.append({"epoch": epoch, "split": "validation", "precision": precision,
                    "recall": recall, "f1": f1})
        if f1 > best_metric:
            best_epoch, best_metric = epoch, f1
            best = model.params.copy()
    model.params.load_values(best)
    return TrainResult(best_epoch, best_metric, log)


def thread_matrices(instances: Sequence[ThreadInstance], encoder,
                    max_sentences: int = 20) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Encode thread instances once into (target, context, label) triples."""
    return [(*instance_matrices(inst, encoder, max_sentences), int(inst.label))
            for inst in instances]


def train_risk(model: RiskModel,
               train_data: Sequence[tuple[np.ndarray, np.ndarray, int]],
               val_data: Sequence[tuple[np.ndarray, np.ndarray, int]],
               cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam training of the risk model on encoded (target, context, label) data.

    Keeps the epoch weights with the best validation non-green F1. Metric
    variants draw their negative class uniformly from the incorrect labels,
    from a seeded stream.
    """
    labels = [y for _, _, y in train_data]
    n_classes = model.config.n_classes
    mode = cfg.balance or model.config.balance
    weights = class_weights(labels, n_classes) if mode == "weighted" else None
    needs_negative = model.config.variant in ("class_metric", "class_metric_ordinal")

    state = AdamState(model.params, lr=cfg.lr)
    best = model.params.copy()
    best_epoch, best_metric = -1, -1.0
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"epoch:{epoch}"))
        neg_rng = np.random.default_rng(derive_seed(cfg.seed, f"negatives:{epoch}"))
        order = _epoch_order(labels, mode, n_classes, rng, weights)
        total = 0.0
        for idx, weight in order:
            target, context, label = train_data[idx]
            negative = None
            if needs_negative:
                others = [c for c in range(n_classes) if c != label]
                negative = int(neg_rng.choice(others))
            nodes = ParamNodes(model.params)
            drop_rng = np.random.default_rng(derive_seed(cfg.seed, f"dropout:{step}"))
            try:
                loss = model.loss(target, context, label, nodes, train=True,
                                  rng=drop_rng, negative=negative)
                if weight != 1.0:
                    loss = scale(loss, weight)
                total += float(loss.value)
                backward(loss)
                adam_step(model.params, nodes.grads(), state)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch} step {step}: {exc}") from None
            step += 1
        log.append({"epoch": epoch, "split": "train",
                    "loss": total / max(1, len(order)), "instances": len(order)})
        gold = [y for _, _, y in val_data]
        pred = [int(model.classify(t, c)) for t, c, _ in val_data]
        report = triage_report(gold, pred)
        metric = report.groupings["non_green"]["f1"]
        log.append({"epoch": epoch, "split": "validation",
                    "non_green_f1": metric, "accuracy": report.accuracy})
        if metric > best_metric:
            best_epoch, best_metric = epoch, metric
            best = model.params.copy()
    model.params.load_values(best)
    return TrainResult(best_epoch, best_metric, log)


def stratified_split(labels: Sequence[int], frac: float,
                     seed: int) -> tuple[list[int], list[int]]:
    """Indices (kept, held out) with `frac` of each class held out, >= 1 each."""
    if not 0.0 < frac < 1.0:
        raise ValueError("held-out fraction must be in (0, 1)")
    rng = np.random.default_rng(derive_seed(seed, "stratified-split"))
    held: list[int] = []
    for c in sorted(set(labels)):
        idx = [i for i, y in enumerate(labels) if y == c]
        perm = rng.permutation(len(idx))
        n_held = max(1, int(frac * len(idx)))
        held.extend(idx[j] for j in perm[:n_held])
    held_set = set(held)
    kept = [i for i in range(len(labels)) if i not in held_set]
    return kept, sorted(held)


# ---------------------------------------------------------------------------
# Synthetic corpora

@dataclass(frozen=True)
class SynthDetectionSpec:
    """Synthetic user corpus: positives plant signal phrases at a fixed rate."""

    n_positive: int = 200
    n_controls_per: int = 3
    posts_per_user: int = 50
    signal_rate: float = 0.05
    vocab_size: int = 2000
    tokens_per_post: tuple[int, int] = (8, 18)
    n_communities: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.signal_rate <= 1.0:
            raise ValueError("signal_rate must be in [0, 1]")
        if self.n_positive < 1 or self.n_controls_per < 1:
            raise ValueError("need at least one positive and one control per positive")


SIGNAL_PHRASES = (("sig0", "sig1", "sig2"), ("sig3", "sig4", "sig5"))


def _synth_posts(uid: str, community_count: int, spec: SynthDetectionSpec,
                 rng: np.random.Generator, with_signal: bool) -> list[Post]:
    lo, hi = spec.tokens_per_post
    posts = []
    for i in range(spec.posts_per_user):
        words = [f"w{int(w):04d}" for w in
                 rng.integers(0, spec.vocab_size, size=int(rng.integers(lo, hi + 1)))]
        if with_signal and float(rng.random()) < spec.signal_rate:
            phrase = SIGNAL_PHRASES[int(rng.integers(0, len(SIGNAL_PHRASES)))]
            at = int(rng.integers(0, len(words) + 1))
            words[at:at] = list(phrase)
        community = f"forum{int(rng.integers(0, community_count))}"
        posts.append(Post(f"{uid}-p{i:03d}", uid, community, i, " ".join(words)))
    return posts


def synth_detection_corpus(spec: SynthDetectionSpec,
                           out_dir: str | Path) -> dict[str, Path]:
    """Write train/validation/test posts+labels files; returns their paths.

    Positive users plant a 3-token signal phrase in each post with
    probability `signal_rate`; controls never do. Splits are stratified
    60/20/20. Positive users carry their first post as the nominal diagnosis
    post so records stay well-formed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(spec.seed, "detection-corpus"))
    users: list[UserRecord] = []
    for i in range(spec.n_positive):
        uid = f"pos{i:04d}"
        posts = _synth_posts(uid, spec.n_communities, spec, rng, with_signal=True)
        users.append(UserRecord(uid, tuple(posts), DIAGNOSED, posts[0].post_id))
    for i in range(spec.n_positive * spec.n_controls_per):
        uid = f"ctl{i:04d}"
        posts = _synth_posts(uid, spec.n_communities, spec, rng, with_signal=False)
        users.append(UserRecord(uid, tuple(posts)))

    labels = [int(u.label == DIAGNOSED) for u in users]
    rest, test_idx = stratified_split(labels, 0.2, derive_seed(spec.seed, "test"))
    rest_labels = [labels[i] for i in rest]
    train_rel, val_rel = stratified_split(rest_labels, 0.25, derive_seed(spec.seed, "val"))
    assignment = {
        "train": [rest[i] for i in train_rel],
        "validation": [rest[i] for i in val_rel],
        "test": test_idx,
    }
    paths: dict[str, Path] = {}
    for split, indices in assignment.items():
        records = sorted((users[i] for i in indices), key=lambda u: u.user_id)
        posts_path = out_dir / f"{split}.posts.ndjson"
        labels_path = out_dir / f"{split}.labels.ndjson"
        write_posts(posts_path, (p for u in records for p in u.posts))
        write_labels(labels_path, records)
        paths[f"{split}.posts"] = posts_path
        paths[f"{split}.labels"] = labels_path
    return paths


@dataclass(frozen=True)
class SynthRiskSpec:
    """Synthetic ordinal thread corpus: severity = planted-phrase intensity.

    Each severity level above green has its own pool of `n_signal_words`
    signal words; a label-y sentence carries signal_per_level * y words drawn
    from level y's pool. Sentences occasionally drift one level (controlled
    by `drift`) and then carry the drifted level's vocabulary, so severity is
    learnable from sentence vectors while adjacent classes stay the most
    confusable.
    """

    n_train: int = 800
    n_test: int = 200
    sentences_per_target: tuple[int, int] = (3, 6)
    context_posts: tuple[int, int] = (0, 3)
    words_per_sentence: tuple[int, int] = (6, 10)
    vocab_size: int = 500
    n_signal_words: int = 4
    signal_per_level: int = 3
    drift: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drift <= 1.0:
            raise ValueError("drift must be in [0, 1]")
        if self.signal_per_level < 1:
            raise ValueError("signal_per_level must be >= 1")


def _synth_sentence(level: int, spec: SynthRiskSpec,
                    rng: np.random.Generator) -> str:
    lo, hi = spec.words_per_sentence
    words = [f"v{int(w):03d}" for w in
             rng.integers(0, spec.vocab_size, size=int(rng.integers(lo, hi + 1)))]
    if float(rng.random()) < spec.drift:
        level = min(3, max(0, level + (1 if rng.random() < 0.5 else -1)))
    for _ in range(spec.signal_per_level * level):
        word = f"risk{level}x{int(rng.integers(0, spec.n_signal_words))}"
        words.insert(int(rng.integers(0, len(words) + 1)), word)
    return " ".join(words) + "."


def _synth_thread(index: int, label: int, spec: SynthRiskSpec,
                  rng: np.random.Generator) -> ThreadInstance:
    lo_s, hi_s = spec.sentences_per_target
    n_sent = max(1, int(rng.integers(lo_s, hi_s + 1)))
    target_text = " ".join(_synth_sentence(label, spec, rng)
                           for _ in range(n_sent))
    target = Post(f"t{index:05d}", f"u{index % 50:03d}", "forum", 1000, target_text)
    lo, hi = spec.context_posts
    n_ctx = int(rng.integers(lo, hi + 1))
    context = tuple(
        Post(f"t{index:05d}-c{j}", f"u{(index + j) % 50:03d}", "forum", j,
             " ".join(_synth_sentence(0, spec, rng)
                      for _ in range(max(1, int(rng.integers(1, 3))))))
        for j in range(n_ctx))
    return ThreadInstance(target, context, RiskLabel(label))


def synth_risk_corpus(spec: SynthRiskSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write train/test thread files with labels cycling through the 4 levels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(spec.seed, "risk-corpus"))
    paths: dict[str, Path] = {}
    counts = {"train": spec.n_train, "test": spec.n_test}
    index = 0
    for split, count in counts.items():
        instances = []
        for _ in range(count):
            instances.append(_synth_thread(index, index % 4, spec, rng))
            index += 1
        path = out_dir / f"{split}.threads.ndjson"
        write_threads(path, instances)
        paths[split] = path
    return paths
