"""
Evaluation: content-based retrieval with the χ²-distance and NDCG, noisy-sample
detection accuracy against baseline selectors, and per-epoch loss-curve
aggregation.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from src.core.grid_model import GridModel
from src.models.models import BatchLossReport, LabeledDataset, Partition, RetrievalResult
from src.utils.config import CHI2_EPS
from src.utils.exceptions import EvaluationError

logger = logging.getLogger(__name__)

QUERY_CHUNK = 64


def _check_non_negative(name: str, values: np.ndarray) -> None:
    if values.size and values.min() < 0:
        raise EvaluationError(f"χ²-distance needs non-negative inputs; {name} has minimum {values.min()}")


def chi2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """
    ½ Σ (a_i − b_i)² / (a_i + b_i + ε).

    Raises:
        EvaluationError: If the vectors differ in length or hold a negative entry.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvaluationError(f"χ²-distance needs equal shapes, got {a.shape} and {b.shape}")
    _check_non_negative("a", a)
    _check_non_negative("b", b)
    return float(0.5 * np.sum((a - b) ** 2 / (a + b + CHI2_EPS)))


def chi2_distance_matrix(queries: np.ndarray, archive: np.ndarray) -> np.ndarray:
    """(Q, A) matrix of χ²-distances between descriptor rows."""
    queries = np.asarray(queries, dtype=np.float64)
    archive = np.asarray(archive, dtype=np.float64)
    if queries.ndim != 2 or archive.ndim != 2 or queries.shape[1] != archive.shape[1]:
        raise EvaluationError(f"Descriptor matrices {queries.shape} and {archive.shape} are incompatible")
    _check_non_negative("queries", queries)
    _check_non_negative("archive", archive)
    out = np.empty((len(queries), len(archive)))
    for start in range(0, len(queries), QUERY_CHUNK):
        q = queries[start:start + QUERY_CHUNK, None, :]
        out[start:start + QUERY_CHUNK] = 0.5 * np.sum((q - archive[None]) ** 2 / (q + archive[None] + CHI2_EPS), axis=-1)
    return out


def dcg_at_k(grades: np.ndarray, k: int) -> float:
    """Σ_{r=1..k} (2^g_r − 1) / log2(r + 1)."""
    top = np.asarray(grades, dtype=np.float64)[:k]
    return float(np.sum((2.0 ** top - 1.0) / np.log2(np.arange(2, len(top) + 2))))


def ndcg_at_k(ranked_grades: np.ndarray, k: int, ideal_grades: Optional[np.ndarray] = None) -> float:
    """
    Normalized DCG of a ranking at depth ``k``.

    Args:
        ranked_grades: Relevance grades in ranking order.
        k: Depth (at least 1).
        ideal_grades: Grades the ideal ranking is built from; the ranked
            grades themselves when omitted.

    Returns:
        DCG@k over the ideal DCG@k, or 0 when no candidate is relevant.

    Raises:
        EvaluationError: For k < 1 or negative grades.
    """
    if k < 1:
        raise EvaluationError(f"NDCG depth must be at least 1, got {k}")
    ranked_grades = np.asarray(ranked_grades, dtype=np.float64)
    ideal_source = ranked_grades if ideal_grades is None else np.asarray(ideal_grades, dtype=np.float64)
    if (ranked_grades.size and ranked_grades.min() < 0) or (ideal_source.size and ideal_source.min() < 0):
        raise EvaluationError("Relevance grades must be non-negative")
    ideal = dcg_at_k(np.sort(ideal_source)[::-1], k)
    if ideal == 0:
        return 0.0
    return dcg_at_k(ranked_grades, k) / ideal


def class_presence(dataset: LabeledDataset, clean: bool = True) -> np.ndarray:
    """(N, C) 0/1 matrix of the classes each sample carries (unique classes for pixel grids)."""
    labels = dataset.clean_labels if clean else dataset.labels
    if dataset.scenario == "scene":
        return labels.astype(np.int64)
    flat = labels.reshape(len(labels), -1)
    presence = np.zeros((len(labels), dataset.n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(len(labels)), flat.shape[1])
    presence[rows, flat.ravel()] = 1
    return presence


def relevance_grades(query_set: LabeledDataset, archive_set: LabeledDataset) -> np.ndarray:
    """(Q, A) shared-class counts on clean labels."""
    return class_presence(query_set) @ class_presence(archive_set).T


def rank_archive(
    query_descriptors: np.ndarray, archive_descriptors: np.ndarray, grades: np.ndarray, exclude_self: bool = False
) -> List[RetrievalResult]:
    """
    Rank the archive for every query by ascending χ²-distance (ties by archive index).

    With ``exclude_self`` query q and archive item q are the same image and
    item q is left out of its own ranking.
    """
    distances = chi2_distance_matrix(query_descriptors, archive_descriptors)
    if exclude_self and distances.shape[0] != distances.shape[1]:
        raise EvaluationError("Self-match exclusion needs the query set to be the archive")
    results = []
    for q, row in enumerate(distances):
        order = np.argsort(row, kind="stable")
        if exclude_self:
            order = order[order != q]
        results.append(RetrievalResult(query_id=q, archive_ids=order, distances=row[order], grades=grades[q, order]))
    return results


def evaluate_retrieval(
    model: GridModel, query_set: LabeledDataset, archive_set: LabeledDataset, k: int = 20, exclude_self: bool = False
) -> float:
    """
    Mean NDCG@k of retrieving the archive for every query.

    Descriptors come from the backbone only; the VAE branch plays no part.
    Relevance is the number of shared clean classes. ``exclude_self`` treats
    the two sets as one and drops each query from its own ranking.

    Raises:
        EvaluationError: If either set is empty.
    """
    if len(query_set) == 0 or len(archive_set) == 0:
        raise EvaluationError(
            f"Retrieval needs non-empty query and archive sets, got {len(query_set)} and {len(archive_set)}"
        )
    results = rank_archive(model.describe(query_set.features), model.describe(archive_set.features),
                           relevance_grades(query_set, archive_set), exclude_self=exclude_self)
    scores = [ndcg_at_k(r.grades, k, ideal_grades=r.grades) for r in results]
    return float(np.mean(scores))


def detection_precision(partition: Partition, flags: np.ndarray) -> Optional[float]:
    """|W ∩ noisy| / |W|; None when W is empty."""
    if partition.lam == 0:
        return None
    return float(np.asarray(flags, dtype=bool)[partition.noisy_indices].mean())


def detection_recall(partition: Partition, flags: np.ndarray) -> Optional[float]:
    """|W ∩ noisy| / |noisy|; None when the batch holds no noisy sample."""
    flags = np.asarray(flags, dtype=bool)
    if not flags.any():
        return None
    return float(flags[partition.noisy_indices].sum() / flags.sum())


def detection_balanced_accuracy(partition: Partition, flags: np.ndarray) -> Optional[float]:
    """Mean of the true-positive and true-negative rates; None unless both classes occur."""
    tally = DetectionTally()
    tally.add(partition, flags)
    return tally.balanced_accuracy


@dataclass
class DetectionTally:
    """Confusion counts of one selector pooled over the batches of an epoch."""

    true_positive: int = 0
    false_positive: int = 0
    false_negative: int = 0
    true_negative: int = 0

    def add(self, partition: Partition, flags: np.ndarray) -> None:
        flags = np.asarray(flags, dtype=bool)
        selected = partition.noisy_mask()
        self.true_positive += int(np.sum(selected & flags))
        self.false_positive += int(np.sum(selected & ~flags))
        self.false_negative += int(np.sum(~selected & flags))
        self.true_negative += int(np.sum(~selected & ~flags))

    @property
    def precision(self) -> Optional[float]:
        selected = self.true_positive + self.false_positive
        return self.true_positive / selected if selected else None

    @property
    def recall(self) -> Optional[float]:
        noisy = self.true_positive + self.false_negative
        return self.true_positive / noisy if noisy else None

    @property
    def balanced_accuracy(self) -> Optional[float]:
        noisy = self.true_positive + self.false_negative
        clean = self.true_negative + self.false_positive
        if not noisy or not clean:
            return None
        return 0.5 * (self.true_positive / noisy + self.true_negative / clean)


def baseline_selectors(
    report: Union[BatchLossReport, np.ndarray], lam: int, seed: Union[int, np.random.Generator] = 0
) -> Dict[str, Partition]:
    """
    Partitions from the two reference selectors.

    * top_k_loss: the ``lam`` samples with the largest discriminative task loss;
    * random: ``lam`` samples drawn uniformly.

    Args:
        report: A loss report or the raw discriminative loss vector.
        lam: |W|.
        seed: Seed or generator of the random selector.
    """
    disc = report.disc_task_loss.numpy() if isinstance(report, BatchLossReport) else np.asarray(report, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    by_loss = np.argsort(-disc, kind="stable")
    drawn = rng.permutation(len(disc))
    return {
        "top_k_loss": Partition(noisy_indices=by_loss[:lam], clean_indices=by_loss[lam:], lam=lam),
        "random": Partition(noisy_indices=drawn[:lam], clean_indices=drawn[lam:], lam=lam),
    }


@dataclass
class EpochAccumulator:
    """
    Sums per-sample loss terms and partition sizes over the batches of an epoch.

    The hybrid curve adds the discriminative loss of C and the generative
    loss of W, whatever mode actually drove the updates.
    """

    n_samples: int = 0
    n_batches: int = 0
    disc: float = 0.0
    gen: float = 0.0
    hybrid: float = 0.0
    recon: float = 0.0
    kl: float = 0.0
    noisy: int = 0
    clean: int = 0
    tallies: Dict[str, DetectionTally] = field(default_factory=dict)

    def add(self, report: BatchLossReport, partition: Partition) -> None:
        values = report.as_arrays()
        self.n_samples += report.batch_size
        self.n_batches += 1
        self.disc += float(values["disc_task_loss"].sum())
        self.gen += float(values["gen_task_loss"].sum())
        self.hybrid += float(values["gen_task_loss"][partition.noisy_indices].sum()
                             + values["disc_task_loss"][partition.clean_indices].sum())
        self.recon += float(values["recon_loss"].sum())
        self.kl += float(values["kl_term"].sum())
        self.noisy += len(partition.noisy_indices)
        self.clean += len(partition.clean_indices)

    def add_detection(self, selector: str, partition: Partition, flags: np.ndarray) -> None:
        self.tallies.setdefault(selector, DetectionTally()).add(partition, flags)

    def mean(self, total: float) -> float:
        return total / self.n_samples if self.n_samples else float("nan")

    def per_batch(self, total: int) -> float:
        return total / self.n_batches if self.n_batches else float("nan")
