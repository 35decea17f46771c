"""
Data models for the GRID label-noise-robust learning project.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.tensor import Tensor
from src.utils.exceptions import InvalidDataError, TrainingError


@dataclass
class NoiseSpec:
    """
    Synthetic label noise injection settings.

    Attributes:
        slnir: Fraction of label assignments to corrupt, in [0, 0.6].
        seed: Seed of the injection random stream.
    """

    slnir: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.slnir <= 0.6 + 1e-9:
            raise InvalidDataError(f"slnir must lie in [0, 0.6], got {self.slnir}")


@dataclass
class LabelFlip:
    """One injected corruption: class ``removed`` of image ``index`` became ``added``."""

    index: int
    removed: int
    added: int


@dataclass
class LabeledDataset:
    """
    Features with noisy and pristine annotations.

    Attributes:
        scenario: "scene" or "pixel".
        features: (N, F) for scene, (N, H, W, F) for pixel.
        labels: Annotations seen by training (possibly noisy).
        clean_labels: Pristine annotations; never mutated.
        noise_flags: (N,) booleans, True where labels differ from clean_labels.
        n_classes: Number of classes C.
        seed: Generation seed.
        slnir: Injected noise ratio (0 when clean).
        flips: Every corruption applied, in application order.
    """

    scenario: str
    features: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    noise_flags: np.ndarray
    n_classes: int
    seed: int
    slnir: float = 0.0
    flips: List[LabelFlip] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.features)
        if not (len(self.labels) == len(self.clean_labels) == len(self.noise_flags) == n):
            raise InvalidDataError(
                f"Dataset arrays disagree on sample count: features {n}, labels {len(self.labels)}, "
                f"clean_labels {len(self.clean_labels)}, noise_flags {len(self.noise_flags)}"
            )

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """Copy restricted to ``indices``; flips are re-indexed to the subset."""
        indices = np.asarray(indices, dtype=np.int64)
        position = {int(old): new for new, old in enumerate(indices)}
        flips = [LabelFlip(position[f.index], f.removed, f.added) for f in self.flips if f.index in position]
        return type(self)(
            scenario=self.scenario,
            features=self.features[indices].copy(),
            labels=self.labels[indices].copy(),
            clean_labels=self.clean_labels[indices].copy(),
            noise_flags=self.noise_flags[indices].copy(),
            n_classes=self.n_classes,
            seed=self.seed,
            slnir=self.slnir,
            flips=flips,
        )


@dataclass
class MultiLabelDataset(LabeledDataset):
    """Scene-level multi-label dataset; labels are (N, C) multi-hot int8 arrays."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.labels.ndim != 2 or self.labels.shape[1] != self.n_classes:
            raise InvalidDataError(f"Multi-label array must be (N, {self.n_classes}), got {self.labels.shape}")
        if len(self.labels) and (self.labels.sum(axis=1) < 1).any():
            raise InvalidDataError("Every sample must carry at least one positive label")


@dataclass
class PixelLabelDataset(LabeledDataset):
    """Pixel-level dataset; labels are (N, H, W) class-index arrays."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.labels.ndim != 3:
            raise InvalidDataError(f"Pixel label array must be (N, H, W), got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidDataError(f"Pixel classes must lie in [0, {self.n_classes})")


@dataclass
class DatasetSplits:
    """Train (noisy), validation and test (clean) subsets of one generated dataset."""

    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset


@dataclass
class ForwardOutputs:
    """
    Every quantity produced by one forward pass over a batch.

    Attributes:
        descriptor: Backbone output f, (B, D), non-negative.
        disc_prediction: Discriminative head output.
        mu: Posterior means, (B, J).
        log_var: Posterior log-variances, (B, J).
        latent: Reparameterized sample z, (B, J).
        reconstruction: Decoded descriptor, (B, D).
        gen_prediction: Generative head output, same shape as disc_prediction.
        eps: The standard-normal draws used for z (data, not a parameter).
    """

    descriptor: Tensor
    disc_prediction: Tensor
    mu: Tensor
    log_var: Tensor
    latent: Tensor
    reconstruction: Tensor
    gen_prediction: Tensor
    eps: np.ndarray


@dataclass
class BatchLossReport:
    """
    Per-sample loss terms for one mini-batch, each of shape (B,).

    Attributes:
        disc_task_loss: L(y^d, y).
        gen_task_loss: L(y^g, y).
        recon_loss: MSE(f_hat, f).
        kl_term: KL divergence of the posterior from the standard normal prior.
    """

    disc_task_loss: Tensor
    gen_task_loss: Tensor
    recon_loss: Tensor
    kl_term: Tensor

    def __post_init__(self) -> None:
        shapes = {t.shape for t in (self.disc_task_loss, self.gen_task_loss, self.recon_loss, self.kl_term)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise InvalidDataError(f"Loss report terms must share one (B,) shape, got {sorted(shapes)}")

    @property
    def batch_size(self) -> int:
        return self.disc_task_loss.shape[0]

    def as_arrays(self) -> Dict[str, np.ndarray]:
        """Value copies of the four terms, detached from the tape."""
        return {
            "disc_task_loss": self.disc_task_loss.numpy(),
            "gen_task_loss": self.gen_task_loss.numpy(),
            "recon_loss": self.recon_loss.numpy(),
            "kl_term": self.kl_term.numpy(),
        }


@dataclass
class LambdaSpec:
    """
    Per-batch count of samples routed to generative reasoning.

    Attributes:
        percent: k, the share of the batch in percent.
        batch_size: |B| of the batch the count applies to.
    """

    percent: float
    batch_size: int

    def __post_init__(self) -> None:
        if not 0 <= self.percent <= 100:
            raise TrainingError(f"lambda percent must lie in [0, 100], got {self.percent}")
        if self.batch_size < 0:
            raise TrainingError(f"batch size must be non-negative, got {self.batch_size}")

    @property
    def count(self) -> int:
        """k * |B| / 100 rounded to the nearest integer (halves round up)."""
        return int(math.floor(self.percent * self.batch_size / 100.0 + 0.5))


@dataclass
class Partition:
    """
    Split of a mini-batch into detected-noisy W and detected-clean C.

    Attributes:
        noisy_indices: Sorted batch positions in W.
        clean_indices: Sorted batch positions in C.
        lam: |W|.
    """

    noisy_indices: np.ndarray
    clean_indices: np.ndarray
    lam: int

    def __post_init__(self) -> None:
        self.noisy_indices = np.sort(np.asarray(self.noisy_indices, dtype=np.int64))
        self.clean_indices = np.sort(np.asarray(self.clean_indices, dtype=np.int64))
        if len(self.noisy_indices) != self.lam:
            raise TrainingError(f"|W| = {len(self.noisy_indices)} does not equal lambda = {self.lam}")
        everything = np.concatenate([self.noisy_indices, self.clean_indices])
        if not np.array_equal(np.sort(everything), np.arange(len(everything))):
            raise TrainingError("W and C must be disjoint and cover the whole batch")

    @property
    def batch_size(self) -> int:
        return len(self.noisy_indices) + len(self.clean_indices)

    def noisy_mask(self) -> np.ndarray:
        mask = np.zeros(self.batch_size, dtype=bool)
        mask[self.noisy_indices] = True
        return mask


@dataclass
class StepResult:
    """Outcome of one training step."""

    report: BatchLossReport
    partition: Partition
    gradients: Dict[str, List[np.ndarray]] = field(default_factory=dict)


@dataclass
class RetrievalResult:
    """
    Ranking of the archive for one query.

    Attributes:
        query_id: Index of the query.
        archive_ids: Archive indices by ascending distance.
        distances: Distances in ranking order (non-decreasing).
        grades: Relevance grade of each ranked item.
    """

    query_id: int
    archive_ids: np.ndarray
    distances: np.ndarray
    grades: np.ndarray

    def __post_init__(self) -> None:
        if len(self.distances) > 1 and (np.diff(self.distances) < 0).any():
            raise InvalidDataError("Retrieval distances must be non-decreasing along the ranking")


@dataclass
class DetectionTrace:
    """Per-epoch detection precision for each selector (None where undefined)."""

    precision: Dict[str, List[Optional[float]]] = field(default_factory=dict)

    def append(self, selector: str, value: Optional[float]) -> None:
        if value is not None and not 0.0 <= value <= 1.0:
            raise InvalidDataError(f"Detection precision must lie in [0, 1], got {value}")
        self.precision.setdefault(selector, []).append(value)


@dataclass
class ParameterCount:
    """
    Trainable parameter counts.

    Attributes:
        per_group: Count per parameter group name.
        disc_only: |theta| + |gamma|.
        gen_only: |theta| + |beta|.
        hybrid: |theta| + |gamma| + |beta|.
        backbone_share: Percentage of the hybrid total held by the backbone.
    """

    per_group: Dict[str, int]
    disc_only: int
    gen_only: int
    hybrid: int
    backbone_share: float

    @property
    def vae(self) -> int:
        return self.per_group["beta_e"] + self.per_group["beta_r"] + self.per_group["beta_t"]


@dataclass
class MetricsRecord:
    """
    Everything logged for one epoch.

    Attributes:
        epoch: 1-based epoch number.
        val_ndcg: Mean validation NDCG@k.
        mean_disc_loss: Discriminative head loss averaged over all samples.
        mean_gen_loss: Generative head loss averaged over all samples.
        mean_hybrid_loss: Disc loss on C plus gen loss on W, averaged over all samples.
        mean_recon_loss: Reconstruction term averaged over all samples.
        mean_kl: KL term averaged over all samples.
        mean_noisy: Mean |W| per batch.
        mean_clean: Mean |C| per batch.
        precision: Detection precision per selector (None when no batch had |W| >= 1).
        recall: Detection recall per selector.
        balanced_accuracy: Detection balanced accuracy per selector.
    """

    epoch: int
    val_ndcg: float
    mean_disc_loss: float
    mean_gen_loss: float
    mean_hybrid_loss: float
    mean_recon_loss: float
    mean_kl: float
    mean_noisy: float
    mean_clean: float
    precision: Dict[str, Optional[float]] = field(default_factory=dict)
    recall: Dict[str, Optional[float]] = field(default_factory=dict)
    balanced_accuracy: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_rows(self) -> List[Tuple[int, str, float]]:
        """Long-format (epoch, metric, value) rows; undefined metrics are left out."""
        rows = [
            (self.epoch, "val_ndcg", self.val_ndcg),
            (self.epoch, "loss_disc", self.mean_disc_loss),
            (self.epoch, "loss_gen", self.mean_gen_loss),
            (self.epoch, "loss_hybrid", self.mean_hybrid_loss),
            (self.epoch, "loss_recon", self.mean_recon_loss),
            (self.epoch, "loss_kl", self.mean_kl),
            (self.epoch, "partition_noisy", self.mean_noisy),
            (self.epoch, "partition_clean", self.mean_clean),
        ]
        for prefix, values in (("precision", self.precision), ("recall", self.recall),
                               ("balanced_accuracy", self.balanced_accuracy)):
            for selector in sorted(values):
                if values[selector] is not None:
                    rows.append((self.epoch, f"{prefix}_{selector}", values[selector]))
        return rows
