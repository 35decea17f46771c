"""
Synthetic datasets for both annotation scenarios and the label-noise
injection procedures applied to them.

Generation and injection are pure functions of their seeds. Clean labels are
never modified; each noisy dataset carries the ground-truth noise flags and
a log of every flip, for evaluation only.
"""

import json
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.models.models import LabelFlip, LabeledDataset, MultiLabelDataset, NoiseSpec, PixelLabelDataset
from src.utils.config import DATASET_FORMAT_VERSION, SCENARIOS
from src.utils.exceptions import DataLoadError, InvalidDataError, NoiseInjectionError
from src.utils.file_utils import atomic_write

logger = logging.getLogger(__name__)

# Arrays every dataset archive must contain
ARCHIVE_KEYS = ("header", "features", "labels", "clean_labels", "noise_flags", "flips")

# Generator shape parameters
FEATURE_NOISE = 0.3
BASE_LABEL_RATE = (0.1, 0.35)
PARTNER_RATE = 0.5
MAX_RECTANGLES = 3


def _check_sizes(**sizes: int) -> None:
    for name, value in sizes.items():
        if int(value) < 1:
            raise InvalidDataError(f"{name} must be positive, got {value}")


def flip_budget(slnir: float, total: int) -> int:
    """⌊slnir · total⌋, robust to binary representation of the ratio."""
    return int(math.floor(round(slnir * total, 9)))


def generate_multilabel(n_samples: int, n_classes: int, feature_dim: int, seed: int = 0) -> MultiLabelDataset:
    """
    Scene-level multi-label data.

    Every class owns a random prototype; a sample's features are the mean of
    its positive classes' prototypes plus Gaussian noise. Each class ``c`` has
    a partner class ``(c + 1) % C`` that tends to co-occur with it.

    Args:
        n_samples: Number of samples N.
        n_classes: Number of classes C (at least 2).
        feature_dim: Feature vector length.
        seed: Generation seed.

    Returns:
        A clean MultiLabelDataset (all noise flags False).

    Raises:
        InvalidDataError: For non-positive sizes or fewer than two classes.
    """
    _check_sizes(n_samples=n_samples, feature_dim=feature_dim)
    if n_classes < 2:
        raise InvalidDataError(f"n_classes must be at least 2, got {n_classes}")
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(n_classes, feature_dim))
    rates = rng.uniform(*BASE_LABEL_RATE, size=n_classes)

    labels = rng.random((n_samples, n_classes)) < rates
    partners = np.roll(labels, 1, axis=1) & (rng.random((n_samples, n_classes)) < PARTNER_RATE)
    labels = labels | partners
    empty = np.flatnonzero(~labels.any(axis=1))
    labels[empty, rng.integers(0, n_classes, size=len(empty))] = True
    labels = labels.astype(np.int8)

    counts = labels.sum(axis=1, keepdims=True).astype(np.float64)
    features = labels @ prototypes / counts + FEATURE_NOISE * rng.normal(size=(n_samples, feature_dim))
    logger.info("Generated %d scene samples with %d classes (mean %.2f labels each)",
                n_samples, n_classes, float(counts.mean()))
    return MultiLabelDataset(
        scenario="scene",
        features=features,
        labels=labels,
        clean_labels=labels.copy(),
        noise_flags=np.zeros(n_samples, dtype=bool),
        n_classes=n_classes,
        seed=seed,
    )


def _label_grid(rng: np.random.Generator, n_classes: int, height: int, width: int) -> np.ndarray:
    """A background class with up to MAX_RECTANGLES random rectangles of other classes on top."""
    grid = np.full((height, width), rng.integers(0, n_classes), dtype=np.int64)
    for _ in range(rng.integers(1, MAX_RECTANGLES + 1)):
        top, left = rng.integers(0, height), rng.integers(0, width)
        bottom, right = rng.integers(top + 1, height + 1), rng.integers(left + 1, width + 1)
        grid[top:bottom, left:right] = rng.integers(0, n_classes)
    return grid


def generate_pixel(
    n_samples: int, n_classes: int, height: int, width: int, seed: int = 0, channels: int = 8
) -> PixelLabelDataset:
    """
    Pixel-level data: label grids of contiguous class regions with per-class
    feature signatures plus noise.

    Each image is drawn from its own substream of ``seed``, so a subset of
    indices can be generated independently.

    Returns:
        A clean PixelLabelDataset with features (N, H, W, channels).

    Raises:
        InvalidDataError: For non-positive sizes or fewer than two classes.
    """
    _check_sizes(n_samples=n_samples, height=height, width=width, channels=channels)
    if n_classes < 2:
        raise InvalidDataError(f"n_classes must be at least 2, got {n_classes}")
    root = np.random.SeedSequence(seed)
    prototype_seq, *image_seqs = root.spawn(n_samples + 1)
    prototypes = np.random.default_rng(prototype_seq).normal(size=(n_classes, channels))

    labels = np.empty((n_samples, height, width), dtype=np.int64)
    features = np.empty((n_samples, height, width, channels))
    for i, seq in enumerate(image_seqs):
        rng = np.random.default_rng(seq)
        labels[i] = _label_grid(rng, n_classes, height, width)
        features[i] = prototypes[labels[i]] + FEATURE_NOISE * rng.normal(size=(height, width, channels))
    logger.info("Generated %d pixel samples of %dx%d with %d classes", n_samples, height, width, n_classes)
    return PixelLabelDataset(
        scenario="pixel",
        features=features,
        labels=labels,
        clean_labels=labels.copy(),
        noise_flags=np.zeros(n_samples, dtype=bool),
        n_classes=n_classes,
        seed=seed,
    )


def inject_scene_noise(dataset: MultiLabelDataset, spec: NoiseSpec) -> MultiLabelDataset:
    """
    Corrupt ⌊slnir · total⌋ (image, positive label) assignments.

    Assignments are selected uniformly without replacement over the whole
    dataset. Each selected label is removed from its image and replaced by a
    label absent from both the image's current and clean label vectors, so
    every flip yields one missing and one wrong label. An assignment whose
    image has no such label left is skipped and another one is drawn.

    Raises:
        NoiseInjectionError: If too few assignments can be flipped.
    """
    labels = dataset.labels.copy()
    assignments = np.argwhere(labels == 1)
    budget = flip_budget(spec.slnir, len(assignments))
    rng = np.random.default_rng(spec.seed)
    flips: List[LabelFlip] = []
    skipped = 0
    for pick in rng.permutation(len(assignments)):
        if len(flips) == budget:
            break
        image, removed = (int(v) for v in assignments[pick])
        candidates = np.flatnonzero((labels[image] == 0) & (dataset.clean_labels[image] == 0))
        if len(candidates) == 0:
            skipped += 1
            logger.warning("Image %d has no absent label to add; resampling", image)
            continue
        added = int(rng.choice(candidates))
        labels[image, removed] = 0
        labels[image, added] = 1
        flips.append(LabelFlip(image, removed, added))
    if len(flips) < budget:
        raise NoiseInjectionError(f"Only {len(flips)} of {budget} scene label flips were possible")
    flags = (labels != dataset.clean_labels).any(axis=1)
    logger.info("Injected %d scene label flips (slnir=%.2f, %d skipped); %d samples noisy",
                len(flips), spec.slnir, skipped, int(flags.sum()))
    return MultiLabelDataset(
        scenario=dataset.scenario,
        features=dataset.features,
        labels=labels,
        clean_labels=dataset.clean_labels,
        noise_flags=flags,
        n_classes=dataset.n_classes,
        seed=dataset.seed,
        slnir=spec.slnir,
        flips=list(dataset.flips) + flips,
    )


def inject_pixel_noise(dataset: PixelLabelDataset, spec: NoiseSpec) -> PixelLabelDataset:
    """
    Corrupt ⌊slnir · total⌋ (image, unique class) pairs.

    For each selected pair every pixel of that class is relabeled to one class
    absent from both the image's current and clean class sets. Images that
    already hold every class are skipped and another pair is drawn.

    Raises:
        NoiseInjectionError: If too few pairs can be flipped.
    """
    labels = dataset.labels.copy()
    clean_sets = [np.unique(grid) for grid in dataset.clean_labels]
    pairs = np.array([(i, c) for i, classes in enumerate(np.unique(grid) for grid in labels) for c in classes],
                     dtype=np.int64).reshape(-1, 2)
    budget = flip_budget(spec.slnir, len(pairs))
    rng = np.random.default_rng(spec.seed)
    flips: List[LabelFlip] = []
    skipped = 0
    for pick in rng.permutation(len(pairs)):
        if len(flips) == budget:
            break
        image, removed = (int(v) for v in pairs[pick])
        present = np.union1d(np.unique(labels[image]), clean_sets[image])
        candidates = np.setdiff1d(np.arange(dataset.n_classes), present)
        if len(candidates) == 0:
            skipped += 1
            logger.warning("Image %d already uses every class; resampling", image)
            continue
        added = int(rng.choice(candidates))
        labels[image][labels[image] == removed] = added
        flips.append(LabelFlip(image, removed, added))
    if len(flips) < budget:
        raise NoiseInjectionError(f"Only {len(flips)} of {budget} pixel class flips were possible")
    flags = (labels != dataset.clean_labels).reshape(len(labels), -1).any(axis=1)
    logger.info("Injected %d pixel class flips (slnir=%.2f, %d skipped); %d samples noisy",
                len(flips), spec.slnir, skipped, int(flags.sum()))
    return PixelLabelDataset(
        scenario=dataset.scenario,
        features=dataset.features,
        labels=labels,
        clean_labels=dataset.clean_labels,
        noise_flags=flags,
        n_classes=dataset.n_classes,
        seed=dataset.seed,
        slnir=spec.slnir,
        flips=list(dataset.flips) + flips,
    )


def inject_noise(dataset: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    """Dispatch to the injection procedure of the dataset's scenario."""
    if isinstance(dataset, PixelLabelDataset):
        return inject_pixel_noise(dataset, spec)
    return inject_scene_noise(dataset, spec)


def split_dataset(
    dataset: LabeledDataset, ratios: Sequence[float], seed: int = 0
) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """
    Shuffle and cut into train, validation and test subsets.

    Raises:
        InvalidDataError: If the ratios do not sum to 1 or a subset would be empty.
    """
    if len(ratios) != 3 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9) or min(ratios) <= 0:
        raise InvalidDataError(f"Split ratios must be three positive fractions summing to 1, got {ratios}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n_train == 0 or n_val == 0 or n - n_train - n_val <= 0:
        raise InvalidDataError(f"{n} samples are too few for split ratios {tuple(ratios)}")
    return (
        dataset.subset(order[:n_train]),
        dataset.subset(order[n_train:n_train + n_val]),
        dataset.subset(order[n_train + n_val:]),
    )


def dataset_header(dataset: LabeledDataset) -> dict:
    return {
        "version": DATASET_FORMAT_VERSION,
        "scenario": dataset.scenario,
        "n_samples": len(dataset),
        "n_classes": dataset.n_classes,
        "feature_shape": list(dataset.features.shape[1:]),
        "label_shape": list(dataset.labels.shape[1:]),
        "seed": dataset.seed,
        "slnir": dataset.slnir,
    }


def save_dataset(dataset: LabeledDataset, path: str) -> None:
    """
    Write a dataset archive (.npz) atomically.

    The archive holds a JSON ``header`` (version, scenario, shapes, seed,
    slnir) and the arrays ``features``, ``labels``, ``clean_labels``,
    ``noise_flags`` and ``flips`` (K x 3: index, removed, added).
    """
    flips = np.array([(f.index, f.removed, f.added) for f in dataset.flips], dtype=np.int64).reshape(-1, 3)
    with atomic_write(path) as f:
        np.savez(
            f,
            header=np.array(json.dumps(dataset_header(dataset), sort_keys=True)),
            features=dataset.features,
            labels=dataset.labels,
            clean_labels=dataset.clean_labels,
            noise_flags=dataset.noise_flags,
            flips=flips,
        )
    logger.info("Dataset of %d samples written to %s", len(dataset), path)


def load_dataset(path: str) -> LabeledDataset:
    """
    Read a dataset archive written by ``save_dataset``.

    Raises:
        DataLoadError: If the file cannot be read.
        InvalidDataError: If arrays are missing or disagree with the header.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            stored = {key: archive[key] for key in archive.files}
    except FileNotFoundError as e:
        raise DataLoadError(f"Dataset file not found: {path}") from e
    except Exception as e:
        raise DataLoadError(f"Error reading dataset file {path}: {str(e)}") from e

    missing = set(ARCHIVE_KEYS) - set(stored)
    if missing:
        raise InvalidDataError(f"Missing arrays: {sorted(missing)}. Expected: {list(ARCHIVE_KEYS)}")
    try:
        header = json.loads(str(stored["header"]))
    except json.JSONDecodeError as e:
        raise InvalidDataError(f"Dataset header of {path} is not valid JSON: {str(e)}") from e
    if header.get("version") != DATASET_FORMAT_VERSION:
        raise InvalidDataError(f"Unsupported dataset format version {header.get('version')} in {path}")
    if header.get("scenario") not in SCENARIOS:
        raise InvalidDataError(f"Unknown scenario {header.get('scenario')!r} in {path}")
    if list(stored["features"].shape) != [header["n_samples"], *header["feature_shape"]]:
        raise InvalidDataError(f"Feature array shape {stored['features'].shape} disagrees with the header")
    if stored["labels"].shape != stored["clean_labels"].shape:
        raise InvalidDataError("Noisy and clean label arrays differ in shape")

    cls = MultiLabelDataset if header["scenario"] == "scene" else PixelLabelDataset
    return cls(
        scenario=header["scenario"],
        features=stored["features"],
        labels=stored["labels"],
        clean_labels=stored["clean_labels"],
        noise_flags=stored["noise_flags"].astype(bool),
        n_classes=int(header["n_classes"]),
        seed=int(header["seed"]),
        slnir=float(header["slnir"]),
        flips=[LabelFlip(int(i), int(r), int(a)) for i, r, a in stored["flips"]],
    )


def generate_dataset(
    scenario: str,
    n_samples: int,
    n_classes: int,
    feature_dim: int,
    image_size: int = 8,
    seed: int = 0,
    noise: Optional[NoiseSpec] = None,
) -> LabeledDataset:
    """Generate a dataset of either scenario and optionally inject noise into it."""
    if scenario == "scene":
        dataset = generate_multilabel(n_samples, n_classes, feature_dim, seed)
    elif scenario == "pixel":
        dataset = generate_pixel(n_samples, n_classes, image_size, image_size, seed, channels=feature_dim)
    else:
        raise InvalidDataError(f"Unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if noise is not None and noise.slnir > 0:
        dataset = inject_noise(dataset, noise)
    return dataset
