"""
Unit tests for the shared dataclasses.
"""

import numpy as np
import pytest

from src.models.models import (
    DetectionTrace,
    LambdaSpec,
    MultiLabelDataset,
    NoiseSpec,
    Partition,
)
from src.utils.exceptions import InvalidDataError, TrainingError

pytestmark = pytest.mark.unit


@pytest.fixture
def small_dataset() -> MultiLabelDataset:
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    noisy = np.array([[1, 0, 1], [1, 0, 0]])
    return MultiLabelDataset(
        scenario="scene",
        features=np.arange(4.0).reshape(2, 2),
        labels=noisy,
        clean_labels=labels,
        noise_flags=np.array([False, True]),
        n_classes=3,
        seed=0,
    )


class TestDatasetRecords:
    """Test suite for dataset records."""

    def test_subset_keeps_rows_together(self, small_dataset):
        """Test a subset keeps each sample's features, labels and noise flag aligned."""
        part = small_dataset.subset(np.array([1]))
        np.testing.assert_array_equal(part.features, [[2.0, 3.0]])
        np.testing.assert_array_equal(part.labels, [[1, 0, 0]])
        np.testing.assert_array_equal(part.clean_labels, [[0, 1, 0]])
        assert part.noise_flags.tolist() == [True]

    def test_sample_count_mismatch(self):
        """Test arrays of different lengths are rejected."""
        with pytest.raises(InvalidDataError, match="sample count"):
            MultiLabelDataset(scenario="scene", features=np.zeros((3, 2)), labels=np.zeros((2, 3)),
                              clean_labels=np.zeros((2, 3)), noise_flags=np.zeros(2, dtype=bool),
                              n_classes=3, seed=0)

    @pytest.mark.parametrize("slnir", [-0.1, 0.65])
    def test_noise_spec_range(self, slnir):
        """Test slnir outside [0, 0.6] is rejected."""
        with pytest.raises(InvalidDataError):
            NoiseSpec(slnir)


class TestBatchRecords:
    """Test suite for lambda and partition records."""

    def test_lambda_count(self):
        """Test the rounded count."""
        assert LambdaSpec(20, 128).count == 26
        assert LambdaSpec(50, 5).count == 3

    def test_lambda_range(self):
        """Test a percent above 100 is rejected."""
        with pytest.raises(TrainingError):
            LambdaSpec(120, 10)

    def test_partition_mask(self):
        """Test the mask marks W."""
        partition = Partition(np.array([3, 1]), np.array([0, 2]), 2)
        np.testing.assert_array_equal(partition.noisy_indices, [1, 3])
        np.testing.assert_array_equal(partition.noisy_mask(), [False, True, False, True])

    def test_partition_must_cover_batch(self):
        """Test overlapping sets are rejected."""
        with pytest.raises(TrainingError, match="disjoint"):
            Partition(np.array([0]), np.array([0, 1]), 1)


class TestDetectionTrace:
    """Test suite for DetectionTrace."""

    def test_append_per_selector(self):
        """Test values accumulate per selector with None kept."""
        trace = DetectionTrace()
        trace.append("grid", 0.5)
        trace.append("grid", None)
        trace.append("random", 0.3)
        assert trace.precision == {"grid": [0.5, None], "random": [0.3]}

    def test_out_of_range(self):
        """Test precision above 1 is rejected."""
        with pytest.raises(InvalidDataError):
            DetectionTrace().append("grid", 1.5)
