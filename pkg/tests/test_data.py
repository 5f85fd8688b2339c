"""Dataset validation, prediction bundles, and constraint-matrix construction."""

import numpy as np
import pandas as pd
import pytest

from multirobust import (
    CausalDataset,
    DimensionMismatchError,
    EmptyGroupError,
    InvalidInputError,
    ModelPredictions,
    NonBinaryTreatmentError,
    NonFiniteError,
    PredictionBundle,
    build_constraint_matrices,
    load_dataset_csv,
    load_predictions_csv,
    validate_dataset,
    write_predictions_csv,
)


def small_dataset():
    return CausalDataset.from_arrays(
        y=[1.0, 3.0, 2.0, 4.0], a=[1, 1, 0, 0], w=np.arange(8.0).reshape(4, 2)
    )


class TestValidateDataset:
    def test_counts_groups(self):
        ds = validate_dataset(pd.DataFrame({
            "y": [1.0, 2.0, 3.0, 4.0], "a": [1, 1, 0, 0], "w1": [0.0, 1.0, 2.0, 3.0]
        }))
        assert (ds.n, ds.n1, ds.n0, ds.n_dropped) == (4, 2, 2, 0)

    def test_all_treated_raises(self):
        with pytest.raises(EmptyGroupError):
            validate_dataset(pd.DataFrame({"y": [1.0, 2.0, 3.0], "a": [1, 1, 1]}))

    def test_drops_missing_rows(self):
        ds = validate_dataset(pd.DataFrame({
            "y": [1.0, np.nan, 3.0, 4.0, 5.0],
            "a": [1, 1, 0, 0, 1],
            "w1": [0.0, 1.0, 2.0, 3.0, 4.0],
        }))
        assert ds.n == 4
        assert ds.n_dropped == 1

    def test_non_binary_treatment(self):
        with pytest.raises(NonBinaryTreatmentError):
            validate_dataset(pd.DataFrame({"y": [1.0, 2.0], "a": [0, 2]}))

    def test_all_rows_missing(self):
        with pytest.raises(NonFiniteError):
            validate_dataset(pd.DataFrame({"y": [np.nan, np.nan], "a": [0, 1]}))

    def test_missing_treatment_column(self):
        with pytest.raises(InvalidInputError):
            validate_dataset(pd.DataFrame({"y": [1.0, 2.0]}))

    def test_too_few_rows(self):
        with pytest.raises(InvalidInputError):
            validate_dataset(pd.DataFrame({"y": [1.0], "a": [1]}))

    def test_arrays_read_only(self):
        ds = small_dataset()
        with pytest.raises(ValueError):
            ds.y[0] = 99.0


class TestPredictionBundle:
    def test_ps_bounds_enforced(self):
        with pytest.raises(InvalidInputError):
            PredictionBundle(np.array([[0.0], [0.5]]), np.zeros((2, 0)), np.zeros((2, 0)))

    def test_outcome_pair_counts_must_match(self):
        with pytest.raises(DimensionMismatchError):
            PredictionBundle(np.zeros((2, 0)), np.ones((2, 2)), np.ones((2, 1)))

    def test_from_models_mixed_outputs(self):
        n = 3
        models = [
            ModelPredictions(label="ps-only", ps=np.full(n, 0.4)),
            ModelPredictions(label="outcome-only", q1=np.ones(n), q0=np.zeros(n)),
        ]
        pb = PredictionBundle.from_models(models, n)
        assert (pb.n_ps, pb.n_outcome) == (1, 1)
        assert pb.labels == ("ps-only", "outcome-only")

    def test_half_an_outcome_pair_rejected(self):
        with pytest.raises(InvalidInputError):
            PredictionBundle.from_models(
                [ModelPredictions(label="bad", q1=np.ones(3))], 3
            )

    def test_empty(self):
        pb = PredictionBundle.empty(5)
        assert (pb.n, pb.n_ps, pb.n_outcome) == (5, 0, 0)


class TestConstraintMatrices:
    def test_centering_and_sign_convention(self):
        ds = small_dataset()
        ps = np.array([0.2, 0.4, 0.6, 0.8])
        pb = PredictionBundle(ps.reshape(-1, 1), np.zeros((4, 0)), np.zeros((4, 0)))
        cm = build_constraint_matrices(ds, pb)
        np.testing.assert_allclose(cm.c1[:, 0], [-0.3, -0.1, 0.1, 0.3])
        np.testing.assert_allclose(cm.c0[:, 0], [0.3, 0.1, -0.1, -0.3])

    def test_constant_ps_column_dropped(self):
        ds = small_dataset()
        pb = PredictionBundle(np.full((4, 1), 0.5), np.zeros((4, 0)), np.zeros((4, 0)))
        cm = build_constraint_matrices(ds, pb)
        assert cm.kept_columns == ()
        assert cm.n_near_zero == 1
        assert cm.dropped_count == 1

    def test_duplicate_column_dropped(self):
        ds = small_dataset()
        ps = np.array([0.2, 0.4, 0.6, 0.8])
        pb = PredictionBundle(np.column_stack([ps, ps]), np.zeros((4, 0)), np.zeros((4, 0)))
        cm = build_constraint_matrices(ds, pb)
        assert cm.kept_columns == (0,)
        assert cm.n_duplicates == 1

    def test_outcome_columns_not_negated(self):
        ds = small_dataset()
        q1 = np.array([1.0, 2.0, 3.0, 4.0])
        q0 = np.array([4.0, 3.0, 2.0, 1.0])
        pb = PredictionBundle(np.zeros((4, 0)), q1.reshape(-1, 1), q0.reshape(-1, 1))
        cm = build_constraint_matrices(ds, pb)
        np.testing.assert_allclose(cm.c1[:, 0], q1 - q1.mean())
        np.testing.assert_allclose(cm.c0[:, 0], q0 - q0.mean())

    def test_full_sample_means_are_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(6, 40))
            k = int(rng.integers(1, 4))
            ell = int(rng.integers(1, 4))
            a = np.zeros(n, dtype=int)
            a[: n // 2] = 1
            ds = CausalDataset.from_arrays(rng.normal(size=n), a, rng.normal(size=(n, 2)))
            pb = PredictionBundle(
                rng.uniform(0.1, 0.9, size=(n, k)),
                rng.normal(size=(n, ell)),
                rng.normal(size=(n, ell)),
            )
            cm = build_constraint_matrices(ds, pb)
            np.testing.assert_allclose(cm.c1.mean(axis=0), 0.0, atol=1e-12)
            np.testing.assert_allclose(cm.c0.mean(axis=0), 0.0, atol=1e-12)

    def test_row_count_mismatch(self):
        ds = small_dataset()
        with pytest.raises(DimensionMismatchError):
            build_constraint_matrices(ds, PredictionBundle.empty(5))


class TestCsvRoundTrips:
    def test_dataset_csv(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("y,a,w1,w2\n1.0,1,0.5,2.0\n2.0,0,1.5,3.0\n3.0,1,2.5,4.0\n")
        ds = load_dataset_csv(path)
        assert (ds.n, ds.p) == (3, 2)
        np.testing.assert_allclose(ds.w[:, 1], [2.0, 3.0, 4.0])

    def test_predictions_round_trip(self, tmp_path):
        n = 4
        pb = PredictionBundle(
            np.array([[0.2], [0.4], [0.5], [0.6]]),
            np.arange(8.0).reshape(4, 2),
            np.arange(8.0).reshape(4, 2) - 1.0,
        )
        path = tmp_path / "preds.csv"
        write_predictions_csv(pb, path)
        back = load_predictions_csv(path, n)
        np.testing.assert_allclose(back.ps, pb.ps)
        np.testing.assert_allclose(back.out1, pb.out1)
        np.testing.assert_allclose(back.out0, pb.out0)

    def test_prediction_row_mismatch(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("ps_1\n0.5\n0.5\n")
        with pytest.raises(DimensionMismatchError):
            load_predictions_csv(path, 3)

    def test_gapped_numbering_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("ps_1,ps_3\n0.5,0.5\n0.4,0.6\n")
        with pytest.raises(InvalidInputError):
            load_predictions_csv(path, 2)
