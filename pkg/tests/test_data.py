import numpy as np
import pandas as pd
import pytest

from siomed import ColumnRoles, Dataset, dataset_from_frame, read_csv, write_csv
from siomed.exceptions import SchemaError
from tests.conftest import dgp_sample

ROLES = ColumnRoles(treatment="T", mediator="M", outcome="Y", shadow=("z",), covariates=("x1", "x2", "x3"),
                    missable=("x1",))


def test_masking_convention_applied():
    data = Dataset.build([1, 0], [0, 1], [0.1, 0.2], [1.0, 2.0], [[5.0, 1.0], [7.0, 2.0]], [0.3, 0.4])
    np.testing.assert_array_equal(data.x[1], [0.0, 0.0])


def test_unmasked_missing_rows_rejected():
    with pytest.raises(SchemaError):
        Dataset(np.array([0.0]), np.array([1.0]), np.zeros(1), np.zeros(1), np.ones((1, 1)), np.zeros((1, 1)),
                np.array([True]))


def test_non_binary_treatment_rejected():
    with pytest.raises(SchemaError):
        Dataset.build([1, 1], [0, 2], [0, 0], [0, 0], [[1.0], [2.0]], [0, 0])


@pytest.mark.parametrize("sentinel", [None, "NA"])
def test_csv_round_trip_is_bit_exact(tmp_path, sentinel):
    data, _ = dgp_sample(1, 300, 0.6, 0)
    path = tmp_path / "d.csv"
    write_csv(data, path, sentinel=sentinel)
    back = read_csv(path, ColumnRoles(**{**ROLES.__dict__, "sentinel": sentinel}))
    for name in ("r", "t", "m", "y", "x", "z"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))


def test_missing_column_named():
    frame = pd.DataFrame({"T": [0, 1], "M": [0.0, 1.0], "Y": [1.0, 2.0], "x1": [1.0, None], "x2": [0.0, 1.0],
                          "x3": [1, 0]})
    with pytest.raises(SchemaError, match="z"):
        dataset_from_frame(frame, ROLES)


def test_missing_cell_in_non_missable_column_rejected():
    frame = pd.DataFrame({"T": [0, 1], "M": [0.0, None], "Y": [1.0, 2.0], "z": [0.1, 0.2], "x1": [1.0, None],
                          "x2": [0.0, 1.0], "x3": [1, 0]})
    with pytest.raises(SchemaError, match="'M'"):
        dataset_from_frame(frame, ROLES)


def test_all_missing_covariate_rejected():
    frame = pd.DataFrame({"T": [0, 1], "M": [0.0, 1.0], "Y": [1.0, 2.0], "z": [0.1, 0.2], "x1": [None, None],
                          "x2": [0.0, 1.0], "x3": [1, 0]})
    with pytest.raises(SchemaError, match="entirely missing"):
        dataset_from_frame(frame, ROLES)


def test_masked_value_never_enters_complete_row_fits():
    from siomed.pipeline import run_pipeline

    data, _ = dgp_sample(1, 600, 0.6, 4)
    other = Dataset(data.r, data.t, data.m, data.y, data.x.copy(), data.z, data.missable, data.x_names,
                    data.z_names)
    a = run_pipeline(data)
    b = run_pipeline(other)
    assert a.estimates == b.estimates
    # the masked cell value is fixed at 0 by construction; check fits see only complete rows
    assert np.all(data.x[data.r == 0][:, data.missable] == 0.0)


def test_sentinel_and_empty_cells_both_missing(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("T,M,Y,z,x1,x2,x3\n0,0.5,1,0.1,NA,0.2,1\n1,0.7,2,0.3,,0.4,0\n1,0.9,3,0.5,0.25,0.6,1\n")
    data = read_csv(path, ColumnRoles(**{**ROLES.__dict__, "sentinel": "NA"}))
    np.testing.assert_array_equal(data.r, [0, 0, 1])
    assert data.x[2, 0] == 0.25
