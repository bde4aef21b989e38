import numpy as np
import pytest

from msrd.schemas.network import ScalingParams
from msrd.services.artifacts import ArtifactWriter, bundle_frame, grid_frame, read_csv
from msrd.services.debit import square_amplitudes
from msrd.services.grid import GridFunction, PairField, project_pn


@pytest.fixture
def writer(tmp_path):
    return ArtifactWriter(str(tmp_path), {"n_sites": 3}, formats="json")


def test_grid_frame_rows():
    frame = grid_frame(GridFunction([0.5, 1.0 / 3.0, 2.0]))
    assert list(frame.columns) == ["site", "value"]
    assert frame["site"].tolist() == [1, 2, 3]


def test_grid_csv_reads_back_exactly(writer):
    f = GridFunction([0.1, 1.0 / 3.0, 2.0 ** -40, 7.25])
    path = writer.csv("values.csv", grid_frame(f), force=True)
    table = read_csv(path)
    assert table["site"].tolist() == [1, 2, 3, 4]
    assert np.array_equal(table["value"].to_numpy(), f.values)


def test_bundle_frame(reference_spec, writer):
    n = 4
    constants = reference_spec.initial.constants
    state = PairField(
        project_pn(reference_spec.initial.v0_c, n, constants),
        project_pn(reference_spec.initial.v0_d, n, constants),
    )
    bundle = square_amplitudes(reference_spec, ScalingParams(n_sites=n, mu=16), state)
    frame = bundle_frame(bundle)
    assert list(frame.columns) == ["site", "field", "value"]
    assert len(frame) == n * len(bundle.fields())
    table = read_csv(writer.csv("bundle.csv", frame, force=True))
    sq_delta = table[table["field"] == "sq_delta"].sort_values("site")
    assert np.array_equal(sq_delta["value"].to_numpy(), bundle.sq_delta.values)
