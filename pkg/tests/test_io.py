import numpy as np
import pytest

from pltf.errors import ShapeError
from pltf.inference import FitConfig, fit
from pltf.io import format_coo, read_coo, save_fit, write_coo
from pltf.model import Observation, build_cp


def test_coo_roundtrip(tmp_path, rng):
    X = rng.poisson(1.0, size=(3, 4, 2)).astype(float)
    path = tmp_path / "x.coo"
    write_coo(path, X)
    back = read_coo(path)
    np.testing.assert_array_equal(back.values, X)
    assert back.names == ("i", "j", "k")


def test_coo_comments_and_blank_lines(tmp_path):
    path = tmp_path / "x.coo"
    path.write_text("# header comment\ndims 2 2\n\n0 1 3.5  # trailing\n1 0 1\n")
    np.testing.assert_array_equal(read_coo(path).values, [[0, 3.5], [1, 0]])


@pytest.mark.parametrize("body", [
    "0 1 1\n",                 # no header
    "dims 2 2\n0 2 1\n",       # out of range
    "dims 2 2\n0 1\n",         # too few fields
    "dims 2 2\n0 1 1\n0 1 2\n",  # duplicate
])
def test_coo_rejects_malformed(tmp_path, body):
    path = tmp_path / "bad.coo"
    path.write_text(body)
    with pytest.raises(ShapeError):
        read_coo(path)


def test_zeros_omitted_by_default():
    assert format_coo(np.zeros((2, 2))) == "dims 2 2\n"
    assert format_coo(np.zeros((1,)), keep_zeros=True) == "dims 1\n0 0.0\n"


def test_save_fit_outputs(tmp_path, rng):
    model = build_cp(3, 3, 2, 2)
    obs = Observation(rng.poisson(3.0, size=(3, 3, 2)).astype(float))
    result = fit(model, obs, FitConfig(max_iters=5))
    paths = save_fit(result, model, tmp_path, include_L=True)
    names = sorted(p.name for p in paths)
    assert "trace.csv" in names and "factor_Z1.coo" in names and "factor_Z1_L.coo" in names
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iter,bound" and len(lines) == 6
    np.testing.assert_allclose(read_coo(tmp_path / "factor_Z2.coo").values, result.factors[1])

    em = fit(model, obs, FitConfig(method="em", max_iters=3))
    save_fit(em, model, tmp_path / "em")
    assert (tmp_path / "em" / "trace.csv").read_text().startswith("iter,divergence\n")
