import json

import numpy as np
import pytest

from cli_pipeline import pipeline
from fieldrecon import container
from fieldrecon.bench import read_report_csv
from fieldrecon.cli import build_parser, main


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    work = tmp_path_factory.mktemp("cli")
    return work, pipeline(work)


def test_generate_outputs(outputs):
    _, out = outputs
    arrays, meta = container.read_with_meta(out["data"])
    assert arrays["fields"].shape == (10, 1, 2, 16, 16)
    assert container.read(out["sw"])["fields"].shape == (2, 5, 3, 16, 16)
    assert container.read(out["dr"])["fields"].shape == (2, 2, 2, 16, 16)  # initial frame + every 5th step


def test_reconstruct_contract(outputs):
    _, out = outputs
    obs = container.read(out["obs"])
    rec = container.read(out["recon"])
    pos = obs["positions"].astype(int)
    assert rec["members"].shape == (3, 2, 16, 16)
    assert np.array_equal(rec["members"][:, :, pos[:, 0], pos[:, 1]],
                          np.broadcast_to(obs["values"], (3,) + obs["values"].shape))
    assert np.allclose(rec["mean"], rec["members"].mean(axis=0))


def test_assimilate_outputs(outputs):
    _, out = outputs
    a = container.read(out["analysis"])
    assert a["x_b"].shape == a["x_a"].shape == (1, 2, 16, 16)
    side = json.loads((out["analysis"].parent / (out["analysis"].name + ".json")).read_text())
    assert len(side["Im"]) == 1 and side["Im"][0] <= 1


def test_evaluate_outputs(outputs):
    work, out = outputs
    rows = read_report_csv(work / "eval" / "report.csv")
    assert [r["method"] for r in rows] == ["truth", "mean", "xattn", "vt"]
    assert rows[0]["nrmse"] == 0.0
    assert (work / "eval" / "plots" / "nrmse_r0.svg").exists()
    assert "truth" in container.read(out["predictions"])


def test_errors_return_nonzero(tmp_path, capsys):
    assert main(["reconstruct", "--ckpt", str(tmp_path / "none.frd"), "--obs", "x", "--out", "y"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        build_parser().parse_args(["generate", "--problem", "heat", "--sims", "1", "--out", "x"])
