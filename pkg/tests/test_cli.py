import json

import numpy as np
import pytest

from svfed import cli
from svfed.data import Dataset
from svfed.errors import ConfigurationError
from svfed.evaluation import ExperimentReport

SYNTH = {"name": "toy", "synthetic": {"n_normal": 60, "n_anomaly": 6, "d": 2, "seed": 1}}


def write_config(tmp_path, text):
    p = tmp_path / "run.yaml"
    p.write_text(text)
    return p


def test_minimal_config_defaults(tmp_path):
    cfg = cli.parse_config(write_config(tmp_path, "datasets: [breast-cancer]\nalgorithms: [svdd]\n"))
    assert cfg.gamma == 1.0 and cfg.c_range == (0.2, 0.8) and cfg.samples == 10
    assert cfg.sve.sigma == 1.0 and cfg.sve.tau == 1e-3 and cfg.sve.epsilon_step == 0.1
    assert cfg.k == [2, 5, 10] and cfg.f == [0.5, 1.0]
    assert [c.algorithm for c in cfg.cells()] == ["svdd"]


def test_fraction_out_of_range(tmp_path):
    with pytest.raises(ConfigurationError, match=r"grid\.f\[0\]"):
        cli.parse_config(write_config(tmp_path, "datasets: [breast-cancer]\ngrid: {f: [1.5]}\n"))


def test_missing_dataset_file(tmp_path):
    with pytest.raises(ConfigurationError, match="absent.csv"):
        cli.parse_config(write_config(tmp_path, "datasets: [{path: absent.csv}]\n"))


@pytest.mark.parametrize("text,key", [
    ("datasets: [breast-cancer]\nbogus: 1\n", "bogus"),
    ("datasets: [breast-cancer]\nhyper: {samples: many}\n", "hyper.samples"),
    ("datasets: [breast-cancer]\nsve: {tau: -1}\n", "sve"),
    ("datasets: [breast-cancer]\ngrid: {scheme: [random]}\n", r"grid\.scheme\[0\]"),
])
def test_error_names_key_path(tmp_path, text, key):
    with pytest.raises(ConfigurationError, match=key):
        cli.parse_config(write_config(tmp_path, text))


def test_flags_override_file(tmp_path):
    p = write_config(tmp_path, "datasets: [breast-cancer]\nseeds: [1, 2]\ngrid: {k: [2]}\n")
    cfg = cli.parse_config(p, {"seed": 9, "k": [5, 10], "out": "elsewhere"})
    assert cfg.seeds == [9] and cfg.k == [5, 10] and cfg.out == "elsewhere"


def smoke_config(tmp_path, out, extra=""):
    ds = json.dumps([SYNTH])
    return write_config(tmp_path, f"""\
datasets: {ds}
algorithms: [ocsvm, svdd, esvdd, sve]
grid: {{k: [2], f: [1.0, 0.5], scheme: [iid, biased], anonymise: [false, true]}}
hyper: {{samples: 2}}
out: {out}
{extra}""")


def test_run_smoke_and_byte_identical_rerun(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(smoke_config(tmp_path, a))]) == 0
    assert "ESVDD (+)" in capsys.readouterr().out
    assert cli.main(["run", "--config", str(smoke_config(tmp_path, a)), "--out", str(b)]) == 0
    names = ["report.csv", "report_detail.json", "diff_split_bias.csv", "diff_client_fraction.csv",
             "diff_anonymisation.csv"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert sorted(p.name for p in (a / "partitions").iterdir()) == ["toy_k2_biased.json", "toy_k2_iid.json"]
    rows = ExperimentReport.rows_from_csv((a / "report.csv").read_text())
    assert len(rows) == 2 + 2 * 8
    assert rows == ExperimentReport.rows_from_csv(ExperimentReport(rows).to_csv())


def test_partial_failure_keeps_other_rows(tmp_path):
    out = tmp_path / "pf"
    p = write_config(tmp_path, f"""\
datasets: {json.dumps([SYNTH])}
algorithms: [svdd, esvdd]
grid: {{k: [10], f: [1.0], scheme: [iid], anonymise: [false]}}
hyper: {{samples: 1, c_range: [0.02, 0.03]}}
strict_clients: true
out: {out}
""")
    assert cli.main(["run", "--config", str(p)]) == 1
    rows = ExperimentReport.rows_from_csv((out / "report.csv").read_text())
    assert [r.algorithm for r in rows] == ["svdd"]
    detail = json.loads((out / "report_detail.json").read_text())
    assert detail["failures"][0]["cell"][1] == "esvdd"


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_inspect_partition_iid(tmp_path, capsys):
    csv = tmp_path / "hundred.csv"
    Dataset(np.random.default_rng(0).random((100, 2)), np.zeros(100, bool)).to_csv(csv)
    out = tmp_path / "p.json"
    assert cli.main(["inspect-partition", "--dataset", str(csv), "--k", "10", "--out", str(out)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("client")]
    assert len(lines) == 10 and all(": 10 points" in l for l in lines)
    assert [len(a) for a in json.loads(out.read_text())["assignments"]] == [10] * 10


def test_inspect_partition_biased_blobs(tmp_path, capsys):
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0.2, 0.02, (15, 2)), rng.normal(0.8, 0.02, (25, 2))])
    csv = tmp_path / "blobs.csv"
    Dataset(X, np.zeros(40, bool)).to_csv(csv)
    out = tmp_path / "p.json"
    assert cli.main(["inspect-partition", "--dataset", str(csv), "--k", "2", "--scheme", "biased",
                     "--out", str(out)]) == 0
    got = {frozenset(a) for a in json.loads(out.read_text())["assignments"]}
    assert got == {frozenset(range(15)), frozenset(range(15, 40))}
    assert "centroid=" in capsys.readouterr().out


def test_inspect_partition_k_too_large(tmp_path):
    csv = tmp_path / "few.csv"
    Dataset(np.zeros((5, 2)), np.zeros(5, bool)).to_csv(csv)
    assert cli.main(["inspect-partition", "--dataset", str(csv), "--k", "1000"]) == 2


def test_generate_data(tmp_path):
    out = tmp_path / "g.csv"
    assert cli.main(["generate-data", "--out", str(out), "--n-normal", "30", "--n-anomaly", "3"]) == 0
    assert len(out.read_text().splitlines()) == 33
