import json
from unittest.mock import MagicMock

import numpy as np
import pandas as pd
import pytest

from engines.critical_values import CriticalValueTable
from engines.errors import ConfigError
from routers.cli import REPORTS, CliRouter, create_parser, dgp_config
from schemas.estimation import Estimator, InferenceKind
from services.estimator import EstimatorService
from services.experiment import ExperimentService

SMALL_DGP = ["--n", "400", "--p", "2", "--q", "4", "--sigma-scale", "1", "--seed", "2"]


@pytest.fixture
def router(tmp_path):
    table = CriticalValueTable()
    return CliRouter(
        estimator=EstimatorService(table, record_timings=False),
        experiment=ExperimentService(workers=1, record_timings=False, table=table),
        table=table,
        table_path=tmp_path / "cv.tsv",
        defaults={"n0": 100},
    )


def parse(*argv):
    return create_parser().parse_args(list(argv))


# --------------------------
# create_parser
# --------------------------
def test_list_flags_are_split():
    args = parse("estimate", "--x", "x1, x2", "--z", "z1,z2,z3", "--hypothesis", "1,0.5", "--dwh-sub", "0,1")
    assert args.x == ["x1", "x2"]
    assert args.z == ["z1", "z2", "z3"]
    assert args.hypothesis == [1.0, 0.5]
    assert args.dwh_sub == [0, 1]


def test_experiment_designs():
    args = parse("experiment", "--design", "5,20;10,30", "--n", "1000,10000")
    assert args.design == [(5, 20), (10, 30)]
    assert args.n == [1000, 10000]


def test_dgp_config_defaults_lower_indices():
    cfg = dgp_config(parse("simulate", "--output", "x.csv", "--p", "3", "--q", "7", "--exogenous"))
    assert (cfg.p_low, cfg.q_low) == (3, 7)
    assert cfg.endogenous is False


# --------------------------
# run_config
# --------------------------
def test_flags_override_defaults(router):
    args = parse("estimate", "--estimator", "s2sls", "--inference", "random_scaling,dwh", "--no-precondition")
    cfg = router.run_config(args)
    assert cfg.n0 == 100
    assert cfg.estimator is Estimator.S2SLS
    assert cfg.inference == [InferenceKind.RANDOM_SCALING, InferenceKind.DWH]
    assert cfg.dwh_preconditioned is False


def test_unset_flags_keep_defaults(router):
    cfg = router.run_config(parse("estimate"))
    assert cfg.n0 == 100
    assert cfg.estimator is Estimator.SGMM
    assert cfg.record_timings is True


# --------------------------
# estimate
# --------------------------
def test_estimate_on_synthetic_data_writes_report(router, tmp_path, capsys):
    out = tmp_path / "report"
    args = parse("estimate", *SMALL_DGP, "--inference", "plug_in,random_scaling,jtest", "--output", str(out))
    assert router.dispatch(args) == 0
    printed = capsys.readouterr().out
    assert "random_scaling" in printed
    reports = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert reports[0]["label"] == "SGMM"
    assert reports[0]["n_steps"] == 400
    coefficients = pd.read_csv(out / "coefficients.csv")
    assert set(coefficients["method"]) == {"plug_in", "random_scaling"}
    assert REPORTS.validate_json((out / "report.json").read_bytes())[0].intervals[0].critical_value > 0
    assert set(coefficients["critical_value"].round(3)) == {1.96, 6.747}
    assert pd.read_csv(out / "tests.csv")["test"].tolist() == ["jtest"]


def test_estimate_from_csv(router, tmp_path):
    data = tmp_path / "data.csv"
    assert router.dispatch(parse("simulate", *SMALL_DGP, "--output", str(data))) == 0
    frame = pd.read_csv(data)
    assert frame.shape == (400, 7)
    args = parse("estimate", "--csv", str(data), "--x", "x1,x2", "--z", "z1,z2,z3,z4", "--n1", "50")
    router.estimator = MagicMock(wraps=router.estimator)
    assert router.dispatch(args) == 0
    cfg = router.estimator.estimate.call_args.args[1]
    assert cfg.csv.z_cols == ["z1", "z2", "z3", "z4"]
    assert cfg.n1 == 50


def test_estimate_csv_needs_columns(router, tmp_path):
    with pytest.raises(ConfigError):
        router.dispatch(parse("estimate", "--csv", str(tmp_path / "a.csv"), "--x", "x1"))


def test_estimate_multi_epoch_materializes_stream(router, tmp_path):
    out = tmp_path / "me"
    args = parse("estimate", *SMALL_DGP, "--epochs", "2", "--shuffle-seed", "3", "--output", str(out))
    assert router.dispatch(args) == 0
    reports = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert [r["label"] for r in reports] == ["SGMM ME", "SGMM ME"]
    assert reports[1]["n_steps"] == 800


# --------------------------
# experiment / critvals
# --------------------------
def test_experiment_writes_summary(router, tmp_path, capsys):
    out = tmp_path / "exp"
    args = parse(
        "experiment", "--n", "300", "--design", "2,4", "--sigma-scale", "1", "--replications", "2", "--output", str(out)
    )
    assert router.dispatch(args) == 0
    summary = pd.read_csv(out / "summary.csv")
    assert "S2SLS" in summary["method"].tolist()
    assert np.all(summary["replications"] == 2)
    assert "RMSE" in capsys.readouterr().out


def test_critvals_lookup(router, capsys):
    assert router.dispatch(parse("critvals", "--q", "1", "--form", "t_type")) == 0
    assert "6.7470" in capsys.readouterr().out


def test_critvals_write_uses_configured_path(router, mocker):
    write = mocker.patch("routers.cli.write_table", return_value=pd.DataFrame({"q": [1]}))
    assert router.dispatch(parse("critvals", "--write", "--max-q", "2", "--grid", "1000", "--reps", "10000")) == 0
    write.assert_called_once_with(router.table_path, range(1, 3), 1000, 10_000, 20240501)
