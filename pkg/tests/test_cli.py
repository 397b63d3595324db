import json

import numpy as np
import pytest

from src.api.models import ClassifyResult, ErrorRecord, MonodromyResult
from src.cli.io import error_path, format_float
from src.cli.main import main, parse_grid
from src.engine.errors import ConfigError


def test_classify_champagne(tmp_path):
    out = tmp_path / "classify.json"
    assert main(["classify", "--system", "champagne_bottle", "--out", str(out)]) == 0
    result = ClassifyResult.model_validate_json(out.read_text())
    assert result.rank == 0
    assert (result.wtype.k_e, result.wtype.k_f, result.wtype.k_h, result.wtype.k_x) == (0, 1, 0, 0)
    np.testing.assert_allclose(result.point, np.zeros(4), atol=1e-6)


def test_malformed_system_writes_nothing(tmp_path):
    spec = tmp_path / "system.json"
    spec.write_text(json.dumps({"type": "q_model"}))
    out = tmp_path / "periods.json"
    code = main(["periods", "--system", str(spec), "--grid", "0.05:0.05:1,0.02:0.02:1", "--out", str(out)])
    assert code == 1
    assert not out.exists()
    assert not error_path(str(out)).exists()


@pytest.mark.parametrize("argv", [
    ["periods", "--system", "champagne_bottle", "--no-such-flag"],
    ["periods"],
    ["integrate", "--system", "champagne_bottle"],
    ["periods", "--system", "champagne_bottle", "--rel-tol=-1", "--grid", "0.05:0.05:1,0.02:0.02:1"],
    ["periods", "--system", "champagne_bottle", "--orientation", "2"],
    ["monodromy", "--system", "champagne_bottle", "--format", "csv"],
    ["periods", "--system", "champagne_bottle"],
])
def test_configuration_errors(argv, tmp_path):
    out = tmp_path / "result.json"
    assert main(argv + ["--out", str(out)]) == 1
    assert not out.exists()
    assert not error_path(str(out)).exists()


def test_numerical_failure_writes_error_record(tmp_path):
    out = tmp_path / "periods.json"
    code = main(["periods", "--system", "q_model:focusfocus", "--grid", "0.3:0.3:1,0.1:0.1:1", "--out", str(out)])
    assert code == 2
    assert json.loads(out.read_text()) == []
    record = ErrorRecord.model_validate_json(error_path(str(out)).read_text())
    assert record.error.command == "periods"
    assert record.failures[0]["type"] == "HorizonExceededError"
    assert record.failures[0]["v"] == [0.3, 0.1]


def test_oscillator_periods_csv(tmp_path):
    out = tmp_path / "periods.csv"
    assert main(["periods", "--system", "oscillator", "--grid", "0.5:1.0:2", "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "v1,tau1,residual,anchor1,anchor2"
    assert len(lines) == 3
    v, tau, _, x, xi = map(float, lines[1].split(","))
    assert v == 0.5
    assert tau == pytest.approx(2.0 * np.pi)
    assert (x * x + xi * xi) / 2.0 == pytest.approx(0.5, abs=1e-10)


def test_format_float_round_trips():
    x = 0.1 + 0.2
    assert float(format_float(x)) == x


def test_parse_grid():
    axes = parse_grid("0:1:3, 2:3:2")
    np.testing.assert_allclose(axes[0], [0.0, 0.5, 1.0])
    np.testing.assert_allclose(axes[1], [2.0, 3.0])
    np.testing.assert_allclose(parse_grid("0.05:0.05:1")[0], [0.05])
    for bad in ["", "0:1", "1:0:3", "0:1:x", "0:1:0"]:
        with pytest.raises(ConfigError):
            parse_grid(bad)


@pytest.mark.slow
def test_monodromy_is_deterministic(tmp_path):
    outputs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        argv = ["monodromy", "--system", "champagne_bottle", "--center", "0,0", "--radius", "0.05",
                "--steps", "32", "--out", str(out)]
        assert main(argv) == 0
        outputs.append(out.read_text())
    assert outputs[0] == outputs[1]
    result = MonodromyResult.model_validate_json(outputs[0])
    assert result.matrix == [[1, 1], [0, 1]]
    assert result.loop.steps == 32
    assert len(result.per_point_residuals) == 33
