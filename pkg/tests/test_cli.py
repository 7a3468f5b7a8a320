import json

import pytest

from trea import cli, net
from trea.fxp import FXP4, FxPValue
from trea.mac import MacMode


def _run(args):
    return cli.main(args)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full seeded pipeline once per module; individual tests inspect it."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data.json"
    paths = {
        "data": data,
        "ref": root / "ref.tmdl",
        "quant": root / "q.tmdl",
        "pruned": root / "p.tmdl",
        "tuned": root / "ft.tmdl",
        "trace": root / "trace.txt",
        "report": root / "report.csv",
    }
    assert _run(["gen-data", "--seed", "42", "--n-train", "120", "--n-test", "60",
                 "--out", str(data)]) == 0
    assert _run(["train", "--data", str(data), "--out", str(paths["ref"]),
                 "--epochs", "12", "--seed", "7"]) == 0
    assert _run(["quantize", "--model", str(paths["ref"]), "--data", str(data),
                 "--epsilon", "0.0", "--out", str(paths["quant"])]) == 0
    assert _run(["prune", "--model", str(paths["quant"]),
                 "--out", str(paths["pruned"])]) == 0
    assert _run(["finetune", "--model", str(paths["pruned"]), "--data", str(data),
                 "--epochs", "2", "--seed", "5", "--out", str(paths["tuned"])]) == 0
    assert _run(["simulate", "--model", str(paths["tuned"]), "--data", str(data),
                 "--trace-out", str(paths["trace"]),
                 "--report-out", str(paths["report"]),
                 "--power-watts", "1.6", "--luts-used", "30000",
                 "--ffs-used", "20000"]) == 0
    return paths


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        for key in ("ref", "quant", "pruned", "tuned", "trace", "report"):
            assert pipeline[key].exists()

    def test_prune_masks_are_4_of_9(self, pipeline):
        model = net.load_model(pipeline["pruned"])
        conv = [l for l in model.layers if l.kind == "conv2d"]
        assert conv
        for layer in conv:
            counts = layer.mask.flags.reshape(-1, 9).sum(axis=1)
            assert (counts == 4).all()

    def test_lossless_layers_go_4bit_at_epsilon_zero(self, pipeline):
        model = net.load_model(pipeline["quant"])
        assert all(l.precision is MacMode.FXP4_SIMD for l in model.layers)

    def test_deterministic_rerun_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "ft2.tmdl"
        mid_q = tmp_path / "q2.tmdl"
        mid_p = tmp_path / "p2.tmdl"
        assert _run(["quantize", "--model", str(pipeline["ref"]), "--data",
                     str(pipeline["data"]), "--epsilon", "0.0",
                     "--out", str(mid_q)]) == 0
        assert _run(["prune", "--model", str(mid_q), "--out", str(mid_p)]) == 0
        assert _run(["finetune", "--model", str(mid_p), "--data",
                     str(pipeline["data"]), "--epochs", "2", "--seed", "5",
                     "--out", str(out)]) == 0
        assert out.read_bytes() == pipeline["tuned"].read_bytes()

    def test_trace_lines(self, pipeline):
        lines = pipeline["trace"].read_text().strip().splitlines()
        assert lines[-1].split()[1] == "DnnDone"
        for line in lines:
            cycle, kind, layer, tile = line.split()
            int(cycle), int(layer), int(tile)
            assert kind in ("ComputeDone", "LayerDone", "DnnDone")

    def test_report_file(self, pipeline):
        rows = pipeline["report"].read_text().strip().splitlines()
        assert rows[0].startswith("workload,config,nFPCI,CPFI")
        assert len(rows) == 2

    def test_mac_units_scaling_invariant(self, pipeline, capsys):
        assert _run(["simulate", "--model", str(pipeline["tuned"]), "--data",
                     str(pipeline["data"]), "--mac-units", "200"]) == 0
        first = capsys.readouterr().out
        assert _run(["simulate", "--model", str(pipeline["tuned"]), "--data",
                     str(pipeline["data"]), "--mac-units", "400"]) == 0
        second = capsys.readouterr().out
        cpfi = lambda s: s.split("CPFI=")[1].split()[0]
        assert cpfi(first) == cpfi(second)


class TestSweep:
    def test_monotone_table(self, capsys):
        assert _run(["sweep", "--precision", "fxp8", "--iterations", "7"]) == 0
        out = capsys.readouterr().out.strip().splitlines()[1:]
        maxes = [float(line.split()[1]) for line in out]
        assert len(maxes) == 7
        assert all(a >= b for a, b in zip(maxes, maxes[1:]))

    def test_zero_iterations_rejected(self):
        assert _run(["sweep", "--precision", "fxp4", "--iterations", "0"]) == 2

    def test_file_output(self, tmp_path):
        out = tmp_path / "sweep.txt"
        assert _run(["sweep", "--precision", "fxp4", "--out", str(out)]) == 0
        assert out.read_text().startswith("T  max_error")


class TestCheck:
    def test_pristine_build_passes(self, capsys):
        assert _run(["check"]) == 0
        assert "PASSED" in capsys.readouterr().out

    def test_check_repeatable(self, capsys):
        _run(["check"])
        first = capsys.readouterr().out
        _run(["check"])
        assert capsys.readouterr().out == first

    def test_mutation_detected(self):
        def corrupt_multiply(x, w, t):
            from trea.fxp import potq_multiply

            good = potq_multiply(x, w, t)
            # drop the sign handling: classic shifter bug
            return FxPValue(abs(good.raw), FXP4)

        ok, msgs = cli.run_verification(multiply=corrupt_multiply)
        assert not ok
        assert any("violations" in m for m in msgs)

    def test_mutation_exit_code(self, monkeypatch, capsys):
        monkeypatch.setattr(
            cli.fxp, "potq_multiply",
            lambda x, w, t: FxPValue(0, x.fmt),
        )
        assert _run(["check"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestErrors:
    def test_missing_model_flag_usage_error(self, pipeline):
        with pytest.raises(SystemExit) as exc:
            _run(["simulate", "--data", str(pipeline["data"])])
        assert exc.value.code == 2

    def test_nonexistent_model_io_error(self, pipeline, capsys):
        assert _run(["simulate", "--model", "/nope/missing.tmdl",
                     "--data", str(pipeline["data"])]) == 3
        err = capsys.readouterr().err
        assert json.loads(err)["error"]

    def test_bad_data_descriptor(self, tmp_path, capsys):
        bad = tmp_path / "data.json"
        bad.write_text(json.dumps({"seed": 1}))
        assert _run(["train", "--data", str(bad), "--out",
                     str(tmp_path / "m.tmdl"), "--seed", "1"]) == 3

    def test_sample_index_out_of_range(self, pipeline):
        assert _run(["simulate", "--model", str(pipeline["tuned"]), "--data",
                     str(pipeline["data"]), "--sample-index", "100000"]) == 3


def test_gen_data_validates_before_writing(tmp_path):
    out = tmp_path / "d.json"
    assert _run(["gen-data", "--seed", "1", "--classes", "1",
                 "--out", str(out)]) == 3
    assert not out.exists()
