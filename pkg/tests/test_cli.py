import json

import numpy as np
import pytest

from qndanneal import cli


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = cli.RunConfig(experiment="tts", n_qubits=[4, 5], x0=[2.0], t_grid="1:10:5:log", out="x")
        cfg.save(tmp_path / "c.json")
        assert cli.RunConfig.load(tmp_path / "c.json") == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            cli.RunConfig.from_dict({"bogus": 1})

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 5, "steps": 123, "out": str(tmp_path / "from_file")}))
        args = cli.build_parser().parse_args(["gadget", "--config", str(path), "--seed", "9"])
        cfg = cli.resolve_config(args)
        assert cfg.seed == 9 and cfg.steps == 123 and cfg.out.endswith("from_file")

    @pytest.mark.parametrize("spec,expected", [("1:100:3:log", [1, 10, 100]), ("0.5:1.5:3:lin", [0.5, 1, 1.5]),
                                               ("2:2:1", [2])])
    def test_t_grid(self, spec, expected):
        np.testing.assert_allclose(cli.parse_t_grid(spec), expected)

    @pytest.mark.parametrize("spec", ["1:2", "0:1:3", "2:1:3", "1:2:3:cubic"])
    def test_bad_t_grid(self, spec):
        with pytest.raises(ValueError):
            cli.parse_t_grid(spec)


class TestFormatting:
    def test_seventeen_digits(self):
        assert cli.fmt(0.1) == "0.10000000000000001"
        assert float(cli.fmt(np.pi)) == np.pi

    def test_git_blob_hash(self):
        # same value as `git hash-object` on a file containing "hello\n"
        assert cli.git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


class TestCommands:
    def test_missing_out_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["gadget"])
        assert info.value.code == 2

    def test_bad_choice(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            cli.main(["gadget", "--mode", "bogus", "--out", str(tmp_path)])
        assert info.value.code == 2

    def test_gadget(self, tmp_path):
        code, out = run(tmp_path, "gadget")
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "PASS"
        meta = json.loads((out / "meta.json").read_text())
        assert meta["files"]["gadget.csv"] == cli.git_blob_hash((out / "gadget.csv").read_bytes())
        assert "content_hash" in meta and meta["config"]["experiment"] == "gadget"

    def test_coherence_without_coupling(self, tmp_path):
        code, out = run(tmp_path, "coherence", "--x0", "0", "--samples", "81", "--steps", "800")
        assert code == 0
        data = np.loadtxt(out / "coherence.csv", delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 1], data[:, 2], atol=1e-12)

    def test_coherence_with_meter(self, tmp_path):
        code, out = run(tmp_path, "coherence", "--preset", "lz", "--x0", "2", "--samples", "81", "--steps", "800")
        assert code == 0
        header = (out / "coherence.csv").read_text().splitlines()[0]
        assert header == "t,coherent,meter"

    def test_spectrum(self, tmp_path):
        code, out = run(tmp_path, "spectrum", "--x0", "2", "--samples", "21")
        assert code == 0
        data = np.loadtxt(out / "spectrum.csv", delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 3:5], 3 * data[:, 1:3], atol=1e-10)

    def test_lz_check_rows(self, tmp_path):
        code, out = run(tmp_path, "lz-check", "--x0", "0", "1", "--t-grid", "5:20:3:log", "--steps", "2000")
        rows = (out / "lz.csv").read_text().splitlines()
        assert rows[0].startswith("T,x0,v,infidelity,closed_form") and len(rows) == 7
        assert code == 0

    def test_fidelity_scan_ising(self, tmp_path):
        code, out = run(tmp_path, "fidelity-scan", "--preset", "ising", "--n-qubits", "2", "--x0", "1",
                        "--t-grid", "1:10:3", "--steps", "300")
        assert code == 0
        assert len((out / "fidelity.csv").read_text().splitlines()) == 1 + 2 * 3

    def test_omega_scan(self, tmp_path):
        code, _ = run(tmp_path, "omega-scan", "--omega", "0", "1", "--t-grid", "1:10:3", "--steps", "300")
        assert code == 0

    def test_tts_small(self, tmp_path):
        code, out = run(tmp_path, "tts", "--n-qubits", "2", "--instances", "2", "--x0", "0", "--steps", "200",
                        "--n-t", "3", "--t-guess", "2")
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["aggregates"][0]["mean_ratio"] == 1.0

    def test_x0_scan_small(self, tmp_path):
        code, out = run(tmp_path, "x0-scan", "--n-qubits", "2", "--instances", "2", "--x0", "0", "2",
                        "--steps", "200", "--t-guess", "2")
        assert code == 0
        assert (out / "x0_mean.csv").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        argv = ["tts", "--n-qubits", "2", "--instances", "2", "--x0", "2", "--steps", "200", "--n-t", "3",
                "--t-guess", "2", "--seed", "7"]
        _, a = run(tmp_path, *argv, name="a")
        _, b = run(tmp_path, *argv, name="b")
        assert (a / "tts.csv").read_bytes() == (b / "tts.csv").read_bytes()

    def test_meta_reproduces_run(self, tmp_path):
        _, a = run(tmp_path, "omega-scan", "--omega", "0.5", "--t-grid", "1:5:2", "--steps", "200", name="a")
        b = tmp_path / "b"
        cli.main(["omega-scan", "--config", str(a / "meta.json"), "--out", str(b)])
        assert (a / "omega.csv").read_bytes() == (b / "omega.csv").read_bytes()
