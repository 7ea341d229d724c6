import json

import pytest

from losfield.cli import main, read_config_file
from losfield.pipeline import ConfigError


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    out = tmp_path_factory.mktemp("city")
    code = main(["synth", "--extent-m", "400", "--open-fraction", "0.5", "--site", "200,200", "--site", "250,200",
                 "--out", str(out)])
    assert code == 0
    return out


def inputs(city):
    return ["--dem", str(city / "dem.asc"), "--buildings", str(city / "buildings.geojson"),
            "--stations", str(city / "stations.csv")]


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestSynth:
    def test_files(self, city):
        assert (city / "stations.csv").read_text().splitlines()[1:] == ["s1,200.0,200.0,25.0", "s2,250.0,200.0,25.0"]
        assert (city / "dem.asc").read_text().startswith("ncols 40")
        assert json.loads((city / "buildings.geojson").read_text())["type"] == "FeatureCollection"
        assert (city / "manifest.json").exists()

    def test_benchmark_layout(self, tmp_path, capsys):
        assert main(["synth", "--benchmark", "2,1", "--radius-m", "150", "--out", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["n_stations"] == 3

    def test_bad_city(self, tmp_path, capsys):
        assert main(["synth", "--extent-m", "10", "--out", str(tmp_path)]) == 2
        assert error_of(capsys)["error"] == "config"


class TestSiteCommands:
    def test_viewshed_and_curve(self, city, tmp_path, capsys):
        assert main(["viewshed", *inputs(city), "--radius-m", "60", "--station", "s1", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "sites/s1/visibility.asc").exists()
        assert not (tmp_path / "sites/s2").exists()
        assert main(["curve", *inputs(city), "--radius-m", "60", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "sites/s2/curve.csv").read_text().startswith("bin_center_m,p_los_empirical,n_pixels")
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert [r["site_id"] for r in rows] == ["s1", "s1", "s2"]

    def test_fit(self, city, tmp_path):
        assert main(["fit", *inputs(city), "--radius-m", "80", "--methods", "Default3gpp,Fitted3gpp",
                     "--out", str(tmp_path)]) == 0
        fits = json.loads((tmp_path / "sites/s2/fits.json").read_text())
        assert [f["method"] for f in fits["fits"]] == ["Default3gpp", "Fitted3gpp"]

    def test_unknown_station(self, city, tmp_path, capsys):
        assert main(["viewshed", *inputs(city), "--station", "zz", "--out", str(tmp_path)]) == 2
        assert "zz" in error_of(capsys)["message"]


class TestBatch:
    def test_batch_and_report(self, city, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["batch", *inputs(city), "--radius-m", "80", "--methods", "Fitted3gpp,Fitted3gppMinLos",
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["methods"] == ["Fitted3gpp", "Fitted3gppMinLos"]
        assert [s["site_id"] for s in summary["sites"]] == ["s1", "s2"]
        capsys.readouterr()
        again = tmp_path / "again"
        assert main(["report", "--results", str(out / "summary.json"), "--out", str(again)]) == 0
        assert (again / "summary.json").read_bytes() == (out / "summary.json").read_bytes()
        assert (again / "cdf.svg").read_bytes() == (out / "cdf.svg").read_bytes()

    def test_config_file_and_flag_precedence(self, city, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# test run\n"
                       f"dem = {city / 'dem.asc'}\nbuildings = {city / 'buildings.geojson'}\n"
                       f"stations = {city / 'stations.csv'}\n"
                       "radius_m = 40\nmethods = Default3gpp\nseed = 4\n")
        out = tmp_path / "run"
        assert main(["batch", "--config", str(cfg), "--radius-m", "60", "--out", str(out)]) == 0
        echo = json.loads((out / "summary.json").read_text())["config"]
        assert (echo["radius_m"], echo["seed"], echo["methods"]) == (60.0, 4, ["Default3gpp"])

    def test_partial_failure_exit(self, city, tmp_path, capsys):
        stations = tmp_path / "stations.csv"
        stations.write_text("station_id,x_m,y_m,antenna_height_m\nin,200,200,25\nfar,9000,9000,25\n")
        args = ["batch", "--dem", str(city / "dem.asc"), "--buildings", str(city / "buildings.geojson"),
                "--stations", str(stations), "--radius-m", "50", "--methods", "Default3gpp", "--out", str(tmp_path / "o")]
        assert main(args) == 4

    def test_total_failure_exit(self, city, tmp_path):
        stations = tmp_path / "stations.csv"
        stations.write_text("station_id,x_m,y_m,antenna_height_m\nfar,9000,9000,25\n")
        args = ["batch", "--dem", str(city / "dem.asc"), "--buildings", str(city / "buildings.geojson"),
                "--stations", str(stations), "--methods", "Default3gpp", "--out", str(tmp_path / "o")]
        assert main(args) == 5


class TestErrors:
    def test_missing_input(self, tmp_path, capsys):
        assert main(["batch", "--dem", str(tmp_path / "x.asc"), "--buildings", "b", "--stations", "s",
                     "--out", str(tmp_path)]) == 2
        err = error_of(capsys)
        assert err == {"error": "config", "message": f"dem: file not found: {tmp_path / 'x.asc'}", "exit_code": 2}

    def test_empty_methods(self, city, tmp_path, capsys):
        assert main(["batch", *inputs(city), "--methods", "", "--out", str(tmp_path)]) == 2
        assert error_of(capsys)["message"].startswith("methods:")

    def test_malformed_dem(self, city, tmp_path, capsys):
        bad = tmp_path / "bad.asc"
        bad.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3\n")
        args = ["batch", "--dem", str(bad), "--buildings", str(city / "buildings.geojson"),
                "--stations", str(city / "stations.csv"), "--out", str(tmp_path / "o")]
        assert main(args) == 3
        assert error_of(capsys)["error"] == "parse"

    def test_unwritable_out(self, city, tmp_path, capsys):
        (tmp_path / "f").write_text("")
        assert main(["batch", *inputs(city), "--out", str(tmp_path / "f" / "o")]) == 2
        assert "not writable" in error_of(capsys)["message"]

    def test_report_requires_results(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path)]) == 2
        assert error_of(capsys)["message"].startswith("results:")

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["batch", "--colour", "red"])
        assert exc.value.code == 2

    def test_log_level(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LOSFIELD_LOG", "debug")
        main(["synth", "--extent-m", "200", "--out", str(tmp_path)])
        monkeypatch.setenv("LOSFIELD_LOG", "loud")
        main(["synth", "--extent-m", "200", "--out", str(tmp_path)])
        assert "unknown LOSFIELD_LOG" in capsys.readouterr().err


class TestConfigFile:
    def test_parse(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("radius-m = 300  # metres\n\nw0_grid = 0.1, 0.5\n")
        assert read_config_file(f) == {"radius_m": 300.0, "w0_grid": (0.1, 0.5)}

    @pytest.mark.parametrize("text,match", [("colour = red\n", "unknown key"), ("radius_m 3\n", "key = value"),
                                            ("radius_m = wide\n", "bad value")])
    def test_errors(self, tmp_path, text, match):
        f = tmp_path / "c.cfg"
        f.write_text(text)
        with pytest.raises(ConfigError, match=match):
            read_config_file(f)
