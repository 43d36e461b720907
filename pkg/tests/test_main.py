import json

import pytest

from main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, cli_main


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("SCO_THREADS", "SCO_DATABASE_URL", "SCO_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


class TestRun:

    def test_writes_reports(self, quadratic_config_file, tmp_path):
        out = tmp_path / "out"
        assert cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(out)]) == EXIT_OK
        assert {p.name for p in out.iterdir()} == {"report.csv", "series.csv", "report.json"}

    def test_output_identical_across_thread_counts(self, quadratic_config_file, tmp_path):
        config = str(quadratic_config_file())
        for threads in ("1", "4"):
            assert cli_main(["run", "--config", config, "--out", str(tmp_path / threads),
                             "--threads", threads]) == EXIT_OK
        for name in ("report.csv", "series.csv", "report.json"):
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "4" / name).read_bytes()

    def test_seed_flag_overrides_config(self, quadratic_config_file, tmp_path):
        out = tmp_path / "seeded"
        cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(out), "--seed", "5",
                  "--format", "json"])
        payload = json.loads((out / "report.json").read_text())
        assert payload["metadata"]["master_seed"] == 5
        assert not (out / "report.csv").exists()

    def test_stores_rows_in_database(self, quadratic_config_file, tmp_path):
        from report_store import ResultStore
        url = f"sqlite:///{tmp_path / 'runs.db'}"
        assert cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(tmp_path / "o"),
                         "--db", url]) == EXIT_OK
        assert len(ResultStore(url).load_rows("seed-11")) == 20

    def test_bad_config_exits_with_config_code(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[problem]\nkind = logistic\nn = 3\n")
        assert cli_main(["run", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
        assert cli_main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


class TestUsage:

    def test_unknown_flag(self):
        assert cli_main(["run", "--bogus"]) == EXIT_CONFIG

    def test_missing_subcommand(self):
        assert cli_main([]) == EXIT_CONFIG


class TestSummarize:

    def test_prints_table(self, quadratic_config_file, tmp_path, capsys):
        out = tmp_path / "out"
        cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(out)])
        capsys.readouterr()
        assert cli_main(["summarize", str(out / "report.json")]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].split("\t")[:4] == ["scenario", "NS", "PG mean", "PG var"]
        assert len(lines) == 3

    def test_json_output_and_summary_file(self, quadratic_config_file, tmp_path, capsys):
        out = tmp_path / "out"
        cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(out)])
        capsys.readouterr()
        assert cli_main(["summarize", str(out / "report.csv"), "--format", "json", "--metric", "objective",
                         "--out", str(tmp_path / "tables")]) == EXIT_OK
        table = json.loads(capsys.readouterr().out)
        assert [row["NS"] for row in table] == [60, 200]
        assert (tmp_path / "tables" / "summary_objective.csv").exists()

    def test_tampered_report_is_runtime_failure(self, quadratic_config_file, tmp_path):
        out = tmp_path / "out"
        cli_main(["run", "--config", str(quadratic_config_file()), "--out", str(out), "--format", "json"])
        path = out / "report.json"
        payload = json.loads(path.read_text())
        payload["rows"][0]["mapping_norm_sq"] += 1.0
        path.write_text(json.dumps(payload))
        assert cli_main(["summarize", str(path)]) == EXIT_RUNTIME


class TestBounds:

    def test_noiseless_bounds(self, quadratic_config_file, capsys):
        path = quadratic_config_file(noise=0.0)
        assert cli_main(["bounds", "--config", str(path), "--format", "json"]) == EXIT_OK
        table = json.loads(capsys.readouterr().out)
        assert [record["NS"] for record in table] == [60, 200]
        for record in table:
            assert record["m"] == 1
            assert record["N"] == record["NS"]
            assert record["rspg_nonconvex"] == pytest.approx(record["rspg_nonconvex_large_budget"], rel=1e-12)
            assert record["rspg_stochastic_mapping"] == pytest.approx(2 * record["pg_bound"], rel=1e-12)

    def test_nonincreasing_bound_only_on_bounded_set(self, quadratic_config_file, capsys):
        assert cli_main(["bounds", "--config", str(quadratic_config_file()), "--format", "json"]) == EXIT_OK
        unbounded = json.loads(capsys.readouterr().out)
        assert all(record["convex_nonincreasing"] is None for record in unbounded)
        path = quadratic_config_file(extra="box = 2.0\n")
        assert cli_main(["bounds", "--config", str(path), "--format", "json"]) == EXIT_OK
        bounded = json.loads(capsys.readouterr().out)
        for record in bounded:
            assert record["convex_nonincreasing"] is not None
            assert record["convex_nonincreasing"] >= record["convex_nondecreasing"]


class TestVerify:

    def test_all_checks_pass(self, capsys):
        assert cli_main(["verify", "--seed", "0"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 8
        assert all(line.startswith("PASS") for line in lines)
