import json

from click.testing import CliRunner

from conftest import RAIL_PASSAGES, make_eid_entry
from worldline.cli import main
from worldline.evaluation import save_eid


def write_kb(tmp_path):
    path = tmp_path / "kb.jsonl"
    path.write_text(
        "\n".join(json.dumps(p.to_dict(), ensure_ascii=False) for p in RAIL_PASSAGES) + "\n",
        encoding="utf-8",
    )
    return path


def write_accidents(tmp_path):
    path = tmp_path / "accidents.jsonl"
    records = [
        {"id": f"a{i}", "domain": "road", "text": f"tanker fire on the ring road {i}", "severity": "major"}
        for i in range(4)
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


class TestKbBuild:
    def test_build_writes_index_dir(self, tmp_path):
        kb = write_kb(tmp_path)
        result = CliRunner().invoke(main, ["kb", "build", "--input", str(kb), "--out", str(tmp_path / "idx")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "idx" / "passages.jsonl").exists()
        assert (tmp_path / "idx" / "stats.json").exists()
        assert "indexed 4 passages" in result.output


class TestDeduce:
    def test_auto_run_writes_snapshot(self, tmp_path):
        kb = write_kb(tmp_path)
        out = tmp_path / "snapshot.json"
        result = CliRunner().invoke(
            main,
            [
                "deduce",
                "--initial", "A waste bin on the subway platform caught fire",
                "--auto",
                "--kb", str(kb),
                "--store", str(tmp_path / "store"),
                "--out", str(out),
                "--seed", "0",
            ],
        )
        assert result.exit_code == 0, result.output
        snapshot = json.loads(out.read_text(encoding="utf-8"))
        assert snapshot["state"] == "finalized"
        assert len(snapshot["selected_path"]) == 4
        assert snapshot["metrics"]["fc"] == 1.0

    def test_requires_auto_flag(self, tmp_path):
        result = CliRunner().invoke(main, ["deduce", "--initial", "x"])
        assert result.exit_code != 0

    def test_mock_script_activates_scripted_provider(self, tmp_path):
        script = tmp_path / "script.json"
        script.write_text(json.dumps(
            [{"capability": "generate", "reply": f"Scripted branch {i}"} for i in range(9)]
        ))
        out = tmp_path / "snap.json"
        result = CliRunner().invoke(
            main,
            [
                "deduce",
                "--initial", "Initial incident",
                "--auto",
                "--mock", str(script),
                "--store", str(tmp_path / "store"),
                "--out", str(out),
                "--ablation", "none",
                "--no-image-gen",
            ],
        )
        assert result.exit_code == 0, result.output
        snapshot = json.loads(out.read_text(encoding="utf-8"))
        texts = {n["text"] for n in snapshot["nodes"]}
        assert "Scripted branch 0" in texts


class TestTransform:
    def test_transform_outputs_jsonl(self, tmp_path):
        accidents = write_accidents(tmp_path)
        kb = write_kb(tmp_path)
        result = CliRunner().invoke(
            main,
            ["transform", "--domain", "urban_rail_transit", "-n", "2",
             "--accidents", str(accidents), "--kb", str(kb), "--seed", "3"],
        )
        assert result.exit_code == 0, result.output
        lines = [l for l in result.output.strip().splitlines() if l.startswith("{")]
        instances = [json.loads(l) for l in lines]
        assert len(instances) == 2
        assert all(i["domain"] == "urban_rail_transit" for i in instances)


class TestEval:
    def test_eval_writes_report(self, tmp_path):
        dataset = tmp_path / "eid.jsonl"
        save_eid([make_eid_entry("e1"), make_eid_entry("e2")], dataset)
        report_path = tmp_path / "report.json"
        result = CliRunner().invoke(
            main,
            ["eval", "--dataset", str(dataset), "--backend", "raw",
             "--report", str(report_path), "--kb", str(write_kb(tmp_path))],
        )
        assert result.exit_code == 0, result.output
        assert "FC=" in result.output and "accuracy=" in result.output
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert len(report["per_entry"]) == 2
