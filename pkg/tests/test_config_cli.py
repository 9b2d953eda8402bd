import hashlib
import json
from pathlib import Path

import pytest

from s3clip.cli import main
from s3clip.config import ExperimentConfig, load_config, parse_config
from s3clip.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = CONFIGS / "tiny.json"


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestConfig:
    def test_defaults_valid(self):
        assert parse_config({}).sampler.P == 4

    @pytest.mark.parametrize("name", ["tiny.json", "toy.json"])
    def test_shipped_configs_load(self, name):
        assert isinstance(load_config(CONFIGS / name), ExperimentConfig)

    def test_unknown_top_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config({"optimizer": {}})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="trainer"):
            parse_config({"trainer": {"lr": 1.0}})

    def test_wrong_type(self):
        with pytest.raises(ConfigError):
            parse_config({"seed": "seven"})
        with pytest.raises(ConfigError):
            parse_config({"sampler": {"D": 0.5}})
        with pytest.raises(ConfigError):
            parse_config({"trainer": {"audit_phases": 1}})

    def test_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config({"schema_version": 2})

    def test_cross_section_consistency(self):
        with pytest.raises(ConfigError):
            parse_config({"sampler": {"encoder_input": [128, 64]}})

    def test_seed_override(self):
        assert load_config(TINY, seed=42).seed == 42

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestCLI:
    def test_gen_data_deterministic(self, tmp_path, capsys):
        assert main(["gen-data", "--config", str(TINY), "--out", str(tmp_path / "a")]) == 0
        assert main(["gen-data", "--config", str(TINY), "--out", str(tmp_path / "b")]) == 0
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").is_file()

    def test_config_error_exit_2(self, tmp_path, capsys):
        bad = write(tmp_path, {"bogus": 1})
        assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "unknown" in capsys.readouterr().err
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2

    def test_data_error_exit_4(self, tmp_path):
        cfg = json.loads(TINY.read_text())
        cfg["data"]["root"] = str(tmp_path / "empty")
        (tmp_path / "empty").mkdir()
        assert main(["train", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 4

    def test_range_not_straddling_is_config_error(self, tmp_path):
        cfg = json.loads(TINY.read_text())
        cfg["data"]["resolution_range"] = [40, 60]
        assert main(["gen-data", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 2

    def test_eval_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--config", str(TINY), "--out", str(tmp_path)]) == 2
        assert main(["eval", "--config", str(TINY), "--out", str(tmp_path),
                     "--checkpoint", str(tmp_path / "none.npz")]) == 3

    def test_train_eval_demo(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(TINY), "--out", str(out)]) == 0
        assert (out / "checkpoint.npz").is_file() and (out / "metrics.jsonl").is_file()
        ck = str(out / "checkpoint.npz")
        assert main(["eval", "--config", str(TINY), "--out", str(out), "--checkpoint", ck]) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report) == {"a2a", "a2g", "g2a"}
        assert "A->G" in (out / "table.txt").read_text()
        assert main(["eval", "--config", str(TINY), "--out", str(tmp_path / "e"), "--checkpoint", ck,
                     "--protocol", "g2a"]) == 0
        assert set(json.loads((tmp_path / "e" / "report.json").read_text())) == {"g2a"}
        assert main(["degrade-demo", "--config", str(TINY), "--out", str(tmp_path / "d1"), "--checkpoint", ck]) == 0
        assert main(["degrade-demo", "--config", str(TINY), "--out", str(tmp_path / "d2"), "--checkpoint", ck]) == 0
        a = (tmp_path / "d1" / "degrade_demo.json").read_text()
        assert a == (tmp_path / "d2" / "degrade_demo.json").read_text()
        rows = json.loads(a)["degradations"]
        assert {r["degradation"][0] for r in rows} >= {"gaussian_blur", "jpeg"}
        assert all(r["drift_mean"] >= 0 for r in rows)

    def test_ingest_from_disk(self, tmp_path):
        assert main(["gen-data", "--config", str(TINY), "--out", str(tmp_path / "corpus")]) == 0
        cfg = json.loads(TINY.read_text())
        cfg["data"]["root"] = str(tmp_path / "corpus")
        cfg["trainer"]["stage2_epochs"] = 1
        assert main(["train", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
