import json

import pytest
from click.testing import CliRunner

from flashmark.cli import main
from flashmark.device import SimProfile

MB = 1024 * 1024


@pytest.fixture
def campaign(tmp_path):
    profile = SimProfile(capacity=32 * MB, name="tinysim", free_block_pool=8)
    profile_path = tmp_path / "tinysim.json"
    profile_path.write_text(profile.to_json())
    out = tmp_path / "out"
    config = {
        "device": {"simulator_profile": str(profile_path)},
        "output_dir": str(out),
        "seed": 3,
        "suite": {
            "micros": ["granularity"],
            "io_count_by_pattern": {"SR": 16, "RR": 16, "SW": 16, "RW": 16},
            "base_target_size": 4 * MB,
            "extra_io_sizes": [],
        },
        "calibration": {
            "long_io_count": 256,
            "settle_pause_us": 1_000_000,
            "observe_reads": 256,
            "disturb_writes": 64,
            "probe_reads": 64,
        },
    }
    config_path = tmp_path / "campaign.json"
    config_path.write_text(json.dumps(config))
    return config_path, out


def invoke(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


class TestPipeline:
    def test_full_pipeline(self, campaign):
        config_path, out = campaign
        r = invoke(["format", "--config", str(config_path)])
        assert r.exit_code == 0, r.output
        assert (out / "device_state.bin").exists()
        assert (out / "manifest-format.json").exists()

        r = invoke(["calibrate", "--config", str(config_path)])
        assert r.exit_code == 0, r.output
        profile = json.loads((out / "device_profile.json").read_text())
        assert set(profile["startup"]) == {"SR", "RR", "SW", "RW"}

        r = invoke(["plan", "--config", str(config_path), "--dry-run"])
        assert r.exit_code == 0, r.output
        assert "granularity" in r.output
        assert not (out / "plan.json").exists()

        r = invoke(["plan", "--config", str(config_path)])
        assert r.exit_code == 0, r.output
        plan = json.loads((out / "plan.json").read_text())
        assert plan["format_version"] == 1

        r = invoke(["run", "--config", str(config_path)])
        assert r.exit_code == 0, r.output
        traces = list((out / "traces").rglob("run*.csv"))
        assert traces, "no traces written"

        r = invoke(["report", "--config", str(config_path)])
        assert r.exit_code == 0, r.output
        summary = json.loads((out / "report" / "summary.json").read_text())
        assert summary["baseline_cost_us"]["SR"] > 0
        # micro-benchmarks that never ran stay null, not fabricated
        assert summary["locality_area"] is None
        assert summary["pause_effect_us"] is None
        assert summary["order"] == {"reverse": None, "in_place": None, "large_incr": None}
        assert (out / "report" / "plots" / "granularity.tsv").exists()
        assert (out / "report" / "summary.txt").read_text().count("\n") >= 2

    def test_rerun_performs_zero_ios(self, campaign):
        config_path, out = campaign
        for cmd in (["format"], ["calibrate"], ["plan"], ["run"]):
            assert invoke(cmd + ["--config", str(config_path)]).exit_code == 0
        r = invoke(["run", "--config", str(config_path)])
        assert r.exit_code == 0
        assert "runs executed: 0" in r.output

    def test_format_already_done_short_circuits(self, campaign):
        config_path, _ = campaign
        assert invoke(["format", "--config", str(config_path)]).exit_code == 0
        r = invoke(["format", "--config", str(config_path)])
        assert r.exit_code == 0
        assert "already complete" in r.output

    def test_manifest_contents(self, campaign):
        config_path, out = campaign
        invoke(["format", "--config", str(config_path)])
        manifest = json.loads((out / "manifest-format.json").read_text())
        assert manifest["tool_version"]
        assert manifest["seed"] == 3
        assert len(manifest["config_hash"]) == 64

    def test_format_resumes_from_journal_checkpoint(self, campaign, tmp_path):
        # interrupt a format after 100 writes, journal the checkpoint,
        # then let the command pick it up and finish; the device must
        # end up in the same state as an uninterrupted format
        from flashmark.cli import CampaignConfig
        from flashmark.methodology import enforce_random_state
        from flashmark.patterns import derive_seed

        config_path, out = campaign
        cfg = CampaignConfig.load(config_path)
        dev = cfg.open_device()
        partial = enforce_random_state(dev, seed=derive_seed(cfg.seed, 0xF0), max_ios=100)
        assert partial.coverage < 1.0
        cfg.persist_device(dev)
        cfg.journal().record("format", status="progress", ios=partial.ios_issued)

        r = invoke(["format", "--config", str(config_path)])
        assert r.exit_code == 0
        assert "resuming format at IO 100" in r.output

        # reference: one-shot format of the same profile and seed
        reference = cfg.open_device(restore_state=False)
        enforce_random_state(reference, seed=derive_seed(cfg.seed, 0xF0))
        resumed = cfg.open_device()
        assert resumed.snapshot_state() == reference.snapshot_state()


class TestValidation:
    def test_raw_device_requires_force(self, tmp_path):
        blob = tmp_path / "disk"
        blob.write_bytes(b"\0" * MB)
        config = {
            "device": {"raw_path": str(blob)},
            "output_dir": str(tmp_path / "out"),
        }
        p = tmp_path / "c.json"
        p.write_text(json.dumps(config))
        r = invoke(["format", "--config", str(p)])
        assert r.exit_code == 2
        assert "force" in r.output

    def test_two_device_selectors_rejected(self, tmp_path):
        config = {
            "device": {"raw_path": "/dev/null", "simulator_profile": "highend-ssd"},
            "output_dir": str(tmp_path / "out"),
        }
        p = tmp_path / "c.json"
        p.write_text(json.dumps(config))
        r = invoke(["plan", "--config", str(p)])
        assert r.exit_code == 2

    def test_run_without_plan_fails_validation(self, campaign):
        config_path, _ = campaign
        r = invoke(["run", "--config", str(config_path)])
        assert r.exit_code == 2

    def test_unopenable_raw_device_exits_three(self, tmp_path):
        config = {
            "device": {"raw_path": str(tmp_path / "does-not-exist")},
            "output_dir": str(tmp_path / "out"),
            "force": True,
        }
        p = tmp_path / "c.json"
        p.write_text(json.dumps(config))
        r = invoke(["format", "--config", str(p), "--force"])
        assert r.exit_code == 3

    def test_resume_false_repeats_runs(self, campaign):
        config_path, out = campaign
        for cmd in (["format"], ["calibrate"], ["plan"], ["run"]):
            assert invoke(cmd + ["--config", str(config_path)]).exit_code == 0
        cfg = json.loads(config_path.read_text())
        cfg["resume"] = False
        config_path.write_text(json.dumps(cfg))
        r = invoke(["run", "--config", str(config_path)])
        assert r.exit_code == 0
        assert "runs executed: 0" not in r.output

    def test_unknown_suite_option_rejected(self, tmp_path):
        config = {
            "device": {"simulator_profile": "highend-ssd"},
            "output_dir": str(tmp_path / "out"),
            "suite": {"warp_speed": True},
        }
        p = tmp_path / "c.json"
        p.write_text(json.dumps(config))
        r = invoke(["plan", "--config", str(p)])
        assert r.exit_code == 2
