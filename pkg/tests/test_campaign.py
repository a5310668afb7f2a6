import csv
import hashlib
import json

import pytest

from mbwu.campaign import CampaignConfig, emit_plots, precondition, run_campaign
from mbwu.errors import (ConfigError, IncomparableResultsError, IncompleteCampaignError,
                         PreconditionError, SafetyRefusalError)
from mbwu.methodology import EfficiencyReport, MbwuUnit, compare

WORKLOAD = {"value_size": 4096, "dataset_size": 40 << 30}


def sim_config(tmp_path, bundle="host_integrated", name=None, **extra):
    data = {"workload": dict(WORKLOAD), "backend": {"kind": "simulated", "bundle": bundle},
            "output_dir": str(tmp_path / (name or bundle))}
    data.update(extra)
    return CampaignConfig.from_dict(data, base_dir=tmp_path)


# -- preconditioning -------------------------------------------------------

def test_precondition_refuses_without_confirmation(tmp_path):
    dev = tmp_path / "dev.img"
    dev.write_bytes(b"precious")
    with pytest.raises(SafetyRefusalError):
        precondition([dev])
    assert dev.read_bytes() == b"precious"


def test_precondition_purges_and_fills_file(tmp_path):
    dev = tmp_path / "dev.img"
    dev.write_bytes(b"\xAA" * (64 << 20))
    report = precondition([dev], confirm=True, seed=1)
    data = dev.read_bytes()
    assert len(data) == 64 << 20
    assert b"\xAA" * 64 not in data[:1 << 20]
    assert report["devices"][0]["status"] == "ok" and report["devices"][0]["size"] == 64 << 20


def test_precondition_purge_only_zeroes(tmp_path):
    dev = tmp_path / "dev.img"
    dev.write_bytes(b"\x01" * 4096)
    precondition([dev], mode="purge_only", confirm=True)
    assert dev.read_bytes() == bytes(4096)


def test_precondition_missing_device(tmp_path):
    with pytest.raises(PreconditionError) as err:
        precondition([tmp_path / "absent"], confirm=True)
    assert err.value.report["devices"][0]["status"].startswith("failed")


def test_precondition_simulated_is_noop():
    assert precondition([], simulated=True)["noop"] is True


def test_precondition_bad_mode():
    with pytest.raises(ConfigError):
        precondition([], mode="shred")


# -- configuration ---------------------------------------------------------

@pytest.mark.parametrize("data", [
    {"backend": {"kind": "simulated"}, "output_dir": "x"},
    {"workload": WORKLOAD, "backend": {"kind": "cloud"}, "output_dir": "x"},
    {"workload": WORKLOAD, "backend": {"kind": "simulated"}, "output_dir": "x", "unit_source": "guess"},
    {"workload": "missing.json", "backend": {"kind": "simulated"}, "output_dir": "x"},
])
def test_bad_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        CampaignConfig.from_dict(data, base_dir=tmp_path)


def test_config_file_overrides(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps(WORKLOAD))
    (tmp_path / "c.json").write_text(json.dumps(
        {"workload": "w.json", "backend": {"kind": "simulated", "bundle": "host_network"},
         "output_dir": "out"}))
    cfg = CampaignConfig.from_file(tmp_path / "c.json", {"backend.seed": 3, "max_devices": 2})
    assert cfg.backend["seed"] == 3 and cfg.max_devices == 2
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.bundle().name == "host_network"


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        CampaignConfig.from_file(tmp_path / "nope.json")


# -- simulated campaigns ---------------------------------------------------

def test_campaign_artifacts_and_manifest(tmp_path):
    arts = run_campaign(sim_config(tmp_path))
    out = tmp_path / "host_integrated"
    for name in ("config.json", "workload.json", "unit.json", "platform_result.json", "efficiency.json",
                 "unit_throughput.csv", "samples_n1.csv", "mbwu_vs_devices.csv", "wops_vs_threads.csv",
                 "watts_vs_devices.csv", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    for entry in manifest["files"]:
        assert hashlib.sha256((out / entry["file"]).read_bytes()).hexdigest() == entry["sha256"]
    assert not (out / ".lock").exists()
    assert EfficiencyReport.from_json(arts["efficiency.json"]).M == pytest.approx(6.0, abs=0.05)


def test_campaign_is_reproducible(tmp_path):
    a = run_campaign(sim_config(tmp_path, name="a"))
    b = run_campaign(sim_config(tmp_path, name="b"))
    for name in ("unit.json", "platform_result.json", "efficiency.json", "mbwu_vs_devices.csv"):
        assert open(a[name]).read() == open(b[name]).read()


def test_reused_unit_and_comparison(tmp_path):
    host = run_campaign(sim_config(tmp_path))
    emb = run_campaign(sim_config(tmp_path, "embedded_integrated",
                                  unit_source={"reuse": host["unit.json"]}))
    assert "unit_throughput.csv" not in emb
    s = compare(EfficiencyReport.from_json(host["efficiency.json"]),
                EfficiencyReport.from_json(emb["efficiency.json"]))
    assert s.cost_per_mbwu == pytest.approx(64.0, abs=0.5)
    assert s.power_per_mbwu == pytest.approx(39.6, abs=0.5)


def test_reused_unit_for_other_workload_refused_before_running(tmp_path):
    host = run_campaign(sim_config(tmp_path))
    cfg = sim_config(tmp_path, "embedded_integrated", unit_source={"reuse": host["unit.json"]})
    cfg.workload = cfg.workload.replace(read_fraction=0.9)
    with pytest.raises(IncomparableResultsError):
        run_campaign(cfg)
    assert not (tmp_path / "embedded_integrated").exists()


def test_missing_reused_unit(tmp_path):
    with pytest.raises(ConfigError):
        run_campaign(sim_config(tmp_path, unit_source={"reuse": str(tmp_path / "nope.json")}))


def test_failed_campaign_writes_failed_manifest(tmp_path):
    cfg = sim_config(tmp_path, max_devices=99)
    with pytest.raises(Exception):
        run_campaign(cfg)
    manifest = json.loads((cfg.output_dir / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "platform"


def test_concurrent_campaign_is_locked(tmp_path):
    cfg = sim_config(tmp_path)
    cfg.output_dir.mkdir()
    (cfg.output_dir / ".lock").write_text("1")
    with pytest.raises(ConfigError):
        run_campaign(cfg)


def test_custom_unit_bundle(tmp_path):
    arts = run_campaign(sim_config(tmp_path, backend={"kind": "simulated", "bundle": "host_network",
                                                      "unit_bundle": "host_integrated"}))
    unit = MbwuUnit.from_json(arts["unit.json"])
    assert unit.wops == pytest.approx(2500, rel=0.01)


# -- plots -----------------------------------------------------------------

def test_emit_plots_from_completed_campaign(tmp_path):
    run_campaign(sim_config(tmp_path))
    paths = emit_plots(tmp_path / "host_integrated", tmp_path / "plots")
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["n_devices", "wops", "mbwus", "watts", "binding_resource"]
    assert float(rows[-1]["mbwus"]) == pytest.approx(6.0, abs=0.05)
    assert all(r["binding_resource"] for r in rows)


def test_emit_plots_empty_dir(tmp_path):
    with pytest.raises(IncompleteCampaignError) as err:
        emit_plots(tmp_path)
    assert any("unit.json" in m for m in err.value.missing)


# -- live campaign ---------------------------------------------------------

@pytest.mark.slow
def test_live_campaign_with_spawned_daemon(tmp_path):
    cfg = CampaignConfig.from_dict({
        "workload": {"value_size": 1024, "record_count": 2000, "seed": 1},
        "backend": {"kind": "live", "spawn_daemons": ["dev0"], "duration": 4.0, "interval": 0.5,
                    "media_id": "loopback"},
        "platform": {"name": "desk", "cost": 1000, "volume": 0.01},
        "max_threads": 2,
        "max_devices": 1,
        "output_dir": "out",
    }, base_dir=tmp_path)
    arts = run_campaign(cfg)
    eff = EfficiencyReport.from_json(arts["efficiency.json"])
    assert eff.M > 0 and eff.media_id == "loopback"
    assert json.loads(open(arts["manifest.json"]).read())["status"] == "complete"
