import json
import math

import pytest

import envedit


def toy_config():
    cfg = envedit.default_config()
    cfg["world"].update(num_envs=4, nodes_per_env=7, feature_dim=12, style_dim=4, grid_h=3, grid_w=3,
                        episodes=60, hops=[1, 3])
    cfg["edits"].update(variants=["E_st", "E_is1_m"], style_library_size=48)
    cfg["speaker"].update(iterations=20, batch_size=8)
    cfg["agent"].update(hidden=12)
    cfg["train"].update(batch_size=6, stage2_iterations=8, val_every=4, edits=["E_st"])
    return cfg


def test_instance_norm_hand_case():
    out = envedit.conditional_instance_norm([0.0, 2.0], [2.0, 2.0], [1.0, 1.0])
    assert out == pytest.approx([-1.0, 3.0], abs=1e-12)
    std = envedit.conditional_instance_norm([1.0, 2.0, 3.0, 7.0], [1.0] * 4, [0.0] * 4)
    mean = sum(std) / 4
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert math.sqrt(sum((x - mean) ** 2 for x in std) / 4) == pytest.approx(1.0, abs=1e-9)


def test_ensemble_and_spl():
    assert envedit.ensemble_decide([[2.0, 0.0], [0.0, 2.0]]) == 0
    assert envedit.ensemble_decide([[0.1, 0.9, 0.3], [0.2, 0.4, 0.8]]) == 1
    assert envedit.spl(1.0, 8.0, 10.0) == pytest.approx(0.8)
    assert envedit.spl(0.0, 8.0, 8.0) == 0.0


def test_config_validation():
    cfg = envedit.normalize_config({"train": {"batch_size": 4}})
    assert cfg["train"]["batch_size"] == 4
    assert cfg["edits"]["style_scope"] == "panorama"
    with pytest.raises(envedit.EnvEditError) as err:
        envedit.normalize_config({"train": {"warmup": 1}})
    assert err.value.code == "malformed_config"


def test_pipeline(tmp_path):
    cfg = toy_config()
    out = tmp_path / "ws"
    summary = envedit.worldgen(out, cfg, seed=21)
    assert summary["environments"] == 4
    assert envedit.edit(out, cfg)["sources"] == ["E_st", "E_is1_m"]
    run = envedit.train(out, cfg, name="py")
    assert run["stages"] == ["stage2"]

    teacher = envedit.evaluate(out, "agents/teacher", cfg, split="val_seen")
    assert teacher["reports"][0]["SR"] == 100.0
    assert teacher["reports"][0]["nDTW"] == 1.0
    agent = envedit.evaluate(out, ["agents/py/final"], cfg, source="E_is1_m", plot=True)
    row = agent["reports"][0]
    assert 0.0 <= row["SPL"] <= row["SR"] <= 100.0
    assert envedit.read_artifact(out, agent["plot"]).startswith(b"<svg")

    env = json.loads(envedit.read_artifact(out, "world/envs/env_000.json"))
    same = envedit.dtw(env, [0, 1], [0, 1])
    assert same["dtw"] == 0.0 and same["ndtw"] == 1.0

    (out / "agents" / "py" / "final.bin").write_bytes(b"tampered")
    with pytest.raises(envedit.EnvEditError) as err:
        envedit.evaluate(out, "agents/py/final", cfg)
    assert err.value.code == "hash_mismatch"


def test_cli_entry_point(tmp_path, capsys):
    assert envedit.run(["eval", "--out", str(tmp_path)]) == 2
    assert envedit.run(["edit", "--out", str(tmp_path / "none")]) == 1
