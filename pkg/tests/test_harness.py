import csv
import json
import os

import numpy as np
import pytest

from vitalguard.agent import LogRow
from vitalguard.errors import ModelNotReady
from vitalguard.harness import (
    ExperimentConfig,
    block_rates,
    build_stream,
    load_models,
    models_for_seed,
    run_fig4,
    run_fig5,
    save_models,
    train_models,
)


def tiny_config(**over):
    base = dict(
        synthetic_bout_len=256, synthetic_cycles=1,
        deltas=(0.4,), seeds=(0,), methods=("full", "unfiltered"),
        adapt_slots=40, eval_slots=30, block_size=10, n_blocks=4,
        denoiser_epochs=2, denoiser_hidden=24, reverse_stride=8,
        agent_hyper={"hidden": [12], "batch": 16},
    )
    base.update(over)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("work"))


@pytest.fixture(scope="module")
def models(workdir):
    return models_for_seed(tiny_config(), workdir, 0, train_missing=True)


def test_config_round_trip(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.from_json(path)
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"not_a_key": 1})


def test_models_save_load_round_trip(models, workdir, tmp_path):
    cfg = tiny_config()
    save_models(models, str(tmp_path))
    back = load_models(cfg, str(tmp_path))
    np.testing.assert_array_equal(back.channel_means, models.channel_means)
    np.testing.assert_array_equal(back.g, models.g)
    X = np.random.default_rng(0).normal(size=(2, 23, 64)) + 1.0
    sd = 0.2 * np.abs(models.channel_means)
    np.testing.assert_array_equal(back.denoiser.transform(X, noise_sd=sd),
                                  models.denoiser.transform(X, noise_sd=sd))


def test_load_models_missing_raises(tmp_path):
    with pytest.raises(ModelNotReady):
        load_models(tiny_config(), str(tmp_path / "nope"))


def test_build_stream_deterministic(models):
    cfg = tiny_config()
    a = build_stream(cfg, models, 0, "S1_Uniform", 0.4, 20, 0)
    b = build_stream(cfg, models, 0, "S1_Uniform", 0.4, 20, 0)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    np.testing.assert_array_equal(a.diffusion, b.diffusion)
    np.testing.assert_array_equal(a.anomalous, b.anomalous)
    assert a.clean.shape == (20, 23, cfg.window_len)
    assert a.anomalous.any() and not a.anomalous.all()
    # variants route to the right arrays
    assert a.variant("unfiltered") is a.noisy
    assert a.variant("wiener") is a.wiener
    assert a.variant("full") is a.diffusion


def test_fig4_writes_csv_and_manifest(workdir):
    cfg = tiny_config()
    rows, csv_path = run_fig4(cfg, workdir)
    assert os.path.exists(csv_path)
    with open(csv_path) as f:
        reader = list(csv.reader(f))
    assert reader[0] == ["scenario", "method", "delta", "seed",
                         "p_fa", "p_ma", "total"]
    assert len(reader) - 1 == len(rows)
    assert len(rows) == len(cfg.scenarios) * len(cfg.deltas) * len(cfg.methods)
    manifest = os.path.join(os.path.dirname(csv_path), "fig4.manifest.json")
    with open(manifest) as f:
        doc = json.load(f)
    assert doc["config"] == cfg.to_dict()
    assert "fig4.csv" in doc["outputs"]
    for row in rows:
        assert 0.0 <= row[4] <= 1.0 and 0.0 <= row[5] <= 1.0


def test_fig4_byte_identical_rerun(workdir):
    cfg = tiny_config()
    _, csv_path = run_fig4(cfg, workdir)
    with open(csv_path, "rb") as f:
        first = f.read()
    _, csv_path = run_fig4(cfg, workdir)
    with open(csv_path, "rb") as f:
        second = f.read()
    assert first == second


def test_fig5_block_structure(workdir):
    cfg = tiny_config(methods=("full",))
    rows, csv_path = run_fig5(cfg, workdir)
    assert os.path.exists(csv_path)
    blocks = [r[1] for r in rows]
    assert blocks == sorted(blocks)
    assert len(rows) == cfg.n_blocks
    for _, _, fa, ma, total in rows:
        assert 0.0 <= fa <= 1.0 and 0.0 <= ma <= 1.0
        assert total == pytest.approx(fa + ma)


def test_block_rates_math():
    rows = []
    for slot in range(20):
        rows.append(LogRow(slot=slot, episode=slot, activity=0, score=0.0,
                           threshold=1.0, fired=slot % 2 == 0,
                           anomalous=slot % 4 == 0))
    rates = block_rates(rows, 10)
    assert len(rates) == 2
    # anomalous slots are even, hence always fired -> ma 0 everywhere
    assert [ma for _, ma in rates] == [0.0, 0.0]
    # block 1: normals 1,2,3,5,6,7,9 with 2,6 fired; block 2: normals
    # 10,11,13,14,15,17,18,19 with 10,14,18 fired
    assert rates[0][0] == pytest.approx(2 / 7)
    assert rates[1][0] == pytest.approx(3 / 8)
    assert block_rates(rows, 30) == []
