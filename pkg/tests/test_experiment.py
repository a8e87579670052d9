import json
import math

import pytest

from opensiam.dataset import SplitSpec
from opensiam.experiment import (
    ExperimentConfig,
    ExperimentError,
    SyntheticSpec,
    load_config,
    run_experiment,
    run_trial,
    trial_seed,
)
from opensiam.rng import mix_seed, splitmix64
from opensiam.siamese import TrainConfig

FAST = dict(hidden_dims=(16, 16, 8), train=TrainConfig(epochs=5, batch_size=16))


def two_pass(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def test_splitmix64_reference_values():
    # first outputs of the SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    state = 0x9E3779B97F4A7C15
    assert splitmix64(state) == 0x6E789E6AA1B965F4


def test_mix_seed_order_and_range():
    assert mix_seed(1, 2) != mix_seed(2, 1)
    assert 0 <= mix_seed(2**64 - 1, 5) < 2**64
    with pytest.raises(ValueError):
        mix_seed(-1)


def test_structure_two_repetitions():
    cfg = ExperimentConfig(SyntheticSpec(30, 4, 8, 0.1, 1), [SplitSpec.absolute(5)], repetitions=2, **FAST)
    rep = run_experiment(cfg)
    (point,) = rep.points
    assert len(point.trials) == 2
    assert point.summary.aucs == tuple(t.auc for t in point.trials)
    assert all(t.n_known_ids == 5 and t.n_unknown_ids == 25 for t in point.trials)


def test_rerun_identical_and_single_trial_reproducible():
    cfg = ExperimentConfig(SyntheticSpec(12, 4, 8, 0.5, 2), [SplitSpec.absolute(3), SplitSpec.absolute(6)],
                           pairing="P2", repetitions=3, master_seed=77, **FAST)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert [t.auc for p in a.points for t in p.trials] == [t.auc for p in b.points for t in p.trials]
    store = cfg.features.build()
    t = a.points[1].trials[2]
    assert t.trial_seed == trial_seed(77, 1, 2)
    again = run_trial(store, cfg.protocol[1], cfg, t.trial_seed, 1, 2)
    assert again.auc == t.auc and again.final_loss == t.final_loss


def test_parallel_jobs_match_serial():
    cfg = ExperimentConfig(SyntheticSpec(10, 4, 6, 0.5, 3), [SplitSpec.absolute(4)], repetitions=3, **FAST)
    serial = run_experiment(cfg)
    parallel = run_experiment(cfg, jobs=2)
    assert [t.auc for t in serial.points[0].trials] == [t.auc for t in parallel.points[0].trials]


def test_aggregate_matches_two_pass_oracle():
    cfg = ExperimentConfig(SyntheticSpec(15, 4, 8, 0.9, 4), [SplitSpec.absolute(5)], repetitions=10, **FAST)
    s = run_experiment(cfg).points[0].summary
    mean, std = two_pass(list(s.aucs))
    assert abs(s.mean - mean) <= 1e-12 and abs(s.std - std) <= 1e-12


def test_degenerate_point_reports_context():
    cfg = ExperimentConfig(SyntheticSpec(5, 4, 4, 0.1, 0), [SplitSpec.absolute(5)], repetitions=1, **FAST)
    with pytest.raises(ExperimentError) as err:
        run_experiment(cfg)
    assert err.value.stage == "split" and err.value.point == "5" and err.value.trial == 0
    assert "no unknown probes" in str(err.value)


def test_stage_errors_are_wrapped():
    cfg = ExperimentConfig(SyntheticSpec(5, 1, 4, 0.1, 0), [SplitSpec.absolute(2)], repetitions=1, **FAST)
    with pytest.raises(ExperimentError, match=r"\[split\] point=2 trial=0"):
        run_experiment(cfg)


def test_report_files(tmp_path):
    cfg = ExperimentConfig(SyntheticSpec(10, 4, 6, 0.3, 1), [SplitSpec.percentage(0.5)], repetitions=2,
                           output_dir=str(tmp_path / "out"), **FAST)
    rep = run_experiment(cfg)
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["points"][0]["label"] == "50%"
    assert [t["auc"] for t in data["points"][0]["trials"]] == [t.auc for t in rep.points[0].trials]
    assert data["config"]["master_seed"] == 0
    assert ExperimentConfig.from_dict(data["config"]).to_dict() == data["config"]
    roc_file = tmp_path / "out" / data["points"][0]["trials"][1]["roc_file"]
    assert roc_file.read_text().startswith("# auc ")
    table = (tmp_path / "out" / "report.txt").read_text()
    assert "50%" in table and "±" in table


class TestConfig:
    def test_presets(self):
        c = ExperimentConfig.from_dict({"features": "f.txt", "protocol": "EP-I"})
        assert [s.value for s in c.protocol] == [0.1, 0.5, 0.9]
        c = ExperimentConfig.from_dict({"features": "f.txt", "protocol": "EP-II"})
        assert [s.value for s in c.protocol] == [5, 10, 15, 20]
        assert c.repetitions == 10 and c.hidden_dims == (2048, 2048, 2048)

    def test_full_dict(self, tmp_path):
        d = {
            "features": {"synthetic": {"k": 20, "samples_per_id": 10, "dim": 64, "spread": 0.05, "seed": 1}},
            "protocol": {"mode": "absolute", "values": [5, 10]},
            "pairing": {"algorithm": "p2", "z": 3},
            "network": {"hidden_dims": [32, 32, 16]},
            "train": {"margin": 2.0, "learning_rate": 0.02, "epochs": 7, "batch_size": 4},
            "repetitions": 3,
            "master_seed": 5,
        }
        p = tmp_path / "c.json"
        p.write_text(json.dumps(d))
        c = load_config(p)
        assert c.pairing == "P2" and c.z == 3 and c.train.margin == 2.0 and c.features.k == 20

    @pytest.mark.parametrize("patch", [
        {"bogus": 1},
        {"protocol": "EP-III"},
        {"repetitions": 0},
        {"pairing": {"algorithm": "P3"}},
        {"train": {"margin": -1}},
    ])
    def test_invalid(self, patch):
        d = {"features": "f.txt", "protocol": "EP-II"}
        d.update(patch)
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(d)
