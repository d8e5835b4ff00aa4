"""Config loading: defaults, validation errors, round-trip."""
import json
from pathlib import Path

import pytest
import yaml

from src.adacomm import AdaCommConfig
from src.config_loader import (
    ConfigError,
    dump_config,
    dump_delay,
    load_config,
    parse_config,
    parse_config_dict,
    parse_delay,
    with_sweep,
    with_value,
)
from src.engine import FixedPeriod
from src.sweep import run_simulation

ROOT = Path(__file__).parent


def _minimal(**overrides):
    data = {
        "objective": {"kind": "NoisyQuadratic", "dimension": 4},
        "train": {"workers": 2, "lr": 0.1, "max_time": 10.0},
        "adacomm": {"T0": 10.0},
    }
    data.update(overrides)
    return data


class TestParse:
    def test_defaults_filled(self):
        cfg = parse_config_dict(_minimal())
        ac = cfg.adacomm
        assert (ac.gamma, ac.mode, ac.tau_max, ac.slack, ac.defer_lr_decay) == (0.5, "LrCoupledApprox", 100, 0, True)
        assert cfg.train.lr_schedule.factor == 0.1
        assert cfg.seed == 0
        assert isinstance(cfg.train.schedule, AdaCommConfig)
        assert cfg.train.batch_size == 1
        assert cfg.delay.compute.kind == "Constant"

    def test_fixed_period_without_adacomm(self):
        data = _minimal()
        del data["adacomm"]
        data["train"]["tau"] = 8
        cfg = parse_config_dict(data)
        assert cfg.adacomm is None
        assert cfg.train.schedule == FixedPeriod(8)

    def test_gamma_out_of_range(self):
        with pytest.raises(ConfigError, match=r"gamma must be in \(0,1\)"):
            parse_config_dict(_minimal(adacomm={"T0": 10.0, "gamma": 1.5}))

    def test_tau0_zero(self):
        with pytest.raises(ConfigError, match="tau0"):
            parse_config_dict(_minimal(adacomm={"T0": 10.0, "tau0": 0}))

    def test_nonpositive_t0(self):
        with pytest.raises(ConfigError, match="T0"):
            parse_config_dict(_minimal(adacomm={"T0": 0.0}))

    def test_unknown_key_names_path(self):
        data = _minimal()
        data["objective"]["noize"] = {"C": 1.0}
        with pytest.raises(ConfigError, match=r"objective: unknown key\(s\) \['noize'\]"):
            parse_config_dict(data)
        with pytest.raises(ConfigError, match="config: unknown"):
            parse_config_dict(_minimal(extra=1))

    def test_batch_larger_than_dataset(self):
        data = _minimal(objective={"kind": "Logistic", "dimension": 3, "n_points": 8})
        data["train"]["batch_size"] = 9
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config_dict(data)

    def test_epoch_decay_needs_dataset(self):
        data = _minimal()
        data["train"]["lr_decay"] = {"unit": "epoch", "milestones": [10]}
        with pytest.raises(ConfigError, match="epoch"):
            parse_config_dict(data)

    def test_config_without_lr_decay_runs(self):
        data = _minimal()
        del data["adacomm"]
        cfg = parse_config_dict(data)
        assert cfg.train.lr_schedule.milestones == ()
        trace = run_simulation(cfg)
        assert len(trace) > 0
        assert set(trace.lrs) == {0.1}

    def test_missing_stop_criterion(self):
        data = _minimal()
        del data["train"]["max_time"]
        with pytest.raises(ConfigError, match="stop criterion"):
            parse_config_dict(data)

    def test_bad_types(self):
        data = _minimal()
        data["train"]["workers"] = "four"
        with pytest.raises(ConfigError, match="train.workers"):
            parse_config_dict(data)

    def test_unknown_objective_kind(self):
        with pytest.raises(ConfigError, match="objective.kind"):
            parse_config_dict(_minimal(objective={"kind": "Resnet", "dimension": 2}))

    def test_custom_scaling_table_keys(self):
        cfg = parse_config_dict(_minimal(delay={"D0": 1.0, "scaling": {"kind": "Custom", "table": {"2": 1.5}}}))
        assert cfg.delay.table == {2: 1.5}

    def test_sweep_axis_must_exist(self):
        with pytest.raises(ConfigError, match="sweep.axis"):
            parse_config_dict(_minimal(sweep={"axis": "train.nope", "values": [1]}))


class TestFiles:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.yaml")

    def test_json_and_yaml_agree(self, tmp_path):
        data = _minimal(delay={"compute": {"kind": "Exponential", "mean": 2.0}, "D0": 0.5, "scaling": "Log2Tree"})
        (tmp_path / "run.json").write_text(json.dumps(data), encoding="utf-8")
        (tmp_path / "run.yaml").write_text(yaml.safe_dump(data), encoding="utf-8")
        assert parse_config(tmp_path / "run.json") == parse_config(tmp_path / "run.yaml")

    def test_shipped_default_config(self):
        cfg = parse_config(ROOT / "config.yaml")
        assert cfg.objective.kind == "NoisyQuadratic"
        assert cfg.adacomm.tau0_grid == (1, 4, 16)
        assert cfg.train.workers == 4


class TestRoundTrip:
    @pytest.mark.parametrize("data", [
        _minimal(),
        _minimal(objective={"kind": "TinyMLP", "dimension": 3, "n_points": 50, "hidden": 6, "data_seed": 2},
                 delay={"compute": {"kind": "ShiftedExponential", "mean": 1.0, "shift": 0.2},
                        "scaling": {"kind": "Custom", "table": {2: 3.0}}},
                 sweep={"axis": "train.lr", "values": [0.1, 0.05], "targets": [0.5]},
                 seed=17),
    ])
    def test_parse_dump_parse(self, data):
        cfg = parse_config_dict(data)
        assert parse_config_dict(dump_config(cfg)) == cfg

    def test_round_trip_through_json(self):
        cfg = parse_config_dict(_minimal(delay={"scaling": {"kind": "Custom", "table": {2: 3.0}}}))
        assert parse_config_dict(json.loads(json.dumps(dump_config(cfg)))) == cfg

    def test_delay_section_round_trip(self):
        cfg = parse_config_dict(_minimal(delay={"compute": {"kind": "Exponential", "mean": 2.0}, "D0": 0.5,
                                                "scaling": {"kind": "Custom", "table": {2: 3.0}}}))
        assert parse_delay(json.loads(json.dumps(dump_delay(cfg.delay)))) == cfg.delay

    def test_with_sweep_overrides(self):
        cfg = parse_config_dict(_minimal(sweep={"axis": "train.lr", "values": [0.1]}))
        assert with_sweep(cfg) is cfg
        changed = with_sweep(cfg, values=[0.2, 0.3])
        assert (changed.sweep.axis, changed.sweep.values) == ("train.lr", (0.2, 0.3))
        with pytest.raises(ConfigError, match="sweep"):
            with_sweep(parse_config_dict(_minimal()), values=[1, 2])

    def test_with_value(self):
        data = _minimal()
        del data["adacomm"]
        cfg = parse_config_dict(data)
        changed = with_value(cfg, "train.tau", 4, seed=9)
        assert changed.train.schedule == FixedPeriod(4)
        assert changed.seed == 9
        assert cfg.train.schedule == FixedPeriod(1)
        with pytest.raises(ConfigError):
            with_value(cfg, "adacomm.gamma", 0.3)
        with pytest.raises(ConfigError):
            with_value(cfg, "train.tau", 0)
