import pytest
import yaml

from shiftmem.config import ABLATIONS, RunConfig, TrainConfig, dump_config, load_config
from shiftmem.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    t = cfg.train
    assert (t.temperature, t.momentum, t.mask_ratio, t.lam) == (0.2, 0.999, 0.6, 2.0)
    assert (t.batch_size, t.epochs, t.warmup_epochs, t.base_lr) == (32, 30, 3, 1.5e-3)
    assert t.betas == (0.9, 0.95) and t.weight_decay == 0.05
    assert cfg.encoder.image_size == cfg.generator.image_size == 64
    assert (cfg.probe.epochs, cfg.probe.lr, cfg.probe.momentum, cfg.probe.weight_decay) == (30, 1e-3, 0.9, 1e-4)


def test_peak_lr():
    assert TrainConfig().peak_lr == pytest.approx(1.5e-3 * 32 / 256)
    assert TrainConfig(lr_reference_batch=None).peak_lr == 1.5e-3
    assert TrainConfig(batch_size=256).peak_lr == 1.5e-3


def test_yaml_round_trip(tmp_path):
    cfg = RunConfig().replace(train={"epochs": 5, "seed": 9}, augment={"max_shift": 4})
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_partial_file_uses_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("train:\n  epochs: 4\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.train.epochs == 4 and cfg.train.lam == 2.0


@pytest.mark.parametrize("doc", [{"trian": {}}, {"train": {"epoch": 3}}, {"encoder": {"width": 3}},
                                 {"train": []}])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


@pytest.mark.parametrize("train", [{"warmup_epochs": 30}, {"mask_ratio": 1.0}, {"lam": -1}, {"momentum": 1.5},
                                   {"betas": [0.9]}, {"dtype": "float16"}, {"lr_reference_batch": 0}])
def test_invalid_train(train):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": train})


def test_mismatched_sizes():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"encoder": {"grid_side": 2}})


def test_bad_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


@pytest.mark.parametrize("row", sorted(ABLATIONS))
def test_ablation_rows(row):
    a = RunConfig().with_ablation(row).ablation
    assert (a.shifted_patchify_on, a.patch_wise_loss_on, a.mem_on) == ABLATIONS[row]
    assert a.mem_target == "entropy"


def test_ablation_table():
    assert ABLATIONS["a"] == (False, False, False) and ABLATIONS["f"] == (True, True, True)
    assert ABLATIONS["e"] == (True, True, False)
    with pytest.raises(ConfigError):
        RunConfig().with_ablation("g")


def test_portable_dict_drops_paths():
    cfg = RunConfig().replace(train={"corpus_path": "/x", "output_dir": "/y"})
    d = cfg.to_dict(portable=True)
    assert "corpus_path" not in d["train"] and "output_dir" not in d["train"]
    assert cfg.to_dict()["train"]["corpus_path"] == "/x"
    assert yaml.safe_load(yaml.safe_dump(d)) == d
