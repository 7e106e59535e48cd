import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from dynguide.config import (
    ConfigError,
    apply_overrides,
    canonical_text,
    config_hash,
    from_dict,
    load_config,
    save_config,
)


def test_empty_dict_gives_valid_defaults():
    cfg = from_dict({})
    assert cfg.dataset.kind == "gmm"
    assert cfg.model.arch == "gmm_mlp"
    assert cfg.model.classifier_arch == "gmm_mlp_classifier"
    assert cfg.model.snapshots == [cfg.model.denoiser_steps]


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as e:
        from_dict({"modle": {}})
    assert e.value.field == "modle"


def test_unknown_key_rejected_with_dotted_name():
    with pytest.raises(ConfigError) as e:
        from_dict({"dataset": {"trian_size": 5}})
    assert e.value.field == "dataset.trian_size"


def test_type_mismatch_names_field():
    with pytest.raises(ConfigError) as e:
        from_dict({"schedule": {"T": "many"}})
    assert e.value.field == "schedule.T"
    with pytest.raises(ConfigError):
        from_dict({"model": {"lr": True}})
    with pytest.raises(ConfigError):
        from_dict({"model": {"denoiser_steps": 10.5}})


def test_whole_floats_coerce_to_int_fields():
    cfg = from_dict({"model": {"denoiser_steps": 100.0, "snapshots": [100]}})
    assert cfg.model.denoiser_steps == 100


def test_shapes_require_dataset_path():
    with pytest.raises(ConfigError) as e:
        from_dict({"dataset": {"kind": "single"}})
    assert e.value.field == "dataset.path"
    cfg = from_dict({"dataset": {"kind": "single", "path": "d.dgsd"}})
    assert cfg.model.arch == "shapes_unet"
    assert cfg.model.classifier_arch == "shapes_conv_classifier"


def test_arch_must_match_kind():
    with pytest.raises(ConfigError) as e:
        from_dict({"dataset": {"kind": "gmm"}, "model": {"arch": "shapes_unet"}})
    assert e.value.field == "model.arch"


def test_snapshots_must_ascend_and_end_at_steps():
    with pytest.raises(ConfigError) as e:
        from_dict({"model": {"denoiser_steps": 100, "snapshots": [50, 20, 100]}})
    assert e.value.field == "model.snapshots"
    with pytest.raises(ConfigError):
        from_dict({"model": {"denoiser_steps": 100, "snapshots": [50]}})


def test_interval_validation():
    ok = from_dict({"guidance": {"interval": [400, 200]}})
    assert ok.guidance.interval == [400, 200]
    # empty interval via T1 = T2 - 1 is allowed
    ok2 = from_dict({"guidance": {"interval": [199, 200]}})
    assert ok2.guidance.interval == [199, 200]
    with pytest.raises(ConfigError) as e:
        from_dict({"guidance": {"interval": [100, 300]}})
    assert e.value.field == "guidance.interval"
    with pytest.raises(ConfigError):
        from_dict({"guidance": {"interval": [100]}})


def test_sweep_cannot_exceed_samples():
    with pytest.raises(ConfigError) as e:
        from_dict({"eval": {"samples": 100, "sweep_samples": 200}})
    assert e.value.field == "eval.sweep_samples"


def test_bad_enum_values():
    for raw, field in [
        ({"dataset": {"kind": "mnist"}}, "dataset.kind"),
        ({"sampler": {"kind": "euler"}}, "sampler.kind"),
        ({"model": {"precision": "float16"}}, "model.precision"),
    ]:
        with pytest.raises(ConfigError) as e:
            from_dict(raw)
        assert e.value.field == field


def test_canonical_text_is_sorted_toml_and_omits_out_dir():
    cfg = from_dict({"run": {"out_dir": "/somewhere/else"}})
    text = canonical_text(cfg)
    lines = text.strip().splitlines()
    assert lines == sorted(lines)
    assert not any("out_dir" in ln for ln in lines)
    parsed = tomllib.loads(text)  # dotted keys are valid TOML
    assert parsed["model"]["denoiser_steps"] == cfg.model.denoiser_steps


def test_hash_ignores_out_dir_but_sees_params():
    a = from_dict({"run": {"out_dir": "runs/a"}})
    b = from_dict({"run": {"out_dir": "runs/b"}})
    assert config_hash(a) == config_hash(b)
    c = from_dict({"run": {"seed": 12}})
    assert config_hash(c) != config_hash(a)


def test_save_load_roundtrip_preserves_hash(tmp_path):
    cfg = from_dict({"model": {"denoiser_steps": 123, "snapshots": [123]},
                     "guidance": {"scales": [0.5, 2.0]}})
    p = tmp_path / "cfg.toml"
    save_config(cfg, p)
    again = load_config(p)
    assert config_hash(again) == config_hash(cfg)
    assert again.guidance.scales == [0.5, 2.0]


def test_load_config_missing_file():
    with pytest.raises(ConfigError) as e:
        load_config("/nonexistent/nowhere.toml")
    assert e.value.field == "<config>"


def test_load_config_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("dataset = {kind = \n")
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert "invalid TOML" in str(e.value)


def test_apply_overrides_types_and_errors():
    cfg = from_dict({})
    cfg = apply_overrides(cfg, ["model.denoiser_steps=42", "model.snapshots=[42]",
                                "model.lr=0.5", "run.out_dir=/tmp/x",
                                "guidance.use_raw_prob_grad=true"])
    assert cfg.model.denoiser_steps == 42
    assert cfg.model.lr == 0.5
    assert cfg.run.out_dir == "/tmp/x"
    assert cfg.guidance.use_raw_prob_grad is True
    with pytest.raises(ConfigError) as e:
        apply_overrides(cfg, ["nope"])
    assert e.value.field == "<override>"
    with pytest.raises(ConfigError) as e:
        apply_overrides(cfg, ["model.nosuch=3"])
    assert e.value.field == "model.nosuch"
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["model=3"])


def test_float_rendering_uses_repr():
    cfg = from_dict({"schedule": {"beta_start": 1e-4}})
    assert "schedule.beta_start = 0.0001" in canonical_text(cfg)
