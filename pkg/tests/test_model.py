import numpy as np
import pytest

from hymunet.autodiff import Tensor
from hymunet.autodiff.serialize import FormatError
from hymunet.autodiff.tensor import no_grad
from hymunet.model import (VARIANTS, HyMUNet, ModelConfig, ablation_variant, count_params, load_checkpoint,
                           read_checkpoint, save_checkpoint)

DEFAULT_PARAM_COUNT = 3_220_164  # recorded from the default config at build time

SMALL = dict(stage_widths=[4, 4, 8, 8], input_size=32)


def analytic_count(w, skip_mode="mgf"):
    """Parameter count for blocks_per_stage = [0, 0, 0, 0]."""
    n = 27 * w[0] + 2 * w[0] + 9 * w[0] * w[0] + 2 * w[0]  # patch embedding
    n += sum(9 * w[i - 1] * w[i] + 2 * w[i] for i in range(1, 4))  # downsampling convs
    for i in range(3):
        if skip_mode == "mgf":
            n += 9 * w[i + 1] * w[i] + w[i] + w[i] + 1  # gate conv3x3 + conv1x1
        n += 9 * (w[i] + w[i + 1]) * w[i] + 2 * w[i] + 9 * w[i] * w[i] + 2 * w[i]  # decoder
    return n + w[0] + 1  # head


def test_default_param_count_regression():
    assert count_params(HyMUNet(ModelConfig())) == DEFAULT_PARAM_COUNT


@pytest.mark.parametrize("skip_mode", ["mgf", "concat"])
def test_zero_layer_count_is_analytic(skip_mode):
    w = [2, 4, 4, 8]
    cfg = ModelConfig(stage_widths=w, blocks_per_stage=[0, 0, 0, 0], skip_mode=skip_mode, input_size=32)
    assert count_params(HyMUNet(cfg)) == analytic_count(w, skip_mode)


def test_doubling_widths_roughly_quadruples_conv_params():
    base = ModelConfig(stage_kinds=["rcb"] * 4)
    wide = ModelConfig(stage_kinds=["rcb"] * 4, stage_widths=[64, 128, 256, 512])
    ratio = count_params(HyMUNet(wide)) / count_params(HyMUNet(base))
    assert 3.9 < ratio < 4.0


@pytest.mark.parametrize("size,res", [(64, [16, 8, 4, 2]), (256, [64, 32, 16, 8])])
def test_stage_resolutions(size, res):
    model = HyMUNet(ModelConfig(stage_widths=[4, 4, 8, 8], input_size=size)).eval()
    with no_grad():
        out = model(Tensor(np.zeros((1, 3, size, size))))
    assert model.last_resolutions == res
    assert out.shape == (1, 1, size, size)


def test_output_is_probability():
    model = HyMUNet(ModelConfig(**SMALL))
    out = model(Tensor(np.random.default_rng(0).normal(size=(2, 3, 32, 32)))).data
    assert np.all((out > 0) & (out < 1))


def test_batch_independence_in_eval():
    model = HyMUNet(ModelConfig(**SMALL)).eval()
    x = np.random.default_rng(1).normal(size=(1, 3, 32, 32))
    with no_grad():
        out = model(Tensor(np.concatenate([x, x]))).data
    assert np.array_equal(out[0], out[1])


def test_rejects_bad_input():
    model = HyMUNet(ModelConfig(**SMALL))
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((3, 32, 32))))
    x = np.zeros((1, 3, 32, 32))
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        model(Tensor(x))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(stage_widths=[32, 64, 128])
    with pytest.raises(ValueError):
        ModelConfig(input_size=48)
    with pytest.raises(ValueError):
        ModelConfig(stage_kinds=["rcb", "rcb", "attn", "vss"])
    with pytest.raises(KeyError):
        ModelConfig.from_dict({"width": 3})


def test_ablation_variants():
    cfg = ModelConfig()
    assert ablation_variant(cfg, "plain-concat").skip_mode == "concat"
    assert ablation_variant(cfg, "pure-cnn").stage_kinds == ["rcb"] * 4
    assert ablation_variant(cfg, "pure-mamba").stage_kinds == ["vss"] * 4
    assert ablation_variant(cfg, "full") == cfg
    assert set(VARIANTS) == {"full", "plain-concat", "pure-cnn", "pure-mamba"}
    with pytest.raises(ValueError):
        ablation_variant(cfg, "no-skip")


def test_pure_mamba_builds_and_runs():
    model = HyMUNet(ablation_variant(ModelConfig(**SMALL), "pure-mamba"))
    assert model(Tensor(np.zeros((1, 3, 32, 32)))).shape == (1, 1, 32, 32)


def _trained_like(seed=0):
    # one training-mode forward moves the BN running statistics off their init
    model = HyMUNet(ModelConfig(**SMALL, seed=seed))
    model(Tensor(np.random.default_rng(seed).normal(size=(2, 3, 32, 32))))
    return model.eval()


def test_checkpoint_round_trip_bitwise(tmp_path):
    model = _trained_like()
    path = tmp_path / "m.hymc"
    save_checkpoint(model, path, extra={"epoch": 3})
    back = load_checkpoint(path)
    assert not back.training
    rng = np.random.default_rng(2)
    with no_grad():
        for _ in range(3):
            x = Tensor(rng.normal(size=(1, 3, 32, 32)))
            assert model(x).data.tobytes() == back(x).data.tobytes()
    manifest, _ = read_checkpoint(path)
    assert manifest["extra"] == {"epoch": 3}


def test_checkpoint_truncated(tmp_path):
    model = _trained_like()
    path = tmp_path / "m.hymc"
    save_checkpoint(model, path)
    data = path.read_bytes()
    for cut in (3, 20, len(data) // 2, len(data) - 1):
        (tmp_path / "cut.hymc").write_bytes(data[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "cut.hymc")
    (tmp_path / "long.hymc").write_bytes(data + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(tmp_path / "long.hymc")


def test_checkpoint_config_mismatch_names_key(tmp_path):
    model = HyMUNet(ModelConfig(stage_widths=[4, 4, 8, 8], input_size=32))
    save_checkpoint(model, tmp_path / "m.hymc")
    with pytest.raises(ValueError, match="stage_widths"):
        load_checkpoint(tmp_path / "m.hymc", expect=ModelConfig(stage_widths=[8, 8, 8, 8], input_size=32))


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.hymc").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.hymc")
