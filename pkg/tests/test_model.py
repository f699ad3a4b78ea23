from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa.autodiff import ShapeError
from naaqa.model import (COORD_SITES, EXTRACTORS, NAAQA, CompatibilityError, ConfigError,
                         ModelConfig, _coord_block, count_parameters, load_config, load_model,
                         make_coord_maps, parameter_breakdown, parameter_spec, presets)
from naaqa.questengine import LABELS

TINY = ModelConfig(name="tiny", N1=4, P=8, E=8, G=16, J=2, M=8, C=16, H=16, vocab_size=20,
                   n_mels=16, coordmaps={"resblocks": "time"})


def batch(cfg, B=2, W=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((B, cfg.n_mels, W)).astype(np.float32)
    tok = rng.integers(1, cfg.vocab_size, size=(B, 5))
    tok[1, 3:] = 0
    return x, tok


def test_frozen_parameter_counts():
    # frozen from the parameter enumeration; a change here means the architecture changed
    p = presets()
    assert count_parameters(p["optimized_parallel"]) == 2_778_010
    assert count_parameters(p["optimized_parallel_malimo"]) == 4_191_130
    assert count_parameters(p["optimized_conv2d"]) == 2_781_418
    assert count_parameters(p["micro_parallel"]) == 149_546


def test_breakdown_sums_to_total():
    for cfg in presets().values():
        assert sum(parameter_breakdown(cfg).values()) == count_parameters(cfg)


def test_film_generator_shape_law():
    spec = {n: s for n, s, _ in parameter_spec(TINY)}
    assert spec["film_generator.weight"] == (2 * TINY.J * TINY.M, TINY.G)


@pytest.mark.parametrize("extractor", EXTRACTORS)
@pytest.mark.parametrize("malimo", [False, True])
def test_forward_shapes_every_extractor(extractor, malimo):
    cfg = replace(TINY, extractor=extractor, malimo=malimo)
    m = NAAQA(cfg, seed=1)
    x, tok = batch(cfg)
    assert m.forward(x, tok, np.array([40, 25])).shape == (2, len(LABELS))


@pytest.mark.parametrize("site", COORD_SITES)
@pytest.mark.parametrize("kind", ["time", "freq", "both"])
def test_every_coord_placement_runs(site, kind):
    cfg = replace(TINY, coordmaps={site: kind})
    x, tok = batch(cfg, W=33)
    assert NAAQA(cfg).forward(x, tok).shape == (2, len(LABELS))


@given(st.integers(2, 40), st.integers(2, 40))
def test_coord_map_laws(h, w):
    t, f = make_coord_maps(h, w, ("time", "freq"))
    assert np.all(t.grid == t.grid[:, :1, :])
    assert t.grid[0, 0, 0] == -1.0 and t.grid[0, 0, -1] == 1.0
    assert np.all(f.grid == f.grid[:, :, :1])
    assert f.grid[0, 0, 0] == -1.0 and f.grid[0, -1, 0] == 1.0


def test_coord_map_too_small():
    with pytest.raises(ShapeError):
        make_coord_maps(1, 5, ("time",))


def test_valid_span_ramp_reaches_one_at_last_valid_column():
    block = _coord_block(2, 3, 10, ("time",), valid_w=np.array([10, 4]))
    np.testing.assert_allclose(block[1, 0, 0, :4], np.linspace(-1, 1, 4))
    assert np.all(block[1, 0, :, 4:] == 1.0)
    np.testing.assert_allclose(block[0, 0, 0], np.linspace(-1, 1, 10))


def test_film_and_malimo_neutral_at_init():
    cfg = replace(TINY, malimo=True)
    m = NAAQA(cfg, seed=3)
    x, tok = batch(cfg)
    a = m.forward(x, tok).data
    b = m.forward(x, tok, modulate=False).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_valid_span_equals_padded_span_when_nothing_is_padded():
    x, tok = batch(TINY, W=48)
    a = NAAQA(TINY, seed=0).forward(x, tok, np.array([48, 48])).data
    b = NAAQA(replace(TINY, coordmap_span="valid"), seed=0).forward(x, tok, np.array([48, 48])).data
    np.testing.assert_allclose(a, b, atol=1e-6)
    c = NAAQA(replace(TINY, coordmap_span="valid"), seed=0).forward(x, tok, np.array([48, 20])).data
    assert not np.allclose(b[1], c[1])


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(extractor="lstm")
    with pytest.raises(ConfigError):
        ModelConfig(coordmaps={"decoder": "time"})
    with pytest.raises(ConfigError):
        ModelConfig(G=0)


def test_config_json_and_hash():
    cfg = presets()["optimized_parallel"]
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    assert replace(cfg, name="other").content_hash() == cfg.content_hash()
    assert replace(cfg, G=256).content_hash() != cfg.content_hash()


def test_shipped_configs_match_presets():
    for name, cfg in presets().items():
        assert load_config(name) == cfg
    with pytest.raises(ConfigError):
        load_config("missing_preset")


def test_empty_question_rejected():
    m = NAAQA(TINY)
    x, _ = batch(TINY)
    with pytest.raises(ShapeError):
        m.forward(x, np.zeros((2, 0), dtype=np.int64))


def test_wrong_mel_count_rejected():
    with pytest.raises(ShapeError):
        NAAQA(TINY).forward(np.zeros((1, 8, 20)), np.array([[1]]))


def test_same_seed_same_weights_different_seed_differs():
    a, b, c = NAAQA(TINY, 5), NAAQA(TINY, 5), NAAQA(TINY, 6)
    for k, v in a.state_arrays().items():
        np.testing.assert_array_equal(v, b.state_arrays()[k])
    assert any(not np.array_equal(v, c.state_arrays()[k]) for k, v in a.state_arrays().items()
               if v.std() > 0)


def test_save_load_roundtrip(tmp_path):
    m = NAAQA(TINY, seed=2)
    vocab = ["<pad>", "<unk>"] + [f"w{k}" for k in range(18)]
    path = m.save(tmp_path / "ck", LABELS, vocab)
    back, manifest = load_model(path, LABELS, vocab)
    x, tok = batch(TINY)
    np.testing.assert_array_equal(m.forward(x, tok).data, back.forward(x, tok).data)
    with pytest.raises(CompatibilityError):
        load_model(path, labels=tuple(reversed(LABELS)))
    with pytest.raises(CompatibilityError):
        load_model(path, vocabulary=vocab[::-1])


def test_load_state_rejects_shape_mismatch():
    m = NAAQA(TINY)
    arrays = m.state_arrays()
    arrays["stem.conv.weight"] = np.zeros((1, 1, 1, 1), np.float32)
    with pytest.raises(CompatibilityError):
        m.load_state_arrays(arrays)
