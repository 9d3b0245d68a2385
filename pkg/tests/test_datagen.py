import numpy as np
import pytest

from tritrain import analysis, trainer
from tritrain.datagen import (DomainDataset, ParseError, ShiftSpec,
                              generate, load_dataset, load_sparse_bow,
                              save_dataset, save_sparse_bow, split,
                              standardize_from_source)
from tritrain.nnlib import ConfigError
from tritrain.trainer import TrainConfig, evaluate, init_state, pretrain


# ---------------------------------------------------------------------------
# spec validation


def test_unknown_generator_rejected():
    with pytest.raises(ConfigError):
        ShiftSpec(generator="spiral")


def test_moons_is_binary_only():
    with pytest.raises(ConfigError):
        ShiftSpec(generator="two_moons", num_classes=3)


def test_spec_round_trip():
    spec = ShiftSpec(generator="gaussian_blobs", rotation_deg=45,
                     translation=(1.0, -2.0), num_classes=4, seed=9)
    assert ShiftSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# generated geometry


def test_class_balance_within_one():
    for gen, k in (("two_moons", 2), ("gaussian_blobs", 3)):
        ds = generate(ShiftSpec(generator=gen, n_source=401, n_target=400,
                                num_classes=k, noise_sigma=0.1))
        counts = np.bincount(ds.source_y, minlength=k)
        assert counts.max() - counts.min() <= 1
        counts = np.bincount(ds.target_y_hidden, minlength=k)
        assert counts.max() - counts.min() <= 1


def test_generation_is_seed_deterministic():
    spec = ShiftSpec(rotation_deg=20, seed=5)
    a, b = generate(spec), generate(spec)
    np.testing.assert_array_equal(a.source_x, b.source_x)
    np.testing.assert_array_equal(a.target_x, b.target_x)
    np.testing.assert_array_equal(a.target_y_hidden, b.target_y_hidden)


def test_no_shift_domains_are_indistinguishable():
    ds = generate(ShiftSpec(n_source=500, n_target=500, rotation_deg=0, seed=0))
    d = analysis.a_distance(ds.source_x, ds.target_x, seed=0)
    assert d < 0.25


def test_blob_half_turn_flips_binary_labels():
    # rotating 2-class blobs by 180 degrees swaps the clusters, so a
    # source-trained classifier should score near zero on true target labels
    ds = generate(ShiftSpec(generator="gaussian_blobs", rotation_deg=180,
                            n_source=400, n_target=400, noise_sigma=0.2, seed=1))
    cfg = TrainConfig(steps_k=0, pretrain_iters=300, batch_labeling=32,
                      batch_target=32, lr=0.05, hidden_dim=8, seed=0)
    state = init_state(cfg, 2, ds.num_classes)
    pretrain(state, ds.source_x, ds.source_y, cfg)
    assert evaluate(state.net, ds.source_x, ds.source_y) > 0.95
    assert evaluate(state.net, ds.target_x, ds.target_y_hidden) < 0.05


def test_rotated_moons_hurt_source_only_model():
    accs = []
    for seed in range(10):
        ds = generate(ShiftSpec(rotation_deg=30, noise_sigma=0.1, seed=seed))
        cfg = TrainConfig(steps_k=0, pretrain_iters=400, batch_labeling=64,
                          batch_target=64, lr=0.05, hidden_dim=16, seed=seed)
        state = init_state(cfg, 2, 2)
        pretrain(state, ds.source_x, ds.source_y, cfg)
        accs.append(evaluate(state.net, ds.target_x, ds.target_y_hidden))
    mean = float(np.mean(accs))
    assert 0.5 < mean < 0.95  # hurt by the shift but above chance


def test_translation_moves_target_mean():
    base = generate(ShiftSpec(seed=3))
    shifted = generate(ShiftSpec(translation=(5.0, -1.0), seed=3))
    delta = shifted.target_x.mean(axis=0) - base.target_x.mean(axis=0)
    np.testing.assert_allclose(delta, [5.0, -1.0], atol=1e-9)


# ---------------------------------------------------------------------------
# split / standardize


def test_split_zero_is_identity():
    ds = generate(ShiftSpec(seed=0))
    assert split(ds, 0) is ds


def test_split_partitions_target():
    ds = generate(ShiftSpec(n_target=2000, seed=0))
    out = split(ds, 200, seed=1)
    assert out.val_x.shape == (200, 2)
    assert out.target_x.shape == (1800, 2)
    pool = np.vstack([out.target_x, out.val_x])
    assert sorted(map(tuple, pool)) == sorted(map(tuple, ds.target_x))


def test_split_rejects_oversized_request():
    ds = generate(ShiftSpec(seed=0))
    with pytest.raises(ConfigError):
        split(ds, len(ds.target_x))


def test_standardize_uses_source_statistics_only():
    ds = generate(ShiftSpec(translation=(10.0, 0.0), seed=2))
    out = standardize_from_source(ds)
    np.testing.assert_allclose(out.source_x.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.source_x.std(axis=0), 1, atol=1e-12)
    assert abs(out.target_x[:, 0].mean()) > 1  # target keeps its offset


# ---------------------------------------------------------------------------
# sparse bag-of-words format


def test_sparse_bow_basic_parse(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text("1 0:2.5 3:1.0\n-1 1:0.5\n\n0\n")
    x, y = load_sparse_bow(path, dim=4)
    np.testing.assert_allclose(x, [[2.5, 0, 0, 1.0], [0, 0.5, 0, 0], [0, 0, 0, 0]])
    np.testing.assert_array_equal(y, [1, 0, 0])  # -1 maps to 0


def test_sparse_bow_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    x, y = load_sparse_bow(path, dim=7)
    assert x.shape == (0, 7) and y.shape == (0,)


def test_sparse_bow_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 0:1.0\n1 zero:1.0\n")
    with pytest.raises(ParseError, match="line 2") as e:
        load_sparse_bow(path, dim=2)
    assert e.value.lineno == 2


def test_sparse_bow_rejects_bad_label(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("pos 0:1.0\n")
    with pytest.raises(ParseError, match="line 1"):
        load_sparse_bow(path, dim=2)


def test_sparse_bow_rejects_out_of_range_index(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 5:1.0\n")
    with pytest.raises(ParseError, match="out of range"):
        load_sparse_bow(path, dim=5)


def test_sparse_bow_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = np.where(rng.random((20, 15)) < 0.2, rng.random((20, 15)), 0.0)
    y = rng.integers(0, 2, size=20)
    path = tmp_path / "rt.txt"
    save_sparse_bow(path, x, y)
    x2, y2 = load_sparse_bow(path, dim=15)
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(y, y2)


# ---------------------------------------------------------------------------
# dataset directory round trip


def test_save_load_dataset_round_trip(tmp_path):
    spec = ShiftSpec(rotation_deg=30, n_target=600, seed=4)
    ds = split(generate(spec), 100, seed=4)
    save_dataset(tmp_path / "d", ds, spec)
    back = load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.source_x, ds.source_x)
    np.testing.assert_array_equal(back.source_y, ds.source_y)
    np.testing.assert_array_equal(back.target_x, ds.target_x)
    np.testing.assert_array_equal(back.target_y_hidden, ds.target_y_hidden)
    np.testing.assert_array_equal(back.val_x, ds.val_x)
    np.testing.assert_array_equal(back.val_y, ds.val_y)
    assert back.num_classes == ds.num_classes


def test_dataset_dim_mismatch_rejected():
    with pytest.raises(ConfigError):
        DomainDataset(source_x=np.zeros((3, 2)), source_y=np.zeros(3, dtype=np.int64),
                      target_x=np.zeros((3, 3)), num_classes=2)
