import math

import numpy as np
import pytest

import snarm

TINY = """
[encoder]
layers = 2
channels = 8
resize = 32
crop = 32
patch_size = 8
seed = 3

[bank]
size = 40

[snmm]
dim = 8
state_dim = 2

[train]
cycle_length = 2
cycles = 1
batch = 2
probe_samples = 2

[synth]
categories = 2
train_per_category = 4
test_per_category = 4
image_size = 32
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = snarm.Config.parse(TINY)
    cfg.data_root = str(root)
    assert snarm.generate_synthetic(cfg, root) == 16
    return cfg, root


def test_config_round_trip_and_errors():
    cfg = snarm.Config.parse(TINY)
    again = snarm.Config.parse(cfg.dump())
    assert again.dump() == cfg.dump()
    assert again.model_hash == cfg.model_hash
    cfg.residual_mode = "inter_only"
    assert cfg.model_hash != again.model_hash
    with pytest.raises(snarm.ConfigError):
        snarm.Config.parse("[bank]\nunknown = 1\n")
    with pytest.raises(snarm.ConfigError):
        cfg.regime = "sideways"


def test_nearest_and_topk_hand_examples():
    bank = np.array([[0.0, 0.0], [2.0, 2.0]])
    idx, dist = snarm.nearest(bank, [1.0, 3.0])
    assert idx == 1
    assert dist == pytest.approx(math.sqrt(2.0))
    idx, _ = snarm.topk(np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]]), [1.0, 0.0], 2)
    assert idx == [0, 1]


def test_coreset_farthest_point():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
    sel = snarm.coreset(pts, 2, seed=0)
    assert len(sel) == 2
    assert 2 in sel
    assert snarm.covering_radius(pts, sel) <= 2.0


def test_focal_loss_single_pixel():
    got = snarm.focal_loss(np.array([[0.5]]), np.array([[1.0]]), 0.25, 4.0)
    assert got == pytest.approx(0.25 * 0.0625 * math.log(2.0), rel=1e-12)


def test_metric_hand_examples():
    assert snarm.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert snarm.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6)
    mask = np.zeros((4, 4))
    mask[1:3, 1:3] = 1.0
    assert snarm.pro([mask.copy()], [mask]) == pytest.approx(1.0)
    with pytest.raises(snarm.InvalidArgument):
        snarm.auroc([0.1, 0.2], [1, 1])


def test_features_have_grid_shape(dataset):
    cfg, root = dataset
    image = next(root.glob("*/train/good/*"))
    feats = snarm.extract_features(cfg, image)
    assert feats.shape[:2] == (4, 4)
    assert np.all(np.isfinite(feats))


def test_train_save_load_infer(dataset, tmp_path):
    cfg, root = dataset
    model = snarm.train(cfg)
    assert model.bank_size == 40
    assert len(model.step_loss) == 8
    images = sorted(str(p) for p in root.glob("*/test/*/*"))
    first = model.infer(images[:3])
    assert len(first) == 3
    amap, score = first[0]
    assert amap.shape == (32, 32)
    assert 0.0 <= amap.min() and amap.max() <= 1.0
    model.save(tmp_path / "ckpt")
    restored = snarm.Trained.load(tmp_path / "ckpt")
    for (a, s), (b, t) in zip(first, restored.infer(images[:3])):
        assert np.array_equal(a, b)
        assert s == t


def test_run_report(dataset):
    cfg, _ = dataset
    report = snarm.run(cfg)
    assert report["regime"] == "multi"
    assert set(report) >= {"i_auroc", "p_auroc", "p_ap", "pro"}
    assert len(report["runs"][0]["categories"]) == 2
    for key in ("i_auroc", "p_auroc", "p_ap", "pro"):
        assert 0.0 <= report[key] <= 1.0


def test_missing_dataset_is_data_error(tmp_path):
    cfg = snarm.Config.parse(TINY)
    cfg.data_root = str(tmp_path / "absent")
    with pytest.raises(snarm.DataError):
        snarm.train(cfg)
