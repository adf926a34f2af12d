import numpy as np
import pytest

import fhgs


@pytest.fixture(scope="module")
def data():
    return fhgs.synth(objects=2, feature_dim=8, views=3, width=32, height=32, seed=7)


def test_dataset_shapes(data):
    assert data.view_count == 3
    assert data.feature_dim == 8
    assert data.image(0).shape == (32, 32, 3)
    feats = data.features(0)
    assert feats.shape == (32, 32, 8)
    assert np.allclose(np.linalg.norm(feats, axis=2), 1.0, atol=1e-5)


def test_train_keeps_features_frozen(data):
    scene = fhgs.initialize(data, seed=1)
    assert scene.params.shape == (len(scene), fhgs.NUM_PARAMS)
    before = fhgs.evaluate(scene, data)
    trained, log = fhgs.train(scene, data, iters=30, densify=False, seed=1)
    assert len(log) == 30
    assert trained.feature_checksum == scene.feature_checksum
    np.testing.assert_array_equal(trained.features, scene.features)
    after = fhgs.evaluate(trained, data)
    assert after["psnr"] > before["psnr"]


def test_render_modes(data):
    scene = fhgs.initialize(data, seed=2)
    view = data.view_ids[0]
    rgb = fhgs.render(scene, data, view=view)
    assert rgb.shape == (32, 32, 3)
    assert np.isfinite(rgb).all()
    feat = fhgs.render(scene, data, view=view, mode="feature", traversal="paper_literal")
    assert feat.shape == (32, 32, 8)
    with pytest.raises(fhgs.UsageError):
        fhgs.render(scene, data, view=999)


def test_checkpoint_round_trip(data, tmp_path):
    scene = fhgs.initialize(data, seed=3)
    path = tmp_path / "scene.fhgs"
    scene.save(path)
    back = fhgs.Scene.load(path)
    np.testing.assert_array_equal(back.params, scene.params)
    with pytest.raises(fhgs.LoadError):
        fhgs.Scene.load(tmp_path / "missing.fhgs")


def test_cli_exit_codes():
    code, out, _ = fhgs.run_cli(["synth", "--help"])
    assert code == 0 and "--seed" in out
    code, _, err = fhgs.run_cli(["no-such-command"])
    assert code == 2 and err
