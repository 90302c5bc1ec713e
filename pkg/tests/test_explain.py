"""Saliency maps, diversity scoring, and heatmap rendering."""

import numpy as np
import pytest
from PIL import Image

from esrnet.architecture import ArchitectureConfig, StageSpec, load_architecture
from esrnet.explain import (
    branch_saliency_maps,
    cam_from_activations,
    diversity_score,
    grad_cam,
    jet_color,
    render_heatmap,
    save_cam_csv,
    save_heatmap_png,
)
from esrnet.model import build

TOY = load_architecture("toy")


def tiny_config(level=1):
    """One 4-filter stage on 1x8x8 input; branches are just gap+linear."""
    return ArchitectureConfig("tiny", (1, 8, 8), 3, level,
                              [StageSpec(filters=4, kernel=3, padding=1, pool=False)])


def toy_model(branches=2, seed=0, dtype=np.float32):
    model = build(TOY, seed=seed, dtype=dtype)
    for _ in range(branches):
        model.add_branch()
    return model


class TestCamFromActivations:
    def test_hand_worked_two_channel_case(self):
        """alpha = (0.25, 0); only channel 0 survives, peak rescales to 1."""
        acts = np.array([[[1.0, 0.0], [0.0, 0.0]],
                         [[0.0, 2.0], [0.0, 0.0]]])
        grads = np.array([[[0.25, 0.25], [0.25, 0.25]],
                          [[1.0, -1.0], [-1.0, 1.0]]])
        cam = cam_from_activations(acts, grads)
        expect = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert np.abs(cam - expect).max() <= 1e-10

    def test_negative_alpha_suppresses_channel(self):
        acts = np.array([[[2.0, 0.0], [0.0, 0.0]],
                         [[0.0, 4.0], [0.0, 0.0]]])
        grads = np.stack([np.full((2, 2), 0.5), np.full((2, 2), -1.0)])
        cam = cam_from_activations(acts, grads)
        assert np.abs(cam - [[1.0, 0.0], [0.0, 0.0]]).max() <= 1e-10

    def test_nowhere_positive_yields_zero_map(self):
        acts = np.ones((2, 3, 3))
        grads = -np.ones((2, 3, 3))
        assert np.all(cam_from_activations(acts, grads) == 0.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cam_from_activations(np.ones((2, 3, 3)), np.ones((2, 3, 4)))


class TestGradCam:
    def test_matches_analytic_map_through_linear_head(self):
        """With gap+linear branches the class gradient on the feature plane
        is W[c]/(H*W) per channel, so the whole map has a closed form."""
        model = build(tiny_config(), seed=3, dtype=np.float64)
        model.add_branch()
        rng = np.random.default_rng(np.random.SeedSequence(8, spawn_key=(2,)))
        img = rng.standard_normal((1, 8, 8))

        res = grad_cam(model, img, branch=1, class_index=2)
        out = model.forward(img[None], mode="eval", capture=True)
        acts = out.activations[res.layer].data[0]  # (4, 8, 8)
        w = model.branches[0][-1].weight.data  # (3, 4) linear head

        raw = np.maximum((w[2][:, None, None] * acts).sum(axis=0) / 64.0, 0.0)
        expect = raw / raw.max() if raw.max() > 0 else raw
        assert np.abs(res.cam - expect).max() <= 1e-10

    def test_defaults_to_branch_prediction(self):
        model = toy_model()
        img = np.random.default_rng(0).standard_normal((1, 32, 32)).astype(np.float32)
        res = grad_cam(model, img, branch=2)
        logits = model.predict_logits(img[None])
        assert res.class_index == int(logits[1, 0].argmax())

    def test_private_stack_layer_chosen_by_default(self):
        model = toy_model()
        img = np.zeros((1, 32, 32), dtype=np.float32)
        res = grad_cam(model, img, branch=2, class_index=0)
        assert res.layer.startswith("branch2.")

    def test_fully_shared_branch_falls_back_to_trunk(self):
        cfg = TOY.at_level(len(TOY.stages))
        model = build(cfg, seed=0)
        model.add_branch()
        img = np.zeros((1, 32, 32), dtype=np.float32)
        res = grad_cam(model, img, branch=1, class_index=0)
        assert res.layer.startswith("trunk.")

    def test_map_lies_in_unit_interval(self):
        model = toy_model()
        rng = np.random.default_rng(1)
        img = rng.standard_normal((1, 32, 32)).astype(np.float32)
        res = grad_cam(model, img, branch=1)
        assert res.cam.min() >= 0.0 and res.cam.max() <= 1.0

    def test_bad_arguments_rejected(self):
        model = toy_model()
        img = np.zeros((1, 32, 32), dtype=np.float32)
        with pytest.raises(ValueError, match="branch"):
            grad_cam(model, img, branch=5)
        with pytest.raises(ValueError, match="class index"):
            grad_cam(model, img, branch=1, class_index=9)
        with pytest.raises(ValueError, match="captured"):
            grad_cam(model, img, branch=1, layer="branch9.0")
        with pytest.raises(ValueError, match="forward path"):
            grad_cam(model, img, branch=1, layer="branch2.2")

    def test_one_result_per_branch(self):
        model = toy_model(branches=3)
        img = np.random.default_rng(2).standard_normal((1, 32, 32)).astype(np.float32)
        maps = branch_saliency_maps(model, img)
        assert [m.branch for m in maps] == [1, 2, 3]
        assert len({m.layer for m in maps}) == 3


class TestDiversity:
    def test_identical_maps_score_zero(self):
        m = np.array([[1.0, 0.5], [0.0, 0.2]])
        assert diversity_score([m, m.copy()]) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_maps_score_one(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert diversity_score([a, b]) == pytest.approx(1.0)

    def test_three_way_mean_over_pairs(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        c = np.array([[1.0, 1.0]])
        # pairs: (a,b)=0, (a,c)=1/sqrt(2), (b,c)=1/sqrt(2)
        expect = 1.0 - (0.0 + 2 / np.sqrt(2)) / 3
        assert diversity_score([a, b, c]) == pytest.approx(expect, abs=1e-12)

    def test_zero_map_contributes_zero_similarity(self):
        a = np.zeros((2, 2))
        b = np.ones((2, 2))
        assert diversity_score([a, b]) == pytest.approx(1.0)

    def test_accepts_saliency_results(self):
        from esrnet.explain import SaliencyResult
        a = SaliencyResult(np.ones((2, 2)), 1, 0, "x")
        b = SaliencyResult(np.ones((2, 2)), 2, 0, "y")
        assert diversity_score([a, b]) == pytest.approx(0.0, abs=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="two maps"):
            diversity_score([np.ones((2, 2))])
        with pytest.raises(ValueError, match="shape"):
            diversity_score([np.ones((2, 2)), np.ones((3, 3))])


class TestRendering:
    def test_jet_anchor_colors(self):
        np.testing.assert_allclose(jet_color(0.0), [0.0, 0.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(jet_color(0.25), [0.0, 0.5, 1.0], atol=1e-12)
        np.testing.assert_allclose(jet_color(0.5), [0.5, 1.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(jet_color(1.0), [0.5, 0.0, 0.0], atol=1e-12)

    def test_blend_shape_and_dtype(self):
        img = np.random.default_rng(0).integers(0, 256, (32, 32), dtype=np.uint8)
        cam = np.random.default_rng(1).random((8, 8))
        rgb = render_heatmap(img, cam)
        assert rgb.shape == (32, 32, 3) and rgb.dtype == np.uint8

    def test_alpha_zero_reproduces_grayscale(self):
        img = np.random.default_rng(0).integers(0, 256, (16, 16), dtype=np.uint8)
        rgb = render_heatmap(img, np.zeros((4, 4)), alpha=0.0)
        np.testing.assert_array_equal(rgb[..., 0], rgb[..., 1])
        np.testing.assert_array_equal(rgb[..., 0], img)

    def test_alpha_one_is_pure_heatmap(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        rgb = render_heatmap(img, np.ones((2, 2)), alpha=1.0)
        np.testing.assert_array_equal(rgb[0, 0], [128, 0, 0])  # jet(1) scaled

    def test_float_image_accepted(self):
        img = np.full((8, 8), 0.5)
        rgb = render_heatmap(img, np.zeros((2, 2)), alpha=0.0)
        assert rgb[0, 0, 0] == 128

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError, match="grayscale"):
            render_heatmap(np.zeros((4, 4, 3)), np.zeros((2, 2)))
        with pytest.raises(ValueError, match="alpha"):
            render_heatmap(np.zeros((4, 4)), np.zeros((2, 2)), alpha=1.5)

    def test_png_round_trip(self, tmp_path):
        rgb = np.random.default_rng(3).integers(0, 256, (10, 10, 3), dtype=np.uint8)
        path = str(tmp_path / "cam.png")
        save_heatmap_png(path, rgb)
        np.testing.assert_array_equal(np.asarray(Image.open(path)), rgb)

    def test_cam_csv_round_trip_is_exact(self, tmp_path):
        cam = np.random.default_rng(4).random((5, 7))
        path = str(tmp_path / "cam.csv")
        save_cam_csv(path, cam)
        np.testing.assert_array_equal(np.loadtxt(path, delimiter=","), cam)
