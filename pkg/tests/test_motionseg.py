import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficdt import motionseg
from trafficdt.errors import InputError
from trafficdt.lds import LdsParams, learn_lds
from trafficdt.motionseg import (
    DtMixture,
    EmOptions,
    PatchGeometry,
    PatchGrid,
    assign_patches,
    em_fit_mixture,
    extract_patches,
    responsibilities,
    segment_video,
)
from trafficdt.synth import SynthConfig, Track, render

from scenes import label_accuracy, two_source_patches


class TestExtractPatches:
    def test_reference_count(self):
        video = np.zeros((10, 160, 110))
        grid = extract_patches(video, PatchGeometry(7, 7, 5, 4, 5))
        assert len(grid) == 39 * 26 * 2 == 2028
        assert grid.data.shape == (2028, 49, 5)

    def test_constant_video_gives_zero_patches(self):
        grid = extract_patches(np.full((5, 20, 20), 77.0))
        assert np.all(grid.data == 0)

    def test_single_patch(self):
        grid = extract_patches(np.random.default_rng(0).random((5, 7, 7)))
        assert len(grid) == 1

    def test_order_and_content(self):
        rng = np.random.default_rng(1)
        video = rng.random((12, 15, 13))
        g = PatchGeometry(3, 4, 4, 2, 3)
        grid = extract_patches(video, g)
        keys = [(r, c, t) for t, r, c in grid.positions]
        assert keys == sorted(keys)
        for (t, r, c), patch in zip(grid.positions, grid.data):
            block = video[t : t + 4, r : r + 3, c : c + 4]
            expected = block.reshape(4, 12).T
            np.testing.assert_allclose(patch, expected - expected.mean(), atol=1e-12)

    def test_too_few_frames(self):
        with pytest.raises(InputError):
            extract_patches(np.zeros((4, 20, 20)))

    @settings(max_examples=40, deadline=None)
    @given(
        pr=st.integers(1, 5), pc=st.integers(1, 5), pl=st.integers(1, 4),
        ss=st.integers(1, 5), stt=st.integers(1, 4),
        nr=st.integers(0, 4), nc=st.integers(0, 4), nt=st.integers(0, 3),
    )
    def test_aligned_grids_cover_every_pixel(self, pr, pc, pl, ss, stt, nr, nc, nt):
        ss = min(ss, pr, pc)
        stt = min(stt, pl)
        shape = (pl + nt * stt, pr + nr * ss, pc + nc * ss)
        grid = extract_patches(np.zeros(shape), PatchGeometry(pr, pc, pl, ss, stt))
        cover = np.zeros(shape, int)
        for t, r, c in grid.positions:
            cover[t : t + pl, r : r + pr, c : c + pc] += 1
        assert cover.min() >= 1

    def test_reference_preset_leaves_trailing_border(self):
        grid = extract_patches(np.zeros((5, 160, 110)))
        cover = np.zeros((5, 160, 110), int)
        for t, r, c in grid.positions:
            cover[t : t + 5, r : r + 7, c : c + 7] += 1
        assert cover[:, :159, :107].min() >= 1
        assert cover[:, 159, :].max() == 0 and cover[:, :, 107:].max() == 0


class TestEm:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_two_sources(self, seed):
        patches, labels = two_source_patches(seed)
        mix = em_fit_mixture(patches, 2, 2, EmOptions(seed=seed))
        assert label_accuracy(assign_patches(mix, patches), labels) >= 0.95
        assert np.all(np.diff(mix.loglik_history) >= -1e-6)

    def test_single_component(self):
        patches, _ = two_source_patches(0, per_source=30)
        mix = em_fit_mixture(patches, 1, 2)
        np.testing.assert_array_equal(mix.weights, [1.0])
        direct = learn_lds(list(patches.data), 2)
        for name in ("F", "H", "Q", "R", "mu", "P"):
            np.testing.assert_allclose(getattr(mix.components[0], name), getattr(direct, name), atol=1e-10)

    def test_deterministic(self):
        patches, _ = two_source_patches(1, per_source=40)
        a = em_fit_mixture(patches, 2, 2, EmOptions(seed=5))
        b = em_fit_mixture(patches, 2, 2, EmOptions(seed=5))
        assert a.loglik_history == b.loglik_history
        for ca, cb in zip(a.components, b.components):
            np.testing.assert_array_equal(ca.F, cb.F)
            np.testing.assert_array_equal(ca.Q, cb.Q)

    def test_responsibilities_are_distributions(self):
        patches, _ = two_source_patches(2, per_source=50)
        mix = em_fit_mixture(patches, 2, 2)
        resp = responsibilities(mix, patches)
        assert resp.min() >= 0 and resp.max() <= 1
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-10)
        assert abs(mix.weights.sum() - 1) < 1e-10

    def test_more_components_than_patches(self):
        patches, _ = two_source_patches(0, per_source=1)
        with pytest.raises(InputError):
            em_fit_mixture(patches, 3, 1)

    def test_empty_component_is_reseeded(self):
        # one source only: a third component can end up with no patches
        patches, _ = two_source_patches(3, per_source=60)
        data = patches.data[:60]
        mix = em_fit_mixture(PatchGrid.from_sequences(data), 3, 2, EmOptions(seed=0))
        assert mix.K == 3
        assert np.all(np.diff(mix.loglik_history) >= 0)


def square_scene():
    cfg = SynthConfig(rows=60, cols=90, n_frames=50)
    track = Track(top=20, left=2, drow=0, dcol=1.0, height=20, width=20, start=0, intensity=180)
    return render(cfg, [track], seed=1), track


class TestSegmentVideo:
    def test_moving_square_iou(self):
        scene, track = square_scene()
        g = PatchGeometry()
        mix = em_fit_mixture(extract_patches(scene.frames, g), 2, 5, EmOptions(seed=0))
        masks = segment_video(scene.frames, mix, g)
        assert masks.shape == scene.frames.shape
        for t in range(g.patch_len, scene.frames.shape[0]):
            truth = np.zeros(masks.shape[1:], bool)
            r, c = track.corner(t)
            truth[r : r + 20, c : c + 20] = True
            iou = (masks[t] & truth).sum() / (masks[t] | truth).sum()
            assert iou >= 0.5, f"frame {t}: IoU {iou:.3f}"

    def test_unanimous_assignment(self):
        rng = np.random.default_rng(0)
        video = rng.normal(100, 5, size=(10, 20, 20))
        g = PatchGeometry(5, 5, 5, 5, 5)
        patches = extract_patches(video, g)
        fitted = learn_lds(list(patches.data), 2)
        # component 1 is a copy with a huge observation noise: never wins
        loser = LdsParams(fitted.F, fitted.H, fitted.Q * 100, fitted.R * 1e6, fitted.mu, fitted.P)
        quiet = LdsParams(fitted.F, fitted.H, fitted.Q * 0.01, fitted.R * 1e6, fitted.mu, fitted.P)
        masks = segment_video(video, DtMixture((fitted, loser), [0.5, 0.5]), g)
        assert not masks.any()  # winner has the smaller trace(Q): background
        masks = segment_video(video, DtMixture((fitted, quiet), [0.5, 0.5]), g)
        assert masks.all()  # winner has the larger trace(Q): motion

    def test_relabeling_invariance(self):
        scene, _ = square_scene()
        g = PatchGeometry()
        mix = em_fit_mixture(extract_patches(scene.frames, g), 2, 5, EmOptions(seed=0))
        swapped = DtMixture(mix.components[::-1], mix.weights[::-1])
        np.testing.assert_array_equal(segment_video(scene.frames, mix, g),
                                      segment_video(scene.frames, swapped, g))

    def test_geometry_mismatch(self):
        scene, _ = square_scene()
        mix = em_fit_mixture(extract_patches(scene.frames[:10]), 2, 3)
        with pytest.raises(InputError):
            segment_video(scene.frames, mix, PatchGeometry(5, 5, 5, 4, 5))

    def test_vote_threshold_is_strict(self, monkeypatch):
        # two patches overlap on the middle column; one votes motion, one not
        video = np.random.default_rng(2).normal(size=(5, 3, 5))
        g = PatchGeometry(3, 3, 5, 2, 5)
        patches = extract_patches(video, g)
        assert len(patches) == 2
        base = learn_lds(list(patches.data), 1)
        big = LdsParams(base.F, base.H, base.Q * 10 + 1, base.R, base.mu, base.P)
        mix = DtMixture((base, big), [0.5, 0.5])
        monkeypatch.setattr(motionseg, "assign_patches", lambda m, p: np.array([1, 0]))
        masks = segment_video(video, mix, g)
        assert masks[:, :, :2].all()
        assert not masks[:, :, 2].any()  # one of two covering patches: tie -> background
        assert not masks[:, :, 3:].any()
