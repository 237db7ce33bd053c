import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foveatex.errors import InvalidArgument, PredictionParseError
from foveatex.io import write_image
from foveatex.pipeline import StimulusManifest, frequency_battery
from foveatex.stimuli import (
    DEFAULT_FRACTIONS,
    HIGHPASS_SIGMAS,
    INF,
    LOWPASS_SIGMAS,
    OCCLUSION_KINDS,
    CueConflictSpec,
    FrequencySpec,
    OcclusionSpec,
    PredictionRecord,
    crossover,
    crossover_point,
    cue_conflict,
    cue_conflict_mask,
    disc_radius,
    highpass,
    lowpass,
    occlude,
    occlusion_mask,
    pair_classes,
    parse_predictions,
    residual_means,
    square_side,
)

MEANS = (0.45, 0.5, 0.4)


class TestFrequency:
    @pytest.mark.parametrize("sigma", LOWPASS_SIGMAS[1:])
    def test_reconstruction(self, corpus20, sigma):
        img = corpus20[0]
        lf = lowpass(img, FrequencySpec("lowpass", sigma))
        hf = highpass(img, FrequencySpec("highpass", sigma, residual_means=MEANS))
        assert np.abs(lf + hf - np.array(MEANS) - img).max() <= 1e-6

    def test_zero_sigma_identity(self, corpus20):
        np.testing.assert_array_equal(lowpass(corpus20[1], FrequencySpec("lowpass", 0)), corpus20[1])

    def test_sigma_40_near_uniform_textures(self):
        rng = np.random.default_rng(0)
        x = np.arange(256)
        grating = np.tile(0.5 + 0.4 * np.sin(2 * np.pi * x / 32), (256, 1))
        noise = rng.uniform(size=(256, 256, 3))
        for img in (grating, noise):
            out = lowpass(img, FrequencySpec("lowpass", 40))
            assert np.all(out.std(axis=(0, 1)) < 0.1 * img.std(axis=(0, 1)))

    def test_sigma_40_attenuation_bound(self, corpus20):
        # a one-cycle-per-frame component keeps exp(-2 pi^2 sigma^2 / W^2) of its amplitude
        bound = math.exp(-2 * math.pi**2 * 40**2 / 256**2)
        for img in corpus20:
            out = lowpass(img, FrequencySpec("lowpass", 40))
            assert np.all(out.std(axis=(0, 1)) < 0.75 * img.std(axis=(0, 1)))
        assert 0.6 < bound < 0.65

    @pytest.mark.xfail(strict=True, reason="scenes with frame-scale luminance gradients keep "
                       "40-67% of their std at sigma=40 on a 256 px frame")
    def test_sigma_40_near_uniform_whole_corpus(self, corpus20):
        for img in corpus20:
            out = lowpass(img, FrequencySpec("lowpass", 40))
            assert np.all(out.std(axis=(0, 1)) < 0.1 * img.std(axis=(0, 1)))

    def test_constant_image(self):
        img = np.full((64, 64, 3), 0.3)
        for s in LOWPASS_SIGMAS:
            np.testing.assert_allclose(lowpass(img, FrequencySpec("lowpass", s)), 0.3, atol=1e-12)
        for s in HIGHPASS_SIGMAS:
            out = highpass(img, FrequencySpec("highpass", s, residual_means=MEANS))
            np.testing.assert_allclose(out, np.broadcast_to(MEANS, out.shape), atol=1e-12)

    def test_inf_removes_dc_only(self):
        x = np.arange(128)
        grating = np.tile(0.6 + 0.2 * np.sin(2 * np.pi * x / 16), (128, 1))
        out = highpass(grating, FrequencySpec("highpass", INF, residual_means=(0.5,)))
        zero_mean = grating - grating.mean()
        np.testing.assert_allclose(out, zero_mean + 0.5, atol=1e-12)

    def test_gray_mode(self, corpus20):
        out = lowpass(corpus20[0], FrequencySpec("lowpass", 3, "gray"))
        assert out.ndim == 2

    def test_errors(self, corpus20):
        with pytest.raises(InvalidArgument):
            FrequencySpec("lowpass", INF)
        with pytest.raises(InvalidArgument):
            FrequencySpec("highpass", 0)
        with pytest.raises(InvalidArgument):
            highpass(corpus20[0], FrequencySpec("highpass", 3))

    def test_residual_means(self, corpus20):
        m = residual_means(corpus20[:4])
        assert len(m) == 3
        assert m[0] == pytest.approx(np.mean([img[..., 0].mean() for img in corpus20[:4]]))
        assert len(residual_means(corpus20[:4], "gray")) == 1


class TestOcclusion:
    @pytest.mark.parametrize("kind", OCCLUSION_KINDS)
    def test_endpoints(self, corpus20, kind):
        img = corpus20[2]
        np.testing.assert_array_equal(occlude(img, OcclusionSpec(kind, 0.0)), img)
        np.testing.assert_array_equal(occlude(img, OcclusionSpec(kind, 1.0)), np.full_like(img, 0.5))

    @pytest.mark.parametrize("f", [0.1, 0.3, 0.5, 0.77])
    def test_complementary(self, f):
        shape = (256, 256)
        scot = occlusion_mask(shape, OcclusionSpec("scotoma", f))
        glau = occlusion_mask(shape, OcclusionSpec("glaucoma", 1 - f))
        assert np.all(scot ^ glau)

    @pytest.mark.parametrize("shape", [(256, 256), (120, 200)])
    @pytest.mark.parametrize("kind", ["left2right", "top2bottom"])
    def test_strip_counts(self, shape, kind):
        width = shape[0] if kind == "left2right" else shape[1]
        for f in DEFAULT_FRACTIONS + (0.33, 0.05):
            n = occlusion_mask(shape, OcclusionSpec(kind, f)).sum()
            assert abs(n - round(f * shape[0] * shape[1])) <= width

    @pytest.mark.parametrize("kind", ["scotoma", "glaucoma"])
    def test_disc_area(self, kind):
        total = 256 * 256
        for f in (0.05, 0.2, 0.5, 0.8, 0.95, 0.99):
            n = occlusion_mask((256, 256), OcclusionSpec(kind, f)).sum()
            assert abs(n - f * total) <= 0.005 * total

    def test_clipped_disc_radius_exceeds_half_width(self):
        # large fractions need a disc truncated by the frame
        assert disc_radius((256, 256), 0.95) > 128

    def test_binary(self):
        m = occlusion_mask((64, 64), OcclusionSpec("scotoma", 0.4))
        assert m.dtype == bool

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            OcclusionSpec("left2right", 1.2)
        with pytest.raises(InvalidArgument):
            OcclusionSpec("diagonal", 0.5)

    @given(st.floats(0, 1), st.sampled_from(OCCLUSION_KINDS))
    @settings(max_examples=30, deadline=None)
    def test_only_fill_or_original(self, f, kind):
        img = np.random.default_rng(0).uniform(0.6, 1.0, size=(48, 48))
        out = occlude(img, OcclusionSpec(kind, f))
        assert np.all((out == img) | (out == 0.5))


class TestCueConflict:
    @pytest.mark.parametrize("kind", ["window", "square"])
    def test_endpoints(self, corpus20, kind):
        a, b = corpus20[0], corpus20[1]
        np.testing.assert_array_equal(cue_conflict(a, b, CueConflictSpec(kind, 0.0)), b)
        np.testing.assert_array_equal(cue_conflict(a, b, CueConflictSpec(kind, 1.0)), a)

    def test_square_quarter(self):
        assert square_side(256, 0.25) == 128
        m = cue_conflict_mask((256, 256), CueConflictSpec("square", 0.25))
        assert m.sum() == 128 * 128
        rows = np.flatnonzero(m.any(axis=1))
        assert rows[0] == 64 and rows[-1] == 191

    def test_window_area(self):
        m = cue_conflict_mask((256, 256), CueConflictSpec("window", 0.3))
        assert abs(m.sum() / 256**2 - 0.3) <= 0.005

    @pytest.mark.parametrize("kind", ["window", "square"])
    def test_set_membership(self, corpus20, kind):
        a, b = corpus20[3], corpus20[4]
        out = cue_conflict(a, b, CueConflictSpec(kind, 0.4))
        from_a = np.all(out == a, axis=-1)
        from_b = np.all(out == b, axis=-1)
        assert np.all(from_a | from_b)
        assert from_a.any() and from_b.any()

    def test_feather_in_between(self, corpus20):
        a, b = np.ones((64, 64)), np.zeros((64, 64))
        out = cue_conflict(a, b, CueConflictSpec("window", 0.3, feather=6))
        assert ((out > 0) & (out < 1)).any()
        assert out.min() >= 0 and out.max() <= 1

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            cue_conflict(np.zeros((8, 8)), np.zeros((8, 9)), CueConflictSpec("window", 0.5))
        with pytest.raises(InvalidArgument):
            CueConflictSpec("window", 0.5, inner_class="cat", outer_class="cat")

    def test_pairing(self):
        classes = ["b", "a", "c", "a"]
        assert pair_classes(classes, "window") == [("b", "c"), ("a", "b"), ("c", "a"), ("a", "b")]
        sq = pair_classes(classes * 10, "square", seed=4)
        assert all(i != o for i, o in sq)
        assert sq == pair_classes(classes * 10, "square", seed=4)
        with pytest.raises(InvalidArgument):
            pair_classes(["a", "a"], "window")


def _records(ratios, fov, per, n=10):
    recs = []
    for r, fa, pa in zip(ratios, fov, per):
        k_in, k_out = round(fa * n), round(pa * n)
        for i in range(n):
            pred = "in" if i < k_in else "out" if i < k_in + k_out else "other"
            recs.append(PredictionRecord(f"{r}_{i}.png", r, "in", "out", pred))
    return recs


class TestCrossover:
    def test_symmetric(self):
        curve = crossover(_records([0.2, 0.6], [0.2, 0.8], [0.8, 0.2]))
        assert curve.crossover == pytest.approx(0.4, abs=1e-12)
        assert curve.foveal_acc == [0.2, 0.8]

    def test_constructed_crossing(self):
        ratios = [0.1, 0.2, 0.3, 0.5, 0.7, 0.9]
        fov = [0.5 + 0.5 * (r - 0.4) for r in ratios]
        per = [0.5 - 0.5 * (r - 0.4) for r in ratios]
        assert abs(crossover_point(ratios, fov, per) - 0.4) <= 0.01

    def test_absent(self):
        assert crossover(_records([0.1, 0.5, 0.9], [0.1, 0.2, 0.3], [0.9, 0.8, 0.7])).crossover is None

    def test_foveal_bias_left_of_half(self):
        ratios = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        fov = [min(1, 2.5 * r) for r in ratios]
        per = [1 - f for f in fov]
        assert crossover_point(ratios, fov, per) < 0.5

    def test_needs_two_ratios(self):
        with pytest.raises(InvalidArgument):
            crossover(_records([0.5], [0.5], [0.5]))

    def test_subsampling_invariance(self):
        rng = np.random.default_rng(7)
        ratios = [0.1, 0.25, 0.4, 0.55, 0.7, 0.85]
        recs = []
        for r in ratios:
            fa = 0.2 + 0.8 * r
            for i in range(1000):
                u = rng.uniform()
                pred = "in" if u < fa else "out"
                recs.append(PredictionRecord(f"{r}_{i}", r, "in", "out", pred))
        full = crossover(recs).crossover
        keep = [rec for rec in recs if rng.uniform() < 0.5]
        sub = crossover(keep).crossover
        assert abs(full - 0.375) <= 0.05
        assert abs(sub - full) <= 0.05


class TestParsePredictions:
    HEADER = "path,ratio,inner_class,outer_class,predicted_class"

    def test_ok(self):
        recs = parse_predictions([self.HEADER, "a.png,0.2,cat,dog,cat", "", "b.png,0.4,cat,dog,dog"])
        assert [r.predicted_class for r in recs] == ["cat", "dog"]

    @pytest.mark.parametrize("bad,line", [
        ("a.png,x,cat,dog,cat", 3),
        ("a.png,0.2,cat,dog", 3),
        ("a.png,1.5,cat,dog,cat", 3),
        ("a.png,0.2,,dog,cat", 3),
    ])
    def test_errors_carry_line(self, bad, line):
        with pytest.raises(PredictionParseError) as exc:
            parse_predictions([self.HEADER, "ok.png,0.1,cat,dog,cat", bad])
        assert exc.value.line == line
        assert str(exc.value).startswith(f"line {line}:")

    def test_bad_header(self):
        with pytest.raises(PredictionParseError) as exc:
            parse_predictions(["file,ratio"])
        assert exc.value.line == 1


def test_frequency_battery_counts_and_roundtrip(tmp_path, corpus20):
    src = tmp_path / "src"
    for i, img in enumerate(corpus20):
        write_image(src / f"img{i:02d}.png", img[::4, ::4])
    manifest = frequency_battery(src, tmp_path / "out", workers=4)
    assert len(manifest.records) == 20 * (8 + 8) * 2 == 640
    assert not manifest.errors
    assert len(list((tmp_path / "out").rglob("*.png"))) == 640
    back = StimulusManifest.read(tmp_path / "out" / "manifest.json")
    assert back == manifest
    assert StimulusManifest.from_json(manifest.to_json()) == manifest
    for rec in manifest.records:
        s = rec.params["sigma"]
        pool = LOWPASS_SIGMAS if rec.params["kind"] == "lowpass" else HIGHPASS_SIGMAS
        assert (math.inf if s == "inf" else s) in pool
    combos = {(r.source, r.params["kind"], str(r.params["sigma"]), r.params["mode"]) for r in manifest.records}
    assert len(combos) == 640


def test_frequency_battery_bad_file(tmp_path, corpus20):
    src = tmp_path / "src"
    write_image(src / "ok.png", corpus20[0][::4, ::4])
    (src / "broken.png").write_bytes(b"not a png")
    manifest = frequency_battery(src, tmp_path / "out")
    assert len(manifest.errors) == 32
    assert all(r.source == "broken.png" for r in manifest.errors)
