import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidesearch.core import (
    Gleason,
    LabelSet,
    Magnification,
    Orientation,
    PatchRecord,
    SlideRef,
    apply_orientation,
    base_center,
    compose_orientations,
)
from slidesearch.errors import ValidationError

orientations = st.sampled_from(list(Orientation))


def small_image(seed, side=6):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)


class TestCompose:
    def test_rotation_addition(self):
        assert compose_orientations(Orientation.R90, Orientation.R90) \
            is Orientation.R180

    def test_identity(self):
        assert compose_orientations(Orientation.R0, Orientation.MR90) \
            is Orientation.MR90

    def test_mirror_involution(self):
        assert compose_orientations(Orientation.MR0, Orientation.MR0) \
            is Orientation.R0

    def test_latin_square(self):
        table = [[compose_orientations(a, b) for b in Orientation]
                 for a in Orientation]
        for row in table:
            assert len(set(row)) == 8
        for j in range(8):
            assert len({table[i][j] for i in range(8)}) == 8

    def test_self_composition_reaches_identity(self):
        for o in Orientation:
            cur = o
            for _ in range(4):
                if cur is Orientation.R0:
                    break
                cur = compose_orientations(cur, o)
            assert cur is Orientation.R0

    @given(a=orientations, b=orientations, seed=st.integers(0, 10))
    @settings(max_examples=200, deadline=None)
    def test_composition_matches_pixel_transform(self, a, b, seed):
        img = small_image(seed)
        via_steps = apply_orientation(apply_orientation(img, a), b)
        via_compose = apply_orientation(img, compose_orientations(a, b))
        assert np.array_equal(via_steps, via_compose)


class TestApplyOrientation:
    def test_constant_image_unchanged(self):
        img = np.full((5, 5, 3), 42, dtype=np.uint8)
        for o in Orientation:
            assert np.array_equal(apply_orientation(img, o), img)

    def test_2x2_r90_hand_oracle(self):
        # [[a, b], [c, d]] rotated counter-clockwise -> [[b, d], [a, c]]
        img = np.array([[[1], [2]], [[3], [4]]], dtype=np.uint8)
        img = np.repeat(img, 3, axis=2)
        out = apply_orientation(img, Orientation.R90)
        assert out[:, :, 0].tolist() == [[2, 4], [1, 3]]

    @given(seed=st.integers(0, 20))
    @settings(max_examples=30, deadline=None)
    def test_four_quarter_turns_identity(self, seed):
        img = small_image(seed)
        out = img
        for _ in range(4):
            out = apply_orientation(out, Orientation.R90)
        assert np.array_equal(out, img)

    @given(seed=st.integers(0, 20), o=orientations)
    @settings(max_examples=60, deadline=None)
    def test_pixel_multiset_preserved(self, seed, o):
        img = small_image(seed)
        out = apply_orientation(img, o)
        assert sorted(img.reshape(-1, 3).tolist()) \
            == sorted(out.reshape(-1, 3).tolist())

    def test_rotating_non_square_rejected(self):
        img = np.zeros((4, 6, 3), dtype=np.uint8)
        with pytest.raises(ValidationError):
            apply_orientation(img, Orientation.R90)
        with pytest.raises(ValidationError):
            apply_orientation(img, Orientation.MR270)
        # 180-degree turns stay legal for non-square inputs
        assert apply_orientation(img, Orientation.R180).shape == img.shape


class TestBaseCenter:
    def test_downsampled_patch(self):
        p = PatchRecord(patch_id=0, slide_id=0,
                        magnification=Magnification.M10X,
                        x=0, y=0, side_px=300)
        assert base_center(p) == (600.0, 600.0)

    def test_base_level_patch(self):
        p = PatchRecord(patch_id=0, slide_id=0,
                        magnification=Magnification.M40X,
                        x=1000, y=2000, side_px=300)
        assert base_center(p) == (1150.0, 2150.0)

    def test_same_origin_different_mag(self):
        p40 = PatchRecord(patch_id=0, slide_id=0,
                          magnification=Magnification.M40X,
                          x=1200, y=1200, side_px=300)
        p5 = PatchRecord(patch_id=1, slide_id=0,
                         magnification=Magnification.M5X,
                         x=1200, y=1200, side_px=300)
        assert base_center(p40) == (1350.0, 1350.0)
        assert base_center(p5) == (2400.0, 2400.0)


SLIDE = SlideRef(slide_id=0, name="s", base_width_px=4000,
                 base_height_px=3000, tile_size_px=512,
                 levels=(Magnification.M40X, Magnification.M10X))


class TestPatchRecord:
    def test_alignment_enforced(self):
        with pytest.raises(ValidationError):
            PatchRecord(patch_id=0, slide_id=0,
                        magnification=Magnification.M10X,
                        x=2, y=0, side_px=300)

    @given(x=st.integers(0, 5000), y=st.integers(0, 5000),
           side=st.integers(1, 1200))
    @settings(max_examples=200, deadline=None)
    def test_containment(self, x, y, side):
        mag = Magnification.M10X
        x -= x % mag.downsample
        y -= y % mag.downsample
        fits = (x + side * mag.downsample <= SLIDE.base_width_px
                and y + side * mag.downsample <= SLIDE.base_height_px)
        if fits:
            p = PatchRecord.create(SLIDE, patch_id=0, magnification=mag,
                                   x=x, y=y, side_px=side)
            assert p.x + p.base_side <= SLIDE.base_width_px
            assert p.y + p.base_side <= SLIDE.base_height_px
        else:
            with pytest.raises(ValidationError):
                PatchRecord.create(SLIDE, patch_id=0, magnification=mag,
                                   x=x, y=y, side_px=side)

    def test_missing_level_rejected(self):
        with pytest.raises(ValidationError):
            PatchRecord.create(SLIDE, patch_id=0,
                               magnification=Magnification.M20X,
                               x=0, y=0, side_px=10)

    def test_json_round_trip(self):
        p = PatchRecord(patch_id=3, slide_id=1,
                        magnification=Magnification.M20X, x=4, y=8,
                        side_px=128,
                        labels=LabelSet(histologic_features={"fat"},
                                        organ="prostate",
                                        gleason=Gleason.GP4))
        assert PatchRecord.from_json(p.to_json()) == p


class TestSlideRef:
    def test_levels_must_start_at_base(self):
        with pytest.raises(ValidationError):
            SlideRef(slide_id=0, name="s", base_width_px=100,
                     base_height_px=100, tile_size_px=64,
                     levels=(Magnification.M20X,))

    def test_levels_strictly_increasing(self):
        with pytest.raises(ValidationError):
            SlideRef(slide_id=0, name="s", base_width_px=100,
                     base_height_px=100, tile_size_px=64,
                     levels=(Magnification.M40X, Magnification.M40X))

    def test_magnification_downsample_pairs(self):
        assert [(m.name, m.downsample) for m in Magnification] == [
            ("M40X", 1), ("M20X", 2), ("M10X", 4), ("M5X", 8)]


class TestLabelSet:
    def test_gleason_pattern_implies_tumor(self):
        ls = LabelSet(gleason=Gleason.GP3)
        assert ls.tumor_present is True

    def test_nt_implies_no_tumor(self):
        ls = LabelSet(gleason=Gleason.NT)
        assert ls.tumor_present is False

    def test_contradiction_rejected(self):
        with pytest.raises(ValidationError):
            LabelSet(gleason=Gleason.GP4, tumor_present=False)
        with pytest.raises(ValidationError):
            LabelSet(gleason=Gleason.NT, tumor_present=True)
