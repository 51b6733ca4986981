import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import disc
from schemas.models import Circle, EyelidOcclusion, NoiseSpec, SyntheticEyeSpec, SyntheticPlan
from services.errors import CorpusError
from services.synthetic import (
    LID_DEPTH_FRACTION, apply_noise, generate_eye, load_plan, plan_from_flat, plan_specs, plan_to_flat,
)


def upper_lid(span_deg=100.0, depth=21.0):
    return EyelidOcclusion(center_angle=-math.pi / 2, span=math.radians(span_deg), depth=depth)


class TestGenerateEye:
    def test_noise_free_levels(self, clean_eye):
        data = clean_eye.image.data
        assert data[120, 160] == pytest.approx(0.08)   # pupil
        assert data[120, 200] == pytest.approx(0.38)   # iris
        assert data[120, 260] == pytest.approx(0.62)   # sclera
        assert data[0, 0] == pytest.approx(0.82)       # skin

    def test_same_seed_bit_identical(self, clean_eye_spec):
        spec = clean_eye_spec.model_copy(update={"noise": NoiseSpec(kind="gaussian", strength=0.05), "seed": 3})
        np.testing.assert_array_equal(generate_eye(spec).image.data, generate_eye(spec).image.data)

    def test_different_seed_differs(self, clean_eye_spec):
        noisy = clean_eye_spec.model_copy(update={"noise": NoiseSpec(kind="gaussian", strength=0.05)})
        a = generate_eye(noisy.model_copy(update={"seed": 1})).image.data
        b = generate_eye(noisy.model_copy(update={"seed": 2})).image.data
        assert not np.array_equal(a, b)

    def test_truth_is_annulus(self, clean_eye):
        expected = math.pi * (60 ** 2 - 25 ** 2)
        assert abs(clean_eye.truth.area - expected) / expected < 0.02
        assert not clean_eye.truth.iris_mask[120, 160] and clean_eye.truth.iris_mask[120, 200]

    def test_eyelid_removes_sector_from_truth(self, clean_eye_spec):
        lid = upper_lid()
        eye = generate_eye(clean_eye_spec.model_copy(update={"eyelids": [lid]}))
        annulus = math.pi * (60 ** 2 - 25 ** 2)
        sector = lid.span / 2 * (60 ** 2 - (60 - lid.depth) ** 2)
        expected = annulus - sector
        assert abs(eye.truth.area - expected) / expected < 0.02
        assert eye.occluded_runs == [pytest.approx((-math.pi / 2 - lid.span / 2, -math.pi / 2 + lid.span / 2))]
        # covered iris pixels take the skin level
        assert eye.image.data[120 - 55, 160] == pytest.approx(0.82)
        assert not eye.truth.iris_mask[120 - 55, 160]
        # the lower half is untouched
        assert eye.truth.iris_mask[120 + 55, 160]

    def test_reflections_stay_in_pupil(self, clean_eye_spec):
        eye = generate_eye(clean_eye_spec.model_copy(update={"reflection_count": 3, "seed": 4}))
        bright = eye.image.data == 1.0
        assert bright.any()
        assert not (bright & ~disc(eye.image.shape, 160, 120, 25 + 0.5)).any()

    def test_lashes_only_shrink_truth(self, clean_eye_spec):
        lid = upper_lid()
        base = generate_eye(clean_eye_spec.model_copy(update={"eyelids": [lid]}))
        lashed = generate_eye(clean_eye_spec.model_copy(update={"eyelids": [lid], "lash_count": 12, "seed": 9}))
        assert not (lashed.truth.iris_mask & ~base.truth.iris_mask).any()
        assert lashed.truth.area < base.truth.area
        pupil = disc(base.image.shape, 160, 120, 25)
        np.testing.assert_array_equal(lashed.image.data[pupil], base.image.data[pupil])

    def test_pupil_outside_iris_rejected(self):
        with pytest.raises(ValidationError):
            SyntheticEyeSpec(pupil=Circle(cx=160, cy=120, r=25), iris=Circle(cx=175, cy=120, r=30))

    def test_iris_outside_image_rejected(self):
        with pytest.raises(ValidationError):
            SyntheticEyeSpec(pupil=Circle(cx=40, cy=120, r=20), iris=Circle(cx=40, cy=120, r=60))


class TestApplyNoise:
    def test_salt_pepper_fraction(self, clean_eye):
        noisy = apply_noise(clean_eye.image.data, NoiseSpec(kind="salt-pepper", strength=0.02),
                            np.random.default_rng(0))
        changed = noisy != clean_eye.image.data
        assert abs(changed.mean() - 0.02) <= 0.005
        assert set(np.unique(noisy[changed])) <= {0.0, 1.0}

    def test_gaussian_spread(self):
        data = np.full((200, 200), 0.5)
        noisy = apply_noise(data, NoiseSpec(kind="gaussian", strength=0.05), np.random.default_rng(1))
        assert abs(np.std(noisy - data) - 0.05) < 0.005

    @pytest.mark.parametrize("kind", ["gaussian", "speckle", "poisson", "salt-pepper"])
    def test_output_clipped(self, kind):
        data = np.random.default_rng(2).random((50, 50))
        noisy = apply_noise(data, NoiseSpec(kind=kind, strength=0.5), np.random.default_rng(3))
        assert noisy.min() >= 0.0 and noisy.max() <= 1.0

    def test_zero_strength_is_identity(self):
        data = np.random.default_rng(5).random((10, 10))
        np.testing.assert_array_equal(apply_noise(data, NoiseSpec(kind="gaussian"), np.random.default_rng(0)), data)

    def test_negative_strength_rejected(self):
        with pytest.raises(ValidationError):
            NoiseSpec(kind="gaussian", strength=-0.1)


class TestPlan:
    def test_deterministic(self):
        plan = SyntheticPlan(count=6, seed=11)
        assert plan_specs(plan) == plan_specs(plan)

    def test_image_depends_only_on_seed_and_index(self):
        short, long = plan_specs(SyntheticPlan(count=3, seed=11)), plan_specs(SyntheticPlan(count=8, seed=11))
        assert short == long[:3]

    def test_geometry_within_ranges(self):
        plan = SyntheticPlan(count=40, seed=2)
        for spec in plan_specs(plan):
            p, i = spec.pupil, spec.iris
            assert plan.pupil_min <= p.r <= plan.pupil_max
            assert plan.iris_min <= i.r <= plan.iris_max
            assert 1.6 <= i.r / p.r <= 3.5 + 1e-9
            assert math.hypot(p.cx - i.cx, p.cy - i.cy) <= plan.max_offset
            assert not spec.eyelids

    def test_eyelid_plan(self):
        for spec in plan_specs(SyntheticPlan(count=5, seed=3, eyelid_span_deg=100)):
            (lid,) = spec.eyelids
            assert math.degrees(lid.span) == pytest.approx(100)
            assert abs(math.degrees(lid.center_angle) + 90) <= 5
            assert lid.depth == pytest.approx(LID_DEPTH_FRACTION * (spec.iris.r - spec.pupil.r))

    def test_invalid_ranges(self):
        with pytest.raises(ValidationError):
            SyntheticPlan(pupil_min=30, pupil_max=20)
        with pytest.raises(ValidationError):
            SyntheticPlan(count=0)

    def test_flat_round_trip(self):
        plan = SyntheticPlan(count=4, seed=9, noise=NoiseSpec(kind="speckle", strength=0.05))
        assert plan_from_flat(plan_to_flat(plan)) == plan

    def test_flat_strings_and_case(self):
        plan = plan_from_flat({"COUNT": "3", "noise_kind": "gaussian", "noise_strength": "0.05", "seed": ""})
        assert plan.count == 3 and plan.seed == 1234
        assert plan.noise == NoiseSpec(kind="gaussian", strength=0.05)

    def test_unknown_key(self):
        with pytest.raises(CorpusError):
            plan_from_flat({"count": "3", "colour": "blue"})

    def test_load_plan(self, tmp_path):
        path = tmp_path / "plan.env"
        path.write_text("count=2\nseed=5\nnoise_kind=poisson\nnoise_strength=0.005\n")
        plan = load_plan(path)
        assert (plan.count, plan.seed, plan.noise.kind) == (2, 5, "poisson")

    def test_load_plan_missing(self, tmp_path):
        with pytest.raises(CorpusError):
            load_plan(tmp_path / "absent.env")
