"""
Unit tests for the synthetic motion dataset
"""
from dataclasses import replace

import pytest
import numpy as np

from modules.exceptions import ValidationError
from modules.synthetic_videos import (MAX_CLASSES, MotionClass, SyntheticDatasetSpec,
                                      SyntheticVideoGenerator, generate_dataset, generate_splits,
                                      quantize)
from modules.video_data import Dims


class TestSyntheticDataset:
    """Generated clips are valid, labelled and reproducible"""

    @pytest.fixture(autouse=True)
    def setup(self, small_dims):
        self.spec = SyntheticDatasetSpec(dims=small_dims, num_classes=MAX_CLASSES,
                                         clips_per_class=2, noise_sigma=0.05, seed=11)

    def test_counts_and_order(self):
        clips = generate_dataset(self.spec)
        assert len(clips) == MAX_CLASSES * 2
        assert [c.label for c in clips] == [k for k in range(MAX_CLASSES) for _ in range(2)]

    def test_values_in_range(self):
        for clip in generate_dataset(self.spec):
            assert clip.video.data.min() >= -1.0
            assert clip.video.data.max() <= 1.0

    def test_deterministic(self):
        first = generate_dataset(self.spec)
        second = generate_dataset(self.spec)
        assert all(a.video == b.video for a, b in zip(first, second))

    def test_seed_changes_clips(self):
        other = SyntheticDatasetSpec(dims=self.spec.dims, num_classes=MAX_CLASSES,
                                     clips_per_class=2, noise_sigma=0.05, seed=12)
        a = generate_dataset(self.spec)[0]
        b = generate_dataset(other)[0]
        assert a.video != b.video

    def test_clips_move(self):
        # every class is defined by motion, so frames must differ over time
        for clip in generate_dataset(replace(self.spec, noise_sigma=0.0)):
            frames = clip.video.data
            assert not np.allclose(frames[0], frames[-1]), MotionClass(clip.label).name

    def test_splits_disjoint(self):
        train, held_out = generate_splits(self.spec, eval_clips_per_class=1)
        assert len(held_out) == MAX_CLASSES
        train_ids = {c.clip_id for c in train}
        assert not train_ids & {c.clip_id for c in held_out}
        assert all(not any(t.video == e.video for t in train) for e in held_out)

    def test_rejitter_keeps_class(self):
        generator = SyntheticVideoGenerator(self.spec)
        clip = generator.make_clip(3, 0)
        variant = generator.rejitter(clip, seed=5, index=1)
        assert variant.label == 3
        assert variant.video != clip.video
        assert generator.rejitter(clip, seed=5, index=1).video == variant.video

    @pytest.mark.parametrize("kwargs", [
        {'num_classes': 1}, {'num_classes': MAX_CLASSES + 1}, {'clips_per_class': 0},
        {'noise_sigma': -0.1},
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValidationError):
            SyntheticDatasetSpec(**kwargs)

    def test_spec_round_trip(self):
        assert SyntheticDatasetSpec.from_dict(self.spec.to_dict()) == self.spec

    def test_quantize_is_float32_exact(self):
        dims = Dims(T=2, H=1, W=1)
        frames = np.array([0.1, 2.0, -3.0, 1.0 / 3.0])
        out = quantize(frames, dims)
        np.testing.assert_array_equal(out, out.astype(np.float32).astype(np.float64))
        assert out.max() <= 1.0 and out.min() >= -1.0
