"""Synthetic generator, covariate shifts, splits, and trial-file I/O."""

import numpy as np
import pytest

from entromix.data import (
    ShiftSpec,
    SynthSpec,
    TrialBatch,
    TrialDataset,
    apply_shift,
    generate,
    read_trials,
    split,
    write_trials,
)
from entromix.errors import ConfigError, DataFormatError, DomainError

DESK = SynthSpec()  # K=10, C=8, T=128, noise 0.5, seed 0


class TestSynthSpec:
    def test_rejects_degenerate_geometry(self):
        with pytest.raises(ConfigError):
            SynthSpec(n_classes=1)
        with pytest.raises(ConfigError):
            SynthSpec(channels=0)
        with pytest.raises(ConfigError):
            SynthSpec(noise_sd=-0.1)

    def test_rejects_duplicate_spectral_pairs(self):
        with pytest.raises(ConfigError, match="distinct"):
            SynthSpec(
                n_classes=3,
                slow_freqs=(1.0, 1.0, 2.0),
                fast_freqs=(8.0, 8.0, 9.0),
            )

    def test_frequency_lists_must_cover_classes(self):
        with pytest.raises(ConfigError):
            SynthSpec(n_classes=4, slow_freqs=(1.0, 2.0))

    def test_templates_shape_and_distinctness(self):
        templates = DESK.class_templates()
        assert templates.shape == (10, 8, 128)
        flat = templates.reshape(10, -1)
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.allclose(flat[i], flat[j])

    def test_templates_deterministic(self):
        np.testing.assert_array_equal(DESK.class_templates(), SynthSpec().class_templates())


class TestGenerate:
    def test_same_seed_bitwise_identical(self):
        a = generate(DESK, 60)
        b = generate(DESK, 60)
        np.testing.assert_array_equal(a.signals, b.signals)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.trial_ids, b.trial_ids)

    def test_different_seed_differs(self):
        a = generate(DESK, 20)
        b = generate(SynthSpec(seed=1), 20)
        assert not np.array_equal(a.signals, b.signals)

    def test_trial_content_independent_of_dataset_size(self):
        small = generate(DESK, 30)
        large = generate(DESK, 90)
        np.testing.assert_array_equal(small.signals, large.signals[:30])

    def test_labels_cycle_and_balance(self):
        ds = generate(DESK, 95)
        assert list(ds.labels[:10]) == list(range(10))
        counts = np.bincount(ds.labels, minlength=10)
        assert counts.max() - counts.min() <= 1

    def test_zscore_statistics(self):
        ds = generate(DESK, 40)
        means = ds.signals.mean(axis=2)
        variances = ds.signals.var(axis=2)
        assert np.abs(means).max() < 1e-5
        assert np.abs(variances - 1.0).max() < 1e-3

    def test_zero_noise_trials_equal_zscored_template(self):
        spec = SynthSpec(noise_sd=0.0)
        ds = generate(spec, 20)
        templates = spec.class_templates()
        for k in range(10):
            rows = ds.signals[ds.labels == k]
            template = templates[k]
            zs = (template - template.mean(axis=1, keepdims=True)) / np.maximum(
                template.std(axis=1, keepdims=True), 1e-8
            )
            for row in rows:
                np.testing.assert_array_equal(row, rows[0])
            np.testing.assert_allclose(rows[0], zs, atol=1e-6)

    def test_needs_one_trial_per_class(self):
        with pytest.raises(DomainError):
            generate(DESK, 9)

    def test_linear_probe_beats_five_times_chance(self):
        full = generate(DESK, 900)
        train = full.subset(np.arange(600))
        test = full.subset(np.arange(600, 900))
        x_train = train.signals.reshape(len(train), -1).astype(np.float64)
        x_test = test.signals.reshape(len(test), -1).astype(np.float64)
        onehot = np.eye(10)[train.labels]
        gram = x_train.T @ x_train + 0.1 * len(train) * np.eye(x_train.shape[1])
        weights = np.linalg.solve(gram, x_train.T @ onehot)
        accuracy = ((x_test @ weights).argmax(axis=1) == test.labels).mean()
        assert accuracy > 5 * (1.0 / 10.0)


class TestShiftSpec:
    def test_identity_detection(self):
        assert ShiftSpec().is_identity()
        assert not ShiftSpec(gain=1.5).is_identity()
        assert not ShiftSpec(offset=0.1).is_identity()
        assert not ShiftSpec(noise_sd=0.5).is_identity()

    def test_rejects_bad_fields(self):
        with pytest.raises(ConfigError):
            ShiftSpec(schedule="sometimes")
        with pytest.raises(ConfigError):
            ShiftSpec(noise_sd=-1.0)
        with pytest.raises(ConfigError):
            ShiftSpec(change_at=-1)

    def test_strength_schedules(self):
        assert ShiftSpec(gain=2.0).strength(0, 50) == 1.0
        abrupt = ShiftSpec(gain=2.0, schedule="abrupt", change_at=3)
        assert [abrupt.strength(p, 6) for p in range(6)] == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        ramp = ShiftSpec(gain=2.0, schedule="ramp")
        assert ramp.strength(0, 5) == 0.0
        assert ramp.strength(4, 5) == 1.0
        assert ramp.strength(2, 5) == pytest.approx(0.5)
        assert ramp.strength(0, 1) == 1.0

    def test_strength_rejects_negative_position(self):
        with pytest.raises(DomainError):
            ShiftSpec().strength(-1, 10)


def small_batch(rng, b=4, c=3, t=16):
    return TrialBatch(
        rng.normal(size=(b, c, t)).astype(np.float32),
        rng.integers(0, 5, size=b).astype(np.int64),
        np.arange(b, dtype=np.int64),
    )


class TestApplyShift:
    def test_identity_is_bitwise_copy(self, rng):
        batch = small_batch(rng)
        out = apply_shift(batch, ShiftSpec())
        np.testing.assert_array_equal(out.signals, batch.signals)
        assert out.signals is not batch.signals

    def test_gain_two_doubles_signals(self, rng):
        batch = small_batch(rng)
        out = apply_shift(batch, ShiftSpec(gain=2.0))
        np.testing.assert_array_equal(out.signals, batch.signals * 2.0)

    def test_offset_adds_constant(self, rng):
        batch = small_batch(rng)
        out = apply_shift(batch, ShiftSpec(offset=0.5))
        np.testing.assert_allclose(out.signals, batch.signals + 0.5, rtol=1e-6)

    def test_per_channel_gain(self, rng):
        batch = small_batch(rng, c=3)
        out = apply_shift(batch, ShiftSpec(gain=(1.0, 2.0, 3.0)))
        for c, g in enumerate((1.0, 2.0, 3.0)):
            np.testing.assert_allclose(out.signals[:, c], batch.signals[:, c] * g, rtol=1e-6)

    def test_labels_and_ids_untouched(self, rng):
        batch = small_batch(rng)
        out = apply_shift(batch, ShiftSpec(gain=1.5, noise_sd=0.1), rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.labels, batch.labels)
        np.testing.assert_array_equal(out.trial_ids, batch.trial_ids)

    def test_noise_requires_rng(self, rng):
        with pytest.raises(DomainError, match="rng"):
            apply_shift(small_batch(rng), ShiftSpec(noise_sd=0.5))

    def test_noise_deterministic_given_rng_state(self, rng):
        batch = small_batch(rng)
        a = apply_shift(batch, ShiftSpec(noise_sd=0.5), rng=np.random.default_rng(7))
        b = apply_shift(batch, ShiftSpec(noise_sd=0.5), rng=np.random.default_rng(7))
        np.testing.assert_array_equal(a.signals, b.signals)

    def test_abrupt_schedule_before_and_after(self, rng):
        batch = small_batch(rng)
        shift = ShiftSpec(gain=2.0, schedule="abrupt", change_at=5)
        before = apply_shift(batch, shift, position=4, total_batches=10)
        after = apply_shift(batch, shift, position=5, total_batches=10)
        np.testing.assert_array_equal(before.signals, batch.signals)
        np.testing.assert_array_equal(after.signals, batch.signals * 2.0)

    def test_ramp_interpolates_gain(self, rng):
        batch = small_batch(rng)
        shift = ShiftSpec(gain=3.0, schedule="ramp")
        mid = apply_shift(batch, shift, position=2, total_batches=5)
        np.testing.assert_allclose(mid.signals, batch.signals * 2.0, rtol=1e-6)


class TestSplit:
    def test_sizes_and_stratification(self):
        ds = generate(DESK, 1000)
        train, val, test = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (800, 100, 100)
        for part, frac in ((train, 0.8), (val, 0.1), (test, 0.1)):
            counts = np.bincount(part.labels, minlength=10)
            assert np.abs(counts - frac * 100).max() <= 1

    def test_disjoint_and_complete(self):
        ds = generate(DESK, 203)
        parts = split(ds, (0.6, 0.2, 0.2), seed=3)
        all_ids = np.concatenate([p.trial_ids for p in parts])
        assert len(all_ids) == len(ds)
        assert len(np.unique(all_ids)) == len(ds)

    def test_seed_determinism(self):
        ds = generate(DESK, 100)
        a = split(ds, seed=5)
        b = split(ds, seed=5)
        c = split(ds, seed=6)
        np.testing.assert_array_equal(a[0].trial_ids, b[0].trial_ids)
        assert not np.array_equal(a[0].trial_ids, c[0].trial_ids)

    def test_rejects_bad_fractions(self):
        ds = generate(DESK, 50)
        with pytest.raises(DomainError):
            split(ds, (0.5, 0.1, 0.1))
        with pytest.raises(DomainError):
            split(ds, (1.2, -0.1, -0.1))


class TestTrialDataset:
    def test_validation_catches_defects(self, rng):
        good = generate(DESK, 20)
        with pytest.raises(DomainError, match="non-finite"):
            bad = good.signals.copy()
            bad[0, 0, 0] = np.nan
            TrialDataset(bad, good.labels, good.trial_ids, 10)
        with pytest.raises(DomainError, match="labels"):
            TrialDataset(good.signals, good.labels + 10, good.trial_ids, 10)
        with pytest.raises(DomainError, match="unique"):
            TrialDataset(good.signals, good.labels, np.zeros(20, dtype=np.int64), 10)

    def test_batches_cover_dataset_once(self):
        ds = generate(DESK, 50)
        seen = np.concatenate([b.trial_ids for b in ds.batches(16)])
        np.testing.assert_array_equal(np.sort(seen), ds.trial_ids)

    def test_batches_shuffle_with_rng(self):
        ds = generate(DESK, 64)
        plain = np.concatenate([b.trial_ids for b in ds.batches(16)])
        shuffled = np.concatenate(
            [b.trial_ids for b in ds.batches(16, np.random.default_rng(0))]
        )
        assert not np.array_equal(plain, shuffled)
        np.testing.assert_array_equal(np.sort(shuffled), np.sort(plain))


class TestTrialFileIO:
    def test_round_trip_bitwise(self, tmp_path):
        ds = generate(DESK, 37)
        path = tmp_path / "trials.ntrl"
        write_trials(path, ds)
        back = read_trials(path)
        np.testing.assert_array_equal(back.signals, ds.signals)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.trial_ids, ds.trial_ids)
        assert back.n_classes == ds.n_classes

    def _write(self, tmp_path, blob):
        path = tmp_path / "bad.ntrl"
        path.write_bytes(blob)
        return path

    def test_truncated_header(self, tmp_path):
        with pytest.raises(DataFormatError, match="byte offset 0"):
            read_trials(self._write(tmp_path, b"NTRL\x01"))

    def test_bad_magic(self, tmp_path):
        ds = generate(DESK, 10)
        path = tmp_path / "t.ntrl"
        write_trials(path, ds)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"JUNK"
        with pytest.raises(DataFormatError, match="magic"):
            read_trials(self._write(tmp_path, bytes(blob)))

    def test_bad_version_reports_offset(self, tmp_path):
        ds = generate(DESK, 10)
        path = tmp_path / "t.ntrl"
        write_trials(path, ds)
        blob = bytearray(path.read_bytes())
        blob[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(DataFormatError, match="byte offset 4"):
            read_trials(self._write(tmp_path, bytes(blob)))

    def test_length_mismatch(self, tmp_path):
        ds = generate(DESK, 10)
        path = tmp_path / "t.ntrl"
        write_trials(path, ds)
        blob = path.read_bytes()
        with pytest.raises(DataFormatError, match="length mismatch"):
            read_trials(self._write(tmp_path, blob[:-7]))
        with pytest.raises(DataFormatError, match="length mismatch"):
            read_trials(self._write(tmp_path, blob + b"\x00"))

    def test_label_out_of_range(self, tmp_path):
        ds = generate(DESK, 10)
        path = tmp_path / "t.ntrl"
        write_trials(path, ds)
        blob = bytearray(path.read_bytes())
        # first record's label field sits right after the header + u32 id
        label_offset = 22 + 4
        blob[label_offset : label_offset + 2] = (10).to_bytes(2, "little")
        with pytest.raises(DataFormatError, match="label 10"):
            read_trials(self._write(tmp_path, bytes(blob)))

    def test_non_finite_sample(self, tmp_path):
        ds = generate(DESK, 10)
        bad = ds.signals.copy()
        loose = TrialDataset.__new__(TrialDataset)
        loose.signals = bad
        loose.labels = ds.labels
        loose.trial_ids = ds.trial_ids
        loose.n_classes = ds.n_classes
        bad[0, 0, 0] = np.inf
        path = tmp_path / "t.ntrl"
        write_trials(path, loose)
        with pytest.raises(DataFormatError, match="non-finite"):
            read_trials(path)

    def test_duplicate_trial_ids(self, tmp_path):
        ds = generate(DESK, 10)
        path = tmp_path / "t.ntrl"
        write_trials(path, ds)
        blob = bytearray(path.read_bytes())
        record_size = 6 + 4 * 8 * 128
        # overwrite the second record's id with the first record's id (0)
        second = 22 + record_size
        blob[second : second + 4] = (0).to_bytes(4, "little")
        with pytest.raises(DataFormatError, match="duplicate"):
            read_trials(self._write(tmp_path, bytes(blob)))
