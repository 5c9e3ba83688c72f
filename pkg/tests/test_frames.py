import numpy as np
import pytest

from auscult import dsp, frames
from auscult.dataset import Anomaly, AudioClip, Diagnosis, RecordingMetadata, RespiratoryCycle

import oracles

META = RecordingMetadata("101", "1b1", "Al", "sc", "Meditron")


def _cycle(duration_ms, rate=4000, seed=0, anomaly=Anomaly.NORMAL):
    rng = np.random.default_rng(seed)
    n = round(duration_ms * rate / 1000)
    return RespiratoryCycle(
        clip=AudioClip(rng.uniform(-0.5, 0.5, n), rate),
        anomaly=anomaly,
        diagnosis=Diagnosis.HEALTHY,
        source=META,
    )


class TestBuiltinSettings:
    def test_seven_settings(self):
        ids = [s.id for s in frames.builtin_settings()]
        assert ids == ["S1", "S2", "S3", "S4", "S5", "S6", "S7"]

    def test_s4_row(self):
        s = frames.get_setting("S4")
        assert (s.window_ms, s.step_ms, s.group, s.frame_ms, s.n_features) == (50, 50, 5, 250, 65)

    def test_s6_row(self):
        s = frames.get_setting("S6")
        assert (s.window_ms, s.step_ms, s.group, s.frame_ms, s.n_features) == (50, 50, 10, 500, 130)

    def test_s7_row(self):
        s = frames.get_setting("S7")
        assert (s.window_ms, s.step_ms, s.group, s.frame_ms, s.n_features) == (50, 25, 10, 275, 130)

    def test_feature_dims_match_table(self):
        assert [s.n_features for s in frames.builtin_settings()] == [13, 13, 13, 65, 65, 130, 130]

    def test_invariants_hold_for_all(self):
        for s in frames.builtin_settings():
            assert s.n_features == 13 * s.group
            assert s.frame_ms == s.window_ms + (s.group - 1) * s.step_ms
            assert s.step_ms in (s.window_ms, s.window_ms // 2)

    def test_unknown_setting(self):
        with pytest.raises(KeyError):
            frames.get_setting("S9")

    def test_bad_setting_rejected(self):
        with pytest.raises(ValueError):
            frames.FrameSetting("SX", 500, 500, 1, 500, 26)


class TestCountWindows:
    def test_2500ms_s1(self):
        assert frames.count_windows(2500, frames.get_setting("S1")) == 5

    def test_2500ms_s2(self):
        assert frames.count_windows(2500, frames.get_setting("S2")) == 9

    def test_too_short(self):
        with pytest.raises(frames.CycleTooShortError):
            frames.count_windows(200, frames.get_setting("S1"))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = frames.builtin_settings()[rng.integers(0, 7)]
            dur = int(rng.integers(s.window_ms, 4000))
            n_samples = frames.ms_to_samples(dur, 4000)
            win = frames.ms_to_samples(s.window_ms, 4000)
            step = frames.ms_to_samples(s.step_ms, 4000)
            assert frames.window_offsets(n_samples, s, 4000).size == oracles.brute_force_window_count(
                n_samples, win, step
            )


class TestWindowOverlap:
    def test_null_overlap_settings(self):
        # step == window: window i's end sample is window i+1's start sample
        for sid in ("S1", "S3", "S4", "S6"):
            s = frames.get_setting(sid)
            offs = frames.window_offsets(4000 * 3, s, 4000)
            win = frames.ms_to_samples(s.window_ms, 4000)
            assert (np.diff(offs) == win).all()

    def test_half_overlap_settings(self):
        for sid in ("S2", "S5", "S7"):
            s = frames.get_setting(sid)
            offs = frames.window_offsets(4000 * 3, s, 4000)
            win = frames.ms_to_samples(s.window_ms, 4000)
            assert (np.diff(offs) == win // 2).all()


class TestComposeFrames:
    def test_2500ms_s4_shape(self):
        seq = frames.compose_frames(_cycle(2500), frames.get_setting("S4"))
        assert seq.frames.shape == (10, 65)

    def test_2500ms_s1_shape(self):
        seq = frames.compose_frames(_cycle(2500), frames.get_setting("S1"))
        assert seq.frames.shape == (5, 13)

    def test_all_settings_feature_width(self):
        cyc = _cycle(2500)
        for s in frames.builtin_settings():
            seq = frames.compose_frames(cyc, s)
            assert seq.n_features == s.n_features

    def test_frame_blocks_equal_direct_mfcc(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            dur = int(rng.integers(600, 3000))
            s = frames.builtin_settings()[rng.integers(0, 7)]
            cyc = _cycle(dur, seed=int(rng.integers(1 << 30)))
            seq = frames.compose_frames(cyc, s)
            win = frames.ms_to_samples(s.window_ms, 4000)
            step = frames.ms_to_samples(s.step_ms, 4000)
            for f in range(seq.n_frames):
                for b in range(s.group):
                    start = (f * s.group + b) * step
                    want = dsp.mfcc(cyc.clip.samples[start : start + win], 4000)
                    got = seq.frames[f, b * 13 : (b + 1) * 13]
                    assert np.abs(got - want).max() <= 1e-12

    def test_label_defaults_to_anomaly(self):
        seq = frames.compose_frames(_cycle(1000, anomaly=Anomaly.WHEEZES), frames.get_setting("S3"))
        assert seq.label == 2
        seq = frames.compose_frames(
            _cycle(1000, anomaly=Anomaly.WHEEZES), frames.get_setting("S3"), label=1
        )
        assert seq.label == 1

    def test_monotone_in_duration(self):
        for s in frames.builtin_settings():
            prev = 0
            for dur in (600, 1200, 2400, 4800):
                n = frames.compose_frames(_cycle(dur), s).n_frames
                assert n >= prev
                prev = n

    def test_too_short_cycle(self):
        with pytest.raises(frames.CycleTooShortError):
            frames.compose_frames(_cycle(200), frames.get_setting("S1"))

    def test_empty_after_grouping(self):
        # 260 ms under S6: 5 windows of 50/50 cannot fill a group of 10
        with pytest.raises(frames.EmptyAfterGroupingError):
            frames.compose_frames(_cycle(260), frames.get_setting("S6"))

    def test_trailing_windows_dropped(self):
        # 2600 ms, S4: 52 windows -> 10 frames, 2 windows dropped
        seq = frames.compose_frames(_cycle(2600), frames.get_setting("S4"))
        assert seq.n_frames == 10

    def test_ms_to_samples_round_half_up(self):
        assert frames.ms_to_samples(50, 4000) == 200
        assert frames.ms_to_samples(25, 4000) == 100
        assert frames.ms_to_samples(0.125, 4000) == 1  # 0.5 rounds up
