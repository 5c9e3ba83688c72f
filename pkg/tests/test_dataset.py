import numpy as np
import pytest

from auscult import dataset
from auscult.dataset import Anomaly, Diagnosis, PathologyTask

import oracles


class TestParseWav:
    def test_pcm16_mono_scaling(self):
        clip = dataset.parse_wav(oracles.pcm16_wav([0, 32767], rate=8000))
        assert clip.sample_rate == 8000
        np.testing.assert_allclose(clip.samples, [0.0, 32767 / 32768], atol=0)

    def test_stereo_mean_downmix(self):
        clip = dataset.parse_wav(oracles.pcm16_wav([1000, 3000], rate=8000, channels=2))
        np.testing.assert_allclose(clip.samples, [2000 / 32768])

    def test_rifx_is_malformed(self):
        data = b"RIFX" + oracles.pcm16_wav([0])[4:]
        with pytest.raises(dataset.MalformedHeaderError):
            dataset.parse_wav(data)

    def test_not_riff_at_all(self):
        with pytest.raises(dataset.MalformedHeaderError):
            dataset.parse_wav(b"OggS" + b"\x00" * 64)

    def test_pcm8_unsigned(self):
        clip = dataset.parse_wav(oracles.pcm8_wav([128, 255, 0]))
        np.testing.assert_allclose(clip.samples, [0.0, 127 / 128, -1.0])

    def test_pcm32(self):
        clip = dataset.parse_wav(oracles.pcm32_wav([2**31 - 1, -(2**31)]))
        np.testing.assert_allclose(clip.samples, [(2**31 - 1) / 2**31, -1.0])

    def test_float32_passthrough(self):
        clip = dataset.parse_wav(oracles.float32_wav([0.5, -0.25]))
        np.testing.assert_allclose(clip.samples, [0.5, -0.25], atol=1e-7)

    def test_compressed_format_unsupported(self):
        data = oracles.build_wav(b"\x00\x00", 8000, 1, 16, audio_format=85)  # MP3 tag
        with pytest.raises(dataset.UnsupportedEncodingError):
            dataset.parse_wav(data)

    def test_pcm24_unsupported(self):
        data = oracles.build_wav(b"\x00\x00\x00", 8000, 1, 24)
        with pytest.raises(dataset.UnsupportedEncodingError):
            dataset.parse_wav(data)

    def test_truncated_data_chunk(self):
        good = oracles.pcm16_wav([1, 2, 3, 4])
        with pytest.raises(dataset.TruncatedDataError):
            dataset.parse_wav(good[:-4])

    def test_roundtrip_with_writer_within_one_lsb(self):
        rng = np.random.default_rng(0)
        clip = dataset.AudioClip(rng.uniform(-1, 1, 500), 4000)
        back = dataset.parse_wav(dataset.write_wav(clip))
        assert back.sample_rate == 4000
        assert np.abs(back.samples - clip.samples).max() <= 1 / 32768


class TestParseAnnotation:
    def test_normal_line(self):
        (ann,) = dataset.parse_annotation("0.036 2.511 0 0")
        assert (ann.begin_s, ann.end_s, ann.crackles, ann.wheezes) == (0.036, 2.511, False, False)

    def test_both_flags(self):
        (ann,) = dataset.parse_annotation("2.511\t4.800\t1\t1")
        assert (ann.crackles, ann.wheezes) == (True, True)

    def test_multiple_lines_in_order(self):
        anns = dataset.parse_annotation("0.0 1.0 0 0\n1.0 2.0 1 0\n\n2.0 3.0 0 1\n")
        assert [a.begin_s for a in anns] == [0.0, 1.0, 2.0]

    def test_inverted_interval(self):
        with pytest.raises(dataset.InvertedIntervalError):
            dataset.parse_annotation("1.0 0.5 0 0")

    def test_bad_field_count(self):
        with pytest.raises(dataset.BadFieldCountError):
            dataset.parse_annotation("0.0 1.0 0")

    def test_non_numeric_time(self):
        with pytest.raises(dataset.NonNumericTimeError):
            dataset.parse_annotation("zero 1.0 0 0")

    def test_flag_out_of_range(self):
        with pytest.raises(dataset.FlagOutOfRangeError):
            dataset.parse_annotation("0.0 1.0 2 0")

    def test_duration_above_90s_rejected(self):
        with pytest.raises(dataset.AnnotationError):
            dataset.parse_annotation("0.0 95.0 0 0")


class TestParseFilenameMetadata:
    def test_standard_name(self):
        meta = dataset.parse_filename_metadata("101_1b1_Al_sc_Meditron.wav")
        assert meta == dataset.RecordingMetadata("101", "1b1", "Al", "sc", "Meditron")

    def test_other_equipment(self):
        meta = dataset.parse_filename_metadata("226_1b1_Pl_sc_LittC2SE.wav")
        assert meta.patient_id == "226"
        assert meta.equipment == "LittC2SE"

    def test_bad_token_count(self):
        with pytest.raises(dataset.BadTokenCountError):
            dataset.parse_filename_metadata("x_y_z.wav")


class TestParseDiagnosisTable:
    def test_simple_rows(self):
        table = dataset.parse_diagnosis_table("101,URTI\n103,Asthma\n")
        assert table == {"101": Diagnosis.URTI, "103": Diagnosis.ASTHMA}

    def test_tab_separator_and_case(self):
        table = dataset.parse_diagnosis_table("7\tcopd")
        assert table == {"7": Diagnosis.COPD}

    def test_unknown_diagnosis(self):
        with pytest.raises(dataset.UnknownDiagnosisError):
            dataset.parse_diagnosis_table("105,Flu")

    def test_duplicate_patient(self):
        with pytest.raises(dataset.DuplicatePatientError):
            dataset.parse_diagnosis_table("101,URTI\n101,COPD")


def _recording(duration_s=2.0, rate=4000, anns=None, diagnosis=Diagnosis.HEALTHY):
    rng = np.random.default_rng(1)
    clip = dataset.AudioClip(rng.uniform(-0.5, 0.5, int(duration_s * rate)), rate)
    return dataset.Recording(
        clip=clip,
        cycles=anns or [],
        diagnosis=diagnosis,
        source=dataset.RecordingMetadata("101", "1b1", "Al", "sc", "Meditron"),
    )


class TestExtractCycles:
    def test_slice_length_and_label(self):
        rec = _recording(anns=[dataset.CycleAnnotation(0.0, 0.5, False, True)])
        (cyc,) = dataset.extract_cycles(rec)
        assert cyc.clip.samples.size == 2000
        assert cyc.anomaly is Anomaly.WHEEZES

    def test_both_flags_label(self):
        rec = _recording(anns=[dataset.CycleAnnotation(0.1, 0.4, True, True)])
        assert dataset.extract_cycles(rec)[0].anomaly is Anomaly.BOTH

    def test_out_of_bounds(self):
        clip = dataset.AudioClip(np.zeros(90 * 1000), 1000)
        rec = dataset.Recording(
            clip=clip,
            cycles=[dataset.CycleAnnotation(85.0, 91.0, False, False)],
            diagnosis=None,
            source=dataset.RecordingMetadata("1", "1", "A", "s", "E"),
        )
        with pytest.raises(dataset.OutOfBoundsIntervalError):
            dataset.extract_cycles(rec)

    def test_flag_label_bijection(self):
        for flags, want in [
            ((False, False), Anomaly.NORMAL),
            ((True, False), Anomaly.CRACKLES),
            ((False, True), Anomaly.WHEEZES),
            ((True, True), Anomaly.BOTH),
        ]:
            assert Anomaly.from_flags(*flags) is want

    def test_lengths_within_one_sample_of_duration(self):
        rng = np.random.default_rng(2)
        anns = []
        t = 0.0
        for _ in range(6):
            dur = rng.uniform(0.21, 0.9)
            anns.append(dataset.CycleAnnotation(t, t + dur, False, False))
            t += dur
        rec = _recording(duration_s=t + 0.1, anns=anns)
        cycles = dataset.extract_cycles(rec)
        total = sum(c.clip.samples.size for c in cycles)
        assert total <= rec.clip.samples.size
        for ann, cyc in zip(rec.cycles, cycles):
            want = round((ann.end_s - ann.begin_s) * 4000)
            assert abs(cyc.clip.samples.size - want) <= 1

    def test_cycles_sorted_by_begin(self):
        rec = _recording(
            anns=[
                dataset.CycleAnnotation(1.0, 1.5, False, False),
                dataset.CycleAnnotation(0.0, 0.5, True, False),
            ]
        )
        assert [a.begin_s for a in rec.cycles] == [0.0, 1.0]


class TestMapPathologyLabel:
    def test_copd_ternary_is_chronic(self):
        assert dataset.map_pathology_label(Diagnosis.COPD, PathologyTask.TERNARY) == 1

    def test_pneumonia_ternary_is_non_chronic(self):
        assert dataset.map_pathology_label(Diagnosis.PNEUMONIA, PathologyTask.TERNARY) == 2

    def test_healthy_binary(self):
        assert dataset.map_pathology_label(Diagnosis.HEALTHY, PathologyTask.BINARY) == 0

    def test_partition_sizes(self):
        buckets = {0: [], 1: [], 2: []}
        for d in Diagnosis:
            buckets[dataset.map_pathology_label(d, PathologyTask.TERNARY)].append(d)
        assert sorted(len(v) for v in buckets.values()) == [1, 3, 4]
        binary = {dataset.map_pathology_label(d, PathologyTask.BINARY) for d in Diagnosis}
        assert binary == {0, 1}


class TestResample:
    def test_dc_preserved(self):
        clip = dataset.AudioClip(np.full(8000, 0.5), 8000)
        out = dataset.resample(clip, 4000)
        assert out.sample_rate == 4000
        interior = out.samples[100:-100]
        np.testing.assert_allclose(interior, 0.5, atol=1e-6)

    def test_identity_bit_exact(self):
        rng = np.random.default_rng(3)
        clip = dataset.AudioClip(rng.uniform(-1, 1, 4000), 4000)
        out = dataset.resample(clip, 4000)
        assert np.array_equal(out.samples, clip.samples)
        assert out.samples is not clip.samples

    def test_sine_against_analytic(self):
        rate_in, rate_out, f = 8000, 4000, 100.0
        t_in = np.arange(2 * rate_in) / rate_in
        clip = dataset.AudioClip(0.8 * np.sin(2 * np.pi * f * t_in), rate_in)
        out = dataset.resample(clip, rate_out)
        t_out = np.arange(out.samples.size) / rate_out
        ideal = 0.8 * np.sin(2 * np.pi * f * t_out)
        a, b = out.samples[200:-200], ideal[200:-200]
        corr = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert corr >= 0.999

    def test_duration_within_one_output_sample(self):
        clip = dataset.AudioClip(np.zeros(44100) + 0.1, 44100)
        out = dataset.resample(clip, 4000)
        assert abs(out.samples.size - 4000) <= 1

    def test_upsampling(self):
        clip = dataset.AudioClip(np.full(1000, 0.25), 2000)
        out = dataset.resample(clip, 4000)
        assert out.samples.size == 2000
        np.testing.assert_allclose(out.samples, 0.25, atol=1e-9)


class TestSynthDataset:
    def test_same_seed_identical(self):
        a = dataset.synth_dataset(10, classes=2, seed=4)
        b = dataset.synth_dataset(10, classes=2, seed=4)
        assert all(np.array_equal(x.clip.samples, y.clip.samples) for x, y in zip(a, b))
        assert [x.anomaly for x in a] == [y.anomaly for y in b]

    def test_balanced_classes(self):
        cycles = dataset.synth_dataset(200, classes=2, seed=0)
        counts = {c: 0 for c in range(2)}
        for cyc in cycles:
            counts[int(cyc.anomaly)] += 1
        assert counts == {0: 100, 1: 100}

    def test_different_seeds_differ(self):
        a = dataset.synth_dataset(4, classes=2, seed=1)
        b = dataset.synth_dataset(4, classes=2, seed=2)
        assert any(not np.array_equal(x.clip.samples, y.clip.samples) for x, y in zip(a, b))

    def test_patients_are_class_pure(self):
        cycles = dataset.synth_dataset(64, classes=4, seed=9)
        by_patient = {}
        for c in cycles:
            by_patient.setdefault(c.source.patient_id, set()).add(c.diagnosis)
        assert all(len(v) == 1 for v in by_patient.values())

    def test_samples_in_range(self):
        for c in dataset.synth_dataset(8, classes=3, seed=5):
            assert np.abs(c.clip.samples).max() <= 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            dataset.synth_dataset(0)
        with pytest.raises(ValueError):
            dataset.synth_dataset(10, classes=5)


class TestLoadRecordings:
    def test_roundtrip_directory(self, tmp_path):
        rng = np.random.default_rng(8)
        clip = dataset.AudioClip(rng.uniform(-0.5, 0.5, 8000), 4000)
        (tmp_path / "101_1b1_Al_sc_Meditron.wav").write_bytes(dataset.write_wav(clip))
        (tmp_path / "101_1b1_Al_sc_Meditron.txt").write_text("0.0 1.0 0 1\n1.0 2.0 1 0\n")
        (tmp_path / "patient_diagnosis.csv").write_text("101,COPD\n")
        (recs,) = [dataset.load_recordings(tmp_path)][0:1]
        rec = recs[0]
        assert rec.diagnosis is Diagnosis.COPD
        assert len(rec.cycles) == 2
        cycles = dataset.extract_cycles(rec)
        assert [c.anomaly for c in cycles] == [Anomaly.WHEEZES, Anomaly.CRACKLES]

    def test_missing_annotation_skipped(self, tmp_path):
        clip = dataset.AudioClip(np.zeros(100) + 0.1, 4000)
        (tmp_path / "101_1b1_Al_sc_M.wav").write_bytes(dataset.write_wav(clip))
        (tmp_path / "102_1b1_Al_sc_M.wav").write_bytes(dataset.write_wav(clip))
        (tmp_path / "102_1b1_Al_sc_M.txt").write_text("0.0 0.02 0 0\n")
        recs = dataset.load_recordings(tmp_path)
        assert [r.source.patient_id for r in recs] == ["102"]

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(dataset.DatasetError):
            dataset.load_recordings(tmp_path)
