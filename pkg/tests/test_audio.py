import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dft_peak_hz
from voxcluster.audio import (AudioClip, CorpusManifest, ManifestEntry, decode_wav, encode_wav,
                              enumerate_windows, read_wav, require_windows, resample)
from voxcluster.errors import FormatError, ManifestError, TooShortError, UnsupportedError
from voxcluster.synth import speaker_voice, synth_clip, synth_speaker_corpus


def wav_bytes(frames, channels=1, rate=16000, bits=16, fmt_tag=1):
    payload = np.asarray(frames, dtype="<i2").tobytes() if bits == 16 else bytes(frames)
    block = channels * bits // 8
    return (b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
            + b"fmt " + struct.pack("<IHHIIHH", 16, fmt_tag, channels, rate, rate * block, block, bits)
            + b"data" + struct.pack("<I", len(payload)) + payload)


def test_decode_single_sample():
    clip = decode_wav(wav_bytes([16384]))
    assert clip.samples.tolist() == [0.5]
    assert clip.sample_rate == 16000


def test_decode_stereo_is_averaged():
    clip = decode_wav(wav_bytes([32767, -32767], channels=2, rate=8000))
    assert len(clip) == 1
    assert clip.samples[0] == pytest.approx(0.0, abs=1e-12)
    assert clip.sample_rate == 8000


def test_decode_truncated_header():
    with pytest.raises(FormatError):
        decode_wav(wav_bytes([1, 2, 3])[:20])


@pytest.mark.parametrize("blob", [b"", b"RIFX0000WAVE", b"RIFF\x00\x00\x00\x00WAVE"])
def test_decode_garbage(blob):
    with pytest.raises(FormatError):
        decode_wav(blob)


def test_decode_unsupported_bit_depth():
    with pytest.raises(UnsupportedError):
        decode_wav(wav_bytes([128, 129, 130], bits=8))


def test_decode_unsupported_codec():
    with pytest.raises(UnsupportedError):
        decode_wav(wav_bytes([0, 0], fmt_tag=3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1.0, 0.99996, allow_nan=False), min_size=1, max_size=300))
def test_encode_decode_round_trip(values):
    clip = AudioClip(np.array(values), 16000)
    back = decode_wav(encode_wav(clip))
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - clip.samples)) <= 1 / 32768


def test_resample_identity():
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    out = resample(AudioClip(x, 16000), 16000)
    assert np.array_equal(out.samples, x)


def test_resample_constant_upsample():
    out = resample(AudioClip(np.full(8000, 0.3), 8000), 16000)
    assert abs(len(out) - 16000) <= 1
    np.testing.assert_allclose(out.samples, 0.3, atol=1e-12)


def test_resample_preserves_dominant_frequency():
    t = np.arange(48000) / 48000
    clip = AudioClip(np.sin(2 * np.pi * 100 * t), 48000)
    out = resample(clip, 16000)
    assert abs(len(out) / 16000 - clip.duration) <= 1 / 16000
    assert dft_peak_hz(clip.samples, 48000) == pytest.approx(100.0)
    assert dft_peak_hz(out.samples, 16000) == pytest.approx(100.0)


@pytest.mark.parametrize("rate_in,rate_out", [(8000, 16000), (44100, 16000), (16000, 22050)])
def test_resample_duration(rate_in, rate_out):
    clip = AudioClip(np.zeros(rate_in * 3 + 17), rate_in)
    out = resample(clip, rate_out)
    assert abs(out.duration - clip.duration) <= 1 / rate_out


def _clip(seconds):
    return AudioClip(np.zeros(int(round(seconds * 16000))), 16000, "c")


def test_windows_boundary():
    w = enumerate_windows(_clip(1.0), 0.01)
    assert [x.start_time for x in w] == [0.0]


def test_windows_two():
    assert [x.start_time for x in enumerate_windows(_clip(2.0), 1.0)] == [0.0, 1.0]


def test_windows_105():
    starts = [x.start_time for x in enumerate_windows(_clip(1.05), 0.01)]
    expected = []
    t = 0
    while t * 0.01 + 1.0 <= 1.05 + 1e-12:
        expected.append(t * 0.01)
        t += 1
    assert len(starts) == len(expected) == 6
    np.testing.assert_allclose(starts, expected)


def test_windows_too_short():
    w = enumerate_windows(_clip(0.5), 0.01)
    assert len(w) == 0 and w.too_short
    with pytest.raises(TooShortError):
        require_windows(_clip(0.5))


@settings(max_examples=200, deadline=None)
@given(st.integers(16000, 16000 * 12), st.sampled_from([0.01, 0.1, 0.25, 0.5, 1.0, 0.3]))
def test_window_count_property(n_samples, hop):
    clip = AudioClip(np.zeros(n_samples), 16000)
    length = n_samples / 16000
    w = enumerate_windows(clip, hop)
    assert len(w) == int(np.floor((length - 1.0) / hop + 1e-9)) + 1
    assert all(x.start_time + x.duration <= length + 1e-9 for x in w)


def test_synth_determinism(tmp_path):
    synth_speaker_corpus(2, 1, 2.0, 7, out_dir=tmp_path / "a")
    synth_speaker_corpus(2, 1, 2.0, 7, out_dir=tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 3
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_speakers_differ_in_pitch():
    a = synth_clip(7, 0, 0, 2.0)
    b = synth_clip(7, 1, 0, 2.0)
    # strongest spectral peaks differ, and so do the fundamentals
    assert dft_peak_hz(a.samples, 16000) != dft_peak_hz(b.samples, 16000)
    assert speaker_voice(7, 0).f0 != pytest.approx(speaker_voice(7, 1).f0, rel=0.02)


def test_synth_fundamental_pitch_classes_distinct():
    from voxcluster.features import pitch_class

    classes = [int(pitch_class(speaker_voice(3, s).f0)) for s in range(12)]
    assert len(set(classes)) == 12


def test_synth_short_clip_is_too_short():
    _, clips = synth_speaker_corpus(1, 1, 0.5, 1)
    assert enumerate_windows(clips[0], 1.0).too_short


def test_synth_amplitude_range():
    clip = synth_clip(1, 3, 2, 1.5)
    assert np.all(np.isfinite(clip.samples)) and np.max(np.abs(clip.samples)) <= 1.0


def test_manifest_round_trip(tmp_path):
    manifest, _ = synth_speaker_corpus(3, 5, 1.0, 2, out_dir=tmp_path)
    loaded = CorpusManifest.load(tmp_path / "manifest.csv")
    assert [(e.path.name, e.speaker, e.split) for e in loaded.entries] == \
        [(e.path.name, e.speaker, e.split) for e in manifest.entries]
    assert loaded.num_speakers == 3
    loaded.check_contiguous()
    assert read_wav(loaded.entries[0].path).sample_rate == 16000
    assert (tmp_path / "manifest.csv").read_text().splitlines()[0] == "path,speaker,split"


def test_manifest_canonicalize_and_gaps(tmp_path):
    m = CorpusManifest([ManifestEntry(tmp_path / "a.wav", 4), ManifestEntry(tmp_path / "b.wav", 9)])
    with pytest.raises(ManifestError):
        m.check_contiguous()
    assert [e.speaker for e in m.canonicalize().entries] == [0, 1]


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.csv").write_text("path,speaker,split\nnope.wav,0,train\n")
    with pytest.raises(ManifestError):
        CorpusManifest.load(tmp_path / "m.csv")


def test_manifest_bad_label(tmp_path):
    (tmp_path / "m.csv").write_text("path,speaker,split\nnope.wav,x,train\n")
    with pytest.raises(ManifestError):
        CorpusManifest.load(tmp_path / "m.csv", check_files=False)
