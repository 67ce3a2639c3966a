"""End-to-end smoke test for the Python bindings.

Exercises the main operations: synthesis, tokenization, dataset I/O, a short
training run, emotion decoding, agents and the streaming pipeline.
"""

import math
import os
import sys
import tempfile

import ithroat as it


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert it.token_len_samples(500) == 72
    assert it.token_len_samples(250) == 36

    vocab = it.make_vocab(seed=7, v=6)
    assert vocab.size == 6
    texts = [vocab.text(i) for i in range(1, 7)]
    assert len(set(texts)) == 6

    profile = it.healthy_profile(3)
    script = [("pause", 0.5), ("word", 1), ("pause", 0.5), ("word", 2),
              ("pause", 0.6), ("emotion", "frustrated"), ("pause", 6.0)]
    stream = it.synth_session(script, vocab, profile, sample_rate_hz=250,
                              snr_db=20.0, seed=11)
    assert stream.sample_rate_hz == 250
    words = [a for a in stream.annotations if a["kind"] == "word"]
    assert [w["word_id"] for w in words] == [1, 2]

    labels = it.tokenize_labels(stream)
    assert set(labels) <= set(range(0, 7))
    assert any(l == 1 for l in labels) and any(l == 2 for l in labels)

    # TSA round trip on the ground-truth labels
    assert it.synthesize_text(labels, vocab) == f"{vocab.text(1)} {vocab.text(2)}"
    assert it.smooth_labels([5, 0, 5]) == [5, 5, 5]
    assert approx(it.wer(["we", "go", "hospital"], ["we", "hospital"]), 1 / 3)
    assert it.ser(["a b"], ["a  b"]) == 0.0

    # dataset build + file round trip
    sessions = []
    for word in (1, 2, 3):
        for rep in range(3):
            s = [("pause", 0.4), ("word", word), ("pause", 0.4)]
            sessions.append(it.synth_session(s, vocab, profile, sample_rate_hz=250,
                                             snr_db=20.0, pulse_channel=False,
                                             seed=100 * word + rep))
    ds = it.build_token_dataset(sessions, n=1, class_count=7)
    assert ds.n == 1 and ds.token_len == 36 and ds.class_count == 7
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "smoke.itds")
        it.write_dataset(path, ds)
        loaded = it.read_dataset(path)
        assert loaded.sample_count == ds.sample_count
        assert loaded.labels == ds.labels

        # short training run + evaluation + stream classification
        arch = it.student_arch(36, 7)
        assert it.count_flops(arch) > 0
        model, best_val, log = it.pretrain(ds, arch, {"epochs": 6, "lr": 3e-3, "seed": 5})
        assert len(log) == 6
        report = it.evaluate(model, ds)
        assert 0.0 <= report["token_accuracy"] <= 1.0
        preds = it.classify_stream(model, stream, n=1)
        assert len(preds) == len(labels)

        ckpt = os.path.join(tmp, "smoke.itnn")
        it.save_checkpoint(ckpt, model)
        reloaded = it.load_checkpoint(ckpt)
        assert it.evaluate(reloaded, ds)["token_accuracy"] == report["token_accuracy"]

        # emotion: windows -> train -> classify -> saliency
        windows = []
        for name in ("neutral", "relieved", "frustrated"):
            pulse = it.synth_pulse(name, duration_s=65.0, sample_rate_hz=50, seed=9)
            for k in range(12):
                windows.append((pulse[k * 250:(k + 1) * 250], name))
        emodel, stats = it.train_emotion(windows, kind="lda", uses_dft=True, seed=2)
        assert stats["val_accuracy"] >= 0.5
        label, scores = it.classify_emotion(emodel, windows[0][0])
        assert label in ("neutral", "relieved", "frustrated")
        sal = it.freq_saliency(emodel, windows[0][0])
        assert approx(sum(sal), 1.0, 1e-6)

        spectrum = it.preprocess_window(windows[0][0])
        assert len(spectrum["magnitudes"]) == 129

        # FFT parseval against a naive python sum
        xs = [math.sin(0.37 * i) for i in range(100)]
        bins = it.fft(xs, 256)
        time_e = sum(v * v for v in xs)
        freq_e = sum(abs(c) ** 2 for c in bins) / 256.0
        assert approx(time_e, freq_e, 1e-9)

        # sentence expansion + validator
        expanded = it.expand_sentence(["we", "go", "hospital"], emotion="frustrated",
                                      time_of_day="morning", weather="rainy",
                                      location="home")
        ok, violations = it.check_expansion(["we", "go", "hospital"], expanded,
                                            emotion="frustrated")
        assert ok, violations

        # streaming pipeline on files: deterministic replay
        vocab_path = os.path.join(tmp, "vocab.json")
        stream_path = os.path.join(tmp, "session.itss")
        it.write_vocab(vocab_path, vocab)
        it.write_stream(stream_path, stream)
        events1 = it.run_pipeline(stream_path, ckpt, vocab_path, n=1)
        events2 = it.run_pipeline(stream_path, ckpt, vocab_path, n=1)
        strip = lambda evs: [(e["kind"], e["payload"], e["stream_time_s"]) for e in evs]
        assert strip(events1) == strip(events2)

    print("python smoke test OK")


if __name__ == "__main__":
    sys.exit(main())
