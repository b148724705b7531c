"""End-to-end command-line behavior, including exit codes."""

import json

import numpy as np
import pytest

from ttrnn import cli, features
from ttrnn.features import AudioBuffer, IDXDataset, permute_pixels, serialize_idx, serialize_idx_labels, write_wav_pcm16
from ttrnn.tensor import DenseTensor, read_tten, write_tten


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# params


class TestParams:
    def test_table_dense_count(self, capsys):
        code, out, _ = run_cli(capsys, "params", "--cell", "lstm", "--hidden", "512",
                               "--input", "4096", "--embed", "256")
        assert code == 0
        assert "9,570,560" in out

    def test_digit_table_dense_count(self, capsys):
        code, out, _ = run_cli(capsys, "params", "--cell", "lstm", "--hidden", "256",
                               "--input", "1", "--embed", "10")
        assert code == 0
        assert "266,762" in out

    def test_minimal_no_bias(self, capsys):
        code, out, _ = run_cli(capsys, "params", "--cell", "lstm", "--hidden", "1",
                               "--input", "1", "--embed", "0", "--no-bias")
        assert code == 0
        assert "dense parameters:        8" in out

    def test_bad_config_file(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text('{"not_a_key": 1}')
        code, _, err = run_cli(capsys, "params", "--config", str(p))
        assert code == 2
        assert "not_a_key" in err


# ---------------------------------------------------------------------------
# decompose


class TestDecompose:
    def _write_matrix(self, path, a):
        write_tten(path, DenseTensor(a))

    def test_low_rank_matrix(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        a = np.kron(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
        src = tmp_path / "w.tten"
        out = tmp_path / "ckpt"
        self._write_matrix(str(src), a)
        code, text, _ = run_cli(capsys, "decompose", str(src),
                                "--row-factorization", "2,2",
                                "--col-factorization", "2,2",
                                "--ranks", "1",
                                "--out", str(out))
        assert code == 0
        assert "ranks: (1, 1, 1)" in text
        # a Kronecker product is separable: rank-1 truncation is lossless
        err = float(text.split("Frobenius): ")[1].split("\n")[0])
        assert err < 1e-10
        assert out.exists()

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "decompose", str(tmp_path / "absent.tten"),
                             "--row-factorization", "2,2",
                             "--col-factorization", "2,2",
                             "--out", str(tmp_path / "o"))
        assert code == 3

    def test_factorization_mismatch_is_config_error(self, tmp_path, capsys):
        src = tmp_path / "w.tten"
        self._write_matrix(str(src), np.ones((4, 4)))
        code, _, _ = run_cli(capsys, "decompose", str(src),
                             "--row-factorization", "3,2",
                             "--col-factorization", "2,2",
                             "--out", str(tmp_path / "o"))
        assert code == 2

    def test_vector_input_rejected(self, tmp_path, capsys):
        src = tmp_path / "v.tten"
        self._write_matrix(str(src), np.ones(8))
        code, _, _ = run_cli(capsys, "decompose", str(src),
                             "--row-factorization", "2",
                             "--col-factorization", "4",
                             "--out", str(tmp_path / "o"))
        assert code == 2


# ---------------------------------------------------------------------------
# train / eval


def _write_idx_pair(tmp_path, prefix, n, seed, side=8):
    rng = np.random.default_rng(seed)
    imgs = rng.random((n, side, side))
    labels = rng.integers(0, 10, n).astype(np.int64)
    ip = tmp_path / f"{prefix}-images.idx"
    lp = tmp_path / f"{prefix}-labels.idx"
    ip.write_bytes(serialize_idx(IDXDataset(imgs, np.empty(0, dtype=np.int64))))
    lp.write_bytes(serialize_idx_labels(labels))
    return str(ip), str(lp)


@pytest.fixture
def trained_checkpoint(tmp_path, capsys):
    ti, tl = _write_idx_pair(tmp_path, "train", 24, 0)
    vi, vl = _write_idx_pair(tmp_path, "val", 8, 1)
    cfg = {"task": "mnist-seq", "cell": "lstm", "mode": "tt-fused",
           "hidden": 8, "input": 1, "cores": 2, "rank": 2, "classes": 10,
           "epochs": 1, "batch_size": 8, "lr": 1e-3, "seed": 0,
           "data": {"images": ti, "labels": tl, "val_images": vi, "val_labels": vl}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_dir = tmp_path / "run"
    code, out, err = run_cli(capsys, "train", "--config", str(cfg_path),
                             "--out", str(out_dir))
    assert code == 0, err
    return tmp_path, out_dir


class TestTrainEval:
    def test_train_writes_history_and_checkpoint(self, trained_checkpoint):
        tmp_path, out_dir = trained_checkpoint
        history = (out_dir / "history.csv").read_text()
        assert history.startswith("epoch,train_loss,val_metric,lr")
        assert (out_dir / "checkpoint" / "manifest.json").exists()

    def test_eval_accuracy_round_trip(self, trained_checkpoint, capsys):
        tmp_path, out_dir = trained_checkpoint
        ti, tl = _write_idx_pair(tmp_path, "test", 8, 2)
        code, out, _ = run_cli(capsys, "eval", "--metric", "accuracy",
                               "--checkpoint", str(out_dir / "checkpoint"),
                               "--images", ti, "--labels", tl,
                               "--out", str(tmp_path / "rep"))
        assert code == 0
        assert out.startswith("accuracy:")
        report = json.loads((tmp_path / "rep" / "eval.json").read_text())
        assert report[0]["metric"] == "accuracy"
        assert 0.0 <= report[0]["value"] <= 1.0

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        ti, tl = _write_idx_pair(tmp_path, "t", 4, 0)
        code, _, _ = run_cli(capsys, "eval", "--metric", "accuracy",
                             "--checkpoint", str(tmp_path / "nope"),
                             "--images", ti, "--labels", tl)
        assert code == 3

    def test_train_verif_toy(self, tmp_path, capsys):
        cfg = {"task": "verif-toy", "cell": "gru", "mode": "dense",
               "hidden": 8, "input": 6, "embed": 4, "epochs": 1, "seed": 0,
               "n_speakers": 4, "utterances": 7, "frames": 4,
               "speakers_per_batch": 3, "utterances_per_speaker": 2}
        cfg_path = tmp_path / "v.json"
        cfg_path.write_text(json.dumps(cfg))
        code, out, err = run_cli(capsys, "train", "--config", str(cfg_path),
                                 "--out", str(tmp_path / "vrun"))
        assert code == 0, err
        assert "val_eer" in out

    def test_eval_wrong_task_checkpoint(self, tmp_path, capsys):
        cfg = {"task": "verif-toy", "cell": "gru", "mode": "dense",
               "hidden": 8, "input": 6, "embed": 4, "epochs": 1, "seed": 0,
               "n_speakers": 4, "utterances": 7, "frames": 4,
               "speakers_per_batch": 3, "utterances_per_speaker": 2}
        cfg_path = tmp_path / "v.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["train", "--config", str(cfg_path),
                         "--out", str(tmp_path / "vrun")]) == 0
        capsys.readouterr()
        ti, tl = _write_idx_pair(tmp_path, "t", 4, 0)
        code, _, err = run_cli(capsys, "eval", "--metric", "accuracy",
                               "--checkpoint", str(tmp_path / "vrun" / "checkpoint"),
                               "--images", ti, "--labels", tl)
        assert code == 2

    def test_eval_eer_score_file(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        scores.write_text("label,score\npos,0.9\npos,0.8\nneg,0.2\nneg,0.1\n")
        code, out, _ = run_cli(capsys, "eval", "--metric", "eer",
                               "--scores", str(scores))
        assert code == 0
        assert "eer: 0.000000" in out


# ---------------------------------------------------------------------------
# bench


class TestBench:
    def test_smoke_table_and_reports(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "bench", "--hidden", "16", "--input", "4",
                               "--embed", "0", "--cores", "2", "--ranks", "2",
                               "--reps", "2", "--out", str(tmp_path))
        assert code == 0
        assert "lstm-dense" in out
        assert "tt-lstm-r2" in out
        rows_json = json.loads((tmp_path / "bench.json").read_text())
        csv_lines = (tmp_path / "bench.csv").read_text().strip().split("\n")
        assert len(rows_json) == 2
        assert len(csv_lines) == 3  # header + 2 rows
        models = {row["model"] for row in rows_json}
        assert models == {"lstm-dense", "tt-lstm-r2"}


# ---------------------------------------------------------------------------
# featurize


class TestFeaturize:
    def test_wav_default_log_mel_shape(self, tmp_path, capsys):
        wav = tmp_path / "a.wav"
        rng = np.random.default_rng(0)
        wav.write_bytes(write_wav_pcm16(AudioBuffer(0.1 * rng.standard_normal(8000), 8000)))
        out = tmp_path / "f.tten"
        code, text, _ = run_cli(capsys, "featurize", str(wav), "--out", str(out))
        assert code == 0
        assert "98x40" in text
        assert read_tten(str(out)).array.shape == (98, 40)

    def test_wav_mfcc(self, tmp_path, capsys):
        wav = tmp_path / "a.wav"
        rng = np.random.default_rng(1)
        wav.write_bytes(write_wav_pcm16(AudioBuffer(0.1 * rng.standard_normal(8000), 8000)))
        out = tmp_path / "f.tten"
        code, _, _ = run_cli(capsys, "featurize", str(wav), "--mfcc", "13",
                             "--out", str(out))
        assert code == 0
        assert read_tten(str(out)).array.shape == (98, 13)

    def test_idx_permute_matches_library(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        imgs = rng.random((3, 8, 8))
        src = tmp_path / "d.idx"
        src.write_bytes(serialize_idx(IDXDataset(imgs, np.empty(0, dtype=np.int64))))
        out = tmp_path / "f.tten"
        code, _, _ = run_cli(capsys, "featurize", str(src), "--permute",
                             "--seed", "5", "--out", str(out))
        assert code == 0
        ds = features.parse_idx(src.read_bytes())
        want = permute_pixels(ds, 5).items.reshape(3, -1)
        assert np.allclose(read_tten(str(out)).array, want)

    def test_corrupt_wav_is_io_error(self, tmp_path, capsys):
        wav = tmp_path / "bad.wav"
        raw = bytearray(write_wav_pcm16(AudioBuffer(np.zeros(100), 8000)))
        raw[20] = 3  # float encoding flag
        wav.write_bytes(bytes(raw))
        code, _, _ = run_cli(capsys, "featurize", str(wav),
                             "--out", str(tmp_path / "o.tten"))
        assert code == 3


# ---------------------------------------------------------------------------
# gradcheck


class TestGradcheck:
    def test_default_suite_passes(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck")
        assert code == 0
        assert "pass" in out
        assert "FAIL" not in out

    def test_coarse_eps_fails(self, capsys):
        code, _, err = run_cli(capsys, "gradcheck", "--eps", "1e-1")
        assert code == 5
        assert "failed" in err

    def test_only_filter(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--only", "ge2e")
        assert code == 0
        assert "ge2e" in out
        assert "tt_lstm_2step" not in out

    def test_unknown_name_is_config_error(self, capsys):
        code, _, _ = run_cli(capsys, "gradcheck", "--only", "nonexistent")
        assert code == 2
