"""Desk-scale datasets: 8x8 digit sequences and synthetic speakers."""

from __future__ import annotations

import numpy as np

from .features import IDXDataset, serialize_idx, serialize_idx_labels


def digit_sequences(seed: int = 0, train: int = 1300, val: int = 200):
    """The 8x8 digit set as 64-step scalar sequences.

    Pixels are scanned row-major, one value per time step, rescaled to
    [0, 1].  Returns train/val/test splits as (x (N, 64, 1), y) pairs.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = digits.data.astype(np.float64) / 16.0
    y = digits.target.astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(x))
    x, y = x[order], y[order]
    seqs = x[:, :, None]
    return (
        (seqs[:train], y[:train]),
        (seqs[train : train + val], y[train : train + val]),
        (seqs[train + val :], y[train + val :]),
    )


def write_digits_idx(images_path, labels_path, x: np.ndarray, y: np.ndarray) -> None:
    """Store a digit split as an IDX image file plus IDX label file."""
    n = x.shape[0]
    imgs = x.reshape(n, 8, 8)
    with open(images_path, "wb") as f:
        f.write(serialize_idx(IDXDataset(imgs, np.empty(0, dtype=np.int64))))
    with open(labels_path, "wb") as f:
        f.write(serialize_idx_labels(y))


def synthetic_speakers(seed: int = 0, n_speakers: int = 12, utterances: int = 10,
                       frames: int = 10, width: int = 8, noise: float = 0.15,
                       val_fraction: float = 0.3) -> dict:
    """Per-speaker Gaussian clusters in feature space.

    Each utterance is a (frames, width) sequence around a unit-norm
    speaker mean; speakers are well separated so a trained encoder can
    reach low EER.  Returns {"train": {...}, "val": {...}} with per-
    speaker utterance lists.
    """
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_speakers, width))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    train, val = {}, {}
    n_val = max(1, int(round(utterances * val_fraction)))
    for j in range(n_speakers):
        utts = [
            means[j] + noise * rng.standard_normal((frames, width))
            for _ in range(utterances)
        ]
        name = f"spk{j:03d}"
        train[name] = utts[n_val:]
        val[name] = utts[:n_val]
    return {"train": train, "val": val}
