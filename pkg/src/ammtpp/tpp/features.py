"""Deterministic history feature map shared by the neural model families.

Layout of one feature vector (length ``5 + n_marks + 1``)::

    [empty, log1p(last gap), ema_0.1, ema_0.5, ema_0.9, one-hot(last mark), log1p(n events)]

The EMAs run over ``log1p(gap)`` with ``ema <- d * ema + (1 - d) * x`` and are
seeded with the first gap, so constant gaps give constant EMAs.
"""

import numpy as np

EMA_DECAYS = (0.1, 0.5, 0.9)


def n_features(n_marks=31):
    return 5 + n_marks + 1


def history_features(times, marks, n_marks=31):
    """Feature vector of a single history (possibly empty)."""
    times = np.asarray(times, dtype=float)
    marks = np.asarray(marks, dtype=np.int64)
    f = np.zeros(n_features(n_marks))
    if times.size == 0:
        f[0] = 1.0
        return f
    batch = batch_features(times[None, :], marks[None, :], n_marks)
    return batch[0, -1]


def batch_features(times, marks, n_marks=31):
    """Features of every prefix of a padded batch.

    ``out[b, i]`` describes the history made of events ``0..i`` of row ``b``.
    Padded slots produce garbage rows that callers must mask out.
    """
    B, L = times.shape
    D = n_features(n_marks)
    out = np.zeros((B, L, D))
    if L == 0:
        return out
    x = np.zeros((B, L))
    x[:, 1:] = np.log1p(np.maximum(times[:, 1:] - times[:, :-1], 0.0))
    out[:, :, 1] = x
    ema = np.zeros((B, len(EMA_DECAYS)))
    d = np.asarray(EMA_DECAYS)
    for i in range(1, L):
        if i == 1:
            ema = np.repeat(x[:, 1:2], len(EMA_DECAYS), axis=1)
        else:
            ema = d * ema + (1.0 - d) * x[:, i:i + 1]
        out[:, i, 2:5] = ema
    out[:, :, 5:5 + n_marks] = marks[:, :, None] == np.arange(n_marks)
    out[:, :, -1] = np.log1p(np.arange(1, L + 1))[None, :]
    return out
