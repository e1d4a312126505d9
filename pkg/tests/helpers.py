import numpy as np


def random_batch(rng, vocab_size, batch=3, k=12, min_len=2):
    from sas.corpus import CLS_ID, NUM_SPECIALS, PAD_ID

    ids = rng.integers(NUM_SPECIALS, vocab_size, size=(batch, k))
    pad = np.ones((batch, k), dtype=bool)
    for b in range(batch):
        n = int(rng.integers(min_len, k + 1))
        ids[b, n:] = PAD_ID
        pad[b, n:] = False
    ids[:, 0] = CLS_ID
    return ids, pad
