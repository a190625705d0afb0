"""NumPy implementation of the sequence kernels (import-time fallback).

Mirrors ``_ckernels.pyx`` function-for-function. Agreement with the compiled
version is to rounding (~1e-15), not bit-for-bit: NumPy's vectorised
exp/sum do not promise the strictly ascending accumulation order the C
loops use.
"""

import numpy as np


def _step_log_softmax(B, cond, ids):
    prev = np.empty(len(ids), dtype=np.intp)
    prev[0] = 0  # BOS
    prev[1:] = ids[:-1]
    logits = B[prev] + cond
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return prev, shifted - lse


def cond_vector(C, xe):
    return C @ xe


def seq_logprob(B, cond, ids, max_len):
    ids = np.asarray(ids, dtype=np.intp)
    n_scored = min(len(ids), max_len - 1)
    if n_scored <= 0:
        return 0.0
    # the step at position max_len is a forced EOS and contributes log 1
    scored = ids[:n_scored]
    _, logp = _step_log_softmax(B, cond, scored)
    total = 0.0
    for t in range(n_scored):
        total += logp[t, scored[t]]
    return float(total)


def seq_logprob_grad(B, cond, ids, max_len, scale, gB, gcond):
    ids = np.asarray(ids, dtype=np.intp)
    n_scored = min(len(ids), max_len - 1)
    if n_scored <= 0:
        return 0.0
    scored = ids[:n_scored]
    prev, logp = _step_log_softmax(B, cond, scored)
    resid = -np.exp(logp)
    rows = np.arange(n_scored)
    resid[rows, scored] += 1.0
    resid *= scale
    np.add.at(gB, prev, resid)
    gcond += resid.sum(axis=0)
    total = 0.0
    for t in range(n_scored):
        total += logp[t, scored[t]]
    return float(total)
