"""Key-recovery scoring of profiling models on a single key byte.

Per-trace class probabilities are mapped to key candidates through the
identity leakage model ``SBOX(p ^ k')``, log-summed over traces, and the true
key is ranked by how many candidates score strictly higher.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import LOG_CLAMP
from .trace_model import SBOX

CANDIDATES = np.arange(256, dtype=np.uint8)


def candidate_labels(plaintexts):
    """(n, 256) matrix of hypothetical labels ``SBOX(p_i ^ k')``."""
    p = np.asarray(plaintexts, dtype=np.uint8)
    return SBOX[p[:, None] ^ CANDIDATES[None, :]]


def candidate_log_probs(probs, plaintexts):
    """(n, 256) per-trace log-probability contributions for every key candidate."""
    probs = np.asarray(probs)
    if probs.shape[0] != len(plaintexts):
        raise ValueError(f"{probs.shape[0]} probability rows for {len(plaintexts)} plaintexts")
    logp = np.log(np.maximum(probs.astype(np.float64), LOG_CLAMP))
    return np.take_along_axis(logp, candidate_labels(plaintexts).astype(np.intp), axis=1)


def log_prob_vector(probs, plaintexts):
    return candidate_log_probs(probs, plaintexts).sum(axis=0)


def key_rank(logprobs, true_key) -> int:
    """Number of candidates whose score is strictly greater than the true key's."""
    logprobs = np.asarray(logprobs)
    return int(np.count_nonzero(logprobs > logprobs[int(true_key)]))


def incremental_ranks(contrib, true_key):
    """Key rank after each prefix of the rows of ``contrib`` (running sums)."""
    running = np.cumsum(contrib, axis=0)
    return np.count_nonzero(running > running[:, [int(true_key)]], axis=1)


@dataclass
class AttackReport:
    ge_curve: np.ndarray
    traces_to_rank0: Optional[int]
    mean_incremental_key_rank: float
    folds: int
    seed: int
    true_key: int

    @property
    def final_ge(self):
        return float(self.ge_curve[-1])

    def to_dict(self):
        return {
            "n_traces": int(len(self.ge_curve)),
            "folds": self.folds,
            "seed": self.seed,
            "true_key": self.true_key,
            "traces_to_rank0": self.traces_to_rank0,
            "mean_incremental_key_rank": self.mean_incremental_key_rank,
            "final_guessing_entropy": self.final_ge,
            "ge_curve": [float(x) for x in self.ge_curve],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def curve_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_traces", "guessing_entropy"])
        for i, v in enumerate(self.ge_curve, start=1):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()


def traces_to_rank0(ge_curve):
    """Smallest trace count from which the mean rank is 0 and stays 0; None if never."""
    nonzero = np.flatnonzero(np.asarray(ge_curve) != 0)
    if nonzero.size == 0:
        return 1
    last = int(nonzero[-1]) + 1
    return last + 1 if last < len(ge_curve) else None


def guessing_entropy(probs, plaintexts, true_key, n_traces, folds=100, seed=0) -> AttackReport:
    """Fold-averaged incremental key rank from precomputed attack-set probabilities.

    Each fold draws ``n_traces`` attack traces without replacement.
    """
    contrib_all = candidate_log_probs(probs, plaintexts)
    total = contrib_all.shape[0]
    if n_traces > total:
        raise ValueError(f"n_traces={n_traces} exceeds the {total} available attack traces")
    if n_traces < 1 or folds < 1:
        raise ValueError("n_traces and folds must be positive")
    rng = np.random.default_rng(seed)
    ranks = np.empty((folds, n_traces))
    for f in range(folds):
        idx = rng.choice(total, n_traces, replace=False)
        ranks[f] = incremental_ranks(contrib_all[idx], true_key)
    ge = ranks.mean(axis=0)
    return AttackReport(
        ge_curve=ge,
        traces_to_rank0=traces_to_rank0(ge),
        mean_incremental_key_rank=float(ranks.mean()),
        folds=folds,
        seed=seed,
        true_key=int(true_key),
    )


def attack(net, attack_set, n_traces, folds=100, seed=0) -> AttackReport:
    keys = np.unique(attack_set.keys)
    if keys.size != 1:
        raise ValueError(f"attack set must use one fixed key, found {keys.size}")
    probs = net.predict(attack_set.traces)
    return guessing_entropy(probs, attack_set.plaintexts, int(keys[0]), n_traces, folds, seed)
