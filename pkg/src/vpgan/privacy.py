"""Simulated ASV attacker (cosine scoring) and equal error rate."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vpgan.corpus import Corpus

SCENARIOS = ("ignorant", "lazy-informed")


@dataclass
class TrialScoreSet:
    target: np.ndarray
    nontarget: np.ndarray
    scenario: str = "ignorant"
    sex_group: str = "all"
    # per-pair detail for export: (enroll speaker, trial utterance, score, is_target)
    pairs: list = field(default_factory=list, repr=False)


@dataclass
class ScoreMatrix:
    """Every (enrollment speaker, trial utterance) cosine score."""

    enroll_speakers: list[str]
    enroll_sex: list[str]
    trial_speakers: list[str]
    trial_utterances: list[str]
    trial_sex: list[str]
    scores: np.ndarray

    def labels(self) -> np.ndarray:
        e = np.array(self.enroll_speakers, dtype=object)[:, None]
        t = np.array(self.trial_speakers, dtype=object)[None, :]
        return e == t

    def select(self, sex_group: str = "all", scenario: str = "ignorant") -> TrialScoreSet:
        """Target/non-target split, restricted to same-group pairs unless ``all``."""
        lab = self.labels()
        if sex_group == "all":
            mask = np.ones_like(lab)
        else:
            e = np.array(self.enroll_sex) == sex_group
            t = np.array(self.trial_sex) == sex_group
            mask = e[:, None] & t[None, :]
        return TrialScoreSet(self.scores[mask & lab], self.scores[mask & ~lab], scenario, sex_group)

    def to_csv(self, path):
        lab = self.labels()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["enroll_speaker", "trial_utterance", "score", "is_target"])
            for i, spk in enumerate(self.enroll_speakers):
                for j, utt in enumerate(self.trial_utterances):
                    w.writerow([spk, utt, repr(float(self.scores[i, j])), int(lab[i, j])])


def asv_score(enrollment: Corpus, trial: Corpus) -> ScoreMatrix:
    """Cosine similarity of each enrollment speaker mean to each trial utterance."""
    if enrollment.dim != trial.dim:
        raise ValueError(f"dimension mismatch: {enrollment.dim} vs {trial.dim}")
    if not set(enrollment.speakers) & set(trial.speakers):
        raise ValueError("no overlapping speakers between enrollment and trial: no target trials")
    ids, means = enrollment.speaker_means()
    sex = enrollment.sex_of()
    em = means / np.linalg.norm(means, axis=1, keepdims=True)
    tv = trial.vectors / np.linalg.norm(trial.vectors, axis=1, keepdims=True)
    return ScoreMatrix(
        enroll_speakers=ids,
        enroll_sex=[sex[s] for s in ids],
        trial_speakers=list(trial.speakers),
        trial_utterances=list(trial.utterances),
        trial_sex=list(trial.sexes),
        scores=np.clip(em @ tv.T, -1.0, 1.0),
    )


def eer(scores: TrialScoreSet | tuple) -> float:
    """Equal error rate in percent.

    Operating points are taken at every distinct score (accept iff
    ``score >= threshold``) plus the two extremes. The FAR = FRR crossing is
    interpolated linearly between the two operating points that bracket it.
    """
    if isinstance(scores, TrialScoreSet):
        tgt, non = scores.target, scores.nontarget
    else:
        tgt, non = scores
    tgt = np.sort(np.asarray(tgt, dtype=np.float64))
    non = np.sort(np.asarray(non, dtype=np.float64))
    if tgt.size == 0 or non.size == 0:
        raise ValueError("EER needs both target and non-target scores")
    thresholds = np.unique(np.concatenate([tgt, non]))
    # FRR(t): targets strictly below t; FAR(t): non-targets at or above t
    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    frr = np.concatenate([[0.0], frr, [1.0]])
    far = np.concatenate([[1.0], far, [0.0]])
    diff = frr - far  # non-decreasing, from -1 to +1
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        # a run of exact crossings: take the midpoint of the run
        run = np.nonzero(diff == 0)[0]
        return float(100.0 * 0.5 * (frr[run[0]] + frr[run[-1]]))
    d0, d1 = diff[k - 1], diff[k]
    alpha = d0 / (d0 - d1)
    rate = far[k - 1] + alpha * (far[k] - far[k - 1])
    return float(100.0 * rate)


def group_eers(matrix: ScoreMatrix, scenario: str = "ignorant") -> dict[str, float]:
    """EER per sex group present on both sides, plus ``all``.

    ``all`` is the plain mean of the per-group EERs when there are two or more
    groups, and the score-pooled EER otherwise.
    """
    groups = sorted(set(matrix.enroll_sex) & set(matrix.trial_sex) - {"unspecified"})
    out = {}
    for g in groups:
        ts = matrix.select(g, scenario)
        if ts.target.size and ts.nontarget.size:
            out[g] = eer(ts)
    if len(out) >= 2:
        out["all"] = float(np.mean(list(out.values())))
    else:
        out["all"] = eer(matrix.select("all", scenario))
    return out


def run_attack(original_enroll: Corpus, original_trial: Corpus, anonymize, scenario: str, seeds=(1, 2)) -> dict:
    """Score one attack scenario.

    ``anonymize(corpus, seed)`` returns an anonymized corpus. The ignorant
    attacker enrolls on original data; the lazy-informed one enrolls on data
    anonymized with ``seeds[0]`` while trials use ``seeds[1]``.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    enroll_seed, trial_seed = seeds
    trial = anonymize(original_trial, trial_seed)
    if scenario == "ignorant":
        enroll = original_enroll
    else:
        enroll = anonymize(original_enroll, enroll_seed)
    matrix = asv_score(enroll, trial)
    return {"scenario": scenario, "eer": group_eers(matrix, scenario), "scores": matrix}
