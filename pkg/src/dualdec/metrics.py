"""Evaluation metrics: intent accuracy, span-level slot F1, corpus BLEU-4,
and multi-reference ROUGE-(1, 2, L).

All text metrics operate on whitespace word tokens of detokenized text.
Conventions pinned here:
  * BLEU is corpus-level, unsmoothed, with per-n-gram clipping against the
    max reference count and brevity penalty against the closest reference
    length (ties resolved toward the shorter reference).
  * ROUGE scores are per-example F1 (beta = 1), max over references,
    arithmetic mean over the corpus.
  * Slot F1 is micro-averaged over exact (start, end, key) span matches of
    repaired IOB sequences; empty denominators score 0.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .frames import iob_spans


class MetricError(ValueError):
    pass


def intent_accuracy(preds: Sequence[str | None], golds: Sequence[str | None]) -> float:
    if len(preds) != len(golds):
        raise MetricError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise MetricError("empty evaluation set")
    return sum(p == g for p, g in zip(preds, golds)) / len(preds)


@dataclass(frozen=True)
class SlotPRF:
    precision: float
    recall: float
    f1: float


def slot_f1(pred_tags: Sequence[Sequence[str]], gold_tags: Sequence[Sequence[str]]) -> SlotPRF:
    if len(pred_tags) != len(gold_tags):
        raise MetricError(f"{len(pred_tags)} predictions vs {len(gold_tags)} golds")
    tp = n_pred = n_gold = 0
    for pred, gold in zip(pred_tags, gold_tags):
        if len(pred) != len(gold):
            raise MetricError(f"tag length mismatch: {len(pred)} vs {len(gold)}")
        p_spans = set(iob_spans(pred))
        g_spans = set(iob_spans(gold))
        tp += len(p_spans & g_spans)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SlotPRF(precision, recall, f1)


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps: Sequence[str], ref_sets: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU with multiple references and no smoothing."""
    if len(hyps) != len(ref_sets):
        raise MetricError(f"{len(hyps)} hypotheses vs {len(ref_sets)} reference sets")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hyps, ref_sets):
        if not refs:
            raise MetricError("empty reference set")
        h = hyp.split()
        rs = [r.split() for r in refs]
        hyp_len += len(h)
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            if not hc:
                continue
            clip: Counter = Counter()
            for r in rs:
                rc = _ngrams(r, n)
                for g in hc:
                    clip[g] = max(clip[g], rc.get(g, 0))
            matched[n - 1] += sum(min(c, clip[g]) for g, c in hc.items())
            total[n - 1] += sum(hc.values())
    if hyp_len == 0 or any(t == 0 for t in total):
        return 0.0
    if any(m == 0 for m in matched):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_prec)


# ---------------------------------------------------------------------------
# ROUGE


def _f1(overlap: float, n_hyp: int, n_ref: int) -> float:
    if overlap == 0 or n_hyp == 0 or n_ref == 0:
        return 0.0
    p = overlap / n_hyp
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(hyp: str, refs: Sequence[str], n: int) -> float:
    """N-gram overlap F1, max over references."""
    if n not in (1, 2):
        raise MetricError(f"rouge_n supports n in {{1, 2}}, got {n}")
    if not refs:
        raise MetricError("empty reference set")
    h = hyp.split()
    hc = _ngrams(h, n)
    best = 0.0
    for ref in refs:
        r = ref.split()
        rc = _ngrams(r, n)
        overlap = sum(min(c, rc.get(g, 0)) for g, c in hc.items())
        best = max(best, _f1(overlap, sum(hc.values()), sum(rc.values())))
    return best


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: str, refs: Sequence[str]) -> float:
    """Longest-common-subsequence F1, max over references."""
    if not refs:
        raise MetricError("empty reference set")
    h = hyp.split()
    best = 0.0
    for ref in refs:
        r = ref.split()
        best = max(best, _f1(_lcs_len(h, r), len(h), len(r)))
    return best


def rouge_n_corpus(hyps: Sequence[str], ref_sets: Sequence[Sequence[str]], n: int) -> float:
    if len(hyps) != len(ref_sets) or not hyps:
        raise MetricError("hypothesis/reference count mismatch or empty corpus")
    return sum(rouge_n(h, rs, n) for h, rs in zip(hyps, ref_sets)) / len(hyps)


def rouge_l_corpus(hyps: Sequence[str], ref_sets: Sequence[Sequence[str]]) -> float:
    if len(hyps) != len(ref_sets) or not hyps:
        raise MetricError("hypothesis/reference count mismatch or empty corpus")
    return sum(rouge_l(h, rs) for h, rs in zip(hyps, ref_sets)) / len(hyps)


# ---------------------------------------------------------------------------
# aggregate report


@dataclass
class EvalReport:
    intent_accuracy: float | None = None
    slot_precision: float | None = None
    slot_recall: float | None = None
    slot_f1: float | None = None
    bleu: float | None = None
    rouge1: float | None = None
    rouge2: float | None = None
    rougeL: float | None = None
    n_nlu: int = 0
    n_nlg: int = 0

    FIELDS = ("intent_accuracy", "slot_precision", "slot_recall", "slot_f1",
              "bleu", "rouge1", "rouge2", "rougeL", "n_nlu", "n_nlg")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in self.FIELDS}, sort_keys=True)

    def to_csv(self) -> str:
        header = ",".join(self.FIELDS)
        row = ",".join("" if getattr(self, k) is None else repr(getattr(self, k))
                       for k in self.FIELDS)
        return f"{header}\n{row}\n"


def evaluate_nlu(pred_intents, gold_intents, pred_tags, gold_tags) -> EvalReport:
    prf = slot_f1(pred_tags, gold_tags)
    acc = None
    if any(g is not None for g in gold_intents):
        acc = intent_accuracy(pred_intents, gold_intents)
    return EvalReport(intent_accuracy=acc, slot_precision=prf.precision,
                      slot_recall=prf.recall, slot_f1=prf.f1, n_nlu=len(gold_tags))


def evaluate_nlg(hyps, ref_sets) -> EvalReport:
    return EvalReport(bleu=bleu(hyps, ref_sets),
                      rouge1=rouge_n_corpus(hyps, ref_sets, 1),
                      rouge2=rouge_n_corpus(hyps, ref_sets, 2),
                      rougeL=rouge_l_corpus(hyps, ref_sets),
                      n_nlg=len(hyps))


def merge_reports(nlu: EvalReport | None, nlg: EvalReport | None) -> EvalReport:
    out = EvalReport()
    for part in (nlu, nlg):
        if part is None:
            continue
        for k in EvalReport.FIELDS:
            v = getattr(part, k)
            if isinstance(v, int) and k.startswith("n_"):
                if v:
                    setattr(out, k, v)
            elif v is not None:
                setattr(out, k, v)
    return out
