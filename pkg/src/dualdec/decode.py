"""Beam search, dual-inference scoring, hypothesis re-ranking, and the
(alpha, beta) grid sweep.

Re-ranking combines four log-probabilities per hypothesis:

    combined = alpha * forward
             + (1 - alpha) * (backward + beta * marg_out - beta * marg_in)

where ``forward`` is the decoding model's own score, ``backward`` is the
reconstruction score of the input under the opposite-direction model, and the
marginal terms come from the language model (utterance side) and the masked
frame model (semantics side). With alpha = 1 the re-ranking reduces to plain
beam-search order. ``marg_in`` is constant per input, so it never changes an
argmax; it is carried for reporting.

Mask positions for frame scoring are drawn from generators derived from
(seed, example index, candidate rank), which makes grid reuse bit-exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import metrics
from .data import NlgExample, NluExample
from .frames import (SemanticFrame, align_tags_to_pieces, collapse_piece_tags,
                     frame_to_iob, iob_to_frame)
from .models import (LmModel, MaskedFrameModel, NlgModel, NluModel,
                     lm_score_tokens, masked_frame_score, nlg_features_np,
                     nlg_score, nlg_start, nlg_step, nlu_intent, nlu_score,
                     nlu_start, nlu_step)
from .tensor import derive_rng
from .textproc import BOS, EOS, PAD, UNK, Utterance, detokenize, word_utterance


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    """A completed decode: payload token/tag ids, total and per-step log-probs.

    For tag-sequence hypotheses, ``intent`` carries the paired intent id and
    the final per_step entry is its log-probability.
    """

    payload: tuple[int, ...]
    forward_logprob: float
    per_step: tuple[float, ...]
    intent: int | None = None


@dataclass(frozen=True)
class DualWeights:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise DecodeError(f"weights outside [0, 1]: {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class Components:
    forward: float
    backward: float
    marg_out: float
    marg_in: float


@dataclass(frozen=True)
class DualScore:
    forward: float
    backward: float
    marg_out: float
    marg_in: float
    combined: float


def combine(c: Components, w: DualWeights) -> DualScore:
    combined = w.alpha * c.forward + (1.0 - w.alpha) * (
        c.backward + w.beta * c.marg_out - w.beta * c.marg_in)
    return DualScore(c.forward, c.backward, c.marg_out, c.marg_in, combined)


# ---------------------------------------------------------------------------
# beam search


class Stepper(Protocol):
    n_symbols: int
    eos: int | None

    def start(self) -> tuple[object, np.ndarray]: ...

    def advance(self, state, symbol: int) -> tuple[object, np.ndarray]: ...


def _completion_order(h: Hypothesis):
    return (-h.forward_logprob, len(h.payload), h.payload)


def beam_search(stepper: Stepper, beam: int, max_len: int) -> list[Hypothesis]:
    """Standard beam search over log-probs; returns up to ``beam`` completed
    hypotheses, best first (ties: earlier completion, then payload order).

    Sequences reaching ``max_len`` are force-completed with their EOS score.
    The frontier keeps the top ``beam`` partials per length, so results equal
    exhaustive enumeration whenever vocab**(max_len-1) <= beam.
    """
    if beam < 1:
        raise DecodeError("beam must be >= 1")
    eos = stepper.eos
    if eos is None:
        return [h for h, _ in _beam_search_fixed(stepper, beam, max_len)]
    state, dist = stepper.start()
    active = [(0.0, (), (), state, dist)]
    completed: list[Hypothesis] = []
    for t in range(max_len):
        cand = []
        for score, payload, per, state, dist in active:
            lp_eos = float(dist[eos])
            if lp_eos > -math.inf:
                completed.append(Hypothesis(payload, score + lp_eos, per + (lp_eos,)))
            for v in range(stepper.n_symbols):
                if v == eos:
                    continue
                lp = float(dist[v])
                if lp > -math.inf:
                    cand.append((score + lp, payload + (v,), per + (lp,), state, v))
        if not cand:
            break
        cand.sort(key=lambda c: (-c[0], c[1]))
        if t == max_len - 1:
            # no further extension: force-complete every candidate
            for score, payload, per, state, v in cand:
                nstate, ndist = stepper.advance(state, v)
                lp_eos = float(ndist[eos])
                if lp_eos > -math.inf:
                    completed.append(Hypothesis(payload, score + lp_eos, per + (lp_eos,)))
            break
        if len(completed) >= beam:
            kth = sorted(completed, key=_completion_order)[beam - 1].forward_logprob
            if cand[0][0] < kth:
                break  # extensions only lower scores; nothing can enter the top-k
        active = []
        for score, payload, per, state, v in cand[:beam]:
            nstate, ndist = stepper.advance(state, v)
            active.append((score, payload, per, nstate, ndist))
    completed.sort(key=_completion_order)
    return completed[:beam]


def _beam_search_fixed(stepper: Stepper, beam: int, length: int,
                       ) -> list[tuple[Hypothesis, object]]:
    """Fixed-length beam (no EOS); returns (hypothesis, final state) pairs."""
    if beam < 1:
        raise DecodeError("beam must be >= 1")
    if length < 1:
        raise DecodeError("fixed-length beam needs length >= 1")
    state, dist = stepper.start()
    active = [(0.0, (), (), state, dist)]
    for t in range(length):
        cand = []
        for score, payload, per, state, dist in active:
            for v in range(stepper.n_symbols):
                lp = float(dist[v])
                if lp > -math.inf:
                    cand.append((score + lp, payload + (v,), per + (lp,), state, v))
        cand.sort(key=lambda c: (-c[0], c[1]))
        cand = cand[:beam]
        if t == length - 1:
            # the stored state already consumed the final input position
            return [(Hypothesis(payload, score, per), state)
                    for score, payload, per, state, v in cand]
        active = []
        for score, payload, per, state, v in cand:
            nstate, ndist = stepper.advance(state, v)
            active.append((score, payload, per, nstate, ndist))
    return []


class NlgStepper:
    """Word decoding for one frame. PAD, BOS and UNK are masked out so every
    hypothesis detokenizes to a clean word sequence."""

    def __init__(self, model: NlgModel, frame: SemanticFrame):
        self.model = model
        self.features = nlg_features_np(model, frame)
        self.n_symbols = len(model.vocabs.bpe.pieces)
        self.eos = EOS

    def _masked(self, lp: np.ndarray) -> np.ndarray:
        lp = lp.copy()
        lp[[PAD, BOS, UNK]] = -math.inf
        return lp

    def start(self):
        h = nlg_start(self.model, self.features)
        lp, _, h = nlg_step(self.model, h, None, self.features)
        return h, self._masked(lp)

    def advance(self, state, symbol: int):
        lp, _, h = nlg_step(self.model, state, symbol, self.features)
        return h, self._masked(lp)


class NluTagStepper:
    """Tag decoding over a fixed utterance; one step per input token."""

    def __init__(self, model: NluModel, utt: Utterance):
        if not utt.tokens:
            raise DecodeError("cannot tag an empty utterance")
        self.model = model
        self.tokens = utt.tokens
        self.n_symbols = model.vocabs.labels.n_tags
        self.eos = None
        self.length = len(utt.tokens)

    def start(self):
        lp, h = nlu_step(self.model, nlu_start(self.model), self.tokens[0], None)
        return (h, 1), lp

    def advance(self, state, symbol: int):
        h, pos = state
        lp, h2 = nlu_step(self.model, h, self.tokens[pos], symbol)
        return (h2, pos + 1), lp


def nlg_hypotheses(model: NlgModel, frame: SemanticFrame, beam: int,
                   max_len: int) -> list[Hypothesis]:
    return beam_search(NlgStepper(model, frame), beam, max_len)


def nlu_hypotheses(model: NluModel, utt: Utterance, beam: int,
                   k_intent: int = 3) -> list[Hypothesis]:
    """Tag-sequence beam, each paired with its top ``k_intent`` intents from
    the hypothesis' final state; truncated to ``beam`` total."""
    stepper = NluTagStepper(model, utt)
    items = _beam_search_fixed(stepper, beam, stepper.length)
    if not model.n_intents:
        return [h for h, _ in items]
    out = []
    for hyp, (h, _pos) in items:
        ilp = nlu_intent(model, h)
        order = np.argsort(-ilp, kind="stable")[:max(1, k_intent)]
        for ii in order:
            lp = float(ilp[int(ii)])
            out.append(Hypothesis(hyp.payload, hyp.forward_logprob + lp,
                                  hyp.per_step + (lp,), intent=int(ii)))
    out.sort(key=lambda h: (-h.forward_logprob, len(h.payload), h.payload, h.intent))
    return out[:beam]


# ---------------------------------------------------------------------------
# dual scoring


def utterance_from_payload(vocabs, payload: Sequence[int]) -> Utterance:
    pieces = tuple(vocabs.bpe.piece_of(i) for i in payload)
    return Utterance(detokenize(pieces), tuple(payload), pieces)


def hypothesis_utterance(model, hyp: Hypothesis) -> Utterance:
    return utterance_from_payload(model.vocabs, hyp.payload)


def forced_tag_ids(nlu: NluModel, frame: SemanticFrame, utt: Utterance) -> tuple[list[int], object]:
    """Tag targets for reconstructing ``frame`` from ``utt``; slot values the
    utterance does not contain simply leave their tags absent."""
    word_tags, report = frame_to_iob(frame, word_utterance(utt.surface))
    piece_tags = align_tags_to_pieces(word_tags, utt)
    return [nlu.vocabs.labels.tag_id(t) for t in piece_tags], report


def nlg_backward_logprob(nlu: NluModel, frame: SemanticFrame, cand: Utterance) -> float:
    tag_ids, _ = forced_tag_ids(nlu, frame, cand)
    intent = None
    if frame.intent is not None and nlu.n_intents:
        intent = nlu.vocabs.labels.intent_id(frame.intent)
    return nlu_score(nlu, cand, tag_ids, intent).total


def candidate_frame(nlu_like, input_utt: Utterance, hyp: Hypothesis) -> SemanticFrame:
    labels = nlu_like.vocabs.labels
    piece_tags = [labels.tags[i] for i in hyp.payload]
    word_tags = collapse_piece_tags(piece_tags, input_utt)
    intent = labels.intents[hyp.intent] if hyp.intent is not None else None
    return iob_to_frame(word_tags, intent, word_utterance(input_utt.surface))


def frame_marginal(mfm: MaskedFrameModel, frame: SemanticFrame, rng) -> float:
    # a frame with no features has an empty pseudo-likelihood product: log 1
    if frame.n_features == 0:
        return 0.0
    return masked_frame_score(mfm, frame, rng)


def dual_components_nlg(candidate: Hypothesis, input_frame: SemanticFrame,
                        nlu: NluModel, lm: LmModel, mfm: MaskedFrameModel,
                        rng) -> Components:
    cand = hypothesis_utterance(lm, candidate)
    return Components(
        forward=candidate.forward_logprob,
        backward=nlg_backward_logprob(nlu, input_frame, cand),
        marg_out=lm_score_tokens(lm, candidate.payload).total,
        marg_in=frame_marginal(mfm, input_frame, rng),
    )


def dual_components_nlu(candidate: Hypothesis, input_utt: Utterance,
                        nlg: NlgModel, mfm: MaskedFrameModel, lm: LmModel,
                        rng) -> Components:
    frame = candidate_frame(nlg, input_utt, candidate)
    return Components(
        forward=candidate.forward_logprob,
        backward=nlg_score(nlg, frame, input_utt).total,
        marg_out=frame_marginal(mfm, frame, rng),
        marg_in=lm_score_tokens(lm, input_utt.tokens).total,
    )


def dual_score_nlg(candidate, input_frame, nlu, lm, mfm, w: DualWeights, rng) -> DualScore:
    return combine(dual_components_nlg(candidate, input_frame, nlu, lm, mfm, rng), w)


def dual_score_nlu(candidate, input_utt, nlg, mfm, lm, w: DualWeights, rng) -> DualScore:
    return combine(dual_components_nlu(candidate, input_utt, nlg, mfm, lm, rng), w)


def rerank_index(scored: Sequence[tuple[Hypothesis, DualScore]]) -> int:
    """Argmax of combined score; ties fall back to forward, then list order
    (the beam's own payload order)."""
    if not scored:
        raise DecodeError("cannot rerank an empty hypothesis list")
    best = 0
    for i in range(1, len(scored)):
        cur, inc = scored[best][1], scored[i][1]
        if (inc.combined, inc.forward) > (cur.combined, cur.forward):
            best = i
    return best


def rerank(scored: Sequence[tuple[Hypothesis, DualScore]]) -> Hypothesis:
    return scored[rerank_index(scored)][0]


# ---------------------------------------------------------------------------
# cached per-example scoring (shared by grid search and the weight sweeps)


@dataclass
class ModelsBundle:
    """The four models of one experiment. Plain (alpha = 1) evaluation only
    touches the primal direction, so the unused members may be None."""

    nlu: NluModel | None
    nlg: NlgModel | None
    lm: LmModel | None
    mfm: MaskedFrameModel | None

    def __iter__(self):
        return iter((self.nlu, self.nlg, self.lm, self.mfm))

    @property
    def vocabs(self):
        for m in self:
            if m is not None:
                return m.vocabs
        raise DecodeError("empty model bundle")


@dataclass
class CachedExample:
    hypotheses: list[Hypothesis]
    components: list[Components]

    def select(self, w: DualWeights) -> int:
        scored = [(h, combine(c, w)) for h, c in zip(self.hypotheses, self.components)]
        return rerank_index(scored)


def precompute_nlg(examples: Sequence[NlgExample], bundle: ModelsBundle, *,
                   beam: int, max_len: int, seed: int) -> list[CachedExample]:
    cached = []
    for idx, ex in enumerate(examples):
        hyps = nlg_hypotheses(bundle.nlg, ex.frame, beam, max_len)
        marg_in = frame_marginal(bundle.mfm, ex.frame, derive_rng(seed, "mask", idx))
        comps = []
        for hyp in hyps:
            cand = utterance_from_payload(bundle.vocabs, hyp.payload)
            comps.append(Components(
                forward=hyp.forward_logprob,
                backward=nlg_backward_logprob(bundle.nlu, ex.frame, cand),
                marg_out=lm_score_tokens(bundle.lm, hyp.payload).total,
                marg_in=marg_in,
            ))
        cached.append(CachedExample(hyps, comps))
    return cached


def precompute_nlu(examples: Sequence[NluExample], bundle: ModelsBundle, *,
                   beam: int, k_intent: int, seed: int) -> list[CachedExample]:
    cached = []
    for idx, ex in enumerate(examples):
        utt = bundle.vocabs.bpe.encode(ex.text)
        hyps = nlu_hypotheses(bundle.nlu, utt, beam, k_intent)
        marg_in = lm_score_tokens(bundle.lm, utt.tokens).total
        comps = []
        for rank, hyp in enumerate(hyps):
            frame = candidate_frame(bundle.nlu, utt, hyp)
            comps.append(Components(
                forward=hyp.forward_logprob,
                backward=nlg_score(bundle.nlg, frame, utt).total,
                marg_out=frame_marginal(bundle.mfm, frame,
                                        derive_rng(seed, "mask", idx, rank)),
                marg_in=marg_in,
            ))
        cached.append(CachedExample(hyps, comps))
    return cached


# ---------------------------------------------------------------------------
# grid search


def weight_grid(step: float = 0.1) -> list[tuple[float, float]]:
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise DecodeError(f"grid step {step} must divide 1.0")
    vals = [i / n for i in range(n + 1)]
    return [(a, b) for a in vals for b in vals]


@dataclass
class GridRow:
    alpha: float
    beta: float
    metrics: dict[str, float]


@dataclass
class GridResult:
    direction: str
    metric_names: list[str]
    rows: list[GridRow]
    best: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    selections: dict[tuple[float, float], list[int]] = field(default_factory=dict)

    def finalize(self):
        """Per-metric argmax; earliest (alpha, beta) in row order wins ties."""
        for name in self.metric_names:
            top = None
            for row in self.rows:
                v = row.metrics[name]
                if top is None or v > top[2]:
                    top = (row.alpha, row.beta, v)
            self.best[name] = top
        return self

    def to_csv(self) -> str:
        lines = [",".join(["alpha", "beta"] + self.metric_names)]
        for row in self.rows:
            vals = [repr(row.alpha), repr(row.beta)]
            vals += [repr(row.metrics[name]) for name in self.metric_names]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def grid_search(examples, bundle: ModelsBundle, direction: str, *, beam: int,
                max_len: int = 60, k_intent: int = 3, seed: int = 0,
                step: float = 0.1) -> GridResult:
    """Sweep re-ranking weights over the (alpha, beta) grid.

    Hypotheses and score components are computed once per example and reused
    across every pair; only the linear combination changes.
    """
    if not examples:
        raise DecodeError("empty validation set")
    if direction == "nlg":
        cached = precompute_nlg(examples, bundle, beam=beam, max_len=max_len, seed=seed)
        return _grid_from_cache_nlg(examples, bundle, cached, step)
    if direction == "nlu":
        cached = precompute_nlu(examples, bundle, beam=beam, k_intent=k_intent, seed=seed)
        return _grid_from_cache_nlu(examples, bundle, cached, step)
    raise DecodeError(f"unknown direction {direction!r}")


def _grid_from_cache_nlg(examples, bundle, cached, step) -> GridResult:
    names = ["bleu", "rouge1", "rouge2", "rougeL"]
    result = GridResult("nlg", names, [])
    ref_sets = [list(ex.refs) for ex in examples]
    for a, b in weight_grid(step):
        w = DualWeights(a, b)
        picks = [c.select(w) for c in cached]
        hyps = [utterance_from_payload(bundle.vocabs, c.hypotheses[i].payload).surface
                for c, i in zip(cached, picks)]
        result.selections[(a, b)] = picks
        result.rows.append(GridRow(a, b, {
            "bleu": metrics.bleu(hyps, ref_sets),
            "rouge1": metrics.rouge_n_corpus(hyps, ref_sets, 1),
            "rouge2": metrics.rouge_n_corpus(hyps, ref_sets, 2),
            "rougeL": metrics.rouge_l_corpus(hyps, ref_sets),
        }))
    return result.finalize()


def _grid_from_cache_nlu(examples, bundle, cached, step) -> GridResult:
    labels = bundle.vocabs.labels
    has_intent = labels.n_intents > 0
    names = (["intent_accuracy"] if has_intent else []) + \
        ["slot_precision", "slot_recall", "slot_f1"]
    result = GridResult("nlu", names, [])
    utts = [bundle.vocabs.bpe.encode(ex.text) for ex in examples]
    gold_tags = [list(ex.tags) for ex in examples]
    gold_intents = [ex.intent for ex in examples]
    for a, b in weight_grid(step):
        w = DualWeights(a, b)
        picks = [c.select(w) for c in cached]
        pred_tags, pred_intents = [], []
        for c, i, utt in zip(cached, picks, utts):
            hyp = c.hypotheses[i]
            piece_tags = [labels.tags[t] for t in hyp.payload]
            pred_tags.append(collapse_piece_tags(piece_tags, utt))
            pred_intents.append(labels.intents[hyp.intent]
                                if hyp.intent is not None else None)
        result.selections[(a, b)] = picks
        row = {}
        if has_intent:
            row["intent_accuracy"] = metrics.intent_accuracy(pred_intents, gold_intents)
        prf = metrics.slot_f1(pred_tags, gold_tags)
        row.update(slot_precision=prf.precision, slot_recall=prf.recall, slot_f1=prf.f1)
        result.rows.append(GridRow(a, b, row))
    return result.finalize()


# ---------------------------------------------------------------------------
# evaluation passes (plain decoding or one fixed weight pair)


@dataclass
class ExampleTrace:
    index: int
    input_text: str
    selected: int
    hypotheses: list[dict]


def evaluate_direction(examples, bundle: ModelsBundle, direction: str,
                       weights: DualWeights | None, *, beam: int,
                       max_len: int = 60, k_intent: int = 3, seed: int = 0,
                       ) -> tuple[metrics.EvalReport, list[ExampleTrace]]:
    """Decode every example; with ``weights`` given, re-rank dually and record
    all four score components per hypothesis. ``weights=None`` is the plain
    (alpha = 1) evaluation: beam top-1, no extra scoring."""
    from .frames import format_frame
    if direction not in ("nlu", "nlg"):
        raise DecodeError(f"unknown direction {direction!r}")
    traces: list[ExampleTrace] = []
    labels = bundle.vocabs.labels

    if direction == "nlg":
        if weights is None:
            picked = []
            for ex in examples:
                hyps = nlg_hypotheses(bundle.nlg, ex.frame, beam, max_len)
                picked.append((hyps, 0, None))
        else:
            cached = precompute_nlg(examples, bundle, beam=beam, max_len=max_len,
                                    seed=seed)
            picked = [(c.hypotheses, c.select(weights), c.components) for c in cached]
        hyp_texts = []
        for idx, (ex, (hyps, sel, comps)) in enumerate(zip(examples, picked)):
            hyp_texts.append(utterance_from_payload(bundle.vocabs, hyps[sel].payload).surface)
            traces.append(_trace(idx, format_frame(ex.frame), hyps, sel, comps,
                                 weights, bundle, direction))
        return metrics.evaluate_nlg(hyp_texts, [list(ex.refs) for ex in examples]), traces

    utts = [bundle.vocabs.bpe.encode(ex.text) for ex in examples]
    if weights is None:
        picked = [(nlu_hypotheses(bundle.nlu, utt, beam, k_intent), 0, None)
                  for utt in utts]
    else:
        cached = precompute_nlu(examples, bundle, beam=beam, k_intent=k_intent,
                                seed=seed)
        picked = [(c.hypotheses, c.select(weights), c.components) for c in cached]
    pred_tags, pred_intents = [], []
    for idx, (ex, utt, (hyps, sel, comps)) in enumerate(zip(examples, utts, picked)):
        hyp = hyps[sel]
        piece_tags = [labels.tags[t] for t in hyp.payload]
        pred_tags.append(collapse_piece_tags(piece_tags, utt))
        pred_intents.append(labels.intents[hyp.intent] if hyp.intent is not None else None)
        traces.append(_trace(idx, ex.text, hyps, sel, comps, weights, bundle, direction))
    report = metrics.evaluate_nlu(pred_intents, [ex.intent for ex in examples],
                                  pred_tags, [list(ex.tags) for ex in examples])
    return report, traces


def _trace(idx, input_text, hyps, sel, comps, weights, bundle, direction) -> ExampleTrace:
    rows = []
    for i, hyp in enumerate(hyps):
        row = {"payload": list(hyp.payload), "forward": hyp.forward_logprob}
        if direction == "nlg":
            row["text"] = utterance_from_payload(bundle.vocabs, hyp.payload).surface
        if hyp.intent is not None:
            row["intent"] = bundle.vocabs.labels.intents[hyp.intent]
        if comps is not None:
            ds = combine(comps[i], weights)
            row.update(backward=ds.backward, marg_out=ds.marg_out,
                       marg_in=ds.marg_in, combined=ds.combined)
        rows.append(row)
    return ExampleTrace(index=idx, input_text=input_text, selected=sel, hypotheses=rows)
