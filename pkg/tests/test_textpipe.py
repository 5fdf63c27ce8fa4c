import math
import re
from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailcast.textpipe import (
    Corpus,
    build_dtm,
    load_dtm,
    load_stopwords,
    read_corpus,
    save_dtm,
    select_vocabulary,
    tfidf_scores,
    tokenize,
    write_corpus,
)


def corpus(*items):
    return Corpus.from_records(
        {"id": f"d{i}", "date": d, "text": t, "source": "s"} for i, (d, t) in enumerate(items)
    )


def test_stopword_list_is_versioned():
    stop = load_stopwords()
    assert "may" in stop and "in" in stop
    assert "rose" not in stop and "prices" not in stop


def test_tokenize_example():
    c = tokenize(corpus(("2000-01-03", "Prices rose 3% in May.")))
    assert c.documents[0].tokens == ("prices", "rose")


def test_empty_document_flagged():
    c = tokenize(corpus(("2000-01-03", ""), ("2000-01-04", "inflation")))
    assert c.documents[0].tokens == ()
    assert c.empty_ids == ("d0",)


def test_keep_list():
    c = tokenize(corpus(("2000-01-03", "inflation fears rise")), keep_list={"inflation"})
    assert c.documents[0].tokens == ("inflation",)


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        Corpus.from_records([{"id": "a", "date": "2000-01-01"}, {"id": "a", "date": "2000-01-02"}])


def test_bad_date_rejected():
    with pytest.raises(ValueError, match="date"):
        Corpus.from_records([{"id": "a", "date": "yesterday"}])


@given(st.text(max_size=200))
def test_tokens_are_lowercase_alpha(text):
    toks = tokenize(corpus(("2000-01-01", text))).documents[0].tokens
    stop = load_stopwords()
    assert all(re.fullmatch("[a-z]+", t) and t not in stop for t in toks)


def test_corpus_roundtrip(tmp_path):
    c = corpus(("2000-01-03", "alpha beta"), ("2000-02-03", "gamma"))
    write_corpus(c, tmp_path / "c.jsonl")
    back = read_corpus(tmp_path / "c.jsonl")
    assert [(d.id, d.date, d.text) for d in back.documents] == [(d.id, d.date, d.text) for d in c.documents]


def brute_tfidf(docs):
    """Independent tf-idf: per-term maximum of count/len * log(N/df)."""
    N = len(docs)
    terms = sorted({t for d in docs for t in d})
    out = {}
    for t in terms:
        df = sum(1 for d in docs if t in d)
        out[t] = max(d.count(t) / len(d) * math.log(N / df) for d in docs)
    return out


def test_selection_matches_brute_force():
    texts = [
        "growth growth jobs market", "inflation prices market", "growth inflation",
        "jobs jobs jobs wages", "oil prices market energy",
    ]
    c = tokenize(corpus(*[(f"2000-0{i + 1}-01", t) for i, t in enumerate(texts)]))
    scores = tfidf_scores(c, cutoff="2000-12")
    oracle = brute_tfidf([d.tokens for d in c.documents])
    assert scores.keys() == oracle.keys()
    for t in oracle:
        assert scores[t] == pytest.approx(oracle[t], abs=1e-12)
    for v in range(1, len(oracle) + 1):
        ranked = sorted(oracle, key=lambda t: (-oracle[t], t))[:v]
        assert select_vocabulary(c, "2000-12", v_max=v) == tuple(sorted(ranked))


def test_post_cutoff_term_excluded():
    c = tokenize(corpus(("2000-01-01", "alpha beta"), ("2000-02-01", "alpha gamma"), ("2000-05-01", "zeta zeta")))
    with pytest.warns(UserWarning, match="fewer than v_max"):
        assert "zeta" not in select_vocabulary(c, "2000-03", v_max=10)


def test_singleton_vocab_deterministic_under_ties():
    c = tokenize(corpus(("2000-01-01", "cat"), ("2000-01-02", "bat"), ("2000-01-03", "ant")))
    with pytest.warns(UserWarning):
        assert select_vocabulary(c, "2000-01", v_max=5) == ("ant", "bat", "cat")
    assert select_vocabulary(c, "2000-01", v_max=1) == ("ant",)


def test_vocabulary_ignores_post_cutoff_mutation():
    base = [("2000-01-01", "alpha beta"), ("2000-01-09", "beta gamma delta"), ("2000-02-01", "gamma")]
    later = [("2000-04-01", "omega omega"), ("2000-05-01", "alpha")]
    a = select_vocabulary(tokenize(corpus(*base, *later)), "2000-02", v_max=3)
    mutated = [("2000-04-01", "epsilon kappa kappa"), ("2000-06-01", "zeta")]
    b = select_vocabulary(tokenize(corpus(*base, *mutated)), "2000-02", v_max=3)
    assert a == b


def test_cutoff_before_corpus_rejected():
    c = tokenize(corpus(("2000-01-01", "alpha")))
    with pytest.raises(ValueError):
        select_vocabulary(c, "1999-06")


def test_dtm_counts_and_dropped():
    c = tokenize(corpus(("2000-01-01", "apple banana apple"), ("2000-01-02", "cherry")))
    dtm = build_dtm(c, {"apple", "banana"})
    assert dtm.vocab == ("apple", "banana")
    assert dtm.counts.toarray().tolist() == [[2, 1]]
    assert dtm.dropped_ids == ("d1",)
    assert dtm.doc_dates == (date(2000, 1, 1),)


def test_dtm_row_sums_match_recount(rng):
    words = ["alpha", "beta", "gamma", "delta", "omega", "sigma"]
    texts = [" ".join(rng.choice(words, size=rng.integers(1, 15))) + " 42 the" for _ in range(10)]
    c = tokenize(corpus(*[(f"2001-01-{i + 1:02d}", t) for i, t in enumerate(texts)]))
    vocab = {"alpha", "gamma", "omega"}
    dtm = build_dtm(c, vocab)
    recount = {}
    for i, t in enumerate(texts):
        n = sum(1 for w in t.split() if w in vocab)
        if n:
            recount[f"d{i}"] = n
    assert dict(zip(dtm.doc_ids, np.asarray(dtm.counts.sum(axis=1)).ravel().tolist())) == recount
    assert dtm.counts.sum() == sum(recount.values())


def test_empty_vocab_rejected():
    with pytest.raises(ValueError):
        build_dtm(tokenize(corpus(("2000-01-01", "x"))), set())


def test_dtm_roundtrip(tmp_path):
    c = tokenize(corpus(("2000-01-01", "apple banana apple"), ("2000-03-02", "banana cherry")))
    dtm = build_dtm(c, {"apple", "banana", "cherry"})
    save_dtm(dtm, tmp_path)
    back = load_dtm(tmp_path)
    assert back.vocab == dtm.vocab and back.doc_ids == dtm.doc_ids and back.doc_dates == dtm.doc_dates
    assert (back.counts != dtm.counts).nnz == 0
