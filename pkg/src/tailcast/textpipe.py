"""Text preprocessing: tokenization, tf-idf vocabulary selection, document-term matrices."""
from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

__all__ = [
    "Document",
    "Corpus",
    "DocumentTermMatrix",
    "load_stopwords",
    "read_corpus",
    "write_corpus",
    "read_keep_list",
    "tokenize",
    "tfidf_scores",
    "select_vocabulary",
    "build_dtm",
    "save_dtm",
    "load_dtm",
    "STOPWORDS_VERSION",
]

log = logging.getLogger(__name__)

STOPWORDS_VERSION = "en_v1"
_TOKEN_RE = re.compile(r"[a-z]+")


def load_stopwords(version: str = STOPWORDS_VERSION) -> frozenset[str]:
    text = resources.files("tailcast.data").joinpath(f"stopwords_{version}.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class Document:
    id: str
    date: date
    text: str
    source: str = ""
    tokens: tuple[str, ...] | None = None

    @property
    def is_empty(self) -> bool:
        return self.tokens is not None and len(self.tokens) == 0


def _parse_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise ValueError(f"unparseable document date {value!r}") from exc


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    empty_ids: tuple[str, ...] = ()

    def __post_init__(self):
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate document ids: {dup[:5]}")

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "Corpus":
        docs = []
        for r in records:
            if "id" not in r or "date" not in r:
                raise ValueError(f"corpus record missing id or date: {r!r}")
            docs.append(Document(id=str(r["id"]), date=_parse_date(r["date"]), text=str(r.get("text", "")),
                                 source=str(r.get("source", ""))))
        return cls(tuple(docs))

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def tokenized(self) -> bool:
        return all(d.tokens is not None for d in self.documents)


def read_corpus(path) -> Corpus:
    """One JSON object per line with keys id, date, source, text."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno} is not valid JSON") from exc
    return Corpus.from_records(records)


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.documents:
            rec = {"id": d.id, "date": d.date.isoformat(), "source": d.source, "text": d.text}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_keep_list(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def _tokens(text: str, stop: frozenset[str], keep: frozenset[str] | None) -> tuple[str, ...]:
    toks = [t for t in _TOKEN_RE.findall(text.lower()) if t not in stop]
    if keep is not None:
        toks = [t for t in toks if t in keep]
    return tuple(toks)


def tokenize(corpus: Corpus, keep_list: Iterable[str] | None = None, stopwords: frozenset[str] | None = None) -> Corpus:
    """Lowercase alphabetic runs minus stopwords, optionally restricted to ``keep_list``.

    Digits and punctuation split tokens and are dropped.  Documents left
    with no tokens stay in the corpus and are listed in ``empty_ids``.
    """
    stop = load_stopwords() if stopwords is None else frozenset(stopwords)
    keep = None if keep_list is None else frozenset(t.lower() for t in keep_list)
    docs = tuple(
        Document(id=d.id, date=d.date, text=d.text, source=d.source, tokens=_tokens(d.text, stop, keep))
        for d in corpus.documents
    )
    empty = tuple(d.id for d in docs if not d.tokens)
    if empty:
        log.info("%d documents have no tokens after filtering", len(empty))
    return Corpus(docs, empty_ids=empty)


@dataclass(frozen=True)
class DocumentTermMatrix:
    counts: sparse.csr_matrix
    vocab: tuple[str, ...]
    doc_dates: tuple[date, ...]
    doc_ids: tuple[str, ...]
    dropped_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if list(self.vocab) != sorted(set(self.vocab)):
            raise ValueError("vocab must be sorted and duplicate-free")
        if self.counts.shape != (len(self.doc_ids), len(self.vocab)):
            raise ValueError("counts shape does not match ids and vocab")

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def months(self) -> pd.PeriodIndex:
        return pd.PeriodIndex([pd.Period(d, freq="M") for d in self.doc_dates], freq="M")


def _require_tokens(corpus: Corpus):
    if not corpus.tokenized:
        raise ValueError("corpus must be tokenized first")


def tfidf_scores(corpus: Corpus, cutoff=None, aggregate: str = "max") -> dict[str, float]:
    """Per-term relevance from documents dated on or before the cutoff month.

    ``tf = count / doc length``, ``idf = log(N / df)``; the per-document
    values are combined with ``aggregate`` (max, mean or sum over documents).
    """
    _require_tokens(corpus)
    if aggregate not in ("max", "mean", "sum"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    docs = [d for d in corpus.documents if d.tokens]
    if cutoff is not None:
        last = pd.Period(cutoff, freq="M")
        docs = [d for d in docs if pd.Period(d.date, freq="M") <= last]
    if not docs:
        raise ValueError("no nonempty documents on or before the cutoff")
    terms = sorted({t for d in docs for t in d.tokens})
    index = {t: j for j, t in enumerate(terms)}
    rows, cols = [], []
    for i, d in enumerate(docs):
        rows.extend([i] * len(d.tokens))
        cols.extend(index[t] for t in d.tokens)
    C = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(docs), len(terms)))
    C.sum_duplicates()
    N = len(docs)
    df = np.diff(C.tocsc().indptr)
    idf = np.log(N / df)
    lengths = np.asarray(C.sum(axis=1)).ravel()
    tfidf = sparse.diags(1.0 / lengths) @ C @ sparse.diags(idf)
    tfidf = tfidf.tocsc()
    if aggregate == "max":
        # tf-idf is nonnegative and absent terms score 0, so the sparse max is exact
        score = tfidf.max(axis=0).toarray().ravel()
    elif aggregate == "sum":
        score = np.asarray(tfidf.sum(axis=0)).ravel()
    else:
        score = np.asarray(tfidf.sum(axis=0)).ravel() / N
    return dict(zip(terms, score.tolist()))


def select_vocabulary(corpus: Corpus, cutoff, v_max: int = 10000, aggregate: str = "max") -> tuple[str, ...]:
    """Top ``v_max`` terms by tf-idf relevance, ties broken alphabetically; returned sorted."""
    if v_max < 1:
        raise ValueError("v_max must be positive")
    _require_tokens(corpus)
    if cutoff is not None and corpus.documents:
        first = min(pd.Period(d.date, freq="M") for d in corpus.documents)
        if pd.Period(cutoff, freq="M") < first:
            raise ValueError(f"cutoff {cutoff} precedes the first document month {first}")
    scores = tfidf_scores(corpus, cutoff, aggregate)
    if len(scores) < v_max:
        warnings.warn(f"only {len(scores)} distinct terms available, fewer than v_max={v_max}", stacklevel=2)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(sorted(t for t, _ in ranked[:v_max]))


def build_dtm(corpus: Corpus, vocab: Iterable[str]) -> DocumentTermMatrix:
    """Exact term counts; documents with no in-vocabulary tokens are dropped and reported."""
    _require_tokens(corpus)
    vocab = tuple(sorted(set(vocab)))
    if not vocab:
        raise ValueError("vocab must be nonempty")
    index = {t: j for j, t in enumerate(vocab)}
    rows, cols, kept, dropped = [], [], [], []
    for d in corpus.documents:
        hits = [index[t] for t in d.tokens if t in index]
        if not hits:
            dropped.append(d.id)
            continue
        rows.extend([len(kept)] * len(hits))
        cols.extend(hits)
        kept.append(d)
    counts = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(len(kept), len(vocab)), dtype=np.int64
    )
    counts.sum_duplicates()
    if dropped:
        log.info("dropped %d documents with no vocabulary terms", len(dropped))
    return DocumentTermMatrix(
        counts=counts,
        vocab=vocab,
        doc_dates=tuple(d.date for d in kept),
        doc_ids=tuple(d.id for d in kept),
        dropped_ids=tuple(dropped),
    )


def save_dtm(dtm: DocumentTermMatrix, directory) -> None:
    """Triplet file ``dtm.tsv`` (doc_index, term_index, count) plus vocab and docs sidecars."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    coo = dtm.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(out / "dtm.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"# {dtm.shape[0]} {dtm.shape[1]}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r}\t{c}\t{int(v)}\n")
    (out / "vocab.txt").write_text("".join(t + "\n" for t in dtm.vocab), encoding="utf-8")
    with open(out / "docs.tsv", "w", encoding="utf-8") as fh:
        for i, dt in zip(dtm.doc_ids, dtm.doc_dates):
            fh.write(f"{i}\t{dt.isoformat()}\n")


def load_dtm(directory) -> DocumentTermMatrix:
    src = Path(directory)
    with open(src / "dtm.tsv", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("dtm.tsv is missing its shape header")
        n, v = (int(x) for x in header[1:].split())
        trip = np.loadtxt(fh, dtype=np.int64, ndmin=2)
    vocab = tuple((src / "vocab.txt").read_text(encoding="utf-8").split())
    ids, dates = [], []
    for line in (src / "docs.tsv").read_text(encoding="utf-8").splitlines():
        i, dt = line.split("\t")
        ids.append(i)
        dates.append(date.fromisoformat(dt))
    if trip.size:
        counts = sparse.csr_matrix((trip[:, 2], (trip[:, 0], trip[:, 1])), shape=(n, v), dtype=np.int64)
    else:
        counts = sparse.csr_matrix((n, v), dtype=np.int64)
    return DocumentTermMatrix(counts=counts, vocab=vocab, doc_dates=tuple(dates), doc_ids=tuple(ids))


def documents_by_month(dtm: DocumentTermMatrix) -> dict[pd.Period, Sequence[int]]:
    out: dict[pd.Period, list[int]] = {}
    for i, m in enumerate(dtm.months):
        out.setdefault(m, []).append(i)
    return out
