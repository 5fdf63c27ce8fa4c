"""Pipeline stages: prepare-text, fit-ctm, backtest, importance.

Every artifact is written to a temporary file next to its destination and
renamed into place, so an interrupted run never leaves a half-written file
under its final name.  Each stage records the artifacts it produced in
``manifest.json``.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import os
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import run_backtest
from .config import ExperimentConfig
from .ctm import aggregate_monthly, fit_ctm, infer_corpus, save_model, train_posteriors
from .errors import MissingPrerequisiteError
from .ingest import assemble_design, parse_panel
from .textpipe import build_dtm, load_dtm, read_corpus, read_keep_list, save_dtm, select_vocabulary, tokenize
from .varimp import count_selected, fit_surrogate, top_predictors

__all__ = ["STAGES", "run_stage", "run_all", "atomic_path"]

log = logging.getLogger(__name__)

STAGES = ("prepare-text", "fit-ctm", "backtest", "importance")


@contextlib.contextmanager
def atomic_path(dest):
    """Yield a temporary path in the destination directory; rename over ``dest`` on success."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", suffix=".tmp", dir=dest.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, dest)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _write_text(dest, text: str) -> None:
    with atomic_path(dest) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _write_csv(dest, frame: pd.DataFrame, **kw) -> None:
    with atomic_path(dest) as tmp:
        frame.to_csv(tmp, index=False, lineterminator="\n", **kw)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict[str, str]:
    out = {"tailcast": __version__}
    for dist in ("numpy", "scipy", "pandas", "scikit-learn", "PyYAML", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _update_manifest(cfg: ExperimentConfig, stage: str, artifacts: list[Path]) -> None:
    out = cfg.output_dir
    path = out / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    if manifest.get("config_sha256") != cfg.digest():
        manifest = {}
    manifest.update(config_sha256=cfg.digest(), seed=cfg.seed, versions=_versions())
    stages = manifest.setdefault("stages", {})
    stages[stage] = {str(p.relative_to(out)): _sha256(p) for p in sorted(artifacts)}
    _write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(f"{path} not found; run the `{stage}` stage first")
    return path


# --------------------------------------------------------------------------- stages


def prepare_text(cfg: ExperimentConfig) -> list[Path]:
    paths, t = cfg.paths, cfg.raw["text"]
    if paths["corpus"] is None:
        raise MissingPrerequisiteError("no corpus configured (paths/corpus)")
    keep = read_keep_list(paths["keep_list"]) if paths["keep_list"] else None
    corpus = tokenize(read_corpus(paths["corpus"]), keep_list=keep)
    vocab = select_vocabulary(corpus, t["cutoff"], v_max=int(t["v_max"]), aggregate=t["aggregate"])
    dtm = build_dtm(corpus, vocab)
    dest = cfg.output_dir / "text"
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=dest) as tmp:
        save_dtm(dtm, tmp)
        for name in ("dtm.tsv", "vocab.txt", "docs.tsv"):
            os.replace(Path(tmp) / name, dest / name)
    dropped = sorted(set(corpus.empty_ids) | set(dtm.dropped_ids))
    _write_text(dest / "dropped_documents.txt", "".join(f"{i}\n" for i in dropped))
    return [dest / n for n in ("dtm.tsv", "vocab.txt", "docs.tsv", "dropped_documents.txt")]


def fit_topics(cfg: ExperimentConfig) -> list[Path]:
    text_dir = cfg.output_dir / "text"
    _require(text_dir / "dtm.tsv", "prepare-text")
    dtm = load_dtm(text_dir)
    c = cfg.raw["ctm"]
    cutoff = pd.Period(cfg.raw["text"]["cutoff"], freq="M")
    months = dtm.months
    train = np.flatnonzero(months <= cutoff)
    if train.size == 0:
        raise ValueError(f"no documents on or before the cutoff {cutoff}")
    C = dtm.counts.tocsr()
    model = fit_ctm(C[train], K=int(c["K"]), seed=cfg.seed, tol=float(c["tol"]), max_iter=int(c["max_iter"]),
                    vocab=dtm.vocab, n_starts=int(c["n_starts"]))
    posts = [None] * C.shape[0]
    for i, p in zip(train, train_posteriors(model)):
        posts[i] = p
    held = np.flatnonzero(months > cutoff)
    if held.size:
        for i, p in zip(held, infer_corpus(model, C[held])):
            posts[i] = p
    series = aggregate_monthly(posts, list(dtm.doc_dates), months=pd.period_range(months.min(), months.max(), freq="M"))
    dest = cfg.output_dir / "ctm"
    with atomic_path(dest / "model.json") as tmp:
        save_model(model, tmp)
    with atomic_path(dest / "topics.csv") as tmp:
        series.to_csv(tmp)
    return [dest / "model.json", dest / "topics.csv"]


def _load_text(cfg: ExperimentConfig):
    if not cfg.needs_text:
        return None
    path = _require(cfg.output_dir / "ctm" / "topics.csv", "fit-ctm")
    frame = pd.read_csv(path, index_col=0, dtype={0: str})
    frame.index = pd.PeriodIndex(frame.index, freq="M")
    return frame


def backtest(cfg: ExperimentConfig, progress=None) -> list[Path]:
    panel = parse_panel(cfg.paths["panel"], cfg.paths["sidecar"])
    text = _load_text(cfg)
    report = run_backtest(cfg.backtest, panel, text, threads=int(cfg.raw["threads"]), progress=progress)
    dest = cfg.output_dir / "backtest"
    _write_csv(dest / "records.csv", report.records)
    _write_csv(dest / "aggregate.csv", report.aggregate)
    return [dest / "records.csv", dest / "aggregate.csv"]


def importance(cfg: ExperimentConfig) -> list[Path]:
    records = pd.read_csv(_require(cfg.output_dir / "backtest" / "records.csv", "backtest"), keep_default_na=True)
    records["error"] = records["error"].fillna("")
    panel = parse_panel(cfg.paths["panel"], cfg.paths["sidecar"])
    text = _load_text(cfg)
    bt = cfg.backtest
    imp = cfg.raw["importance"]
    rows, counts = [], []
    for (variable, mode, h), grp in records.groupby(["variable", "mode", "h"], sort=True):
        xs, names, prov = {}, None, None
        for origin in sorted(grp["origin"].unique()):
            try:
                d = assemble_design(panel, text if mode != "fred" else None, variable, origin, int(h), mode,
                                    n_lags=bt.n_lags, estimation_start=bt.estimation_start)
            except (ValueError, LookupError):
                continue
            xs[origin], names, prov = d.x_new_raw, d.column_names, d.provenance
        if not xs:
            continue
        for (model, tau), g in grp.groupby(["model", "tau"], sort=True):
            g = g[g["origin"].isin(list(xs)) & np.isfinite(g["forecast"])].sort_values("origin")
            if len(g) < 2:
                continue
            X = np.vstack([xs[o] for o in g["origin"]])
            fit = fit_surrogate(g["forecast"].to_numpy(), X, names, prov, cv_folds=int(imp["cv_folds"]))
            key = dict(model=model, variable=variable, mode=mode, h=int(h), tau=float(tau))
            sel = count_selected(fit)
            counts.append(dict(key, **{"lambda": fit.lambda_, "nonzero": fit.nonzero_count, "fred": sel["fred"],
                                       "text": sel["text"], "constant_path": fit.constant_path}))
            for rank, (name, mag, label) in enumerate(top_predictors(fit, int(imp["k"])), 1):
                rows.append(dict(key, rank=rank, predictor=name, abs_coef=mag, source=label))
    dest = cfg.output_dir / "importance"
    _write_csv(dest / "importance.csv", pd.DataFrame(
        rows, columns=["model", "variable", "mode", "h", "tau", "rank", "predictor", "abs_coef", "source"]))
    _write_csv(dest / "selection_counts.csv", pd.DataFrame(
        counts, columns=["model", "variable", "mode", "h", "tau", "lambda", "nonzero", "fred", "text", "constant_path"]))
    return [dest / "importance.csv", dest / "selection_counts.csv"]


_RUNNERS = {"prepare-text": prepare_text, "fit-ctm": fit_topics, "backtest": backtest, "importance": importance}


def run_stage(stage: str, cfg: ExperimentConfig, progress=None) -> list[Path]:
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    log.info("stage %s", stage)
    produced = _RUNNERS[stage](cfg, progress) if stage == "backtest" else _RUNNERS[stage](cfg)
    _update_manifest(cfg, stage, produced)
    return produced


def run_all(cfg: ExperimentConfig, progress=None) -> list[Path]:
    """Every stage in order; text stages only when a corpus is configured."""
    produced = []
    for stage in STAGES:
        if stage in ("prepare-text", "fit-ctm") and cfg.paths["corpus"] is None:
            continue
        produced += run_stage(stage, cfg, progress)
    return produced
