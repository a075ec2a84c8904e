"""Command-line pipeline: logs -> triplets -> vectorizers -> embeddings ->
index -> model -> evaluation/serving.

Every stage reads and writes the documented file formats, so stages can be
re-run or swapped independently. --seed is threaded through all stochastic
stages; identical seeds give identical artifacts.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import click
import numpy as np

from . import corpus, embed, evaluate, index, model as model_mod, serve, synth, vectorize
from .sparse import load_csr, rows_to_csr


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise click.ClickException(f"missing {what}: expected {path}")
    return path


def _load_triplets(path: Path, what: str):
    triplets = corpus.read_triplets_jsonl(_require(path, what))
    if not triplets:
        raise click.ClickException(f"{path}: no triplets")
    return triplets


def _encode_rows(encoder: vectorize.InputEncoder, triplets):
    return rows_to_csr([encoder.encode(t.prev_query, t.prefix) for t in triplets],
                       encoder.dim)


@click.group()
def main():
    """Session-aware query auto-completion pipeline."""


@main.command("gen-logs")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--sessions", default=15000, show_default=True)
@click.option("--users", default=400, show_default=True)
@click.option("--brands", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--meta", "meta_path", type=click.Path(path_type=Path), default=None,
              help="Also write generator metadata (suggested split boundaries).")
def gen_logs(out: Path, sessions: int, users: int, brands: int, seed: int, meta_path: Path | None):
    """Generate a synthetic search log in the ingestion TSV format."""
    cfg = synth.SynthConfig(n_sessions=sessions, n_users=users, n_brands=brands, seed=seed)
    records, meta = synth.generate_logs(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    synth.write_logs_tsv(out, records)
    if meta_path is not None:
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
    click.echo(f"wrote {len(records)} records to {out} "
               f"(dev/test boundaries {meta['suggested_dev_boundary']}"
               f"/{meta['suggested_test_boundary']})")


@main.command()
@click.option("--logs", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--dev-boundary", type=int, required=True,
              help="Epoch seconds: sessions starting earlier go to train.")
@click.option("--test-boundary", type=int, required=True,
              help="Epoch seconds: sessions starting earlier go to dev.")
@click.option("--seed", default=0, show_default=True)
def ingest(logs: Path, out: Path, dev_boundary: int, test_boundary: int, seed: int):
    """Ingest TSV logs into train/dev/test triplets and the label vocabulary."""
    _require(logs, "log file")
    try:
        stats = corpus.ingest(logs, out, (dev_boundary, test_boundary), seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(stats, sort_keys=True))


@main.command("fit-vectorizers")
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--mode", type=click.Choice([vectorize.PREV_ONLY, vectorize.PREV_CONCAT_PREFIX]),
              default=vectorize.PREV_CONCAT_PREFIX, show_default=True)
@click.option("--pos-weighted/--simple", "pos_weighted", default=False, show_default=True,
              help="Position-weight the prefix character vectorizer.")
@click.option("--token-min-df", default=2, show_default=True)
@click.option("--char-min-df", default=1, show_default=True)
def fit_vectorizers(data: Path, out: Path, mode: str, pos_weighted: bool,
                    token_min_df: int, char_min_df: int):
    """Fit the previous-query and prefix vectorizers on the train split."""
    triplets = _load_triplets(data / "train.jsonl", "train split")
    prev_vocab = vectorize.fit_vocab((t.prev_query for t in triplets),
                                     vectorize.TOKEN_UNIGRAM, min_df=token_min_df)
    prefix_vocab = vectorize.fit_vocab((t.prefix for t in triplets),
                                       vectorize.CHAR_NGRAM, min_df=char_min_df,
                                       position_weighted=pos_weighted)
    encoder = vectorize.InputEncoder(prev_vocab, prefix_vocab, mode)
    vectorize.save_encoder(out, encoder)
    click.echo(f"encoder dim={encoder.dim} (prev {prev_vocab.dim} + prefix {prefix_vocab.dim}), "
               f"mode={mode}, pos_weighted={pos_weighted}")


@main.command("embed-labels")
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--encoder", "encoder_dir", type=click.Path(path_type=Path), default=None,
              help="Input encoder directory (required for --method pifa).")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--method", type=click.Choice([embed.PIFA, embed.LABEL_TEXT_SIMPLE,
                                             embed.LABEL_TEXT_POSWEIGHTED]),
              default=embed.PIFA, show_default=True)
@click.option("--char-min-df", default=1, show_default=True)
def embed_labels(data: Path, encoder_dir: Path | None, out: Path, method: str, char_min_df: int):
    """Embed every label for index building."""
    labels = corpus.read_labels(_require(data / "labels.txt", "label vocabulary"))
    if method == embed.PIFA:
        if encoder_dir is None:
            raise click.ClickException("--method pifa requires --encoder")
        encoder = vectorize.load_encoder(_require(encoder_dir, "encoder directory"))
        triplets = _load_triplets(data / "train.jsonl", "train split")
        vocab = {label: i for i, label in enumerate(labels)}
        label_ids = np.array([vocab[t.next_query] for t in triplets])
        emb = embed.pifa_embed(_encode_rows(encoder, triplets), label_ids, len(labels))
    else:
        vocab = vectorize.fit_vocab(labels, vectorize.CHAR_NGRAM, min_df=char_min_df,
                                    position_weighted=(method == embed.LABEL_TEXT_POSWEIGHTED))
        vectorize.save_vocab(Path(f"{out}.vocab.json"), vocab)
        emb = embed.label_text_embed(labels, vocab)
    out.parent.mkdir(parents=True, exist_ok=True)
    embed.save_embeddings(out, emb)
    click.echo(f"embedded {emb.n_labels} labels (dim {emb.dim}, source {emb.source}, "
               f"{len(emb.zero_rows)} zero rows)")


@main.command("build-index")
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--embeddings", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--algo", type=click.Choice([index.HC, index.TRIE, index.HYBRID, index.MLC]),
              default=index.HC, show_default=True)
@click.option("--m", "--M", "m", default=100, show_default=True, help="Max clustered leaf size.")
@click.option("--d-trie", default=3, show_default=True)
@click.option("--d-mlc", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
def build_index_cmd(data: Path, embeddings: Path | None, out: Path, algo: str,
                    m: int, d_trie: int, d_mlc: int, seed: int):
    """Build the hierarchical label index."""
    labels = corpus.read_labels(_require(data / "labels.txt", "label vocabulary"))
    emb = None
    if algo != index.TRIE:
        if embeddings is None:
            raise click.ClickException(f"--algo {algo} requires --embeddings")
        emb = load_csr(_require(embeddings, "embeddings file"))
    start = time.perf_counter()
    tree = index.build_index(algo, labels, emb, M=m, d_trie=d_trie, d_mlc=d_mlc, seed=seed)
    elapsed = time.perf_counter() - start
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save_tree(out, tree)
    click.echo(f"{algo} index: {tree.n_nodes} nodes, {len(tree.leaf_ids())} leaves, "
               f"depth {tree.depth()}, built in {elapsed:.2f}s")
    if tree.diagnostics.get("relaxed_splits"):
        click.echo(f"balance relaxed at {len(tree.diagnostics['relaxed_splits'])} splits")


@main.command()
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--encoder", "encoder_dir", type=click.Path(path_type=Path), required=True)
@click.option("--tree", "tree_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--reg-c", default=1.0, show_default=True)
@click.option("--tol", default=1e-4, show_default=True)
@click.option("--solver", type=click.Choice(["liblinear", "lbfgs"]),
              default="liblinear", show_default=True)
@click.option("--transform", type=click.Choice([model_mod.HINGE_EXP3, model_mod.SIGMOID]),
              default=model_mod.HINGE_EXP3, show_default=True)
def train(data: Path, encoder_dir: Path, tree_path: Path, out: Path,
          reg_c: float, tol: float, solver: str, transform: str):
    """Train node and label classifiers over a built index."""
    triplets = _load_triplets(data / "train.jsonl", "train split")
    labels = corpus.read_labels(_require(data / "labels.txt", "label vocabulary"))
    encoder = vectorize.load_encoder(_require(encoder_dir, "encoder directory"))
    tree = index.load_tree(_require(tree_path, "index file"))
    vocab = {label: i for i, label in enumerate(labels)}
    label_ids = np.array([vocab[t.next_query] for t in triplets])
    start = time.perf_counter()
    X = _encode_rows(encoder, triplets)
    trained = model_mod.train(tree, X, label_ids, labels, reg_C=reg_c, tol=tol,
                              solver=solver, score_transform=transform)
    elapsed = time.perf_counter() - start
    model_mod.save_model(out, trained, encoder)
    click.echo(f"trained {tree.n_nodes} node + {tree.n_labels} label classifiers "
               f"in {elapsed:.2f}s -> {out}")


@main.command("evaluate")
@click.option("--model", "model_dir", type=click.Path(path_type=Path), required=True)
@click.option("--test", "test_path", type=click.Path(path_type=Path), required=True)
@click.option("--train", "train_path", type=click.Path(path_type=Path), default=None,
              help="Train split for label frequencies and the MFQ baseline.")
@click.option("--baseline", type=click.Choice(["mfq", "none"]), default="none", show_default=True)
@click.option("--k", default=10, show_default=True)
@click.option("--beam", default=10, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Report directory (JSON, TSV table, figures).")
def evaluate_cmd(model_dir: Path, test_path: Path, train_path: Path | None,
                 baseline: str, k: int, beam: int, out: Path | None):
    """Evaluate a trained model (and optionally the MFQ baseline)."""
    trained, encoder = model_mod.load_model(_require(model_dir, "model directory"))
    if encoder is None:
        raise click.ClickException(f"{model_dir}: model directory has no input encoder")
    test_triplets = _load_triplets(test_path, "test split")
    train_counts = None
    mfq = None
    if baseline == "mfq" and train_path is None:
        raise click.ClickException("--baseline mfq requires --train")
    if train_path is not None:
        train_triplets = _load_triplets(train_path, "train split")
        train_counts = {}
        for t in train_triplets:
            train_counts[t.next_query] = train_counts.get(t.next_query, 0) + 1
        if baseline == "mfq":
            mfq = evaluate.build_mfq(train_triplets, k)
    report = evaluate.evaluate_model(
        trained, encoder, test_triplets, k=k, B=beam,
        train_counts=train_counts, mfq=mfq,
        config={"model_dir": str(model_dir), "test": str(test_path), "k": k, "beam": beam})
    report.content_hash = evaluate.model_content_hash(model_dir)
    click.echo(f"mrr={report.mrr:.4f} bleu_rr={report.bleu_rr:.4f} "
               f"coverage={report.coverage:.3f} n={report.n_examples}")
    if report.latency_p50_ms is not None:
        click.echo(f"latency p50={report.latency_p50_ms:.2f}ms p99={report.latency_p99_ms:.2f}ms")
    if report.baseline:
        click.echo(f"baseline[{report.baseline['name']}] mrr={report.baseline['mrr']:.4f} "
                   f"bleu_rr={report.baseline['bleu_rr']:.4f}")
    if out is not None:
        for path in evaluate.write_report(report, out):
            click.echo(f"wrote {path}")


@main.command()
@click.option("--model", "model_dir", type=click.Path(path_type=Path), required=True)
@click.option("--prev", default="", show_default=True)
@click.option("--prefix", required=True)
@click.option("--k", default=10, show_default=True)
@click.option("--beam", default=10, show_default=True)
def predict(model_dir: Path, prev: str, prefix: str, k: int, beam: int):
    """Print top-k suggestions for one (previous query, prefix) pair."""
    trained, encoder = model_mod.load_model(_require(model_dir, "model directory"))
    if encoder is None:
        raise click.ClickException(f"{model_dir}: model directory has no input encoder")
    prev_n = corpus.normalize_query(prev)
    prefix_n = corpus.normalize_query(prefix)
    x = encoder.encode(prev_n, prefix_n)
    suggestions = model_mod.predict(trained, x, prefix_n, beam, k)
    click.echo(json.dumps(
        {"prev": prev_n, "prefix": prefix_n,
         "suggestions": [{"query": s.query, "score": s.score} for s in suggestions]},
        indent=2))


@main.command("serve")
@click.option("--model", "model_dir", type=click.Path(path_type=Path), default=None)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--mfq-train", type=click.Path(path_type=Path), default=None)
@click.option("--demo-dir", type=click.Path(path_type=Path), default=None)
def serve_cmd(model_dir: Path | None, config_path: Path | None, host: str | None,
              port: int | None, mfq_train: Path | None, demo_dir: Path | None):
    """Serve GET /suggest over a trained model."""
    overrides = {
        "model_dir": str(model_dir) if model_dir else None,
        "host": host,
        "port": port,
        "mfq_train_file": str(mfq_train) if mfq_train else None,
        "demo_dir": str(demo_dir) if demo_dir else None,
    }
    try:
        if config_path is not None:
            config = serve.ServeConfig.from_file(_require(config_path, "serve config"),
                                                 **overrides)
        else:
            config = serve.ServeConfig(**{k: v for k, v in overrides.items() if v is not None})
        if not config.model_dir:
            raise click.ClickException(
                f"no model directory (use --model, a config file, or ${serve.MODEL_DIR_ENV})")
        _require(Path(config.model_dir), "model directory")
    except ValueError as exc:
        raise click.ClickException(str(exc))
    serve.run_server(config)


if __name__ == "__main__":
    main()
