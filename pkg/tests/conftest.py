"""Session fixtures: synthetic datasets and trained models at two scales.

`ds8k`/`model8k` back the index-quality acceptance checks and the
directional evaluation comparisons; `tiny` keeps integration tests for
serving, CLI, and report writing fast.
"""

from __future__ import annotations

import time
from collections import Counter

import pytest

from prefx import embed, index, vectorize
from prefx import model as model_mod

import util


@pytest.fixture(scope="session")
def ds8k() -> dict:
    ds = util.build_dataset(8000, seed=0)
    encoder = util.fit_encoder(ds["train"].triplets, vectorize.PREV_CONCAT_PREFIX)
    X = util.encode_split(encoder, ds["train"].triplets)
    ds.update(
        encoder=encoder,
        X=X,
        pifa=embed.pifa_embed(X, util.train_ids(ds), len(ds["labels"])),
        train_counts=Counter(t.next_query for t in ds["train"].triplets),
    )
    return ds


@pytest.fixture(scope="session")
def model8k(ds8k) -> dict:
    model, wall = util.train_arm(ds8k, ds8k["X"], ds8k["pifa"], index.HC, M=100)
    return {"model": model, "wall_seconds": wall}


@pytest.fixture(scope="session")
def tiny() -> dict:
    ds = util.build_dataset(400, seed=11, n_users=60, n_brands=12)
    encoder = util.fit_encoder(ds["train"].triplets, vectorize.PREV_CONCAT_PREFIX)
    X = util.encode_split(encoder, ds["train"].triplets)
    label_ids = util.train_ids(ds)
    pifa = embed.pifa_embed(X, label_ids, len(ds["labels"]))
    start = time.perf_counter()
    tree = index.build_hc(pifa, M=16, seed=0)
    model = model_mod.train(tree, X, label_ids, ds["labels"])
    ds.update(
        encoder=encoder,
        X=X,
        label_ids=label_ids,
        pifa=pifa,
        model=model,
        wall_seconds=time.perf_counter() - start,
        train_counts=Counter(t.next_query for t in ds["train"].triplets),
    )
    return ds


@pytest.fixture(scope="session")
def tiny_model_dir(tiny, tmp_path_factory):
    model_dir = tmp_path_factory.mktemp("saved") / "model"
    model_mod.save_model(model_dir, tiny["model"], tiny["encoder"])
    return model_dir
