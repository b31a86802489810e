"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The full-corpus benchmark (criterion 10) needs the public competition
dataset and is skipped by default.
"""

import itertools
import os
import time

import numpy as np
import pytest

from writer_retrieval import cli, corpus, descriptor, embed, evaluate, preprocess, retrieval

from test_evaluate import ap_enumeration
from test_preprocess import otsu_oracle
from test_retrieval import naive_matrix


def report(criterion, detail=""):
    print(f"PASS criterion {criterion}: {detail}")


def test_criterion_1_ap_oracle_equivalence():
    start = time.monotonic()
    checked = 0
    for rel in itertools.product([0, 1], repeat=12):
        if sum(rel) == 0:
            continue
        streaming = evaluate.average_precision(rel)
        assert abs(streaming - ap_enumeration(rel)) <= 1e-12
        checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    report(1, f"streaming AP == enumeration for {checked} lists in {elapsed:.2f}s")


def test_criterion_2_ap_hand_values():
    assert evaluate.average_precision([1, 0, 1, 0]) == pytest.approx(5 / 6, abs=1e-15)
    assert evaluate.average_precision([0, 1]) == 0.5
    assert evaluate.average_precision([1, 1, 1, 0, 0]) == 1.0
    report(2, "AP([1,0,1,0])=5/6, AP([0,1])=0.5, perfect ranking AP=1.0")


def test_criterion_3_descriptor_shape():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    d = descriptor.extract_descriptor(img)
    assert d.values.shape == (3072,)
    assert not any(d.empty_slices)
    for i in range(12):
        assert d.values[i * 256 : (i + 1) * 256].sum() == pytest.approx(1.0, abs=1e-12)

    const = descriptor.extract_descriptor(np.full((64, 64), 80, dtype=np.uint8))
    for i in range(12):
        piece = const.values[i * 256 : (i + 1) * 256]
        assert piece[255] == 1.0
        assert piece.sum() == 1.0
    report(3, "3072 dims, 12 unit-sum slices, constant image one-hot at code 255")


def test_criterion_4_pca_oracle():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 10))
    model = embed.fit_pca(X, dim=5)
    cov = np.cov(X, rowvar=False, ddof=1)
    w, v = np.linalg.eigh(cov)
    top = v[:, np.argsort(w)[::-1][:5]].T
    from test_embed import principal_angles

    max_angle = principal_angles(model.components, top)
    assert max_angle < 1e-8
    assert np.abs(embed.project(model, model.mean)).max() < 1e-12
    report(4, f"principal angles {max_angle:.2e} < 1e-8; mean projects to zero")


def test_criterion_5_otsu_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        img = rng.integers(0, 256, (h, w), dtype=np.uint8)
        got = preprocess.otsu_binarize(img)
        if got.degenerate:
            assert img.min() == img.max()
            continue
        assert got.threshold == otsu_oracle(img)
    report(5, "1000 random images: threshold equals exhaustive 256-candidate search")


@pytest.mark.parametrize("metric", retrieval.METRICS)
def test_criterion_6_blocked_matrix(metric):
    rng = np.random.default_rng(3)
    X = np.abs(rng.standard_normal((200, 16)))
    ref = naive_matrix(X, metric)
    scale = max(ref.max(), 1.0)
    for tile in (1, 7, 64, 200):
        for workers in (1, 4):
            got = retrieval.compute_distance_matrix(X, metric=metric, tile=tile, workers=workers)
            assert np.abs(got.values - ref).max() / scale < 1e-6
    report(6, f"{metric}: blocked == naive for tiles (1,7,64,200) x workers (1,4)")


def test_criterion_7_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    mtx = retrieval.compute_distance_matrix(rng.standard_normal((9, 5)))
    path = tmp_path / "dist.bin"
    retrieval.write_matrix(mtx, path, "binary")
    got = retrieval.read_matrix(path)
    assert got.values.tobytes() == mtx.values.tobytes()
    assert got.image_ids == mtx.image_ids

    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(retrieval.MatrixFormatError):
        retrieval.read_matrix(truncated)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXDIST9" + path.read_bytes()[7:])
    with pytest.raises(retrieval.MatrixFormatError):
        retrieval.read_matrix(bad)
    report(7, "binary round trip bit-exact; truncation and bad magic raise")


@pytest.fixture(scope="module")
def end_to_end_reports(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    corpus.synth_corpus(50, 5, 100, seed=1, out_dir=root / "test")
    corpus.synth_corpus(40, 4, 0, seed=2, out_dir=root / "train")
    cfg = cli.RunConfig(
        manifest=str(root / "test" / "manifest.csv"),
        train_manifest=str(root / "train" / "manifest.csv"),
        out_dir=str(root / "out"),
        pca_modes=("classification", "retrieval"),
        workers=os.cpu_count() or 1,
    )
    start = time.monotonic()
    reports = cli.run_pipeline(cfg)
    return reports, time.monotonic() - start


def test_criterion_8_end_to_end_synthetic(end_to_end_reports):
    reports, elapsed = end_to_end_reports
    assert set(reports) == {"classification", "retrieval"}
    for mode, rep in reports.items():
        assert rep.map is not None and rep.map >= 0.90, f"{mode} mAP {rep.map}"
        assert rep.excluded == 100
        assert rep.included == 250
    assert elapsed < 300.0
    detail = ", ".join(f"{m} mAP {r.map:.3f}" for m, r in reports.items())
    report(8, f"{detail}; 100 exclusions each; {elapsed:.0f}s")


def test_criterion_9_metric_invariance():
    rng = np.random.default_rng(5)
    from conftest import make_manifest

    m = make_manifest({f"w{i}": int(rng.integers(1, 4)) for i in range(15)})
    n = len(m)
    values = rng.random((n, n)).astype(np.float32)
    values = values + values.T
    np.fill_diagonal(values, 0)
    base = retrieval.DistanceMatrix(values, m.image_ids)
    squared = retrieval.DistanceMatrix(values**2, m.image_ids)
    a = evaluate.evaluate_matrix(base, m)
    b = evaluate.evaluate_matrix(squared, m)
    assert a.map == b.map
    assert a.top1_accuracy == b.top1_accuracy
    for q in range(n):
        assert np.array_equal(
            retrieval.rank_for_query(base, q), retrieval.rank_for_query(squared, q)
        )
    report(9, "x -> x^2 on all entries leaves mAP, Top-1 and every ranking unchanged")


@pytest.mark.skipif(
    not os.environ.get("WR_COMPETITION_MANIFEST"),
    reason="full competition corpus not available; set WR_COMPETITION_MANIFEST to run",
)
def test_criterion_10_full_corpus_benchmark():
    """Optional full-scale check against the published baseline numbers."""
    manifest_path = os.environ["WR_COMPETITION_MANIFEST"]
    train_path = os.environ.get("WR_COMPETITION_TRAIN_MANIFEST", "")
    cfg = cli.RunConfig(
        manifest=manifest_path,
        train_manifest=train_path,
        out_dir=os.environ.get("WR_COMPETITION_OUT", "competition_out"),
        pca_modes=("classification", "retrieval") if train_path else ("retrieval",),
    )
    reports = cli.run_pipeline(cfg)
    retrieval_map = reports["retrieval"].map
    assert abs(retrieval_map - 0.868) <= 0.03
    if "classification" in reports:
        assert retrieval_map >= reports["classification"].map
    report(10, f"full-corpus retrieval mAP {retrieval_map:.3f}")
