import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, chamfer_brute, naive_metrics
from sketch3d.abstraction import rng_stream
from sketch3d.metric_learning import (
    VARIANTS,
    InsufficientDataError,
    LossConfig,
    RetrievalRun,
    balanced_batch,
    batch_center_loss,
    batch_chamfer,
    batch_triplet_loss,
    chamfer,
    chamfer_with_grad,
    cross_entropy,
    evaluate,
    l2_normalize,
    mine_hard_negatives,
    total_loss,
    triplet_center_loss,
    triplet_loss,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# single-example losses


def test_triplet_arithmetic():
    # a=(1,0), p at squared distance 0.5, n at squared distance 1.0
    a = np.array([1.0, 0.0])
    p = unit([1 - 0.25, math.sqrt(1 - 0.75**2)])
    n = unit([0.5, math.sqrt(0.75)])
    assert np.sum((a - p) ** 2) == pytest.approx(0.5)
    assert np.sum((a - n) ** 2) == pytest.approx(1.0)
    assert triplet_loss(a, p, n, 2.0) == pytest.approx(1.5)


def test_triplet_inactive_and_bound():
    a = unit([1, 2, 3])
    assert triplet_loss(a, a, -a, 2.0) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, p, n = (unit(rng.normal(size=5)) for _ in range(3))
        x = np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + 1.8
        assert triplet_loss(a, p, n, 1.8) == max(0.0, x)
        assert triplet_loss(a, p, n, 1.8) <= 1.8 + 4


def test_triplet_rejects_raw_features():
    with pytest.raises(ValueError):
        triplet_loss([2.0, 0], [1.0, 0], [0, 1.0], 1.0)


def test_center_loss_cases():
    C = np.array([[0.0, 0.0], [60.0, 0.0], [0.0, 70.0]])
    assert triplet_center_loss(C[0], 0, C, 50.0) == 0.0
    # squared distances to own center 60, nearest other 30
    C2 = np.array([[math.sqrt(60), 0.0], [0.0, math.sqrt(30)], [0.0, -10.0]])
    assert triplet_center_loss([0, 0], 0, C2, 50) == pytest.approx(80.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        C = rng.normal(size=(5, 4))
        f = rng.normal(size=4)
        y = int(rng.integers(5))
        d = [float(np.sum((f - c) ** 2)) for c in C]
        other = min(d[j] for j in range(5) if j != y)
        assert triplet_center_loss(f, y, C, 1.0) == pytest.approx(max(0.0, d[y] - other + 1.0), abs=1e-12)
    with pytest.raises(ValueError):
        triplet_center_loss([0, 0], 0, np.zeros((1, 2)), 1.0)


def test_chamfer_cases():
    P = np.random.default_rng(2).normal(size=(10, 3))
    assert chamfer(P, P) == 0.0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), P)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_chamfer_brute_force_exact(n, m, seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer(P, Q) == chamfer_brute(P, Q)
    assert chamfer(P, Q) == chamfer(Q, P)


def test_chamfer_gradient():
    rng = np.random.default_rng(3)
    P, Q = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
    _, dP, dQ = chamfer_with_grad(P, Q)
    np.testing.assert_allclose(dP, central_difference(lambda: chamfer(P, Q), P), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(dQ, central_difference(lambda: chamfer(P, Q), Q), rtol=1e-6, atol=1e-9)


def test_cross_entropy_limit():
    labels = np.array([0, 2, 1])
    for gap, bound in ((5.0, 0.02), (20.0, 1e-8), (50.0, 1e-20)):
        logits = gap * np.eye(3)[labels]
        loss, _ = cross_entropy(logits, labels)
        assert 0.0 <= loss < bound


# mining


def test_mining_two_classes():
    E = l2_normalize(np.array([[1.0, 0.1], [0.9, 0.3], [-1.0, 0.2], [-0.8, -0.5]]))
    labels = [0, 0, 1, 1]
    T = mine_hard_negatives(E, labels)
    assert len(T) == 4
    for a, p, n in T:
        assert labels[a] == labels[p] != labels[n]
        assert p != a


def test_mining_negatives_hardest():
    rng = np.random.default_rng(4)
    for _ in range(50):
        labels = rng.integers(0, 4, size=12)
        if len(set(labels)) < 2:
            continue
        E = l2_normalize(rng.normal(size=(12, 6)))
        for a, p, n in mine_hard_negatives(E, labels):
            dn = np.sum((E[a] - E[n]) ** 2)
            for j in range(12):
                if labels[j] != labels[a]:
                    assert dn <= np.sum((E[a] - E[j]) ** 2)


def test_mining_ties_lowest_index():
    E = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    T = mine_hard_negatives(E, [0, 0, 1, 2])
    # rows 2 and 3 are equally far from row 0; row 2 wins
    assert T[0].tolist() == [0, 1, 2]
    # row 3 has no positive, so it anchors nothing
    assert 3 not in T[:, 0]


def test_mining_single_class():
    with pytest.raises(ValueError):
        mine_hard_negatives(np.eye(3), [1, 1, 1])


# batch objective


def _batch(rng, B=4, D=6, K=3, M=5):
    labels = np.concatenate([np.arange(B) % K] * 2)
    return dict(
        features=rng.normal(size=(2 * B, D)),
        labels=labels,
        logits=rng.normal(size=(2 * B, K)),
        centers=rng.normal(size=(K, D)),
        recons=rng.normal(size=(B, M, 3)),
        targets=rng.normal(size=(B, 2 * M, 3)),
    )


def test_total_loss_term_by_term():
    rng = np.random.default_rng(5)
    for variant in VARIANTS:
        b = _batch(rng)
        cfg = LossConfig(variant=variant, m_tcl=2.0)
        total, terms, _ = total_loss(b["features"], b["labels"], b["logits"], cfg,
                                     b["centers"], b["recons"], b["targets"])
        ce = cross_entropy(b["logits"], b["labels"])[0]
        want = 1.0 * ce
        if cfg.uses_tl:
            E = l2_normalize(b["features"])
            T = mine_hard_negatives(E, b["labels"])
            want += 0.1 * np.mean([triplet_loss(E[a], E[p], E[n], 1.8) for a, p, n in T])
        if cfg.uses_tcl:
            want += 0.1 * np.mean([triplet_center_loss(f, y, b["centers"], 2.0)
                                   for f, y in zip(b["features"], b["labels"])])
        if cfg.uses_rec:
            lam = 8.0 if cfg.uses_tcl else 12.0
            want += lam * np.mean([chamfer(r, t) for r, t in zip(b["recons"], b["targets"])])
        assert total == pytest.approx(want, rel=1e-12)
        assert terms["total"] == total


def test_inactive_triplets_leave_cl_only():
    E = np.array([[1.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [-1.0, 0, 0]])
    labels = np.array([0, 0, 1, 1])
    logits = np.zeros((4, 2))
    cfg = LossConfig("cl+tl", m_tl=1.0)
    total, terms, grads = total_loss(E, labels, logits, cfg)
    assert terms["tl"] == 0.0
    assert total == terms["cls"]
    assert not grads["features"].any()


def test_total_loss_shape_errors():
    rng = np.random.default_rng(6)
    b = _batch(rng)
    with pytest.raises(ValueError):
        total_loss(b["features"], b["labels"], b["logits"][:-1], LossConfig("cl"))
    with pytest.raises(ValueError):
        total_loss(b["features"], b["labels"], b["logits"], LossConfig("cl+tcl"))
    with pytest.raises(ValueError):
        total_loss(b["features"], b["labels"], b["logits"], LossConfig("cl+tl+rec"),
                   recons=b["recons"][:2], targets=b["targets"][:2])


def _check_grads(variant, rng):
    b = _batch(rng)
    cfg = LossConfig(variant=variant, m_tl=1.0, m_tcl=2.0)

    def f():
        return total_loss(b["features"], b["labels"], b["logits"], cfg,
                          b["centers"], b["recons"], b["targets"])[0]

    _, _, g = total_loss(b["features"], b["labels"], b["logits"], cfg,
                         b["centers"], b["recons"], b["targets"])
    checks = [("features", "features"), ("logits", "logits")]
    if cfg.uses_tcl:
        checks.append(("centers", "centers"))
    if cfg.uses_rec:
        checks.append(("recons", "recons"))
    for key, name in checks:
        num = central_difference(f, b[name])
        np.testing.assert_allclose(g[key], num, rtol=1e-4, atol=1e-7, err_msg=f"{variant}:{key}")


@pytest.mark.parametrize("variant", VARIANTS)
def test_loss_gradients(variant):
    _check_grads(variant, np.random.default_rng(sum(map(ord, variant))))


def test_center_and_triplet_gradients_directly():
    rng = np.random.default_rng(7)
    F = rng.normal(size=(6, 4))
    labels = np.array([0, 1, 2, 0, 1, 2])
    C = rng.normal(size=(3, 4))
    _, dF, dC = batch_center_loss(F, labels, C, 3.0)
    np.testing.assert_allclose(dF, central_difference(lambda: batch_center_loss(F, labels, C, 3.0)[0], F),
                               rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dC, central_difference(lambda: batch_center_loss(F, labels, C, 3.0)[0], C),
                               rtol=1e-5, atol=1e-8)
    _, dF, _ = batch_triplet_loss(F, labels, 1.5)
    np.testing.assert_allclose(dF, central_difference(lambda: batch_triplet_loss(F, labels, 1.5)[0], F),
                               rtol=1e-5, atol=1e-8)
    R, T = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 4, 3))
    _, dR = batch_chamfer(R, T)
    np.testing.assert_allclose(dR, central_difference(lambda: batch_chamfer(R, T)[0], R), rtol=1e-5, atol=1e-8)


def test_loss_config_defaults():
    assert LossConfig("cl+tcl+rec").lambda_ch == 8.0
    assert LossConfig("CL+TL+Rec").lambda_ch == 12.0
    assert LossConfig("CL+TL+Rec").variant == "cl+tl+rec"
    with pytest.raises(ValueError):
        LossConfig("tl")
    with pytest.raises(ValueError):
        LossConfig("cl", m_tl=0)


# balanced batches


def test_balanced_batch_eight_classes():
    labels = np.repeat(np.arange(10), 4)
    for s in range(20):
        b = balanced_batch(labels, 8, 1, rng_stream(s))
        assert len(b.pairs) == 8
        assert len(set(b.labels.tolist())) == 8
        np.testing.assert_array_equal(labels[b.pairs], b.labels)


def test_balanced_batch_all_classes_and_pairs():
    labels = np.repeat(np.arange(5), 3)
    b = balanced_batch(labels, 5, 2, rng_stream(0))
    assert sorted(b.labels.tolist()) == sorted([0, 1, 2, 3, 4] * 2)
    assert len(set(b.pairs.tolist())) == 10


def test_balanced_batch_errors():
    with pytest.raises(InsufficientDataError):
        balanced_batch(np.repeat(np.arange(7), 2), 8, 1, rng_stream(0))
    with pytest.raises(InsufficientDataError):
        balanced_batch(np.array([0, 1, 1]), 2, 2, rng_stream(0))


# retrieval metrics


def _random_run(rng, nq=None, ng=None, levels=None):
    nq = nq or int(rng.integers(1, 6))
    ng = ng or int(rng.integers(nq, 12))
    K = int(rng.integers(1, 4))
    qlab = rng.integers(0, K, size=nq)
    glab = rng.integers(0, K, size=ng)
    targets = rng.integers(0, ng, size=nq)
    levels = levels or int(rng.integers(2, 6))
    D = rng.integers(0, levels, size=(nq, ng)).astype(float)  # plenty of ties
    return RetrievalRun(D, qlab, glab, targets)


def test_perfect_ranking():
    D = np.array([[0.0, 0.1, 5, 6], [7.0, 8, 0, 0.1]])
    run = RetrievalRun(D, np.array([0, 1]), np.array([0, 0, 1, 1]), np.array([0, 2]))
    m = evaluate(run)
    assert m["mAP"] == m["NDCG"] == m["NN"] == m["top1"] == 1.0


def test_gt_third():
    D = np.array([[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]])
    run = RetrievalRun(D, np.array([0]), np.zeros(6, int), np.array([2]))
    m = evaluate(run)
    assert m["top1"] == 0.0 and m["top5"] == 1.0


def test_metrics_match_naive_reference():
    rng = np.random.default_rng(8)
    for _ in range(300):
        run = _random_run(rng)
        got = evaluate(run)
        want = naive_metrics(run.distances.tolist(), run.query_labels.tolist(),
                             run.gallery_labels.tolist(), run.query_targets.tolist())
        for k in want:
            assert abs(got[k] - want[k]) <= 1e-12, k


def test_metrics_invariances():
    rng = np.random.default_rng(9)
    for _ in range(50):
        run = _random_run(rng, levels=10**6)  # ties are measure-zero here
        base = evaluate(run)
        mono = evaluate(RetrievalRun(2 * np.sqrt(run.distances) + 1, run.query_labels,
                                     run.gallery_labels, run.query_targets))
        perm = rng.permutation(len(run.gallery_labels))
        inv = np.argsort(perm)
        shuffled = evaluate(RetrievalRun(run.distances[:, perm], run.query_labels,
                                         run.gallery_labels[perm], inv[run.query_targets]))
        for k in base:
            assert mono[k] == pytest.approx(base[k], abs=1e-12)
            assert shuffled[k] == pytest.approx(base[k], abs=1e-12)


def test_run_validation():
    with pytest.raises(ValueError):
        RetrievalRun(np.zeros((2, 3)), np.zeros(2), np.zeros(2), np.zeros(2, int))
    with pytest.raises(ValueError):
        RetrievalRun(np.full((1, 2), np.nan), np.zeros(1), np.zeros(2), np.zeros(1, int))
    with pytest.raises(ValueError):
        RetrievalRun(np.zeros((1, 2)), np.zeros(1), np.zeros(2), np.array([2]))
