import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from event_complex import autodiff as ad
from event_complex.losses import (
    PROB_FLOOR,
    DomainError,
    LabelWeights,
    MissingScore,
    PairScores,
    ScoredBatch,
    annotation_loss,
    conjunction_loss,
    conjunction_terms,
    enumerate_triples,
    joint_loss,
    normalize_heads,
    symmetry_loss,
)
from event_complex.relations import AF, ALL_LABELS, BF, CP, CR, EQ, INVERSE_INDEX, NR, PC, VG


def head(*p):
    return np.array(p, dtype=float)


def rows(*vectors):
    return ad.Tensor(np.stack(vectors))


def random_probs(rng, n):
    z = rng.normal(size=(n, 8))
    return normalize_heads(ad.Tensor(z)).data


# ----------------------------------------------------------------------------
# PairScores
# ----------------------------------------------------------------------------

def test_pair_scores_validation():
    PairScores(head(0.7, 0.1, 0.1, 0.1), head(0.25, 0.25, 0.25, 0.25))
    with pytest.raises(ValueError):
        PairScores(head(0.7, 0.1, 0.1, 0.2), head(0.25, 0.25, 0.25, 0.25))
    with pytest.raises(ValueError):
        PairScores(head(1.0, 0.0, 0.0, 0.0), head(0.25, 0.25, 0.25, 0.25))
    with pytest.raises(ValueError):
        PairScores(head(0.5, 0.5), head(0.25, 0.25, 0.25, 0.25))


def test_pair_scores_indexing():
    s = PairScores(head(0.7, 0.1, 0.1, 0.1), head(0.1, 0.2, 0.3, 0.4))
    assert s[BF] == 0.7 and s[NR] == 0.4
    assert np.array_equal(PairScores.from_vector(s.vector()).vector(), s.vector())


def test_normalize_heads_floor_and_sums():
    z = ad.Tensor(np.array([[100.0, -100, 0, 0, 1, 2, 3, 4]]))
    p = normalize_heads(z).data
    assert np.all(p >= PROB_FLOOR * 0.999)
    assert abs(p[0, :4].sum() - 1) < 1e-12 and abs(p[0, 4:].sum() - 1) < 1e-12


# ----------------------------------------------------------------------------
# annotation loss
# ----------------------------------------------------------------------------

def test_annotation_loss_examples():
    p = rows(np.r_[head(0.5, 0.2, 0.2, 0.1), head(0.25, 0.25, 0.25, 0.25)])
    assert annotation_loss(p, [(0, BF)]).item() == pytest.approx(math.log(2), abs=1e-12)
    w = LabelWeights({r: (2.0 if r is PC else 1.0) for r in ALL_LABELS})
    assert annotation_loss(p, [(0, PC)], w).item() == pytest.approx(2 * math.log(4), abs=1e-12)
    certain = rows(np.r_[head(1.0, 0, 0, 0), head(0.25, 0.25, 0.25, 0.25)])
    assert annotation_loss(certain, [(0, BF)]).item() == 0.0


def test_annotation_loss_missing_row():
    p = rows(np.r_[head(0.25, 0.25, 0.25, 0.25), head(0.25, 0.25, 0.25, 0.25)])
    with pytest.raises(MissingScore):
        annotation_loss(p, [(3, BF)])
    with pytest.raises(MissingScore):
        annotation_loss(p, [(None, BF)])


@pytest.mark.parametrize("c", [2.0, 0.5, 0.125])
def test_weight_scaling_scales_annotation_loss_exactly(c):
    rng = np.random.default_rng(0)
    probs = ad.Tensor(random_probs(rng, 6))
    gold = [(k, ALL_LABELS[int(rng.integers(8))]) for k in range(6)]
    w = LabelWeights({r: float(rng.uniform(0.5, 2)) for r in ALL_LABELS})
    base = ScoredBatch(probs, gold, np.array([0, 1]), np.array([2, 3]), np.array([[0, 1, 2], [3, 4, 5]]))
    a = joint_loss(base, w, 0.2, 0.2, hinge=True)
    b = joint_loss(base, w.scaled(c), 0.2, 0.2, hinge=True)
    assert b.l_a == c * a.l_a
    assert (b.l_s, b.l_c) == (a.l_s, a.l_c)


def test_label_weights_from_counts():
    counts = {BF: 10, AF: 10, EQ: 5, VG: 0, PC: 1, CP: 1, CR: 2, NR: 100}
    w = LabelWeights.from_counts(counts)
    temporal = [w.w[r] for r in (BF, AF, EQ)]
    assert np.mean(temporal) == pytest.approx(1.0)
    assert w.w[EQ] == pytest.approx(2 * w.w[BF])
    assert w.w[VG] == max(temporal)
    assert w.w[NR] < w.w[CR] < w.w[PC]
    with pytest.raises(ValueError):
        LabelWeights({r: 0.0 for r in ALL_LABELS})


# ----------------------------------------------------------------------------
# symmetry loss
# ----------------------------------------------------------------------------

def mirrored(v):
    return v[INVERSE_INDEX]


def test_symmetry_zero_on_matched_pairs():
    fwd = np.r_[head(0.7, 0.1, 0.15, 0.05), head(0.6, 0.2, 0.1, 0.1)]
    assert symmetry_loss(rows(fwd), rows(mirrored(fwd))).item() == 0.0


def test_symmetry_single_label_difference():
    fwd = np.r_[head(0.8, 0.1, 0.05, 0.05), head(0.25, 0.25, 0.25, 0.25)]
    rev = mirrored(fwd).copy()
    rev[AF.index], rev[BF.index] = 0.4, 0.5
    # BF term |ln .8 - ln .4| and AF term |ln .1 - ln .5|
    expected = math.log(2) + abs(math.log(0.1) - math.log(0.5))
    assert symmetry_loss(rows(fwd), rows(rev)).item() == pytest.approx(expected, abs=1e-12)


def test_symmetry_is_argument_symmetric():
    rng = np.random.default_rng(3)
    a, b = random_probs(rng, 5), random_probs(rng, 5)
    assert symmetry_loss(ad.Tensor(a), ad.Tensor(b)).item() == pytest.approx(
        symmetry_loss(ad.Tensor(b), ad.Tensor(a)).item(), rel=1e-12)


# ----------------------------------------------------------------------------
# conjunction loss
# ----------------------------------------------------------------------------

def _with(value, label):
    """Probability row: ``label`` gets ``value``, its head shares the remainder."""
    v = np.full(8, 0.25)
    lo = 0 if label.index < 4 else 4
    v[lo:lo + 4] = (1 - value) / 3
    v[label.index] = value
    return v


def term(p12, p23, p13, a, b, label, forbidden=False):
    t = conjunction_terms(rows(p12), rows(p23), rows(p13))
    return abs(t.column(a, b, label, forbidden).item())


@pytest.mark.parametrize("pa, pb, pg, expected", [
    (1.0 - 3e-12, 1.0 - 3e-12, 1.0 - 3e-12, 0.0),
    (0.5, 0.5, 0.25, 0.0),
    (0.9, 0.9, 0.5, abs(math.log(0.81) - math.log(0.5))),
])
def test_required_term_values(pa, pb, pg, expected):
    got = term(_with(pa, BF), _with(pb, BF), _with(pg, BF), BF, BF, BF)
    assert got == pytest.approx(expected, abs=1e-9)


def test_forbidden_term_value():
    # (BF, PC) forbids CP on (e1, e3)
    got = term(_with(0.9, BF), _with(0.9, PC), _with(0.5, CP), BF, PC, CP, forbidden=True)
    assert got == pytest.approx(abs(math.log(0.81) - math.log(0.5)), abs=1e-12)


def test_required_term_zero_iff_product():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a, b = rng.uniform(0.05, 0.95, size=2)
        assert term(_with(a, PC), _with(b, PC), _with(a * b, PC), PC, PC, PC) < 1e-9
        assert term(_with(a, PC), _with(b, PC), _with(a * b * 0.9, PC), PC, PC, PC) > 1e-3


def test_terms_reject_cells_outside_the_table():
    p = _with(0.5, BF)
    with pytest.raises(KeyError):
        conjunction_terms(rows(p), rows(p), rows(p)).column(BF, BF, AF)


def test_conjunction_loss_matches_brute_force():
    rng = np.random.default_rng(11)
    p12, p23, p13 = (random_probs(rng, 3) for _ in range(3))
    expected = 0.0
    from event_complex.relations import induce
    for k in range(3):
        for a in ALL_LABELS:
            for b in ALL_LABELS:
                e = induce(a, b)
                base = math.log(p12[k, a.index]) + math.log(p23[k, b.index])
                for g in e.required:
                    expected += abs(base - math.log(p13[k, g.index]))
                for d in e.forbidden:
                    expected += abs(base - math.log(1 - p13[k, d.index]))
    got = conjunction_loss(ad.Tensor(p12), ad.Tensor(p23), ad.Tensor(p13)).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_conjunction_scopes_partition_the_groundings():
    rng = np.random.default_rng(5)
    p = [ad.Tensor(random_probs(rng, 4)) for _ in range(3)]
    for hinge in (False, True):
        total = conjunction_loss(*p, hinge=hinge).item()
        within = conjunction_loss(*p, hinge=hinge, scope="within").item()
        cross = conjunction_loss(*p, hinge=hinge, scope="cross").item()
        assert total == pytest.approx(within + cross, rel=1e-12)
    with pytest.raises(ValueError):
        conjunction_loss(*p, scope="other")


def test_conjunction_domain_error():
    ok = ad.Tensor(np.r_[head(0.25, 0.25, 0.25, 0.25), head(0.25, 0.25, 0.25, 0.25)][None])
    bad = ad.Tensor(np.r_[head(1.0, 0, 0, 0), head(0.25, 0.25, 0.25, 0.25)][None])
    with pytest.raises(DomainError):
        conjunction_loss(ok, ok, bad)


def test_hinge_is_one_sided():
    rng = np.random.default_rng(2)
    p = [ad.Tensor(random_probs(rng, 3)) for _ in range(3)]
    assert 0 <= conjunction_loss(*p, hinge=True).item() <= conjunction_loss(*p).item()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = [ad.Tensor(random_probs(rng, 3)) for _ in range(3)]
    assert conjunction_loss(*p).item() >= 0
    assert conjunction_loss(*p, hinge=True).item() >= 0
    assert symmetry_loss(p[0], p[1]).item() >= 0
    assert annotation_loss(p[0], [(0, BF), (1, CR)]).item() >= 0


def test_enumerate_triples():
    t = enumerate_triples(4)
    assert len(t) == 24 and len({tuple(x) for x in t}) == 24
    capped = enumerate_triples(6, max_triples=10, rng=np.random.default_rng(0))
    again = enumerate_triples(6, max_triples=10, rng=np.random.default_rng(0))
    assert len(capped) == 10 and np.array_equal(capped, again)
    assert enumerate_triples(2).shape == (0, 3)


# ----------------------------------------------------------------------------
# joint objective
# ----------------------------------------------------------------------------

def consistent_batch():
    """Three events, labels BF/PC chain, scores one-hot (floored) on the gold."""
    gold = {(0, 1): (BF, PC), (1, 2): (BF, PC), (0, 2): (BF, PC)}
    pairs = [(i, j) for i in range(3) for j in range(3) if i != j]
    row = {p: k for k, p in enumerate(pairs)}
    vecs = []
    for i, j in pairs:
        t, s = gold[(i, j)] if (i, j) in gold else tuple(l.__class__(l) for l in gold[(j, i)])
        if (i, j) not in gold:
            from event_complex.relations import inverse
            t, s = inverse(t), inverse(s)
        z = np.full(8, -60.0)
        z[t.index] = z[s.index] = 0.0
        vecs.append(z)
    probs = normalize_heads(ad.Tensor(np.stack(vecs)))
    labels = [(row[p], lab) for p, (t, s) in gold.items() for lab in (t, s)]
    fwd = np.array([row[i, j] for i, j in gold])
    rev = np.array([row[j, i] for i, j in gold])
    triples = np.array([(row[a, b], row[b, c], row[a, c]) for a, b, c in
                        [(a, b, c) for a in range(3) for b in range(3) for c in range(3) if len({a, b, c}) == 3]])
    return ScoredBatch(probs, labels, fwd, rev, triples)


def test_joint_loss_zero_on_consistent_correct_scores_with_hinge():
    out = joint_loss(consistent_batch(), lambda_s=0.2, lambda_c=0.2, hinge=True)
    assert out.l_a < 1e-9 and out.l_s < 1e-9 and out.l_c < 1e-9
    assert out.total < 1e-9


def test_absolute_conjunction_penalizes_improbable_antecedents():
    # with |.|, cells whose antecedents are near zero still contribute, so the
    # consistent-and-correct batch is not a zero of the loss
    out = joint_loss(consistent_batch(), lambda_s=0.2, lambda_c=0.2, hinge=False)
    assert out.l_c > 1.0


def test_joint_loss_recomposition_and_degenerate_case():
    rng = np.random.default_rng(9)
    probs = ad.Tensor(random_probs(rng, 6))
    batch = ScoredBatch(probs, [(0, BF), (1, PC), (2, VG)], np.array([0, 1, 2]), np.array([3, 4, 5]),
                        np.array([[0, 1, 2], [1, 2, 3]]))
    out = joint_loss(batch, lambda_s=0.2, lambda_c=0.2)
    assert out.total - (out.l_a + 0.2 * out.l_s + 0.2 * out.l_c) == 0.0
    assert out.as_dict()["lambda_s"] == 0.2
    zero = joint_loss(batch, lambda_s=0.0, lambda_c=0.0)
    assert zero.total == zero.l_a == annotation_loss(probs, batch.gold).item()
    with pytest.raises(ValueError):
        joint_loss(batch, lambda_s=-1.0)


def test_joint_loss_invariant_to_batch_order():
    rng = np.random.default_rng(4)
    p = random_probs(rng, 6)
    gold = [(0, BF), (1, PC), (2, VG), (5, CR)]
    batch = ScoredBatch(ad.Tensor(p), gold, np.array([0, 1]), np.array([2, 3]), np.array([[0, 1, 2], [3, 4, 5]]))
    perm = np.array([3, 5, 0, 4, 1, 2])
    where = np.argsort(perm)
    shuffled = ScoredBatch(ad.Tensor(p[perm]), [(int(where[r]), l) for r, l in reversed(gold)],
                           where[[1, 0]], where[[3, 2]], where[np.array([[3, 4, 5], [0, 1, 2]])])
    a = joint_loss(batch)
    b = joint_loss(shuffled)
    assert a.total == pytest.approx(b.total, rel=1e-12)
