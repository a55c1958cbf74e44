"""Reconstruction and generation metrics against brute-force oracles."""

import numpy as np
import pytest

from cadseq import geom
from cadseq import metrics as mx
from cadseq import seqmodel as sm


@pytest.fixture(scope="module")
def small_seqs():
    return [sm.synthesize_sequence(i, 60 + 10 * i) for i in range(4)]


def _clouds(rng, n_sets, n_pts=40, shift=0.0):
    return [geom.PointCloud(rng.uniform(-0.9, 0.9, (n_pts, 3)) * 0.4 + shift)
            for _ in range(n_sets)]


def test_reconstruction_identity(small_seqs):
    rep = mx.reconstruction_metrics(small_seqs, small_seqs,
                                    n_points=200, resolution=32)
    assert rep.acc_c == 1.0
    assert rep.acc_p == 1.0
    assert rep.mcd_x1000 == 0.0
    assert rep.ir == 0.0
    assert rep.sr_proxy == 1.0


def test_accuracy_counting():
    gt = sm.synthesize_sequence(0, 100)
    # One wrong type at a non-EOS position.
    cmds = list(gt.commands)
    pos = 1
    assert cmds[pos].ctype is not sm.CommandType.EOS
    cmds[pos] = sm.CadCommand(sm.CommandType.SOL, (-1,) * 16)
    pred = sm.CadSequence(cmds)
    acc_c, _ = mx.sequence_accuracy([pred], [gt])
    assert acc_c == pytest.approx(1.0 - 1.0 / gt.true_length)

    # A parameter off by one level counts as incorrect.
    cmds = list(gt.commands)
    for i, c in enumerate(cmds):
        if c.ctype is sm.CommandType.LINE:
            levels = list(c.params)
            levels[sm.X] = levels[sm.X] + 1 if levels[sm.X] < 255 else levels[sm.X] - 1
            cmds[i] = sm.CadCommand(c.ctype, tuple(levels))
            break
    pred = sm.CadSequence(cmds)
    acc_c, acc_p = mx.sequence_accuracy([pred], [gt])
    assert acc_c == 1.0
    total_used = int((gt.param_levels()[:gt.true_length] >= 0).sum())
    assert acc_p == pytest.approx(1.0 - 1.0 / total_used)


def test_accuracy_order_invariance(small_seqs):
    a = mx.sequence_accuracy(small_seqs, small_seqs)
    b = mx.sequence_accuracy(small_seqs[::-1], small_seqs[::-1])
    assert a == b


def test_length_mismatch(small_seqs):
    with pytest.raises(mx.LengthMismatchError):
        mx.reconstruction_metrics(small_seqs[:2], small_seqs)


def test_ir_counts_invalid(small_seqs):
    # An unterminated container cannot convert; IR counts it, SR drops it.
    bad = sm.CadSequence([sm.CadCommand(sm.CommandType.LINE, tuple([0, 0] + [-1] * 14))] * 256)
    pred = [small_seqs[0], bad, small_seqs[2], small_seqs[3]]
    rep = mx.reconstruction_metrics(pred, small_seqs, n_points=100, resolution=32)
    assert rep.ir == pytest.approx(0.25)
    assert rep.sr_proxy == pytest.approx(0.75)


def test_cov_mmd_self_and_oracle():
    rng = np.random.default_rng(3)
    ref = _clouds(rng, 3)
    cov, mmd = mx.coverage_mmd(ref, ref)
    assert cov == 1.0
    assert mmd == 0.0

    gen = _clouds(rng, 4)
    cov, mmd = mx.coverage_mmd(gen, ref)
    # Exhaustive O(n*m) oracle over the full Chamfer matrix.
    d = np.array([[geom.chamfer_distance(g, r) for r in ref] for g in gen])
    cov_oracle = len({int(j) for j in d.argmin(axis=1)}) / len(ref)
    mmd_oracle = float(d.min(axis=0).mean())
    assert cov == pytest.approx(cov_oracle)
    assert mmd == pytest.approx(mmd_oracle)


def test_mmd_monotone_in_generated_set():
    rng = np.random.default_rng(4)
    ref = _clouds(rng, 3)
    gen = _clouds(rng, 3)
    extra = _clouds(rng, 1)
    _, mmd_small = mx.coverage_mmd(gen, ref)
    _, mmd_big = mx.coverage_mmd(gen + extra, ref)
    assert mmd_big <= mmd_small + 1e-15


def test_jsd_contract():
    rng = np.random.default_rng(5)
    a = _clouds(rng, 3)
    assert mx.jsd_occupancy(a, a) == 0.0
    b = _clouds(rng, 3, shift=0.0)
    assert mx.jsd_occupancy(a, b) == pytest.approx(mx.jsd_occupancy(b, a), abs=1e-12)
    # Disjoint supports: maximum divergence of 1 bit.
    left = [geom.PointCloud(rng.uniform(-0.9, -0.5, (30, 3)))]
    right = [geom.PointCloud(rng.uniform(0.5, 0.9, (30, 3)))]
    assert mx.jsd_occupancy(left, right) == pytest.approx(1.0, abs=1e-12)
    # Oracle: direct formula over the histogram vectors.
    p = mx._occupancy_distribution(a, 28)
    q = mx._occupancy_distribution(b, 28)
    m = (p + q) / 2
    nz_p, nz_q = p > 0, q > 0
    oracle = 0.5 * (p[nz_p] * np.log2(p[nz_p] / m[nz_p])).sum() \
        + 0.5 * (q[nz_q] * np.log2(q[nz_q] / m[nz_q])).sum()
    assert mx.jsd_occupancy(a, b) == pytest.approx(oracle, abs=1e-12)


def test_generation_metrics_bundle():
    rng = np.random.default_rng(6)
    ref = _clouds(rng, 3)
    cov, mmd, jsd = mx.generation_metrics(ref, ref)
    assert (cov, mmd, jsd) == (1.0, 0.0, 0.0)
    with pytest.raises(mx.EmptySetError):
        mx.generation_metrics([], ref)


def test_unique_novel(small_seqs):
    gen = list(small_seqs)
    train = [sm.synthesize_sequence(100 + i, 70) for i in range(3)]
    u, n = mx.unique_novel(gen, train)
    assert (u, n) == (1.0, 1.0)

    dup = gen + [gen[0]]
    u, n = mx.unique_novel(dup, train)
    assert u == pytest.approx(len(set(range(len(gen)))) / len(dup))

    leak = gen + train[:2]
    u, n = mx.unique_novel(leak, train)
    assert n == pytest.approx(len(gen) / len(leak))
    # The id field must not affect duplicate detection.
    clone = sm.CadSequence(list(gen[0].commands), seq_id="renamed")
    u, _ = mx.unique_novel([gen[0], clone], train)
    assert u == 0.5


def test_report_json_and_table():
    rep = mx.GenReport(0.5, 0.1, 0.2, 1.0, 1.0, 0.9, 10)
    text = rep.to_json()
    assert '"cov": 0.5' in text
    table = mx.format_table(rep)
    assert "cov" in table and "0.5" in table
