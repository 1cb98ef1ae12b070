"""Acceptance criteria. Each test prints one PASS/FAIL verdict line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also collected into an "acceptance criteria" section of the terminal summary.
"""

import json
import math
import re

import numpy as np
import pytest

from conftest import record_verdict
from noisykd import mathkernels as mk
from noisykd.data import LabeledDataset, inject_noise
from noisykd.metrics import matthews_corr, precision_recall
from noisykd.model import forward, gradients, init_model
from noisykd.refinement import LossFeatures, flag_noisy, train_discriminator
from noisykd.runner import emit_report, run_grid

SEED_COUNT = 5
REFINED_RATE = 0.5


def verdict(name, ok, detail):
    record_verdict(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


def rows_by_key(report):
    return {(r["method"], r["rate"]): r for r in report["table"]}


def chosen_records(report, method, rate):
    """Per-seed epoch records of the alpha chosen on noisy validation."""
    cells = {c["cell_id"]: c for c in report["cells"]}
    row = rows_by_key(report)[(method, rate)]
    return [cells[p["cell_id"]]["result"]["records"] for p in row["per_seed"]]


# 1 ---------------------------------------------------------------------------

def test_criterion_1_numerical_oracles():
    skl = mk.symmetric_kl([0.9, 0.1], [0.1, 0.9])
    pred = np.array([1] * 3 + [0] * 4 + [1] * 1 + [0] * 2)
    gold = np.array([1] * 3 + [0] * 4 + [0] * 1 + [1] * 2)
    mcc = matthews_corr(pred, gold)
    ce_errs = [abs(mk.cross_entropy(c - 1, np.full(c, 1 / c)) - math.log(c)) for c in range(2, 11)]
    errs = (abs(skl - 1.6 * math.log(9)), abs(mcc - 10 / math.sqrt(600)), max(ce_errs))
    ok = errs[0] <= 1e-6 and errs[1] <= 1e-9 and errs[2] <= 1e-9
    verdict("criterion 1 (numerical oracles)", ok,
            f"symKL err {errs[0]:.1e}, MCC err {errs[1]:.1e}, CE(uniform) err {errs[2]:.1e}")


# 2 ---------------------------------------------------------------------------

def _rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-7, np.abs(a) + np.abs(b))))


def _fd(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.size):
        up, down = z.copy(), z.copy()
        up.flat[i] += h
        down.flat[i] -= h
        g.flat[i] = (f(up) - f(down)) / (2 * h)
    return g


def test_criterion_2_gradient_checks():
    rng = np.random.default_rng(2024)
    worst = {"ce": 0.0, "symkl": 0.0, "model": 0.0}
    cases = 0
    for _ in range(40):
        c = int(rng.integers(2, 6))
        z = rng.normal(size=c) * 2
        y = int(rng.integers(0, c))
        worst["ce"] = max(worst["ce"], _rel_err(
            mk.cross_entropy_grad(y, z), _fd(lambda v: mk.cross_entropy(y, mk.softmax(v)), z)))
        fixed = rng.normal(size=c) * 2
        worst["symkl"] = max(worst["symkl"], _rel_err(
            mk.symmetric_kl_grad(fixed, z),
            _fd(lambda v: mk.symmetric_kl(mk.softmax(fixed), mk.softmax(v)), z)))
        cases += 2
    for k in range(20):
        d, h, c = (int(v) for v in rng.integers(2, 6, 3))
        m = init_model([d, h, c], seed=k, activation="tanh" if k % 2 else "relu")
        for b in m.biases:
            b[...] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(4, d))
        y = rng.integers(0, c, 4)
        analytic = gradients(m, x, mk.cross_entropy_grad(y, forward(m, x)))
        for p, g in zip(m.parameters(), analytic):
            def loss(v, p=p):
                saved = p.copy()
                p[...] = v
                out = mk.cross_entropy(y, mk.softmax(forward(m, x)))
                p[...] = saved
                return out
            worst["model"] = max(worst["model"], _rel_err(g, _fd(loss, p.copy())))
        cases += 1
    ok = cases >= 100 and max(worst.values()) <= 1e-3
    verdict("criterion 2 (gradient checks)", ok,
            f"{cases} cases, worst relative error " +
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# 3 ---------------------------------------------------------------------------

def test_criterion_3_noise_injection():
    n = 1000
    details, ok = [], True
    for c in (2, 3, 5):
        true = np.arange(n) % c
        ds = LabeledDataset.clean(np.random.default_rng(c).normal(size=(n, 2)), true, c)
        for rate in (0.25, 0.5):
            out = inject_noise(ds, rate, seed=17)
            changed = out.observed_labels != true
            good = (int(changed.sum()) == math.floor(rate * n)
                    and np.array_equal(changed, out.noise_flags)
                    and np.all(out.observed_labels[out.noise_flags] != true[out.noise_flags])
                    and np.array_equal(out.true_labels, true))
            ok &= bool(good)
            details.append(f"C={c} r={rate}: {int(changed.sum())} flips")
    verdict("criterion 3 (noise injection contract)", ok, "; ".join(details))


# 4 ---------------------------------------------------------------------------

def test_criterion_4_discriminator_sanity():
    rng = np.random.default_rng(4)
    n = 600
    noisy = rng.random(n) < 0.4
    # noisy samples sit at least one nat above every clean one on both loss features
    student = np.where(noisy, rng.uniform(2.0, 4.0, n), rng.uniform(0.0, 1.0, n))
    teacher = np.where(noisy, rng.uniform(2.0, 4.0, n), rng.uniform(0.0, 1.0, n))
    train_idx, test_idx = np.arange(400), np.arange(400, n)
    feats = LossFeatures(teacher, student)
    sub = lambda idx: LossFeatures(teacher[idx], student[idx])  # noqa: E731
    d = train_discriminator(sub(train_idx), noisy[train_idx], seed=0)
    prec, rec = precision_recall(flag_noisy(d, sub(test_idx), 0.5), noisy[test_idx])

    random_flags = rng.random(n) < 0.5
    d2 = train_discriminator(feats, random_flags, seed=1)
    scores = d2.score(feats)
    in_range = bool(np.all((scores >= 0) & (scores <= 1)))
    ok = prec == 1.0 and rec == 1.0 and in_range
    verdict("criterion 4 (discriminator sanity)", ok,
            f"separable: precision {prec}, recall {rec}; random flags: scores in "
            f"[{scores.min():.2f}, {scores.max():.2f}]")


# 5 ---------------------------------------------------------------------------

def _student_means(report, method):
    rows = rows_by_key(report)
    return [rows[(method, r)]["student_mean"] for r in (0.0, 0.25, 0.5)]


def test_criterion_5_grid_shape(acceptance_grid, acceptance_run):
    report, _ = acceptance_run
    g = acceptance_grid
    ok = (g.kind == "blobs" and g.num_classes == 2 and g.n == 2000 and len(g.seeds) >= SEED_COUNT
          and not [c for c in report["cells"] if c["status"] != "ok"]
          and all(r["n_seeds"] >= SEED_COUNT for r in report["table"]))
    verdict("criterion 5 setup (grid)", ok,
            f"{len(report['cells'])} cells, n={g.n}, C={g.num_classes}, seeds={len(g.seeds)}")


def test_criterion_5a_monotone_in_noise(acceptance_run):
    report, _ = acceptance_run
    bad, parts = [], []
    for method in dict.fromkeys(r["method"] for r in report["table"]):
        s0, s25, s50 = _student_means(report, method)
        parts.append(f"{method} {s0:.3f}/{s25:.3f}/{s50:.3f}")
        if not (s0 >= s25 >= s50):
            bad.append(method)
    verdict("criterion 5a (accuracy non-increasing 0 -> 0.25 -> 0.5)", not bad,
            "; ".join(parts) + (f"; violated by {bad}" if bad else ""))


@pytest.mark.parametrize("label,better,worse", [
    ("5b", "VANILLA", "NO_KD"),
    ("5c", "CD", "VANILLA"),
    ("5d", "CD_LR", "CD"),
])
def test_criterion_5_ordering_at_half_noise(acceptance_run, label, better, worse):
    report, _ = acceptance_run
    rows = rows_by_key(report)
    hi = rows[(better, REFINED_RATE)]["student_mean"]
    lo = rows[(worse, REFINED_RATE)]["student_mean"]
    verdict(f"criterion {label} ({better} >= {worse} at rate {REFINED_RATE})", hi >= lo,
            f"seed-mean clean accuracy {hi:.4f} vs {lo:.4f} (margin {hi - lo:+.4f})")


# 6 ---------------------------------------------------------------------------

def test_criterion_6_refinement_recovery(acceptance_run):
    report, _ = acceptance_run
    row = rows_by_key(report)[("CD_LR", REFINED_RATE)]
    before, after = row["agreement_before"], row["agreement_after"]
    ok = before is not None and after is not None and after > before and after > 0.6
    before, after = before or float("nan"), after or float("nan")
    verdict("criterion 6 (label agreement after refinement > 0.6)", ok,
            f"mean agreement {before:.4f} -> {after:.4f}")


# 7 ---------------------------------------------------------------------------

def _val_loss_at(records, epoch, key="val_loss"):
    return next(r[key] for r in records if r["epoch"] == epoch)


def test_criterion_7_val_loss_drop_after_refinement(acceptance_grid, acceptance_run):
    report, out = acceptance_run
    k = acceptance_grid.refine_epoch
    # read the emitted curves, since that is what the criterion is about
    runs = []
    for p in rows_by_key(report)[("CD_LR", REFINED_RATE)]["per_seed"]:
        with open(out / "curves" / f"{p['cell_id']}.csv") as fh:
            header = fh.readline().strip().split(",")
            rows = [dict(zip(header, line.strip().split(","))) for line in fh]
        by_epoch = {int(r["epoch"]): float(r["val_loss"]) for r in rows}
        runs.append((by_epoch[k], by_epoch[k + 1]))
    pre = float(np.mean([a for a, _ in runs]))
    post = float(np.mean([b for _, b in runs]))

    # informational variants, never asserted
    for rate, key in ((0.25, "val_loss"), (REFINED_RATE, "clean_val_loss")):
        recs = chosen_records(report, "CD_LR", rate)
        a = np.mean([_val_loss_at(r, k, key) for r in recs])
        b = np.mean([_val_loss_at(r, k + 1, key) for r in recs])
        record_verdict(f"INFO criterion 7 variant ({key}, rate {rate}): {a:.4f} -> {b:.4f}")

    verdict(f"criterion 7 (CD_LR val loss drops after refinement, rate {REFINED_RATE})", post < pre,
            f"mean noisy-val loss epoch {k}: {pre:.4f}, epoch {k + 1}: {post:.4f}")


# 8 ---------------------------------------------------------------------------

def _without_timestamp(blob):
    return re.sub(rb'\n\s*"created_at": [^\n]*\n', b"\n", blob)


def test_criterion_8_determinism(acceptance_grid, acceptance_run, tmp_path):
    _, first_dir = acceptance_run
    emit_report(run_grid(acceptance_grid), tmp_path, figures=False)
    a = (first_dir / "report.json").read_bytes()
    b = (tmp_path / "report.json").read_bytes()
    assert json.loads(a)["created_at"]
    same = _without_timestamp(a) == _without_timestamp(b)
    verdict("criterion 8 (byte-identical report.json across runs)", same,
            f"{len(a)} bytes vs {len(b)} bytes, identical excluding timestamp: {same}")
