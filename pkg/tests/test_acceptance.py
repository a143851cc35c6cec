"""End-to-end acceptance checks.

Each numbered test verifies one shipping criterion at its stated tolerance
and prints a single PASS line (visible with -s; pytest -v shows one
PASSED/FAILED line per criterion either way). The behavioral criteria share
one 9-variant x 10-seed grid over the default synthetic benchmark, executed
through the same entry point the CLI uses.
"""
import time
from pathlib import Path

import numpy as np
import pytest

import helpers
from glodist.cli import run_experiment
from glodist.config import parse_config
from glodist.data import LabeledSet
from glodist.ensemble import q_predict, q_predict_batch
from glodist.metrics import AccuracyMatrix, acc, fgt
from glodist.nnet import Model, softmax_temperature
from glodist.sampler import sample_external, flatten_array
from glodist.taskgen import StreamSpec, make_stream
from glodist.trainer import (
    MethodVariant,
    R_STREAM,
    R_TEACHER_BATCH,
    R_TEACHER_INIT,
    Trial,
    _rng,
    balanced_finetune,
    train_current_teacher,
    train_main,
)

GRID_CONFIG = """
seeds: [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
variants:
  - {name: oracle}
  - {name: baseline, balancing: none}
  - {name: gd, sampling: none, label: gd}
  - {name: gd, sampling: combined, label: gd+ext}
  - {name: gd, references: [P], sampling: combined, label: refs-P+ext}
  - {name: gd, references: [P, C], sampling: combined, label: refs-PC+ext}
  - {name: gd, sampling: combined, balancing: none, label: gd+ext-noft}
  - {name: gd, sampling: random_only, label: gd+random}
  - {name: gd, sampling: pred_only, label: gd+pred}
"""


@pytest.fixture(scope="session")
def grid(tmp_path_factory):
    cfg = parse_config(GRID_CONFIG)
    start = time.perf_counter()
    summary = run_experiment(cfg, output_dir=str(tmp_path_factory.mktemp("grid")))
    elapsed = time.perf_counter() - start
    rows = {row["variant"]: row for row in summary["rows"]}
    failed = [r for r in summary["records"] if r["status"] != "ok"]
    assert not failed, f"grid trials failed: {failed}"
    assert all(row["seeds"] == 10 for row in rows.values())
    return rows, elapsed


def band(row):
    return row["acc_mean"], row["acc_std"], row["fgt_mean"], row["fgt_std"]


# --------------------------------------------------------------------------

def test_criterion_01_analytic_gradients_match_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(17)
    checked = 0
    kinds = ["cls", "dst", "cnf"]
    for scenario in range(30):
        m = helpers.random_model(rng)
        n = int(rng.integers(3, 9))
        X = rng.normal(size=(n, m.input_dim))
        lo = int(rng.integers(0, m.num_heads))
        hi = int(rng.integers(lo + 1, m.num_heads + 1))
        width = sum(m.head_sizes[lo:hi])
        kind = kinds[scenario % 3]
        weights = rng.uniform(0.25, 3.0, size=n) if scenario % 2 else None
        kw = {}
        if kind == "cls":
            kw = dict(labels=rng.integers(0, width, size=n), weights=weights)
        elif kind == "dst":
            kw = dict(
                teacher=softmax_temperature(rng.normal(size=(n, width)), 1.0),
                gamma=float(rng.choice([0.5, 1.0, 2.0])),
                weights=weights,
            )
        checked += helpers.check_term_gradients(m, kind, X, (lo, hi), rng, tol=1e-4, **kw)
    elapsed = time.perf_counter() - start
    assert checked >= 200, f"only {checked} coordinates checked"
    assert elapsed < 30, f"gradient suite took {elapsed:.1f}s"
    print(f"ACCEPTANCE 1 PASS: {checked} finite-difference checks, "
          f"all within 1e-4, in {elapsed:.1f}s")


def test_criterion_02_ensemble_outputs_are_distributions():
    start = time.perf_counter()
    out = q_predict(np.array([0.6, 0.4]), np.array([0.7, 0.3]))
    want = np.array([0.6, 0.4 / 3, 0.7 * 4 / 15, 0.3 * 4 / 15])
    assert np.allclose(out.probs, want, atol=1e-5)

    rng = np.random.default_rng(23)
    total = 0
    for k, m in [(2, 2), (5, 3), (1, 4), (10, 10)]:
        n = 2500
        prev = rng.dirichlet(np.ones(k), size=n)
        cur = rng.dirichlet(np.ones(m), size=n)
        q = q_predict_batch(prev, cur)
        assert np.all(q >= 0)
        assert np.max(np.abs(q.sum(axis=1) - 1.0)) <= 1e-9
        total += n
    for i in range(50):
        p1 = rng.dirichlet(np.ones(3))
        p2 = rng.dirichlet(np.ones(2))
        assert np.allclose(q_predict_batch(p1[None], p2[None])[0],
                           q_predict(p1, p2).probs, atol=1e-12)
    elapsed = time.perf_counter() - start
    assert elapsed < 5, f"ensemble suite took {elapsed:.1f}s"
    print(f"ACCEPTANCE 2 PASS: fixture within 1e-5 and {total} random "
          f"combinations sum to 1 within 1e-9, in {elapsed:.1f}s")


def test_criterion_03_streaming_sampler_equals_batch_selection():
    from glodist.data import ListStream

    start = time.perf_counter()
    rng = np.random.default_rng(31)
    for trial in range(500):
        num_prev = int(rng.integers(1, 5))
        n_d = int(rng.integers(1, 30))
        n_max = n_d + int(rng.integers(0, 60))
        ood_ratio = float(rng.choice([0.0, 0.3, 0.7, 1.0, float(rng.uniform())]))
        n_items = int(rng.integers(0, 80))
        table = {
            i: (int(rng.integers(0, num_prev)),
                float(rng.choice([0.2, 0.5, 0.8, rng.uniform()])))
            for i in range(n_items)
        }
        scorer = helpers.TableScorer(table, num_prev)
        stream = ListStream([helpers.item(i) for i in range(n_items)])
        ext = sample_external(scorer, stream, n_d, n_max, ood_ratio,
                              num_prev_classes=num_prev)
        want_ood, want_kept, want_pulls = helpers.brute_force_external(
            table, n_items, n_d, n_max, ood_ratio, num_prev)
        ctx = f"trial {trial}"
        assert [int(x[0]) for x in ext.ood_bucket] == want_ood, ctx
        got = {c: {int(e.x[0]) for e in m} for c, m in ext.prev_bucket.items() if m}
        assert got == want_kept, ctx
        assert ext.retrieved_count == want_pulls, ctx
        assert ext.retrieved_count <= n_max, ctx
    elapsed = time.perf_counter() - start
    assert elapsed < 30, f"sampler suite took {elapsed:.1f}s"
    print(f"ACCEPTANCE 3 PASS: 500 random streams match the sort-based "
          f"selection exactly within the pull budget, in {elapsed:.1f}s")


def test_criterion_04_summary_metrics_match_reference_loops():
    start = time.perf_counter()
    m = AccuracyMatrix([10, 10, 10])
    for (r, s), v in {(1, 1): 0.9, (1, 2): 0.8, (2, 2): 0.85,
                      (1, 3): 0.7, (2, 3): 0.75, (3, 3): 0.9}.items():
        m.set(r, s, v)
    assert acc(m) == pytest.approx(0.8041666666666667, abs=1e-6)
    assert fgt(m) == pytest.approx(0.075, abs=1e-6)

    rng = np.random.default_rng(41)
    for _ in range(1000):
        t = int(rng.integers(2, 7))
        sizes = [int(rng.integers(1, 15)) for _ in range(t)]
        entries = helpers.random_matrix_entries(sizes, rng)
        mat = AccuracyMatrix(sizes, dict(entries))
        assert abs(acc(mat) - helpers.brute_force_acc(sizes, entries)) <= 1e-12
        assert abs(fgt(mat) - helpers.brute_force_fgt(sizes, entries)) <= 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 5, f"metrics suite took {elapsed:.1f}s"
    print(f"ACCEPTANCE 4 PASS: fixture within 1e-6 and 1000 random matrices "
          f"within 1e-12 of the plain-loop reference, in {elapsed:.1f}s")


def test_criterion_05_distillation_beats_the_naive_baseline(grid):
    rows, elapsed = grid
    assert elapsed < 600, f"grid took {elapsed:.0f}s"
    b_acc, b_acc_sd, b_fgt, b_fgt_sd = band(rows["baseline"])
    g_acc, g_acc_sd, g_fgt, g_fgt_sd = band(rows["gd"])
    e_acc, e_acc_sd, e_fgt, e_fgt_sd = band(rows["gd+ext"])
    # accuracy bands must be ordered without overlap: baseline < gd < gd+ext
    assert b_acc + b_acc_sd < g_acc - g_acc_sd, (rows["baseline"], rows["gd"])
    assert g_acc + g_acc_sd < e_acc - e_acc_sd, (rows["gd"], rows["gd+ext"])
    # forgetting bands reversed: baseline > gd > gd+ext
    assert b_fgt - b_fgt_sd > g_fgt + g_fgt_sd, (rows["baseline"], rows["gd"])
    assert g_fgt - g_fgt_sd > e_fgt + e_fgt_sd, (rows["gd"], rows["gd+ext"])
    print(
        "ACCEPTANCE 5 PASS: accuracy "
        f"{b_acc:.3f}±{b_acc_sd:.3f} < {g_acc:.3f}±{g_acc_sd:.3f} < "
        f"{e_acc:.3f}±{e_acc_sd:.3f} and forgetting "
        f"{b_fgt:.3f}±{b_fgt_sd:.3f} > {g_fgt:.3f}±{g_fgt_sd:.3f} > "
        f"{e_fgt:.3f}±{e_fgt_sd:.3f} over 10 seeds; grid {elapsed:.0f}s"
    )


def test_criterion_06_each_reference_model_earns_its_seat(grid):
    rows, _ = grid
    p = rows["refs-P+ext"]["acc_mean"]
    pc = rows["refs-PC+ext"]["acc_mean"]
    pcq = rows["gd+ext"]["acc_mean"]
    assert p <= pc <= pcq, (p, pc, pcq)
    print(f"ACCEPTANCE 6 PASS: mean accuracy climbs with each reference "
          f"model: {p:.4f} (P) <= {pc:.4f} (P,C) <= {pcq:.4f} (P,C,Q)")


def test_criterion_07_weighted_finetuning_reduces_forgetting(grid, rng):
    rows, _ = grid
    with_ft = rows["gd+ext"]["fgt_mean"]
    without = rows["gd+ext-noft"]["fgt_mean"]
    assert with_ft < without, (with_ft, without)

    # structural half: the weighted fine-tune may touch the heads only
    cfg = parse_config(
        "task: {num_classes: 4, task_size: 2, input_dim: 4, per_class_train: 25,\n"
        "       per_class_test: 20, cluster_sigma: 1.0, geometry_seed: 3}\n"
        "model: {hidden: [16]}\ncoreset: {size: 40}\n"
    )
    p = Model(4, (16,), rng=1)
    p.add_head(2)
    c = Model(4, (16,), rng=2)
    c.add_head(2)
    d_trn = helpers.blob_set(
        [[0, 0, 0, 0], [3, 0, 0, 0], [0, 3, 0, 0], [0, 0, 3, 0]],
        per_class=10, sigma=0.4, rng=rng)
    d_ext = rng.normal(size=(20, 4))
    v = MethodVariant("gd", frozenset("PCQ"), "combined", "ft_dw", 0.7, "x")
    m = train_main(p, c, d_trn, d_ext, v, cfg, [2, 2],
                   head_rng=np.random.default_rng(0), batch_rng=np.random.default_rng(1))
    before = {k: a.copy() for k, a in m.parameters().items()}
    balanced_finetune(m, p, c, d_trn, d_ext, v, cfg, [2, 2], rng=np.random.default_rng(2))
    for k in before:
        if k.startswith("trunk."):
            assert np.array_equal(m.parameters()[k], before[k]), k
    assert any(not np.array_equal(m.parameters()[k], before[k])
               for k in before if k.startswith("head."))
    print(f"ACCEPTANCE 7 PASS: mean forgetting {with_ft:.4f} with weighted "
          f"fine-tuning < {without:.4f} without; trunk stays bit-identical")


def test_criterion_08_combined_sampling_dominates_its_parts(grid):
    rows, _ = grid
    combined = rows["gd+ext"]["acc_mean"]
    contenders = {
        "random_only": rows["gd+random"]["acc_mean"],
        "pred_only": rows["gd+pred"]["acc_mean"],
        "none": rows["gd"]["acc_mean"],
    }
    for mode, value in contenders.items():
        assert combined >= value, (mode, combined, value)
    listing = ", ".join(f"{m} {v:.4f}" for m, v in contenders.items())
    print(f"ACCEPTANCE 8 PASS: combined sampling {combined:.4f} >= {listing}")


def test_criterion_09_confidence_loss_calibrates_teachers_on_ood_data():
    gaps = []
    for seed in range(10):
        max_probs = {}
        for enabled in (True, False):
            cfg = parse_config(
                "distill: {teacher_confidence: %s}" % ("true" if enabled else "false"))
            v = MethodVariant.from_config(cfg.variants[-1], cfg)
            trial = Trial(cfg, v, seed=seed)
            d_t = trial.tasks[0][0]
            stream = make_stream(trial.layout, trial.geometry, 1,
                                 StreamSpec(cfg.stream.prev_like_fraction),
                                 _rng(seed, 1, R_STREAM))
            ext = sample_external(None, stream, len(d_t.X),
                                  cfg.sampling.budget_multiplier * len(d_t.X), 1.0)
            d_ext = flatten_array(ext, d_t.dim)
            teacher = train_current_teacher(
                d_t, None, d_ext, cfg, class_offset=0,
                init_rng=_rng(seed, 1, R_TEACHER_INIT),
                batch_rng=_rng(seed, 1, R_TEACHER_BATCH), traces={})
            # held-out draws from the same OOD clusters, never seen in training
            hold_rng = np.random.default_rng([seed, 424242])
            idx = hold_rng.integers(0, len(trial.geometry.ood_centers), 400)
            hold = trial.geometry.ood_centers[idx] + trial.geometry.sigma * \
                hold_rng.standard_normal((400, trial.geometry.centers.shape[1]))
            max_probs[enabled] = float(teacher.predict_max(hold)[1].mean())
        gaps.append(max_probs[False] - max_probs[True])
    mean_gap = float(np.mean(gaps))
    assert mean_gap >= 0.1, gaps
    print(f"ACCEPTANCE 9 PASS: confidence-trained teachers sit {mean_gap:.3f} "
          f"lower in mean max-probability on held-out OOD data (>= 0.1)")


def test_criterion_10_repeated_runs_are_byte_identical(tmp_path):
    cfg_text = (
        "task: {num_classes: 4, task_size: 2, input_dim: 4, per_class_train: 25,\n"
        "       per_class_test: 20, cluster_sigma: 1.0, geometry_seed: 3}\n"
        "model: {hidden: [16]}\ncoreset: {size: 40}\nseeds: [0, 1]\n"
    )
    first = run_experiment(parse_config(cfg_text), output_dir=str(tmp_path / "a"))
    second = run_experiment(parse_config(cfg_text), output_dir=str(tmp_path / "b"))
    a_csv = Path(first["aggregate_csv"]).read_bytes()
    b_csv = Path(second["aggregate_csv"]).read_bytes()
    assert a_csv == b_csv
    a_runs = sorted((Path(first["output_dir"]) / "runs").iterdir())
    b_runs = sorted((Path(second["output_dir"]) / "runs").iterdir())
    assert [p.name for p in a_runs] == [p.name for p in b_runs]
    for pa, pb in zip(a_runs, b_runs):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
    print(f"ACCEPTANCE 10 PASS: aggregate CSV and all {len(a_runs)} run "
          f"records byte-identical across repeated runs")
