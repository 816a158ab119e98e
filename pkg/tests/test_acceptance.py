"""End-to-end acceptance gates.

One test per criterion, each asserting its stated tolerance and printing a
[PASS] line with the measured numbers. The CV gates train many models and
take tens of minutes on two CPU cores; run the quick suite with
``pytest -m "not acceptance"`` during development.
"""

import time

import numpy as np
import pytest

from dirtygan import data, engine, evaluation, losses, networks, training

from oracles import central_difference_entry

pytestmark = pytest.mark.acceptance

WORKERS = 2


def say(line):
    print(f"\n{line}")


@pytest.fixture(scope="module")
def breast(breast_csv):
    return data.minmax_scale(data.load_csv(breast_csv, "label"))


@pytest.fixture(scope="module")
def wine(wine_csv):
    return data.minmax_scale(data.load_csv(wine_csv, "label",
                                           class_map={"1": "neg", "2": "pos", "3": "pos"}))


# ------------------------------------------------------------ criterion 1

def _scenario(seed, d=4, n_c=2, b=6):
    g = np.random.default_rng(seed)
    p = networks.init_params(d=d, n_c=n_c, seed=seed)
    for mlp in p.named().values():
        for layer in mlp.layers:
            layer.b += 0.05 + 0.1 * g.random(layer.b.shape)  # move off relu kinks
    x = g.random((b, d))
    m = (g.random((b, d)) < 0.7).astype(float)
    m_y = (g.random(b) < 0.6).astype(float)
    m_y[0] = 1.0
    m_y[1] = 0.0
    y = np.eye(n_c)[g.integers(0, n_c, b)] * m_y[:, None]
    z = g.random((b, d))
    y_c = np.eye(n_c)[g.integers(0, n_c, 4)]
    z_c = g.random((4, d))
    return p, x, m, m_y, y, z, y_c, z_c


def _loss_builders():
    """name -> (build(scenario) -> (loss_node, wrapped_layers), target_mlp)."""

    def generator_adversarial(s):
        p, x, m, m_y, y, z, *_ = s
        enc = networks.wrap(p.encoder)
        h = networks.forward_nodes(enc, engine.const(np.concatenate(
            [networks.fill_noise(x, m, z), m], 1)))
        x_bar = networks.forward_nodes(networks.wrap(p.imputer, trainable=False), h)
        x_hat = networks.compose_imputed_node(x, m, x_bar)
        scores = networks.forward_nodes(networks.wrap(p.element_critic, trainable=False),
                                        engine.concat_columns(x_hat, engine.const(y)))
        return losses.imputation_generator_loss(scores, m), enc

    def critic_elements(s):
        p, x, m, m_y, y, *_ = s
        layers = networks.wrap(p.element_critic)
        scores = networks.forward_nodes(layers, engine.const(np.concatenate([x, y], 1)))
        return losses.element_critic_loss(scores, m, m_y, include_label_unit=False), layers

    def critic_with_label_unit(s):
        p, x, m, m_y, y, *_ = s
        layers = networks.wrap(p.element_critic)
        scores = networks.forward_nodes(layers, engine.const(np.concatenate([x, y], 1)))
        return losses.element_critic_loss(scores, m, m_y, include_label_unit=True), layers

    def reconstruction(s):
        p, x, m, m_y, y, z, *_ = s
        enc = networks.wrap(p.encoder, trainable=False)
        imp = networks.wrap(p.imputer)
        h = networks.forward_nodes(enc, engine.const(np.concatenate(
            [networks.fill_noise(x, m, z), m], 1)))
        x_bar = networks.forward_nodes(imp, h)
        return losses.reconstruction_loss(x, x_bar, m), imp

    def element_penalty(s):
        p, x, m, m_y, y, *_ = s
        layers = networks.wrap(p.element_critic)
        pen = losses.element_gradient_penalty(layers, x, y, m,
                                              include_label_unit=True, m_y=m_y)
        return pen, layers

    def hidden_generator(s):
        p, x, m, m_y, y, z, y_c, z_c = s
        gen = networks.wrap(p.cond_generator)
        h_c = networks.forward_nodes(gen, engine.const(np.concatenate([z_c, y_c], 1)))
        score = networks.forward_nodes(networks.wrap(p.hidden_critic, trainable=False),
                                       engine.concat_columns(h_c, engine.const(y_c)))
        return losses.hidden_generator_loss(score), gen

    def hidden_critic(s):
        p, x, m, m_y, y, z, y_c, z_c = s
        h_l = networks.encode(p.encoder, networks.fill_noise(x, m, z), m)
        h_c = networks.generate_hidden_conditional(p.cond_generator, z_c, y_c)
        layers = networks.wrap(p.hidden_critic)
        fake = networks.forward_nodes(layers, engine.const(np.concatenate([h_c, y_c], 1)))
        real = networks.forward_nodes(layers, engine.const(np.concatenate([h_l, y], 1)))
        return losses.hidden_critic_loss(fake, real), layers

    def hidden_penalty(s):
        p, x, m, m_y, y, z, *_ = s
        h_l = networks.encode(p.encoder, networks.fill_noise(x, m, z), m)
        layers = networks.wrap(p.hidden_critic)
        return losses.hidden_gradient_penalty(layers, h_l, y), layers

    def classifier_ce(s):
        p, x, m, m_y, y, *_ = s
        layers = networks.wrap(p.classifier)
        probs = networks.forward_nodes(layers, engine.const(x))
        targets = np.eye(p.n_c)[np.arange(x.shape[0]) % p.n_c]
        return losses.cross_entropy(probs, targets), layers

    def pseudo_label(s):
        p, x, m, m_y, y, *_ = s
        layers = networks.wrap(p.classifier)
        probs = networks.forward_nodes(layers, engine.const(x))
        scores = networks.forward_nodes(networks.wrap(p.element_critic, trainable=False),
                                        engine.concat_columns(engine.const(x), probs))
        return losses.pseudo_label_loss(scores), layers

    return {
        "generator_adversarial": (generator_adversarial, "encoder"),
        "critic_elements": (critic_elements, "element_critic"),
        "critic_with_label_unit": (critic_with_label_unit, "element_critic"),
        "reconstruction": (reconstruction, "imputer"),
        "element_penalty": (element_penalty, "element_critic"),
        "hidden_generator": (hidden_generator, "cond_generator"),
        "hidden_critic": (hidden_critic, "hidden_critic"),
        "hidden_penalty": (hidden_penalty, "hidden_critic"),
        "classifier_ce": (classifier_ce, "classifier"),
        "pseudo_label": (pseudo_label, "classifier"),
    }


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    checks_per_loss = 100
    scenarios = 5
    for name, (build, target) in _loss_builders().items():
        done = 0
        for s_idx in range(scenarios):
            scenario = _scenario(seed=1000 + s_idx)
            p = scenario[0]
            mlp = getattr(p, target)
            arrays = mlp.params()
            loss, layers = build(scenario)
            engine.backward(loss)
            grads = networks.layer_grads(layers)
            g = np.random.default_rng(50 + s_idx)
            per_scenario = checks_per_loss // scenarios
            for _ in range(per_scenario):
                ai = int(g.integers(0, len(arrays)))
                idx = int(g.integers(0, arrays[ai].size))
                have = grads[ai].reshape(-1)[idx]
                fd = central_difference_entry(
                    lambda: float(build(scenario)[0].value), arrays[ai], idx)
                if max(abs(have), abs(fd)) > 1e-6:
                    rel = abs(have - fd) / max(abs(have), abs(fd))
                    assert rel < 1e-4, f"{name}: rel err {rel:.2e} at array {ai} idx {idx}"
                else:
                    assert abs(have - fd) < 1e-5
                done += 1
        assert done == checks_per_loss
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    say(f"[PASS] criterion 1: 100 finite-difference checks per loss x "
        f"{len(_loss_builders())} losses, rel err < 1e-4, in {elapsed:.1f}s")


# ------------------------------------------------------------ criterion 2

def test_criterion_2_zero_baseline_breast(breast):
    start = time.perf_counter()
    values = []
    for seed in range(10):
        corrupted = data.inject_mcar(breast, 0.2, seed=seed)
        zero_hat = evaluation.baseline_impute(corrupted, "zero")
        values.append(evaluation.rmse_missing(breast.X, zero_hat, corrupted.M))
    mean = float(np.mean(values))
    assert abs(mean - 0.2699) < 0.02
    assert all(abs(v - 0.2699) < 0.02 for v in values)
    say(f"[PASS] criterion 2: zero-imputation RMSE on breast = {mean:.4f} "
        f"(target 0.2699 +/- 0.02, 10 mask seeds, {time.perf_counter() - start:.1f}s)")


# ------------------------------------------------------------ criterion 3

@pytest.mark.slow
def test_criterion_3_breast_imputation_cv(breast):
    start = time.perf_counter()
    cfg = training.TrainConfig(epochs=150, seed=0)
    records = evaluation.run_cv_experiment(breast, cfg, k=5, repeats=10,
                                           master_seed=0, workers=WORKERS,
                                           run_id="breast-imputation")
    agg = evaluation.aggregate(records)
    mean_rmse = agg["rmse"][0]
    mean_baseline = agg["rmse_mean"][0]
    zero_baseline = agg["rmse_zero"][0]
    assert mean_rmse <= 0.095, f"mean RMSE {mean_rmse:.4f} > 0.095"
    worst_margin = min(r.rmse_mean - r.rmse for r in records)
    assert all(r.rmse < r.rmse_mean for r in records), "a fold lost to the mean baseline"
    assert mean_rmse < mean_baseline < zero_baseline
    say(f"[PASS] criterion 3: breast 10x5-fold RMSE "
        f"{evaluation.format_mean_std(*agg['rmse'])} <= 0.095; ordering "
        f"{mean_rmse:.4f} < mean {mean_baseline:.4f} < zero {zero_baseline:.4f}; "
        f"worst per-fold margin {worst_margin:.4f}; "
        f"{(time.perf_counter() - start) / 60:.1f} min")


# ------------------------------------------------------------ criterion 4

@pytest.mark.slow
def test_criterion_4_wine_classification(wine):
    start = time.perf_counter()
    cfg = training.TrainConfig(epochs=300, seed=0)
    records = evaluation.run_cv_experiment(
        wine, cfg, k=5, repeats=2, master_seed=0, workers=WORKERS,
        positive_class=wine.classes.index("pos"), run_id="wine-f1")
    agg = evaluation.aggregate(records)
    assert agg["f1"][0] >= 0.95, f"wine mean F1 {agg['f1'][0]:.4f} < 0.95"
    say(f"[PASS] criterion 4a: wine F1 {evaluation.format_mean_std(*agg['f1'])} "
        f">= 0.95 ({(time.perf_counter() - start) / 60:.1f} min)")


@pytest.mark.slow
def test_criterion_4_breast_classification(breast):
    start = time.perf_counter()
    cfg = training.TrainConfig(epochs=250, seed=0)
    records = evaluation.run_cv_experiment(
        breast, cfg, k=5, repeats=2, master_seed=0, workers=WORKERS,
        positive_class=breast.classes.index("benign"), run_id="breast-f1")
    agg = evaluation.aggregate(records)
    assert agg["f1"][0] >= 0.95, f"breast mean F1 {agg['f1'][0]:.4f} < 0.95"
    say(f"[PASS] criterion 4b: breast F1 {evaluation.format_mean_std(*agg['f1'])} "
        f">= 0.95 ({(time.perf_counter() - start) / 60:.1f} min)")


# ------------------------------------------------------------ criterion 5

@pytest.mark.slow
def test_criterion_5_ablation_ordering(breast):
    start = time.perf_counter()
    base = training.TrainConfig(epochs=200, seed=0)
    pos = breast.classes.index("benign")
    scores = {}
    for label, drop in (("baseline_mlp", {"imputer", "cond_generator", "label_critic"}),
                        ("no_cond", {"cond_generator"}),
                        ("full", set())):
        cfg = evaluation.ablation_config(base, drop)
        records = evaluation.run_cv_experiment(breast, cfg, k=2, repeats=5,
                                               master_seed=1, positive_class=pos,
                                               workers=WORKERS, run_id=label)
        scores[label] = evaluation.aggregate(records)["f1"][0]
    assert scores["baseline_mlp"] < scores["no_cond"], \
        f"MLP row {scores['baseline_mlp']:.4f} not below w/o-conditional {scores['no_cond']:.4f}"
    assert scores["full"] >= scores["no_cond"] - 0.005, \
        f"full {scores['full']:.4f} more than 0.005 below w/o-conditional {scores['no_cond']:.4f}"
    say(f"[PASS] criterion 5: ablation ordering MLP {scores['baseline_mlp']:.4f} < "
        f"w/o-conditional {scores['no_cond']:.4f} <= full {scores['full']:.4f} "
        f"(0.005 slack; {(time.perf_counter() - start) / 60:.1f} min)")


# ------------------------------------------------------------ criterion 6

@pytest.mark.slow
def test_criterion_6_missing_rate_robustness():
    start = time.perf_counter()
    toy = data.synthetic_two_gaussians(400, 8, seed=5)
    cfg = training.TrainConfig(epochs=80, seed=0)
    records = evaluation.sweep(toy, cfg, "missing_rate", [0.1, 0.3, 0.5],
                               k=2, repeats=1, label_rate=0.2, master_seed=3,
                               workers=WORKERS)
    by_rate = {}
    for rate in (0.1, 0.3, 0.5):
        points = [r for r in records if r.axis_value == rate]
        agg = evaluation.aggregate(points)
        by_rate[rate] = (agg["rmse"][0], agg["rmse_zero"][0])
        assert agg["rmse"][0] < agg["rmse_zero"][0], \
            f"rate {rate}: model {agg['rmse'][0]:.4f} not below zero baseline"
    assert by_rate[0.1][0] <= by_rate[0.3][0] <= by_rate[0.5][0], \
        f"RMSE not nondecreasing: {[by_rate[r][0] for r in (0.1, 0.3, 0.5)]}"
    say("[PASS] criterion 6: synthetic missing-rate sweep RMSE "
        + " <= ".join(f"{by_rate[r][0]:.4f}@{r}" for r in (0.1, 0.3, 0.5))
        + f", all below zero baseline ({(time.perf_counter() - start) / 60:.1f} min)")


# ------------------------------------------------------------ criterion 7

@pytest.mark.slow
def test_criterion_7_regularizer_comparison(breast):
    start = time.perf_counter()
    corrupted = data.inject_mcar(breast, 0.2, seed=1)
    folds = data.kfold_split(breast.n, 5, seed=2)
    train_ds = data.inject_label_missingness(
        data.subset(corrupted, np.concatenate(folds[1:])), 0.2, seed=3)
    test_ds = data.subset(corrupted, folds[0])
    clean = breast.X[folds[0]]

    def probe(state, epoch):
        x_hat = training.impute_matrix(state.params, test_ds.X, test_ds.M,
                                       np.random.default_rng(50 + epoch))
        return evaluation.rmse_missing(clean, x_hat, test_ds.M)

    terminal = {}
    for mode in ("zero_centered", "weight_clip"):
        cfg = training.TrainConfig(epochs=100, seed=0)
        cfg.weights.regularizer = mode
        state, records = training.train(train_ds, cfg, probe=probe)
        for rec in records:
            values = list(rec.loss_means.values())
            if mode == "zero_centered":
                assert np.isfinite(values).all(), f"non-finite loss at epoch {rec.epoch}"
        terminal[mode] = records[-1].probe_value
    assert terminal["zero_centered"] <= terminal["weight_clip"], \
        f"zero-centered {terminal['zero_centered']:.4f} worse than " \
        f"weight clipping {terminal['weight_clip']:.4f}"
    say(f"[PASS] criterion 7: terminal RMSE zero-centered {terminal['zero_centered']:.4f} "
        f"<= weight clipping {terminal['weight_clip']:.4f}, all losses finite "
        f"({(time.perf_counter() - start) / 60:.1f} min)")


# ------------------------------------------------------------ criterion 8

def test_criterion_8_structural_invariants():
    start = time.perf_counter()
    ds = data.synthetic_two_gaussians(64, 5, seed=2)
    ds = data.inject_mcar(ds, 0.3, seed=3)
    ds = data.inject_label_missingness(ds, 0.2, seed=4)
    cfg = training.TrainConfig(n_critic=2, n_cg=2, batch_size=16, epochs=2, seed=9)

    # bitwise determinism
    s1, _ = training.train(ds, cfg)
    s2, _ = training.train(ds, cfg)
    for name, mlp in s1.params.named().items():
        for la, lb in zip(mlp.layers, getattr(s2.params, name).layers):
            assert la.w.tobytes() == lb.w.tobytes()

    # observed-coordinate preservation, exact
    completed = training.impute_with(s1, ds)
    assert np.array_equal(completed * ds.M, ds.X * ds.M)

    # balanced-batch class counts after augmentation
    counts = np.array([11.0, 4.0])
    for cls, make in training.balance_targets(counts):
        counts[cls] += make
    assert counts[0] == counts[1]

    # update-scope isolation, bitwise
    state = training.init_state(ds.d, ds.n_c, cfg)
    batch = data.sample_batch(ds, np.arange(16), state.rng)

    def snapshot():
        return {n: [(l.w.copy(), l.b.copy()) for l in mlp.layers]
                for n, mlp in state.params.named().items()}

    def changed(before):
        out = set()
        for n, mlp in state.params.named().items():
            for (w0, b0), layer in zip(before[n], mlp.layers):
                if not (np.array_equal(w0, layer.w) and np.array_equal(b0, layer.b)):
                    out.add(n)
        return out

    before = snapshot()
    training.imputation_step(state, batch)
    assert changed(before) == {"element_critic", "encoder", "imputer"}
    before = snapshot()
    training.conditional_step(state, batch)
    assert changed(before) <= {"hidden_critic", "cond_generator"}
    before = snapshot()
    training.classifier_step(state, batch)
    assert changed(before) == {"classifier"}

    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    say(f"[PASS] criterion 8: determinism, observed-coordinate preservation, "
        f"balanced batches, update-scope isolation ({elapsed:.1f}s)")
