import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from fqat.data import (GeneratorConfig, SplitPlan, generate_domains,
                       load_dataset, save_dataset, split_dataset)


def small_config(**kw):
    base = dict(n_domains=4, n_per_domain=60, n_classes=3, dim=4)
    base.update(kw)
    return GeneratorConfig(**base)


def test_generation_is_deterministic():
    a = generate_domains(3, small_config())
    b = generate_domains(3, small_config())
    c = generate_domains(4, small_config())
    for d in a.domains:
        assert np.array_equal(a.X[d], b.X[d])
        assert np.array_equal(a.y[d], b.y[d])
    assert not np.array_equal(a.X["domain0"], c.X["domain0"])


def test_domain_sizes_and_label_balance():
    ds = generate_domains(0, small_config(n_per_domain=64))
    assert ds.domains == ["domain0", "domain1", "domain2", "domain3"]
    assert ds.domain_sizes() == {d: 64 for d in ds.domains}
    for d in ds.domains:
        counts = np.bincount(ds.y[d], minlength=3)
        # 64 = 22 + 21 + 21; the remainder goes to the lowest labels
        assert sorted(counts.tolist()) == [21, 21, 22]
        assert ds.X[d].shape == (64, 4)


def test_classes_are_linearly_separable_within_domain():
    ds = generate_domains(1, small_config(n_per_domain=200, sigma=0.3))
    for d in ds.domains:
        clf = LogisticRegression(max_iter=2000).fit(ds.X[d], ds.y[d])
        assert clf.score(ds.X[d], ds.y[d]) >= 0.95


def test_domains_differ_but_share_structure():
    ds = generate_domains(2, small_config())
    m0 = ds.X["domain0"].mean(axis=0)
    m3 = ds.X["domain3"].mean(axis=0)
    # the shift walks the first feature dimension right, 0.3 per domain
    assert m3[0] - m0[0] == pytest.approx(3 * 0.3, abs=0.3)
    # a classifier fit on one domain transfers worse to the farthest domain
    clf = LogisticRegression(max_iter=2000).fit(ds.X["domain0"], ds.y["domain0"])
    assert clf.score(ds.X["domain0"], ds.y["domain0"]) > clf.score(
        ds.X["domain3"], ds.y["domain3"])


def test_offset_keeps_features_positive():
    ds = generate_domains(5, small_config())
    for d in ds.domains:
        assert ds.X[d].min() > 0.0


def test_generator_validation():
    with pytest.raises(ValueError):
        generate_domains(0, small_config(n_domains=2))
    with pytest.raises(ValueError):
        generate_domains(0, small_config(n_classes=1))
    with pytest.raises(ValueError):
        generate_domains(0, small_config(dim=1))
    with pytest.raises(ValueError):
        generate_domains(0, small_config(n_per_domain=2))


def test_split_holds_out_test_domain_and_partitions_train():
    ds = generate_domains(6, small_config(n_per_domain=50))
    plan = SplitPlan(test_domain="domain2",
                     train_domains=("domain0", "domain1", "domain3"),
                     val_fraction=0.2)
    train, val, test = split_dataset(ds, plan, seed=9)
    assert set(train) == set(plan.train_domains)
    assert "domain2" not in train and "domain2" not in val
    assert np.array_equal(test[0], ds.X["domain2"])
    for d in plan.train_domains:
        Xt, yt = train[d]
        Xv, yv = val[d]
        assert len(yv) == 10 and len(yt) == 40
        merged = np.concatenate([Xt, Xv])
        # partition: every original row appears exactly once across train+val
        orig = np.array(sorted(map(tuple, ds.X[d])))
        assert np.array_equal(np.array(sorted(map(tuple, merged))), orig)


def test_split_is_deterministic_per_seed():
    ds = generate_domains(7, small_config())
    plan = SplitPlan("domain0", ("domain1", "domain2", "domain3"), 0.25)
    t1, v1, _ = split_dataset(ds, plan, seed=3)
    t2, v2, _ = split_dataset(ds, plan, seed=3)
    t3, v3, _ = split_dataset(ds, plan, seed=4)
    assert np.array_equal(t1["domain1"][0], t2["domain1"][0])
    assert np.array_equal(v1["domain2"][0], v2["domain2"][0])
    assert not np.array_equal(v1["domain1"][0], v3["domain1"][0])


def test_split_plan_validation():
    with pytest.raises(ValueError):
        SplitPlan("domain0", ("domain0", "domain1"), 0.2)
    with pytest.raises(ValueError):
        SplitPlan("domain0", ("domain1",), 0.0)
    ds = generate_domains(8, small_config())
    with pytest.raises(ValueError):
        split_dataset(ds, SplitPlan("nope", ("domain1",), 0.2), seed=0)
    with pytest.raises(ValueError):
        split_dataset(ds, SplitPlan("domain0", ("nope",), 0.2), seed=0)


def test_save_load_round_trip_bit_exact(tmp_path):
    ds = generate_domains(10, small_config())
    path = tmp_path / "data.txt"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.domains == ds.domains
    assert back.n_classes == ds.n_classes
    assert back.dim == ds.dim
    assert back.generator_seed == ds.generator_seed
    for d in ds.domains:
        assert np.array_equal(back.X[d], ds.X[d])
        assert np.array_equal(back.y[d], ds.y[d])


def test_load_rejects_malformed_files(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("something else\n")
    with pytest.raises(ValueError, match="not a dataset"):
        load_dataset(p)
    p.write_text("fqat-dataset dim=3 classes=2 domains=1 seed=0\n"
                 "domain0 0 1.0 2.0\n")  # one feature short
    with pytest.raises(ValueError, match="malformed"):
        load_dataset(p)
    p.write_text("fqat-dataset dim=2 classes=2 domains=1 seed=0\n"
                 "domain0 5 1.0 2.0\n")
    with pytest.raises(ValueError, match="out of range"):
        load_dataset(p)
    p.write_text("fqat-dataset dim=2 classes=2 domains=2 seed=0\n"
                 "domain0 0 1.0 2.0\n")
    with pytest.raises(ValueError, match="domains"):
        load_dataset(p)
