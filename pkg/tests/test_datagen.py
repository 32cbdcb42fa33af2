import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from colt.datagen import (
    Dataset,
    SyntheticSpec,
    class_means,
    class_sizes,
    gen_balanced_id,
    gen_longtail_id,
    gen_ood_pool,
    group_split,
    load_embeddings,
    make_views,
    save_embeddings,
)
from colt.errors import ParameterError, ParseError
from colt.numkit import RngStream


def test_class_sizes_smallest_class():
    spec = SyntheticSpec(num_classes=10, max_class_size=500, imbalance_ratio=100)
    sizes = class_sizes(spec)
    assert sizes[0] == 500 and sizes[-1] == 5


def test_class_sizes_balanced_limit():
    assert class_sizes(SyntheticSpec(imbalance_ratio=1, max_class_size=37)) == [37] * 10


def test_class_sizes_default_total():
    # about two thousand ID samples under the default spec
    assert 1900 <= sum(class_sizes(SyntheticSpec())) <= 2100


def test_class_sizes_zero_class_rejected():
    with pytest.raises(ParameterError, match="rounds to 0"):
        class_sizes(SyntheticSpec(max_class_size=10, imbalance_ratio=100))


@given(st.integers(3, 20), st.integers(100, 2000), st.floats(1.0, 100.0))
def test_class_sizes_profile(n, top, ratio):
    spec = SyntheticSpec(num_classes=n, max_class_size=top, imbalance_ratio=ratio, dim=max(n, 2))
    sizes = class_sizes(spec)
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    if sizes[-1] >= 20:  # rounding slack only matters for tiny classes
        assert sizes[0] / sizes[-1] == pytest.approx(ratio, rel=0.05)


def test_spec_validation():
    for bad in (dict(num_classes=1), dict(dim=1), dict(imbalance_ratio=0.5),
                dict(noise_sigma=-1.0), dict(mean_layout="grid"), dict(num_classes=20, dim=16),
                dict(nuisance_sigma=-0.1)):
        with pytest.raises(ParameterError):
            SyntheticSpec(**bad).validate()


def test_longtail_dataset_shape_and_labels():
    spec = SyntheticSpec()
    ds = gen_longtail_id(spec, RngStream(0))
    assert ds.domain == "ID" and ds.dim == spec.dim
    assert ds.class_counts == class_sizes(spec)
    assert ds.labeled
    assert len(np.unique(ds.ids)) == len(ds)


def test_orthogonal_means_are_equidistant():
    spec = SyntheticSpec()
    m = class_means(spec, RngStream(5))
    d = np.linalg.norm(m[:, None] - m[None], axis=-1)[np.triu_indices(spec.num_classes, 1)]
    np.testing.assert_allclose(d, spec.id_center_scale, rtol=1e-12)


def test_class_sample_means_match_centres():
    spec = SyntheticSpec(imbalance_ratio=1, max_class_size=4000, num_classes=3, dim=4)
    ds = gen_longtail_id(spec, RngStream(1))
    means = class_means(spec, RngStream(1))
    for c in range(3):
        emp = ds.features[ds.labels == c].mean(axis=0)
        assert np.linalg.norm(emp - means[c]) < 0.1


def test_nuisance_variance_lies_outside_class_span():
    spec = SyntheticSpec(nuisance_sigma=3.0, imbalance_ratio=1, max_class_size=3000)
    ds = gen_longtail_id(spec, RngStream(2))
    means = class_means(spec, RngStream(2))
    centred = ds.features - means[ds.labels]
    q = np.linalg.qr(means.T)[0]  # basis of the class-mean span
    inside = centred @ q
    outside = centred - inside @ q.T
    per_dim_out = np.sum(outside ** 2) / len(centred) / (spec.dim - spec.num_classes)
    assert np.var(inside) == pytest.approx(1.0, rel=0.05)
    assert per_dim_out == pytest.approx(1.0 + 9.0, rel=0.05)


def test_splits_share_centres_but_not_samples():
    spec = SyntheticSpec()
    rng = RngStream(4)
    a = gen_balanced_id(spec, 50, rng, "probe")
    b = gen_balanced_id(spec, 50, rng, "test")
    assert a.class_counts == [50] * 10
    assert not np.allclose(a.features, b.features)
    again = gen_balanced_id(spec, 50, RngStream(4), "probe")
    np.testing.assert_array_equal(a.features, again.features)


def test_ood_pool_basic():
    spec = SyntheticSpec()
    pool = gen_ood_pool(spec, 500, RngStream(0))
    assert len(pool) == 500 and pool.domain == "OOD"
    assert not pool.labeled and np.all(pool.labels == -1)
    with pytest.raises(ParameterError):
        gen_ood_pool(spec, 0, RngStream(0))


def test_ood_pool_zero_shift_matches_id_components():
    # no shift and no novel components: pool comes from the ID class mixture
    spec = SyntheticSpec(ood_center_shift=0.0, ood_novel_components=0, nuisance_sigma=0.0)
    pool = gen_ood_pool(spec, 4000, RngStream(9))
    means = class_means(spec, RngStream(9))
    d2 = ((pool.features[:, None, :] - means[None]) ** 2).sum(-1)
    nearest = d2.min(axis=1)
    # squared distance to the own centre is chi-square with dim degrees of freedom
    assert np.mean(nearest) < spec.dim
    shares = np.bincount(d2.argmin(axis=1), minlength=10) / len(pool)
    assert shares.min() > 0.05


def test_ood_pool_imbalance_knob():
    spec = SyntheticSpec(ood_imbalance_ratio=100.0, ood_center_shift=0.0, ood_novel_components=0,
                         id_center_scale=20.0)
    pool = gen_ood_pool(spec, 20000, RngStream(3))
    means = class_means(spec, RngStream(3))
    comp = ((pool.features[:, None, :] - means[None]) ** 2).sum(-1).argmin(axis=1)
    counts = np.sort(np.bincount(comp, minlength=10))
    assert counts[-1] / max(counts[0], 1) > 30


def test_ood_pool_follows_id_sizes():
    spec = SyntheticSpec(ood_id_alignment=1.0, ood_center_shift=0.0, ood_novel_components=0,
                         id_center_scale=20.0)
    pool = gen_ood_pool(spec, 40000, RngStream(4))
    means = class_means(spec, RngStream(4))
    comp = ((pool.features[:, None, :] - means[None]) ** 2).sum(-1).argmin(axis=1)
    shares = np.bincount(comp, minlength=10) / len(pool)
    sizes = np.array(class_sizes(spec), dtype=float)
    np.testing.assert_allclose(shares, sizes / sizes.sum(), atol=0.01)
    with pytest.raises(ParameterError):
        SyntheticSpec(ood_id_alignment=-1.0).validate()


def test_make_views_identity_at_zero():
    x = np.arange(6.0).reshape(2, 3)
    a, b = make_views(x, 0.0, RngStream(0))
    np.testing.assert_array_equal(a, x)
    np.testing.assert_array_equal(b, x)
    assert a is not x


def test_make_views_differ_and_reproduce():
    x = np.ones(8)
    a, b = make_views(x, 1.0, RngStream(0, ("v",)))
    assert a.shape == x.shape and not np.array_equal(a, b)
    a2, b2 = make_views(x, 1.0, RngStream(0, ("v",)))
    np.testing.assert_array_equal(a, a2)
    np.testing.assert_array_equal(b, b2)


def test_make_views_statistics():
    x = np.zeros((20000, 4))
    a, _ = make_views(x, 0.5, RngStream(1), noise_sigma=2.0)
    # noise std 1.0, drop 0.1 then rescale by 1/0.9: var = 0.9 * (1/0.9)^2 * E[scale^2]
    expected = (1 / 0.9) * (1 + 0.05 ** 2 / 3)
    assert np.var(a) == pytest.approx(expected, rel=0.03)
    assert np.mean(a == 0) == pytest.approx(0.1, abs=0.01)


def test_make_views_errors():
    with pytest.raises(ParameterError):
        make_views(np.ones(3), -0.1, RngStream(0))
    with pytest.raises(ParameterError):
        make_views(np.ones(3), 5.0, RngStream(0))


def test_group_split_examples():
    s = group_split([500, 300, 5])
    assert s.groups == {0: "Many", 1: "Median", 2: "Few"}
    s10 = group_split(class_sizes(SyntheticSpec()))
    assert [len(s10.members(g)) for g in ("Many", "Median", "Few")] == [3, 4, 3]
    assert s10.members("Many") == [0, 1, 2] and s10.members("Few") == [7, 8, 9]
    eq = group_split([7, 7, 7, 7])
    assert eq.members("Many") == [0] and eq.members("Median") == [1, 2] and eq.members("Few") == [3]
    with pytest.raises(ParameterError):
        group_split([1, 2])


@given(st.lists(st.integers(1, 1000), min_size=3, max_size=30))
def test_group_split_partition(counts):
    s = group_split(counts)
    members = [set(s.members(g)) for g in ("Many", "Median", "Few")]
    assert set().union(*members) == set(range(len(counts)))
    assert sum(len(m) for m in members) == len(counts)
    assert len(members[0]) == len(members[2]) == len(counts) // 3
    # every Many class is at least as large as every Few class
    assert min(counts[c] for c in members[0]) >= max(counts[c] for c in members[2])


def test_embedding_file_roundtrip(tmp_path):
    ds = gen_longtail_id(SyntheticSpec(max_class_size=40, imbalance_ratio=4), RngStream(0))
    path = tmp_path / "e.txt"
    save_embeddings(path, ds)
    back = load_embeddings(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.domain == "ID"

    pool = Dataset(np.eye(3), np.full(3, -1), "OOD")
    save_embeddings(path, pool)
    back = load_embeddings(path)
    assert back.domain == "OOD" and not back.labeled
    np.testing.assert_array_equal(back.features, np.eye(3))


@pytest.mark.parametrize("body,line", [
    ("dim=2 domain=ID labeled=1\n0 1.0 2.0\n1 3.0\n", 3),
    ("dim=2 domain=ID labeled=0\n1.0 x\n", 2),
    ("dim=2 domain=XX labeled=0\n", 1),
    ("dim=2 labeled=0\n", 1),
    ("dim=2 domain=ID labeled=0\n1 2\n3 nan\n", 3),
    ("", 1),
])
def test_embedding_file_errors(tmp_path, body, line):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        load_embeddings(path)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.ones((3, 2)), np.zeros(2), "ID")
    with pytest.raises(ParameterError):
        Dataset(np.ones((3, 2)), np.zeros(3), "train")


def test_spec_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        SyntheticSpec().dim = 3
