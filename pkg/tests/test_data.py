"""Manifests and real/synthetic mixing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gewild.data import (
    MANIFEST_COLUMNS,
    ManifestRecord,
    build_mixed_dataset,
    compute_mix_counts,
    load_manifest,
    parse_label,
    plan_mix,
    save_manifest,
)
from gewild.errors import ConfigError, IngestionError


def rec(clip_id, label, origin="synthetic", split="train"):
    return ManifestRecord(clip_id, f"/x/{clip_id}", f"/x/{clip_id}.wav",
                          label, split, origin)


def make_pool(counts, prefix="p", origin="synthetic"):
    pool = []
    for label, n in enumerate(counts):
        for i in range(n):
            pool.append(rec(f"{prefix}{label}_{i:04d}", label, origin=origin))
    return pool


def make_real(counts):
    return make_pool(counts, prefix="r", origin="real")


# ------------------------------------------------------------------- labels


def test_parse_label_accepts_names_and_digits():
    assert parse_label("negative") == 0
    assert parse_label("neutral") == 1
    assert parse_label("positive") == 2
    assert parse_label("0") == 0
    assert parse_label("2") == 2


def test_parse_label_rejects_unknown():
    with pytest.raises(ValueError):
        parse_label("angry")
    with pytest.raises(ValueError):
        parse_label("3")


# ---------------------------------------------------------------- manifests


def test_manifest_round_trip(tmp_path):
    records = [rec("a", 0), rec("b", 1, origin="real", split="val"),
               rec("c", 2, split="test")]
    path = tmp_path / "m.tsv"
    save_manifest(path, records)
    assert load_manifest(path, check_paths=False) == records


def test_manifest_accepts_class_names(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text(
        "\t".join(MANIFEST_COLUMNS) + "\n"
        + "a\t/f\t/w\tpositive\ttrain\treal\n"
    )
    (record,) = load_manifest(path, check_paths=False)
    assert record.label == 2


def test_manifest_dash_skips_path_checks(tmp_path):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    path = tmp_path / "m.tsv"
    path.write_text(
        "\t".join(MANIFEST_COLUMNS) + "\n"
        + f"a\t{frames_dir}\t-\t0\ttrain\treal\n"
    )
    (record,) = load_manifest(path, check_paths=True)
    assert record.wav == "-"


def test_manifest_bad_header(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("id\tframes\n")
    with pytest.raises(IngestionError) as exc:
        load_manifest(path)
    assert exc.value.line == 1


def test_manifest_wrong_column_count(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("\t".join(MANIFEST_COLUMNS) + "\n" + "a\tb\tc\n")
    with pytest.raises(IngestionError) as exc:
        load_manifest(path, check_paths=False)
    assert exc.value.line == 2


def test_manifest_duplicate_id(tmp_path):
    path = tmp_path / "m.tsv"
    save_manifest(path, [rec("a", 0)])
    with open(path, "a") as fh:
        fh.write("a\t/y\t/y.wav\t1\ttrain\tsynthetic\n")
    with pytest.raises(IngestionError) as exc:
        load_manifest(path, check_paths=False)
    assert "duplicate" in str(exc.value)
    assert exc.value.line == 3


@pytest.mark.parametrize(
    "row,fragment",
    [
        ("a\t/f\t/w\tangry\ttrain\treal", "label"),
        ("a\t/f\t/w\t0\tholdout\treal", "split"),
        ("a\t/f\t/w\t0\ttrain\tgenerated", "origin"),
    ],
)
def test_manifest_field_validation(tmp_path, row, fragment):
    path = tmp_path / "m.tsv"
    path.write_text("\t".join(MANIFEST_COLUMNS) + "\n" + row + "\n")
    with pytest.raises(IngestionError) as exc:
        load_manifest(path, check_paths=False)
    assert exc.value.line == 2
    assert fragment in str(exc.value)


def test_manifest_missing_paths_flagged(tmp_path):
    path = tmp_path / "m.tsv"
    save_manifest(path, [rec("a", 0)])
    with pytest.raises(IngestionError) as exc:
        load_manifest(path, check_paths=True)
    assert "frames dir" in str(exc.value)


def test_manifest_skips_blank_lines(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text(
        "\t".join(MANIFEST_COLUMNS) + "\n\n"
        + "a\t/f\t/w\t0\ttrain\treal\n\n"
    )
    assert len(load_manifest(path, check_paths=False)) == 1


# --------------------------------------------------------------- mix counts


PUBLISHED = {0.1: 297, 0.2: 666, 0.3: 1140, 0.4: 1773, 0.5: 2661}


def test_mix_counts_match_published_within_one():
    for ratio, published in PUBLISHED.items():
        got = compute_mix_counts(2661, ratio)
        assert abs(got - published) <= 1, (ratio, got, published)


def test_mix_counts_exact_at_point_three_and_point_five():
    assert compute_mix_counts(2661, 0.3) == 1140
    assert compute_mix_counts(2661, 0.5) == 2661


def test_mix_counts_zero_ratio():
    assert compute_mix_counts(2661, 0.0) == 0


def test_mix_counts_rejects_bad_args():
    with pytest.raises(ConfigError):
        compute_mix_counts(100, 1.0)
    with pytest.raises(ConfigError):
        compute_mix_counts(100, -0.1)
    with pytest.raises(ConfigError):
        compute_mix_counts(-5, 0.3)


@given(
    st.integers(min_value=0, max_value=10000),
    st.floats(min_value=0.0, max_value=0.9, allow_nan=False),
    st.floats(min_value=0.0, max_value=0.09, allow_nan=False),
)
@settings(max_examples=200, deadline=None)
def test_mix_counts_monotone_in_ratio(n_real, ratio, bump):
    assert compute_mix_counts(n_real, ratio) <= compute_mix_counts(
        n_real, min(ratio + bump, 0.99)
    )


# ---------------------------------------------------------------- plan_mix


def test_plan_quotas_sum_and_proportion():
    real = make_real((40, 30, 30))
    pool = make_pool((500, 300, 200))
    plan = plan_mix(real, pool, 0.5)
    assert plan.n_real == 100
    assert plan.n_synth == 100
    assert sum(plan.quotas) == 100
    assert plan.quotas == (50, 30, 20)


def test_plan_largest_remainder_tie_goes_to_lower_class():
    real = make_real((1, 1, 0))  # n_real 2, ratio .5 -> n_synth 2
    pool = make_pool((1, 1, 2))  # exact quotas [0.5, 0.5, 1.0]
    plan = plan_mix(real, pool, 0.5)
    assert plan.quotas == (1, 0, 1)


def test_plan_zero_ratio():
    plan = plan_mix(make_real((4, 0, 0)), make_pool((1, 1, 1)), 0.0)
    assert plan.n_synth == 0
    assert plan.quotas == (0, 0, 0)


def test_plan_shortfall_is_reported():
    real = make_real((10, 0, 0))
    pool = make_pool((2, 1, 1))
    with pytest.raises(ConfigError) as exc:
        plan_mix(real, pool, 0.5)
    assert "shortfall 6" in str(exc.value)


# ------------------------------------------------------------ mixed dataset


def test_mixed_dataset_keeps_every_real_record_once():
    real = make_real((7, 6, 7))
    pool = make_pool((30, 30, 30))
    mixed = build_mixed_dataset(real, pool, 0.3, seed=4)
    ids = [r.clip_id for r in mixed]
    assert len(ids) == len(set(ids))
    real_ids = {r.clip_id for r in real}
    assert real_ids == {r.clip_id for r in mixed if r.clip_id in real_ids}
    plan = plan_mix(real, pool, 0.3, seed=4)
    assert len(mixed) == plan.n_real + plan.n_synth


def test_mixed_dataset_respects_quotas():
    real = make_real((10, 10, 10))
    pool = make_pool((40, 20, 20))
    plan = plan_mix(real, pool, 0.4, seed=0)
    mixed = build_mixed_dataset(real, pool, 0.4, seed=0)
    real_ids = {r.clip_id for r in real}
    for c in range(3):
        n = sum(1 for r in mixed if r.label == c and r.clip_id not in real_ids)
        assert n == plan.quotas[c]


def test_mixed_dataset_deterministic():
    real = make_real((5, 5, 5))
    pool = make_pool((20, 20, 20))
    a = build_mixed_dataset(real, pool, 0.5, seed=9)
    b = build_mixed_dataset(real, pool, 0.5, seed=9)
    assert [r.clip_id for r in a] == [r.clip_id for r in b]


def test_mixed_dataset_seed_changes_selection():
    real = make_real((5, 5, 5))
    pool = make_pool((200, 200, 200))
    a = {r.clip_id for r in build_mixed_dataset(real, pool, 0.5, seed=0)}
    b = {r.clip_id for r in build_mixed_dataset(real, pool, 0.5, seed=1)}
    assert a != b


def test_mixed_dataset_draws_only_from_pool():
    real = make_real((5, 0, 0))
    pool = make_pool((10, 10, 10))
    pool_ids = {r.clip_id for r in pool}
    real_ids = {r.clip_id for r in real}
    mixed = build_mixed_dataset(real, pool, 0.5, seed=2)
    for r in mixed:
        assert r.clip_id in pool_ids | real_ids
