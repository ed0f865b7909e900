"""Training harness: config parsing, providers, checkpoints, determinism."""

import dataclasses
import json

import numpy as np
import pytest

from gewild import train as train_mod
from gewild import video as video_mod
from gewild.data import ManifestRecord
from gewild.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    TrainingError,
)
from gewild.model import GroupEmotionModel
from gewild.train import (
    ArrayFeatureProvider,
    DiskFeatureProvider,
    TrainConfig,
    _config_hash,
    evaluate_accuracy,
    load_checkpoint,
    load_train_config,
    save_checkpoint,
    train,
)


def toy_records(n=6):
    return [
        ManifestRecord(f"c{i}", f"/x/c{i}", f"/x/c{i}.wav", i % 3, "train",
                       "synthetic")
        for i in range(n)
    ]


def toy_provider(records, n_frames=2, seed=0):
    rng = np.random.default_rng(seed)
    table = {}
    for r in records:
        frames = rng.normal(size=(n_frames, 3, 224, 224)).astype(np.float32) * 0.1
        mels = rng.normal(size=(n_frames, 128, 251)).astype(np.float32) * 0.1
        table[r.clip_id] = (frames, mels)
    return ArrayFeatureProvider(table)


def toy_cfg(**kw):
    kw.setdefault("lr", 0.01)
    kw.setdefault("freeze_epochs", 0)
    kw.setdefault("epochs", 2)
    kw.setdefault("batch_size", 3)
    kw.setdefault("n_frames", 2)
    kw.setdefault("seed", 0)
    return TrainConfig(**kw)


def params_snapshot(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def snapshots_equal(a, b):
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


# ------------------------------------------------------------------- config


def test_config_validation():
    for bad in (
        dict(lr=-1e-3),
        dict(freeze_epochs=5, epochs=3),
        dict(batch_size=0),
        dict(n_frames=0),
        dict(use_video=False, use_audio=False),
        dict(prefetch=0),
        dict(epochs=-1, freeze_epochs=-2),
    ):
        with pytest.raises(ConfigError):
            toy_cfg(**bad)


def test_config_allows_zero_lr():
    assert toy_cfg(lr=0.0).lr == 0.0


def test_config_file_parsing(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(
        "# overfit preset\n"
        "\n"
        "lr = 0.02\n"
        "epochs=5\n"
        "freeze_epochs = 0\n"
        "batch_size = 10\n"
        "n_frames=2\n"
        "branches = audio, video\n"
        "seed = 7\n"
    )
    cfg = load_train_config(path)
    assert cfg.lr == 0.02
    assert cfg.epochs == 5
    assert cfg.batch_size == 10
    assert cfg.use_video and cfg.use_audio
    assert cfg.seed == 7


def test_config_file_single_branch(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("branches = audio\nfreeze_epochs = 0\n")
    cfg = load_train_config(path)
    assert cfg.use_audio and not cfg.use_video


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("lr = 0.1\nmomentum = 0.9\n")
    with pytest.raises(ConfigError) as exc:
        load_train_config(path)
    assert ":2:" in str(exc.value)


def test_config_file_bad_value(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epochs = soon\n")
    with pytest.raises(ConfigError) as exc:
        load_train_config(path)
    assert "soon" in str(exc.value)


def test_config_file_unknown_branch(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("branches = video, text\n")
    with pytest.raises(ConfigError) as exc:
        load_train_config(path)
    assert "text" in str(exc.value)


def test_config_file_requires_key_value(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ConfigError):
        load_train_config(path)


# -------------------------------------------------------------- providers


def test_disk_provider_writes_cache(mini_dataset, tmp_path):
    _, records = mini_dataset
    provider = DiskFeatureProvider(2, cache_dir=tmp_path)
    frames, mels = provider.features(records[0])
    assert frames.shape == (2, 3, 224, 224)
    assert mels.shape == (2, 128, 251)
    cache_file = tmp_path / f"{records[0].clip_id}_n2.gewt"
    assert cache_file.is_file()
    from gewild.gewt import load_archive

    stored = load_archive(cache_file)
    assert set(stored) == {"frames", "mel"}
    assert np.array_equal(stored["frames"], frames)
    assert np.array_equal(stored["mel"], mels)


def test_disk_provider_serves_from_cache(mini_dataset, tmp_path, monkeypatch):
    _, records = mini_dataset
    provider = DiskFeatureProvider(2, cache_dir=tmp_path)
    first = provider.features(records[1])

    def boom(*a, **kw):
        raise AssertionError("recompute attempted despite a warm cache")

    monkeypatch.setattr(video_mod, "clip_to_frame_sequence", boom)
    monkeypatch.setattr(train_mod.audio_mod, "clip_to_mel_sequence", boom)
    again = provider.features(records[1])
    assert np.array_equal(first[0], again[0])
    assert np.array_equal(first[1], again[1])


def test_disk_provider_cache_key_includes_frame_count(mini_dataset, tmp_path):
    _, records = mini_dataset
    DiskFeatureProvider(2, cache_dir=tmp_path).features(records[2])
    DiskFeatureProvider(3, cache_dir=tmp_path).features(records[2])
    assert (tmp_path / f"{records[2].clip_id}_n2.gewt").is_file()
    assert (tmp_path / f"{records[2].clip_id}_n3.gewt").is_file()


def test_disk_provider_audio_only_pool_record(pool_manifest, tmp_path):
    from gewild.data import load_manifest

    record = load_manifest(pool_manifest)[0]
    assert record.frames == "-"
    provider = DiskFeatureProvider(2, use_video=False, cache_dir=tmp_path)
    frames, mels = provider.features(record)
    assert frames is None
    assert mels.shape == (2, 128, 251)


def test_disk_provider_rejects_missing_modalities(pool_manifest):
    from gewild.data import load_manifest

    record = load_manifest(pool_manifest)[0]
    with pytest.raises(DataError) as exc:
        DiskFeatureProvider(2).features(record)
    assert "no frame directory" in str(exc.value)

    dummy = ManifestRecord("d", "/somewhere", "-", 0, "train", "real")
    with pytest.raises(DataError) as exc:
        DiskFeatureProvider(2, use_video=False).features(dummy)
    assert "no wav" in str(exc.value)


def test_disk_provider_merges_modalities_into_one_cache(
    pool_manifest, tmp_path
):
    from gewild.data import load_manifest
    from gewild.gewt import load_archive

    record = load_manifest(pool_manifest)[1]
    audio_only = DiskFeatureProvider(2, use_video=False, cache_dir=tmp_path)
    audio_only.features(record)
    cache_file = tmp_path / f"{record.clip_id}_n2.gewt"
    assert set(load_archive(cache_file)) == {"mel"}


def test_array_provider_missing_id():
    provider = ArrayFeatureProvider({})
    with pytest.raises(DataError):
        provider.features(toy_records(1)[0])


# ------------------------------------------------------------- config hash


def test_config_hash_ignores_bookkeeping(micro_cfg):
    mc = micro_cfg()
    a = toy_cfg(epochs=2, checkpoint_dir=None, prefetch=2)
    b = toy_cfg(epochs=40, checkpoint_dir="/elsewhere", prefetch=8)
    assert _config_hash(mc, a) == _config_hash(mc, b)


def test_config_hash_tracks_trajectory_fields(micro_cfg):
    mc = micro_cfg()
    base = toy_cfg()
    assert _config_hash(mc, base) != _config_hash(mc, toy_cfg(lr=0.02))
    assert _config_hash(mc, base) != _config_hash(mc, toy_cfg(seed=1))
    assert _config_hash(mc, base) != _config_hash(micro_cfg(d_model=64), base)


# ------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(micro_cfg, tmp_path):
    cfg = micro_cfg()
    model = GroupEmotionModel(cfg, seed=0)
    path = tmp_path / "ck.gewt"
    save_checkpoint(path, model, toy_cfg(), epoch=3, val_accuracy=0.75)

    other = GroupEmotionModel(cfg, seed=1)
    meta = load_checkpoint(path, other)
    assert snapshots_equal(params_snapshot(model), params_snapshot(other))
    assert meta["epoch"] == 3
    assert meta["val_accuracy"] == 0.75
    assert meta["rng"] == {"seed": 0, "next_epoch": 4}
    assert meta["model_config"]["d_model"] == 32


def test_checkpoint_hash_refusal_and_force(micro_cfg, tmp_path):
    cfg = micro_cfg()
    model = GroupEmotionModel(cfg, seed=0)
    path = tmp_path / "ck.gewt"
    save_checkpoint(path, model, toy_cfg(), epoch=0, val_accuracy=0.5)
    wrong = _config_hash(cfg, toy_cfg(lr=0.5))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path, expect_hash=wrong)
    assert "force" in str(exc.value)
    meta = load_checkpoint(path, expect_hash=wrong, force=True)
    assert meta["epoch"] == 0


def test_checkpoint_missing_sidecar(micro_cfg, tmp_path):
    cfg = micro_cfg()
    model = GroupEmotionModel(cfg, seed=0)
    path = tmp_path / "ck.gewt"
    save_checkpoint(path, model, toy_cfg(), epoch=0, val_accuracy=0.0)
    path.with_suffix(".json").unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_sidecar_is_json(micro_cfg, tmp_path):
    cfg = micro_cfg()
    model = GroupEmotionModel(cfg, seed=0)
    path = tmp_path / "ck.gewt"
    save_checkpoint(path, model, toy_cfg(), epoch=1, val_accuracy=0.25)
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["config_hash"] == _config_hash(cfg, toy_cfg())
    assert meta["train_config"]["lr"] == 0.01


# ---------------------------------------------------------------- training


def test_train_requires_records(micro_cfg):
    model = GroupEmotionModel(micro_cfg(), seed=0)
    with pytest.raises(ConfigError):
        train(model, [], [], toy_cfg(), ArrayFeatureProvider({}))


def test_train_is_seed_deterministic(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    finals = []
    for _ in range(2):
        model = GroupEmotionModel(micro_cfg(), seed=0)
        train(model, records, [], toy_cfg(), provider)
        finals.append(params_snapshot(model))
    assert snapshots_equal(finals[0], finals[1])


def test_train_shuffle_seed_changes_result(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    finals = []
    for seed in (0, 1):
        model = GroupEmotionModel(micro_cfg(), seed=0)
        train(model, records, [], toy_cfg(seed=seed, epochs=1), provider)
        finals.append(params_snapshot(model))
    assert not snapshots_equal(finals[0], finals[1])


def test_train_lr_zero_leaves_params_bit_identical(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    before = params_snapshot(model)
    result = train(model, records, [], toy_cfg(lr=0.0, epochs=1), provider)
    assert snapshots_equal(before, params_snapshot(model))
    assert len(result.history) == 1


def test_freeze_schedule_pins_vit(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    before = params_snapshot(model)
    train(model, records, [], toy_cfg(freeze_epochs=1, epochs=1), provider)
    after = params_snapshot(model)
    vit = [n for n in before if n.startswith("video.vit.")]
    rest = [n for n in before if not n.startswith("video.vit.")]
    assert vit and rest
    assert all(np.array_equal(before[n], after[n]) for n in vit)
    assert any(not np.array_equal(before[n], after[n]) for n in rest)


def test_unfreeze_updates_vit(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    before = params_snapshot(model)
    train(model, records, [], toy_cfg(freeze_epochs=0, epochs=1), provider)
    after = params_snapshot(model)
    vit = [n for n in before if n.startswith("video.vit.")]
    assert any(not np.array_equal(before[n], after[n]) for n in vit)


def test_resume_reproduces_uninterrupted_run(micro_cfg, tmp_path):
    records = toy_records()
    provider = toy_provider(records)
    cfg_all = toy_cfg(epochs=3, checkpoint_dir=str(tmp_path / "full"))

    straight = GroupEmotionModel(micro_cfg(), seed=0)
    train(straight, records, [], cfg_all, provider)

    cfg_half = toy_cfg(epochs=2, checkpoint_dir=str(tmp_path / "half"))
    resumed = GroupEmotionModel(micro_cfg(), seed=0)
    train(resumed, records, [], cfg_half, provider)
    cfg_rest = toy_cfg(epochs=3, checkpoint_dir=str(tmp_path / "rest"))
    train(resumed, records, [], cfg_rest, provider,
          resume_from=tmp_path / "half" / "last.gewt")

    assert snapshots_equal(params_snapshot(straight), params_snapshot(resumed))


def test_resume_rejects_different_trajectory(micro_cfg, tmp_path):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    train(model, records, [], toy_cfg(epochs=1, checkpoint_dir=str(tmp_path)),
          provider)
    with pytest.raises(CheckpointError):
        train(model, records, [], toy_cfg(epochs=2, lr=0.123), provider,
              resume_from=tmp_path / "last.gewt")


def test_non_finite_loss_aborts_with_context(micro_cfg):
    records = toy_records(3)
    provider = toy_provider(records)
    bad = provider.table[records[0].clip_id]
    provider.table[records[0].clip_id] = (
        np.full_like(bad[0], np.nan), bad[1]
    )
    model = GroupEmotionModel(micro_cfg(), seed=0)
    with pytest.raises(TrainingError) as exc:
        train(model, records, [], toy_cfg(epochs=1, batch_size=3), provider)
    msg = str(exc.value)
    assert "epoch 0" in msg
    assert "c0" in msg


def test_provider_failure_propagates_through_prefetch(micro_cfg):
    records = toy_records(4)
    provider = toy_provider(records[:2])  # last two ids missing
    model = GroupEmotionModel(micro_cfg(), seed=0)
    with pytest.raises(DataError):
        train(model, records, [], toy_cfg(epochs=1, batch_size=2, seed=3),
              provider)


def test_metrics_log_format(micro_cfg, tmp_path):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    log_path = tmp_path / "metrics.tsv"
    train(model, records[:4], records[4:], toy_cfg(epochs=2), provider,
          log_path=log_path)
    lines = log_path.read_text().strip().split("\n")
    assert len(lines) == 4  # train + val per epoch
    for line in lines:
        epoch, split, loss, acc = line.split("\t")
        assert split in ("train", "val")
        assert int(epoch) in (0, 1)
        float(loss), float(acc)
    assert [l.split("\t")[1] for l in lines] == ["train", "val"] * 2


def test_history_and_best_tracking(micro_cfg, tmp_path):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    result = train(model, records[:4], records[4:],
                   toy_cfg(epochs=2, checkpoint_dir=str(tmp_path)), provider)
    assert (tmp_path / "last.gewt").is_file()
    assert (tmp_path / "best.gewt").is_file()
    assert result.last_checkpoint == str(tmp_path / "last.gewt")
    last_meta = load_checkpoint(tmp_path / "last.gewt")
    assert last_meta["epoch"] == 1
    best_meta = load_checkpoint(tmp_path / "best.gewt")
    assert best_meta["epoch"] == result.best_epoch
    assert best_meta["val_accuracy"] == result.best_val_accuracy
    val_rows = [h for h in result.history if h["split"] == "val"]
    assert result.best_val_accuracy == max(h["accuracy"] for h in val_rows)


def test_stop_at_accuracy_short_circuits(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    result = train(model, records, [], toy_cfg(epochs=50), provider,
                   stop_at_accuracy=0.0)
    epochs_seen = {h["epoch"] for h in result.history}
    assert epochs_seen == {0}


def test_evaluate_accuracy_empty():
    loss, acc = evaluate_accuracy(None, [], None, toy_cfg())
    assert np.isnan(loss) and np.isnan(acc)


def test_evaluate_accuracy_counts(micro_cfg):
    records = toy_records()
    provider = toy_provider(records)
    model = GroupEmotionModel(micro_cfg(), seed=0)
    loss, acc = evaluate_accuracy(model, records, provider, toy_cfg())
    assert 0.0 <= acc <= 1.0
    assert np.isfinite(loss)
