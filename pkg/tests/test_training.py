import numpy as np
import pytest
import torch

from cuereenact.errors import ValidationError
from cuereenact.model import GeneratorConfig, weight_hash
from cuereenact.training import (
    LOSS_COLUMNS,
    ROLE_GA,
    ROLE_LA2D,
    ROLE_LA3D,
    ROLE_LA3D_INPUT,
    TrainConfig,
    make_clips,
    make_datasets,
    objective_residual,
    pretrain_base,
    read_loss_table,
    sample_masks,
    substream,
    train_stage_2d,
    train_stage_3d,
    write_loss_table,
)

TINY = TrainConfig(
    epochs=2, n_clips=8, n_val=4, batch_size=4, clip_seconds=1.0, learning_rate=3e-3,
    model=GeneratorConfig(d=8, n_blocks=1, n_max=20, kernel=3),
)


@pytest.fixture(scope="module")
def data():
    return make_datasets(TINY)


@pytest.fixture(scope="module")
def base(data):
    return pretrain_base(TINY, data).base


@pytest.fixture(scope="module")
def stage3d(base, data):
    return train_stage_3d(base, TINY, data)


def test_paper_defaults():
    c = TrainConfig()
    assert (c.lambda1, c.lambda2, c.learning_rate, c.batch_size, c.epochs) == (0.01, 10.0, 2e-4, 64, 30)


def test_config_validation():
    for bad in ({"lambda1": -1.0}, {"learning_rate": -1e-3}, {"stage": "4d"}, {"mask_ratio": 1.5},
                {"clip_seconds": 100.0}):
        with pytest.raises(ValidationError):
            TINY.with_(**bad).validate()
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"learning_rat": 1.0})


def test_config_dict_roundtrip():
    d = TINY.to_dict()
    assert TrainConfig.from_dict(d) == TINY


def test_substreams_are_independent_and_stable():
    a = substream(3, "camera", 1).integers(0, 2**31, size=4)
    assert np.array_equal(a, substream(3, "camera", 1).integers(0, 2**31, size=4))
    assert not np.array_equal(a, substream(3, "camera", 2).integers(0, 2**31, size=4))
    assert not np.array_equal(a, substream(4, "camera", 1).integers(0, 2**31, size=4))


def test_masks_never_empty():
    rng = np.random.default_rng(0)
    m = sample_masks(50, 7, 0.0, rng)
    assert m.any(dim=1).all()


def test_corpus_is_deterministic():
    a, b = make_clips(4, 1, 1.0), make_clips(4, 1, 1.0)
    assert torch.equal(a.poses, b.poses) and torch.equal(a.text, b.text)


def test_stage3d_freezes_base_and_logs_terms(base, data):
    before = weight_hash(base)
    st = train_stage_3d(base, TINY, data)
    assert weight_hash(st.base) == before
    assert set(st.adapters) == {ROLE_LA3D, ROLE_GA}
    row = st.history[0]
    assert set(LOSS_COLUMNS) <= set(row)
    assert np.isnan(row["L_3D"]) and np.isfinite(row["L_O"])
    assert st.weights == {"L_base": 1.0, "L_O": 0.01, "L_3D": 0.0}


def test_objective_accounting(stage3d, base, data):
    st2 = train_stage_2d(base, stage3d, TINY, data)
    for st in (stage3d, st2):
        for row in st.history:
            assert objective_residual(row, st.weights) < 1e-9
    assert st2.weights == {"L_base": 1.0, "L_O": 0.01, "L_3D": 10.0}


def test_lambda1_zero_logs_but_excludes(base, data):
    st = train_stage_3d(base, TINY.with_(lambda1=0.0), data)
    assert all(np.isfinite(r["L_O"]) for r in st.history)
    assert all(r["total"] == r["L_base"] for r in st.history)


def test_zero_lr_leaves_weights_unchanged(base, data):
    cfg = TINY.with_(learning_rate=0.0, epochs=0)
    ref = train_stage_3d(base, cfg, data)
    one = train_stage_3d(base, TINY.with_(learning_rate=0.0, epochs=1, n_clips=4), make_datasets(
        TINY.with_(n_clips=4)))
    assert len(one.history) == 1
    assert one.hashes() == ref.hashes()


def test_stage2d_freezes_teacher(stage3d, base, data):
    h = stage3d.hashes()
    st = train_stage_2d(base, stage3d, TINY, data)
    after = st.hashes()
    assert after[ROLE_LA3D] == h[ROLE_LA3D] and after["base"] == h["base"]
    assert after[ROLE_GA] != h[ROLE_GA]
    assert st.inference_adapter == ROLE_LA2D


def test_freeze_3dga(base, data):
    s3 = train_stage_3d(base, TINY, data)
    h = s3.hashes()
    st = train_stage_2d(base, s3, TINY.with_(freeze_3dga=True), data)
    assert st.hashes()[ROLE_GA] == h[ROLE_GA]


def test_ablations(stage3d, base, data):
    st = train_stage_2d(base, stage3d, TINY.with_(no_L3d=True), data)
    assert st.weights["L_3D"] == 0.0
    assert all(np.isfinite(r["L_3D"]) and r["total"] == r["L_base"] + 0.01 * r["L_O"] for r in st.history)
    st = train_stage_2d(base, stage3d, TINY.with_(use_3d_input=True), data)
    assert ROLE_LA3D_INPUT in st.adapters and st.inference_adapter == ROLE_LA3D_INPUT
    st = train_stage_3d(base, TINY.with_(no_3dga=True), data)
    assert ROLE_GA not in st.adapters and all(np.isnan(r["L_O"]) for r in st.history)


def test_stage2d_requires_stage1_unless_cold_start(base, data):
    with pytest.raises(ValidationError):
        train_stage_2d(base, None, TINY, data)
    with pytest.raises(ValidationError):
        train_stage_2d(base, None, TINY.with_(allow_cold_start=True), data)
    st = train_stage_2d(base, None, TINY.with_(no_L3d=True, allow_cold_start=True), data)
    assert all(np.isnan(r["L_3D"]) for r in st.history)


def test_determinism(base, data):
    a = train_stage_3d(base, TINY, data)
    b = train_stage_3d(base, TINY, data)
    rows = lambda st: np.array([[r[k] for k in LOSS_COLUMNS] for r in st.history])
    np.testing.assert_array_equal(rows(a), rows(b))  # NaN marks inactive terms on both sides
    assert a.hashes() == b.hashes()


def test_short_run_improves_base_loss(data):
    cfg = TINY.with_(epochs=6)
    st = pretrain_base(cfg, data)
    first = np.mean([r["L_base"] for r in st.history[:2]])
    last = np.mean([r["L_base"] for r in st.history[-2:]])
    assert last < first


def test_loss_table_roundtrip(stage3d, tmp_path):
    write_loss_table(stage3d.history, tmp_path / "l.csv")
    rows = read_loss_table(tmp_path / "l.csv")
    assert len(rows) == len(stage3d.history)
    assert list(rows[0]) == list(LOSS_COLUMNS)
    assert rows[-1]["L_base"] == stage3d.history[-1]["L_base"]
