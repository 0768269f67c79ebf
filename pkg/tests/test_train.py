import dataclasses

import numpy as np
import pytest

from varganlab import zoo
from varganlab.train import (CheckpointError, ConfigError, RunHistory, TrainConfig, Trainer,
                             TrainingAborted, bundle_from_dict, bundle_to_dict, checkpoint,
                             restore, train)

TINY = dict(width=1 / 64, train_size=240, eval_size=300, epochs=2, latent_dim=8)


def tiny(**kw):
    return TrainConfig(**{**TINY, **kw})


def test_defaults_follow_protocol():
    c = TrainConfig()
    assert (c.epochs, c.train_size, c.eval_size, c.lr) == (50, 100_000, 26_000, 2e-4)
    assert (c.C, c.mcr_L, c.mcr_S1, c.mcr_S2) == (1.0, 1.0, 10.0, 5.0)
    assert c.batch_size == 120 and c.saturating


@pytest.mark.parametrize("kw,field", [
    (dict(epochs=0), "epochs"),
    (dict(variant="gdpp"), "variant"),
    (dict(variant="pacgan", packing=7), "packing"),
    (dict(variant="vanilla", packing=4), "packing"),
    (dict(C=0.0), "C"),
    (dict(mcr_S1=-1.0), "mcr"),
    (dict(conditional=3, dataset="binary9"), "conditional"),
    (dict(conditional=2), "conditional"),
    (dict(train_size=10), "train_size"),
    (dict(epochs="5"), "epochs"),
    (dict(saturating=1), "saturating"),
    (dict(batch_size=1), "batch_size"),
    (dict(connectivity=6), "connectivity"),
])
def test_config_errors_name_the_field(kw, field):
    with pytest.raises(ConfigError, match=field):
        tiny(**kw).validate()


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="epohcs"):
        TrainConfig.from_dict({"epohcs": 3})
    assert TrainConfig.from_dict(tiny().to_dict()) == tiny()


def test_one_step_per_network():
    cfg = tiny(epochs=1, train_size=120, eval_size=50)
    hist, bundle = train(cfg)
    assert hist.generator_updates == 1
    for opt in bundle.optimizers.values():
        assert opt.step == 1
    assert len(hist.records) == 1 and hist.records[0]["step"] == 1


def test_epoch_accounting_and_history_shape():
    hist, _ = train(tiny(epochs=3, train_size=370))  # 3 steps per epoch
    assert hist.generator_updates == 9
    assert [r["step"] for r in hist.records] == [3, 6, 9]
    walls = [r["wall_seconds"] for r in hist.records]
    assert walls == sorted(walls)
    hist, _ = train(tiny(epochs=2, eval_every=2))
    assert [r["step"] for r in hist.records] == [2, 4]


def params_of(bundle):
    return {n: [p.copy() for p in net.params()] for n, net in bundle.nets().items()}


def changed(before, after):
    return {n for n in before if any(not np.array_equal(a, b) for a, b in zip(before[n], after[n]))}


@pytest.mark.parametrize("variant", ["vargan", "minibatch"])
def test_update_isolation(variant):
    t = Trainer(tiny(variant=variant))
    idx = np.arange(120)
    d_nets = {"discriminator", "discriminator_head"} & set(t.bundle.nets())
    before = params_of(t.bundle)
    t.d_step(idx)
    assert changed(before, params_of(t.bundle)) == d_nets
    if t.bundle.has_varnet:
        before = params_of(t.bundle)
        t.v_step(idx)
        assert changed(before, params_of(t.bundle)) == {"varnet"}
    before = params_of(t.bundle)
    t.g_step()
    assert changed(before, params_of(t.bundle)) == {"generator"}


def test_limited_batches_follow_schedule():
    t = Trainer(tiny(variant="vargan", dataset="ring8"))
    for _ in range(20):
        lim = t.limited_batch()
        assert lim.n in (1, 2, 3, 4, 5, 6)
        assert len(np.unique(lim.samples, axis=0)) == lim.n


@pytest.mark.parametrize("variant", zoo.VARIANTS)
def test_every_variant_trains_deterministically(variant, tmp_path):
    cfg = tiny(variant=variant)
    h1, _ = train(cfg)
    h2, _ = train(cfg)
    h1.to_csv(tmp_path / "a.csv")
    h2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    h3, _ = train(dataclasses.replace(cfg, seed=1))
    h3.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_bytes() != (tmp_path / "a.csv").read_bytes()


@pytest.mark.parametrize("classes", [2, 8])
def test_conditional_binary_run(classes):
    hist, bundle = train(tiny(dataset="binary7", variant="vargan", conditional=classes,
                              train_size=120, epochs=1, eval_size=400))
    rec = hist.final
    assert {"hp_unique", "lp_unique", "accuracy", "accuracy_hp", "accuracy_lp", "kl"} <= set(rec)
    assert 0 <= rec["accuracy"] <= 1
    assert bundle.generator.fan_in == 8 + classes


def test_history_csv_round_trip(tmp_path):
    hist, _ = train(tiny())
    hist.to_csv(tmp_path / "h.csv")
    back = RunHistory.from_csv(tmp_path / "h.csv")
    for a, b in zip(hist.records, back.records):
        assert {k: v for k, v in a.items() if k != "wall_seconds"} == b
    assert "wall_seconds" not in (tmp_path / "h.csv").read_text().splitlines()[0]


def test_history_steps_must_increase():
    h = RunHistory()
    h.append({"step": 2})
    with pytest.raises(ValueError):
        h.append({"step": 2})


def test_nonfinite_loss_aborts(monkeypatch):
    monkeypatch.setattr(zoo, "discriminator_loss", lambda *a: float("nan"))
    with pytest.raises(TrainingAborted, match="d_loss"):
        train(tiny())


@pytest.mark.parametrize("variant", ["vanilla", "minibatch", "pacvargan"])
def test_checkpoint_round_trip(variant, tmp_path):
    _, bundle = train(tiny(variant=variant, epochs=1))
    checkpoint(bundle, tmp_path / "c.json")
    back = restore(tmp_path / "c.json")
    z = np.random.default_rng(0).normal(size=(120, 8))
    x = np.random.default_rng(1).uniform(size=(120, 2))
    for name, net in bundle.nets().items():
        net.eval()
        back.nets()[name].eval()
    g1 = zoo.generator_forward(bundle, z)[0]
    g2 = zoo.generator_forward(back, z)[0]
    assert np.abs(g1 - g2).max() < 1e-12
    d1 = zoo.discriminator_forward(bundle, x)[0]
    d2 = zoo.discriminator_forward(back, x)[0]
    assert np.abs(d1 - d2).max() < 1e-12
    assert ("varnet" in bundle_to_dict(bundle)["nets"]) == variant.endswith("vargan")
    for name in bundle.optimizers:
        assert back.optimizers[name].step == bundle.optimizers[name].step


def test_checkpoint_faults(tmp_path):
    _, bundle = train(tiny(variant="vanilla", epochs=1))
    path = tmp_path / "c.json"
    checkpoint(bundle, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="corrupt"):
        restore(path)
    d = bundle_to_dict(bundle)
    with pytest.raises(CheckpointError):
        bundle_from_dict({**d, "format_version": 99})
    with pytest.raises(CheckpointError):
        bundle_from_dict({**d, "data_dim": 3})
    with pytest.raises(CheckpointError):
        bundle_from_dict({**d, "variant": "vargan"})


def test_balanced_epoch_order():
    t = Trainer(tiny(dataset="binary7", conditional=2, balanced=True, train_size=120))
    order = t.epoch_order()
    assert len(order) == t.steps_per_epoch * t.B
    for batch in order.reshape(-1, t.B):
        assert np.bincount(t.class_labels[batch], minlength=2).tolist() == [60, 60]
    fake = t._fake_labels(12_000)
    assert abs(fake.mean() - 0.5) < 0.02
    with pytest.raises(ConfigError, match="balanced"):
        tiny(balanced=True).validate()
