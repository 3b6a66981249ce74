import numpy as np
import pytest

from conftest import fake_task, model_gradient_error, tiny_model
from typed_synth.model import VARIANTS, Model, ModelConfig
from typed_synth.operators import fill_hole, root_ppt
from typed_synth.train import golden_derivation


@pytest.fixture(scope="module")
def typed_model(small_dataset):
    return Model(ModelConfig.for_variant("typed", small_dataset, H=4, M=6, layers=1), seed=0)


def test_unknown_variant(small_dataset):
    with pytest.raises(ValueError):
        ModelConfig.for_variant("huge", small_dataset)


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_feature_widths(small_dataset, variant):
    cfg = ModelConfig.for_variant(variant, small_dataset, M=6, layers=1)
    m = Model(cfg, seed=0)
    task = small_dataset.tasks["train"][0]
    ctx = m.context(task)
    H, T = cfg.H, cfg.T
    width = 8 * H * T if cfg.typed else 4 * H * T
    assert ctx.feats.shape == (cfg.io_pairs, width)
    assert ctx.cond.shape == (cfg.M,)
    if cfg.typed:
        assert T == small_dataset.charmaps.max_len_either
        assert ctx.rule_types.shape == (len(m.rules), cfg.M * T)
    else:
        assert T == small_dataset.charmaps.max_len_io
        assert ctx.rule_types is None
    z, _ = m.scores(ctx, root_ppt(task.ty))
    assert z.shape == (1, len(m.rules))


def test_augmented_embeddings(typed_model, small_dataset):
    m = typed_model
    task = small_dataset.tasks["train"][0]
    ctx = m.context(task)
    ppt = fill_hole(root_ppt(task.ty), 0, next(r for r in m.rules if r.applied == 2))
    hole_aug, rule_aug = m.augmented_embeddings(ctx, ppt)
    D = m.cfg.M * (m.cfg.T + 1)
    assert hole_aug.shape == (2, D) and rule_aug.shape == (len(m.rules), D)
    z, _ = m.scores(ctx, ppt)
    np.testing.assert_allclose(hole_aug @ rule_aug.T, z, rtol=1e-4, atol=1e-5)


def test_augmented_embeddings_need_types(small_dataset):
    m = Model(ModelConfig.for_variant("vanilla", small_dataset, H=4, M=4, layers=1))
    with pytest.raises(ValueError):
        m.augmented_embeddings(m.context(small_dataset.tasks["train"][0]), root_ppt())


def test_mask_pins_the_root_type(small_dataset):
    m = Model(ModelConfig.for_variant("typed-mask", small_dataset, H=4, M=4, layers=1))
    task = small_dataset.tasks["train"][0]
    ctx = m.context(task)
    for st in golden_derivation(task.program, m.rules, task.ty):
        z, _ = m.scores(ctx, st.ppt)
        assert z[0, st.rule] > -1e8
        # the mask is computed against the task's type, not an unconstrained root
        assert (m.mask(st.ppt, [st.hole], task.ty)[0] <= m.mask(st.ppt, [st.hole])[0]).all()


def test_save_load_roundtrip(tmp_path, typed_model):
    sha = typed_model.save(tmp_path)
    back = Model.load(tmp_path)
    assert back.cfg == typed_model.cfg
    assert set(back.params) == set(typed_model.params)
    for k, v in typed_model.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    assert back.save(tmp_path / "again") == sha


def test_init_is_seeded(small_dataset):
    cfg = ModelConfig.for_variant("vanilla", small_dataset, H=4, M=4, layers=1)
    a, b, c = Model(cfg, seed=1), Model(cfg, seed=1), Model(cfg, seed=2)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["r3nn.omega"], c.params["r3nn.omega"])


GRAD_TASK = dict(program="(just (zero))", ty="Maybe a", pairs=[("()", "Right 0"), ("()", "Left X")])


@pytest.mark.parametrize("variant", ["vanilla", "typed", "typed-mask", "anyhole"])
def test_full_pipeline_gradients(variant):
    opts = {k: v for k, v in VARIANTS[variant].items() if k != "H"}
    m = tiny_model(dict(opts, variant=variant))
    assert model_gradient_error(m, fake_task(**GRAD_TASK), per_param=3) < 1e-3
