import math

import numpy as np
import pytest

from srtr.config import preset
from srtr.errors import ContractError, LoadError, NumericError
from srtr.losses import COMPONENTS
from srtr.model import TAU_PARAM
from srtr.scenegen import generate_dataset
from srtr.tensor import ParamStore
from srtr.train import (
    AdamW,
    batch_order,
    compute_objective,
    format_log_line,
    init_state,
    load_checkpoint,
    lr_schedule,
    parse_log_line,
    read_checkpoint_meta,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def tiny():
    cfg = preset("gradcheck")
    return cfg, generate_dataset(4, cfg.data, base_seed=1)


def test_step_zero_components_reconcile(tiny):
    cfg, scenes = tiny
    state = init_state(cfg, 0)
    br, _ = compute_objective(state.model, scenes, state.text, state.prototypes)
    assert set(br.components) == set(COMPONENTS)
    recon = sum(br.weights[k] * float(v.data) for k, v in br.components.items())
    assert math.isfinite(br.total.item())
    assert abs(recon - br.total.item()) < 1e-9


def test_lambda_zero_removes_alignment_from_total(tiny):
    cfg, scenes = tiny
    off = cfg.replace(loss={"lambda_vla": 0.0})
    state = init_state(off, 0)
    br, _ = compute_objective(state.model, scenes, state.text, state.prototypes)
    rest = sum(br.weights[k] * float(v.data) for k, v in br.components.items() if k != "vla")
    assert br.total.item() == pytest.approx(rest, abs=1e-12)


def test_learning_rate_groups():
    cfg = preset("desk").replace(optim={"lr": 1e-3, "lr_encoder": 2e-4, "lr_tau": 5e-2})
    lr = lr_schedule(cfg)
    assert lr(TAU_PARAM) == 5e-2
    assert lr("encoder.proj0.w") == 2e-4
    assert lr("sr.p.layer0.attn.q.w") == 1e-3


def test_weight_decay_skips_vectors():
    store = ParamStore(0)
    w = store.add("w", np.ones((2, 2)))
    b = store.add("b", np.ones(2))
    for t in (w, b):
        t.grad = np.zeros_like(t.data)
    AdamW(store, lambda _: 0.1, weight_decay=0.5).step()
    assert np.allclose(w.data, 0.95) and np.array_equal(b.data, np.ones(2))


def test_gradient_clipping_bounds_the_update():
    store = ParamStore(0)
    w = store.add("w", np.zeros((1, 1)))
    w.grad = np.array([[100.0]])
    opt = AdamW(store, lambda _: 1.0, weight_decay=0.0, grad_clip=1.0)
    assert opt.step() == pytest.approx(100.0)
    assert w.data[0, 0] == pytest.approx(-1.0, rel=1e-6)


def test_batch_order_covers_each_epoch():
    order = batch_order(10, 4, 6, seed=0)
    assert len(order) == 6 and all(len(b) == 4 for b in order)
    first_epoch = np.concatenate(order[:2])
    assert len(set(first_epoch.tolist())) == 8
    assert [b.tolist() for b in order] == [b.tolist() for b in batch_order(10, 4, 6, seed=0)]


def test_log_line_round_trip():
    line = format_log_line(7, {"total": 0.1 + 0.2, "anchors": 12})
    assert line.startswith("7\t")
    step, values = parse_log_line(line)
    assert step == 7 and values["total"] == 0.1 + 0.2 and values["anchors"] == 12


def test_training_reduces_loss_and_logs_each_step(tiny, tmp_path):
    cfg, scenes = tiny
    cfg = cfg.replace(optim={"lr": 3e-3, "lr_encoder": 3e-3})
    log = tmp_path / "m.log"
    state = train(cfg, scenes, steps=30, seed=0, log_path=log)
    lines = log.read_text().splitlines()
    assert len(lines) == 30 and state.step == 30
    first, last = parse_log_line(lines[0])[1], parse_log_line(lines[-1])[1]
    assert last["total"] < first["total"]
    assert all(k in first for k in ("tau", "grad_norm", "anchors", *COMPONENTS))
    assert state.prototypes.counts.sum() > 0


def test_non_finite_loss_aborts_with_step(tiny):
    cfg, scenes = tiny
    state = init_state(cfg, 0)
    state.model.params["heads.cls_p.b"].data[:] = np.nan
    with pytest.raises(NumericError, match="step 0"):
        train(cfg, scenes, steps=1, state=state)


def test_checkpoint_refuses_other_config_unless_forced(tiny, tmp_path):
    cfg, scenes = tiny
    state = train(cfg, scenes, steps=1, seed=0)
    path = save_checkpoint(state, tmp_path / "c.npz")
    meta, _ = read_checkpoint_meta(path)
    assert meta["config_hash"] == cfg.digest() and meta["step"] == 1
    other = cfg.replace(loss={"lambda_vla": 0.1})
    with pytest.raises(ContractError, match="config hash"):
        load_checkpoint(path, other)
    assert load_checkpoint(path, other, force=True).model.cfg.loss.lambda_vla == 0.1
    assert load_checkpoint(path).step == 1


def test_corrupt_checkpoint_is_a_load_error(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"not a zip file")
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "bad.npz")
    with pytest.raises(LoadError, match="not found"):
        load_checkpoint(tmp_path / "missing.npz")
