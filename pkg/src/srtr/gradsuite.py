"""Finite-difference checks for every differentiable op and the full objective."""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .boxes import giou
from .config import preset
from .linguistic import PrototypeMemory
from .losses import supcon_loss, vla_loss, weighted_cross_entropy
from .nn import AttentionConfig, ffn_block, init_ffn_block, init_mha, mha
from .scenegen import generate_dataset
from .tensor import Tensor
from .triplet_init import roi_pool

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _leaf(rng, shape, lo=None, hi=None, away_from=None, gap=0.05):
    if lo is None:
        x = rng.normal(size=shape)
    else:
        x = rng.uniform(lo, hi, size=shape)
    if away_from is not None:  # keep clear of the kink
        near = np.abs(x - away_from) < gap
        x = np.where(near, away_from + np.sign(x - away_from + 1e-12) * gap * 2, x)
    return Tensor(x, requires_grad=True)


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    cases = {}

    def case(name, build, *leaves):
        proj_rng = np.random.default_rng(zlib.crc32(name.encode()))
        w_cache = {}

        def fn():
            out = build(*leaves)
            if out.data.size == 1:
                return T.tsum(out)
            if "w" not in w_cache:
                w_cache["w"] = proj_rng.normal(size=out.shape)
            return T.tsum(out * w_cache["w"])

        cases[name] = (fn, list(leaves))

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4,))
    case("add", lambda x, y: x + y, a, b)
    case("sub", lambda x, y: y - x, _leaf(rng, (2, 3, 4)), _leaf(rng, (3, 1)))
    case("mul", lambda x, y: x * y, _leaf(rng, (3, 4)), _leaf(rng, (1, 4)))
    case("div", lambda x, y: x / y, _leaf(rng, (3, 4)), _leaf(rng, (3, 4), 0.5, 2.0))
    case("neg", lambda x: -x, _leaf(rng, (5,)))
    case("square", T.square, _leaf(rng, (3, 3)))
    case("abs", T.abs_, _leaf(rng, (4, 4), away_from=0.0))
    case("exp", T.exp, _leaf(rng, (3, 4)))
    case("log", T.log, _leaf(rng, (3, 4), 0.2, 3.0))
    case("relu", T.relu, _leaf(rng, (4, 5), away_from=0.0))
    case("sigmoid", T.sigmoid, _leaf(rng, (4, 5)))
    x = _leaf(rng, (4, 5))
    y = Tensor(x.data + np.where(rng.random((4, 5)) < 0.5, 0.3, -0.3), requires_grad=True)
    case("maximum", T.maximum, x, y)
    case("minimum", T.minimum, _leaf(rng, (4, 5)), Tensor(y.data.copy(), requires_grad=True))
    c = _leaf(rng, (6, 6), -2, 2)
    c.data[np.abs(np.abs(c.data) - 1.0) < 0.05] = 0.5
    case("clamp", lambda t: T.clamp(t, -1.0, 1.0), c)
    case("matmul", T.matmul, _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 5)))
    case("matmul_batched", T.matmul, _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 2)))
    case("reshape", lambda t: T.reshape(t, (6, 4)), _leaf(rng, (2, 3, 4)))
    case("transpose", lambda t: T.transpose(t, (2, 0, 1)), _leaf(rng, (2, 3, 4)))
    case("swapaxes", lambda t: T.swapaxes(t, -1, -3), _leaf(rng, (2, 3, 4)))
    case("getitem_slice", lambda t: t[1:, ::2], _leaf(rng, (4, 5)))
    idx = np.array([0, 2, 2, 3])
    case("getitem_fancy", lambda t: t[idx, 1:], _leaf(rng, (4, 5)))
    case("concat", lambda p, q: T.concat([p, q], axis=-1), _leaf(rng, (2, 3)), _leaf(rng, (2, 2)))
    case("split", lambda t: T.split(t, 3, axis=-1)[1] * 2.0 + T.split(t, 3, axis=-1)[2],
         _leaf(rng, (2, 6)))
    case("sum", lambda t: T.tsum(t, axis=1, keepdims=True), _leaf(rng, (3, 4, 2)))
    case("mean", lambda t: T.mean(t, axis=(0, 2)), _leaf(rng, (3, 4, 2)))
    case("softmax", lambda t: T.softmax(t, axis=-1), _leaf(rng, (3, 5)))
    case("log_softmax", lambda t: T.log_softmax(t, axis=0), _leaf(rng, (3, 5)))
    mask = rng.random((4, 6)) < 0.6
    mask[:, 0] = True
    case("logsumexp", lambda t: T.logsumexp(t, axis=-1, mask=mask), _leaf(rng, (4, 6)))
    case("l2_normalize", T.l2_normalize, _leaf(rng, (3, 5)))
    case("layer_norm", T.layer_norm, _leaf(rng, (2, 3, 6)), _leaf(rng, (6,)), _leaf(rng, (6,)))
    case("linear", T.linear, _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 5)), _leaf(rng, (5,)))
    boxes = Tensor(np.concatenate([rng.uniform(0.3, 0.7, (2, 3, 2)),
                                   rng.uniform(0.15, 0.45, (2, 3, 2))], axis=-1),
                   requires_grad=True)
    case("roi_pool", lambda tok, bx: roi_pool(tok, bx, [(2, 2), (4, 4)]),
         _leaf(rng, (2, 20, 3)), boxes)
    return cases


def block_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed + 1)
    out = {}
    cfg = AttentionConfig(16, 2, ffn_mult=2)

    store = T.ParamStore(seed)
    init_mha(store.scope("mha"), cfg)
    init_ffn_block(store.scope("ffn"), cfg)
    q, k = _leaf(rng, (2, 6, 16)), _leaf(rng, (2, 4, 16))
    w1 = rng.normal(size=(2, 6, 16))
    out["mha"] = (lambda: T.tsum(mha(q, k, k, cfg, store.scope("mha")) * w1),
                  [q, k] + [t for n, t in store.items() if n.startswith("mha.")])
    out["ffn_block"] = (lambda: T.tsum(ffn_block(q, k, k, cfg, store.scope("ffn")) * w1),
                        [q, k] + [t for n, t in store.items() if n.startswith("ffn.")])

    pb = Tensor(np.concatenate([rng.uniform(0.3, 0.7, (5, 2)), rng.uniform(0.1, 0.4, (5, 2))],
                               axis=1), requires_grad=True)
    gb = np.concatenate([rng.uniform(0.3, 0.7, (5, 2)), rng.uniform(0.1, 0.4, (5, 2))], axis=1)
    out["giou"] = (lambda: T.tsum(giou(pb, gb)), [pb])

    feats = _leaf(rng, (6, 8))
    labels = np.array([0, 0, 1, 1, 2, 0])
    log_tau = Tensor(np.array(np.log(0.5)), requires_grad=True)
    out["supcon"] = (lambda: supcon_loss(T.l2_normalize(feats), labels, log_tau), [feats, log_tau])

    vis = {r: _leaf(rng, (6, 8)) for r in ("subject", "predicate", "object")}
    ling = {r: T.l2_normalize(Tensor(rng.normal(size=(6, 8)))).data for r in vis}
    lab = {"subject": labels, "predicate": np.array([1, 0, 1, 2, 0, 0]),
           "object": np.array([2, 2, 0, 1, 1, 0])}
    protos = PrototypeMemory(3, 8)
    protos.update(0, ling["predicate"][1])
    protos.update(1, ling["predicate"][0])
    out["vla"] = (
        lambda: vla_loss({r: T.l2_normalize(v) for r, v in vis.items()}, ling, lab, log_tau, protos),
        list(vis.values()) + [log_tau],
    )
    logits = _leaf(rng, (2, 5, 4))
    targets = rng.integers(0, 4, size=(2, 5))
    weights = np.where(targets == 3, 0.1, 1.0)
    out["cross_entropy"] = (lambda: weighted_cross_entropy(logits, targets, weights), [logits])
    return out


def objective_case(seed: int = 0):
    """The full training objective at the gradient-check shapes (d_model=16, N_e=4, N_t=6)."""
    from .train import compute_objective, init_state

    cfg = preset("gradcheck")
    state = init_state(cfg, seed)
    scenes = generate_dataset(cfg.train.n_scenes, cfg.data, base_seed=seed)
    for sc in scenes:  # a prototype per observed predicate exercises the concatenation
        for s, p, o in sc.triplets:
            f = state.text.features(sc.entity_classes[s], p, sc.entity_classes[o])
            state.prototypes.update(int(p), f[1])
    fn = lambda: compute_objective(state.model, scenes, state.text, state.prototypes)[0].total
    return fn, [t for _, t in state.model.params.items()]


def run_suite(eps: float = EPS, tolerance: float = TOLERANCE, probes: int = 6, seed: int = 0,
              names=None) -> list[CheckResult]:
    """Run every check in float64; ``names`` restricts to a subset."""
    results = []
    with T.precision("reference"):
        cases = {**op_cases(seed), **block_cases(seed)}
        cases["total_loss"] = None
        for name, spec in cases.items():
            if names is not None and name not in names:
                continue
            start = time.perf_counter()
            if spec is None:
                fn, params = objective_case(seed)
                err = T.grad_check(fn, params, eps=eps, max_probes=probes,
                                   rng=np.random.default_rng(seed))
            else:
                fn, params = spec
                err = T.grad_check(fn, params, eps=eps)
            results.append(CheckResult(name, err, time.perf_counter() - start, tolerance))
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  max_rel_err  status"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {r.max_rel_err:11.3e}  {'ok' if r.passed else 'FAIL'}")
    n_bad = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_bad}/{len(results)} passed (tolerance {results[0].tolerance:g})")
    return "\n".join(lines)
