"""``valleys`` command line: one protocol per invocation, seeded, with JSON reports.

Every protocol has a parameter schema. Subcommand flags are generated from it
(``delta_bar`` becomes ``--delta-bar``), and ``valleys run --config FILE``
accepts the same parameters as ``{"protocol": ..., "seed": ..., "out": ...,
"params": {...}}``. Reports carry the config echo, metrics, tri-state
verdicts (``pass`` / ``fail`` / ``recorded-only``), provenance and a file
manifest.

Exit codes: 0 when no verdict failed, 1 on any failed verdict or module
error, 2 on a configuration error (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_csv, atomic_write_json, dumps_json
from .exceptions import ConfigError, InfeasibleHypothesesError

PASS, FAIL, RECORDED = "pass", "fail", "recorded-only"


def _tri(ok):
    if ok is None:
        return RECORDED
    return PASS if ok else FAIL


# --- parameter schemas ----------------------------------------------------------

def _floatlist(v):
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in v]


def _opt(caster):
    def f(v):
        return None if v is None else caster(v)
    f.__name__ = f"optional {caster.__name__}"
    f.inner = caster
    return f


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes", "on"):
        return True
    if isinstance(v, str) and v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _choice(*options):
    def f(v):
        if v not in options:
            raise ValueError(f"expected one of {options}, got {v!r}")
        return v
    f.__name__ = "choice"
    f.options = options
    return f


def _strlist(v):
    return [str(v)] if isinstance(v, str) else [str(x) for x in v]


@dataclass(frozen=True)
class Param:
    caster: object
    default: object
    help: str = ""


BOUNDS_PARAMS = {
    "model": Param(_opt(str), None, "valley JSON; overrides the slope flags"),
    "a_plus": Param(float, 0.05, "flat-side gradient upper bound"),
    "b_plus": Param(_opt(float), None, "flat-side gradient lower bound (default a_plus)"),
    "a_minus": Param(float, -1.5, "sharp-side gradient upper bound (< 0)"),
    "b_minus": Param(_opt(float), None, "sharp-side gradient lower bound (default a_minus)"),
    "nu": Param(float, 0.02, "noise bound"),
    "eta": Param(float, 0.1, "learning rate"),
}

NET_PROBE_PARAMS = {
    "model": Param(str, None, "valley JSON file or network checkpoint directory"),
    "center": Param(_opt(_floatlist), None, "probe center (valleys; default: the valley's base point)"),
    "direction": Param(str, "auto", "random-0-1 | random-pm1 | random-gaussian | axis:I | bn | non-bn | auto"),
    "split": Param(_choice("train", "test"), "train", "network loss split"),
}

PROTOCOLS = {
    "report-constants": {
        "doc": "Closed-form averaging-theorem constants (p bounds, T_min, T_max, c_0, tau) and hypothesis checks.",
        "reproduces": "dwell-time lemmas and the c_0 bound of the SGD averaging theorem",
        "params": {**BOUNDS_PARAMS, "tau": Param(_opt(float), None, "confidence parameter (default: smallest feasible power of two)")},
    },
    "simulate-1d": {
        "doc": "Noisy SGD on a 1-D valley; trajectory CSV (t, w, grad, noise) and round CSV.",
        "reproduces": "SGD oscillation across an asymmetric valley",
        "params": {
            "model": Param(_opt(str), None, "valley JSON (default: tight slopes 0.05 / -1.5)"),
            "eta": Param(float, 0.1, "learning rate"),
            "nu": Param(float, 0.02, "noise bound"),
            "noise": Param(_choice("uniform", "clipped-gaussian", "zero"), "uniform", "noise law"),
            "steps": Param(int, 10000, "iterations"),
            "w_init": Param(float, 1.0, "starting point"),
            "rounds": Param(_opt(str), None, "round CSV path (default: <out stem>_rounds.csv)"),
        },
    },
    "theorem1-verify": {
        "doc": "Exact (or sampled) expected population loss at the empirical minimizer vs a biased point.",
        "reproduces": "the biased-solution theorem under the random shift assumption",
        "params": {
            "k": Param(int, 1, "number of asymmetric directions"),
            "c": Param(_floatlist, [5.0], "per-direction asymmetry ratio (one value broadcasts)"),
            "p": Param(_floatlist, [0.1], "per-direction flat slope"),
            "l": Param(_floatlist, [1.0], "per-direction bias length"),
            "delta_bar": Param(_floatlist, [2.0], "per-direction shift magnitude"),
            "xi": Param(float, 0.0, "shift-gap bound of the perturbation"),
            "mode": Param(_choice("enum", "mc"), "enum", "exact enumeration or Monte Carlo"),
            "samples": Param(int, 100000, "Monte Carlo sample count"),
            "dim": Param(_opt(int), None, "ambient dimension (default k)"),
        },
    },
    "theorem2-verify": {
        "doc": "Simulated rounds vs the averaging theorem: positive mean, c_0, dwell-time bounds.",
        "reproduces": "the SGD averaging theorem and its dwell-time bounds",
        "params": {
            **BOUNDS_PARAMS,
            "profile": Param(_choice("tight", "wobble"), "tight", "gradient profile inside the bounds"),
            "noise": Param(_choice("uniform", "clipped-gaussian", "zero"), "uniform", "noise law"),
            "rounds": Param(int, 5000, "rounds to collect"),
            "tau": Param(_opt(float), None, "confidence parameter"),
            "override": Param(_bool, False, "run even when the hypotheses fail"),
        },
    },
    "train": {
        "doc": "Train the MLP (+BN) with SGD and optional weight averaging; checkpoints and history CSV.",
        "reproduces": "SWA and SWA-BN / SWA-Non-BN training at toy scale",
        "params": {
            "arch": Param(str, "2-16-16-2", "layer widths, e.g. 2-16-16-2 (suffix :nobn disables BN)"),
            "data": Param(_choice("two-moons", "gaussian-mixture"), "two-moons", "dataset"),
            "n_train": Param(int, 512, "training examples"),
            "n_test": Param(int, 50000, "held-out examples"),
            "noise": Param(float, 0.2, "dataset noise"),
            "epochs": Param(int, 100, "epochs"),
            "batch": Param(int, 32, "batch size"),
            "eta": Param(float, 0.05, "learning rate"),
            "schedule": Param(_choice("constant", "linear"), "constant", "learning-rate schedule"),
            "swa_start": Param(_opt(int), None, "first averaged epoch (1-based)"),
            "swa_group": Param(_choice("all", "bn", "non-bn"), "all", "averaged parameter group"),
            "swa_eta": Param(_opt(float), None, "learning rate once averaging starts"),
            "init": Param(_opt(str), None, "checkpoint to start from"),
            "eval_every": Param(int, 1, "epochs between full evaluations (0: last only)"),
            "checkpoint_every": Param(int, 0, "epochs between saved trajectory checkpoints"),
        },
    },
    "probe.slice": {
        "doc": "Loss along w + l u on a grid (CSV l, loss[, second]).",
        "reproduces": "1-D loss slices through a solution",
        "params": {**NET_PROBE_PARAMS, "l_min": Param(float, -3.0), "l_max": Param(float, 3.0),
                   "steps": Param(int, 61)},
    },
    "probe.classify": {
        "doc": "Check an (r, p, c, zeta) asymmetry spec along a direction.",
        "reproduces": "the asymmetric-direction definition",
        "params": {**NET_PROBE_PARAMS, "spec": Param(_floatlist, [2.5, 0.2, 7.5, 1.2], "r p c zeta"),
                   "n_grid": Param(int, 32)},
    },
    "probe.find-asym": {
        "doc": "Random-direction search for a fitted asymmetry ratio c > 2; reports hit rate.",
        "reproduces": "the random-direction asymmetry search",
        "params": {**NET_PROBE_PARAMS, "trials": Param(int, 20), "r": Param(float, 3.0),
                   "zeta": Param(float, 0.5), "scale": Param(str, "unit", "unit | norm | <number>"),
                   "kind": Param(_choice("random-0-1", "random-pm1", "random-gaussian"), "random-0-1")},
    },
    "probe.neighborhood": {
        "doc": "Spec check at center + v - <v,u>u for v in a ball; mean and variance of slices.",
        "reproduces": "the locally-asymmetric assumption check",
        "params": {**NET_PROBE_PARAMS, "spec": Param(_floatlist, [4.0, 0.1, 5.22, 2.0], "r p c zeta"),
                   "radius": Param(float, 25.0), "samples": Param(int, 100), "steps": Param(int, 41)},
    },
    "probe.interpolate": {
        "doc": "Train/held-out loss along (1-t) a + t b with a bump detector.",
        "reproduces": "SGD-after-SWA interpolation (no bump between the solutions)",
        "params": {"a": Param(str, None, "checkpoint directory"), "b": Param(str, None, "checkpoint directory"),
                   "t_min": Param(float, -0.5), "t_max": Param(float, 1.5), "steps": Param(int, 41)},
    },
    "probe.random-ray": {
        "doc": "Mean loss vs distance along Gaussian directions, with standard errors.",
        "reproduces": "random-ray width profiles and their basin-position illusion",
        "params": {**NET_PROBE_PARAMS, "rays": Param(int, 50), "r_max": Param(float, 1.0),
                   "steps": Param(int, 21)},
    },
    "probe.stability": {
        "doc": "Slices along one fixed direction through successive checkpoints; stability index.",
        "reproduces": "stability of projected loss surfaces in high dimension",
        "params": {"checkpoints": Param(_strlist, None, "checkpoint directories in training order"),
                   "direction": Param(str, "random-0-1"), "split": Param(_choice("train", "test"), "train"),
                   "l_min": Param(float, -1.0), "l_max": Param(float, 1.0), "steps": Param(int, 41)},
    },
    "probe.bn-compare": {
        "doc": "Fitted asymmetry ratio of BN-masked vs matched non-BN random directions, paired by seed.",
        "reproduces": "BN vs non-BN direction asymmetry",
        "params": {"model": Param(str, None, "checkpoint directory"), "n_seeds": Param(int, 10),
                   "r": Param(float, 3.0), "zeta": Param(float, 0.5), "scale": Param(str, "unit"),
                   "split": Param(_choice("train", "test"), "train")},
    },
}


def list_protocols():
    """Catalog sorted by protocol id."""
    return [{"protocol": k, "doc": PROTOCOLS[k]["doc"], "reproduces": PROTOCOLS[k]["reproduces"]}
            for k in sorted(PROTOCOLS)]


def validate_config(cfg):
    """Normalize ``{"protocol", "seed", "out", "params"}``; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(cfg) - {"protocol", "seed", "out", "params"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    proto = cfg.get("protocol")
    if proto not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {proto!r}; see `valleys list-protocols`")
    schema = PROTOCOLS[proto]["params"]
    raw = cfg.get("params") or {}
    if not isinstance(raw, dict):
        raise ConfigError("params must be an object")
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown parameters for {proto}: {sorted(unknown)}")
    params = {}
    for name, spec in schema.items():
        v = raw.get(name, spec.default)
        try:
            params[name] = spec.caster(v) if v is not None else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{proto}.{name}: {exc}") from exc
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    out = cfg.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a path string")
    return {"protocol": proto, "seed": seed, "out": out, "params": params}


# --- shared helpers ----------------------------------------------------------------

def _bounds_and_model(p, profile="tight"):
    from .valley_models import GradientBounds, PiecewiseValley1D, load_valley

    if p.get("model"):
        model = load_valley(p["model"])
        if not hasattr(model, "bounds"):
            raise ConfigError("model has no gradient bounds")
        return model.bounds.with_nu(p["nu"]), model
    b = GradientBounds(p["a_plus"], p["b_plus"] if p["b_plus"] is not None else p["a_plus"],
                       p["a_minus"], p["b_minus"] if p["b_minus"] is not None else p["a_minus"])
    return b.with_nu(p["nu"]), PiecewiseValley1D(b, profile=profile)


def _broadcast(name, v, k):
    if len(v) == 1:
        return np.full(k, v[0])
    if len(v) != k:
        raise ConfigError(f"--{name.replace('_', '-')} needs 1 or k={k} values, got {len(v)}")
    return np.asarray(v, dtype=float)


def _sibling(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix)


class _Ctx:
    def __init__(self, cfg):
        self.cfg = cfg
        self.p = cfg["params"]
        self.seed = cfg["seed"]
        self.out = Path(cfg["out"]) if cfg["out"] else None
        self.files = []

    def csv(self, path, header, rows):
        if path is None:
            return
        atomic_write_csv(path, header, rows)
        self.files.append(str(path))


# --- protocols ------------------------------------------------------------------------

def _p_report_constants(ctx):
    from . import theory

    bounds, _ = _bounds_and_model(ctx.p)
    hyp = theory.theorem_two_hypothesis_check(bounds)
    consts = theory.theorem_two_constants(bounds, ctx.p["eta"], ctx.p["tau"])
    d = consts.to_dict()
    return {"constants": d, "hypotheses": hyp, "bounds": bounds.to_dict()}, {}


def _p_simulate_1d(ctx):
    from .sgd_sim import SGDConfig, average_iterates, round_rows, run_sgd, segment_rounds, trajectory_rows
    from .valley_models import GradientBounds, PiecewiseValley1D, load_valley

    p = ctx.p
    model = load_valley(p["model"]) if p["model"] else PiecewiseValley1D(GradientBounds.tight(0.05, -1.5))
    cfg = SGDConfig(p["eta"], p["nu"], p["noise"], p["steps"], ctx.seed, p["w_init"])
    traj = run_sgd(model, cfg)
    rounds = segment_rounds(traj)
    if ctx.out is not None:
        ctx.csv(ctx.out, ["t", "w", "grad", "noise"], trajectory_rows(traj))
        rpath = Path(p["rounds"]) if p["rounds"] else _sibling(ctx.out, "_rounds.csv")
        ctx.csv(rpath, ["round", "start", "end", "length", "average", "sharp_dwell"], round_rows(rounds))
    _, final = average_iterates(traj)
    avgs = [r.average for r in rounds]
    return {"n_steps": len(traj) - 1, "n_rounds": len(rounds), "final_average": final,
            "mean_round_average": float(np.mean(avgs)) if avgs else None}, {}


def _p_theorem1(ctx):
    from .shiftgen import (build_shift_pair, certified_constants, enumerate_expected_losses,
                           monte_carlo_expected_losses)
    from .valley_models import GradientBounds, PiecewiseValley1D, SeparableValleyND

    p = ctx.p
    k = p["k"]
    if k < 1:
        raise ConfigError("k must be >= 1")
    c, pp, l, db = (_broadcast(n, p[n], k) for n in ("c", "p", "l", "delta_bar"))
    if np.any(c <= 1) or np.any(pp <= 0):
        raise ConfigError("need c > 1 and p > 0")
    axes = [PiecewiseValley1D(GradientBounds.tight(pi, -ci * pi)) for ci, pi in zip(c, pp)]
    valley = SeparableValleyND.embed(axes, p["dim"] or k, ctx.seed)
    try:
        model = build_shift_pair(valley, db, p["xi"], ctx.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if p["mode"] == "enum":
        res = enumerate_expected_losses(model, l)
    else:
        res = monte_carlo_expected_losses(model, l, p["samples"], ctx.seed)
    d = res.to_dict()
    cp, cc, cz, cr = certified_constants(model)
    d["certified"] = {"p": cp, "c": cc, "zeta": cz, "r": cr}
    # spot-check the shift-gap invariant on a few sign patterns
    pats = [np.where((j >> np.arange(k)) & 1, 1, -1) for j in range(min(1 << k, 4))]
    gaps = [model.measured_gap(s, 1000, ctx.seed).gap for s in pats]
    d["measured_shift_gaps"] = gaps
    verdicts = {
        "gap_ge_bound": _tri(d["gap_ge_bound"]) if d["bound_feasible"] else RECORDED,
        "shift_gap_le_xi": _tri(max(gaps) <= p["xi"] + 1e-12),
    }
    return d, verdicts


def _p_theorem2(ctx):
    from .sgd_sim import SGDConfig, round_rows, verify_theorem_two

    p = ctx.p
    bounds, model = _bounds_and_model(p, p["profile"])
    cfg = SGDConfig(p["eta"], p["nu"], p["noise"], 1000, ctx.seed)
    rep = verify_theorem_two(model, cfg, p["rounds"], p["tau"], p["override"])
    d = rep.to_dict()
    verdicts = {k: _tri(v) for k, v in rep.verdicts.items()}
    verdicts["sharp_dwell_one"] = RECORDED if p["nu"] > 0 or p["profile"] != "tight" else \
        _tri(set(rep.stats.sharp_dwell_hist) == {1})
    return d, verdicts


def _p_train(ctx):
    from .nn import (Architecture, Dataset, SWAConfig, TrainConfig, evaluate, load_checkpoint,
                     save_checkpoint, train)

    p = ctx.p
    arch = Architecture.parse(p["arch"])
    ds = Dataset(p["data"], p["n_train"], p["n_test"], p["noise"], ctx.seed)
    swa = SWAConfig(p["swa_start"], p["swa_group"]) if p["swa_start"] else None
    tc = TrainConfig(p["eta"], p["batch"], p["epochs"], ctx.seed, p["schedule"], None, p["swa_eta"],
                     p["checkpoint_every"], p["eval_every"])
    init = bn = None
    if p["init"]:
        ck = load_checkpoint(p["init"])
        if ck.arch != arch:
            raise ConfigError("init checkpoint architecture differs from --arch")
        init, bn = ck.params, ck.bn_state
    res = train(arch, ds, tc, swa, init, bn)
    data = ds.generate()
    fin = evaluate(arch, res.final, data)
    metrics = {"n_params": arch.n_params, "final": fin.metrics()}
    meta = {"seed": ctx.seed, "epochs": p["epochs"], "bn_recomputed": True}
    if ctx.out is not None:
        save_checkpoint(ctx.out / "final", res.final, arch, res.bn_state, ds, meta)
        ctx.files.append(str(ctx.out / "final"))
    verdicts = {}
    if res.swa is not None:
        sw = evaluate(arch, res.swa, data)
        metrics["swa"] = sw.metrics()
        metrics["swa_group"] = p["swa_group"]
        metrics["swa_group_size"] = int(res.mask.count)
        if ctx.out is not None:
            save_checkpoint(ctx.out / "swa", res.swa, arch, res.swa_bn_state, ds, {**meta, "swa": swa.to_dict()})
            ctx.files.append(str(ctx.out / "swa"))
        verdicts["swa_test_le_sgd_test"] = RECORDED
        metrics["swa_test_le_sgd_test"] = bool(sw.test_loss <= fin.test_loss)
    if ctx.out is not None:
        for i, ck in enumerate(res.checkpoints):
            save_checkpoint(ctx.out / f"traj_{i:04d}", ck, arch, None, ds, meta)
            ctx.files.append(str(ctx.out / f"traj_{i:04d}"))
        keys = []
        for row in res.history:
            keys += [k for k in row if k not in keys]
        ctx.csv(ctx.out / "history.csv", keys, [[row.get(k, "") for k in keys] for row in res.history])
    metrics["bn_policy"] = "running stats with momentum 0.1 during training; exact full-pass recompute before every evaluation"
    return metrics, verdicts


def _load_probe_model(path, split="train"):
    """``(model, center, second_model, kind)`` from a valley JSON file or checkpoint dir."""
    from .nn import Dataset, load_checkpoint
    from .probes import NetworkLoss
    from .valley_models import load_valley

    if path is None:
        raise ConfigError("--model is required")
    path = Path(path)
    if path.is_dir():
        ck = load_checkpoint(path)
        if not ck.dataset:
            raise ConfigError(f"{path}: checkpoint has no dataset description")
        ds = Dataset(**ck.dataset)
        data = ds.generate()
        m = NetworkLoss(ck.arch, data, split)
        other = NetworkLoss(ck.arch, data, "test" if split == "train" else "train")
        return m, ck.params.data.copy(), other, "network"
    if not path.exists():
        raise ConfigError(f"{path} does not exist")
    model = load_valley(path)
    from .probes import as_model

    dim = getattr(model, "dim", 1)
    base = getattr(model, "base", None)
    center = np.zeros(dim) if base is None else np.asarray(base, dtype=float)
    return as_model(model), center, None, "valley"


def _probe_direction(spec, model, dim, seed):
    from .probes import Direction, sample_direction

    if spec == "auto":
        spec = "axis:0" if hasattr(model, "directions") else ("custom" if dim == 1 else "random-0-1")
    if spec == "custom":
        return Direction(np.ones(dim))
    if spec.startswith("axis:"):
        if not hasattr(model, "directions"):
            raise ConfigError("axis directions need a separable valley")
        i = int(spec.split(":")[1])
        return Direction(model.directions[i])
    if spec in ("bn", "non-bn"):
        if not hasattr(model, "group_masks"):
            raise ConfigError("group directions need a network checkpoint")
        bn, non = model.group_masks(seed)
        return sample_direction("group-masked", dim, seed, bn if spec == "bn" else non)
    if spec in ("random-0-1", "random-pm1", "random-gaussian"):
        return sample_direction(spec, dim, seed)
    raise ConfigError(f"unknown direction {spec!r}")


def _probe_setup(ctx):
    m, center, other, kind = _load_probe_model(ctx.p.get("model"), ctx.p.get("split", "train"))
    if ctx.p.get("center") is not None:
        if kind == "network":
            raise ConfigError("--center applies to valley models only")
        center = np.asarray(ctx.p["center"], dtype=float)
    u = _probe_direction(ctx.p.get("direction", "auto"), m, len(center), ctx.seed)
    return m, center, other, kind, u


def _csv_out(ctx, header, rows):
    if ctx.out is not None:
        ctx.csv(ctx.out.with_suffix(".csv"), header, rows)


def _p_probe_slice(ctx):
    from .probes import slice as slice_

    m, center, other, kind, u = _probe_setup(ctx)
    prof = slice_(m, center, u, (ctx.p["l_min"], ctx.p["l_max"]), ctx.p["steps"], other)
    _csv_out(ctx, prof.header, prof.rows())
    i = int(np.nanargmin(prof.values))
    return {"model_kind": kind, "argmin_l": float(prof.offsets[i]), "min_loss": float(prof.values[i]),
            "n_nonfinite": int(prof.nonfinite.sum())}, {"slice": RECORDED}


def _policy(ctx):
    from .probes import SpecPolicy

    sc = ctx.p.get("scale", "unit")
    if sc not in ("unit", "norm"):
        try:
            sc = float(sc)
        except ValueError as exc:
            raise ConfigError(f"bad scale {sc!r}") from exc
    return SpecPolicy(ctx.p["r"], ctx.p["zeta"], sc)


def _spec(v):
    from .valley_models import AsymmetrySpec

    if len(v) != 4:
        raise ConfigError("--spec needs 4 numbers: r p c zeta")
    try:
        return AsymmetrySpec(*v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _p_probe_classify(ctx):
    from .probes import classify_direction, default_grid, _slopes

    m, center, _, kind, u = _probe_setup(ctx)
    spec = _spec(ctx.p["spec"])
    grid = default_grid(spec.zeta, spec.r, ctx.p["n_grid"])
    v = classify_direction(m, center, u, spec, grid)
    flat, sharp, _, _ = _slopes(m, center, u.vector, grid, spec.r)
    _csv_out(ctx, ["l", "flat_slope", "sharp_slope"], list(zip(grid.tolist(), flat.tolist(), sharp.tolist())))
    return {"model_kind": kind, **v.to_dict()}, {"holds": RECORDED}


def _p_probe_find(ctx):
    from .probes import find_asymmetric_direction

    m, center, _, kind = _load_probe_model(ctx.p["model"], ctx.p["split"])
    pol = _policy(ctx)
    res = find_asymmetric_direction(m, center, pol, ctx.p["trials"], ctx.seed, ctx.p["kind"])
    _csv_out(ctx, ["trial", "p", "c", "hit"], [(i, t.p, t.c, int(t.hit)) for i, t in enumerate(res.trials)])
    return {"model_kind": kind, "policy": pol.to_dict(), **res.to_dict()}, {"found": RECORDED}


def _p_probe_neighborhood(ctx):
    from .probes import verify_neighborhood_asymmetry

    m, center, _, kind, u = _probe_setup(ctx)
    spec = _spec(ctx.p["spec"])
    res = verify_neighborhood_asymmetry(m, center, u, spec, ctx.p["radius"], ctx.p["samples"], ctx.seed,
                                        ctx.p["steps"])
    _csv_out(ctx, ["l", "mean", "variance"],
             list(zip(res.offsets.tolist(), res.mean_slice.tolist(), res.slice_variance.tolist())))
    return {"model_kind": kind, "spec": list(spec.as_tuple()), **res.to_dict()}, {"holds_fraction": RECORDED}


def _p_probe_interpolate(ctx):
    from .nn import Dataset, load_checkpoint
    from .probes import NetworkLoss, interpolate

    if not ctx.p["a"] or not ctx.p["b"]:
        raise ConfigError("--a and --b checkpoints are required")
    ca, cb = load_checkpoint(ctx.p["a"]), load_checkpoint(ctx.p["b"])
    if ca.arch != cb.arch:
        raise ConfigError("checkpoints have different architectures")
    data = Dataset(**ca.dataset).generate()
    tr, te = NetworkLoss(ca.arch, data, "train"), NetworkLoss(ca.arch, data, "test")
    res = interpolate(tr, ca.params, cb.params, (ctx.p["t_min"], ctx.p["t_max"]), ctx.p["steps"], te)
    _csv_out(ctx, res.header, res.rows())
    return {"bump": res.bump, "bn_policy": f"full-pass recompute when the point moves > {tr.recompute_tol} relative",
            "bn_recompute_events": {"train": tr.recompute_events, "test": te.recompute_events}}, {"no_bump": RECORDED}


def _p_probe_ray(ctx):
    from .probes import random_ray_profile

    m, center, _, kind = _load_probe_model(ctx.p["model"], ctx.p["split"])
    radii = np.linspace(0.0, ctx.p["r_max"], ctx.p["steps"])
    res = random_ray_profile(m, center, ctx.p["rays"], radii, ctx.seed)
    _csv_out(ctx, res.header, res.rows())
    return {"model_kind": kind, "loss_at_center": float(res.mean[0]), "loss_at_r_max": float(res.mean[-1])}, \
        {"profile": RECORDED}


def _p_probe_stability(ctx):
    from .nn import Dataset, load_checkpoint
    from .probes import NetworkLoss, projected_slice_stability

    paths = ctx.p["checkpoints"] or []
    if len(paths) < 2:
        raise ConfigError("--checkpoints needs at least 2 directories")
    cks = [load_checkpoint(q) for q in paths]
    m = NetworkLoss(cks[0].arch, Dataset(**cks[0].dataset).generate(), ctx.p["split"])
    u = _probe_direction(ctx.p["direction"], m, m.dim, ctx.seed)
    res = projected_slice_stability(m, [c.params for c in cks], u, (ctx.p["l_min"], ctx.p["l_max"]), ctx.p["steps"])
    ls = res.profiles[0].offsets
    rows = [[float(l)] + [float(pr.values[j]) for pr in res.profiles] for j, l in enumerate(ls)]
    _csv_out(ctx, ["l"] + [f"ckpt_{i}" for i in range(len(cks))], rows)
    return res.to_dict(), {"later_half_more_stable": RECORDED}


def _p_probe_bn(ctx):
    from .probes import bn_direction_comparison

    m, center, _, kind = _load_probe_model(ctx.p["model"], ctx.p["split"])
    if kind != "network":
        raise ConfigError("bn-compare needs a network checkpoint")
    seeds = [ctx.seed + i for i in range(ctx.p["n_seeds"])]
    bn, non = m.group_masks(ctx.seed)
    res = bn_direction_comparison(m, center, bn, non, seeds, _policy(ctx))
    _csv_out(ctx, res.header, res.rows())
    return res.to_dict(), {"c_bn_gt_c_non_bn": RECORDED}


RUNNERS = {
    "report-constants": _p_report_constants,
    "simulate-1d": _p_simulate_1d,
    "theorem1-verify": _p_theorem1,
    "theorem2-verify": _p_theorem2,
    "train": _p_train,
    "probe.slice": _p_probe_slice,
    "probe.classify": _p_probe_classify,
    "probe.find-asym": _p_probe_find,
    "probe.neighborhood": _p_probe_neighborhood,
    "probe.interpolate": _p_probe_interpolate,
    "probe.random-ray": _p_probe_ray,
    "probe.stability": _p_probe_stability,
    "probe.bn-compare": _p_probe_bn,
}


def _report_path(cfg):
    out = cfg["out"]
    if out is None:
        return None
    proto = cfg["protocol"]
    if proto == "train":
        return Path(out) / "report.json"
    if proto == "simulate-1d" or proto.startswith("probe."):
        return Path(out).with_suffix(".json")
    return Path(out)


def execute(cfg):
    """Validate and run one config; returns ``(report, exit_code)``."""
    cfg = validate_config(cfg)
    ctx = _Ctx(cfg)
    try:
        metrics, verdicts = RUNNERS[cfg["protocol"]](ctx)
    except InfeasibleHypothesesError as exc:
        raise ConfigError(f"infeasible hypotheses: {exc}") from exc
    report = {
        "protocol": cfg["protocol"],
        "config": cfg,
        "metrics": metrics,
        "verdicts": verdicts,
        "provenance": {"toolkit": "asymvalley", "version": __version__,
                       "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                       "python": platform.python_version(), "numpy": np.__version__},
        "files": list(ctx.files),
    }
    if cfg["protocol"] == "report-constants":
        report.update(metrics["constants"])
    rp = _report_path(cfg)
    if rp is not None:
        report["files"].append(str(rp))
        atomic_write_json(rp, report)
    code = 1 if any(v == FAIL for v in verdicts.values()) else 0
    return report, code


# --- argparse ----------------------------------------------------------------------------

def _add_schema_flags(sp, schema):
    for name, spec in schema.items():
        flag = "--" + name.replace("_", "-")
        caster = getattr(spec.caster, "inner", spec.caster)
        kw = {"dest": name, "default": None, "help": spec.help or None}
        if caster in (_floatlist, _strlist):
            kw["nargs"] = "+"
            kw["type"] = float if caster is _floatlist else str
        elif caster is _bool:
            kw["action"] = "store_const"
            kw["const"] = True
        elif hasattr(caster, "options"):
            kw["choices"] = caster.options
        elif caster in (int, float, str):
            kw["type"] = caster
        sp.add_argument(flag, **kw)


def build_parser():
    ap = argparse.ArgumentParser(prog="valleys", description="Loss-landscape asymmetry toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list-protocols", help="print the protocol catalog as JSON")
    run = sub.add_parser("run", help="run a protocol from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    run.add_argument("--out", default=None, help="overrides the config output path")
    probe = None
    for proto in PROTOCOLS:
        if proto.startswith("probe."):
            if probe is None:
                probe = sub.add_parser("probe", help="landscape probes").add_subparsers(dest="probe", required=True)
            sp = probe.add_parser(proto.split(".", 1)[1], help=PROTOCOLS[proto]["doc"])
        else:
            sp = sub.add_parser(proto, help=PROTOCOLS[proto]["doc"])
        sp.set_defaults(protocol=proto)
        _add_schema_flags(sp, PROTOCOLS[proto]["params"])
        sp.add_argument("--seed", type=int, default=0, dest="_seed")
        sp.add_argument("--out", default=None, dest="_out")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        if args.command == "list-protocols":
            print(json.dumps(list_protocols(), indent=2))
            return 0
        if args.command == "run":
            try:
                cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            if isinstance(cfg, dict):
                if args.seed is not None:
                    cfg["seed"] = args.seed
                if args.out is not None:
                    cfg["out"] = args.out
        else:
            schema = PROTOCOLS[args.protocol]["params"]
            params = {k: getattr(args, k) for k in schema if getattr(args, k) is not None}
            cfg = {"protocol": args.protocol, "seed": args._seed, "out": args._out, "params": params}
        report, code = execute(cfg)
        if _report_path(report["config"]) is None:
            print(dumps_json(report))
        else:
            verdicts = ", ".join(f"{k}={v}" for k, v in report["verdicts"].items()) or "none"
            print(f"{report['protocol']}: verdicts {verdicts}; report {report['files'][-1]}")
        return code
    except ConfigError as exc:
        print(f"valleys: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors propagate as exit 1 with context
        print(f"valleys: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
