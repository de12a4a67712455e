"""Command-line entry point.

Subcommands: ``train``, ``eval``, ``ablate``, ``analyze``, ``synth``.
Runs are driven by an INI config file whose sections mirror the config
types ([data], [split], [model], [train], [eval], [analysis]); flags
override file keys, and the fully resolved config is written next to
the outputs. Exit codes: 0 success, 1 config/validation failure,
2 runtime numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .data import (LoadError, SplitError, SplitSpec, SynthSpec, load_csv,
                   chronological_split, synth_generate, window_iter, write_csv)
from .evaluation import (AnalysisError, collect_analysis, evaluate,
                         generalization_eval)
from .model import (CheckpointError, ConfigError, InputError, ModelConfig,
                    ROLE_ATTENTION, ROLE_FFN, ROLE_NONE, VALID_DESIGNS,
                    build_model, load_checkpoint, save_checkpoint)
from .training import TrainConfig, TrainingError, train

DESIGN_LABELS = (
    ("inverted", ROLE_ATTENTION, ROLE_FFN),
    ("replace", ROLE_ATTENTION, ROLE_ATTENTION),
    ("replace", ROLE_FFN, ROLE_ATTENTION),
    ("replace", ROLE_FFN, ROLE_FFN),
    ("w/o", ROLE_ATTENTION, ROLE_NONE),
    ("w/o", ROLE_NONE, ROLE_FFN),
)

_CONFIG_ERRORS = (ConfigError, CheckpointError, AnalysisError, LoadError,
                  SplitError, ShapeError, InputError, ValueError)


class _Cfg:
    """Typed view over the INI file plus flag overrides."""

    def __init__(self, path):
        self.parser = configparser.ConfigParser()
        if path is not None:
            read = self.parser.read(path)
            if not read:
                raise ConfigError(f"config file not found: {path}")

    def get(self, section, key, default=None, cast=str):
        if self.parser.has_option(section, key):
            raw = self.parser.get(section, key).strip()
            if raw != "":
                if cast is bool:
                    return raw.lower() in ("1", "true", "yes", "on")
                return cast(raw)
        return default

    def set(self, section, key, value):
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, str(value))

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            self.parser.write(f)


def _parse_list(raw, cast):
    return tuple(cast(x) for x in str(raw).split(",") if str(x).strip())


def _load_dataset(cfg: _Cfg):
    path = cfg.get("data", "path")
    generator = cfg.get("data", "generator")
    if path is None and generator is None:
        raise ConfigError("[data] must provide either 'path' or 'generator'")
    if path is not None:
        return load_csv(path)
    spec = _synth_spec(cfg)
    return synth_generate(spec, seed=cfg.get("data", "seed", 0, int))


def _synth_spec(cfg: _Cfg) -> SynthSpec:
    generator = cfg.get("data", "generator")
    if generator is None:
        raise ConfigError("[data] generator is required")
    return SynthSpec(generator=generator,
                     length=cfg.get("data", "length", 400, int),
                     n_variates=cfg.get("data", "n_variates", 4, int),
                     noise=cfg.get("data", "noise", 0.0, float),
                     lag=cfg.get("data", "lag", 3, int),
                     n_components=cfg.get("data", "n_components", 2, int),
                     extra_pairs=cfg.get("data", "extra_pairs", 0, int))


def _split_spec(cfg: _Cfg) -> SplitSpec:
    counts = cfg.get("split", "counts")
    if counts is not None:
        return SplitSpec(counts=_parse_list(counts, int))
    ratios = cfg.get("split", "ratios", "0.7,0.1,0.2")
    return SplitSpec(ratios=_parse_list(ratios, float))


def _model_config(cfg: _Cfg, n_variates=None, *, variate_role=None,
                  temporal_role=None) -> ModelConfig:
    variate_role = variate_role or cfg.get("model", "variate_role", ROLE_ATTENTION)
    temporal_role = temporal_role or cfg.get("model", "temporal_role", ROLE_FFN)
    needs_n = variate_role == ROLE_FFN or temporal_role == ROLE_ATTENTION
    return ModelConfig(
        lookback_T=cfg.get("model", "lookback", 96, int),
        horizon_S=cfg.get("model", "horizon", 12, int),
        token_dim_D=cfg.get("model", "token_dim", 64, int),
        blocks_L=cfg.get("model", "blocks", 2, int),
        heads=cfg.get("model", "heads", 8, int),
        dk=cfg.get("model", "dk", None, int),
        ffn_hidden=cfg.get("model", "ffn_hidden", 128, int),
        variate_role=variate_role,
        temporal_role=temporal_role,
        use_instance_norm=cfg.get("model", "instance_norm", True, bool),
        layer_norm_eps=cfg.get("model", "layer_norm_eps", 1e-5, float),
        dropout=cfg.get("model", "dropout", 0.0, float),
        n_variates=cfg.get("model", "n_variates", n_variates if needs_n else None, int),
        tie_qk=cfg.get("model", "tie_qk", False, bool),
    )


def _train_config(cfg: _Cfg, args) -> TrainConfig:
    seed = args.seed if args.seed is not None else cfg.get("train", "seed", 0, int)
    ratio = args.ratio if getattr(args, "ratio", None) is not None \
        else cfg.get("train", "ratio", 1.0, float)
    return TrainConfig(
        learning_rate=cfg.get("train", "learning_rate", 1e-4, float),
        batch_size=cfg.get("train", "batch_size", 32, int),
        epochs=cfg.get("train", "epochs", 10, int),
        beta1=cfg.get("train", "beta1", 0.9, float),
        beta2=cfg.get("train", "beta2", 0.999, float),
        adam_eps=cfg.get("train", "adam_eps", 1e-8, float),
        variate_sample_ratio=ratio,
        seed=seed,
        grad_clip=cfg.get("train", "grad_clip", None, float),
        max_steps=cfg.get("train", "max_steps", None, int),
    )


def _snapshot(cfg: _Cfg, out: Path, model_cfg=None, train_cfg=None, extra=None):
    if model_cfg is not None:
        for k, v in model_cfg.to_dict().items():
            cfg.set("resolved_model", k, v)
    if train_cfg is not None:
        for k, v in vars(train_cfg).items():
            cfg.set("resolved_train", k, v)
    for k, v in (extra or {}).items():
        cfg.set("resolved_run", k, v)
    cfg.write(out / "resolved_config.ini")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _Cfg(args.config)
    dataset = _load_dataset(cfg)
    split = _split_spec(cfg)
    model_cfg = _model_config(cfg, n_variates=dataset.n_variates)
    train_cfg = _train_config(cfg, args)
    tr, va, _ = chronological_split(dataset, split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, model = build_model(model_cfg, train_cfg.seed)
    report, best = train(model, tr, va, train_cfg)
    model.params.load_state_arrays(best)

    save_checkpoint(out / "checkpoint.ckpt", model_cfg, model.params)
    (out / "train_report.csv").write_text(report.to_text(), encoding="utf-8")
    (out / "timing.txt").write_text(
        f"wall_time_s {report.wall_time_s:.3f}\ntotal_steps {report.total_steps}\n",
        encoding="utf-8")
    _snapshot(cfg, out, model_cfg, train_cfg)
    print(f"trained {report.total_steps} steps; best epoch {report.best_epoch} "
          f"(val mse {report.best_val_loss!r}); outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _Cfg(args.config)
    if args.checkpoint is None:
        raise ConfigError("eval requires --checkpoint")
    model_cfg, params, model = load_checkpoint(args.checkpoint)

    want_T = cfg.get("model", "lookback", None, int)
    want_S = cfg.get("model", "horizon", None, int)
    if want_T is not None and want_T != model_cfg.lookback_T:
        raise ConfigError(f"checkpoint lookback {model_cfg.lookback_T} does not "
                          f"match requested lookback {want_T}")
    if want_S is not None and want_S != model_cfg.horizon_S:
        raise ConfigError(f"checkpoint horizon {model_cfg.horizon_S} does not "
                          f"match requested horizon {want_S}")

    raw = args.horizons if args.horizons is not None \
        else cfg.get("eval", "horizons", str(model_cfg.horizon_S))
    horizons = _parse_list(raw, int)
    for h in horizons:
        if not (1 <= h <= model_cfg.horizon_S):
            raise ConfigError(f"requested horizon {h} exceeds checkpoint horizon "
                              f"{model_cfg.horizon_S}")

    dataset = _load_dataset(cfg)
    _, _, test = chronological_split(dataset, _split_spec(cfg))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for h in horizons:
        rep = evaluate(model, test, horizon=h)
        (out / f"metrics_h{h}.csv").write_text(rep.to_text(), encoding="utf-8")
        print(f"horizon {h}: mse {rep.mse!r} mae {rep.mae!r} "
              f"({rep.n_windows} windows)")
    _snapshot(cfg, out, model_cfg, extra={"horizons": ",".join(map(str, horizons)),
                                          "checkpoint": args.checkpoint})
    return 0


def cmd_ablate(args) -> int:
    cfg = _Cfg(args.config)
    dataset = _load_dataset(cfg)
    split = _split_spec(cfg)
    train_cfg = _train_config(cfg, args)
    tr, va, te = chronological_split(dataset, split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["design,variate,temporal,mse,mae,status"]
    flexible_needed = train_cfg.variate_sample_ratio < 1.0
    base_cfg = None
    for label, vrole, trole in DESIGN_LABELS:
        model_cfg = _model_config(cfg, n_variates=dataset.n_variates,
                                  variate_role=vrole, temporal_role=trole)
        if base_cfg is None:
            base_cfg = model_cfg
        n_bound = model_cfg.binds_variate_count
        if flexible_needed and n_bound:
            note = "skipped: design binds the variate count, ratio < 1 needs flexibility"
            print(f"notice: {label} ({vrole}/{trole}) {note}", file=sys.stderr)
            lines.append(f"{label},{vrole},{trole},,,{note}")
            continue
        params, model = build_model(model_cfg, train_cfg.seed)
        report, best = train(model, tr, va, train_cfg)
        model.params.load_state_arrays(best)
        rep = evaluate(model, te)
        lines.append(f"{label},{vrole},{trole},{rep.mse!r},{rep.mae!r},ok")
        print(f"{label:9s} variate={vrole:9s} temporal={trole:9s} "
              f"mse {rep.mse!r} mae {rep.mae!r}")

    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _snapshot(cfg, out, base_cfg, train_cfg)
    return 0


def cmd_analyze(args) -> int:
    cfg = _Cfg(args.config)
    if args.checkpoint is None:
        raise ConfigError("analyze requires --checkpoint")
    model_cfg, params, model = load_checkpoint(args.checkpoint)
    if model_cfg.variate_role != ROLE_ATTENTION:
        raise AnalysisError("analysis requires variate attention")
    dataset = _load_dataset(cfg)
    _, _, test = chronological_split(dataset, _split_spec(cfg))

    n_samples = cfg.get("analysis", "samples", 8, int)
    include_pre = cfg.get("analysis", "include_pre", False, bool)
    # spread the samples across the partition; config may pin the stride
    span = len(test) - model_cfg.lookback_T - model_cfg.horizon_S
    default_stride = max(1, span // max(1, n_samples - 1)) if span > 0 else 1
    stride = cfg.get("analysis", "stride", default_stride, int)
    samples = list(window_iter(test, model_cfg.lookback_T, model_cfg.horizon_S,
                               stride))[:n_samples]
    if len(samples) < 2:
        raise ConfigError(f"test partition yields {len(samples)} analysis windows; "
                          "need at least 2")
    bundle = collect_analysis(model, samples)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .evaluation import format_matrices
    for i, m in enumerate(bundle.attention_scores):
        (out / f"attention_layer{i}.csv").write_text(
            format_matrices([(f"attention_layer{i}", m)]), encoding="utf-8")
        if include_pre:
            (out / f"attention_pre_layer{i}.csv").write_text(
                format_matrices([(f"attention_pre_layer{i}",
                                  bundle.attention_pre_scores[i])]), encoding="utf-8")
    (out / "pearson_lookback.csv").write_text(
        format_matrices([("pearson_lookback", bundle.pearson_lookback)]), encoding="utf-8")
    (out / "pearson_future.csv").write_text(
        format_matrices([("pearson_future", bundle.pearson_future)]), encoding="utf-8")
    (out / "cka.csv").write_text(
        format_matrices([("cka_first_last", np.array([[bundle.cka_first_last]]))]),
        encoding="utf-8")
    _snapshot(cfg, out, model_cfg, extra={"samples": len(samples),
                                          "checkpoint": args.checkpoint})
    print(f"analysis written to {out} (cka {bundle.cka_first_last!r})")
    return 0


def cmd_synth(args) -> int:
    cfg = _Cfg(args.config)
    spec = _synth_spec(cfg)
    seed = args.seed if args.seed is not None else cfg.get("data", "seed", 0, int)
    dataset = synth_generate(spec, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "dataset.csv", dataset)
    meta = dict(dataset.metadata)
    meta["spec"] = vars(spec)
    (out / "dataset_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _snapshot(cfg, out, extra={"seed": seed})
    print(f"wrote {dataset.n_steps}x{dataset.n_variates} dataset to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varformer",
                                description="variate-token forecasting toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
            ("train", cmd_train, "train a model and write a checkpoint"),
            ("eval", cmd_eval, "score a checkpoint on the test partition"),
            ("ablate", cmd_ablate, "train/evaluate the six component designs"),
            ("analyze", cmd_analyze, "export attention/correlation/CKA analysis"),
            ("synth", cmd_synth, "generate a synthetic dataset")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override seed")
        sp.add_argument("--checkpoint", default=None, help="checkpoint path")
        sp.add_argument("--horizons", default=None,
                        help="comma-separated evaluation horizons")
        sp.add_argument("--ratio", type=float, default=None,
                        help="variate sample ratio for training")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; that code is reserved for
        # runtime numeric failures here
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
