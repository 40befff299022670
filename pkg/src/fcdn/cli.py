"""Command-line entry point.

Exit codes: 0 success, 64 configuration or usage error, 65 malformed data
or checkpoint, 2 numerical failure during training, 1 anything else.
No environment variables are read.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .autodiff import no_grad
from .config import RunConfig, describe_defaults, parse_value
from .connectivity import channel_weights, plv_matrix, strong_edges
from .container import container_paths
from .data import STANDARD_BANDS, EpochSet, SynthSpec, default_plan, load_epochset, save_epochset, synth_generate
from .dsp import ersp, instantaneous_phase, psd, psd_to_csv
from .errors import ConfigError, FormatError, TrainingDivergedError
from .evaluation import permutation_test_paired, pseudo_online_runs
from .model import forward, load_checkpoint, save_checkpoint
from .pipeline import FcdnClassifier, band_sets, evaluate_holdout, run_cv, run_holdout, run_loso

EXIT_OK, EXIT_OTHER, EXIT_NUMERIC, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 64, 65

log = logging.getLogger("fcdn")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; 2 is reserved for numerical failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers -----------------------------------------------------------------------------


def _emit(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _need_input(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"missing {what} path")
    json_path, _ = container_paths(path)
    if not json_path.is_file():
        raise ConfigError(f"{what} not found: {json_path}")
    return path


def _need_out(path: str | None) -> Path:
    if not path:
        raise ConfigError("missing --out")
    p = Path(path)
    parent = p.parent if not p.is_dir() else p
    if not parent.is_dir():
        raise ConfigError(f"output directory does not exist: {parent}")
    return p


def _with_suffix(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def _report(cfg: RunConfig, command: str, body: dict) -> dict:
    return {"command": command, "seed": cfg["seed"], "config_sha256": cfg.digest(), "config": cfg.to_dict(), **body}


def _parse_runs(text: str, n: int) -> list[list[int]]:
    if not text.strip():
        return [list(range(n))]
    runs = []
    for part in text.split(";"):
        idx: list[int] = []
        for piece in part.split(","):
            piece = piece.strip()
            if not piece:
                continue
            lo, _, hi = piece.partition("-")
            lo_i, hi_i = int(lo), int(hi or lo)
            if not 0 <= lo_i <= hi_i < n:
                raise ConfigError(f"run range {piece!r} outside 0..{n - 1}")
            idx.extend(range(lo_i, hi_i + 1))
        if not idx:
            raise ConfigError("empty run in 'runs'")
        runs.append(idx)
    return runs


def _holdout_kwargs(cfg: RunConfig) -> dict[str, Any]:
    return dict(
        use_fc=cfg["use_fc"],
        augment_factor=cfg["augment_factor"],
        sigma_rel=cfg["augment_sigma"],
        bands=cfg.band_specs(),
        filter_order=cfg["filter_order"],
    )


# --- commands ----------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _need_out(args.out)
    spec = SynthSpec(
        K=cfg["synth_channels"],
        T=cfg["synth_samples"],
        fs_hz=cfg["synth_fs_hz"],
        n_per_class=cfg["synth_per_class"],
        C=cfg["synth_classes"],
        plan=default_plan(cfg["synth_channels"], cfg["synth_classes"]),
        noise=cfg["synth_noise"],
        seed=cfg["seed"],
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    es = synth_generate(spec)
    save_epochset(es, out)
    _emit(args, json.dumps({
        "path": str(container_paths(out)[0]), "n_trials": es.n_trials, "channels": es.n_channels,
        "samples": es.n_samples, "fs_hz": es.fs_hz, "classes": list(es.class_names), "seed": cfg["seed"],
    }))
    return EXIT_OK


def cmd_connectivity(args, cfg: RunConfig) -> int:
    data = load_epochset(_need_input(args.data, "dataset"))
    out = _need_out(args.out)
    threshold = cfg["threshold"]
    if not 0 <= threshold < 1:
        raise ConfigError("threshold must lie in [0, 1)")
    band = STANDARD_BANDS[cfg["band"]]
    (filtered,) = band_sets(data, [band], cfg["filter_order"])
    mat = plv_matrix(instantaneous_phase(filtered), band)
    weights = channel_weights(mat)
    edges = strong_edges(mat, threshold)
    weights.to_json(_with_suffix(out, ".weights.json"), data.montage)
    edges.to_csv(_with_suffix(out, ".edges.csv"), data.montage)
    _write_json(_with_suffix(out, ".plv.json"), _report(cfg, "connectivity", {
        "band": band.name, "channels": list(data.montage.channel_names), "plv": mat.S.tolist(),
    }))
    _emit(args, f"{len(edges.edges)} edges above {threshold} in the {band.name} band")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data = load_epochset(_need_input(args.data, "dataset"))
    out = _need_out(args.out)
    log_path = Path(args.log) if args.log else _with_suffix(out, ".log.jsonl")
    model_cfg = cfg.model_config(data.n_channels, data.n_samples, data.n_classes)
    teacher = None
    if model_cfg.beta > 0:
        if not cfg["teacher"]:
            raise ConfigError("beta > 0 requires a teacher checkpoint (set 'teacher' or --teacher)")
        teacher = load_checkpoint(_need_input(cfg["teacher"], "teacher checkpoint"))
        if (teacher.config.K, teacher.config.T) != (model_cfg.K, model_cfg.T):
            raise ConfigError("teacher was trained for different input dimensions")
    elif cfg["teacher"]:
        raise ConfigError("a teacher is only used when beta > 0")
    result = run_holdout(
        data, model_cfg, split_seed=cfg["seed"], log_path=log_path, teacher=teacher, **_holdout_kwargs(cfg)
    )
    save_checkpoint(result.model, out, extra={"split": result.plan.to_dict(), "bands": list(cfg["bands"])})
    _write_json(_with_suffix(out, ".report.json"), _report(cfg, "train", {
        "data": {"n_trials": data.n_trials, "channels": data.n_channels, "samples": data.n_samples},
        "split": {"train": len(result.plan.train), "val": len(result.plan.val), "test": len(result.plan.test)},
        "fc_weights": [[float(v) for v in w.w] for w in result.weights],
        "history": [result.history.record(e) for e in range(1, len(result.history) + 1)],
        "best_epoch": result.history.best_epoch,
        "test_accuracy": result.test_accuracy,
    }))
    _emit(args, f"test accuracy {result.test_accuracy:.4f} (best epoch {result.history.best_epoch})")
    return EXIT_OK


def _classifier(path: str, cfg: RunConfig) -> FcdnClassifier:
    model = load_checkpoint(_need_input(path, "model checkpoint"))
    return FcdnClassifier(model, cfg.band_specs(), cfg["filter_order"])


def cmd_evaluate(args, cfg: RunConfig, mode: str | None = None) -> int:
    mode = mode or cfg["mode"]
    out = _need_out(args.out)
    paths = args.data or []
    if not paths:
        raise ConfigError("missing --data")
    sets = [load_epochset(_need_input(p, "dataset")) for p in paths]
    if mode == "loso":
        if len(sets) < 2:
            raise ConfigError("loso needs at least 2 subject datasets")
        if not 0 <= cfg["target"] < len(sets):
            raise ConfigError(f"target {cfg['target']} out of range for {len(sets)} subjects")
    elif len(sets) != 1:
        raise ConfigError(f"mode {mode} takes exactly one dataset")
    data = sets[0]
    body: dict[str, Any] = {"mode": mode}

    if mode == "holdout":
        clf = _classifier(args.model, cfg)
        body.update(evaluate_holdout(clf, data, cfg["seed"]))
        _emit(args, f"holdout accuracy {body['accuracy']:.4f}")
    elif mode in ("cv5", "loso"):
        template = load_checkpoint(_need_input(args.model, "model checkpoint")).config
        kw = _holdout_kwargs(cfg)

        def fit(use_fc: bool):
            kw_fc = dict(kw, use_fc=use_fc)
            if mode == "cv5":
                cfg_m = template.replace(K=data.n_channels, T=data.n_samples, C=data.n_classes, seed=cfg["seed"])
                return [r.test_accuracy for r in run_cv(data, cfg_m, cfg["folds"], cfg["seed"], **kw_fc)]
            cfg_m = template.replace(seed=cfg["seed"])
            return [run_loso(sets, cfg["target"], cfg_m, cfg["seed"], **kw_fc).test_accuracy]

        accs = fit(cfg["use_fc"])
        body["fold_accuracies" if mode == "cv5" else "accuracies"] = accs
        body["mean_accuracy"] = float(np.mean(accs))
        if mode == "loso":
            body["target"] = cfg["target"]
        if cfg["compare_ablation"]:
            ablated = fit(False)
            body["ablation_accuracies"] = ablated
            body["ablation_mean_accuracy"] = float(np.mean(ablated))
            if len(accs) >= 2:
                body["p_value"] = permutation_test_paired(accs, ablated, cfg["n_perm"], cfg["seed"])
        _emit(args, f"{mode} mean accuracy {body['mean_accuracy']:.4f}")
    elif mode == "pseudo-online":
        clf = _classifier(args.model, cfg)
        runs = _parse_runs(cfg["runs"], data.n_trials)
        try:
            results = pseudo_online_runs(
                clf, data, runs, window_s=cfg["window_s"], overlap=cfg["overlap"],
                success_threshold=cfg["success_threshold"], strict=cfg["strict"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        body["runs"] = [r.to_dict() for r in results]
        body["success_rates"] = [r.success_rate for r in results]
        body["mean_success_rate"] = float(np.mean(body["success_rates"]))
        for i, r in enumerate(results):
            r.to_csv(_with_suffix(out, ".csv" if len(results) == 1 else f".run{i + 1}.csv"))
        _emit(args, f"pseudo-online success rate {body['mean_success_rate']:.4f}")
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    _write_json(_with_suffix(out, ".json"), _report(cfg, "evaluate", body))
    return EXIT_OK


def cmd_export_features(args, cfg: RunConfig) -> int:
    clf = _classifier(args.model, cfg)
    data = load_epochset(_need_input(args.data, "dataset"))
    out = _need_out(args.out)
    model = clf.model
    filtered = band_sets(data, clf.bands, clf.filter_order)
    stage_names = [f"band{b}.conv{i}" for b in range(3) for i in (1, 2, 3)] + ["cls_token"]
    batch = 32
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header_done = False
        for start in range(0, data.n_trials, batch):
            chunk = [s.epochs[start : start + batch] for s in filtered]
            with no_grad():
                stages = forward(model, chunk, training=False, collect=True).stages
            flat = [stages[name].reshape(stages[name].shape[0], -1) for name in stage_names]
            if not header_done:
                header = ["trial", "label"]
                for name, f in zip(stage_names, flat):
                    header.extend(f"{name}[{j}]" for j in range(f.shape[1]))
                writer.writerow(header)
                header_done = True
            rows = np.concatenate(flat, axis=1)
            for i, row in enumerate(rows):
                t = start + i
                writer.writerow([t, int(data.labels[t])] + [repr(float(v)) for v in row])
    _emit(args, f"wrote features for {data.n_trials} trials to {out}")
    return EXIT_OK


def _channel_index(data: EpochSet, spec: str) -> int:
    if spec in data.montage.channel_names:
        return data.montage.index(spec)
    try:
        k = int(spec)
    except ValueError:
        raise ConfigError(f"unknown channel {spec!r}") from None
    if not 0 <= k < data.n_channels:
        raise ConfigError(f"channel index {k} outside 0..{data.n_channels - 1}")
    return k


def cmd_spectrum(args, cfg: RunConfig) -> int:
    data = load_epochset(_need_input(args.data, "dataset"))
    out = _need_out(args.out)
    k = _channel_index(data, cfg["channel"])
    body: dict[str, Any] = {"spectrum": cfg["spectrum"], "channel": data.montage.channel_names[k]}
    if cfg["spectrum"] == "psd":
        freqs, power = psd(data, k)
        psd_to_csv(freqs, power, _with_suffix(out, ".psd.csv"))
        body["n_freqs"] = len(freqs)
        body["peak_hz"] = float(freqs[int(np.argmax(power))])
    else:
        try:
            tf = ersp(data, k, cfg["tmin"], cfg["baseline_ms"], n_times=cfg["n_times"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        tf.to_csv(_with_suffix(out, ".ersp.csv"))
        body.update(n_freqs=len(tf.freqs), n_times=len(tf.times))
    _write_json(_with_suffix(out, ".json"), _report(cfg, "spectrum", body))
    _emit(args, f"{cfg['spectrum']} of channel {body['channel']} written")
    return EXIT_OK


def cmd_show_config(args, cfg: RunConfig) -> int:
    print(describe_defaults() if args.defaults else cfg.to_text(), end="")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config)")
    p.add_argument("--out", default=d, help="output path or prefix")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)
    p.add_argument("--set", action="append", default=d, metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcdn", description="Connectivity-weighted EEG decoding pipeline")
    parser.add_argument("--version", action="version", version=f"fcdn {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic coupled-phase dataset")
    _add_globals(p, suppress=True)

    p = sub.add_parser("connectivity", help="PLV matrix, channel weights and strong edges for one band")
    _add_globals(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--band")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("train", help="split, augment, fit connectivity weights, and train")
    _add_globals(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--log", help="JSON-lines training log (default <out>.log.jsonl)")
    p.add_argument("--teacher", help="teacher checkpoint for beta > 0")

    for name in ("evaluate", "pseudo-online"):
        p = sub.add_parser(name, help="holdout / cv5 / loso / pseudo-online reports" if name == "evaluate" else "sliding-window replay")
        _add_globals(p, suppress=True)
        p.add_argument("--model", required=True)
        p.add_argument("--data", nargs="+", required=True)
        if name == "evaluate":
            p.add_argument("--mode", choices=["holdout", "cv5", "loso", "pseudo-online"])
            p.add_argument("--target", type=int)
        p.add_argument("--strict", action="store_true", default=None)

    p = sub.add_parser("export-features", help="per-stage activations as CSV")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("spectrum", help="PSD or ERSP of one channel as CSV")
    _add_globals(p, suppress=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["psd", "ersp"])
    p.add_argument("--channel")
    p.add_argument("--tmin", type=float)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    _add_globals(p, suppress=True)
    p.add_argument("--defaults", action="store_true", help="print documented defaults instead")
    return parser


def resolve_config(args) -> RunConfig:
    overrides: dict[str, Any] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(key.strip(), value.strip(), "--set")
    flag_keys = {"seed": "seed", "band": "band", "threshold": "threshold", "teacher": "teacher",
                 "mode": "mode", "target": "target", "strict": "strict",
                 "kind": "spectrum", "channel": "channel", "tmin": "tmin"}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if "band" in overrides and overrides["band"] not in STANDARD_BANDS:
        raise ConfigError(f"unknown band {overrides['band']!r}")
    return RunConfig.load(args.config, overrides)


COMMANDS = {
    "synth": cmd_synth,
    "connectivity": cmd_connectivity,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "pseudo-online": lambda a, c: cmd_evaluate(a, c, mode="pseudo-online"),
    "export-features": cmd_export_features,
    "spectrum": cmd_spectrum,
    "show-config": cmd_show_config,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"fcdn: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"fcdn: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"fcdn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - last-resort mapping onto the generic exit code
        print(f"fcdn: error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
