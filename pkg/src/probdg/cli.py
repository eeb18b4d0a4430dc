"""Command line entry point: train, eval, bench, verify, augment, stats."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from .config import load_config
from .exceptions import ConfigError, NonFiniteLoss, ProbDGError
from .pipeline import ABLATIONS, gate_param_dict, gates_from_dict, train
from .net import TinyNet
from .stats import StatsBank
from .style import StyleConfig, style_perturb
from .tensor_io import (
    ensure_dir,
    file_sha256,
    make_rng,
    read_image,
    tensor_read,
    tensor_write,
    write_image,
)
from .wavelet import init_gates, wesp_apply

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def save_checkpoint(path, net, gates, bank, config_dict):
    """Directory of TNSR tensors plus ``manifest.json`` with shapes and hashes."""
    ensure_dir(path)
    tensors = dict(net.params)
    tensors.update(gate_param_dict(gates))
    tensors["bank_means"] = bank.means
    tensors["bank_covs"] = bank.covs
    tensors["bank_counts"] = bank.counts.astype(np.float64)
    layers = []
    for name in sorted(tensors):
        file = os.path.join(path, f"{name}.tnsr")
        tensor_write(tensors[name], file, "f64")
        layers.append({"layer": name, "shape": list(np.shape(tensors[name])), "dtype": "f64",
                       "sha256": file_sha256(file)})
    meta = {"in_ch": net.in_ch, "num_classes": net.num_classes, "stem_ch": net.stem_ch,
            "feat_ch": net.feat_ch, "slope": net.slope}
    dump_json({"layers": layers, "net": meta}, os.path.join(path, "manifest.json"))
    dump_json(config_dict, os.path.join(path, "config.json"))


def load_checkpoint(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    tensors = {}
    for entry in manifest["layers"]:
        file = os.path.join(path, f"{entry['layer']}.tnsr")
        if file_sha256(file) != entry["sha256"]:
            raise ConfigError(f"checksum mismatch for {file}")
        tensors[entry["layer"]] = tensor_read(file)
    meta = manifest["net"]
    net = TinyNet(**meta)
    net.params = {k: tensors[k] for k in ("stem_w", "stem_b", "block_w", "block_b", "head_w", "head_b")}
    gates = gates_from_dict(tensors)
    bank = StatsBank(meta["num_classes"], meta["feat_ch"],
                     tensors["bank_counts"].astype(np.int64), tensors["bank_means"],
                     tensors["bank_covs"])
    return net, gates, bank


def _source_domains(cfg):
    bcfg = cfg.bench(["full"], seeds=[0])
    data = bench_mod.make_datasets(bcfg)
    held = cfg.data.held_out
    if not 0 <= held < len(data):
        raise ConfigError(f"held_out {held} outside 0..{len(data) - 1}")
    return data, held


def cmd_train(args):
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    seed = cfg.seeds[0] if args.seed is None else args.seed
    data, held = _source_domains(cfg)
    sources = [data[d][0] for d in range(len(data)) if d != held]
    ensure_dir(out)
    step_log = []
    on_step = None
    if args.log_losses:
        def on_step(epoch, step, report):
            step_log.append({"epoch": epoch, "step": step, **report.to_dict()})

    def on_epoch(entry):
        print(f"epoch {entry['epoch']:3d}  total {entry['total']:.4f}  seg_s {entry['seg_s']:.4f}  "
              f"seg_t {entry['seg_t']:.4f}  contrast {entry['contrast']:.4f}")

    try:
        net, gates, bank, log = train(sources, cfg.pipeline(), cfg.sgd(seed), bench_mod.NUM_CLASSES,
                                      model=cfg.model.model_dump(), on_epoch=on_epoch, on_step=on_step)
    except NonFiniteLoss as exc:
        print(f"aborting: {exc}", file=sys.stderr)
        return EXIT_FAIL
    config_dict = cfg.model_dump()
    config_dict["seed"] = seed
    save_checkpoint(os.path.join(out, "checkpoint"), net, gates, bank, config_dict)
    dump_json(log, os.path.join(out, "loss_log.json"))
    if args.log_losses:
        dump_json(step_log, os.path.join(out, "loss_steps.json"))
    result = _evaluate(net, data, held)
    result.update({"seed": seed, "epochs": len(log), "final_loss": log[-1]["total"]})
    dump_json(result, os.path.join(out, "train_result.json"))
    print(f"held-out domain {held}: dice {result['dice_per_class']}")
    return EXIT_OK


def _evaluate(net, data, held):
    x_t, y_t = data[held][1]
    dice, asd, undefined = bench_mod.evaluate(net.predict(x_t), y_t)
    src = [d for d in range(len(data)) if d != held]
    src_x = np.concatenate([data[d][1][0] for d in src])
    src_y = np.concatenate([data[d][1][1] for d in src])
    src_dice, _, _ = bench_mod.evaluate(net.predict(src_x), src_y)
    return {"held_out": held, "dice_per_class": dice.tolist(),
            "asd_per_class": [None if np.isnan(v) else float(v) for v in asd],
            "asd_undefined": undefined, "source_dice_per_class": src_dice.tolist()}


def cmd_eval(args):
    config_path = args.config or os.path.join(args.checkpoint, "config.json")
    with open(config_path) as fh:
        raw = json.load(fh)
    raw.pop("seed", None)
    from .config import RunConfig

    try:
        cfg = RunConfig.model_validate(raw)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    net, _, _ = load_checkpoint(args.checkpoint)
    data, held = _source_domains(cfg)
    result = _evaluate(net, data, held)
    if args.out:
        dump_json(result, args.out)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_seeds(text, default):
    if text is None:
        return default
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    return list(range(int(text)))


def cmd_bench(args):
    cfg = load_config(args.config)
    ablations = list(ABLATIONS) if args.ablation in (None, "all") else [args.ablation]
    seeds = _parse_seeds(args.seeds, cfg.seeds)
    bcfg = cfg.bench(ablations, seeds=seeds, threads=args.threads)
    if args.domains is not None:
        if args.domains > len(bcfg.domains):
            raise ConfigError(f"only {len(bcfg.domains)} domains are configured")
        bcfg = bench_mod.BenchConfig(**{**vars(bcfg), "domains": bcfg.domains[:args.domains],
                                        "held_out": None})
    results = bench_mod.run_lodo(bcfg)
    print(bench_mod.results_table(results))
    for check in results["ordering"]:
        print(f"{check['lower']} -> {check['upper']}: gap {100 * check['gap']:+.2f} "
              f"{'PASS' if check['pass'] else 'FAIL'}")
    if args.out:
        dump_json(results, args.out)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suites

    report, ok = run_suites([args.suite])
    for suite in report:
        for c in suite["checks"]:
            print(f"{'PASS' if c['pass'] else 'FAIL'}  {suite['suite']:<12} {c['test']:<40} "
                  f"err={c['max_rel_err']:.3e}  tol={c['threshold']:g}")
    if args.out:
        dump_json({"suites": report, "pass": ok}, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_augment(args):
    img = read_image(args.input)
    rng = make_rng(args.seed)
    styled = style_perturb(img, StyleConfig(perturb_prob=args.prob, mix=args.mix), rng)
    ext = ".pgm" if img.shape[0] == 1 else ".ppm"
    styled_path = f"{args.out}_styled{ext}"
    write_image(styled, styled_path)
    print(styled_path)
    if not args.no_wesp:
        fused, _ = wesp_apply(img, styled, init_gates(img.shape[0]))
        wesp_path = f"{args.out}_wesp{ext}"
        write_image(fused, wesp_path)
        print(wesp_path)
    return EXIT_OK


def cmd_stats(args):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(args.manifest))
    pairs = []
    for entry in manifest:
        feats = tensor_read(os.path.join(base, entry["features"]))
        labels = tensor_read(os.path.join(base, entry["labels"]))
        pairs.append((feats, labels.astype(np.int64)))
    if not pairs:
        raise ConfigError("manifest lists no feature/label pairs")
    k = args.classes or int(max(y.max() for _, y in pairs)) + 1
    bank = StatsBank(k, pairs[0][0].shape[0])
    for f, y in pairs:
        bank.update(f, y)
    ensure_dir(args.out)
    summary = []
    for c in range(k):
        tensor_write(bank.means[c], os.path.join(args.out, f"class_{c}_mean.tnsr"))
        tensor_write(bank.covs[c], os.path.join(args.out, f"class_{c}_cov.tnsr"))
        summary.append({"class": c, "count": int(bank.counts[c]),
                        "trace": float(np.trace(bank.covs[c]))})
    tensor_write(bank.counts.astype(np.float64), os.path.join(args.out, "counts.tnsr"))
    dump_json(summary, os.path.join(args.out, "summary.json"))
    for row in summary:
        print(f"class {row['class']}: count {row['count']}  trace {row['trace']:.6g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="probdg", description=__doc__)
    parser.add_argument("--threads", type=int, default=1, help="worker processes for bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model with held-out domain from the config")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--log-losses", action="store_true", help="also write per-step loss reports")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its held-out domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="leave-one-domain-out ablation benchmark")
    p.add_argument("--config")
    p.add_argument("--domains", type=int)
    p.add_argument("--ablation", choices=[*ABLATIONS, "all"])
    p.add_argument("--seeds", help="a count (N -> 0..N-1) or a comma list")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run numerical property suites")
    p.add_argument("suite", choices=["stats", "wavelet", "contrastive", "gradients", "metrics", "all"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("augment", help="style-perturb an image, with and without wavelet repair")
    p.add_argument("input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--no-wesp", action="store_true")
    p.add_argument("--prob", type=float, default=1.0)
    p.add_argument("--mix", type=float, default=1.0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", help="Gaussian class statistics from feature/label TNSR pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProbDGError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
