"""Command-line front end.

Every subcommand writes its outputs plus ``config.json`` (the fully resolved
settings) and ``manifest.json`` (content hashes of inputs and outputs) into
``--out-dir``.  Re-running a subcommand with ``--config out/config.json``
reproduces the same bytes.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- configuration -----------------------------------------------------------------

def default_config():
    from .pipeline import desk_configs
    sim, enc, tr = desk_configs()
    return {
        "seed": 0,
        "simulate": sim.to_dict(),
        "encoder": enc.to_dict(),
        "train": tr.to_dict(),
        "filter": {"keep_fraction": 0.75, "statistic": "trace_stat"},
        "schedule": {"total_steps": 1890, "epochs": 30, "lr_max": 1e-3, "curriculum": True},
        "ablate": {"seeds": [0, 1, 2]},
        "inputs": {},
    }


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _json_default(o):
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o)}")


def _normalise(obj):
    # tuples -> lists and inf -> "inf" so the JSON round-trips exactly
    if isinstance(obj, dict):
        return {k: _normalise(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalise(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _float(v):
    if isinstance(v, str):
        if v.lower() in ("inf", "clean", "none"):
            return math.inf
        return float(v)
    return math.inf if v is None else float(v)


def load_config(path):
    cfg = default_config()
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        user.pop("command", None)         # written by finish(); informational only
        unknown = set(user) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    return cfg


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_normalise(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def finish(out_dir, command, cfg, inputs, outputs):
    """Write the resolved config and the manifest for a finished command."""
    cfg = dict(cfg)
    cfg["command"] = command
    _write_json(os.path.join(out_dir, "config.json"), cfg)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "inputs": {os.path.basename(p): sha256(p) for p in inputs},
        "outputs": {name: sha256(os.path.join(out_dir, name)) for name in outputs},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def read_manifest(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise RuntimeError(f"{directory} has no manifest.json")
    with open(path) as fh:
        return json.load(fh)


def _in_dir(directory, name):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise RuntimeError(f"missing input {path}")
    return path


# -- subcommands ----------------------------------------------------------------------

def _sim_config(cfg):
    from .pipeline import SimConfig
    d = dict(cfg["simulate"])
    d["snr"] = _float(d["snr"])
    d["seed"] = cfg["seed"]
    return SimConfig(**d)


def _load_stack(stack_dir):
    import numpy as np

    from .io import read_orientations
    from .mrc import read_mrc
    from .simulator import ProjectionStack
    images, pixel = read_mrc(_in_dir(stack_dir, "stack.mrc"))
    quats, shifts, extra = read_orientations(_in_dir(stack_dir, "orient.csv"))
    split = np.asarray(extra.get("split", np.array(["train"] * len(quats))))
    snr = float(extra["snr_target"][0]) if "snr_target" in extra and len(quats) else math.inf
    return ProjectionStack(images.astype(np.float64), quats, shifts, extra.get("defocus", np.zeros(len(quats))),
                           split, pixel, snr)


def cmd_simulate(args, cfg):
    from .io import write_orientations
    from .mrc import write_mrc
    from .pipeline import simulate
    import numpy as np
    if args.n is not None:
        cfg["simulate"]["n_images"] = args.n
    if args.snr is not None:
        cfg["simulate"]["snr"] = args.snr
    if args.side is not None:
        cfg["simulate"]["side"] = args.side
    sim = _sim_config(cfg)
    volume, stack = simulate(sim, threads=args.threads)
    out = args.out_dir
    write_mrc(os.path.join(out, "stack.mrc"), stack.images, stack.pixel_size, volume=False)
    write_mrc(os.path.join(out, "volume.mrc"), volume.data, volume.pixel_size, volume=True)
    write_orientations(os.path.join(out, "orient.csv"), stack.quats, stack.shifts, {
        "defocus": stack.defocus,
        "snr_target": np.full(len(stack), stack.snr_target),
        "split": stack.split,
    })
    finish(out, "simulate", cfg, [], ["stack.mrc", "volume.mrc", "orient.csv"])


def _encoder_and_train(cfg, args):
    from .nn.model import EncoderConfig
    from .nn.train import TrainConfig
    enc = dict(cfg["encoder"])
    tr = dict(cfg["train"])
    for key, value in (("head", args.head), ("pooling", args.pool), ("blur_mode", args.blur)):
        if value is not None:
            enc[key] = value
    for key, value in (("epochs", args.epochs), ("style", args.style)):
        if value is not None:
            tr[key] = value
    tr["seed"] = cfg["seed"]
    cfg["encoder"], cfg["train"] = enc, tr
    return EncoderConfig.from_dict(enc), TrainConfig.from_dict(tr)


def cmd_train(args, cfg):
    import numpy as np

    from .io import write_history, write_pairs
    from .nn.checkpoint import save_model
    from .nn.model import build_encoder
    from .nn.train import build_pairs, train
    from .simulator import encoder_inputs
    stack_dir = args.stack or cfg["inputs"].get("stack")
    if not stack_dir:
        raise UsageError("train needs --stack DIR")
    cfg["inputs"]["stack"] = stack_dir
    enc, tcfg = _encoder_and_train(cfg, args)
    stack = _load_stack(stack_dir)
    x = encoder_inputs(stack.images, enc.blur_mode, enc.n_filters, np.dtype(enc.dtype))
    pairs = build_pairs(stack, tcfg) if tcfg.style != "single" else None
    model = build_encoder(enc, cfg["seed"])
    log = (lambda r: print(" ".join(f"{k}={v:.4g}" for k, v in r.items()), flush=True)) if args.verbose else None
    model, history = train(model, stack, pairs, tcfg, x, log)
    out = args.out_dir
    save_model(model, os.path.join(out, "model.ofm"), extra={"train": tcfg.to_dict()})
    write_history(os.path.join(out, "history.csv"), history)
    outputs = ["model.ofm", "history.csv"]
    if pairs is not None:
        write_pairs(os.path.join(out, "pairs.csv"), pairs.pairs, pairs.bins)
        outputs.append("pairs.csv")
    finish(out, "train", cfg, [os.path.join(stack_dir, "stack.mrc"), os.path.join(stack_dir, "orient.csv")], outputs)


def cmd_infer(args, cfg):
    import numpy as np

    from .io import write_orientations
    from .nn.checkpoint import load_model
    from .nn.train import infer
    from .simulator import encoder_inputs
    model_path = args.model or cfg["inputs"].get("model")
    stack_dir = args.stack or cfg["inputs"].get("stack")
    if not model_path or not stack_dir:
        raise UsageError("infer needs --model FILE and --stack DIR")
    cfg["inputs"].update(model=model_path, stack=stack_dir)
    model, _ = load_model(model_path)
    stack = _load_stack(stack_dir)
    x = encoder_inputs(stack.images, model.config.blur_mode, model.config.n_filters, model.dtype)
    quats, stats = infer(model, x)
    extra = {"split": stack.split}
    if stats is not None:
        extra.update(lambda_max=stats["lambda_max"], trace_stat=stats["trace_stat"],
                     degenerate=stats["degenerate"].astype(bool))
    write_orientations(os.path.join(args.out_dir, "orient.csv"), quats, np.zeros((len(quats), 2)), extra)
    finish(args.out_dir, "infer", cfg, [model_path, os.path.join(stack_dir, "stack.mrc")], ["orient.csv"])


def cmd_filter(args, cfg):
    import numpy as np

    from .io import read_table, write_table
    from .uncertainty import quantile_filter
    src = args.orient or cfg["inputs"].get("orient")
    if not src:
        raise UsageError("filter needs --orient FILE")
    cfg["inputs"]["orient"] = src
    if args.keep is not None:
        cfg["filter"]["keep_fraction"] = args.keep
    if args.stat is not None:
        cfg["filter"]["statistic"] = args.stat
    stat_name = cfg["filter"]["statistic"]
    header, cols = read_table(src)
    if stat_name not in cols:
        raise RuntimeError(f"{src} has no {stat_name} column (was the model trained with the QCQP head?)")
    stats = np.array(cols[stat_name], dtype=np.float64)
    degenerate = np.array(cols["degenerate"], dtype=np.int64).astype(bool) if "degenerate" in cols else None
    keep = quantile_filter(stats, float(cfg["filter"]["keep_fraction"]), degenerate)
    rows = [[cols[h][i] for h in header] for i in range(len(stats)) if keep[i]]
    write_table(os.path.join(args.out_dir, "orient.csv"), header, rows)
    finish(args.out_dir, "filter", cfg, [src], ["orient.csv"])


def cmd_reconstruct(args, cfg):
    from .io import read_orientations
    from .mrc import read_mrc, write_mrc
    from .recon import reconstruct
    import numpy as np
    stack_dir = args.stack or cfg["inputs"].get("stack")
    src = args.orient or cfg["inputs"].get("orient")
    if not stack_dir or not src:
        raise UsageError("reconstruct needs --stack DIR and --orient FILE")
    cfg["inputs"].update(stack=stack_dir, orient=src)
    images, pixel = read_mrc(_in_dir(stack_dir, "stack.mrc"))
    quats, shifts, _ = read_orientations(src)
    _, true_shifts, _ = read_orientations(_in_dir(stack_dir, "orient.csv"))
    from .io import read_table
    idx = np.array(read_table(src)[1]["index"], dtype=np.int64)
    # predicted orientations carry no shift estimate; use the stack's recorded shifts
    vol = reconstruct(images[idx], quats, true_shifts[idx], pixel_size=pixel)
    write_mrc(os.path.join(args.out_dir, "volume.mrc"), vol.data, pixel, volume=True)
    finish(args.out_dir, "reconstruct", cfg, [os.path.join(stack_dir, "stack.mrc"), src], ["volume.mrc"])


def cmd_evaluate(args, cfg):
    import numpy as np

    from .io import read_orientations, read_table, write_fsc, write_table
    from .mrc import read_mrc
    from .recon import fsc, resolution_at, uncertainty_report
    from .so3 import symmetric_distance, symmetry_group
    truth_dir = args.truth or cfg["inputs"].get("truth")
    pred_dir = args.pred or cfg["inputs"].get("pred")
    if not truth_dir or not pred_dir:
        raise UsageError("evaluate needs --truth DIR (simulate output) and --pred DIR (infer output)")
    cfg["inputs"].update(truth=truth_dir, pred=pred_dir)
    truth_manifest, pred_manifest = read_manifest(truth_dir), read_manifest(pred_dir)
    recorded = pred_manifest["inputs"].get("stack.mrc")
    actual = truth_manifest["outputs"].get("stack.mrc")
    if recorded is None or recorded != actual or sha256(_in_dir(truth_dir, "stack.mrc")) != actual:
        raise RuntimeError("manifest mismatch: predictions were not made from this simulation's stack")
    tq, _, textra = read_orientations(_in_dir(truth_dir, "orient.csv"))
    pq, _, pextra = read_orientations(_in_dir(pred_dir, "orient.csv"))
    if len(tq) != len(pq):
        raise RuntimeError("prediction and truth tables differ in length")
    group = symmetry_group(cfg["simulate"].get("group", "C1"))
    err = symmetric_distance(pq, tq, group)
    split = textra.get("split", np.array(["all"] * len(tq)))
    rows = []
    for s in ("train", "val", "test"):
        sel = split == s
        if np.any(sel):
            rows.append(("median_error", s, float(np.median(err[sel]))))
    rows.append(("median_error", "all", float(np.median(err))))
    inputs = [os.path.join(truth_dir, "orient.csv"), os.path.join(pred_dir, "orient.csv")]
    if "lambda_max" in pextra and len(err) >= 10:
        test = split == "test" if np.any(split == "test") else np.ones(len(err), bool)
        rep = uncertainty_report(err[test], pextra["lambda_max"][test], pextra["trace_stat"][test])
        rows.append(("spearman_lambda_max", "test", rep.spearman_lambda_max))
        rows.append(("spearman_trace", "test", rep.spearman_trace))
        write_table(os.path.join(args.out_dir, "uncertainty.csv"), rep.CSV_HEADER, rep.rows)
    outputs = ["report.csv"] + (["uncertainty.csv"] if "lambda_max" in pextra and len(err) >= 10 else [])
    vol_path = args.volume or cfg["inputs"].get("volume")
    ref_path = args.reference or cfg["inputs"].get("reference")
    if vol_path and ref_path:
        cfg["inputs"].update(volume=vol_path, reference=ref_path)
        v, pixel = read_mrc(vol_path)
        r, _ = read_mrc(ref_path)
        curve = fsc(v, r)
        res = resolution_at(curve, pixel_size=pixel)
        rows.append(("resolution_angstrom", "fsc", res.angstrom))
        rows.append(("resolution_at_limit", "fsc", int(res.limit)))
        write_fsc(os.path.join(args.out_dir, "fsc.csv"), curve)
        outputs.append("fsc.csv")
        inputs += [vol_path, ref_path]
    write_table(os.path.join(args.out_dir, "report.csv"), ("metric", "subset", "value"), rows)
    finish(args.out_dir, "evaluate", cfg, inputs, outputs)


def cmd_gradcheck(args, cfg):
    from .nn.gradcheck import LAYER_TOL, NETWORK_TOL, layer_report, network_report
    ok = True
    for name, err in layer_report(cfg["seed"]).items():
        flag = err < LAYER_TOL
        ok &= flag
        print(f"{name:12s} max_rel_err={err:.3e} {'ok' if flag else 'FAIL'}")
    worst = max(e[-1] for e in network_report(seed=cfg["seed"]))
    flag = worst < NETWORK_TOL
    ok &= flag
    print(f"{'network':12s} max_rel_err={worst:.3e} {'ok' if flag else 'FAIL'}")
    if not ok:
        raise RuntimeError("gradient check failed")


def cmd_schedule_dump(args, cfg):
    from .io import write_schedule
    from .losses import OneCycleConfig, schedule_table
    sc = cfg["schedule"]
    for key, value in (("total_steps", args.steps), ("epochs", args.epochs), ("lr_max", args.lr_max)):
        if value is not None:
            sc[key] = value
    if args.no_curriculum:
        sc["curriculum"] = False
    rows = schedule_table(OneCycleConfig(int(sc["total_steps"]), float(sc["lr_max"])), int(sc["epochs"]),
                          bool(sc["curriculum"]))
    write_schedule(os.path.join(args.out_dir, "schedule.csv"), rows)
    finish(args.out_dir, "schedule-dump", cfg, [], ["schedule.csv"])


def cmd_ablate(args, cfg):
    import numpy as np

    from .io import write_table
    from .nn.model import EncoderConfig
    from .nn.train import TrainConfig
    from .pipeline import ABLATION_AXES, run_experiment, simulate, variant
    from .simulator import encoder_inputs
    axis = args.axis or cfg["ablate"].get("axis")
    if axis not in ABLATION_AXES:
        raise UsageError("ablate needs --axis {head,style,blur,pool}")
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.n is not None:
        cfg["simulate"]["n_images"] = args.n
    _, stack = simulate(_sim_config(cfg), threads=args.threads)
    base_enc = EncoderConfig.from_dict(cfg["encoder"])
    base_tr = TrainConfig.from_dict(cfg["train"])
    seeds = [int(s) for s in cfg["ablate"]["seeds"]]
    rows = []
    for name in ABLATION_AXES[axis]:
        enc, tr = variant(axis, name, base_enc, base_tr)
        x = encoder_inputs(stack.images, enc.blur_mode, enc.n_filters, np.dtype(enc.dtype))
        per_split = {}
        for seed in seeds:
            res = run_experiment(stack, enc, dataclasses.replace(tr, seed=seed), inputs=x)
            for s, v in res.median.items():
                per_split.setdefault(s, []).append(v)
                rows.append((name, s, seed, v))
        for s, vals in per_split.items():
            rows.append((name, s, "median", float(np.median(vals))))
        if args.verbose:
            print(name, {s: float(np.median(v)) for s, v in per_split.items()}, flush=True)
    cfg["ablate"]["axis"] = axis
    write_table(os.path.join(args.out_dir, "ablate.csv"), ("variant", "split", "seed", "median_error"), rows)
    finish(args.out_dir, "ablate", cfg, [], ["ablate.csv"])


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "filter": cmd_filter,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "schedule-dump": cmd_schedule_dump,
    "ablate": cmd_ablate,
}


def build_parser():
    common = ArgParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    common.add_argument("--config", default=None, help="JSON config; a resolved config.json re-runs a command")
    common.add_argument("--out-dir", default=".", help="directory for outputs (created if missing)")
    common.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
    common.add_argument("--verbose", action="store_true")
    p = ArgParser(prog="cryorient", description="Orientation estimation for synthetic cryo-EM projections.",
                  parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=ArgParser)

    s = sub.add_parser("simulate", parents=[common], help="generate a projection stack")
    s.add_argument("--n", type=int)
    s.add_argument("--snr", type=_float, help="target SNR or 'inf' for clean data")
    s.add_argument("--side", type=int)

    def model_flags(q):
        q.add_argument("--epochs", type=int)
        q.add_argument("--style", choices=("single", "siamese", "siamese_aux"))
        q.add_argument("--head", choices=("quat", "sixd", "qcqp"))
        q.add_argument("--pool", choices=("gem", "max", "maxavg"))
        q.add_argument("--blur", choices=("none", "gaussian", "lowpass"))

    t = sub.add_parser("train", parents=[common], help="train an encoder on a stack")
    t.add_argument("--stack", help="directory written by simulate")
    model_flags(t)

    i = sub.add_parser("infer", parents=[common], help="predict orientations and uncertainty")
    i.add_argument("--model")
    i.add_argument("--stack")

    f = sub.add_parser("filter", parents=[common], help="drop the most uncertain predictions")
    f.add_argument("--orient", help="orient.csv written by infer")
    f.add_argument("--keep", type=float, help="fraction to keep (default 0.75)")
    f.add_argument("--stat", choices=("trace_stat", "lambda_max"))

    r = sub.add_parser("reconstruct", parents=[common], help="direct Fourier reconstruction")
    r.add_argument("--stack")
    r.add_argument("--orient")

    e = sub.add_parser("evaluate", parents=[common], help="angular errors, uncertainty correlation, FSC")
    e.add_argument("--truth", help="simulate output directory")
    e.add_argument("--pred", help="infer output directory")
    e.add_argument("--volume", help="reconstructed volume (MRC)")
    e.add_argument("--reference", help="reference volume (MRC)")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")

    d = sub.add_parser("schedule-dump", parents=[common], help="write the lr / momentum / curriculum schedule")
    d.add_argument("--steps", type=int)
    d.add_argument("--epochs", type=int)
    d.add_argument("--lr-max", type=float)
    d.add_argument("--no-curriculum", action="store_true")

    a = sub.add_parser("ablate", parents=[common], help="compare settings along one axis")
    a.add_argument("--axis", choices=("head", "style", "blur", "pool"), help="required unless set in the config")
    a.add_argument("--epochs", type=int)
    a.add_argument("--n", type=int)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            raise UsageError("a subcommand is required")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"cryorient {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"cryorient {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
