"""Command-line front end.

Every subcommand takes its parameters from flags, from a ``key=value``
config file (``--config``, ``#`` starts a comment), or both; flags win.
All randomness is seeded from explicit parameters.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import DredError, InvalidArgument

# (key, type, default, help) per subcommand
_SYNTH = [
    ("seed", int, 0, "generator seed"),
    ("n_frames", int, 400, "number of 10-ms frames (even)"),
    ("out", str, "features.bin", "output feature file"),
]
_CORPUS = [
    ("n_sequences", int, 120, "synthetic corpus size"),
    ("seq_frames", int, 400, "frames per corpus sequence"),
    ("corpus_seed", int, 1000, "seed of the first corpus sequence"),
    ("corpus", str, None, "directory of feature files to use instead of the synthetic corpus"),
]
_TRAIN = _CORPUS + [
    ("steps", int, 8000, "gradient steps"),
    ("seed", int, 0, "training seed"),
    ("lambda_min", float, 3e-3, "smallest lambda"),
    ("lambda_max", float, 0.3, "largest lambda"),
    ("mix", float, 0.5, "weight of the soft-path distortion"),
    ("table_out", str, "table.bin", "output quantizer table"),
    ("log_out", str, "train_log.jsonl", "JSON-lines RD log"),
]
_RD_SWEEP = [
    ("table", str, "table.bin", "quantizer table"),
    ("n_sequences", int, 20, "synthetic held-out corpus size"),
    ("seq_frames", int, 400, "frames per sequence"),
    ("corpus_seed", int, 500000, "seed of the first held-out sequence"),
    ("corpus", str, None, "directory of feature files to use instead"),
    ("out", str, "-", "CSV output path, '-' for stdout"),
]
_SCHEDULE = [
    ("table", str, "table.bin", "quantizer table"),
    ("schedule", str, "default", "'default' (linear, id 0) or 'ramp' (rate-matched 50 to 6 bits, id 1)"),
    ("duration", float, 1.04, "redundancy duration in seconds for the default schedule"),
    ("probe_seed", int, 900000, "seed of the probe corpus used to rate-match the ramp schedule"),
]
_BUILD = _SCHEDULE + [
    ("features", str, None, "feature file; a synthetic sequence is used when absent"),
    ("seed", int, 0, "seed of the synthetic sequence"),
    ("n_frames", int, 1000, "frames of the synthetic sequence"),
    ("primary_bytes", int, 40, "size of the primary payload stub"),
    ("out", str, "stream.jsonl", "output JSON-lines stream"),
]
_SIMULATE = _SCHEDULE + [
    ("stream", str, None, "JSON-lines stream; built from a synthetic sequence when absent"),
    ("seed", int, 0, "seed of the synthetic sequence"),
    ("n_frames", int, 1000, "frames of the synthetic sequence"),
    ("trace", str, None, "trace file ('1' arrived, '0' lost); overrides generated traces"),
    ("burst_start", int, -1, "single-burst scenario: first lost packet (disabled when < 0)"),
    ("burst_length", int, 0, "single-burst scenario: lost packets"),
    ("loss_rates", str, "0.184", "comma-separated average loss rates to sweep"),
    ("mean_burst", float, 5.0, "mean burst length in packets"),
    ("trace_seeds", str, "0", "comma-separated trace seeds"),
    ("out", str, "-", "report JSON path, '-' for stdout"),
]
_GRAD = [
    ("n_points", int, 100, "random points"),
    ("seed", int, 0, "seed"),
    ("tolerance", float, 1e-4, "maximum allowed relative error"),
    ("out", str, "-", "JSON output path, '-' for stdout"),
]


def read_config(path) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc.strerror}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _resolve(args, spec) -> dict:
    conf = read_config(args.config) if args.config else {}
    known = {k for k, *_ in spec}
    unknown = set(conf) - known
    if unknown:
        raise InvalidArgument(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, typ, default, _ in spec:
        value = getattr(args, key)
        if value is None and key in conf:
            try:
                value = typ(conf[key])
            except ValueError as exc:
                raise InvalidArgument(f"config key {key}: {exc}") from exc
        out[key] = default if value is None else value
    return out


@contextmanager
def _output(path):
    """Text output to ``path``, or stdout for ``-``."""
    if path == "-":
        yield sys.stdout
        return
    try:
        fp = open(path, "w", newline="")
    except OSError as exc:
        raise InvalidArgument(f"cannot write {path}: {exc.strerror}") from exc
    with fp:
        yield fp


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _load_corpus(c):
    from .features import gen_synthetic_features, read_features
    if c["corpus"]:
        files = sorted(Path(c["corpus"]).glob("*.bin"))
        if not files:
            raise InvalidArgument(f"no feature files (*.bin) in {c['corpus']}")
        return [read_features(f) for f in files]
    return [gen_synthetic_features(c["corpus_seed"] + i, c["seq_frames"]) for i in range(c["n_sequences"])]


def _load_table(path):
    from .latent import QuantizerTable
    try:
        return QuantizerTable.load(path)
    except OSError as exc:
        raise InvalidArgument(f"cannot read table {path}: {exc.strerror}") from exc


def make_registry(table, probe_seed: int = 900000, duration: float = 1.04):
    """Registry shared by stream builder and receiver: id 0 linear, id 1 rate-matched."""
    from .features import gen_synthetic_features
    from .framing import ScheduleRegistry, default_schedule, rate_matched_schedule
    from .latent import reference_transform
    tr = reference_transform()
    probe = np.concatenate([tr.analyze(gen_synthetic_features(probe_seed + i, 400).frames)[0] for i in range(5)])
    return ScheduleRegistry([default_schedule(duration, 0), rate_matched_schedule(table, probe, schedule_id=1)])


def _schedule(c, table):
    registry = make_registry(table, c["probe_seed"], c["duration"])
    ids = {"default": 0, "ramp": 1}
    if c["schedule"] not in ids:
        raise InvalidArgument(f"schedule must be 'default' or 'ramp', got {c['schedule']!r}")
    return registry, registry.get(ids[c["schedule"]])


def cmd_synth(c) -> int:
    from .features import gen_synthetic_features, write_features
    seq = gen_synthetic_features(c["seed"], c["n_frames"])
    try:
        write_features(c["out"], seq)
    except OSError as exc:
        raise InvalidArgument(f"cannot write {c['out']}: {exc.strerror}") from exc
    return 0


def cmd_train(c) -> int:
    from .training import TrainConfig, default_lambdas, train_tables
    cfg = TrainConfig(lambdas=default_lambdas(c["lambda_min"], c["lambda_max"]), mix=c["mix"],
                      steps=c["steps"], seq_frames=c["seq_frames"], seed=c["seed"])
    corpus = _load_corpus(c)
    with _output(c["log_out"]) as log_fp:
        table, points = train_tables(cfg, corpus, log_file=log_fp)
    try:
        table.save(c["table_out"])
    except OSError as exc:
        raise InvalidArgument(f"cannot write {c['table_out']}: {exc.strerror}") from exc
    print(f"table {c['table_out']} sha256 {table.checksum()}", file=sys.stderr)
    return 0


RD_HEADER = ["lambda_index", "bits_per_vector", "distortion", "nondegenerate"]


def cmd_rd_sweep(c) -> int:
    from .latent import reference_transform
    from .training import evaluate_table
    table = _load_table(c["table"])
    points = evaluate_table(table, _load_corpus(c), reference_transform())
    with _output(c["out"]) as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(RD_HEADER)
        for p in points:
            w.writerow([p.lambda_index, f"{p.mean_rate_bits:.6f}", f"{p.mean_distortion:.6f}", p.nondegenerate_dims])
    return 0


def _features(c):
    from .features import gen_synthetic_features, read_features
    if c.get("features"):
        return read_features(c["features"])
    return gen_synthetic_features(c["seed"], c["n_frames"])


def cmd_build_stream(c) -> int:
    from .framing import build_stream, write_stream
    from .latent import reference_transform
    table = _load_table(c["table"])
    _, schedule = _schedule(c, table)
    packets = build_stream(_features(c), table, schedule, reference_transform(), c["primary_bytes"])
    try:
        write_stream(c["out"], packets)
    except OSError as exc:
        raise InvalidArgument(f"cannot write {c['out']}: {exc.strerror}") from exc
    return 0


def cmd_simulate(c) -> int:
    from .framing import build_stream, read_stream
    from .latent import reference_transform
    from .netsim import LossTrace, PayloadCache, RecoveryReport, gen_loss_trace, simulate
    table = _load_table(c["table"])
    registry, schedule = _schedule(c, table)
    tr = reference_transform()
    if c["stream"]:
        try:
            stream = read_stream(c["stream"])
        except OSError as exc:
            raise InvalidArgument(f"cannot read stream {c['stream']}: {exc.strerror}") from exc
    else:
        stream = build_stream(_features(c), table, schedule, tr)
    n = len(stream)
    cache = PayloadCache(table, registry, tr)

    if c["trace"]:
        traces = {"trace": [LossTrace.load(c["trace"])]}
    elif c["burst_start"] >= 0:
        traces = {"burst": [LossTrace.single_burst(n, c["burst_start"], c["burst_length"])]}
    else:
        traces = {rate: [gen_loss_trace(rate, c["mean_burst"], n, s) for s in _ints(c["trace_seeds"])]
                  for rate in _floats(c["loss_rates"])}
    results = []
    for label, group in traces.items():
        rep = RecoveryReport.merge(simulate(stream, t, table, registry, tr, cache) for t in group)
        d = rep.to_dict()
        d["scenario"] = label
        results.append(d)
    with _output(c["out"]) as fp:
        json.dump(results[0] if len(results) == 1 else results, fp, indent=2)
        fp.write("\n")
    return 0


def cmd_grad_check(c) -> int:
    from .training import GradCheckConfig, grad_check
    res = grad_check(GradCheckConfig(n_points=c["n_points"], seed=c["seed"]))
    res["passed"] = bool(res["max_rel_error"] < c["tolerance"] and res["zeta_grad_identity_at_delta0"]
                         and res["rate_slope_is_l1"])
    with _output(c["out"]) as fp:
        json.dump(res, fp, indent=2)
        fp.write("\n")
    return 0 if res["passed"] else 1


COMMANDS = {
    "synth": (cmd_synth, _SYNTH, "write a synthetic feature file"),
    "train": (cmd_train, _TRAIN, "train the 16 quantizer tables"),
    "rd-sweep": (cmd_rd_sweep, _RD_SWEEP, "CSV of rate and distortion per lambda index"),
    "build-stream": (cmd_build_stream, _BUILD, "encode features into a JSON-lines packet stream"),
    "simulate": (cmd_simulate, _SIMULATE, "run a stream through a loss channel, print a JSON report"),
    "grad-check": (cmd_grad_check, _GRAD, "check analytic loss gradients against finite differences"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dred", description="Deep redundancy coding toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, spec, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value config file")
        for key, typ, default, h in spec:
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                           help=f"{h} (default: {default})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, spec, _ = COMMANDS[args.command]
    try:
        return func(_resolve(args, spec))
    except DredError as exc:
        print(f"dred {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dred {args.command}: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
