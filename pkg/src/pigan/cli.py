"""Command-line entry point: datasets, training, sampling, evaluation, regions, benchmarks.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, bench, families, gan, metrics, qstate, training
from .families import Family, Task
from .linalg import NumericError

log = logging.getLogger("pigan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATASET_FORMAT = "pigan-dataset/1"
SAMPLES_FORMAT = "pigan-samples/1"
TRAIN_SIZES = (500, 1000, 2000)


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# canonical serialisation --------------------------------------------------------

def canonical_json(obj, indent=None) -> str:
    # repr-based float output is the shortest round-trip form (at most 17 digits)
    return json.dumps(obj, sort_keys=True, allow_nan=False, indent=indent,
                      separators=(",", ":") if indent is None else (",", ": "))


def _jsonable(obj):
    """Replace non-finite floats with their string names (diagnostic snapshots only)."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()[:16]


def provenance(fmt: str, seed, resolved: dict) -> dict:
    return {"format": fmt, "tool_version": __version__, "seed": seed,
            "config_hash": config_hash(resolved)}


def write_sidecar(path: Path, doc: dict) -> Path:
    side = path.with_name(path.name + ".meta.json")
    side.write_text(canonical_json(doc, indent=2) + "\n")
    return side


# flat key = value configs ------------------------------------------------------

TRAIN_DEFAULTS = {
    "family": "bell_diagonal",
    "task": "teleportation",
    "kind": "cholesky",
    "dataset": "",
    "train_size": 2000,
    "steps": 10_000,
    "batch": 512,
    "lr": 1e-5,
    "seed": 0,
    "lambda_psd": 10.0,
    "lambda_trace": 10.0,
    "lambda_herm": 5.0,
    "lambda_task_base": 5.0,
    "lambda_div": 0.5,
    "m_task": None,
    "eval_every": 1000,
    "eval_samples": 1000,
    "residual": True,
    "fidelity_convention": "squared",
    "out": "run",
}

BENCH_DEFAULTS = {
    "dims": ",".join(str(d) for d in bench.DEFAULT_DIMS),
    "batch_sizes": "64",
    "repeats": bench.DEFAULT_REPEATS,
    "thread_cap": bench.DEFAULT_THREADS,
    "include_ppt_up_to": bench.PPT_MAX_DIM,
    "kinds": "direct,cholesky,ldl",
    "d_min": 32,
    "seed": 0,
    "out": "bench",
}


def _coerce(key, raw, default):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw in ("", "none", None) else float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return str(raw)


def parse_flat(text: str, defaults: dict) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve(overrides: dict, defaults: dict) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    cfg = dict(defaults)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = _coerce(k, v, defaults[k])
    return cfg


def dump_flat(cfg: dict) -> str:
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        lines.append(f"{k} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def _load_config(path, defaults: dict, cli_overrides: dict) -> dict:
    over = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        over = parse_flat(p.read_text(), defaults)
    over.update({k: v for k, v in cli_overrides.items() if v is not None})
    return resolve(over, defaults)


def _validate_train(cfg: dict) -> None:
    try:
        cfg["family"] = families.parse_family(cfg["family"]).value
        cfg["task"] = families.parse_task(cfg["task"]).value
        cfg["kind"] = gan.parse_kind(cfg["kind"]).value
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["train_size"] not in TRAIN_SIZES:
        raise ConfigError(f"train_size must be one of {TRAIN_SIZES}")
    for k in ("steps", "eval_every"):
        if cfg[k] < (0 if k == "steps" else 1):
            raise ConfigError(f"{k} out of range")
    if cfg["batch"] < 1 or cfg["eval_samples"] < 2 or not cfg["lr"] > 0:
        raise ConfigError("batch >= 1, eval_samples >= 2 and lr > 0 required")
    if cfg["m_task"] is None:
        cfg["m_task"] = families.M_TASK[Task(cfg["task"])]
    if cfg["fidelity_convention"] not in ("squared", "root"):
        raise ConfigError("fidelity_convention must be 'squared' or 'root'")


# datasets -----------------------------------------------------------------------

def _matrix_lists(rho):
    rho = np.asarray(rho, dtype=complex)
    return np.real(rho).tolist(), np.imag(rho).tolist()


def dataset_lines(family, task, records) -> str:
    family, task = families.parse_family(family), families.parse_task(task)
    lines = []
    for prm, rho in records:
        re, im = _matrix_lists(rho)
        lines.append(canonical_json({"family": family.value, "task": task.value,
                                     "params": prm.as_dict(), "rho_re": re, "rho_im": im}))
    return "".join(line + "\n" for line in lines)


def _read_jsonl(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    rows = []
    for i, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i}: invalid JSON ({exc.msg})") from None
    return rows


def _row_state(row, where) -> np.ndarray:
    try:
        re = np.asarray(row["rho_re"], dtype=float)
        im = np.asarray(row["rho_im"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{where}: record needs 4x4 'rho_re' and 'rho_im'") from None
    if re.shape != (4, 4) or im.shape != (4, 4):
        raise DataError(f"{where}: matrices must be 4x4")
    return re + 1j * im


def load_dataset(path, validate: bool = True):
    """Read a dataset file; returns ``(family, task, params list, states)``.

    With ``validate`` every record must be a valid state meeting its criterion.
    """
    rows = _read_jsonl(path)
    if not rows:
        raise DataError(f"{path}: no records")
    fam_task = {(r.get("family"), r.get("task")) for r in rows}
    if len(fam_task) != 1:
        raise DataError(f"{path}: mixed or missing family/task fields")
    try:
        family, task = families.parse_family(rows[0]["family"]), families.parse_task(rows[0]["task"])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    states = np.array([_row_state(r, f"{path}:{i + 1}") for i, r in enumerate(rows)])
    params = []
    for i, r in enumerate(rows):
        try:
            params.append(families.params_from_dict(family, r["params"]) if "params" in r else None)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{i + 1}: bad params ({exc})") from None
    if validate:
        try:
            qstate.check_state(states)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        ok = families.criterion(family, task, states)
        if not ok.all():
            raise DataError(f"{path}: record {int(np.argmin(ok)) + 1} is not a useful state")
    return family, task, params, states


def load_candidates(path) -> tuple:
    """Generated-sample file (no validity requirement); returns ``(family, task, states)``."""
    rows = _read_jsonl(path)
    if not rows:
        raise DataError(f"{path}: no records")
    states = np.array([_row_state(r, f"{path}:{i + 1}") for i, r in enumerate(rows)])
    return rows[0].get("family"), rows[0].get("task"), states


# commands -----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError("n >= 1 required")
    out = Path(args.out or f"{args.family}_{args.task}_{args.n}.jsonl")
    seed = 0 if args.seed is None else args.seed
    try:
        records, summary = families.sample_dataset(args.family, args.task, args.n, seed)
    except families.AcceptanceError as exc:
        raise DataError(str(exc)) from None
    resolved = {"command": "gen-data", "family": families.parse_family(args.family).value,
                "task": families.parse_task(args.task).value, "n": args.n, "seed": seed}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dataset_lines(args.family, args.task, records))
    meta = dict(summary, **provenance(DATASET_FORMAT, seed, resolved), config=resolved)
    write_sidecar(out, meta)
    print(f"wrote {len(records)} states to {out} (acceptance rate {summary['acceptance_rate']:.4g})")
    return EXIT_OK


def cmd_train(args) -> int:
    cli = {"seed": args.seed, "out": args.out}
    cfg = _load_config(args.config, TRAIN_DEFAULTS, cli)
    _validate_train(cfg)
    if not cfg["dataset"]:
        raise ConfigError("'dataset' must name a dataset file")
    ds_path = Path(cfg["dataset"])
    if not ds_path.exists():
        raise DataError(f"dataset not found: {ds_path}")
    family, task, _, states = load_dataset(ds_path)
    if (family.value, task.value) != (cfg["family"], cfg["task"]):
        raise ConfigError(f"dataset holds {family.value}/{task.value}, "
                          f"config asks for {cfg['family']}/{cfg['task']}")
    if len(states) < cfg["train_size"]:
        raise DataError(f"dataset has {len(states)} states, train_size is {cfg['train_size']}")
    train_set = states[:cfg["train_size"]]

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    (out / "config.resolved").write_text(
        f"# tool_version = {__version__}\n# config_hash = {h}\n" + dump_flat(cfg))

    weights = gan.LossWeights(lambda_psd=cfg["lambda_psd"], lambda_trace=cfg["lambda_trace"],
                              lambda_herm=cfg["lambda_herm"],
                              lambda_task_base=cfg["lambda_task_base"],
                              lambda_div=cfg["lambda_div"], m_task=cfg["m_task"])
    tcfg = training.TrainConfig(kind=cfg["kind"], family=cfg["family"], task=cfg["task"],
                                train_size=cfg["train_size"], batch=cfg["batch"],
                                steps=cfg["steps"], lr=cfg["lr"], seed=cfg["seed"],
                                eval_every=cfg["eval_every"], eval_samples=cfg["eval_samples"],
                                residual=cfg["residual"],
                                fidelity_convention=cfg["fidelity_convention"])
    ckpt_dir = out / "checkpoints"
    try:
        result = training.train(tcfg, weights, train_set, checkpoint_dir=ckpt_dir)
    except training.NumericAbort as exc:
        (out / "abort.json").write_text(canonical_json(_jsonable(exc.snapshot), indent=2) + "\n")
        print(f"numeric abort: {exc}; snapshot in {out / 'abort.json'}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg["steps"] == 0:
        training.save_checkpoint(ckpt_dir / "ckpt_000000.json", tcfg, weights, result.params, 0,
                                 result.rng_state)
    csv_path = out / "metrics.csv"
    csv_path.write_text(training.metric_log_csv(result.log))
    write_sidecar(csv_path, provenance("pigan-metrics/1", cfg["seed"], cfg))
    if result.final:
        step, m = result.final
        print(f"step {step}: accuracy={m.accuracy:.4f} cross_fidelity={m.cross_fidelity:.4f} "
              f"fid={m.fid:.4g}")
    print(f"outputs in {out}")
    return EXIT_OK


def _diagnostics(family, task, states) -> list:
    stat = families.task_statistic(family, task, states)
    crit = families.criterion(family, task, states)
    psd = qstate.psd_violation(states)
    tr = qstate.trace_violation(states)
    _, fmax = qstate.teleportation_score(states)
    rows = []
    for i in range(len(states)):
        d = {"psd_violation": float(psd[i]), "trace_violation": float(tr[i]),
             "criterion": bool(crit[i]), "statistic": float(stat[i])}
        if task is Task.TELEPORTATION:
            d["f_max"] = float(fmax[i])
        rows.append(d)
    return rows


def cmd_sample(args) -> int:
    try:
        doc, params = training.load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{args.checkpoint}: {exc}") from None
    if args.n < 1:
        raise ConfigError("n >= 1 required")
    seed = 0 if args.seed is None else args.seed
    kind = gan.parse_kind(doc["kind"])
    family, task = families.parse_family(doc["family"]), families.parse_task(doc["task"])
    residual = bool(doc.get("hyperparameters", {}).get("residual", True))
    states = gan.sample_states(kind, params, args.n, np.random.default_rng(seed), residual)
    diag = _diagnostics(family, task, states)
    out = Path(args.out or "samples.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (rho, d) in enumerate(zip(states, diag)):
        re, im = _matrix_lists(rho)
        lines.append(canonical_json({"family": family.value, "task": task.value, "index": i,
                                     "rho_re": re, "rho_im": im, "diagnostics": d}))
    out.write_text("".join(line + "\n" for line in lines))
    resolved = {"command": "sample", "checkpoint": str(args.checkpoint), "n": args.n, "seed": seed,
                "kind": kind.value, "step": doc.get("step")}
    write_sidecar(out, dict(provenance(SAMPLES_FORMAT, seed, resolved), config=resolved))
    n_bad = sum(d["psd_violation"] > 1e-10 for d in diag)
    print(f"wrote {args.n} samples to {out}; {n_bad} with psd_violation > 1e-10")
    return EXIT_OK


def evaluate_files(generated_path, dataset_path, convention: str = "squared") -> dict:
    family, task, _, train = load_dataset(dataset_path)
    gfam, gtask, gen = load_candidates(generated_path)
    if gfam is not None and (gfam, gtask) != (family.value, task.value):
        raise DataError(f"schema mismatch: samples are {gfam}/{gtask}, "
                        f"dataset is {family.value}/{task.value}")
    if len(gen) < 2:
        raise DataError("need at least two generated states")
    m = metrics.evaluate(gen, train, family, task, convention=convention)
    return {"accuracy": m.accuracy, "cross_fidelity": m.cross_fidelity,
            "self_fidelity_baseline": metrics.self_fidelity_baseline(train, convention),
            "fid": m.fid, "offfamily_residual": m.offfamily_residual,
            "valid_fraction": m.valid_fraction, "criterion_rate": m.criterion_rate}


def cmd_eval(args) -> int:
    result = evaluate_files(args.generated, args.dataset, args.convention)
    text = canonical_json(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def scatter_points(family, task, states) -> list:
    """Plot coordinates plus criterion flag for each state.

    Bell-diagonal points are ``c = diag(T)``; Werner-like points are ``(p, alpha)``
    read off ``t_zz`` and the local z-components.
    """
    form = qstate.bloch_decompose(states)
    crit = families.criterion(family, task, states)
    pts = []
    if family is Family.BELL_DIAGONAL:
        c = np.diagonal(form.t, axis1=-2, axis2=-1)
        for ci, ok in zip(c, crit):
            pts.append({"c": [float(x) for x in ci], "useful": bool(ok)})
    else:
        p = form.t[:, 2, 2]
        az = 0.5 * (form.a[:, 2] + form.b[:, 2])
        ratio = np.where(np.abs(p) > 1e-12, az / np.where(np.abs(p) > 1e-12, p, 1.0), 0.0)
        alpha = np.sqrt(np.clip(0.5 * (1.0 + ratio), 0.0, 1.0))
        for pi, ai, ok in zip(p, alpha, crit):
            pts.append({"p": float(pi), "alpha": float(ai), "useful": bool(ok)})
    return pts


def cmd_regions(args) -> int:
    if args.resolution < 2:
        raise ConfigError("resolution >= 2 required")
    family, task = families.parse_family(args.family), families.parse_task(args.task)
    doc = families.region_export(family, task, args.resolution)
    if args.scatter:
        _, _, states = load_candidates(args.scatter)
        doc["scatter"] = scatter_points(family, task, states)
    resolved = {"command": "regions", "family": family.value, "task": task.value,
                "resolution": args.resolution, "scatter": args.scatter or ""}
    doc["provenance"] = provenance("pigan-regions/1", args.seed, resolved)
    text = canonical_json(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def _int_list(s) -> list:
    try:
        return [int(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {s!r}") from None


def cmd_bench(args) -> int:
    cli = {"seed": args.seed, "out": args.out, "thread_cap": args.threads}
    cfg = _load_config(args.config, BENCH_DEFAULTS, cli)
    try:
        bcfg = bench.BenchConfig(dims=_int_list(cfg["dims"]), batch_sizes=_int_list(cfg["batch_sizes"]),
                                 repeats=cfg["repeats"], thread_cap=cfg["thread_cap"],
                                 include_ppt_up_to=cfg["include_ppt_up_to"], seed=cfg["seed"],
                                 kinds=tuple(k.strip() for k in cfg["kinds"].split(",") if k.strip()))
        for k in bcfg.kinds:
            gan.parse_kind(k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    samples = bench.run_all(bcfg)
    rows = bench.summarize(samples)
    report = bench.slope_report(samples, cfg["d_min"])
    (out / "samples.csv").write_text(bench.samples_csv(samples))
    (out / "summary.csv").write_text(bench.summary_csv(rows))
    (out / "slopes.json").write_text(bench.slopes_json(report))
    write_sidecar(out / "samples.csv", provenance("pigan-bench/1", cfg["seed"], cfg))
    (out / "config.resolved").write_text(dump_flat(cfg))
    for r in report:
        print(f"{r['op']:>20s}  slope {r['slope']:.3f}  ci95 [{r['ci95'][0]:.3f}, {r['ci95'][1]:.3f}]")
    return EXIT_OK


# argument parsing -----------------------------------------------------------------

def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="random seed")
    parser.add_argument("--out", default=default, help="output file or directory")
    parser.add_argument("--config", default=default, help="flat key = value config file")
    parser.add_argument("--threads", type=int, default=default, help="BLAS thread cap")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pigan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    g = add("gen-data", cmd_gen_data, "rejection-sample a training set")
    g.add_argument("--family", required=True)
    g.add_argument("--task", required=True)
    g.add_argument("--n", type=int, required=True)

    add("train", cmd_train, "train a generator from a config file")

    s = add("sample", cmd_sample, "draw states from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=1000)

    e = add("eval", cmd_eval, "score generated samples against a dataset")
    e.add_argument("--generated", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--convention", choices=("squared", "root"), default="squared")

    r = add("regions", cmd_regions, "export useful-region geometry")
    r.add_argument("--family", required=True)
    r.add_argument("--task", required=True)
    r.add_argument("--resolution", type=int, default=101)
    r.add_argument("--scatter", help="JSONL states to classify and overlay")

    add("bench", cmd_bench, "run the scaling micro-benchmarks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.command != "bench":
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (training.NumericAbort, NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
