"""Adversarial training loop, checkpoints and metric logs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import families, gan, linalg, metrics
from .autodiff import ParamStore

log = logging.getLogger(__name__)

CKPT_FORMAT = "pigan-ckpt/1"
RMSPROP_DECAY = 0.99
RMSPROP_EPS = 1e-8

LOG_COLUMNS = ["step", "d_loss", "g_loss", "l_adv", "l_trace", "l_psd", "l_herm", "l_task",
               "l_div", "accuracy", "cross_fidelity", "fid", "offfamily_residual"]


class NumericAbort(RuntimeError):
    """A loss went non-finite; ``snapshot`` holds the diagnostic state."""

    def __init__(self, snapshot: dict):
        super().__init__(f"non-finite loss at step {snapshot.get('step')}")
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    kind: gan.GeneratorKind = gan.GeneratorKind.CHOLESKY
    family: families.Family = families.Family.BELL_DIAGONAL
    task: families.Task = families.Task.TELEPORTATION
    train_size: int = 2000
    batch: int = 512
    steps: int = 10_000
    lr: float = 1e-5
    seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 1000
    residual: bool = True
    fidelity_convention: str = "squared"

    def __post_init__(self):
        self.kind = gan.parse_kind(self.kind)
        self.family = families.parse_family(self.family)
        self.task = families.parse_task(self.task)
        if self.batch < 1:
            raise ValueError("batch >= 1 required")
        if self.steps < 0:
            raise ValueError("steps >= 0 required")
        if self.eval_samples < 2:
            raise ValueError("eval_samples >= 2 required")

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("kind", "family", "task"):
            d[k] = d[k].value
        return d


@dataclass
class TrainResult:
    params: ParamStore
    log: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    rng_state: dict | None = None

    @property
    def final(self):
        return self.evals[-1] if self.evals else None


def _finite_or_abort(step, values: dict, params: ParamStore):
    if all(np.isfinite(v) for v in values.values()):
        return
    snapshot = {"step": step, "losses": values, "param_norms": params.norms()}
    raise NumericAbort(snapshot)


def train_step(config: TrainConfig, weights: gan.LossWeights, params: ParamStore,
               data_re: np.ndarray, data_im: np.ndarray, rng: np.random.Generator,
               step: int | None = None) -> dict:
    """One discriminator update followed by one generator update."""
    b = config.batch
    idx = rng.integers(0, len(data_re), size=b)
    z = rng.standard_normal((b, gan.LATENT_DIM))

    # discriminator: generator output enters as constants
    fre, fim, _ = gan.generate(config.kind, params.frozen("G."), z, residual=config.residual)
    d_params = params
    real = gan.discriminate(d_params, data_re[idx], data_im[idx], train_mode=True, rng=rng)
    fake = gan.discriminate(d_params, fre.value, fim.value, train_mode=True, rng=rng)
    d_loss = gan.discriminator_loss(real, fake)
    _finite_or_abort(step, {"d_loss": float(d_loss.value)}, params)
    ad.backward(d_loss)
    ad.rmsprop_step(params, config.lr, RMSPROP_DECAY, RMSPROP_EPS, prefix="D.")

    # generator: discriminator frozen and dropout-free
    re, im, head = gan.generate(config.kind, params, z, train_mode=True, residual=config.residual)
    scores = gan.discriminate(params.frozen("D."), re, im)
    g_loss, terms = gan.generator_loss(config.kind, re, im, head, scores, weights,
                                       config.family, config.task)
    ad.backward(g_loss)
    ad.rmsprop_step(params, config.lr, RMSPROP_DECAY, RMSPROP_EPS, prefix="G.")

    row = {"d_loss": float(d_loss.value), "g_loss": float(g_loss.value)}
    row.update({k: float(v.value) for k, v in terms.items()})
    return row


def evaluate_generator(config: TrainConfig, params: ParamStore, train_states: np.ndarray,
                       step: int) -> metrics.Metrics:
    rng = np.random.default_rng([config.seed, step, 1])
    gen = gan.sample_states(config.kind, params, config.eval_samples, rng, config.residual)
    return metrics.evaluate(gen, train_states, config.family, config.task,
                            convention=config.fidelity_convention)


def train(config: TrainConfig, weights: gan.LossWeights, dataset: np.ndarray,
          checkpoint_dir: str | Path | None = None, params: ParamStore | None = None) -> TrainResult:
    """Alternate discriminator/generator RMSprop updates for ``config.steps`` steps.

    ``dataset`` is a stack of 4x4 training states. Real batches are drawn with
    replacement. Metrics are computed every ``eval_every`` steps and at the
    end; a checkpoint is written at each evaluation when ``checkpoint_dir`` is
    given.
    """
    dataset = np.asarray(dataset, dtype=complex)
    if len(dataset) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = gan.init_params(config.kind, rng)
    result = TrainResult(params=params)
    if config.steps == 0:
        result.rng_state = rng.bit_generator.state
        return result
    data_re = np.ascontiguousarray(dataset.real)
    data_im = np.ascontiguousarray(dataset.imag)

    for step in range(1, config.steps + 1):
        try:
            row = train_step(config, weights, params, data_re, data_im, rng, step)
        except linalg.NumericError as err:
            raise NumericAbort({"step": step, "losses": {}, "error": str(err),
                                "param_norms": params.norms()}) from err
        _finite_or_abort(step, row, params)
        row["step"] = step
        if step % config.eval_every == 0 or step == config.steps:
            m = evaluate_generator(config, params, dataset, step)
            row.update(accuracy=m.accuracy, cross_fidelity=m.cross_fidelity, fid=m.fid,
                       offfamily_residual=m.offfamily_residual)
            result.evals.append((step, m))
            log.info("step %d: acc=%.3f fid=%.4f F=%.3f", step, m.accuracy, m.fid, m.cross_fidelity)
            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / f"ckpt_{step:06d}.json", config, weights,
                                params, step, rng.bit_generator.state)
        result.log.append(row)
    result.rng_state = rng.bit_generator.state
    return result


# persistence ------------------------------------------------------------------

def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_checkpoint(path, config: TrainConfig, weights: gan.LossWeights, params: ParamStore,
                    step: int, rng_state: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hyper = config.as_dict()
    hyper.update({f"weights.{k}": v for k, v in asdict(weights).items()})
    hyper.update({"rmsprop_decay": RMSPROP_DECAY, "rmsprop_eps": RMSPROP_EPS,
                  "leaky_slope": gan.LEAKY_SLOPE, "dropout": gan.DROPOUT_RATE})
    doc = {
        "format": CKPT_FORMAT,
        "tool_version": __version__,
        "kind": config.kind.value,
        "family": config.family.value,
        "task": config.task.value,
        "step": step,
        "seed": config.seed,
        "config_hash": hashlib.sha256(_canon(hyper).encode()).hexdigest()[:16],
        "rng_state": rng_state,
        "hyperparameters": hyper,
        "tensors": [{"name": k, "shape": list(t.shape), "values": t.value.ravel().tolist()}
                    for k, t in params.params.items()],
    }
    path.write_text(_canon(doc) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict, ParamStore]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CKPT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r} (want {CKPT_FORMAT})")
    store = ParamStore()
    for t in doc["tensors"]:
        store.add(t["name"], np.asarray(t["values"], dtype=float).reshape(t["shape"]))
    return doc, store


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metric_log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in LOG_COLUMNS])
    return buf.getvalue()
