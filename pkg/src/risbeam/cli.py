"""Command-line front end: ``risbeam <command> [options]``.

Every command reads an optional ``--config`` file (INI sections ``system``,
``gain``, ``codebook``, ``channel``, ``search``, ``dataset``, ``train`` and
``model``), applies ``--set section.key=value`` overrides and validates the
result before doing any work.  CSV outputs start with ``#`` comment lines
holding the resolved configuration, so each file can be regenerated from its
own header and seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path


from . import complexity
from .blockwise import BlockwiseProblem, alternate
from .channel import sample_channel_set
from .codebook import build_codebooks
from .config import GainModel, SystemConfig, TrainConfig
from .dataset import BeamDataset, derive_seed, generate_dataset, split_dataset
from .errors import ConfigError, RisBeamError
from .metric import BeamSelection
from .search import (DEFAULT_BUDGET, DEFAULT_T_MAX, CandidateScorer, exhaustive_search,
                     ias_search, multiply_cost, random_baseline)

logger = logging.getLogger("risbeam")

THREADS_ENV = "RISBEAM_THREADS"
SECTIONS = ("system", "gain", "codebook", "channel", "search", "dataset", "train", "model")
_MODEL_KEYS = {"conv_channels": int, "kernel": int, "n_blocks": int, "embed": int,
               "hidden": int, "d_k": int, "share_blocks": bool, "phase_align": bool}


@dataclass
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    gain: GainModel = field(default_factory=GainModel)
    sizes: tuple[int, int, int] = (8, 8, 8)
    L_B: int = 3
    L_U: int = 3
    t_max: int = DEFAULT_T_MAX
    budget: int = DEFAULT_BUDGET
    n_samples: int = 6000
    train_fraction: float = 5 / 6
    labeler: str = "ias"
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)
    seed: int = 0

    def items(self) -> dict[str, str]:
        """Flat ``section.key -> value`` view of every resolved setting."""
        out = {f"system.{k}": v for k, v in self.system.to_dict().items()}
        out.update({f"gain.{k}": v for k, v in self.gain.to_dict().items()})
        out.update({f"train.{k}": v for k, v in self.train.to_dict().items()})
        out.update({f"model.{k}": str(v).lower() if isinstance(v, bool) else str(v)
                    for k, v in self.model.items()})
        out.update({
            "codebook.sizes": ",".join(map(str, self.sizes)),
            "channel.L_B": str(self.L_B), "channel.L_U": str(self.L_U),
            "search.t_max": str(self.t_max), "search.budget": str(self.budget),
            "dataset.n_samples": str(self.n_samples),
            "dataset.train_fraction": repr(self.train_fraction),
            "dataset.labeler": self.labeler, "seed": str(self.seed),
        })
        return out

    def model_spec(self, sizes=None, cfg: SystemConfig | None = None):
        from .mtlnet.model import ModelSpec

        return ModelSpec.for_system(cfg or self.system, sizes or self.sizes,
                                    dropout=self.train.dropout, **self.model)


def _parse_int_list(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def load_run_config(path: str | None, overrides: list[str], seed: int | None = None,
                    budget: int | None = None) -> RunConfig:
    values: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    if path:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown config section [{section}]")
            values[section].update(parser[section])
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in values:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        values[section][name] = value

    try:
        rc = _resolve(values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if seed is not None:
        rc.seed = seed
    if budget is not None:
        rc.budget = budget
    _validate(rc)
    return rc


def _resolve(values: dict[str, dict[str, str]]) -> RunConfig:
    def take(section, name, kind, default):
        raw = values[section].pop(name, None)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"{section}.{name}: cannot parse {raw!r}") from None

    rc = RunConfig()
    rc.system = SystemConfig.from_dict(values["system"])
    rc.gain = GainModel.from_dict(values["gain"])
    rc.train = TrainConfig.from_dict(values["train"])
    sizes = values["codebook"].pop("sizes", None)
    if sizes is not None:
        parsed = _parse_int_list(sizes)
        if len(parsed) != 3:
            raise ConfigError(f"codebook.sizes needs three values, got {sizes!r}")
        rc.sizes = tuple(parsed)
    rc.L_B = take("channel", "L_B", int, rc.L_B)
    rc.L_U = take("channel", "L_U", int, rc.L_U)
    rc.t_max = take("search", "t_max", int, rc.t_max)
    rc.budget = take("search", "budget", int, rc.budget)
    rc.n_samples = take("dataset", "n_samples", int, rc.n_samples)
    rc.train_fraction = take("dataset", "train_fraction", float, rc.train_fraction)
    rc.labeler = take("dataset", "labeler", str, rc.labeler)
    for name, kind in _MODEL_KEYS.items():
        raw = values["model"].pop(name, None)
        if raw is not None:
            rc.model[name] = raw.strip().lower() in ("1", "true", "yes", "on") if kind is bool else int(raw)
    for section in ("codebook", "channel", "search", "dataset", "model"):
        if values[section]:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(values[section]))}")
    return rc


def _validate(rc: RunConfig) -> None:
    if any(s < 1 for s in rc.sizes):
        raise ConfigError(f"codebook sizes must be >= 1, got {rc.sizes}")
    if rc.L_B < 0 or rc.L_U < 0:
        raise ConfigError("path counts L_B, L_U must be >= 0")
    if rc.t_max < 1:
        raise ConfigError("search.t_max must be >= 1")
    if rc.budget < 1:
        raise ConfigError("search.budget must be >= 1")
    if rc.n_samples < 1:
        raise ConfigError("dataset.n_samples must be >= 1")
    if not 0 < rc.train_fraction < 1:
        raise ConfigError("dataset.train_fraction must lie in (0, 1)")
    if rc.labeler not in ("ias", "es"):
        raise ConfigError(f"dataset.labeler must be 'ias' or 'es', got {rc.labeler!r}")
    build_codebooks(rc.system, rc.sizes)
    rc.model_spec()


def write_csv(path: str | Path, comments: dict[str, str], header: list[str], rows) -> None:
    out = io.StringIO()
    for k, v in sorted(comments.items()):
        out.write(f"# {k}={v}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    Path(path).write_text(out.getvalue())


def _fmt_sel(sel: BeamSelection) -> str:
    return " ".join(map(str, sel.as_tuple()))


# -- commands -----------------------------------------------------------------

def cmd_gen_dataset(rc: RunConfig, args) -> None:
    cb = build_codebooks(rc.system, rc.sizes)
    ds = generate_dataset(rc.system, rc.gain, cb, rc.n_samples, rc.seed, rc.labeler,
                          rc.L_B, rc.L_U, rc.t_max, rc.budget, workers=args.workers)
    split_dataset(ds, rc.train_fraction, rc.seed)
    ds.write(args.out)
    print(f"wrote {len(ds)} samples ({len(ds.train_idx)} train / {len(ds.val_idx)} val) to {args.out}")


def _channels(rc: RunConfig, args):
    """Yield ``(index, channel, codebooks)`` from a dataset or fresh draws."""
    if args.dataset:
        ds = BeamDataset.read(args.dataset)
        idx = ds.indices(args.split)
        if args.samples:
            idx = idx[:args.samples]
        for i in idx:
            yield int(i), ds.channel(int(i)), ds.codebooks, ds.cfg
    else:
        cb = build_codebooks(rc.system, rc.sizes)
        for t in range(args.samples or 1):
            ch = sample_channel_set(rc.system, rc.gain, rc.L_B, rc.L_U, derive_seed(rc.seed, t))
            yield t, ch, cb, rc.system


def cmd_search(rc: RunConfig, args) -> None:
    rows = []
    for i, ch, cb, cfg in _channels(rc, args):
        if args.algorithm == "es":
            rep = exhaustive_search(ch, cb, cfg, budget=rc.budget)
        elif args.algorithm == "ias":
            init = (BeamSelection((0,) * cfg.K, (0,) * cfg.Ms, (0,) * cfg.Ns)
                    if args.init == "zero" else derive_seed(rc.seed + 1, i))
            rep = ias_search(ch, cb, cfg, t_max=rc.t_max, init=init, budget=rc.budget)
        else:
            rep = random_baseline(ch, cb, cfg, seed=derive_seed(rc.seed + 2, i))
        rows.append([i, args.algorithm, rep.best_rate, _fmt_sel(rep.best_selection),
                     rep.candidates_evaluated, rep.multiply_count, rep.iterations,
                     str(rep.converged).lower()])
    comments = rc.items()
    comments.update({"command": "search", "algorithm": args.algorithm,
                     "source": args.dataset or "sampled"})
    write_csv(args.out, comments, ["sample", "algorithm", "rate", "selection", "candidates",
                                   "multiplies", "iterations", "converged"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_train(rc: RunConfig, args) -> None:
    from .mtlnet.model import MtlModel
    from .mtlnet.train import save_checkpoint, train

    ds = BeamDataset.read(args.dataset)
    if len(ds.train_idx) == 0:
        split_dataset(ds, rc.train_fraction, rc.seed)
    spec = rc.model_spec(ds.codebooks.sizes, ds.cfg)
    model = MtlModel(spec, seed=rc.train.seed)
    report = train(model, ds, rc.train)
    save_checkpoint(model, args.checkpoint, epoch=rc.train.epochs)
    comments = rc.items()
    comments.update({"command": "train", "dataset.file_seed": str(ds.seed)})
    if args.report:
        Path(args.report).write_text(report.to_csv(comments))
    acc = report.accuracies[-1] if report.accuracies else None
    print(f"final epoch loss {report.epoch_totals[-1]:.4f}"
          + (f", validation accuracy {acc.per_task} overall {acc.overall:.4f}" if acc else ""))


def cmd_eval(rc: RunConfig, args) -> None:
    from .mtlnet.train import load_checkpoint, predict_selection, validate

    ds = BeamDataset.read(args.dataset)
    model, _ = load_checkpoint(args.checkpoint)
    algorithms = [a for a in args.algorithms.split(",") if a]
    unknown = set(algorithms) - {"mtl", "ias", "es", "random"}
    if unknown:
        raise ConfigError(f"unknown algorithm(s) {sorted(unknown)}")
    cfg, cb = ds.cfg, ds.codebooks
    idx = ds.indices(args.split)
    if args.samples:
        idx = idx[:args.samples]
    rows, totals = [], {a: 0.0 for a in algorithms}
    zero = BeamSelection((0,) * cfg.K, (0,) * cfg.Ms, (0,) * cfg.Ns)
    for i in map(int, idx):
        ch = ds.channel(i)
        scorer = CandidateScorer(ch, cb, cfg)
        row = [i]
        for a in algorithms:
            if a == "mtl":
                r = scorer.rate(predict_selection(model, ch, cfg))
            elif a == "ias":
                r = ias_search(ch, cb, cfg, t_max=ds.t_max, init=zero, budget=rc.budget).best_rate
            elif a == "es":
                r = exhaustive_search(ch, cb, cfg, budget=rc.budget).best_rate
            else:
                r = random_baseline(ch, cb, cfg, seed=derive_seed(rc.seed + 2, i)).best_rate
            totals[a] += r
            row.append(r)
        rows.append(row)
    acc = validate(model, ds, args.split)
    comments = rc.items()
    comments.update({"command": "eval", "split": args.split,
                     "accuracy.user": repr(acc.per_task[0]), "accuracy.ris": repr(acc.per_task[1]),
                     "accuracy.bs": repr(acc.per_task[2]), "accuracy.overall": repr(acc.overall)})
    comments.update({f"mean_rate.{a}": repr(totals[a] / max(len(rows), 1)) for a in algorithms})
    write_csv(args.out, comments, ["sample"] + [f"rate_{a}" for a in algorithms], rows)
    means = ", ".join(f"{a}={totals[a] / max(len(rows), 1):.3f}" for a in algorithms)
    print(f"accuracy {acc.overall:.4f}; mean rates {means}")


def cmd_complexity(rc: RunConfig, args) -> None:
    rows = []
    for M in _parse_int_list(args.M):
        if M % rc.system.Ms:
            raise ConfigError(f"M={M} is not a multiple of Ms={rc.system.Ms}")
        cfg = rc.system.replace(MB=M // rc.system.Ms)
        spec = rc.model_spec(rc.sizes, cfg)
        rows.append([M, complexity.o1_equivalent_channel(cfg), complexity.o2_det_ratio(cfg),
                     complexity.o3_candidate(cfg), multiply_cost(cfg, "es", rc.sizes),
                     multiply_cost(cfg, "ias", rc.sizes, rc.t_max),
                     multiply_cost(cfg, "mtl", rc.sizes, arch=spec)])
    comments = rc.items()
    comments["command"] = "complexity"
    write_csv(args.out, comments, ["M", "o1", "o2", "o3", "es", "ias", "mtl"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_blockwise(rc: RunConfig, args) -> None:
    prob = BlockwiseProblem.random(args.V, args.r, args.n, args.q, args.d, args.p, args.U,
                                   args.rho1, args.rho2, seed=rc.seed, maps=args.maps)
    state = alternate(prob, init_seed=rc.seed, max_iter=args.max_iter, tol=args.tol)
    rows = [[i + 1, f, d, g] for i, (f, d, g) in enumerate(
        zip(state.objective_trace, state.decrease_trace, state.grad_norm_trace))]
    comments = {k: str(getattr(args, k)) for k in
                ("V", "r", "n", "q", "d", "p", "U", "rho1", "rho2", "max_iter", "tol", "maps")}
    comments.update({"command": "blockwise-demo", "seed": str(rc.seed), "L_G": repr(state.L_G),
                     "L_Q": repr(state.L_Q), "converged": str(state.converged).lower()})
    write_csv(args.out, comments, ["iteration", "objective", "decrease", "grad_norm"], rows)
    print(f"{state.iterations} iterations, objective {state.objective:.10g}, "
          f"gradient norm {state.grad_norm:.3g}")


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [system], [gain], ... sections")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--budget", type=int, help="candidate budget for ES/IAS")
    common.add_argument("--threads", type=int, default=None,
                        help=f"cap on BLAS threads (default ${THREADS_ENV} or library default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="risbeam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common], help="generate a labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, help="number of samples (overrides dataset.n_samples)")
    p.add_argument("--labeler", choices=("ias", "es"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("search", parents=[common], help="run ES, IAS or random selection")
    p.add_argument("--algorithm", choices=("es", "ias", "random"), required=True)
    p.add_argument("--dataset", help="read channels from a dataset instead of sampling")
    p.add_argument("--split", default="all", choices=("all", "train", "val"))
    p.add_argument("--samples", type=int, default=0, help="number of channels (0: all / 1)")
    p.add_argument("--init", choices=("zero", "random"), default="zero", help="IAS start")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", parents=[common], help="train the multi-task network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="CSV with per-batch and per-epoch losses")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="accuracy and per-sample sum rates")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=("all", "train", "val"))
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--algorithms", default="mtl,ias,es,random")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complexity", parents=[common], help="multiplication counts versus M")
    p.add_argument("--M", default="16,32,64,128", help="comma-separated RIS sizes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("blockwise-demo", parents=[common], help="alternating least squares trace")
    for name, default in (("V", 20), ("r", 6), ("n", 5), ("q", 4), ("d", 3), ("p", 2), ("U", 3)):
        p.add_argument(f"--{name}", type=int, default=default)
    p.add_argument("--rho1", type=float, default=0.1)
    p.add_argument("--rho2", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=100000)
    p.add_argument("--tol", type=float, default=1e-14)
    p.add_argument("--maps", choices=("random", "identity"), default="random")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blockwise)
    return parser


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if getattr(args, "samples", None) and args.command == "gen-dataset":
            overrides.append(f"dataset.n_samples={args.samples}")
        if getattr(args, "labeler", None):
            overrides.append(f"dataset.labeler={args.labeler}")
        rc = load_run_config(args.config, overrides, args.seed, args.budget)
        limiter = _thread_limit(args.threads)
        try:
            args.func(rc, args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"risbeam: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RisBeamError, OSError) as exc:
        print(f"risbeam: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
