"""Command line entry point: ``metagene {train,meta,eval,export,gensize}``.

Every command reads optional settings from ``--config FILE`` (YAML mapping,
keys spelled like the long flags with ``_`` or ``-``); flags given on the
command line override the file. Unknown keys are rejected before any work.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from metagene import cgp, envs, meta, optim
from metagene.encoding import (
    L2,
    PL2,
    Architecture,
    DistanceFunction,
    UnknownDistanceError,
    genome_size_direct,
    genome_size_gene,
    size_ratio,
    pl2_genome,
    resolve_distance,
    resolve_encoding,
)
from metagene.network import weight_stats

BENCHMARK_ARCHS = {
    "halfcheetah": "18,128,128,6",
    "walker2d": "17,128,128,6",
    "hopper": "11,128,128,3",
    "swimmer": "8,128,128,2",
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "train": dict(
        env="pendulum", encoding="pl2", seeds=5, seed=0, generations=150, popsize=32, sigma0=1.5,
        episodes=1, hidden="16,16", d=3, max_steps=None, out="runs/train", workers=1, trace=False,
    ),
    "meta": dict(
        population=32, generations=635, p_fn=0.15, p_in=0.15,
        train_envs="pendulum,cartpole_swingup", heldout_envs="acrobot,mountain_car",
        inner_generations=20, popsize=32, sigma0=1.5, episodes=1, hidden="16,16", d=3, max_steps=None,
        beta=meta.BETA, alpha=meta.ALPHA, archive_size=10, property_genomes=32, property_samples=128,
        reevaluate_parent=False, seed=0, workers=1, out="runs/meta", stop_after=None,
    ),
    "eval": dict(
        archive="builtin", envs="pendulum,cartpole_swingup,acrobot,mountain_car", seeds=5, seed=0,
        generations=50, popsize=32, sigma0=1.5, episodes=1, hidden="16,16", d=3, max_steps=None,
        baselines=True, out="runs/eval/table.csv", workers=1,
    ),
    "export": dict(target=None, out="runs/export", name=None),
    "gensize": dict(arch=None, d=3),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict[str, Any]

    def __getattr__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve_config(command: str, flags: dict[str, Any], config_path: str | None = None) -> RunConfig:
    """Built-in defaults < config file < command-line flags."""
    known = DEFAULTS[command]
    from_file = load_config_file(config_path) if config_path else {}
    unknown = sorted(set(from_file) - set(known))
    if unknown:
        raise ConfigError(f"unknown {command} configuration keys: {', '.join(unknown)}")
    values = {**known, **from_file, **flags}
    _validate(command, values)
    return RunConfig(command, values)


def _csv_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _hidden(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in _csv_list(value))


def _validate(command: str, v: dict[str, Any]) -> None:
    try:
        for key in ("seeds", "generations", "popsize", "episodes", "population", "inner_generations", "workers"):
            if key in v and int(v[key]) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if "sigma0" in v and not float(v["sigma0"]) > 0:
            raise ConfigError("sigma0 must be positive")
        if "hidden" in v:
            _hidden(v["hidden"])
        if "d" in v and int(v["d"]) < 1:
            raise ConfigError("d must be >= 1")
        if v.get("max_steps") is not None and int(v["max_steps"]) < 1:
            raise ConfigError("max_steps must be >= 1")
        for key in ("env",):
            if key in v:
                envs.make_env(v[key])
        for key in ("envs", "train_envs", "heldout_envs"):
            if key in v:
                for e in _csv_list(v[key]):
                    envs.make_env(e)
        if command == "train":
            resolve_encoding(v["encoding"], Architecture(1, (), 1), int(v["d"]))
        if command == "gensize" and v.get("arch"):
            for a in [v["arch"]] if isinstance(v["arch"], str) else v["arch"]:
                if str(a) not in BENCHMARK_ARCHS:
                    Architecture.parse(str(a))
        if command == "export" and not v.get("target"):
            raise ConfigError("export needs a target function")
    except envs.UnknownEnvironmentError as exc:
        raise ConfigError(exc.args[0]) from exc
    except UnknownDistanceError as exc:
        raise ConfigError(exc.args[0]) from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# --- output helpers ----------------------------------------------------------------

def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    meta.atomic_write(Path(path), csv_text(header, rows))


def write_dict_csv(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    write_csv(path, header, [[r[k] for k in header] for r in rows])


def _es_config(c: RunConfig, generations_key: str = "generations") -> meta.ESConfig:
    return meta.ESConfig(
        popsize=int(c.popsize),
        generations=int(c.values[generations_key]),
        sigma0=float(c.sigma0),
        episodes=int(c.episodes),
        hidden=_hidden(c.hidden),
        d=int(c.d),
        max_steps=None if c.max_steps is None else int(c.max_steps),
    )


# --- commands ----------------------------------------------------------------------

def _train_job(job) -> meta.TrainResult:
    encoding_spec, env_id, es_dict, seed = job
    es = meta.ESConfig(**{**es_dict, "hidden": tuple(es_dict["hidden"])})
    spec = meta.env_spec(env_id, es)
    enc = resolve_encoding(encoding_spec, meta.env_architecture(spec, es), es.d)
    return meta.inner_train(enc, spec, es, seed, track_center=True)


def cmd_train(c: RunConfig) -> int:
    es = _es_config(c)
    spec = meta.env_spec(c.env, es)
    arch = meta.env_architecture(spec, es)
    enc = resolve_encoding(c.encoding, arch, es.d)
    out = Path(c.out)
    seeds = [meta.derive_seed(int(c.seed), meta.TRAIN, k) for k in range(int(c.seeds))]
    es_dict = json.loads(json.dumps(es.__dict__))
    results = meta.parallel_map(_train_job, [(c.encoding, c.env, es_dict, s) for s in seeds], int(c.workers))

    header = ["generation", *(f"seed_{k}" for k in range(len(seeds))), "mean"]
    for fname, attr in (("curves.csv", "curve"), ("center.csv", "center_curve")):
        cols = np.array([getattr(r, attr) for r in results])
        rows = [[g, *cols[:, g].tolist(), float(cols[:, g].mean())] for g in range(cols.shape[1])]
        write_csv(out / fname, header, rows)

    for k, (s, r) in enumerate(zip(seeds, results)):
        record = {
            "format": "train-genome-v1",
            "env": c.env,
            "encoding": c.encoding,
            "architecture": str(arch),
            "d": es.d,
            "seed": s,
            "best_fitness": r.best_fitness,
            "genome": r.best_genome.tolist(),
            "optimizer": optim.state_to_dict(r.final_state),
        }
        meta.atomic_write(out / f"genome_seed{k}.json", json.dumps(record, sort_keys=True))
        stats = weight_stats(enc.decode(r.best_genome))
        meta.atomic_write(out / f"weights_seed{k}.csv", stats.histogram_csv())
        if c.trace:
            trace: list = []
            episode_seed = meta.derive_seed(s, 1, 0)
            envs.rollout(enc.decode(r.best_genome), spec, episode_seed, trace)
            n_state = len(trace[0]) - 2 - spec.act_dim
            theader = ["step", *(f"state_{i}" for i in range(n_state)), *(f"action_{i}" for i in range(spec.act_dim)), "reward"]
            write_csv(out / f"trace_seed{k}.csv", theader, trace)
        print(f"seed {k}: best fitness {r.best_fitness:.4f}")
    print(f"mean best fitness {np.mean([r.best_fitness for r in results]):.4f}")
    return 0


def meta_config(c: RunConfig) -> meta.MetaConfig:
    return meta.MetaConfig(
        population=int(c.population),
        generations=int(c.generations),
        p_fn=float(c.p_fn),
        p_in=float(c.p_in),
        train_envs=tuple(_csv_list(c.train_envs)),
        heldout_envs=tuple(_csv_list(c.heldout_envs)),
        es=_es_config(c, "inner_generations"),
        beta=float(c.beta),
        alpha=float(c.alpha),
        archive_size=int(c.archive_size),
        property_genomes=int(c.property_genomes),
        property_samples=int(c.property_samples),
        reevaluate_parent=bool(c.reevaluate_parent),
        seed=int(c.seed),
    )


def cmd_meta(c: RunConfig) -> int:
    cfg = meta_config(c)
    out = Path(c.out)

    def progress(s: dict) -> None:
        print(f"generation {s['generation']}: best F {s['best_F']:.4f}, archive best {s['archive_best_F']:.4f}")

    result = meta.run_meta(
        cfg,
        workers=int(c.workers),
        checkpoint=out / "checkpoint.json",
        stop_after=None if c.stop_after is None else int(c.stop_after),
        progress=progress,
    )
    write_dict_csv(out / "log.csv", meta.log_fields(cfg), result.rows)
    write_dict_csv(out / "generations.csv", meta.summary_fields(cfg), result.summaries)
    meta.write_archive(out / "archive.jsonl", result.archive)
    print(f"{result.generations_run}/{cfg.generations} generations, archive of {len(result.archive)}")
    return 0


def cmd_eval(c: RunConfig) -> int:
    if str(c.archive).lower() == "builtin":
        archive = meta.builtin_archive()
    else:
        path = Path(c.archive)
        if not path.is_file():
            raise ConfigError(f"archive {path} not found")
        archive = meta.read_archive(path)
    env_ids = _csv_list(c.envs)
    table = meta.eval_archive(
        archive, env_ids, _es_config(c), int(c.seeds), int(c.seed), int(c.workers), bool(c.baselines)
    )
    header = ["id", "expression", *env_ids]
    write_dict_csv(Path(c.out), header, table)
    sys.stdout.write(csv_text(header, [[r[k] for k in header] for r in table]))
    return 0


_L2_EXPRESSION = "sqrt((((x1 - x2) * (x1 - x2)) + ((y1 - y2) * (y1 - y2))) + ((z1 - z2) * (z1 - z2)))"


def export_genome(target: str) -> tuple[str, cgp.CgpGenome]:
    f: DistanceFunction = resolve_distance(target)
    if f.genome is not None:
        return f.name, f.genome
    if f is PL2:
        return "pL2", pl2_genome()
    if f is L2:
        return "L2", cgp.to_genome(cgp.parse(_L2_EXPRESSION))
    return "expr", cgp.to_genome(f.expression if f.expression is not None else cgp.parse(target[5:]))


def cmd_export(c: RunConfig) -> int:
    name, genome = export_genome(c.target)
    name = c.name or name
    out = Path(c.out)
    text = cgp.to_infix(cgp.simplify(cgp.to_expression(genome)))
    meta.atomic_write(out / f"{name}.txt", text + "\n")
    meta.atomic_write(out / f"{name}.dot", cgp.to_dot(genome, name.replace("-", "_")))
    meta.atomic_write(out / f"{name}.cgp", cgp.dumps(genome) + "\n")
    print(text)
    return 0


def gensize_rows(archs: Sequence[str], d: int) -> list[tuple[str, int, int, int]]:
    rows = []
    for a in archs:
        label, spec = (a, BENCHMARK_ARCHS[a]) if a in BENCHMARK_ARCHS else (a, a)
        arch = Architecture.parse(spec)
        direct, gene = genome_size_direct(arch), genome_size_gene(arch, d)
        rows.append((label, direct, gene, size_ratio(arch, d)))
    return rows


def cmd_gensize(c: RunConfig) -> int:
    if not c.arch:
        archs = list(BENCHMARK_ARCHS)
    elif isinstance(c.arch, str):
        archs = [c.arch]
    else:
        archs = [str(a) for a in c.arch]
    rows = gensize_rows(archs, int(c.d))
    sys.stdout.write(csv_text(["architecture", "direct", "gene", "ratio"], rows))
    return 0


COMMANDS = {"train": cmd_train, "meta": cmd_meta, "eval": cmd_eval, "export": cmd_export, "gensize": cmd_gensize}


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metagene", description="Meta-evolved GENE distance functions.")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p, seeds=False):
        p.add_argument("--config", default=None, help="YAML settings file")
        p.add_argument("--seed", type=int, default=S, help="master seed")
        p.add_argument("--workers", type=int, default=S, help="parallel worker processes")
        p.add_argument("--out", default=S)
        if seeds:
            p.add_argument("--seeds", type=int, default=S, help="number of independent runs")

    def inner(p, gen_flag="--generations"):
        p.add_argument(gen_flag, type=int, default=S, help="ES generations per run")
        p.add_argument("--popsize", type=int, default=S)
        p.add_argument("--sigma0", type=float, default=S)
        p.add_argument("--episodes", type=int, default=S)
        p.add_argument("--hidden", default=S, help="hidden sizes, e.g. 16,16")
        p.add_argument("-d", type=int, default=S, help="latent dimension")
        p.add_argument("--max-steps", type=int, default=S, dest="max_steps")

    p = sub.add_parser("train", help="optimise policies with one encoding")
    common(p, seeds=True)
    inner(p)
    p.add_argument("--env", default=S)
    p.add_argument("--encoding", default=S, help="direct | pl2 | l2 | ld:<id> | cgp:<file> | expr:<infix>")
    p.add_argument("--trace", action="store_true", default=S, help="dump per-step CSV of the best policy")

    p = sub.add_parser("meta", help="meta-evolve distance functions")
    common(p)
    inner(p, "--inner-generations")
    p.add_argument("--population", type=int, default=S)
    p.add_argument("--generations", type=int, default=S)
    p.add_argument("--p-fn", type=float, default=S, dest="p_fn")
    p.add_argument("--p-in", type=float, default=S, dest="p_in")
    p.add_argument("--train-envs", default=S, dest="train_envs")
    p.add_argument("--heldout-envs", default=S, dest="heldout_envs")
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--archive-size", type=int, default=S, dest="archive_size")
    p.add_argument("--property-genomes", type=int, default=S, dest="property_genomes")
    p.add_argument("--property-samples", type=int, default=S, dest="property_samples")
    p.add_argument("--reevaluate-parent", action="store_true", default=S, dest="reevaluate_parent")
    p.add_argument("--stop-after", type=int, default=S, dest="stop_after", help="run at most N generations now")

    p = sub.add_parser("eval", help="score archived functions")
    common(p, seeds=True)
    inner(p)
    p.add_argument("--archive", default=S, help="archive JSONL file or 'builtin'")
    p.add_argument("--envs", default=S)
    p.add_argument("--no-baselines", action="store_false", default=S, dest="baselines")

    p = sub.add_parser("export", help="write expression, DOT graph and genome of a function")
    p.add_argument("target", help="pl2 | l2 | ld:<id> | cgp:<file> | expr:<infix>")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=S)
    p.add_argument("--name", default=S)

    p = sub.add_parser("gensize", help="genome sizes of direct and GENE encodings")
    p.add_argument("arch", nargs="*", help="e.g. 18,128,128,6 or halfcheetah (default: the four locomotion benchmarks)")
    p.add_argument("--config", default=None)
    p.add_argument("-d", type=int, default=S)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.command == "gensize" and not flags.get("arch"):
        flags.pop("arch", None)
    try:
        config = resolve_config(args.command, flags, args.config)
        return COMMANDS[args.command](config)
    except (ConfigError, meta.CheckpointError, cgp.InvalidGenomeError, cgp.ExpressionSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnknownDistanceError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except envs.UnknownEnvironmentError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
