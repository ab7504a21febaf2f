"""Meta-evolution of GENE distance functions with a (1 + (lambda - 1)) CGP loop.

Seed splitting: every random stream is ``SeedSequence(master, spawn_key=(purpose, ...))``
with the purposes below, so results never depend on evaluation order or on
how many worker processes are used.

    INIT     (0, 0)                     random generation-0 genomes
    MUTATE   (1, generation)            offspring of that generation
    EVAL     (2, generation)            inner-loop seed shared by the generation
    PROPS    (3, generation)            property sampling, shared by the generation
    ARCHIVE  (4, seed_index)            re-scoring seeds in eval_archive
    TRAIN    (5, seed_index)            independent runs of the train command

Inner runs derive their own streams from the integer they receive:
``(0,)`` for the optimiser, ``(1, episode)`` for episode resets and
``(2, env_index)`` when one candidate trains on several environments.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from metagene import cgp, envs, optim
from metagene.encoding import (
    LEARNED_EXPRESSIONS,
    PL2,
    Architecture,
    DirectEncoding,
    Encoding,
    GeneEncoding,
    from_genome,
    learned,
    learned_genome,
)
from metagene.fitness import ALPHA, BETA, FitnessBreakdown, complete, evaluate_properties, f_input

INIT, MUTATE, EVAL, PROPS, ARCHIVE, TRAIN = range(6)
CHECKPOINT_FORMAT = "meta-checkpoint-v1"


class CheckpointError(RuntimeError):
    pass


def derive_seed(master: int, *path: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path)))


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map; results are identical for any worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=1))


# --- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class ESConfig:
    popsize: int = 32
    generations: int = 20
    sigma0: float = 1.5
    episodes: int = 1
    hidden: tuple[int, ...] = (16, 16)
    d: int = 3
    max_steps: int | None = None  # overrides every environment's episode length


@dataclass(frozen=True)
class MetaConfig:
    population: int = 32
    generations: int = 635
    p_fn: float = 0.15
    p_in: float = 0.15
    train_envs: tuple[str, ...] = ("pendulum", "cartpole_swingup")
    heldout_envs: tuple[str, ...] = ("acrobot", "mountain_car")
    es: ESConfig = field(default_factory=ESConfig)
    beta: float = BETA
    alpha: float = ALPHA
    archive_size: int = 10
    n_nodes: int = 64
    property_genomes: int = 32
    property_samples: int = 128
    reevaluate_parent: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "train_envs", tuple(self.train_envs))
        object.__setattr__(self, "heldout_envs", tuple(self.heldout_envs))
        if isinstance(self.es, dict):
            object.__setattr__(self, "es", ESConfig(**{**self.es, "hidden": tuple(self.es.get("hidden", (16, 16)))}))
        if self.population < 2:
            raise ValueError("meta population must be >= 2")
        if not (0 <= self.p_fn <= 1 and 0 <= self.p_in <= 1):
            raise ValueError("mutation probabilities must lie in [0, 1]")
        if not self.train_envs:
            raise ValueError("need at least one training environment")
        if set(self.train_envs) & set(self.heldout_envs):
            raise ValueError("training and held-out environments must be disjoint")
        for e in self.train_envs + self.heldout_envs:
            envs.make_env(e)
        if self.archive_size < 1:
            raise ValueError("archive capacity must be >= 1")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "MetaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown meta configuration keys: {sorted(unknown)}")
        return cls(**data)


def env_spec(env_id: str, es: ESConfig) -> envs.EnvSpec:
    return envs.make_env(env_id, max_steps=es.max_steps)


def env_architecture(spec: envs.EnvSpec, es: ESConfig) -> Architecture:
    return Architecture(spec.obs_dim, es.hidden, spec.act_dim)


# --- inner loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    best_fitness: float
    curve: list[float]  # running best after each generation
    center_curve: list[float]
    best_genome: np.ndarray
    final_state: optim.SepCmaState


def inner_train(
    encoding: Encoding,
    spec: envs.EnvSpec,
    es: ESConfig,
    seed: int,
    track_center: bool = False,
) -> TrainResult:
    """Sep-CMA-ES policy search; fitness is the mean episode reward over fixed seeded starts."""
    rng = derive_rng(seed, 0)
    episode_seeds = [derive_seed(seed, 1, k) for k in range(es.episodes)]
    state = optim.init(encoding.size, 0.0, es.sigma0, es.popsize)

    def score(nets) -> np.ndarray:
        return np.mean([envs.rollout_batch(nets, spec, s) for s in episode_seeds], axis=0)

    best = -np.inf
    best_genome = state.mean.copy()
    curve, center = [], []
    for _ in range(es.generations):
        x = optim.ask(state, rng)
        rewards = score(encoding.decode(x))
        i = int(np.argmax(rewards))
        if rewards[i] > best:
            best, best_genome = float(rewards[i]), x[i].copy()
        state = optim.tell(state, list(zip(x, rewards)))
        curve.append(best)
        if track_center:
            center.append(float(score(encoding.decode(state.mean[None, :]))[0]))
    return TrainResult(best, curve, center, best_genome, state)


# --- candidate evaluation ----------------------------------------------------------

def evaluate_candidate(genome: cgp.CgpGenome, cfg: MetaConfig, seed: int, prop_seed: int | None = None) -> FitnessBreakdown:
    """Train on every training environment and measure network properties.

    The returned breakdown still lacks the population-relative terms.
    """
    f = from_genome(genome)
    raw = {}
    props = []
    prop_rng = np.random.default_rng(seed if prop_seed is None else prop_seed)
    for k, env_id in enumerate(cfg.train_envs):
        spec = env_spec(env_id, cfg.es)
        arch = env_architecture(spec, cfg.es)
        enc = GeneEncoding(arch, f, cfg.es.d)
        raw[env_id] = inner_train(enc, spec, cfg.es, derive_seed(seed, 2, k)).best_fitness
        props.append(evaluate_properties(f, arch, cfg.property_genomes, cfg.property_samples, prop_rng, cfg.es.d))
    fm, fs, fy = (float(v) for v in np.mean(props, axis=0))
    return FitnessBreakdown(raw=raw, f_mean=fm, f_std=fs, f_sym=fy, f_input=f_input(genome))


def _evaluate_job(job) -> FitnessBreakdown:
    genome_text, cfg_dict, seed, prop_seed = job
    return evaluate_candidate(cgp.loads(genome_text), MetaConfig.from_dict(cfg_dict), seed, prop_seed)


# --- archive -----------------------------------------------------------------------

@dataclass(frozen=True)
class ArchiveEntry:
    id: str
    generation: int
    genome: cgp.CgpGenome
    breakdown: FitnessBreakdown

    @property
    def expression(self) -> cgp.Expr:
        return cgp.simplify(cgp.to_expression(self.genome))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "generation": self.generation,
            "genome": cgp.dumps(self.genome),
            "expression": cgp.to_infix(self.expression),
            "raw_expression": cgp.to_infix(cgp.to_expression(self.genome)),
            "breakdown": self.breakdown.to_dict(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ArchiveEntry":
        return cls(
            id=rec["id"],
            generation=int(rec["generation"]),
            genome=cgp.loads(rec["genome"]),
            breakdown=FitnessBreakdown.from_dict(rec["breakdown"]),
        )


def push_archive(archive: list[ArchiveEntry], entry: ArchiveEntry, capacity: int) -> list[ArchiveEntry]:
    """Insert, keep the best ``capacity`` by F; ties favour the earlier generation."""
    if any(e.genome == entry.genome for e in archive) or any(e.id == entry.id for e in archive):
        return list(archive)
    merged = sorted([*archive, entry], key=lambda e: (-e.breakdown.F, e.generation))
    return merged[:capacity]


def write_archive(path: Path, archive: Iterable[ArchiveEntry]) -> None:
    lines = [json.dumps(e.to_record(), sort_keys=True) for e in archive]
    atomic_write(Path(path), "".join(line + "\n" for line in lines))


def read_archive(path: Path) -> list[ArchiveEntry]:
    entries = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entries.append(ArchiveEntry.from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise CheckpointError(f"{path}:{n}: malformed archive record ({exc})") from exc
    return entries


def builtin_archive() -> list[ArchiveEntry]:
    """The catalogued learned distances as archive entries (no fitness data)."""
    out = []
    for ld_id in LEARNED_EXPRESSIONS:
        empty = FitnessBreakdown(raw={}, f_mean=0.0, f_std=0.0, f_sym=0.0, f_input=0.0, F=0.0)
        out.append(ArchiveEntry(ld_id, int(ld_id.split("-")[1]), learned_genome(ld_id), empty))
    return out


# --- outer loop --------------------------------------------------------------------

LOG_FIELDS_FIXED = ("generation", "candidate", "role", "selected")
LOG_FIELDS_TAIL = ("f_task", "f_mean", "f_std", "f_sym", "f_prop", "f_input", "n_inputs", "F", "expression")


def log_fields(cfg: MetaConfig) -> list[str]:
    per_env = [f"raw_{e}" for e in cfg.train_envs] + [f"norm_{e}" for e in cfg.train_envs]
    return [*LOG_FIELDS_FIXED, *per_env, *LOG_FIELDS_TAIL]


SUMMARY_FIELDS = ("generation", "best_F", "parent_F", "mean_F", "frac_all_inputs", "archive_best_F")


def summary_fields(cfg: MetaConfig) -> list[str]:
    return [*SUMMARY_FIELDS, *(f"best_raw_{e}" for e in cfg.train_envs), *(f"mean_raw_{e}" for e in cfg.train_envs)]


def _log_row(gen: int, idx: int, role: str, selected: bool, genome: cgp.CgpGenome, b: FitnessBreakdown, cfg) -> dict:
    row = {"generation": gen, "candidate": idx, "role": role, "selected": int(selected)}
    for e in cfg.train_envs:
        row[f"raw_{e}"] = b.raw[e]
    for e in cfg.train_envs:
        row[f"norm_{e}"] = b.normalized[e]
    row.update(
        f_task=b.f_task,
        f_mean=b.f_mean,
        f_std=b.f_std,
        f_sym=b.f_sym,
        f_prop=b.f_prop,
        f_input=b.f_input,
        n_inputs=len(cgp.used_coordinate_inputs(genome)),
        F=b.F,
        expression=cgp.to_infix(cgp.simplify(cgp.to_expression(genome))),
    )
    return row


@dataclass
class MetaState:
    generation: int  # next generation to run
    parent: cgp.CgpGenome | None = None
    parent_breakdown: FitnessBreakdown | None = None
    archive: list[ArchiveEntry] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    summaries: list[dict] = field(default_factory=list)


def _evaluate_all(genomes, cfg: MetaConfig, gen: int, workers: int) -> list[FitnessBreakdown]:
    seed = derive_seed(cfg.seed, EVAL, gen)
    cfg_dict = cfg.to_dict()
    jobs = [
        (cgp.dumps(g), cfg_dict, seed, derive_seed(cfg.seed, PROPS, gen))
        for g in genomes
    ]
    return parallel_map(_evaluate_job, jobs, workers)


def select_parent(scores: Sequence[float]) -> int:
    """Index 0 is the parent; the best offspring replaces it unless strictly worse."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) < 2:
        return 0
    best_child = 1 + int(np.argmax(scores[1:]))
    return best_child if scores[best_child] >= scores[0] else 0


def meta_step(state: MetaState, cfg: MetaConfig, workers: int = 1) -> MetaState:
    """Run one generation (generation 0 samples a random population)."""
    gen = state.generation
    if gen == 0:
        rng = derive_rng(cfg.seed, INIT, 0)
        genomes = [cgp.random_genome(rng, cfg.n_nodes) for _ in range(cfg.population)]
        roles = ["random"] * cfg.population
        breakdowns = _evaluate_all(genomes, cfg, gen, workers)
    else:
        rng = derive_rng(cfg.seed, MUTATE, gen)
        offspring = [cgp.mutate(state.parent, rng, cfg.p_fn, cfg.p_in) for _ in range(cfg.population - 1)]
        genomes = [state.parent, *offspring]
        roles = ["parent"] + ["offspring"] * len(offspring)
        if cfg.reevaluate_parent:
            breakdowns = _evaluate_all(genomes, cfg, gen, workers)
        else:
            breakdowns = [state.parent_breakdown, *_evaluate_all(offspring, cfg, gen, workers)]

    done = complete(breakdowns, cfg.train_envs, cfg.beta, cfg.alpha)
    scores = np.array([b.F for b in done])
    chosen = int(np.argmax(scores)) if gen == 0 else select_parent(scores)

    rows = [
        _log_row(gen, i, roles[i], i == chosen, g, b, cfg) for i, (g, b) in enumerate(zip(genomes, done))
    ]
    archive = state.archive
    if gen == 0 or chosen != 0:
        archive = push_archive(archive, ArchiveEntry(f"LD-{gen}", gen, genomes[chosen], done[chosen]), cfg.archive_size)
    n_all = sum(len(cgp.used_coordinate_inputs(g)) == len(cgp.INPUT_NAMES) for g in genomes)
    summary = {
        "generation": gen,
        "best_F": float(scores.max()),
        "parent_F": float(scores[chosen]),
        "mean_F": float(scores.mean()),
        "frac_all_inputs": n_all / len(genomes),
        "archive_best_F": float(max(e.breakdown.F for e in archive)),
    }
    for e in cfg.train_envs:
        raws = [b.raw[e] for b in done]
        summary[f"best_raw_{e}"] = float(max(raws))
        summary[f"mean_raw_{e}"] = float(np.mean(raws))
    parent_b = replace(done[chosen], normalized={}, f_task=None, F=None)
    return MetaState(
        generation=gen + 1,
        parent=genomes[chosen],
        parent_breakdown=parent_b,
        archive=archive,
        rows=state.rows + rows,
        summaries=state.summaries + [summary],
    )


# --- persistence -------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save_checkpoint(path: Path, state: MetaState, cfg: MetaConfig) -> None:
    data = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "generation": state.generation,
        "parent": cgp.dumps(state.parent) if state.parent is not None else None,
        "parent_breakdown": state.parent_breakdown.to_dict() if state.parent_breakdown else None,
        "archive": [e.to_record() for e in state.archive],
        "rows": state.rows,
        "summaries": state.summaries,
    }
    atomic_write(Path(path), json.dumps(data, sort_keys=True))


def load_checkpoint(path: Path, cfg: MetaConfig | None = None) -> tuple[MetaState, MetaConfig]:
    try:
        data = json.loads(Path(path).read_text())
        if data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported checkpoint format {data.get('format')!r}")
        stored = MetaConfig.from_dict(data["config"])
        state = MetaState(
            generation=int(data["generation"]),
            parent=cgp.loads(data["parent"]) if data["parent"] else None,
            parent_breakdown=FitnessBreakdown.from_dict(data["parent_breakdown"]) if data["parent_breakdown"] else None,
            archive=[ArchiveEntry.from_record(r) for r in data["archive"]],
            rows=list(data["rows"]),
            summaries=list(data["summaries"]),
        )
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if cfg is not None:
        a, b = stored.to_dict(), cfg.to_dict()
        a.pop("generations")
        b.pop("generations")
        if a != b:
            raise CheckpointError(f"{path}: checkpoint was written with a different configuration")
    return state, stored


@dataclass
class MetaResult:
    archive: list[ArchiveEntry]
    rows: list[dict]
    summaries: list[dict]
    generations_run: int


def run_meta(
    cfg: MetaConfig,
    workers: int = 1,
    checkpoint: Path | None = None,
    stop_after: int | None = None,
    progress: Callable[[dict], None] | None = None,
) -> MetaResult:
    """Run (or resume) the meta-evolution up to ``cfg.generations``.

    ``stop_after`` bounds the number of generations executed by this call,
    which together with ``checkpoint`` allows interrupted runs.
    """
    state = MetaState(generation=0)
    if checkpoint is not None and Path(checkpoint).exists():
        state, _ = load_checkpoint(checkpoint, cfg)
    executed = 0
    while state.generation < cfg.generations:
        if stop_after is not None and executed >= stop_after:
            break
        state = meta_step(state, cfg, workers)
        executed += 1
        if checkpoint is not None:
            save_checkpoint(checkpoint, state, cfg)
        if progress is not None:
            progress(state.summaries[-1])
    return MetaResult(state.archive, state.rows, state.summaries, state.generation)


# --- archive evaluation ----------------------------------------------------------

def _score_job(job) -> float:
    kind, payload, env_id, es_dict, seed = job
    es = ESConfig(**{**es_dict, "hidden": tuple(es_dict["hidden"])})
    spec = env_spec(env_id, es)
    arch = env_architecture(spec, es)
    if kind == "direct":
        enc: Encoding = DirectEncoding(arch)
    elif kind == "pl2":
        enc = GeneEncoding(arch, PL2, es.d)
    elif kind == "ld":
        enc = GeneEncoding(arch, learned(payload), es.d)
    else:
        enc = GeneEncoding(arch, from_genome(cgp.loads(payload)), es.d)
    return inner_train(enc, spec, es, seed).best_fitness


def eval_archive(
    archive: Sequence[ArchiveEntry],
    env_ids: Sequence[str],
    es: ESConfig,
    n_seeds: int = 5,
    seed: int = 0,
    workers: int = 1,
    baselines: bool = True,
) -> list[dict]:
    """Mean best inner-loop fitness per (function, environment), over shared seeds."""
    if not archive and not baselines:
        raise ValueError("nothing to evaluate")
    for e in env_ids:
        envs.make_env(e)
    rows: list[tuple[str, str, str, str]] = []
    if baselines:
        rows.append(("Direct", "", "direct", ""))
        rows.append(("pL2", "", "pl2", ""))
    for entry in archive:
        rows.append((entry.id, cgp.to_infix(entry.expression), "cgp", cgp.dumps(entry.genome)))
    seeds = [derive_seed(seed, ARCHIVE, k) for k in range(n_seeds)]
    es_dict = json.loads(json.dumps(asdict(es)))
    jobs = [(kind, payload, e, es_dict, s) for _, _, kind, payload in rows for e in env_ids for s in seeds]
    scores = iter(parallel_map(_score_job, jobs, workers))
    table = []
    for ident, expr, _, _ in rows:
        rec = {"id": ident, "expression": expr}
        for e in env_ids:
            rec[e] = float(np.mean([next(scores) for _ in seeds]))
        table.append(rec)
    return table
