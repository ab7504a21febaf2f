"""Acceptance suite: each test checks one requirement and prints a PASS/FAIL line."""

import json
import math
import time
import tracemalloc
from pathlib import Path

import numpy as np
import pytest

from metagene import cgp, envs, fitness, meta, optim
from metagene.cli import main
from metagene.encoding import (
    LEARNED_EXPRESSIONS,
    LEARNED_IDS,
    PL2,
    Architecture,
    DirectEncoding,
    GeneEncoding,
    d_learned,
    d_pl2,
    decode_direct,
    decode_gene,
    flatten_direct,
    genome_size_direct,
    genome_size_gene,
    learned,
    learned_genome,
    size_ratio,
)
from metagene.network import NetworkPhenotype, weight_stats

from .oracles.distances import HAND_BUILT

RESULTS: list[str] = []
REFERENCE = Path(__file__).parent / "oracles" / "pendulum_reference.json"


def report(title: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {title}" + (f" [{detail}]" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


# -------------------------------------------------------------------------------

def test_acceptance_genome_sizes():
    expected = {
        "18,128,128,6": (19718, 1102, 18),
        "17,128,128,6": (19590, 1099, 18),
        "11,128,128,3": (18435, 1069, 17),
        "8,128,128,2": (17922, 1056, 17),
    }
    t0 = time.perf_counter()
    got = {}
    for spec in expected:
        a = Architecture.parse(spec)
        got[spec] = (genome_size_direct(a), genome_size_gene(a, 3), size_ratio(a, 3))
    elapsed = time.perf_counter() - t0
    report("genome-size table exact", got == expected and elapsed < 1.0, f"{elapsed * 1e3:.2f} ms")


# -------------------------------------------------------------------------------

def test_acceptance_distance_conformance():
    s3 = math.sqrt(3.0)
    hand = (
        abs(d_pl2([1, 1, 1], [0, 0, 0]) - s3) <= 1e-12
        and abs(d_pl2([0, 0, 0], [1, 1, 1]) + s3) <= 1e-12
        and d_pl2([0.2, 0.4, -1.0], [0.2, 0.4, -1.0]) == 0.0
    )
    rng = np.random.default_rng(2024)
    a, b = rng.normal(size=(1000, 3)) * 2, rng.normal(size=(1000, 3)) * 2
    coords = np.concatenate([a, b], axis=1)
    mismatches = []
    for key in [*LEARNED_IDS, "pL2"]:
        closed = d_pl2(a, b) if key == "pL2" else d_learned(key, a, b)
        via_genome = cgp.eval_genome(HAND_BUILT[key], coords)
        ok = np.array_equal(closed, via_genome)
        if key != "pL2":
            ok = ok and np.array_equal(closed, cgp.evaluate(cgp.parse(LEARNED_EXPRESSIONS[key]), coords))
        if not ok:
            mismatches.append(key)
    same = np.array_equal(d_learned("LD-318", a, b), d_learned("LD-352", a, b))
    n_forms = len(LEARNED_IDS) + 1
    report("distance functions conform to closed forms",
        hand and not mismatches and same,
        f"{n_forms} closed forms (10 learned + pL2), mismatches={mismatches}",
    )


# -------------------------------------------------------------------------------

def test_acceptance_simplification():
    printed = cgp.to_infix(cgp.simplify(cgp.parse("sqrt(x2 > z1) * y2")))
    rng = np.random.default_rng(3)
    coords = rng.normal(size=(1000, 6)) * 3
    exprs = [cgp.to_expression(learned_genome(k)) for k in LEARNED_IDS]
    exprs += [cgp.to_expression(cgp.random_genome(rng)) for _ in range(200)]
    bad = sum(not np.array_equal(cgp.evaluate(cgp.simplify(e), coords), cgp.evaluate(e, coords)) for e in exprs)
    report("simplification", printed == "(x2 > z1) * y2" and bad == 0, f"'{printed}', {bad} disagreements")


# -------------------------------------------------------------------------------

def test_acceptance_sparsity():
    arch = Architecture(3, (16, 16), 1)
    rng = np.random.default_rng(4)
    genomes = rng.standard_normal((100, genome_size_gene(arch)))
    f = learned("LD-367")
    fractions, exact = [], True
    sizes = arch.layer_sizes
    starts = np.cumsum([0, *sizes])
    for g in genomes:
        net = decode_gene(g, arch, f)
        fractions.append(weight_stats(net).zero_fraction)
        pos = g[: 3 * arch.n_neurons].reshape(-1, 3)
        for layer, w in enumerate(net.weights):
            y_post = pos[starts[layer + 1]:starts[layer + 2], 1]
            nz = w != 0
            exact &= bool(np.all(w[nz] == np.broadcast_to(y_post[:, None], w.shape)[nz]))
    mean = float(np.mean(fractions))
    report("LD-367 sparsity", 0.45 <= mean <= 0.55 and exact, f"zero fraction {mean:.4f}, w in {{0, y2}}: {exact}")


# -------------------------------------------------------------------------------

def test_acceptance_cgp_soundness():
    rng = np.random.default_rng(5)
    inactive_ok = True
    for _ in range(100):
        g = cgp.random_genome(rng)
        active = cgp.active_nodes(g)
        fns, in1, in2 = list(g.fns), list(g.in1), list(g.in2)
        for k in range(g.n_nodes):
            if k not in active:
                fns[k] = int(rng.integers(len(cgp.OPERATORS)))
                in1[k] = int(rng.integers(cgp.N_INPUTS + k))
                in2[k] = int(rng.integers(cgp.N_INPUTS + k))
        h = cgp.CgpGenome(fns, in1, in2, g.output)
        x = rng.normal(size=(100, 6))
        inactive_ok &= np.array_equal(cgp.eval_genome(g, x), cgp.eval_genome(h, x))

    # division by zero, log of negatives and overflow must all land on finite values
    probes = np.array([[0, 0, 0, 0, 0, 0], [-1, -2, -3, -4, -5, -6], [800, -800, 1e308, -1e308, 1e-320, 0]], float)
    finite = all(
        np.all(np.isfinite(cgp.eval_genome(cgp.random_genome(rng), np.vstack([probes, rng.normal(size=(20, 6)) * 1e3]))))
        for _ in range(300)
    )
    for name, a, b in (("div", 1.0, 0.0), ("log", -2.0, 0.0), ("log", 0.0, 0.0), ("exp", 1e4, 0.0)):
        finite &= cgp.apply_operator(name, a, b) == 0.0
    identity = all(cgp.mutate(g, rng, 0.0, 0.0) == g for g in (cgp.random_genome(rng) for _ in range(100)))
    report("CGP soundness", inactive_ok and finite and identity, f"inactive={inactive_ok} finite={finite} p0={identity}")


# -------------------------------------------------------------------------------

def test_acceptance_sepcma():
    gens_needed = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        s = optim.init(10, mean0=3.0, sigma0=0.5, popsize=32)
        best, gen = np.inf, None
        for g in range(1, 401):
            x = optim.ask(s, rng)
            f = np.sum(x**2, axis=1)
            best = min(best, float(f.min()))
            s = optim.tell(s, list(zip(x, -f)))
            if best < 1e-6:
                gen = g
                break
        gens_needed.append(gen)
    converged = all(g is not None for g in gens_needed)

    n = 100_000
    s = optim.init(n, popsize=32)
    tracemalloc.start()
    x = optim.ask(s, np.random.default_rng(0))
    s = optim.tell(s, list(zip(x, -np.sum(x**2, axis=1))))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    linear = s.diag_cov.shape == (n,) and peak < 20 * 32 * n * 8

    rng = np.random.default_rng(6)
    invariant = True
    for _ in range(50):
        s = optim.init(8, popsize=12)
        x = optim.ask(s, rng)
        f = rng.normal(size=12)
        ref = optim.state_to_dict(optim.tell(s, list(zip(x, f))))
        for g in (np.exp(f), f**3, 5 * f + 2, np.arctan(f)):
            invariant &= optim.state_to_dict(optim.tell(s, list(zip(x, g)))) == ref
    report("sep-CMA-ES convergence, memory, invariance",
        converged and linear and invariant,
        f"generations to 1e-6: {gens_needed}, peak {peak / 2**20:.1f} MiB at n={n}",
    )


# -------------------------------------------------------------------------------

def test_acceptance_fitness_algebra():
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(2000):
        task, fm, fs, fy, fi = rng.normal(size=5) * 10
        b = fitness.FitnessBreakdown(raw={}, f_mean=fm, f_std=fs, f_sym=fy, f_input=fi)
        ok &= abs(b.f_prop - (fm + fs + fy)) <= 1e-12
        F = fitness.combine(task, b.f_prop, fi)
        ok &= abs(F - ((1 / 3) * task - (2 / 3) * (fm + fs + fy) + (4 / 3) * fi)) <= 1e-12
    for _ in range(200):
        v = rng.normal(size=int(rng.integers(1, 40)))
        expect = (v - v.min()) / (v.max() - v.min()) if v.max() > v.min() else np.full(v.shape, 0.5)
        ok &= np.array_equal(fitness.minmax_normalize(v), expect)
    ok &= np.array_equal(fitness.minmax_normalize([4.0, 4.0, 4.0]), np.full(3, 0.5))
    fi367 = fitness.f_input(learned_genome("LD-367"))
    report("fitness algebra", ok and fi367 == 0.5, f"f_input(LD-367)={fi367}")


# -------------------------------------------------------------------------------

def test_acceptance_end_to_end_determinism(tmp_path):
    args = ["meta", "--population", "4", "--generations", "10", "--inner-generations", "20",
            "--train-envs", "pendulum,cartpole_swingup", "--seed", "2024"]
    files = ("log.csv", "generations.csv", "archive.jsonl")
    outputs, times = {}, {}
    for label, workers in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / label
        t0 = time.perf_counter()
        assert main([*args, "--workers", str(workers), "--out", str(out)]) == 0
        times[label] = time.perf_counter() - t0
        outputs[label] = {f: (out / f).read_bytes() for f in files}
    identical = outputs["a"] == outputs["b"] == outputs["c"]
    lines = outputs["a"]["generations.csv"].decode().splitlines()
    col = lines[0].split(",").index("archive_best_F")
    best = [float(line.split(",")[col]) for line in lines[1:]]
    monotone = len(best) == 10 and all(x <= y for x, y in zip(best, best[1:]))
    fast = max(times.values()) < 600
    report("end-to-end meta determinism",
        identical and monotone and fast,
        f"identical={identical} monotone={monotone} run times "
        + ", ".join(f"{k}={v:.0f}s" for k, v in times.items()),
    )


# -------------------------------------------------------------------------------

def test_acceptance_learning_signal():
    ref = json.loads(REFERENCE.read_text())
    spec = envs.make_env("pendulum")
    arch = Architecture(3, (16, 16), 1)
    es = meta.ESConfig(popsize=32, generations=150, hidden=(16, 16))
    zero_net = NetworkPhenotype(
        tuple(np.zeros((o, i)) for i, o in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:])),
        tuple(np.zeros(o) for o in arch.layer_sizes[1:]),
    )
    oracle_consistent = True
    direct_hits, gene_hits = 0, {"pL2": 0, "LD-367": 0}
    fractions = []
    for s in range(5):
        r = ref[str(s)]
        episode_seed = meta.derive_seed(s, 1, 0)
        oracle_consistent &= np.allclose(envs.reset(spec, episode_seed).x[0], r["x0"], rtol=0, atol=1e-12)
        zero = envs.rollout(zero_net, spec, episode_seed)
        oracle_consistent &= abs(zero - r["zero"]) < 1e-6
        best = meta.inner_train(DirectEncoding(arch), spec, es, s).best_fitness
        frac = (best - r["zero"]) / (r["optimal"] - r["zero"])
        fractions.append(round(frac, 3))
        direct_hits += frac >= 0.9
        for name, f in (("pL2", PL2), ("LD-367", learned("LD-367"))):
            g = meta.inner_train(GeneEncoding(arch, f), spec, es, s).best_fitness
            gene_hits[name] += g > zero
    ok = oracle_consistent and direct_hits >= 4 and all(v >= 4 for v in gene_hits.values())
    report("desk-scale learning signal",
        ok,
        f"direct gap fractions {fractions}; beats zero policy: {gene_hits}",
    )


# -------------------------------------------------------------------------------

def test_acceptance_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    genomes_ok = all(cgp.loads(cgp.dumps(g)) == g for g in (cgp.random_genome(rng) for _ in range(200)))
    genomes_ok &= all(cgp.loads(cgp.dumps(learned_genome(k))) == learned_genome(k) for k in LEARNED_IDS)

    arch = Architecture(5, (7, 3), 2)
    G = rng.normal(size=(4, genome_size_direct(arch)))
    direct_ok = np.array_equal(flatten_direct(decode_direct(G, arch)), G)

    s = optim.init(6, popsize=8)
    for _ in range(4):
        x = optim.ask(s, rng)
        s = optim.tell(s, list(zip(x, -np.sum(x**2, axis=1))))
    es_ok = optim.state_to_dict(optim.state_from_dict(json.loads(json.dumps(optim.state_to_dict(s))))) == optim.state_to_dict(s)

    cfg = meta.MetaConfig(
        population=3, generations=3, es=meta.ESConfig(popsize=6, generations=2, hidden=(4,), max_steps=10),
        property_genomes=2, property_samples=4, seed=10,
    )
    whole = meta.run_meta(cfg)
    ck = tmp_path / "ck.json"
    meta.run_meta(cfg, checkpoint=ck, stop_after=1)
    meta.run_meta(cfg, checkpoint=ck, stop_after=1)
    resumed = meta.run_meta(cfg, checkpoint=ck)
    resume_ok = (
        [e.to_record() for e in resumed.archive] == [e.to_record() for e in whole.archive]
        and resumed.rows == whole.rows
        and resumed.summaries == whole.summaries
    )
    ok = genomes_ok and direct_ok and es_ok and resume_ok
    report("round trips", ok, f"cgp={genomes_ok} direct={direct_ok} optimiser={es_ok} resume={resume_ok}")
