"""Time the numba and numpy kernels on the same random instance.

    python -m abacgen.bench --subjects 400 --objects 200 --environments 50 --rules 100
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import _accel, kernels
from .policy import build_match_index, generate_rules
from .generator import generate_dataset
from .spec_model import DistributionSpec, GenerationSpec


def bench_spec(n_s: int, n_o: int, n_e: int, rules: int, attrs: int = 3, card: int = 3) -> GenerationSpec:
    u = (DistributionSpec.uniform(),) * attrs
    return GenerationSpec(
        n_s, n_o, n_e, rules // 2, rules - rules // 2,
        attrs, attrs, attrs,
        (card,) * attrs, (card,) * attrs, (card,) * attrs,
        u, u, u,
    )


def _time(func, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        best = min(best, time.perf_counter() - t0)
    return best


def run(n_s: int, n_o: int, n_e: int, rules: int, repeat: int = 3, seed: int = 7) -> list[dict]:
    spec = bench_spec(n_s, n_o, n_e, rules)
    dataset = generate_dataset(spec, seed)
    policy = generate_rules(dataset, spec, seed)
    index = build_match_index(dataset, policy)
    arrays = index._arrays()
    codes = dataset.subject.codes
    from .policy import _rule_codes

    rule_codes = _rule_codes(policy.rules, dataset, "subject")
    impls = [kernels.numpy_kernels]
    if _accel.NUMBA_AVAILABLE:
        impls.append(kernels.numba_kernels)
    rows = []
    reference = None
    for impl in impls:
        impl.acm_block(*arrays, 0, 1)  # compile / warm up
        impl.match_rows(codes, rule_codes)
        t_match = _time(lambda: impl.match_rows(codes, rule_codes), repeat)
        t_acm = _time(lambda: impl.acm_block(*arrays, 0, n_s), repeat)
        matrix = impl.acm_block(*arrays, 0, n_s)
        if reference is None:
            reference = matrix
        rows.append({
            "kernel": impl.name,
            "match_rows_s": t_match,
            "acm_s": t_acm,
            "tuples_per_s": n_s * n_o * n_e / t_acm,
            "agrees": bool(np.array_equal(reference, matrix)),
            "permits": int(matrix.sum()),
        })
    return rows


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--subjects", type=int, default=400)
    parser.add_argument("--objects", type=int, default=200)
    parser.add_argument("--environments", type=int, default=50)
    parser.add_argument("--rules", type=int, default=100)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rows = run(args.subjects, args.objects, args.environments, args.rules, args.repeat)
    print(f"{args.subjects}x{args.objects}x{args.environments} tuples, {args.rules} rules "
          f"(active kernels: {kernels.active.name})")
    print(f"{'kernel':<14}{'match_rows':>12}{'acm':>12}{'tuples/s':>14}  agrees")
    for r in rows:
        print(f"{r['kernel']:<14}{r['match_rows_s']:>11.4f}s{r['acm_s']:>11.4f}s{r['tuples_per_s']:>14.3g}  {r['agrees']}")
    return 0 if all(r["agrees"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
