#!/usr/bin/env python3
"""Reference run of the binary STAPLE loop on the 8-voxel line fixture.

Executes exactly two expectation-maximization iterations, mirroring the
library's arithmetic step for step (sorted per-voxel log sums, voxel-order
accumulators, parameter clamping), so the frozen numbers pin the whole
loop and not just its fixed point. Regenerate with:

    python3 staple_fixture_oracle.py > staple_fixture_expected.json

The corresponding Rust test is crates/core/tests/staple_fixture.rs.
"""

import json
import math

N = 8
# Rater j marks the whole line except one voxel of its own.
DISSENT = [1, 4, 6]
RATERS = [[i != d for i in range(N)] for d in DISSENT]

P0 = Q0 = 0.99999
MAX_ITERATIONS = 2
PRIOR_CLAMP = 1e-6
PARAM_CLAMP = 1e-12
THRESHOLD = 0.5


def clamp(v, lo, hi):
    return max(lo, min(hi, v))


def safe_exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def e_step(prior, p, q):
    log_p = [math.log(v) for v in p]
    log_not_p = [math.log(1.0 - v) for v in p]
    log_q = [math.log(v) for v in q]
    log_not_q = [math.log(1.0 - v) for v in q]
    posterior = []
    ll = 0.0
    for i in range(N):
        fg = []
        bg = []
        for j, rater in enumerate(RATERS):
            if rater[i]:
                fg.append(log_p[j])
                bg.append(log_not_q[j])
            else:
                fg.append(log_not_p[j])
                bg.append(log_q[j])
        la = math.log(prior[i]) + sum(sorted(fg))
        lb = math.log(1.0 - prior[i]) + sum(sorted(bg))
        posterior.append(1.0 / (1.0 + safe_exp(lb - la)))
        m = max(la, lb)
        ll += m + math.log(safe_exp(la - m) + safe_exp(lb - m))
    return posterior, ll


def m_step(posterior, p, q):
    weight_sum = 0.0
    complement_sum = 0.0
    for w in posterior:
        weight_sum += w
        complement_sum += 1.0 - w
    for j, rater in enumerate(RATERS):
        marked = 0.0
        unmarked_bg = 0.0
        for i, w in enumerate(posterior):
            if rater[i]:
                marked += w
            else:
                unmarked_bg += 1.0 - w
        if weight_sum > 0.0:
            p[j] = clamp(marked / weight_sum, PARAM_CLAMP, 1.0 - PARAM_CLAMP)
        if complement_sum > 0.0:
            q[j] = clamp(unmarked_bg / complement_sum, PARAM_CLAMP, 1.0 - PARAM_CLAMP)


def main():
    r = len(RATERS)
    prior = []
    for i in range(N):
        votes = sum(1 for rater in RATERS if rater[i])
        prior.append(clamp(votes / r, PRIOR_CLAMP, 1.0 - PRIOR_CLAMP))

    p = [P0] * r
    q = [Q0] * r
    trace = []
    for _ in range(MAX_ITERATIONS):
        posterior, ll = e_step(prior, p, q)
        trace.append(ll)
        m_step(posterior, p, q)
    posterior, ll = e_step(prior, p, q)
    trace.append(ll)

    print(
        json.dumps(
            {
                "dissent_voxels": DISSENT,
                "sensitivities": p,
                "specificities": q,
                "posterior": posterior,
                "consensus": [w >= THRESHOLD for w in posterior],
                "log_likelihood": trace,
                "iterations": MAX_ITERATIONS,
                "converged": False,
            },
            indent=2,
        )
    )


if __name__ == "__main__":
    main()
