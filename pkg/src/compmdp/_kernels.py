"""Hot numeric kernels: Bellman sweeps and tabular Q-learning episodes.

Each kernel is written once as nopython-compatible Python over flat numpy
arrays.  When numba is available (the default) the whole set is compiled
with ``@njit``; setting ``COMPMDP_KERNELS=numpy`` selects the uncompiled
path instead.  Both paths execute the same source with the same arithmetic
order, so results are bit-identical across backends.

The inlined RNG is xorshift32 carried in int64 arithmetic.  Intermediates
are kept below 2**63 so Python integers and numba int64 agree exactly.

MDPs arrive here in a packed tabular layout (see ``core.Tables``):
per-action anchor/reward plus CSR transition rows, and a per-state CSR of
the action fiber sorted ascending (which makes the first strict argmax the
least-action-id tie-break).
"""

import os

import numpy as np

_FLAG = (os.environ.get("COMPMDP_KERNELS", "auto").strip().lower()) or "auto"
if _FLAG not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        "COMPMDP_KERNELS must be one of auto|numba|numpy, got %r" % _FLAG
    )

_njit = None
if _FLAG != "numpy":
    try:
        from numba import njit as _njit
    except ImportError:
        if _FLAG == "numba":
            raise RuntimeError("COMPMDP_KERNELS=numba but numba is not importable")
        _njit = None

USING_NUMBA = _njit is not None
BACKEND = "numba" if USING_NUMBA else "numpy"

_MASK32 = 0xFFFFFFFF
_INV32 = 1.0 / 4294967296.0


def _jit(fn):
    if USING_NUMBA:
        return _njit(cache=True)(fn)
    return fn


@_jit
def rng_init(seed, stream):
    # Keep every intermediate below 2**63: mask the seed to 32 bits and use
    # a multiplier below 2**31.
    x = ((seed & _MASK32) * 1103515245 + stream * 12820163 + 12345) & _MASK32
    if x == 0:
        x = 2463534242
    for _ in range(3):
        x ^= (x << 13) & _MASK32
        x ^= x >> 17
        x ^= (x << 5) & _MASK32
    return x


@_jit
def rng_next(x):
    x ^= (x << 13) & _MASK32
    x ^= x >> 17
    x ^= (x << 5) & _MASK32
    return x


@_jit
def rng_uniform(x):
    x = rng_next(x)
    return x, x * _INV32


@_jit
def value_sweeps(fiber_ptr, fiber_act, reward, indptr, cols, probs,
                 gamma, tol, max_iter, v):
    """Jacobi value-iteration sweeps until the sweep delta drops to tol.

    Stopping at sweep delta <= tol leaves the returned v with Bellman
    residual <= gamma * tol.  States with an empty fiber get value 0.
    Returns (iterations, final_delta).
    """
    n = v.shape[0]
    v_new = np.empty_like(v)
    delta = np.inf
    for it in range(max_iter):
        delta = 0.0
        for s in range(n):
            best = 0.0
            lo = fiber_ptr[s]
            hi = fiber_ptr[s + 1]
            for k in range(lo, hi):
                a = fiber_act[k]
                acc = reward[a]
                for j in range(indptr[a], indptr[a + 1]):
                    acc += gamma * probs[j] * v[cols[j]]
                if k == lo or acc > best:
                    best = acc
            d = best - v[s]
            if d < 0.0:
                d = -d
            if d > delta:
                delta = d
            v_new[s] = best
        for s in range(n):
            v[s] = v_new[s]
        if delta <= tol:
            return it + 1, delta
    return max_iter, delta


@_jit
def policy_sweeps(choice, reward, indptr, cols, probs, gamma, tol, max_iter, v):
    """Fixed-policy analogue of value_sweeps; choice[s] == -1 pins v[s] = 0."""
    n = v.shape[0]
    v_new = np.empty_like(v)
    delta = np.inf
    for it in range(max_iter):
        delta = 0.0
        for s in range(n):
            a = choice[s]
            if a < 0:
                val = 0.0
            else:
                val = reward[a]
                for j in range(indptr[a], indptr[a + 1]):
                    val += gamma * probs[j] * v[cols[j]]
            d = val - v[s]
            if d < 0.0:
                d = -d
            if d > delta:
                delta = d
            v_new[s] = val
        for s in range(n):
            v[s] = v_new[s]
        if delta <= tol:
            return it + 1, delta
    return max_iter, delta


@_jit
def greedy_from_values(fiber_ptr, fiber_act, reward, indptr, cols, probs,
                       gamma, v, choice):
    """Fill choice with the one-step greedy action (least id wins ties)."""
    n = choice.shape[0]
    for s in range(n):
        lo = fiber_ptr[s]
        hi = fiber_ptr[s + 1]
        best_a = -1
        best = 0.0
        for k in range(lo, hi):
            a = fiber_act[k]
            acc = reward[a]
            for j in range(indptr[a], indptr[a + 1]):
                acc += gamma * probs[j] * v[cols[j]]
            if k == lo or acc > best:
                best = acc
                best_a = a
        choice[s] = best_a


@_jit
def _greedy_q_action(q, fiber_ptr, fiber_act, s):
    lo = fiber_ptr[s]
    hi = fiber_ptr[s + 1]
    best_a = -1
    best = 0.0
    for k in range(lo, hi):
        a = fiber_act[k]
        if k == lo or q[a] > best:
            best = q[a]
            best_a = a
    return best_a


@_jit
def _max_q(q, fiber_ptr, fiber_act, s):
    lo = fiber_ptr[s]
    hi = fiber_ptr[s + 1]
    best = 0.0
    for k in range(lo, hi):
        a = fiber_act[k]
        if k == lo or q[a] > best:
            best = q[a]
    return best


@_jit
def _sample_next(indptr, cols, probs, a, u):
    # Inverse CDF over the canonical (ascending state id) support order.
    acc = 0.0
    last = cols[indptr[a]]
    for j in range(indptr[a], indptr[a + 1]):
        acc += probs[j]
        last = cols[j]
        if u < acc:
            return last
    return last


@_jit
def _draw_start(start_ids, start_cum, u):
    for i in range(start_ids.shape[0]):
        if u < start_cum[i]:
            return start_ids[i]
    return start_ids[start_ids.shape[0] - 1]


@_jit
def _follow_jumps(s, goal_flag, jump):
    """Resolve arrival at s, hopping across stage goals.

    Returns (state, code) with code 0 = keep acting, 1 = success.
    """
    while goal_flag[s] == 1:
        s = jump[s]
    if goal_flag[s] == 2:
        return s, 1
    return s, 0


@_jit
def _eval_greedy(fiber_ptr, fiber_act, reward, indptr, cols, probs,
                 goal_flag, jump, start_ids, start_cum, q,
                 episodes, horizon, rng):
    """Run greedy evaluation episodes; returns (success_rate, mean_return)."""
    successes = 0
    total_return = 0.0
    for _ in range(episodes):
        rng, u = rng_uniform(rng)
        s = _draw_start(start_ids, start_cum, u)
        s, code = _follow_jumps(s, goal_flag, jump)
        if code == 1:
            successes += 1
            continue
        for _step in range(horizon):
            a = _greedy_q_action(q, fiber_ptr, fiber_act, s)
            if a < 0:
                break
            rng, u = rng_uniform(rng)
            s2 = _sample_next(indptr, cols, probs, a, u)
            total_return += reward[a]
            s, code = _follow_jumps(s2, goal_flag, jump)
            if code == 1:
                successes += 1
                break
    return successes / episodes, total_return / episodes


@_jit
def q_learning_run(fiber_ptr, fiber_act, reward, indptr, cols, probs,
                   goal_flag, jump, start_ids, start_cum, q, frozen,
                   stage_of_state, gamma, alpha, epsilon,
                   total_steps, episode_cap, eval_every, eval_episodes,
                   seed, curve_step, curve_sr, curve_mr):
    """Episodic epsilon-greedy Q-learning over a chain of stage MDPs.

    A single stage (all jumps -1) reduces to plain tabular Q-learning on
    one MDP.  Crossing into a stage goal pays that action's reward (the
    stage bonus is baked into the action table), bootstraps with 0, and
    hops the walker through ``jump`` into the next stage.  ``frozen``
    stages act greedily and are never updated.

    Every eval_every training steps a frozen-policy evaluation of
    eval_episodes episodes is appended to the curve arrays.  Deterministic
    in (seed, arrays); the evaluation stream depends only on (seed, index)
    so arms sharing a seed see identical evaluation draws.
    """
    rng = rng_init(seed, 1)
    rng, u = rng_uniform(rng)
    s = _draw_start(start_ids, start_cum, u)
    ep_steps = 0
    eval_idx = 0
    for step in range(1, total_steps + 1):
        stage = stage_of_state[s]
        # epsilon-greedy action in the current stage
        lo = fiber_ptr[s]
        hi = fiber_ptr[s + 1]
        a = -1
        if frozen[stage] == 0:
            rng, u = rng_uniform(rng)
            if u < epsilon:
                rng, u = rng_uniform(rng)
                k = lo + int(u * (hi - lo))
                if k >= hi:
                    k = hi - 1
                a = fiber_act[k]
        if a < 0:
            a = _greedy_q_action(q, fiber_ptr, fiber_act, s)
        rng, u = rng_uniform(rng)
        s2 = _sample_next(indptr, cols, probs, a, u)
        if frozen[stage] == 0:
            if goal_flag[s2] != 0:
                boot = 0.0
            else:
                boot = _max_q(q, fiber_ptr, fiber_act, s2)
            q[a] += alpha * (reward[a] + gamma * boot - q[a])
        ep_steps += 1
        s, code = _follow_jumps(s2, goal_flag, jump)
        done = code == 1
        if not done and fiber_ptr[s + 1] == fiber_ptr[s]:
            done = True  # dead end, episode fails
        if not done and ep_steps >= episode_cap:
            done = True
        if done:
            rng, u = rng_uniform(rng)
            s = _draw_start(start_ids, start_cum, u)
            ep_steps = 0
        if step % eval_every == 0 and eval_idx < curve_step.shape[0]:
            ev_rng = rng_init(seed, 1000003 + eval_idx)
            sr, mr = _eval_greedy(fiber_ptr, fiber_act, reward, indptr, cols,
                                  probs, goal_flag, jump, start_ids,
                                  start_cum, q, eval_episodes, episode_cap,
                                  ev_rng)
            curve_step[eval_idx] = step
            curve_sr[eval_idx] = sr
            curve_mr[eval_idx] = mr
            eval_idx += 1
    return eval_idx
