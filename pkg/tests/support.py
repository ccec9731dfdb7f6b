"""Helpers shared across test modules."""

import numpy as np

from xtalflow.lattice import LatticeParams

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def random_lattice(rng, lo=60.0, hi=120.0):
    """Random valid lattice parameters with angles in [lo, hi]."""
    while True:
        p = LatticeParams(rng.uniform(2.0, 10.0, 3), rng.uniform(lo, hi, 3))
        try:
            if p.volume > 1.0:
                return p
        except ValueError:
            continue


def _ops(translations, rotations=None):
    from xtalflow.symmetry import SymmetryOp

    rotations = rotations if rotations is not None else [np.eye(3, dtype=int)]
    return [SymmetryOp(r, t) for r in rotations for t in translations]


_FCC_T = [[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]
_BCC_T = [[0, 0, 0], [0.5, 0.5, 0.5]]


def hand_built_crystals():
    """Ten small crystals with operations and Wyckoff letters.

    Returns (name, crystal, ops, letters, expected reduced-space size).
    """
    from xtalflow.lattice import Crystal

    cubic = lambda a: LatticeParams(np.full(3, a), np.full(3, 90.0))  # noqa: E731
    fcc = np.array(_FCC_T, dtype=float)
    out = []

    def add(name, types, frac, ops, letters, size):
        c = Crystal(np.array(types), np.array(frac, dtype=float), cubic(4.0))
        out.append((name, c, ops, letters, size))

    add("fcc-Cu", [29] * 4, fcc, _ops(_FCC_T), "aaaa", 24)
    add("rocksalt-conventional", [11] * 4 + [17] * 4, np.vstack([fcc, np.mod(fcc + 0.5, 1)]),
        _ops(_FCC_T), "aaaabbbb", 24 * 24)
    add("diamond-conventional", [14] * 8, np.vstack([fcc, fcc + 0.25]), _ops(_FCC_T), "a" * 8, 2 * 24 * 24)
    add("bcc-Fe", [26] * 2, _BCC_T, _ops(_BCC_T), "aa", 2)
    add("CsCl", [55, 17], _BCC_T, _ops([[0, 0, 0]]), "ab", 1)
    add("perovskite", [38, 22, 8, 8, 8],
        [[0, 0, 0], [0.5, 0.5, 0.5], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]],
        _ops([[0, 0, 0]], [np.eye(3, dtype=int), np.roll(np.eye(3, dtype=int), 1, axis=0)]), "abccc", 6)
    add("free-quartet", [6] * 4, [[0.1, 0.2, 0.3], [0.4, 0.1, 0.7], [0.8, 0.6, 0.2], [0.3, 0.9, 0.5]],
        _ops([[0, 0, 0]]), "aaaa", 24)
    add("two-letters", [6, 6, 6, 8, 8], [[0.1, 0.1, 0.1], [0.3, 0.3, 0.3], [0.6, 0.6, 0.6],
                                         [0.2, 0.7, 0.4], [0.8, 0.3, 0.9]],
        _ops([[0, 0, 0]]), "aabcc", 2 * 2)
    add("bcc-pair-orbits", [26] * 4, [[0, 0, 0], [0.5, 0.5, 0.5], [0.25, 0.25, 0.25], [0.75, 0.75, 0.75]],
        _ops(_BCC_T), "aaaa", 2 * 2 * 2)
    add("mixed", [3, 3, 3, 3, 9, 9], [[0, 0, 0], [0.5, 0.5, 0.5], [0.1, 0.2, 0.3], [0.6, 0.7, 0.8],
                                      [0.3, 0.3, 0.6], [0.8, 0.8, 0.1]],
        _ops(_BCC_T), "aabbcc", 2 * 2 * 2)
    return out


def backbone_fd_errors(seed, d_model=8, n_layers=1, n_heads=2, harmonics=2, h=1e-4):
    """Per-tensor relative error between backward() and central differences
    on one random batch, with every parameter randomized so no gradient is
    trivially zero."""
    from xtalflow.backbone import BackboneConfig, BatchInput, backward, forward, init_params
    from xtalflow.paths import K_ELEM, MASK

    cfg = BackboneConfig(d_model=d_model, n_layers=n_layers, n_heads=n_heads, max_n=6, d_time=8,
                         coord_harmonics=harmonics)
    rng = np.random.default_rng(seed)
    params = {k: 0.3 * rng.standard_normal(v.shape) for k, v in init_params(cfg, rng).items()}
    atoms = [rng.integers(0, K_ELEM, size=n) for n in (3, 5)]
    atoms[0][1] = MASK
    frac = [rng.random((a.size, 3)) for a in atoms]
    batch = BatchInput.from_lists(atoms, frac, rng.uniform(3, 6, (2, 3)), rng.uniform(1.1, 2.0, (2, 3)),
                                  rng.random(2), rng.random(2))
    m = batch.mask[..., None]
    adj = (rng.standard_normal((2, 5, K_ELEM)) * m, rng.standard_normal((2, 5, 3)) * m,
           rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))

    def scalar(p):
        o = forward(batch, p, cfg)
        return sum(np.sum(x * a) for x, a in zip((o.logits, o.frac, o.lengths, o.angles), adj))

    grads = backward(forward(batch, params, cfg), params, cfg, *adj)
    errors = {}
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + h
            up = scalar(params)
            value[idx] = old - h
            dn = scalar(params)
            value[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]))
        errors[name] = np.linalg.norm(fd - grads[name]) / scale if scale > 0 else 0.0
    return errors


def ctmc_toy_tv(p1, steps=500, chains=100_000, seed=0):
    """Total variation between ``p1`` and the output of masked-CTMC sampling
    driven by the exact marginal rate ``p1 / (1 - t)``."""
    from xtalflow.paths import MASK
    from xtalflow.sampler import ctmc_step

    p1 = np.asarray(p1, dtype=float)
    rng = np.random.default_rng(seed)
    atoms = np.full(chains, MASK, dtype=np.int64)
    dt = 1.0 / steps
    for k in range(steps):
        t = k / steps
        rate = np.broadcast_to(p1 / (1.0 - t), (chains, p1.size))
        atoms = ctmc_step(atoms, rate, dt, rng, is_final=k == steps - 1)
    freq = np.bincount(atoms, minlength=p1.size)[: p1.size] / chains
    return 0.5 * np.abs(freq - p1).sum(), atoms


def ode_endpoint_errors(steps, seed=0):
    """Max endpoint errors (linear, torus) after Euler-integrating the
    single-pair conditional velocity."""
    from xtalflow.paths import cond_vel_frac, cond_vel_linear
    from xtalflow.sampler import ode_step
    from xtalflow.torus import torus_log

    rng = np.random.default_rng(seed)
    f0, f1 = rng.random((8, 3)), rng.random((8, 3))
    l0, l1 = rng.uniform(2, 10, 3), rng.uniform(2, 10, 3)
    a0, a1 = rng.uniform(60, 120, 3), rng.uniform(60, 120, 3)
    f, l, a = f0, l0, a0
    ds = 1.0 / steps
    for k in range(steps):
        s = k / steps
        f, l, a = ode_step(f, l, a, cond_vel_frac(f, f1, s), cond_vel_linear(l, l1, s),
                           cond_vel_linear(a, a1, s), ds)
    lin = max(np.abs(l - l1).max(), np.abs(a - a1).max())
    tor = np.abs(torus_log(f, f1)).max()
    return lin, tor


def reachable_permutations(structure, rng, patience=20):
    """Sample augmentation permutations until no new one appears for
    ``patience`` times the current set size (at least 200 draws)."""
    from xtalflow.symmetry import augment_permutation

    seen = set()
    idle = 0
    while idle < max(200, patience * len(seen)):
        perm = tuple(augment_permutation(structure, rng))
        if perm in seen:
            idle += 1
        else:
            seen.add(perm)
            idle = 0
    return seen
