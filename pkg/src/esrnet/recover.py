"""Documented searches that produced the packaged reference configs.

The published totals for the five-stage grayscale network pin four sums
(single net 131,208; four independent nets 524,832; four branches split
at level 3 -> 355,104; at level 4 -> 243,936). Writing stage costs as
``s_i = c_i * (c_{i-1} * k_i^2 + 3)`` (conv weight + bias + batchnorm
gamma/beta) and the head as ``8 * c_5 + 8``, the totals force

    s4            = 37,056
    s5 + head     = 37,576
    s1 + s2 + s3  = 56,576

``recover_lab_config`` enumerates integer solutions of that system and
returns the unique one; ``recover_wild_config`` enumerates nondecreasing
width tuples for the deeper color variant and keeps the one whose total
at nine branches lands closest to twenty million parameters.
"""

from __future__ import annotations

from itertools import combinations_with_replacement

from .architecture import (
    ArchitectureConfig,
    StageSpec,
    ensemble_parameter_count,
    parameter_plan,
)

LAB_TOTALS = {"single": 131_208, "independent4": 524_832, "level3": 355_104, "level4": 243_936}
WILD_TARGET = 20_000_000
WILD_BRANCHES = 9


def _solve_lab_tail(s4_target: int, s5_head_target: int, kernel: int = 3):
    """All (c3, c4, c5) with s4 == s4_target and s5 + head == s5_head_target."""
    out = []
    k2 = kernel * kernel
    for c4 in range(1, 1025):
        rem, mod = divmod(s4_target, c4)
        if mod or (rem - 3) % k2:
            continue
        c3 = (rem - 3) // k2
        if c3 < 1:
            continue
        denom = c4 * k2 + 11  # conv-in cost + batchnorm + head row + head bias share
        if (s5_head_target - 8) % denom:
            continue
        c5 = (s5_head_target - 8) // denom
        if c5 >= 1:
            out.append((c3, c4, c5))
    return out


def recover_lab_config() -> ArchitectureConfig:
    """Enumerate the stage system; the solution is unique in the search box.

    Search box: first kernel in {3, 5, 7} (later kernels 3), channel counts
    1..1024 and nondecreasing with depth (dropping monotonicity admits one
    spurious narrow-waist solution). Pools sit after stages 2, 3 and 4;
    paddings keep spatial size.
    """
    single = LAB_TOTALS["single"]
    lvl3 = LAB_TOTALS["level3"]
    lvl4 = LAB_TOTALS["level4"]
    # branch sums fall out of the level splits by subtraction
    s4 = (lvl3 - single) // 3 - (lvl4 - single) // 3
    s5_head = (lvl4 - single) // 3
    s123 = single - (lvl3 - single) // 3

    hits = []
    for c3, c4, c5 in _solve_lab_tail(s4, s5_head):
        for k1 in (3, 5, 7):
            # s1 + s2 + s3 = c1*(k1^2+3) + c2*(9*c1+3) + c3*(9*c2+3)
            for c1 in range(1, 513):
                s1 = c1 * (k1 * k1 + 3)
                rest = s123 - s1 - 3 * c3
                denom = 9 * c1 + 3 + 9 * c3
                if rest > 0 and rest % denom == 0:
                    c2 = rest // denom
                    if c1 <= c2 <= c3 <= c4 <= c5:
                        hits.append((k1, c1, c2, c3, c4, c5))
    if len(hits) != 1:
        raise RuntimeError(f"lab search expected a unique solution, found {hits}")
    k1, c1, c2, c3, c4, c5 = hits[0]
    cfg = ArchitectureConfig(
        name="lab",
        input_shape=(1, 96, 96),
        num_classes=8,
        branching_level=3,
        stages=[
            StageSpec(c1, k1, k1 // 2, pool=False),
            StageSpec(c2, 3, 1, pool=True),
            StageSpec(c3, 3, 1, pool=True),
            StageSpec(c4, 3, 1, pool=True),
            StageSpec(c5, 3, 1, pool=False),
        ],
    )
    _check_lab(cfg)
    return cfg


def _check_lab(cfg: ArchitectureConfig) -> None:
    plan = parameter_plan(cfg)
    assert plan["single"] == LAB_TOTALS["single"]
    assert 4 * plan["single"] == LAB_TOTALS["independent4"]
    assert ensemble_parameter_count(cfg.at_level(3), 4) == LAB_TOTALS["level3"]
    assert ensemble_parameter_count(cfg.at_level(4), 4) == LAB_TOTALS["level4"]


def recover_wild_config() -> ArchitectureConfig:
    """Pick the eight-stage color variant closest to 20M total at E=9.

    Constraints: widths nondecreasing multiples of 64 up to 512, first
    kernel 5 then 3s, a pool after every second stage (halving 96 -> 24
    by the trunk exit so branches start at the same spatial level as the
    five-stage net split at level 3), trunk of four stages, dense 8-way
    head. Tie-breaks: fewer distinct widths, then lexicographic order.
    """
    widths = tuple(range(64, 513, 64))
    best = None
    for combo in combinations_with_replacement(widths, 8):
        cfg = _wild_from_widths(combo)
        total = ensemble_parameter_count(cfg, WILD_BRANCHES)
        key = (abs(total - WILD_TARGET), len(set(combo)), combo)
        if best is None or key < best[0]:
            best = (key, cfg)
    return best[1]


def _wild_from_widths(combo) -> ArchitectureConfig:
    stages = []
    for i, width in enumerate(combo):
        kernel = 5 if i == 0 else 3
        stages.append(StageSpec(width, kernel, kernel // 2, pool=(i % 2 == 1)))
    return ArchitectureConfig(
        name="wild",
        input_shape=(3, 96, 96),
        num_classes=8,
        branching_level=4,
        stages=stages,
    )
