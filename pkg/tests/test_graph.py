import itertools
import math

import numpy as np
import pytest

from stagewatch.events import N_STAGES, ObservedEvent
from stagewatch.graph import (
    COMMON_LINK,
    SEVERITY,
    TRANSITION,
    FactorGraph,
    construct,
    ff_potential,
    joint_log_score,
    match_pattern,
    to_dot,
)
from stagewatch.training import (
    CommonPattern,
    Counts,
    RepetitiveFF,
    SeverityFF,
    TrainConfig,
    TrainedModel,
)

from fg_builders import dummy_events, random_loopy_fg, unary_ff_factor


def make_model(severity=(), common=(), repetitive=(), transitions=None):
    return TrainedModel(
        severity=list(severity),
        common=list(common),
        repetitive=list(repetitive),
        transitions=np.full((11, 11), 1 / 11) if transitions is None else transitions,
        counts=Counts(),
        config=TrainConfig(),
    )


def ev(ts, symbol, user="u1"):
    return ObservedEvent(ts=ts, user=user, symbol=symbol)


class TestFFPotential:
    def test_zero_frequency(self):
        assert ff_potential(0.0, 0.5) == 1.0

    def test_endpoints(self):
        assert ff_potential(1.0, 0.0) == pytest.approx(math.e, rel=1e-12)

    def test_direct_evaluation(self):
        assert ff_potential(0.5, 0.05) == pytest.approx(math.exp(0.475), rel=1e-12)
        assert ff_potential(0.5, 0.05) == pytest.approx(1.60801, abs=1e-5)


class TestConstruct:
    def test_single_event_single_severity_ff(self):
        model = make_model(severity=[SeverityFF("compile", 5, q=0.4, p=0.01)])
        fg = construct([ev(0, "compile")], model)
        assert fg.n_nodes == 1
        kinds = [f.kind for f in fg.factors]
        assert kinds == [SEVERITY]
        assert fg.factors[0].scope == (0,)
        assert fg.factors[0].table[5] == pytest.approx(ff_potential(0.4, 0.01))

    def test_backbone_only(self):
        model = make_model()
        fg = construct([ev(0, "login"), ev(1, "login"), ev(2, "login")], model)
        assert fg.n_nodes == 3
        assert [f.kind for f in fg.factors] == [TRANSITION, TRANSITION]
        assert [f.scope for f in fg.factors] == [(0, 1), (1, 2)]

    def test_pattern_creates_skip_link(self):
        pattern = CommonPattern(("port_scan", "compile"), (1, 5), q=0.5, p=0.01)
        model = make_model(common=[pattern])
        window = [ev(0, "port_scan"), ev(1, "login"), ev(2, "compile")]
        fg = construct(window, model)
        # adjacency oracle: backbone (0,1), (1,2) plus the pattern link (0,2)
        scopes = sorted(f.scope for f in fg.factors if len(f.scope) == 2)
        assert scopes == [(0, 1), (0, 2), (1, 2)]
        link = [f for f in fg.factors if f.kind == COMMON_LINK]
        assert len(link) == 1 and link[0].scope == (0, 2)
        assert link[0].table[1, 5] == pytest.approx(ff_potential(0.5, 0.01))
        assert fg.pattern_matches == {0: [0, 2]}

    def test_insignificant_ffs_are_skipped(self):
        model = make_model(
            severity=[SeverityFF("compile", 5, q=0.4, p=0.2), SeverityFF("compile", 6, q=0.0, p=0.01)]
        )
        fg = construct([ev(0, "compile")], model)
        assert fg.factors == []

    def test_repetitive_ff_adds_unary(self):
        model = make_model(repetitive=[RepetitiveFF("port_scan", 1, 5, q=0.8, p=0.02)])
        fg = construct([ev(0, "port_scan")], model)
        assert [f.kind for f in fg.factors] == ["repetitive"]

    def test_pattern_matched_at_most_once(self):
        pattern = CommonPattern(("port_scan", "compile"), (1, 5), q=0.5, p=0.01)
        model = make_model(common=[pattern])
        window = [ev(i, s) for i, s in enumerate(["port_scan", "compile", "port_scan", "compile"])]
        fg = construct(window, model)
        links = [f for f in fg.factors if f.kind == COMMON_LINK]
        assert len(links) == 1
        assert links[0].scope == (0, 1)  # greedy leftmost

    def test_window_limits(self):
        model = make_model()
        with pytest.raises(ValueError):
            construct([], model)
        with pytest.raises(ValueError):
            construct([ev(i, "login") for i in range(6)], model, max_window=5)

    def test_construction_deterministic(self):
        pattern = CommonPattern(("port_scan", "compile"), (1, 5), q=0.5, p=0.01)
        model = make_model(
            severity=[SeverityFF("compile", 5, q=0.4, p=0.01)], common=[pattern]
        )
        window = [ev(0, "port_scan"), ev(1, "compile")]
        a, b = construct(window, model), construct(window, model)
        assert [(f.kind, f.scope, f.source) for f in a.factors] == [
            (f.kind, f.scope, f.source) for f in b.factors
        ]

    def test_ff_tables_at_least_one(self):
        pattern = CommonPattern(("port_scan", "compile"), (1, 5), q=0.5, p=0.01)
        model = make_model(
            severity=[SeverityFF("compile", 5, q=0.4, p=0.01)], common=[pattern]
        )
        fg = construct([ev(0, "port_scan"), ev(1, "compile")], model)
        for f in fg.factors:
            assert (f.table > 0).all()
            if f.kind != TRANSITION:
                assert (f.table >= 1.0).all()
                assert (f.table > 1.0).sum() == 1  # exactly the matching cell


class TestMatchPattern:
    def test_greedy_leftmost(self):
        assert match_pattern(["a", "b", "a", "c"], ["a", "c"]) == [0, 3]
        assert match_pattern(["a", "b"], ["b", "a"]) is None
        assert match_pattern([], ["a"]) is None


class TestJointLogScore:
    def test_uniform_backbone_symmetric(self):
        model = make_model()
        fg = construct([ev(0, "login"), ev(1, "login")], model)
        scores = {joint_log_score(fg, [i, j]) for i in range(3) for j in range(3)}
        assert max(scores) - min(scores) < 1e-12

    def test_single_unary_difference_is_q_times_one_minus_p(self):
        q, p = 0.7, 0.03
        fg = FactorGraph(events=dummy_events(1), factors=[unary_ff_factor(0, 4, q, p)])
        diff = joint_log_score(fg, [4]) - joint_log_score(fg, [3])
        assert diff == pytest.approx(q * (1 - p), rel=1e-12)

    def test_matches_brute_force_product_oracle(self):
        rng = np.random.default_rng(11)
        fg = random_loopy_fg(4, rng)
        for _ in range(20):
            stages = [int(s) for s in rng.integers(0, N_STAGES, size=4)]
            product = 1.0
            for f in fg.factors:
                if len(f.scope) == 1:
                    product *= f.table[stages[f.scope[0]]]
                else:
                    product *= f.table[stages[f.scope[0]], stages[f.scope[1]]]
            assert math.exp(joint_log_score(fg, stages)) == pytest.approx(product, rel=1e-9)

    def test_adding_ff_never_reduces_scores(self):
        rng = np.random.default_rng(3)
        fg = random_loopy_fg(3, rng)
        extra = unary_ff_factor(1, 2, q=0.9, p=0.01)
        augmented = FactorGraph(events=fg.events, factors=fg.factors + [extra])
        for stages in itertools.product(range(3), repeat=3):
            assert joint_log_score(augmented, list(stages)) >= joint_log_score(
                fg, list(stages)
            ) - 1e-12

    def test_length_mismatch(self):
        model = make_model()
        fg = construct([ev(0, "login")], model)
        with pytest.raises(ValueError):
            joint_log_score(fg, [0, 1])


def test_dot_export_structure():
    model = make_model(severity=[SeverityFF("compile", 5, q=0.4, p=0.01)])
    fg = construct([ev(0, "port_scan"), ev(1, "compile")], model)
    dot = to_dot(fg)
    assert dot.startswith("graph factorgraph {")
    assert 's0 [shape=circle, label="s0\\nport_scan"];' in dot
    assert dot.count("shape=box") == len(fg.factors)
    assert "f0 -- s0;" in dot
