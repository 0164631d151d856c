import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physqa import executor as ex
from physqa import propgraph as pg
from physqa import qlang
from physqa.physics import MASS_HEAVY, ObjectState, PhysProps, SimConfig, simulate
from physqa.qlang import Op, Program, chain, parse


def _state(x, y, vx=0.0, vy=0.0, r=0.04):
    return ObjectState(np.array([x, y]), np.array([vx, vy]), r)


ATTRS = [
    pg.StaticAttrs("red", "cube", "metal"),
    pg.StaticAttrs("red", "sphere", "rubber"),
    pg.StaticAttrs("blue", "cylinder", "metal"),
]


def _graph(masses=("heavy", "light", "light"), pair=(0, 1), rel=pg.OPPOSITE, signs=(1, -1, 0)):
    g = pg.PropertyGraph.empty(3)
    for i, m in enumerate(masses):
        g.masses[i] = m
    for (i, j) in g.relations:
        g.set_relation(i, j, pg.NONE)
    if pair is not None:
        g.set_relation(*pair, rel)
    g.signs = {i: s for i, s in enumerate(signs)}
    return g


def _context(graph=None, charges=(1, -1, 0), states=None):
    cfg = SimConfig()
    graph = graph or _graph()
    states = states or [
        _state(0.3, 0.44, vx=0.12),
        _state(0.7, 0.56, vx=-0.12),
        _state(0.5, 0.15, vy=0.02),
    ]
    props = [
        PhysProps(mass=graph.mass_value(i), charge=charges[i]) for i in range(3)
    ]
    target = simulate(states, props, cfg, 5.0)
    return ex.build_context(ATTRS, target, [], graph, ex.ExactBackend(cfg))


@pytest.fixture(scope="module")
def ctx():
    return _context()


class TestBasics:
    def test_count_red_objects(self, ctx):
        prog = parse("How many red objects are there?")
        assert ex.execute(prog, ctx).data == 2

    def test_query_color_of_heavy(self, ctx):
        prog = parse("What is the color of the heavy object?")
        assert ex.execute(prog, ctx).data == "red"

    def test_charged_query_yes_no(self, ctx):
        assert ex.answer_string(ex.execute(parse("Is the red sphere charged?"), ctx)) == "yes"
        assert ex.answer_string(ex.execute(parse("Is the blue cylinder charged?"), ctx)) == "no"

    def test_charge_relation(self, ctx):
        prog = parse("Are the red cube and the red sphere carrying opposite charges?")
        assert ex.execute(prog, ctx).data is True
        prog = parse("Are the red cube and the red sphere carrying the same charge?")
        assert ex.execute(prog, ctx).data is False

    def test_collision_event_question(self, ctx):
        prog = parse("Does the red cube collide with the red sphere?")
        # Opposite charges aimed at each other: they meet and bounce.
        assert ex.execute(prog, ctx).data is True
        prog = parse("Does the red cube collide with the blue cylinder?")
        assert ex.execute(prog, ctx).data is False

    def test_unique_on_ambiguous_descriptor_raises(self, ctx):
        prog = chain(
            Op("objects"), Op("filter_color", ("red",)), Op("unique"), Op("query_shape")
        )
        with pytest.raises(ex.NonUniqueReferenceError, match="non-unique"):
            ex.execute(prog, ctx)

    def test_unknown_label_crisp_raises(self):
        g = _graph()
        g.masses[2] = pg.UNKNOWN
        local = _context(graph=g)
        prog = parse("Is the blue cylinder heavy or light?")
        with pytest.raises(ex.InsufficientEvidenceError, match="insufficient evidence"):
            ex.execute(prog, local)

    def test_negate(self, ctx):
        prog = chain(Op("objects"), Op("filter_color", ("blue",)), Op("exist"), Op("negate"))
        assert ex.execute(prog, ctx).data is False


class TestSoftMode:
    def test_soft_equals_crisp_on_degenerate_scores(self, ctx):
        texts = [
            "How many red objects are there?",
            "Is the red sphere charged?",
            "What is the material of the blue cylinder?",
            "Are there any heavy metal cubes?",
            "Does the red cube collide with the red sphere?",
        ]
        for text in texts:
            prog = parse(text)
            crisp = ex.execute(prog, ctx, ex.CRISP)
            soft = ex.execute(prog, ctx, ex.SOFT)
            if crisp.kind == "bool":
                assert (soft.data > 0.5) == crisp.data
            elif crisp.kind == "int":
                assert soft.data == pytest.approx(crisp.data)
            else:
                assert soft.data == crisp.data

    def test_soft_scores_flow_through_filters(self, ctx):
        node_scores = {
            0: {"heavy": 0.9, "light": 0.1},
            1: {"heavy": 0.2, "light": 0.8},
            2: {"heavy": 0.5, "light": 0.5},
        }
        soft_ctx = ex.build_context(
            ATTRS, ctx.target, [], ctx.graph, ctx.backend, node_scores=node_scores
        )
        prog = chain(Op("objects"), Op("filter_mass", ("heavy",)), Op("count"))
        assert ex.execute(prog, soft_ctx, ex.SOFT).data == pytest.approx(1.6)

    def test_soft_score_of_impossible_event_low(self, ctx):
        prog = parse("Does the blue cylinder leave the scene?")
        question = parse("Which of the following will happen next?")
        score = ex.evaluate_choice(question, prog, ctx, ex.SOFT)
        assert score <= 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["red", "blue", "gray"]), st.sampled_from(["cube", "sphere", "cylinder"]))
    def test_filters_never_enlarge_sets(self, ctx, color, shape):
        base = Program((Op("objects"),))
        filtered = chain(Op("objects"), Op("filter_color", (color,)))
        more = chain(filtered, Op("filter_shape", (shape,)))
        s0 = ex.execute(base, ctx, ex.SOFT).data
        s1 = ex.execute(filtered, ctx, ex.SOFT).data
        s2 = ex.execute(more, ctx, ex.SOFT).data
        assert np.all(s1 <= s0 + 1e-12)
        assert np.all(s2 <= s1 + 1e-12)


class TestCounterfactuals:
    def test_uncharged_condition_removes_charge_events(self, ctx):
        question = parse(
            "Which of the following would happen if the red cube were uncharged?"
        )
        _value, ctx2 = ex._execute(question, ctx, ex.CRISP)
        kinds = {e.kind for e in ctx2.events}
        assert "attraction" not in kinds and "repulsion" not in kinds

    def test_counterfactual_flips_dependent_choice(self, ctx):
        # Factually the charged pair is pulled together and collides; with
        # the cube uncharged they drift past each other.
        choice = parse("The red cube and the red sphere collide")
        factual = ex.execute(choice, ctx).data
        question = parse(
            "Which of the following would happen if the red cube were uncharged?"
        )
        counterfactual = ex.evaluate_choice(question, choice, ctx)
        assert factual is True and counterfactual is False

    def test_counterfactual_graph_modifications(self):
        g = _graph()
        heavier = ex.counterfactual_graph(g, 1, "counterfact_heavier")
        assert heavier.masses[1] == pg.HEAVY and g.masses[1] == pg.LIGHT
        uncharged = ex.counterfactual_graph(g, 0, "counterfact_uncharged")
        assert uncharged.relation(0, 1) == pg.NONE
        flipped = ex.counterfactual_graph(g, 0, "counterfact_opposite")
        assert flipped.relation(0, 1) == pg.SAME
        assert flipped.signs[0] == -1

    def test_rollout_cache_reused(self, ctx):
        question = parse(
            "Which of the following would happen if the red sphere were heavier?"
        )
        choice = parse("The red cube and the red sphere collide")
        ex.evaluate_choice(question, choice, ctx)
        cached = dict(ctx._rollout_cache)
        ex.evaluate_choice(question, choice, ctx)
        assert list(ctx._rollout_cache) == list(cached)


class TestPredictive:
    def test_unseen_events_replace_context(self, ctx):
        question = parse("Which of the following will happen next?")
        _value, ctx2 = ex._execute(question, ctx, ex.CRISP)
        assert all(e.video_id == "predicted" for e in ctx2.events)

    def test_determinism(self, ctx):
        question = parse("Which of the following will happen next?")
        choice = parse("The red cube and the red sphere collide")
        a = ex.evaluate_choice(question, choice, ctx)
        fresh = _context()
        b = ex.evaluate_choice(question, choice, fresh)
        assert a == b


class TestBackend:
    def test_exact_rollout_continues_seed(self, ctx):
        seed = ctx.target.slice_frames(0, 3)
        graph = ctx.graph
        masses = [graph.mass_value(i) for i in range(3)]
        rolled = ex.rollout_from_seed(seed, masses, graph.coupling_matrix(), SimConfig(), 50)
        assert rolled.frame_count == 53
        assert np.array_equal(rolled.positions[:3], seed.positions)

    def test_absent_objects_stay_parked(self):
        cfg = SimConfig()
        states = [_state(0.95, 0.5, vx=0.3), _state(0.3, 0.5, vx=0.0)]
        props = [PhysProps(), PhysProps()]
        traj = simulate(states, props, cfg, 2.0)
        assert not traj.present[-1, 0]
        seed = traj.slice_frames(traj.frame_count - 3, traj.frame_count)
        rolled = ex.rollout_from_seed(seed, [1.0, 1.0], np.zeros((2, 2)), cfg, 25)
        assert not rolled.present[3:, 0].any()
        assert rolled.present[3:, 1].all()
