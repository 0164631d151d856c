import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physqa import qlang
from physqa.qlang import Descriptor, Op, Program, chain, parse, render, typecheck


class TestParse:
    def test_charged_query(self):
        prog = parse("Is the red sphere charged?")
        assert prog == Program(
            (
                Op("objects"),
                Op("filter_color", ("red",)),
                Op("filter_shape", ("sphere",)),
                Op("unique"),
                Op("query_charged"),
            )
        )

    def test_counterfactual_uncharged(self):
        prog = parse("Which of the following would happen if the cyan object were uncharged?")
        assert prog.ops[-1].name == "counterfact_uncharged"
        assert prog.ops[:-1] == (
            Op("objects"),
            Op("filter_color", ("cyan",)),
            Op("unique"),
        )

    def test_gibberish_fails_at_offset_zero(self):
        with pytest.raises(qlang.ParseError, match="offset 0"):
            parse("blargh?")

    def test_trailing_garbage_rejected(self):
        with pytest.raises(qlang.ParseError, match="unparseable"):
            parse("Is the red sphere charged? indeed")

    def test_collision_question(self):
        prog = parse("Does the heavy cube collide with the rubber sphere?")
        names = [op.name for op in prog.ops]
        assert names == ["events", "filter_collision", "filter_participant", "filter_participant", "exist"]
        assert prog.ops[2].branch.ops[1] == Op("filter_mass", ("heavy",))

    def test_declarative_choice_clause(self):
        prog = parse("The red cube and the blue sphere collide")
        assert prog.ops[0].name == "events"
        assert prog.ops[-1].name == "exist"

    def test_predictive_question(self):
        assert parse("Which of the following will happen next?") == Program(
            (Op("unseen_events"),)
        )

    def test_full_descriptor_order(self):
        prog = parse("How many heavy charged moving red metal cubes are there?")
        names = [op.name for op in prog.ops]
        assert names == [
            "objects",
            "filter_mass",
            "filter_charged",
            "filter_moving",
            "filter_color",
            "filter_material",
            "filter_shape",
            "count",
        ]


DESCRIPTORS = st.builds(
    Descriptor,
    mass=st.sampled_from([None, "heavy", "light"]),
    charge=st.sampled_from([None, "charged", "uncharged"]),
    motion=st.sampled_from([None, "moving", "stationary"]),
    color=st.sampled_from((None,) + qlang.COLORS),
    material=st.sampled_from((None,) + qlang.MATERIALS),
    shape=st.sampled_from((None,) + qlang.SHAPES),
)


def _programs() -> st.SearchStrategy[Program]:
    unique = DESCRIPTORS.map(lambda d: chain(d.ops(), Op("unique")))

    def attr_query(d, attr):
        return chain(d.ops(), Op("unique"), Op(attr))

    queries = st.builds(
        attr_query,
        DESCRIPTORS,
        st.sampled_from(
            ["query_color", "query_shape", "query_material", "query_mass", "query_charged"]
        ),
    )
    relation = st.builds(
        lambda a, b, rel: chain(a, Op("query_charge_relation", (rel,), b)),
        unique,
        unique,
        st.sampled_from(["same", "opposite"]),
    )
    counts = st.builds(lambda d, tail: chain(d.ops(), Op(tail)), DESCRIPTORS, st.sampled_from(["count", "exist"]))
    collision = st.builds(
        lambda a, b: Program(
            (
                Op("events"),
                Op("filter_collision"),
                Op("filter_participant", (), a),
                Op("filter_participant", (), b),
                Op("exist"),
            )
        ),
        unique,
        unique,
    )
    inout = st.builds(
        lambda d, kind: Program(
            (
                Op("events"),
                Op(kind),
                Op("filter_participant", (), d),
                Op("exist"),
            )
        ),
        unique,
        st.sampled_from(["filter_in", "filter_out"]),
    )
    counterfact = st.builds(
        lambda a, cond: chain(a, Op(cond)),
        unique,
        st.sampled_from(sorted(qlang.CONDITION_TEXT)),
    )
    predictive = st.just(Program((Op("unseen_events"),)))
    return st.one_of(queries, relation, counts, collision, inout, counterfact, predictive)


class TestRoundTrip:
    @settings(max_examples=300, deadline=None)
    @given(_programs())
    def test_parse_render_identity(self, prog):
        assert parse(render(prog)) == prog

    @settings(max_examples=100, deadline=None)
    @given(_programs())
    def test_render_idempotent(self, prog):
        text = render(prog)
        assert render(parse(text)) == text

    def test_declarative_clause_round_trips_to_same_program(self):
        prog = parse("The red cube and the blue sphere collide")
        assert parse(render(prog, declarative=True)) == prog

    def test_structurally_equal_programs_render_identically(self):
        a = parse("Is the red sphere charged?")
        b = chain(
            Op("objects"),
            Op("filter_color", ("red",)),
            Op("filter_shape", ("sphere",)),
            Op("unique"),
            Op("query_charged"),
        )
        assert render(a) == render(b)


class TestTypecheck:
    def test_count_on_objects_ok(self):
        assert typecheck(Program((Op("objects"), Op("count")))) == qlang.INT

    def test_color_filter_on_events_fails_at_index(self):
        with pytest.raises(qlang.TypecheckError, match="index 1"):
            typecheck(Program((Op("events"), Op("filter_color", ("red",)))))

    def test_source_must_come_first(self):
        prog = Program(
            (Op("objects"), Op("unique"), Op("counterfact_heavier"), Op("unseen_events"))
        )
        with pytest.raises(qlang.TypecheckError, match="must come first"):
            typecheck(prog)

    def test_bad_argument_rejected(self):
        with pytest.raises(qlang.TypecheckError, match="bad argument"):
            typecheck(Program((Op("objects"), Op("filter_color", ("chartreuse",)))))

    def test_render_rejects_ill_typed_program(self):
        with pytest.raises(qlang.TypecheckError):
            render(Program((Op("events"), Op("filter_color", ("red",)))))

    def test_missing_branch_rejected(self):
        with pytest.raises(qlang.TypecheckError, match="needs a branch"):
            typecheck(Program((Op("objects"), Op("unique"), Op("query_charge_relation", ("same",)))))


def test_program_json_round_trip():
    prog = parse("Does the heavy cube collide with the rubber sphere?")
    assert Program.from_json(prog.to_json()) == prog
