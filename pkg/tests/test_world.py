from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape.world import (
    DomainError,
    GroundedAction,
    PreconditionError,
    PreconditionViolation,
    SceneGraph,
    action_from_text,
    apply_action,
    check_preconditions,
    default_domain_path,
    enumerate_repertoire,
    execute,
    load_default_domain,
    load_domain,
    scene_problems,
)


def _act(text, scene, skills):
    return action_from_text(text, scene, skills)


def _at(scene, room, *near, holding=(), posture="standing", facing=None):
    scene.agent.room = room
    scene.agent.proximity = set(near)
    scene.agent.hands = list(holding)
    scene.agent.posture = posture
    scene.agent.facing = facing
    for oid in holding:
        scene.objects[oid].container = scene.objects[oid].surface = None
        scene.objects[oid].location = room
    return scene


# one (setup, action, type, message) per taxonomy entry
TAXONOMY = [
    (
        lambda s: (_at(s, 4, 27), s.objects[27].attributes.__setitem__("open", True)),
        "open door",
        1,
        '<door> (27) is not closed when executing "[OPEN] <door> (27) [1]"',
    ),
    (
        lambda s: _at(s, 2, 19),
        "look at tv",
        2,
        '<character> (1) does not face <tv> (19) when executing "[LOOKAT] <tv> (19) [1]"',
    ),
    (
        lambda s: _at(s, 2),
        "find milk",
        4,
        'char room <livingroom> (2) is not node room <kitchen> (1) when executing "[FIND] <milk> (11) [1]"',
    ),
    (
        lambda s: _at(s, 1, 11),
        "drink milk",
        5,
        '<character> (1) is not holding <milk> (11) when executing "[DRINK] <milk> (11) [1]"',
    ),
    (
        lambda s: _at(s, 1, 10),
        "grab milk",
        6,
        '<milk> (11) is inside other closed thing when executing "[GRAB] <milk> (11) [1]"',
    ),
    (
        lambda s: _at(s, 2, 17),
        "grab couch",
        7,
        '<couch> (17) does not have GRABBABLE when executing "[GRAB] <couch> (17) [1]"',
    ),
    (
        lambda s: _at(s, 1, 12, 14, holding=(12, 14)),
        "grab apple",
        8,
        '<character> (1) does not have a free hand when executing "[GRAB] <apple> (14) [1]"',
    ),
    (
        lambda s: _at(s, 2),
        "grab phone",
        9,
        '<character> (1) is not close to <phone> (16) when executing "[GRAB] <phone> (16) [1]"',
    ),
    (
        lambda s: _at(s, 2),
        "stand up",
        10,
        'precondition not satisfied when executing "[STANDUP] [1]"',
    ),
]


@pytest.mark.parametrize("setup,text,type_id,message", TAXONOMY, ids=[f"type{t[2]}" for t in TAXONOMY])
def test_error_taxonomy_fixture(household, setup, text, type_id, message):
    skills, scene = household
    setup(scene)
    err = check_preconditions(scene, _act(text, scene, skills), skills)
    assert err is not None
    assert err.type_id == type_id
    assert err.message == message


def test_grab_from_closed_fridge_then_open(household):
    skills, scene = household
    scene = execute(scene, [_act(t, scene, skills) for t in ["walk to kitchen", "walk to fridge"]], skills)
    grab = _act("grab milk", scene, skills)
    assert check_preconditions(scene, grab, skills).type_id == 6
    scene = apply_action(scene, _act("open fridge", scene, skills), skills)
    assert check_preconditions(scene, grab, skills) is None
    scene = apply_action(scene, grab, skills)
    assert 11 in scene.agent.hands
    assert scene.objects[11].container is None


def test_first_violated_precondition_wins(household):
    skills, scene = household
    # couch is neither grabbable nor close; the capability check is declared first
    err = check_preconditions(scene, _act("grab couch", scene, skills), skills)
    assert err.type_id == 7


def test_unknown_verb_is_invalid_action(household):
    skills, scene = household
    err = check_preconditions(scene, GroundedAction("pull", 19, "tv", "pull tv"), skills)
    assert err.type_id == 7
    assert err.message == '<tv> (19) does not have PULL when executing "[PULL] <tv> (19) [1]"'


def test_apply_action_is_atomic(household):
    skills, scene = household
    before = json.dumps(scene.to_dict(), sort_keys=True)
    with pytest.raises(PreconditionViolation) as info:
        apply_action(scene, _act("grab phone", scene, skills), skills)
    assert info.value.error.type_id == 9
    assert json.dumps(scene.to_dict(), sort_keys=True) == before


def test_apply_action_returns_new_scene(household):
    skills, scene = household
    new = apply_action(scene, _act("walk to kitchen", scene, skills), skills)
    assert new.agent.room == 1 and scene.agent.room == 2
    assert new.step_counter == 1 and scene.step_counter == 0


def test_held_objects_travel_with_agent(household):
    skills, scene = household
    steps = ["walk to phone", "grab phone", "walk to bedroom"]
    scene = execute(scene, [_act(t, scene, skills) for t in steps], skills)
    assert scene.objects[16].location == 3
    assert scene_problems(scene) == []


def test_put_on_releases_onto_surface(household):
    skills, scene = household
    steps = ["walk to phone", "grab phone", "walk to nightstand", "put it on nightstand"]
    scene = execute(scene, [_act(t, scene, skills) for t in steps], skills)
    phone = scene.objects[16]
    assert (phone.surface, phone.container, phone.location) == (20, None, 3)
    assert not phone.attributes["grabbed"]
    assert scene.agent.hands == []


def test_repertoire_is_capability_filtered_and_ordered(household):
    skills, scene = household
    rep = enumerate_repertoire(scene, skills)
    rendered = [a.rendered for a in rep]
    assert len(rendered) == len(set(rendered))
    assert "grab milk" in rendered and "grab couch" not in rendered
    assert "walk to kitchen" in rendered and "open milk" not in rendered
    keys = [(a.verb, a.object_id or 0) for a in rep]
    assert keys == sorted(keys)


def test_repertoire_ignores_world_state(household):
    skills, scene = household
    a = [x.rendered for x in enumerate_repertoire(scene, skills)]
    scene.objects[10].attributes["open"] = True
    scene.agent.posture = "sitting"
    assert [x.rendered for x in enumerate_repertoire(scene, skills)] == a


def test_scene_round_trip(household):
    _, scene = household
    doc = scene.to_dict()
    again = SceneGraph.from_dict(json.loads(json.dumps(doc)))
    assert again.to_dict() == doc


def test_domain_errors_carry_a_path():
    doc = json.loads(default_domain_path("household").read_text())
    doc["objects"][0]["room"] = 99
    with pytest.raises(DomainError) as info:
        load_domain(doc)
    assert "$.objects[0]" in str(info.value)


def test_domain_schema_violation_is_reported():
    doc = json.loads(default_domain_path("household").read_text())
    doc["skills"][0]["preconditions"][0]["kind"] = "telepathy"
    with pytest.raises(DomainError) as info:
        load_domain(doc)
    assert "skills" in str(info.value)


def test_precondition_error_round_trip(household):
    skills, scene = household
    err = check_preconditions(scene, _act("grab phone", scene, skills), skills)
    assert PreconditionError.from_dict(json.loads(json.dumps(err.to_dict()))) == err


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=131), max_size=12))
def test_random_afforded_walks_keep_scene_consistent(picks):
    skills, scene = load_default_domain("household")
    rep = enumerate_repertoire(scene, skills)
    for i in picks:
        act = rep[i]
        if check_preconditions(scene, act, skills) is None:
            scene = apply_action(scene, act, skills)
            assert scene_problems(scene) == []
        else:
            with pytest.raises(PreconditionViolation):
                apply_action(scene, act, skills)
