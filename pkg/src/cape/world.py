"""Household world simulator with STRIPS-style skills.

Skills carry ordered precondition predicates and effects. When a predicate
fails, the violation is classified into one of the VirtualHome error types
and rendered with the matching VirtualHome error template.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema

CAPABILITIES = frozenset(
    {"GRABBABLE", "OPENABLE", "SWITCHABLE", "CONTAINER", "SURFACE", "SITTABLE"}
)
STANDARD_ATTRIBUTES = ("open", "on", "clean", "grabbed")
POSTURES = ("standing", "sitting")
CHARACTER = "<character> (1)"

PREDICATE_KINDS = (
    "close_to",
    "facing",
    "holding",
    "free_hand",
    "attribute_is",
    "same_room",
    "not_enclosed",
    "has_capability",
    "posture_is",
)
EFFECT_KINDS = (
    "set_attr",
    "move",
    "approach",
    "face",
    "grab",
    "release_on",
    "release_in",
    "set_posture",
)

# predicate kind -> error type id
ERROR_TYPE = {
    "attribute_is": 1,
    "facing": 2,
    "same_room": 4,
    "holding": 5,
    "not_enclosed": 6,
    "has_capability": 7,
    "free_hand": 8,
    "close_to": 9,
    "posture_is": 10,
}

ERROR_NAMES = {
    1: "Unflipped Boolean state",
    2: "Field of view",
    3: "Empty program",
    4: "Absent from room",
    5: "Missing object",
    6: "Enclosed object",
    7: "Invalid action",
    8: "Over-occupied agent",
    9: "Agent proximity",
    10: "Other precondition",
}

_STATE_WORDS = {
    ("open", True): "open",
    ("open", False): "closed",
    ("on", True): "on",
    ("on", False): "off",
    ("clean", True): "clean",
    ("clean", False): "dirty",
}

_AGENT_DEFAULT_KINDS = {"free_hand", "posture_is"}


class DomainError(ValueError):
    """Raised when a domain document is malformed or inconsistent."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class PreconditionViolation(RuntimeError):
    """apply_action was called on an action whose preconditions fail."""

    def __init__(self, error: "PreconditionError"):
        self.error = error
        super().__init__(error.message)


@dataclass
class ObjectInstance:
    id: int
    class_name: str
    attributes: dict[str, bool]
    capabilities: frozenset[str]
    location: int
    container: int | None = None
    surface: int | None = None

    def has(self, capability: str) -> bool:
        return capability in self.capabilities


@dataclass
class AgentState:
    room: int
    proximity: set[int] = field(default_factory=set)
    facing: int | None = None
    hands: list[int] = field(default_factory=list)
    posture: str = "standing"


@dataclass
class SceneGraph:
    rooms: dict[int, str]
    objects: dict[int, ObjectInstance]
    agent: AgentState
    max_hands: int = 2
    step_counter: int = 0

    def copy(self) -> "SceneGraph":
        return copy.deepcopy(self)

    def name_of(self, node_id: int) -> str:
        if node_id in self.objects:
            return self.objects[node_id].class_name
        return self.rooms[node_id]

    def resolve(self, name: str, *, include_rooms: bool = False) -> int | None:
        """Lowest id among nodes called ``name``."""
        ids = [o.id for o in self.objects.values() if o.class_name == name]
        if include_rooms:
            ids += [rid for rid, rname in self.rooms.items() if rname == name]
        return min(ids) if ids else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "rooms": [{"id": rid, "name": name} for rid, name in sorted(self.rooms.items())],
            "objects": [
                {
                    "id": o.id,
                    "class": o.class_name,
                    "attributes": dict(sorted(o.attributes.items())),
                    "capabilities": sorted(o.capabilities),
                    "room": o.location,
                    "in": o.container,
                    "on": o.surface,
                }
                for o in sorted(self.objects.values(), key=lambda o: o.id)
            ],
            "agent": {
                "room": self.agent.room,
                "proximity": sorted(self.agent.proximity),
                "facing": self.agent.facing,
                "hands": list(self.agent.hands),
                "posture": self.agent.posture,
            },
            "max_hands": self.max_hands,
            "step_counter": self.step_counter,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SceneGraph":
        scene = _scene_from_doc(doc, path="$")
        scene.step_counter = int(doc.get("step_counter", 0))
        return scene


@dataclass(frozen=True)
class Predicate:
    kind: str
    target: str = "object"  # "object" (the skill parameter) or "agent"
    attr: str | None = None
    value: Any = None
    capability: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "target": self.target}
        if self.attr is not None:
            out["attr"] = self.attr
        if self.value is not None:
            out["value"] = self.value
        if self.capability is not None:
            out["capability"] = self.capability
        return out


@dataclass(frozen=True)
class Effect:
    kind: str
    attr: str | None = None
    value: Any = None


@dataclass(frozen=True)
class SkillTemplate:
    verb: str
    text_form: str
    preconditions: tuple[Predicate, ...] = ()
    effects: tuple[Effect, ...] = ()
    target: str = "object"  # "object" or "location" (rooms and objects)

    @property
    def arity(self) -> int:
        return self.text_form.count("<object>")

    def render(self, name: str | None = None) -> str:
        if self.arity == 0:
            return self.text_form
        return self.text_form.replace("<object>", name or "")

    @property
    def pattern(self) -> re.Pattern[str]:
        escaped = re.escape(self.text_form).replace(re.escape("<object>"), "(?P<object>.+)")
        return re.compile(f"^{escaped}$")

    def required_capabilities(self) -> list[str]:
        return [
            p.capability
            for p in self.preconditions
            if p.kind == "has_capability" and p.target == "object" and p.capability
        ]


@dataclass(frozen=True)
class GroundedAction:
    verb: str
    object_id: int | None
    object_name: str
    rendered: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "verb": self.verb,
            "object_id": self.object_id,
            "object_name": self.object_name,
            "rendered": self.rendered,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundedAction":
        return cls(d["verb"], d.get("object_id"), d.get("object_name", ""), d["rendered"])


@dataclass(frozen=True)
class PreconditionError:
    type_id: int
    action: GroundedAction
    violated: Predicate
    message: str

    @property
    def type_name(self) -> str:
        return ERROR_NAMES[self.type_id]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type_id": self.type_id,
            "action": self.action.to_dict(),
            "violated": self.violated.to_dict(),
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PreconditionError":
        v = d["violated"]
        pred = Predicate(
            kind=v["kind"],
            target=v.get("target", "object"),
            attr=v.get("attr"),
            value=v.get("value"),
            capability=v.get("capability"),
        )
        return cls(d["type_id"], GroundedAction.from_dict(d["action"]), pred, d["message"])


Skills = Mapping[str, SkillTemplate]


# --------------------------------------------------------------------------
# Domain loading

_PREDICATE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(PREDICATE_KINDS)},
        "target": {"enum": ["object", "agent"]},
        "attr": {"type": "string"},
        "value": {"type": ["boolean", "string"]},
        "capability": {"enum": sorted(CAPABILITIES)},
    },
    "additionalProperties": False,
}

DOMAIN_SCHEMA = {
    "type": "object",
    "required": ["rooms", "objects", "skills", "agent"],
    "properties": {
        "max_hands": {"type": "integer", "minimum": 1},
        "rooms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "name"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "name": {"type": "string", "pattern": "^[a-z][a-z0-9 ]*$"},
                },
                "additionalProperties": False,
            },
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "class", "room"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "class": {"type": "string", "pattern": "^[a-z][a-z0-9 ]*$"},
                    "attributes": {
                        "type": "object",
                        "additionalProperties": {"type": "boolean"},
                    },
                    "capabilities": {
                        "type": "array",
                        "items": {"enum": sorted(CAPABILITIES)},
                        "uniqueItems": True,
                    },
                    "room": {"type": "integer"},
                    "in": {"type": ["integer", "null"]},
                    "on": {"type": ["integer", "null"]},
                },
                "additionalProperties": False,
            },
        },
        "agent": {
            "type": "object",
            "required": ["room"],
            "properties": {
                "room": {"type": "integer"},
                "proximity": {"type": "array", "items": {"type": "integer"}},
                "facing": {"type": ["integer", "null"]},
                "hands": {"type": "array", "items": {"type": "integer"}},
                "posture": {"enum": list(POSTURES)},
            },
            "additionalProperties": False,
        },
        "skills": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["verb", "text"],
                "properties": {
                    "verb": {"type": "string", "pattern": "^[a-z][a-z_]*$"},
                    "text": {"type": "string"},
                    "target": {"enum": ["object", "location"]},
                    "preconditions": {"type": "array", "items": _PREDICATE_SCHEMA},
                    "effects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["kind"],
                            "properties": {
                                "kind": {"enum": list(EFFECT_KINDS)},
                                "attr": {"type": "string"},
                                "value": {"type": ["boolean", "string"]},
                            },
                            "additionalProperties": False,
                        },
                    },
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def _json_path(parts: Iterable[Any]) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _skill_from_doc(doc: Mapping[str, Any], path: str) -> SkillTemplate:
    text = doc["text"]
    if text.count("<object>") > 1:
        raise DomainError(f"{path}.text", "at most one <object> slot is supported")
    preds = []
    for j, p in enumerate(doc.get("preconditions", [])):
        kind = p["kind"]
        target = p.get("target", "agent" if kind in _AGENT_DEFAULT_KINDS else "object")
        if kind == "attribute_is" and ("attr" not in p or not isinstance(p.get("value"), bool)):
            raise DomainError(f"{path}.preconditions[{j}]", "attribute_is needs attr and boolean value")
        if kind == "has_capability" and "capability" not in p:
            raise DomainError(f"{path}.preconditions[{j}]", "has_capability needs capability")
        if kind == "posture_is" and p.get("value") not in POSTURES:
            raise DomainError(f"{path}.preconditions[{j}]", "posture_is needs a posture value")
        preds.append(
            Predicate(kind, target, p.get("attr"), p.get("value"), p.get("capability"))
        )
    effects = tuple(
        Effect(e["kind"], e.get("attr"), e.get("value")) for e in doc.get("effects", [])
    )
    skill = SkillTemplate(
        verb=doc["verb"],
        text_form=text,
        preconditions=tuple(preds),
        effects=effects,
        target=doc.get("target", "object"),
    )
    if skill.arity == 0:
        bad = [p for p in preds if p.target == "object"]
        if bad:
            raise DomainError(f"{path}.preconditions", "arity-0 skill references an object parameter")
    return skill


def _scene_from_doc(doc: Mapping[str, Any], path: str) -> SceneGraph:
    rooms: dict[int, str] = {}
    for i, r in enumerate(doc["rooms"]):
        if r["id"] in rooms:
            raise DomainError(f"{path}.rooms[{i}].id", f"duplicate room id {r['id']}")
        rooms[r["id"]] = r["name"]

    objects: dict[int, ObjectInstance] = {}
    for i, o in enumerate(sorted(doc["objects"], key=lambda o: o["id"])):
        oid = o["id"]
        if oid in objects or oid in rooms:
            raise DomainError(f"{path}.objects[{i}].id", f"duplicate node id {oid}")
        if o["room"] not in rooms:
            raise DomainError(f"{path}.objects[{i}].room", f"unknown room {o['room']}")
        attrs = {a: False for a in STANDARD_ATTRIBUTES}
        attrs.update(o.get("attributes", {}))
        objects[oid] = ObjectInstance(
            id=oid,
            class_name=o["class"],
            attributes=attrs,
            capabilities=frozenset(o.get("capabilities", [])),
            location=o["room"],
            container=o.get("in"),
            surface=o.get("on"),
        )

    a = doc["agent"]
    agent = AgentState(
        room=a["room"],
        proximity=set(a.get("proximity", [])),
        facing=a.get("facing"),
        hands=list(a.get("hands", [])),
        posture=a.get("posture", "standing"),
    )
    for oid in agent.hands:
        if oid in objects:
            objects[oid].attributes["grabbed"] = True
    scene = SceneGraph(rooms, objects, agent, max_hands=int(doc.get("max_hands", 2)))
    problems = scene_problems(scene)
    if problems:
        raise DomainError(problems[0][0].replace("$", path, 1), problems[0][1])
    return scene


def scene_problems(scene: SceneGraph) -> list[tuple[str, str]]:
    """List (path, message) for every violated scene invariant."""
    out: list[tuple[str, str]] = []
    objs = scene.objects
    for oid, o in objs.items():
        if o.location not in scene.rooms:
            out.append((f"$.objects[id={oid}].room", f"unknown room {o.location}"))
        for rel, ref, cap in (("in", o.container, "CONTAINER"), ("on", o.surface, "SURFACE")):
            if ref is None:
                continue
            if ref not in objs:
                out.append((f"$.objects[id={oid}].{rel}", f"unknown object {ref}"))
            elif not objs[ref].has(cap):
                out.append((f"$.objects[id={oid}].{rel}", f"object {ref} lacks {cap}"))
        if o.attributes.get("grabbed", False) != (oid in scene.agent.hands):
            out.append((f"$.objects[id={oid}].attributes.grabbed", "grabbed disagrees with agent hands"))
    # containment must be acyclic
    for oid in objs:
        seen = {oid}
        cur = objs[oid]
        while cur.container is not None and cur.container in objs:
            if cur.container in seen:
                out.append((f"$.objects[id={oid}].in", "containment cycle"))
                break
            seen.add(cur.container)
            cur = objs[cur.container]
    ag = scene.agent
    if ag.room not in scene.rooms:
        out.append(("$.agent.room", f"unknown room {ag.room}"))
    if len(ag.hands) > scene.max_hands:
        out.append(("$.agent.hands", f"more than {scene.max_hands} held objects"))
    for oid in ag.hands:
        if oid not in objs:
            out.append(("$.agent.hands", f"unknown object {oid}"))
        elif objs[oid].location != ag.room:
            out.append(("$.agent.hands", f"held object {oid} is not in the agent's room"))
    for oid in ag.proximity:
        if oid not in objs:
            out.append(("$.agent.proximity", f"unknown object {oid}"))
    if ag.facing is not None and ag.facing not in ag.proximity:
        out.append(("$.agent.facing", "facing target is not in proximity"))
    return out


def load_domain(source: str | Path | Mapping[str, Any]) -> tuple[dict[str, SkillTemplate], SceneGraph]:
    """Parse and validate a domain document.

    ``source`` may be a path, a JSON string, or an already-decoded mapping.
    Returns the skills keyed by verb and the initial scene.
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        text = str(source)
        if isinstance(source, Path) or not text.lstrip().startswith("{"):
            path = Path(text)
            try:
                text = path.read_text()
            except OSError as exc:
                raise DomainError(str(path), f"cannot read domain file ({exc.strerror})") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError("$", f"invalid JSON: {exc}") from exc

    try:
        jsonschema.validate(doc, DOMAIN_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DomainError(_json_path(exc.absolute_path), exc.message) from None

    skills: dict[str, SkillTemplate] = {}
    for i, s in enumerate(doc["skills"]):
        skill = _skill_from_doc(s, f"$.skills[{i}]")
        if skill.verb in skills:
            raise DomainError(f"$.skills[{i}].verb", f"duplicate verb {skill.verb}")
        skills[skill.verb] = skill
    scene = _scene_from_doc(doc, "$")
    return skills, scene


def default_domain_path(name: str = "household") -> Path:
    return Path(str(resources.files("cape") / "data" / f"{name}.json"))


def load_default_domain(name: str = "household") -> tuple[dict[str, SkillTemplate], SceneGraph]:
    return load_domain(default_domain_path(name))


# --------------------------------------------------------------------------
# Grounded actions


def ground(skill: SkillTemplate, scene: SceneGraph, node_id: int | None = None) -> GroundedAction:
    if skill.arity == 0:
        return GroundedAction(skill.verb, None, "", skill.render())
    if node_id is None:
        raise ValueError(f"skill {skill.verb} needs an object")
    name = scene.name_of(node_id)
    return GroundedAction(skill.verb, node_id, name, skill.render(name))


def parse_action(text: str, skills: Skills) -> tuple[str, str]:
    """Recover (verb, object name) from an admissible action string."""
    text = " ".join(text.strip().lower().split())
    for verb in sorted(skills):
        m = skills[verb].pattern.match(text)
        if m:
            return verb, m.groupdict().get("object") or ""
    raise ValueError(f"not an admissible action: {text!r}")


def action_from_text(text: str, scene: SceneGraph, skills: Skills) -> GroundedAction:
    verb, name = parse_action(text, skills)
    skill = skills[verb]
    if skill.arity == 0:
        return ground(skill, scene)
    node = scene.resolve(name, include_rooms=skill.target == "location")
    if node is None:
        raise ValueError(f"no object named {name!r} in scene")
    return ground(skill, scene, node)


def enumerate_repertoire(scene: SceneGraph, skills: Skills | Iterable[SkillTemplate]) -> list[GroundedAction]:
    """All capability-compatible grounded actions, ordered by verb then node id.

    Nodes sharing a class name render identically; only the lowest id is kept.
    """
    skill_list = list(skills.values()) if isinstance(skills, Mapping) else list(skills)
    out: list[GroundedAction] = []
    for skill in sorted(skill_list, key=lambda s: s.verb):
        if skill.arity == 0:
            out.append(ground(skill, scene))
            continue
        caps = skill.required_capabilities()
        targets = [o.id for o in scene.objects.values() if all(o.has(c) for c in caps)]
        if skill.target == "location" and not caps:
            targets += list(scene.rooms)
        seen: set[str] = set()
        for nid in sorted(targets):
            act = ground(skill, scene, nid)
            if act.rendered not in seen:
                seen.add(act.rendered)
                out.append(act)
    return out


# --------------------------------------------------------------------------
# Preconditions


def _node(scene: SceneGraph, node_id: int | None) -> str:
    if node_id is None:
        return ""
    return f"<{scene.name_of(node_id)}> ({node_id})"


def _executing(scene: SceneGraph, action: GroundedAction) -> str:
    verb = action.verb.upper().replace("_", "")
    if action.object_id is None:
        return f'when executing "[{verb}] [1]"'
    return f'when executing "[{verb}] <{action.object_name}> ({action.object_id}) [1]"'


def state_word(attr: str, value: bool) -> str:
    return _STATE_WORDS.get((attr, value), attr if value else f"not {attr}")


def enclosing_closed(scene: SceneGraph, oid: int) -> int | None:
    """Id of the innermost closed openable container around ``oid``, if any."""
    cur = scene.objects[oid]
    while cur.container is not None:
        box = scene.objects[cur.container]
        if box.has("OPENABLE") and not box.attributes.get("open", False):
            return box.id
        cur = box
    return None


def _is_close(scene: SceneGraph, target: int | None) -> bool:
    """Close to the target itself or to anything it sits in or on."""
    ag = scene.agent
    seen: set[int] = set()
    while target is not None and target not in seen:
        if target in ag.proximity or target in ag.hands:
            return True
        seen.add(target)
        obj = scene.objects.get(target)
        if obj is None:
            return False
        target = obj.container if obj.container is not None else obj.surface
    return False


def _holds(scene: SceneGraph, pred: Predicate, target: int | None) -> bool:
    ag = scene.agent
    obj = scene.objects.get(target) if target is not None else None
    kind = pred.kind
    if kind == "free_hand":
        return len(ag.hands) < scene.max_hands
    if kind == "posture_is":
        return ag.posture == pred.value
    if kind == "holding":
        return bool(ag.hands) if pred.target == "agent" else target in ag.hands
    if kind == "has_capability":
        return obj is not None and obj.has(pred.capability)
    if kind == "same_room":
        if obj is None:
            return target == ag.room
        return obj.location == ag.room
    if kind == "close_to":
        return _is_close(scene, target)
    if kind == "facing":
        return ag.facing == target
    if kind == "attribute_is":
        return obj is not None and obj.attributes.get(pred.attr, False) == pred.value
    if kind == "not_enclosed":
        return obj is None or enclosing_closed(scene, obj.id) is None
    raise ValueError(f"unknown predicate kind {kind}")


def render_error_message(scene: SceneGraph, action: GroundedAction, pred: Predicate, type_id: int) -> str:
    """Render the VirtualHome-style message for a violated predicate."""
    suffix = _executing(scene, action)
    target = _node(scene, action.object_id)
    if type_id == 1:
        return f"{target} is not {state_word(pred.attr, pred.value)} {suffix}"
    if type_id == 2:
        return f"{CHARACTER} does not face {target} {suffix}"
    if type_id == 4:
        ag_room = scene.agent.room
        obj = scene.objects.get(action.object_id) if action.object_id is not None else None
        node_room = obj.location if obj is not None else action.object_id
        return (
            f"char room <{scene.rooms[ag_room]}> ({ag_room}) is not node room "
            f"<{scene.name_of(node_room)}> ({node_room}) {suffix}"
        )
    if type_id == 5:
        return f"{CHARACTER} is not holding {target} {suffix}"
    if type_id == 6:
        return f"{target} is inside other closed thing {suffix}"
    if type_id == 7:
        prop = pred.capability or action.verb.upper()
        subject = target or CHARACTER
        return f"{subject} does not have {prop} {suffix}"
    if type_id == 8:
        return f"{CHARACTER} does not have a free hand {suffix}"
    if type_id == 9:
        return f"{CHARACTER} is not close to {target} {suffix}"
    return f"precondition not satisfied {suffix}"


def _make_error(scene: SceneGraph, action: GroundedAction, pred: Predicate) -> PreconditionError:
    type_id = ERROR_TYPE.get(pred.kind, 10)
    return PreconditionError(type_id, action, pred, render_error_message(scene, action, pred, type_id))


def check_preconditions(scene: SceneGraph, action: GroundedAction, skills: Skills) -> PreconditionError | None:
    """Return the first violated precondition (declaration order), or None."""
    skill = skills.get(action.verb)
    if skill is None:
        pred = Predicate("has_capability", "object", capability=action.verb.upper())
        return PreconditionError(7, action, pred, render_error_message(scene, action, pred, 7))
    target = action.object_id
    if skill.arity == 1:
        valid = target in scene.objects or (skill.target == "location" and target in scene.rooms)
        if not valid:
            pred = Predicate("has_capability", "object", capability="OBJECT")
            return PreconditionError(7, action, pred, render_error_message(scene, action, pred, 7))
        if target in scene.rooms:
            # rooms only satisfy agent-level predicates
            for pred in skill.preconditions:
                if pred.target == "agent" and not _holds(scene, pred, target):
                    return _make_error(scene, action, pred)
            return None
    for pred in skill.preconditions:
        if not _holds(scene, pred, target):
            return _make_error(scene, action, pred)
    return None


# --------------------------------------------------------------------------
# Effects


def _release(scene: SceneGraph, dest: int, relation: str) -> None:
    ag = scene.agent
    held = scene.objects[ag.hands.pop()]
    held.attributes["grabbed"] = False
    held.location = scene.objects[dest].location
    held.container = dest if relation == "in" else None
    held.surface = dest if relation == "on" else None
    ag.proximity.add(held.id)


def _apply_effect(scene: SceneGraph, effect: Effect, target: int | None) -> None:
    ag = scene.agent
    kind = effect.kind
    if kind == "set_attr":
        scene.objects[target].attributes[effect.attr] = bool(effect.value)
    elif kind == "set_posture":
        ag.posture = effect.value
    elif kind == "move":
        if target in scene.rooms:
            ag.room = target
            ag.proximity = set()
        else:
            ag.room = scene.objects[target].location
            ag.proximity = {target}
        ag.facing = None
        for oid in ag.hands:
            scene.objects[oid].location = ag.room
    elif kind in ("approach", "face"):
        ag.proximity.add(target)
        ag.facing = target
    elif kind == "grab":
        obj = scene.objects[target]
        ag.hands.append(target)
        obj.attributes["grabbed"] = True
        obj.container = None
        obj.surface = None
        obj.location = ag.room
    elif kind == "release_on":
        _release(scene, target, "on")
    elif kind == "release_in":
        _release(scene, target, "in")
    else:
        raise ValueError(f"unknown effect kind {kind}")


def apply_action(scene: SceneGraph, action: GroundedAction, skills: Skills) -> SceneGraph:
    """Return a new scene with the action's effects applied.

    The input scene is never modified. Raises PreconditionViolation when
    the action is not afforded.
    """
    err = check_preconditions(scene, action, skills)
    if err is not None:
        raise PreconditionViolation(err)
    new = scene.copy()
    for effect in skills[action.verb].effects:
        _apply_effect(new, effect, action.object_id)
    new.step_counter += 1
    return new


def execute(scene: SceneGraph, actions: Iterable[GroundedAction], skills: Skills) -> SceneGraph:
    """Apply actions in order; the first failure raises PreconditionViolation."""
    for act in actions:
        scene = apply_action(scene, act, skills)
    return scene
