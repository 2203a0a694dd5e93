"""Smoke test for the cocobo Python module.

Build and install it first:

    pip install -e crates/py --no-build-isolation
    python python/smoke_test.py
"""

import json
from pathlib import Path

import cocobo

FIX = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def check_conversions():
    src = (FIX / "programs" / "task2.coco").read_text()
    p = cocobo.Program(src)
    assert p.code() == src
    assert p.roundtrips()
    assert cocobo.Program.from_mermaid(p.mermaid()) == p
    doc = p.render_json()
    assert doc["schema"] == "renderGraph/v1"
    assert cocobo.Program.from_render_json(doc) == p
    assert cocobo.Program.from_render_json(json.dumps(doc)) == p
    try:
        cocobo.Program("if human:\n  say: hi\n")
    except cocobo.CocoboError as e:
        assert "UnbalancedBlock" in str(e), e
    else:
        raise AssertionError("unbalanced block accepted")
    bad = cocobo.Program("goto: Moon\n").validate(["Office"])
    assert any(d["severity"] == "error" for d in bad), bad


def check_simulator():
    world = cocobo.World.load(str(FIX / "worlds" / "office.json"))
    assert "Pantry" in world.places
    p = cocobo.Program((FIX / "programs" / "task1.coco").read_text())
    trace = cocobo.run(p, world, cocobo.Events.load(str(FIX / "events" / "task1.json")))
    arrivals = [e["place"] for e in trace if e["type"] == "moveArrived"]
    assert len(arrivals) == 4 and len(set(arrivals)) == 4, arrivals
    assert trace[-1]["type"] == "finished"
    server = cocobo.BridgeServer(world)
    assert server.url.startswith("ws://127.0.0.1:")
    server.shutdown()


def check_sessions():
    final = cocobo.author(
        str(FIX / "scripts" / "scenario1.script.json"),
        str(FIX / "transcripts" / "scenario1.transcript.json"),
    )
    assert final == (FIX / "golden" / "scenario1.final.coco").read_text()

    world = cocobo.World.load(str(FIX / "worlds" / "office.json"))
    svc = cocobo.Service(str(FIX / "scripts" / "scenario1.script.json"), world)
    sid = svc.create_session()
    r = svc.post_message(sid, "guide visitors")
    assert r["outcome"]["type"] == "requirementsProposed"
    r = svc.post_message(sid, "yes", confirm=True)
    assert r["outcome"]["type"] == "programGenerated"
    flow = svc.flowchart(sid)
    assert flow["diff"]["addedNodes"] == []
    events = cocobo.Events.load(str(FIX / "events" / "scenario1.json"))
    trace = svc.deploy(sid, world, events)
    assert [e["place"] for e in trace if e["type"] == "moveArrived"] == ["Meeting Room", "Reception Area"]
    try:
        svc.magic_debug_end(sid)
    except cocobo.CocoboError as e:
        assert "not in debug mode" in str(e)
    else:
        raise AssertionError("debug end without start accepted")


if __name__ == "__main__":
    check_conversions()
    check_simulator()
    check_sessions()
    print("python smoke test passed")
