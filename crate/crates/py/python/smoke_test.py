"""Smoke test for the `dfp` extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke_test.py` (or under pytest).
"""

import os
import tempfile

import dfp

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def test_control_law():
    assert dfp.desired_gap(20.0) == 32.0
    assert dfp.desired_gap(10.0, {"time_headway": 2.0}) == 22.0
    assert dfp.acc_command(32.0, 20.0, 20.0) == 0.0
    assert dfp.acc_command(0.5, 30.0, 0.0) == -3.5


def test_simulate_lead_brake():
    points = dfp.simulate()
    assert len(points) == 2401
    assert min(p["gap"] for p in points) > 0
    last = points[-1]
    assert abs(last["gap"] - dfp.desired_gap(last["ego"]["speed"])) < 0.5


def test_collision_raises():
    sc = dfp.lead_brake_step()
    sc["lead_profile"] = [{"t_start": 1.0, "speed": 0.0}]
    try:
        dfp.simulate(sc)
    except dfp.CollisionError as e:
        assert "collision" in str(e)
    else:
        raise AssertionError("expected CollisionError")


def test_env_store_query():
    store = dfp.EnvStore.load(os.path.join(ROOT, "configs", "env_corpus.jsonl"))
    assert len(store) == 50
    hits = store.query(["tunnel", "on", "highway", "in", "rain"])
    assert [r["record_id"] for r in hits] == [5, 17, 33]
    try:
        store.query(["on", "in"])
    except dfp.EnvError:
        pass
    else:
        raise AssertionError("expected EnvError")


def test_env_store_crud_persists():
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "env.jsonl")
        store = dfp.EnvStore(path)
        rid = store.insert(
            {
                "class": "Weather",
                "tags": ["Rain"],
                "timestamp_ns": 5,
                "position": None,
                "attributes": {"intensity": 0.7},
                "source": "V2X",
            }
        )
        store.update(rid, {"tags": ["rain", "night"]})
        again = dfp.EnvStore.load(path)
        assert again.read(rid)["tags"] == ["night", "rain"]


def test_coordinator():
    fsms = [
        {
            "fsm_id": "health",
            "states": ["Ok", "Fault"],
            "initial": "Ok",
            "transitions": [
                {
                    "from": "Ok",
                    "event": "fault",
                    "to": "Fault",
                    "actions": [{"EmitEvent": {"target": "ads", "event": "health_lost"}}],
                }
            ],
        },
        {
            "fsm_id": "ads",
            "states": ["Active", "Fallback"],
            "initial": "Active",
            "transitions": [
                {
                    "from": "Active",
                    "event": "health_lost",
                    "to": "Fallback",
                    "actions": [{"StopGroup": "control"}],
                }
            ],
        },
    ]
    c = dfp.Coordinator(fsms, ["control"])
    assert c.snapshot() == {"ads": "Active", "health": "Ok"}
    assert c.dispatch("health", "fault") == {"ads": "Fallback", "health": "Fault"}
    assert c.group_actions() == [{"StopGroup": "control"}]
    try:
        c.dispatch("radio", "on")
    except dfp.ModeError:
        pass
    else:
        raise AssertionError("expected ModeError")


def test_run_config_is_deterministic():
    cfg = os.path.join(ROOT, "configs", "demo.json")
    a = dfp.run_config(cfg, seed=42, duration=5.0)
    b = dfp.run_config(cfg, seed=42, duration=5.0)
    assert a == b
    assert a["rounds"] == 101
    assert a["fault"] is None
    try:
        dfp.run_config(os.path.join(ROOT, "missing.json"))
    except dfp.ConfigError as e:
        assert "config not found" in str(e)
    else:
        raise AssertionError("expected ConfigError")


def test_bench():
    report = dfp.bench([0, 1024], samples=10)
    assert len(report["rows"]) == 4


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
