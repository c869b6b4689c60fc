"""Smoke test for the icecath extension module.

Build and run:
    cargo build --release -p icecath-py --features extension-module
    cp target/release/libicecath_py.so python/icecath.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import icecath  # noqa: E402


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}".rstrip())
    if not ok:
        sys.exit(1)


q = icecath.Config(30.0, -20.0, 45.0, 12.0)
back = icecath.inverse(icecath.forward(q))
err = max(abs(a - b) for a, b in zip(q.to_tuple(), back.to_tuple()))
check("forward/inverse", err < 1e-6, f"{err:.2e}")

r = icecath.rodrigues([0.0, 0.0, 1.0], 90.0)
check("rodrigues", abs(r[1][0] - 1.0) < 1e-12)

smooth = icecath.savitzky_golay([float(k * k) for k in range(30)], 11, 2)
check("savitzky_golay", abs(smooth[15] - 225.0) < 1e-9)

plant = icecath.Plant()
none = icecath.run_spin(icecath.Plant(), (60.0, 0.0), 360)
five = icecath.run_spin(icecath.Plant(), (60.0, 0.0), 360, icecath.ElasticityMap.calibrate_five_point(plant))
check(
    "five-point compensation",
    five["position_rmse"] < none["position_rmse"],
    f"{none['position_rmse']:.3f} -> {five['position_rmse']:.3f} mm",
)

ident = icecath.ElasticityMap.identity()
check("identity map", ident.apply(12.5, -7.25) == (12.5, -7.25))
check("map text round trip", icecath.ElasticityMap.from_text(ident.to_text()).to_text() == ident.to_text())

planner = icecath.Planner()
trace = [icecath.Config(0.5 * k, 0.25 * k, 0.0, 0.0) for k in range(50)]
planner.observe_all(trace)
view = planner.save_view(trace[-1], "end")
path, cost = planner.query(trace[0], view)
check("planner", path[-1] == trace[-1], f"{len(path)} waypoints, cost {cost:.3f}")

ctl = icecath.Controller(session_id="smoke")
ctl.tick()
for _ in range(20):
    ctl.handle(json.dumps({"v": 1, "kind": "jog", "delta": {"phi1": 0.5, "phi3": 0.5}}))
    ctl.tick()
ack = json.loads(ctl.handle(json.dumps({"v": 1, "kind": "save_view", "label": "a"})))
for _ in range(20):
    ctl.handle(json.dumps({"v": 1, "kind": "jog", "delta": {"phi2": 0.5}}))
    ctl.tick()
json.loads(ctl.handle(json.dumps({"v": 1, "kind": "recover", "view_id": ack["view_id"]})))
ctl.run_recovery()
snap = json.loads(ctl.tick())
check("controller recovery", abs(snap["config"]["phi1"] - 10.0) < 1e-9, f"mode {snap['mode']}")
err = json.loads(ctl.handle("{"))
check("malformed message", err["kind"] == "error")

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "smoke.jsonl")
    with open(path, "w") as f:
        f.write(ctl.session_jsonl())
    with open(path) as f:
        check("replay", icecath.replay_session(f.read()))

bench = icecath.recover_bench(noise_mm=1.0, noise_deg=0.5, seed=7)
check(
    "recover bench",
    bench["all_exact"] and bench["recoveries"] == 21,
    f"pooled spread {bench['pooled_mean_spread']:.3f} mm",
)

try:
    icecath.Plant("seed = 'x'")
except icecath.IcecathError as e:
    check("bad plant config", True, type(e).__name__)
else:
    check("bad plant config", False, "accepted")

print("smoke test passed")
