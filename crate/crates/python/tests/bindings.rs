use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::attach(|py| {
        let m = PyModule::new(py, "icecath").unwrap();
        icecath_py::icecath_py(&m).unwrap();
        let scope = PyDict::new(py);
        scope.set_item("icecath", m).unwrap();
        f(py, &scope);
    });
}

fn run(py: Python<'_>, scope: &Bound<'_, PyDict>, code: &str) {
    let code = std::ffi::CString::new(code).unwrap();
    py.run(&code, Some(scope), None).unwrap_or_else(|e| panic!("{e}"));
}

#[test]
fn kinematics_round_trip_from_python() {
    with_module(|py, scope| {
        run(
            py,
            scope,
            r#"
q = icecath.Config(30.0, -20.0, 45.0, 12.0)
pose = icecath.forward(q)
back = icecath.inverse(pose)
assert max(abs(a - b) for a, b in zip(q.to_tuple(), back.to_tuple())) < 1e-6, back
r = pose.rotation
for i in range(3):
    for j in range(3):
        dot = sum(r[k][i] * r[k][j] for k in range(3))
        assert abs(dot - (1.0 if i == j else 0.0)) < 1e-9
"#,
        );
    });
}

#[test]
fn errors_raise_the_module_exception() {
    with_module(|py, scope| {
        run(
            py,
            scope,
            r#"
try:
    icecath.savitzky_golay([1.0, 2.0], 4, 2)
except icecath.IcecathError:
    pass
else:
    raise AssertionError("even window accepted")
"#,
        );
    });
}

#[test]
fn controller_speaks_json() {
    with_module(|py, scope| {
        run(
            py,
            scope,
            r#"
import json
c = icecath.Controller()
c.tick()
reply = json.loads(c.handle('{"v":1,"kind":"jog","delta":{"phi1":0.5}}'))
assert reply["kind"] == "ack", reply
snap = json.loads(c.tick())
assert snap["kind"] == "snapshot" and snap["v"] == 1
assert abs(snap["config"]["phi1"] - 0.5) < 1e-12, snap["config"]
bad = json.loads(c.handle("not json"))
assert bad["kind"] == "error"
assert icecath.replay_session(c.session_jsonl())
"#,
        );
    });
}

#[test]
fn planner_and_spin() {
    with_module(|py, scope| {
        run(
            py,
            scope,
            r#"
p = icecath.Planner()
trace = [icecath.Config(0.5 * k, 0.0, 0.0, 0.0) for k in range(40)]
p.observe_all(trace)
vid = p.save_view(trace[-1], "end")
path, cost = p.query(trace[0], vid)
assert path[-1] == trace[-1] and abs(cost - 19.5) < 1e-9, (len(path), cost)
again = icecath.Planner.from_text(p.to_text())
assert again.vertex_count == p.vertex_count

plant = icecath.Plant()
m = icecath.run_spin(plant, (40.0, 0.0), 360)
assert 1.0 < m["position_rmse"] < 3.0, m["position_rmse"]
steps = icecath.spin_trajectory((40.0, 0.0), 120)
assert len(steps) == 121 and steps[0].phi1 == 40.0, (len(steps), steps[0])
try:
    icecath.spin_trajectory((40.0, 0.0), 36)
except icecath.IcecathError:
    pass
else:
    raise AssertionError("rate limit not enforced")
"#,
        );
    });
}
