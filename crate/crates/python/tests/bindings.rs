//! Loads the module into an embedded interpreter and exercises it from Python.

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(mmpo::mmpo)(py);
        let globals = PyDict::new(py);
        globals.set_item("mmpo", module).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn grammar_and_advantages() {
    run(r#"
text = mmpo.render("semantic", "fake")
p = mmpo.parse(text)
assert p["mode"] == "semantic" and p["answer"] == "fake" and p["well_formed"], p
assert p["token_count"] == 121
assert [s[0] for s in p["segments"]] == ["image analysis", "text analysis", "cross-modal analysis", "summary"]
assert mmpo.score(text, "fake")["total"] == 2.0
a = mmpo.sample_advantage([0.0, 1.0, 1.0, 2.0])
assert abs(a[0] + 2 ** 0.5) < 1e-12 and abs(a[3] - 2 ** 0.5) < 1e-12
assert mmpo.mode_advantage([0.0, 1.0, 1.0, 1.0], ["quick", "quick", "semantic", "semantic"]) == [-1.0, -1.0, 1.0, 1.0]
s, m, x = mmpo.mixed_advantage([0.0, 2.0], ["quick", None], "vanilla_grpo")
assert m == [0.0, 0.0] and x == s
try:
    mmpo.sample_advantage([1.0])
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#);
}

#[test]
fn policy_and_metrics() {
    run(r#"
pol = mmpo.Policy()
assert pol.d == 9 and len(pol.params) == 3 * 9 + 6 * 9
x = [0.1] * 9
probs = pol.action_probs(x)
assert len(probs) == 6 and abs(sum(probs.values()) - 1.0) < 1e-12
texts = pol.sample(x, n=20, seed=3)
assert texts == pol.sample(x, n=20, seed=3)
report = mmpo.compute_metrics(texts, ["fake"] * 20)
assert report["total"] == 20
back = mmpo.Policy.from_json(pol.to_json())
assert back.params == pol.params
samples = mmpo.generate(5, seed=1, env={"mixture": [1.0, 0.0, 0.0]})
assert all(s["difficulty"] == "easy" for s in samples)
"#);
}
