//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! come out in order and unfiltered.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request};
use divprompt_cli::{run_scenario, scenario_gateway, Scenario};
use divprompt_core::gateway::{EmbedInput, Embedder, ImageGenerator, ImagePayload, LabelSpace, MockEmbedder, MockImageGenerator};
use divprompt_core::metrics::{alignment, kl_divergence, span};
use divprompt_core::rng::SplitMix64;
use divprompt_core::sampler::{label_counts, sample_assignments, PromptPlan};
use divprompt_core::sensitivity::{sensitivity_sweep, SweepConfig};
use divprompt_core::session::fixed_clock;
use divprompt_core::verify::classify;
use divprompt_core::{AttributeSpec, Distribution, Engine, EngineConfig, Gateway, GatewayError, Label, SamplingMode, Session, SessionManager, Store};
use divprompt_server::{router, AppState, ServeArgs};
use divprompt_core::gateway::EmbeddingVector;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn engine_with(gateway: Gateway, mode: SamplingMode) -> Engine {
    Engine::new(gateway, EngineConfig { mode, clock: fixed_clock("2024-06-01T00:00:00Z"), ..EngineConfig::default() })
}

fn random_weights(rng: &mut SplitMix64, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| if rng.below(5) == 0 { 0.0 } else { rng.next_f64() }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.below(k)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn attribute(name: &str, weights: Vec<f64>) -> AttributeSpec {
    let labels = (0..weights.len()).map(|i| Label::new(format!("{name}{i}")).unwrap()).collect();
    AttributeSpec::new(name, labels, Distribution::new(weights).unwrap()).unwrap()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let engine = engine_with(Gateway::perfect_mock(), SamplingMode::Quota);
    let mut s = engine.create_session("e2e", "a picture of a car", 100, 5).map_err(|e| e.to_string())?;
    let labels = ["red", "blue", "green", "yellow", "purple"].map(|l| Label::new(l).unwrap()).to_vec();
    engine.add_attribute(&mut s, "color", Some(labels)).map_err(|e| e.to_string())?;
    engine.regenerate(&mut s, None).map_err(|e| e.to_string())?;
    let counts = s.head_snapshot().measured["color"].counts.clone();
    check(counts == vec![20; 5], || format!("counts {counts:?}"))?;
    let measured = Distribution::from_counts(&counts).unwrap();
    let a = alignment(&measured, s.attribute("color").unwrap().target()).map_err(|e| e.to_string())?;
    check((a - 1.0).abs() <= 1e-6, || format!("alignment {a}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("counts {counts:?}, alignment {a}, {:.3}s", start.elapsed().as_secs_f64()))
}

fn quota_accuracy() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xacce);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let k = 1 + rng.below(10);
        let n = 1 + rng.below(200);
        let weights = random_weights(&mut rng, k);
        let spec = attribute("a", weights.clone());
        let plan = PromptPlan::new("a car", n, vec![spec], rng.next_u64(), SamplingMode::Quota).unwrap();
        let counts = label_counts(&sample_assignments(&plan), "a", k);
        check(counts.iter().sum::<usize>() == n, || format!("case {case}: counts {counts:?} do not sum to {n}"))?;
        for (c, w) in counts.iter().zip(&weights) {
            let dev = (*c as f64 - n as f64 * w).abs();
            worst = worst.max(dev);
            check(dev < 1.0, || format!("case {case}: count {c} vs n*w {}", n as f64 * w))?;
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("1000 cases, worst |count - n*w| = {worst:.4}, {:.3}s", start.elapsed().as_secs_f64()))
}

fn iid_soundness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = SplitMix64::new(1000 + seed);
        let k = 1 + rng.below(10);
        let weights = random_weights(&mut rng, k);
        let plan = PromptPlan::new("a car", 10_000, vec![attribute("a", weights.clone())], seed, SamplingMode::Iid).unwrap();
        let counts = label_counts(&sample_assignments(&plan), "a", k);
        for (c, w) in counts.iter().zip(&weights) {
            let dev = (*c as f64 / 10_000.0 - w).abs();
            worst = worst.max(dev);
            check(dev <= 0.02, || format!("seed {seed}: proportion off by {dev}"))?;
        }
    }
    Ok(format!("20 seeds, worst deviation {worst:.4}"))
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn classifier_oracle() -> Outcome {
    let mut rng = SplitMix64::new(0xc1a55);
    let mut ties = 0;
    let mut checked = 0;
    for case in 0..1000 {
        let d = 2 + rng.below(5);
        let k = 1 + rng.below(10);
        let m = 1 + rng.below(200);
        let vector = |rng: &mut SplitMix64| -> Vec<f64> { (0..d).map(|_| rng.below(7) as f64 - 3.0).collect() };
        let mut labels: Vec<Vec<f64>> = (0..k).map(|_| vector(&mut rng)).collect();
        if k > 1 {
            // A later copy of an earlier label, sometimes scaled by a power of two.
            let src = rng.below(k - 1);
            let dst = src + 1 + rng.below(k - src - 1);
            let scale = [1.0, 2.0, 4.0][rng.below(3)];
            labels[dst] = labels[src].iter().map(|x| x * scale).collect();
        }
        let label_vecs: Vec<EmbeddingVector> = labels.iter().map(|l| EmbeddingVector::new(l.clone()).unwrap()).collect();
        for _ in 0..m {
            let image = vector(&mut rng);
            let scores: Vec<f64> = labels.iter().map(|l| oracle_cosine(&image, l)).collect();
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let expected = scores.iter().position(|&s| s == best).unwrap();
            if scores.iter().filter(|&&s| s == best).count() > 1 {
                ties += 1;
            }
            let (got, _) = classify(&EmbeddingVector::new(image.clone()).unwrap(), &label_vecs).map_err(|e| e.to_string())?;
            check(got == expected, || format!("case {case}: image {image:?} got {got}, expected {expected} ({scores:?})"))?;
            checked += 1;
        }
    }
    check(ties > 0, || "no ties were exercised".into())?;
    Ok(format!("1000 instances, {checked} images agree, {ties} tied images resolved to lowest index"))
}

fn embeddings(points: &[Vec<f64>]) -> Vec<EmbeddingVector> {
    points.iter().map(|p| EmbeddingVector::new(p.clone()).unwrap()).collect()
}

fn span_of(points: &[Vec<f64>]) -> f64 {
    span(&embeddings(points)).unwrap()
}

fn metric_identities() -> Outcome {
    let same = vec![vec![0.3, -1.2, 4.0]; 17];
    let s0 = span_of(&same);
    check(s0 == 0.0, || format!("span of identical vectors {s0}"))?;

    let circle: Vec<Vec<f64>> = (0..360).map(|i| {
        let t = i as f64 * std::f64::consts::TAU / 360.0;
        vec![t.cos(), t.sin()]
    }).collect();
    let sc = span_of(&circle);
    check((sc - 1.0).abs() <= 1e-6, || format!("unit circle span {sc}"))?;

    let p = Distribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let kl = kl_divergence(&p, &p, 1e-6).map_err(|e| e.to_string())?;
    check(kl.abs() <= 1e-9, || format!("KL(p,p) {kl}"))?;

    let a = alignment(&Distribution::point_mass(5, 0).unwrap(), &Distribution::uniform(5).unwrap()).map_err(|e| e.to_string())?;
    let expected = 1.0 / (1.0 + 5f64.ln());
    check((a - expected).abs() <= 1e-3, || format!("point-mass alignment {a}, expected {expected}"))?;

    let mut rng = SplitMix64::new(0x5a4);
    for case in 0..200 {
        let d = 2 + rng.below(6);
        let n = 2 + rng.below(60);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.next_f64() * 4.0 - 2.0).collect()).collect();
        let base = span_of(&pts);
        let shift: Vec<f64> = (0..d).map(|_| rng.next_f64() * 20.0 - 10.0).collect();
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let i = rng.below(d);
        let j = (i + 1 + rng.below(d - 1)) % d;
        let theta = rng.next_f64() * std::f64::consts::TAU;
        let rotated: Vec<Vec<f64>> = pts.iter().map(|p| {
            let mut q = p.clone();
            q[i] = p[i] * theta.cos() - p[j] * theta.sin();
            q[j] = p[i] * theta.sin() + p[j] * theta.cos();
            q
        }).collect();
        let c = 0.1 + rng.next_f64() * 10.0;
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * c).collect()).collect();
        let tol = 1e-9 * (1.0 + base);
        check((span_of(&moved) - base).abs() <= tol * 10.0, || format!("case {case}: translation changed span"))?;
        check((span_of(&rotated) - base).abs() <= tol * 10.0, || format!("case {case}: rotation changed span"))?;
        check((span_of(&scaled) - c * base).abs() <= tol * 10.0 * c, || format!("case {case}: scaling by {c} gave {} vs {}", span_of(&scaled), c * base))?;
    }
    Ok(format!("identical 0, circle {sc}, KL(p,p) {kl:e}, point-mass {a:.6}; 200 invariance fixtures"))
}

fn sensitivity_trend() -> Outcome {
    let start = Instant::now();
    let points = sensitivity_sweep(&SweepConfig::default()).map_err(|e| e.to_string())?;
    let at = |q: f64| points.iter().find(|p| (p.q - q).abs() < 1e-12).unwrap();
    let drop = at(1.0).alignment_predicted - at(0.4).alignment_predicted;
    check(drop > 0.05, || format!("predicted alignment drop {drop}"))?;
    let actual: Vec<f64> = points.iter().map(|p| p.alignment_actual).collect();
    let range = actual.iter().cloned().fold(f64::MIN, f64::max) - actual.iter().cloned().fold(f64::MAX, f64::min);
    check(range <= 0.05, || format!("actual alignment varies by {range}"))?;
    for p in &points {
        check((p.observed_accuracy - p.q).abs() <= 0.06, || format!("q {} observed {}", p.q, p.observed_accuracy))?;
    }
    within(start.elapsed(), 60.0)?;
    let summary: Vec<String> = points.iter().map(|p| format!("q={} acc={:.3} pred={:.3} act={:.3}", p.q, p.observed_accuracy, p.alignment_predicted, p.alignment_actual)).collect();
    Ok(format!("{}; {:.2}s", summary.join(", "), start.elapsed().as_secs_f64()))
}

struct FlakyImages {
    inner: MockImageGenerator,
    calls: AtomicUsize,
    budget: usize,
}

impl ImageGenerator for FlakyImages {
    fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImagePayload, GatewayError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(GatewayError::Timeout(10));
        }
        self.inner.generate_image(prompt, seed)
    }
}

struct FlakyEmbedder {
    inner: MockEmbedder,
    calls: AtomicUsize,
    budget: usize,
}

impl Embedder for FlakyEmbedder {
    fn embed(&self, input: EmbedInput<'_>, space: &LabelSpace) -> Result<EmbeddingVector, GatewayError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(GatewayError::Timeout(10));
        }
        self.inner.embed(input, space)
    }
}

fn snapshot_bytes(s: &Session) -> Vec<Vec<u8>> {
    s.iterations()
        .iter()
        .map(|it| {
            let mut bytes = serde_json::to_vec(&**it).unwrap();
            for img in &it.images {
                bytes.extend_from_slice(&img.content);
            }
            bytes
        })
        .collect()
}

fn determinism_and_atomicity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let manager = SessionManager::new(engine_with(Gateway::perfect_mock(), SamplingMode::Quota), Some(store.clone())).map_err(|e| e.to_string())?;
    let created = manager.create("a portrait of a doctor", 12, 9).map_err(|e| e.to_string())?;
    let id = created.id().to_string();
    let steps: Vec<Box<dyn Fn(&Engine, &mut Session) -> divprompt_core::session::Result<()>>> = vec![
        Box::new(|e, s| e.add_attribute(s, "gender", Some(vec![Label::new("woman").unwrap(), Label::new("man").unwrap()]))),
        Box::new(|e, s| e.regenerate(s, None).map(|_| ())),
        Box::new(|e, s| e.set_distribution(s, "gender", &[3.0, 1.0])),
        Box::new(|e, s| e.regenerate(s, None).map(|_| ())),
        Box::new(|e, s| e.add_attribute(s, "setting", Some(vec![Label::new("hospital").unwrap(), Label::new("office").unwrap(), Label::new("home").unwrap()]))),
        Box::new(|e, s| e.regenerate(s, Some(77)).map(|_| ())),
        Box::new(|e, s| e.add_label(s, "setting", Label::new("lab").unwrap(), 0.2)),
        Box::new(|e, s| e.regenerate(s, None).map(|_| ())),
        Box::new(|e, s| e.branch(s, 2)),
        Box::new(|e, s| e.regenerate(s, None).map(|_| ())),
    ];
    for step in &steps {
        manager.update(&id, |e, s| step(e, s)).map_err(|e| e.to_string())?;
    }
    let loaded = store.load(&id).map_err(|e| e.to_string())?;
    check(loaded.iterations().len() == 6, || format!("{} snapshots", loaded.iterations().len()))?;
    let events = store.events(&id).map_err(|e| e.to_string())?;
    let replayed = engine_with(Gateway::perfect_mock(), SamplingMode::Quota).replay(&events).map_err(|e| e.to_string())?;
    check(snapshot_bytes(&loaded) == snapshot_bytes(&replayed), || "replayed snapshots differ from persisted ones".into())?;

    let mut rng = SplitMix64::new(0xfa17);
    let mut failures = 0;
    for run in 0..100 {
        let before = store.load(&id).map_err(|e| e.to_string())?;
        let before_bytes = snapshot_bytes(&before);
        let mut gateway = Gateway::perfect_mock();
        let budget = rng.below(12);
        if rng.below(2) == 0 {
            gateway.images = Arc::new(FlakyImages { inner: MockImageGenerator::new(), calls: AtomicUsize::new(0), budget });
        } else {
            gateway.embedder = Arc::new(FlakyEmbedder { inner: MockEmbedder::perfect(), calls: AtomicUsize::new(0), budget });
        }
        let flaky = SessionManager::new(engine_with(gateway, SamplingMode::Quota), Some(store.clone())).map_err(|e| e.to_string())?;
        let op = rng.below(3);
        let result = flaky.update(&id, |e, s| match op {
            0 => e.regenerate(s, Some(run)).map(|_| ()),
            1 => e.add_attribute(s, &format!("extra{run}"), Some(vec![Label::new("x").unwrap(), Label::new("y").unwrap()])),
            _ => e.set_distribution(s, "gender", &[1.0, rng_weight(run)]),
        });
        if result.is_err() {
            failures += 1;
            let after = store.load(&id).map_err(|e| e.to_string())?;
            check(after == before && snapshot_bytes(&after) == before_bytes, || format!("run {run}: failed op changed the stored session"))?;
            let live = flaky.get(&id).map_err(|e| e.to_string())?;
            check(live == before, || format!("run {run}: failed op changed the live session"))?;
        }
    }
    check(failures >= 50, || format!("only {failures} of 100 runs hit an injected fault"))?;
    Ok(format!("6 snapshots replay byte-identical; {failures}/100 injected failures left the session untouched"))
}

fn rng_weight(run: u64) -> f64 {
    1.0 + (run % 5) as f64
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn scenario_fixtures() -> Outcome {
    let mut lines = Vec::new();
    for name in ["doctors", "birds", "cars"] {
        let scenario = Scenario::load(&scenario_dir().join(format!("{name}.toml"))).map_err(|e| e.to_string())?;
        check(scenario.iterations == 1 && scenario.mode == SamplingMode::Quota, || format!("{name}: expected one quota iteration"))?;
        let gateway = scenario_gateway(&scenario, None).map_err(|e| e.to_string())?;
        let (_, report) = run_scenario(&scenario, gateway).map_err(|e| e.to_string())?;
        check(report.alignment.len() == scenario.attributes.len(), || format!("{name}: missing alignment rows"))?;
        let worst = report.alignment.iter().map(|r| r.alignment_quota).fold(f64::INFINITY, f64::min);
        check(worst >= 0.99, || format!("{name}: alignment {worst}"))?;
        lines.push(format!("{name} min {worst}"));
    }
    Ok(lines.join(", "))
}

const ROUTES: [(&str, &str); 16] = [
    ("GET", "/capabilities"),
    ("POST", "/sessions"),
    ("GET", "/sessions/{}"),
    ("POST", "/sessions/{}/attributes"),
    ("POST", "/sessions/{}/attributes/suggest"),
    ("PUT", "/sessions/{}/attributes/{}/distribution"),
    ("POST", "/sessions/{}/attributes/{}/labels"),
    ("DELETE", "/sessions/{}/attributes/{}/labels/{}"),
    ("POST", "/sessions/{}/attributes/{}/balance"),
    ("GET", "/sessions/{}/attributes/{}/images"),
    ("POST", "/sessions/{}/generate"),
    ("POST", "/sessions/{}/branch"),
    ("GET", "/sessions/{}/iterations"),
    ("GET", "/sessions/{}/iterations/{}"),
    ("GET", "/sessions/{}/metrics"),
    ("GET", "/images/{}"),
];

fn route_matches(pattern: &str, path: &str) -> bool {
    let path = path.split('?').next().unwrap();
    let a: Vec<&str> = pattern.split('/').collect();
    let b: Vec<&str> = path.split('/').collect();
    a.len() == b.len() && a.iter().zip(&b).all(|(p, s)| *p == "{}" || p == s)
}

fn api_golden() -> Outcome {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../server/tests/golden");
    let script: Vec<Value> = serde_json::from_slice(&std::fs::read(golden.join("script.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for (method, pattern) in ROUTES {
        let covered = script.iter().any(|s| s["method"] == method && route_matches(pattern, s["path"].as_str().unwrap_or_default()));
        check(covered, || format!("no fixture for {method} {pattern}"))?;
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let replay = || {
        rt.block_on(async {
            let app = router(AppState::from_args(&ServeArgs { seed: 1, ..ServeArgs::default() }, fixed_clock("2024-06-01T00:00:00Z")).unwrap());
            let mut out = Vec::new();
            for step in &script {
                let method = step["method"].as_str().unwrap();
                let path = step["path"].as_str().unwrap();
                let body = match (step.get("body"), step.get("raw")) {
                    (Some(b), _) => Some(b.to_string()),
                    (None, Some(raw)) => Some(raw.as_str().unwrap().to_string()),
                    (None, None) => None,
                };
                let mut req = Request::builder().method(Method::from_bytes(method.as_bytes()).unwrap()).uri(path);
                if body.is_some() {
                    req = req.header("content-type", "application/json");
                }
                let resp = app.clone().oneshot(req.body(body.map_or(Body::empty(), Body::from)).unwrap()).await.unwrap();
                let status = resp.status().as_u16();
                let raw = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
                let parsed = serde_json::from_slice::<Value>(&raw).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&raw).into_owned()));
                let fixture = json!({
                    "request": { "method": method, "path": path, "body": step.get("body").or(step.get("raw")) },
                    "status": status,
                    "body": parsed,
                });
                out.push((step["name"].as_str().unwrap().to_string(), raw, serde_json::to_string_pretty(&fixture).unwrap() + "\n"));
            }
            out
        })
    };
    let first = replay();
    let second = replay();
    for (i, ((name, raw, fixture), (_, raw2, _))) in first.iter().zip(&second).enumerate() {
        let path = golden.join(format!("{:02}-{name}.json", i + 1));
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        check(&expected == fixture, || format!("{name} differs from its fixture"))?;
        check(raw == raw2, || format!("{name} is not byte-stable"))?;
    }
    Ok(format!("{} exchanges match fixtures, {} routes covered, bodies byte-stable", first.len(), ROUTES.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("end-to-end alignment", end_to_end),
        ("quota accuracy", quota_accuracy),
        ("iid soundness", iid_soundness),
        ("classifier oracle", classifier_oracle),
        ("metric identities", metric_identities),
        ("sensitivity trend", sensitivity_trend),
        ("session determinism and atomicity", determinism_and_atomicity),
        ("scenario fixture runs", scenario_fixtures),
        ("api golden suite", api_golden),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
