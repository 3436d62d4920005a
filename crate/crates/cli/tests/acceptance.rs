//! Acceptance gate: one PASS/FAIL/SKIP line per criterion.
//!
//! Lines are written straight to stdout so they show up even when the test
//! harness captures `println!`.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead as _, BufReader, Read as _, Write as _};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context as _};
use draftforge_core::config::{
    Config, DatasetConfig, LiveConfig, MockConfig, MockMeshSpec, PipelineConfig, ProviderConfig, ProviderMode,
};
use draftforge_core::dataset::{
    build, resume, BuildOptions, DatasetError, RecordStatus, SourceEntry, SourceManifest, MANIFEST_FILE,
};
use draftforge_core::gateway::{
    DescribeResult, Describer, Gateway, GatewayError, NoSleep, ProviderError, ProviderErrorKind, RateLimitConfig, RetryPolicy,
};
use draftforge_core::imaging::synthetic_sketch;
use draftforge_core::mesh::{
    analyze, apply_plan, euler_characteristic, fill_holes, parse_ply, primitives, read_stl, remove_small_components,
    signed_volume, write_ply, write_stl, PlyEncoding, RepairPlan, TriangleMesh,
};
use draftforge_core::metrics::{
    alignment_report, clip_score, diversity_distribution, embed_alignment_corpus, embed_image_sets, pairwise_diversity,
    percentile_exemplars, EmbeddingVector, RawAlignmentRecord, RawImageSet, SetScore, DEFAULT_PERCENTILES,
};
use draftforge_core::pipeline::{first_unflagged, fold, run_route, Pipeline, Route, RouteOptions, Stage};
use draftforge_core::store::{ContentHash, Store};
use draftforge_core::Exec;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, RngAlgorithm, TestRng, TestRunner};
use serde_json::{json, Value};

type Check = anyhow::Result<String>;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn runner(cases: u32) -> TestRunner {
    let cfg = PtConfig { cases, failure_persistence: None, ..PtConfig::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn budget(name: &str, started: Instant, limit: Duration) -> anyhow::Result<()> {
    let took = started.elapsed();
    ensure!(took < limit, "{name} took {took:.2?}, limit {limit:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// metric math

fn unit_vec(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| EmbeddingVector::unit(v).unwrap())
}

/// Independent oracle: plain dot product, clamped, scaled.
fn oracle_score(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    100.0 * dot.clamp(0.0, 1.0)
}

fn metric_math() -> Check {
    let started = Instant::now();

    let pairs = (2usize..48).prop_flat_map(|d| (unit_vec(d), unit_vec(d)));
    runner(1000)
        .run(&pairs, |(a, b)| {
            let ab = clip_score(&a, &b).unwrap().value();
            let ba = clip_score(&b, &a).unwrap().value();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert_eq!(clip_score(&a, &a).unwrap().value(), 100.0);
            prop_assert!((0.0..=100.0).contains(&ab));
            let neg = EmbeddingVector::unit(a.values.iter().map(|x| -x).collect()).unwrap();
            prop_assert_eq!(clip_score(&a, &neg).unwrap().value(), 0.0);
            Ok(())
        })
        .map_err(|e| anyhow!("clip_score properties: {e}"))?;

    let a = EmbeddingVector::unit(vec![1.0, 0.0]).unwrap();
    let b = EmbeddingVector::unit(vec![1.0, 1.0]).unwrap();
    let analytic = clip_score(&a, &b)?.value();
    ensure!((analytic - 70.710678).abs() <= 1e-6, "45 degree case gave {analytic}");

    let sets = (2usize..33).prop_flat_map(|d| prop::collection::vec(unit_vec(d), 2..13));
    runner(500)
        .run(&sets, |set| {
            let got = pairwise_diversity(&set).unwrap().value();
            let n = set.len();
            let mut sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    sum += oracle_score(&set[i], &set[j]);
                }
            }
            let want = sum / (n * (n - 1) / 2) as f64;
            prop_assert!((got - want).abs() <= 1e-12, "got {} want {}", got, want);
            Ok(())
        })
        .map_err(|e| anyhow!("pairwise diversity vs brute force: {e}"))?;

    // Scores drawn from a small grid so ties are common; percentiles in tenths.
    let lists = (prop::collection::vec(0u32..=40, 1..200), prop::collection::vec(0u32..=1000, 1..6));
    runner(1000)
        .run(&lists, |(raw, tenths)| {
            let scores: Vec<SetScore> =
                raw.iter().enumerate().map(|(i, &s)| SetScore { set_id: format!("s{i:04}"), score: s as f64 * 2.5 }).collect();
            let percentiles: Vec<f64> = tenths.iter().map(|&t| t as f64 / 10.0).collect();
            let dist = percentile_exemplars(&scores, &percentiles).unwrap();
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap().then(a.set_id.cmp(&b.set_id)));
            let n = sorted.len() as u64;
            for (ex, &t) in dist.exemplars.iter().zip(&tenths) {
                let rank = ((t as u64 * n).div_ceil(1000)).max(1) as usize;
                prop_assert_eq!(ex.rank, rank);
                prop_assert_eq!(&ex.set_id, &sorted[rank - 1].set_id);
                prop_assert_eq!(ex.score, sorted[rank - 1].score);
            }
            Ok(())
        })
        .map_err(|e| anyhow!("nearest-rank percentiles vs sort-and-index: {e}"))?;

    budget("metric-math suite", started, Duration::from_secs(10))?;
    Ok(format!("1000 score pairs, 500 sets, 1000 percentile lists, 45deg={analytic:.6}, {:.2?}", started.elapsed()))
}

// ---------------------------------------------------------------------------
// mesh kernel

fn stl_len(triangles: usize) -> usize {
    84 + 50 * triangles
}

/// Random meshes made of disjoint boxes (some with one face triangle
/// removed) plus loose single triangles, in shuffled triangle order.
fn fragmented_mesh() -> impl Strategy<Value = TriangleMesh> {
    let boxes = prop::collection::vec((1usize..4, 0.5f64..3.0, any::<bool>(), 0usize..1000), 1..5);
    let loose = prop::collection::vec((0.05f64..0.5, 0.05f64..0.5), 0..6);
    (boxes, loose, any::<u64>()).prop_map(|(boxes, loose, seed)| {
        let mut m = TriangleMesh::default();
        let mut slot = 0.0;
        for (div, size, holed, drop) in boxes {
            let mut b = primitives::subdivided_box([slot, 0.0, 0.0], [slot + size, size, size], div);
            if holed {
                let i = drop % b.triangles.len();
                b.triangles.remove(i);
            }
            m.merge(&b);
            slot += 10.0;
        }
        for (w, h) in loose {
            m.merge(&TriangleMesh::new(vec![[slot, 0.0, 0.0], [slot + w, 0.0, 0.0], [slot, h, 0.0]], vec![[0, 1, 2]]));
            slot += 10.0;
        }
        // Fisher-Yates with a small LCG keeps the shuffle independent of the mesh code.
        let mut s = seed | 1;
        for i in (1..m.triangles.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            m.triangles.swap(i, (s >> 33) as usize % (i + 1));
        }
        m
    })
}

type TriKey = [[u64; 3]; 3];

fn tri_key(m: &TriangleMesh, t: usize) -> TriKey {
    m.corners(t).map(|p| p.map(f64::to_bits))
}

/// Union-find over shared vertex indices; returns components as triangle lists.
fn oracle_components(m: &TriangleMesh) -> Vec<Vec<usize>> {
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..m.vertices.len()).collect();
    for t in &m.triangles {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0] as usize), find(&mut parent, t[k] as usize));
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in m.triangles.iter().enumerate() {
        groups.entry(find(&mut parent, t[0] as usize)).or_default().push(i);
    }
    groups.into_values().collect()
}

fn mesh_kernel() -> Check {
    let started = Instant::now();

    let cube = primitives::unit_cube();
    let v = signed_volume(&cube);
    ensure!((v - 1.0).abs() <= 1e-9, "unit cube volume {v}");

    let open = primitives::open_cube();
    let r = analyze(&open);
    ensure!(r.boundary_edge_count == 4, "open cube boundary edges {}", r.boundary_edge_count);
    let filled = fill_holes(&open)?;
    let rf = analyze(&filled);
    ensure!(rf.boundary_edge_count == 0, "filled cube still has {} boundary edges", rf.boundary_edge_count);
    ensure!((rf.signed_volume - 1.0).abs() <= 1e-9, "filled cube volume {}", rf.signed_volume);

    let one = TriangleMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]);
    ensure!(write_stl(&one)?.len() == 134, "one-triangle STL is {} bytes", write_stl(&one)?.len());
    ensure!(write_stl(&cube)?.len() == 684, "cube STL is {} bytes", write_stl(&cube)?.len());

    let closed_shapes = [
        primitives::uv_sphere([0.0; 3], 1.0, 12, 24),
        primitives::torus([0.0; 3], 3.0, 1.0, 24, 12),
        primitives::cylinder([0.0; 3], 1.0, 2.0, 16, 3),
        primitives::octahedron([0.0; 3], 1.0),
    ];
    for (shape, expected) in closed_shapes.iter().zip([2, 0, 2, 2]) {
        ensure!(euler_characteristic(shape) == expected, "closed primitive has chi {}", euler_characteristic(shape));
    }

    let closed_count = AtomicUsize::new(0);
    let encodings = [PlyEncoding::Ascii, PlyEncoding::BinaryF32, PlyEncoding::BinaryF64];
    runner(1000)
        .run(&(fragmented_mesh(), 0.0f64..0.99, 0usize..3), |(m, min_fraction, enc)| {
            // remove_small_components keeps a largest component intact.
            let kept = remove_small_components(&m, min_fraction);
            let comps = oracle_components(&m);
            let largest = comps.iter().map(Vec::len).max().unwrap();
            let out: HashSet<TriKey> = (0..kept.triangle_count()).map(|t| tri_key(&kept, t)).collect();
            let survived = comps.iter().filter(|c| c.len() == largest).any(|c| c.iter().all(|&t| out.contains(&tri_key(&m, t))));
            prop_assert!(survived, "no largest component ({} triangles) survived at fraction {}", largest, min_fraction);

            // PLY -> repair -> STL keeps triangle counts.
            let ply = write_ply(&m, encodings[enc]);
            let parsed = parse_ply(&ply).unwrap();
            prop_assert_eq!(parsed.triangle_count(), m.triangle_count());
            let plan = RepairPlan { component_min_fraction: min_fraction, ..RepairPlan::default() };
            let (repaired, report) = apply_plan(&parsed, &plan).unwrap();
            prop_assert_eq!(report.triangle_count, repaired.triangle_count());
            let stl = write_stl(&repaired).unwrap();
            prop_assert_eq!(stl.len(), stl_len(repaired.triangle_count()));
            prop_assert_eq!(read_stl(&stl).unwrap().len(), repaired.triangle_count());
            let reparsed = parse_ply(&write_ply(&repaired, PlyEncoding::BinaryF64)).unwrap();
            prop_assert_eq!(reparsed.triangle_count(), repaired.triangle_count());

            // Closed results have an even Euler characteristic (integral genus).
            if report.boundary_edge_count == 0 && report.nonmanifold_edge_count == 0 {
                closed_count.fetch_add(1, Ordering::Relaxed);
                let chi = euler_characteristic(&repaired);
                prop_assert!(
                    chi % 2 == 0 && chi <= 2 * report.component_count as i64,
                    "chi {} with {} components",
                    chi,
                    report.component_count
                );
            }
            Ok(())
        })
        .map_err(|e| anyhow!("random fragmented meshes: {e}"))?;
    let closed = closed_count.load(Ordering::Relaxed);
    ensure!(closed > 0, "no repaired mesh came out closed");

    budget("mesh kernel suite", started, Duration::from_secs(60))?;
    Ok(format!("1000 random meshes ({closed} repaired closed), cube STL 684 B, {:.2?}", started.elapsed()))
}

// ---------------------------------------------------------------------------
// pipeline end to end

fn hashes(v: &Value) -> Vec<String> {
    v.as_array().map(|a| a.iter().filter_map(|h| h.as_str().map(str::to_owned)).collect()).unwrap_or_default()
}

fn pipeline_e2e() -> Check {
    let dir = tempfile::tempdir()?;
    let sketch = dir.path().join("sketch.png");
    std::fs::write(&sketch, synthetic_sketch(21, 256))?;
    let data = dir.path().join("data");

    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_draftforge"))
        .env_remove("S2P_CONFIG")
        .env_remove("S2P_PROVIDER_MODE")
        .env_remove("S2P_API_KEY")
        .args(["--json", "--mode", "mock", "--data-dir"])
        .arg(&data)
        .args(["route", "run"])
        .arg(&sketch)
        .args(["--route", "full"])
        .output()?;
    let took = started.elapsed();
    ensure!(out.status.success(), "route run failed: {}", String::from_utf8_lossy(&out.stderr));
    ensure!(took < Duration::from_secs(5), "route run took {took:.2?}");
    let rec: Value = serde_json::from_slice(&out.stdout)?;

    let id = rec["session_id"].as_str().context("no session id")?;
    let store = Store::open(&data)?;
    let replayed = fold(&store.events.load(id)?)?;
    ensure!(replayed.stage == Stage::Exported, "replayed stage {:?}", replayed.stage);
    let it = replayed.current().context("no iteration")?;

    let images = hashes(&rec["images"]);
    ensure!(images.len() == 4, "{} candidate images", images.len());
    ensure!(images == it.images.iter().map(|i| i.blob.to_string()).collect::<Vec<_>>(), "image list differs from replay");

    let meshes = rec["meshes"].as_array().context("no meshes")?;
    let mesh_blobs: Vec<String> = meshes.iter().filter_map(|m| m["blob"].as_str().map(str::to_owned)).collect();
    ensure!(
        mesh_blobs == it.mesh_candidates.iter().map(|m| m.blob.to_string()).collect::<Vec<_>>(),
        "mesh list differs from replay"
    );
    for backend in MockConfig::default().mesh_backends.iter().map(|b| b.name.as_str()) {
        ensure!(meshes.iter().any(|m| m["backend"] == backend), "no mesh from backend {backend}");
    }

    let stl_hash = rec["exported_stl"].as_str().context("no export")?;
    ensure!(replayed.export.as_ref().map(ContentHash::to_string).as_deref() == Some(stl_hash), "export hash differs from replay");
    let report_json = &rec["final_report"];
    let post = replayed.postprocess.as_ref().context("no postprocess in replay")?;
    ensure!(serde_json::to_value(&post.report)? == *report_json, "final report differs from replay");
    ensure!(report_json["printable"].is_boolean(), "printable verdict missing");

    let stl = store.blobs.get(&ContentHash::parse(stl_hash)?)?;
    let triangles = read_stl(&stl)?;
    ensure!(stl.len() == stl_len(triangles.len()) && !triangles.is_empty(), "STL is not valid binary STL");
    let exported_file = data.join("exports").join(id).join(format!("{id}.stl"));
    ensure!(std::fs::read(&exported_file)? == stl, "exported file differs from blob");

    Ok(format!("{took:.2?}, {} meshes, {} STL triangles, printable={}", meshes.len(), triangles.len(), report_json["printable"]))
}

// ---------------------------------------------------------------------------
// baseline comparison

fn defect_gateway(seed: u64) -> anyhow::Result<Gateway> {
    let cfg = ProviderConfig {
        seed,
        mock: MockConfig {
            mesh_backends: ["prim-holes", "prim-fragments"].map(MockMeshSpec::named).to_vec(),
            ..MockConfig::default()
        },
        ..ProviderConfig::default()
    };
    Ok(Gateway::from_config(&cfg)?)
}

fn temp_pipeline(gateway: Gateway) -> anyhow::Result<(tempfile::TempDir, Pipeline)> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    Ok((dir, Pipeline::new(store, gateway, PipelineConfig::default())))
}

fn baseline_comparison() -> Check {
    let (_d, p) = temp_pipeline(defect_gateway(3)?)?;
    let sketch = synthetic_sketch(5, 256);
    let opts = RouteOptions::default();
    let direct = run_route(&p, &sketch, Route::SketchDirect, &opts)?;
    let guided = run_route(&p, &sketch, Route::SketchGuided, &opts)?;
    let full = run_route(&p, &sketch, Route::Full, &opts)?;

    let first = direct.meshes.first().context("sketch_direct produced no mesh")?;
    ensure!(!first.report.printable, "sketch_direct mesh is printable");
    ensure!(guided.images.len() == 4, "sketch_guided has {} images", guided.images.len());
    let (g_sim, f_sim) = (
        guided.mean_similarity_to_sketch.context("guided similarity missing")?,
        full.mean_similarity_to_sketch.context("full similarity missing")?,
    );
    ensure!(g_sim > f_sim, "guided similarity {g_sim} not above full {f_sim}");
    let (g_div, f_div) =
        (guided.image_diversity.context("guided diversity missing")?, full.image_diversity.context("full diversity missing")?);
    ensure!(f_div < g_div, "full diversity {f_div} not below guided {g_div}");
    Ok(format!("sim to sketch guided {g_sim:.2} > full {f_sim:.2}; pairwise full {f_div:.2} < guided {g_div:.2}"))
}

// ---------------------------------------------------------------------------
// feedback iteration

fn feedback_iteration() -> Check {
    let (_d, p) = temp_pipeline(Gateway::mock(7))?;
    let s = p.create_session(&synthetic_sketch(2, 256), "")?;
    let parent = p.advance_describe(&s.id)?;
    let first = p.advance_images(&s.id, 4)?;
    let suffix = "make the handle longer";
    let it = p.append_feedback(&s.id, suffix, 4)?;
    ensure!(it.prompt.text == format!("{} {suffix}", parent.text), "revision text {:?}", it.prompt.text);
    ensure!(it.prompt.parent == Some(parent.index), "revision parent {:?}", it.prompt.parent);
    ensure!(it.images.len() == 4, "{} regenerated images", it.images.len());
    let before: HashSet<_> = first.iter().map(|i| &i.blob).collect();
    ensure!(it.images.iter().all(|i| !before.contains(&i.blob)), "a regenerated image repeats iteration 1");
    let replay = p.load(&s.id)?;
    ensure!(replay.iterations.len() == 2 && replay.iterations[1] == it, "replay differs from returned iteration");
    Ok(format!("iteration {} prompt extends revision {}", it.index, parent.index))
}

// ---------------------------------------------------------------------------
// dataset builder

fn corpus(dir: &Path, n: u64, images_per_sketch: usize) -> anyhow::Result<SourceManifest> {
    let mut entries = Vec::new();
    for i in 0..n {
        let name = format!("sketch_{i:03}.png");
        std::fs::write(dir.join(&name), synthetic_sketch(100 + i, 128))?;
        entries.push(SourceEntry { sketch: name.into(), description: None });
    }
    let mut m = SourceManifest::new(entries, images_per_sketch, 5);
    m.base_dir = dir.to_path_buf();
    Ok(m)
}

fn dataset_builder() -> Check {
    let src = tempfile::tempdir()?;
    let source = corpus(src.path(), 25, 4)?;
    let g = Gateway::mock(5);
    let cfg = DatasetConfig::default();

    let straight = tempfile::tempdir()?;
    let m = build(&g, &cfg, &source, straight.path(), &BuildOptions::default())?;
    ensure!((m.totals.sketch_count, m.totals.image_count) == (25, 100), "totals {:?}", m.totals);
    let expected = std::fs::read(straight.path().join(MANIFEST_FILE))?;

    let split = tempfile::tempdir()?;
    match build(&g, &cfg, &source, split.path(), &BuildOptions { stop_after: Some(10) }) {
        Err(DatasetError::Interrupted { completed: 10 }) => {}
        other => bail!("interrupted build returned {other:?}"),
    }
    resume(&g, &cfg, &source, split.path(), &BuildOptions::default())?;
    ensure!(std::fs::read(split.path().join(MANIFEST_FILE))? == expected, "resumed manifest differs from uninterrupted build");

    let mut injected_source = source.clone();
    let injected = [3usize, 12, 19];
    for &i in &injected {
        injected_source.entries[i].description = Some("a blocked-term gadget".into());
    }
    let policy = ProviderConfig {
        seed: 5,
        mock: MockConfig { blocked_terms: vec!["blocked-term".into()], ..MockConfig::default() },
        ..ProviderConfig::default()
    };
    let faulty = tempfile::tempdir()?;
    let fm = build(&Gateway::from_config(&policy)?, &cfg, &injected_source, faulty.path(), &BuildOptions::default())?;
    let failed: Vec<usize> = fm.records.iter().filter(|r| !r.is_complete()).map(|r| r.index).collect();
    ensure!(failed == injected, "failed records {failed:?}, injected {injected:?}");
    ensure!(
        injected.iter().all(|&i| matches!(&fm.records[i].status, RecordStatus::Failed { kind, .. } if kind == "SafetyRejected")),
        "injected records did not fail with SafetyRejected"
    );
    ensure!((fm.totals.sketch_count, fm.totals.image_count, fm.totals.failed_count) == (22, 88, 3), "totals {:?}", fm.totals);
    Ok(format!("(25, 100); resume byte-identical ({} B manifest); injected failures {injected:?}", expected.len()))
}

// ---------------------------------------------------------------------------
// provider gateway

/// Describer double that replays a script of outcomes and counts calls.
struct Scripted {
    script: Vec<Option<ProviderErrorKind>>,
    calls: AtomicUsize,
}

impl Describer for Scripted {
    fn describe(&self, _: &[u8], _: &str) -> Result<DescribeResult, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.script.get(n).copied().flatten() {
            Some(kind) => Err(ProviderError::new(kind, "injected")),
            None => Ok(DescribeResult { description: "d".into(), generation_prompt: "p".into() }),
        }
    }
}

/// HTTP server answering every request with one scripted response.
struct Stub {
    url: String,
    requests: Arc<AtomicUsize>,
}

fn stub(status: u16, body: String) -> anyhow::Result<Stub> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}", listener.local_addr()?);
    let requests = Arc::new(AtomicUsize::new(0));
    let count = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { return };
            let Ok(clone) = stream.try_clone() else { return };
            let mut reader = BufReader::new(clone);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut req = vec![0; len];
            let _ = reader.read_exact(&mut req);
            count.fetch_add(1, Ordering::SeqCst);
            let resp = format!(
                "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    Ok(Stub { url, requests })
}

fn live_gateway(url: &str, max_attempts: u32) -> anyhow::Result<Gateway> {
    let cfg = ProviderConfig {
        mode: ProviderMode::Live,
        live: LiveConfig { base_url: url.to_owned(), api_key: Some("sk-acceptance".into()), ..LiveConfig::default() },
        rate_limit: RateLimitConfig { capacity: 1000, refill_per_sec: 1000.0 },
        ..ProviderConfig::default()
    };
    Ok(Gateway::from_config(&cfg)?.with_retry(RetryPolicy::immediate(max_attempts), Arc::new(NoSleep)))
}

fn provider_gateway() -> Check {
    use ProviderErrorKind::*;

    // Attempt bound under random fault scripts.
    let kinds = prop::option::of(prop::sample::select(ProviderErrorKind::ALL.to_vec()));
    runner(500)
        .run(&(1u32..8, prop::collection::vec(kinds, 0..12)), |(max, script)| {
            let double = Arc::new(Scripted { script: script.clone(), calls: AtomicUsize::new(0) });
            let g = Gateway::mock(1).with_describer(double.clone()).with_retry(RetryPolicy::immediate(max), Arc::new(NoSleep));
            let result = g.describe(&synthetic_sketch(0, 64), "");
            let calls = double.calls.load(Ordering::SeqCst);
            prop_assert!(calls >= 1 && calls <= max as usize, "{} calls with max {}", calls, max);
            // Oracle: walk the script with the retry rule.
            let mut expected = 0;
            for attempt in 1..=max as usize {
                expected = attempt;
                match script.get(attempt - 1).copied().flatten() {
                    None => break,
                    Some(k) if !k.is_retryable() => break,
                    Some(_) => {}
                }
            }
            prop_assert_eq!(calls, expected);
            if let Err(GatewayError::Provider(e)) = &result {
                if e.kind == SafetyRejected {
                    prop_assert_eq!(calls, script.iter().position(|s| *s == Some(SafetyRejected)).unwrap() + 1);
                }
            }
            Ok(())
        })
        .map_err(|e| anyhow!("attempt bound: {e}"))?;

    // Safety short-circuit against a request-counting HTTP double.
    let refusal = json!({"error": {"code": "content_policy_violation", "message": "rejected"}}).to_string();
    let s = stub(400, refusal)?;
    let err = live_gateway(&s.url, 5)?.describe(&synthetic_sketch(0, 64), "").unwrap_err();
    ensure!(matches!(&err, GatewayError::Provider(e) if e.kind == SafetyRejected && !e.retryable), "refusal gave {err:?}");
    let safety_requests = s.requests.load(Ordering::SeqCst);
    ensure!(safety_requests == 1, "safety refusal made {safety_requests} requests");

    let table: Vec<(u16, String, ProviderErrorKind)> = vec![
        (400, json!({"error": {"code": "content_policy_violation"}}).to_string(), SafetyRejected),
        (400, json!({"error": {"message": "Your request was rejected by the safety system"}}).to_string(), SafetyRejected),
        (403, "flagged by moderation".into(), SafetyRejected),
        (
            200,
            json!({"choices": [{"finish_reason": "content_filter", "message": {"content": null}}]}).to_string(),
            SafetyRejected,
        ),
        (200, json!({"refusal": "I can't help with that"}).to_string(), SafetyRejected),
        (429, "{}".into(), RateLimited),
        (429, "slow down".into(), RateLimited),
        (408, "{}".into(), Transient),
        (425, "{}".into(), Transient),
        (500, "{}".into(), Transient),
        (502, "bad gateway".into(), Transient),
        (504, "{}".into(), Transient),
        (503, "{}".into(), Unavailable),
        (400, json!({"error": "bad request"}).to_string(), Malformed),
        (401, "{}".into(), Malformed),
        (404, "not here".into(), Malformed),
        (422, "{}".into(), Malformed),
        (200, "not json".into(), Malformed),
        (200, json!({"description": "only one field"}).to_string(), Malformed),
        (200, json!({"error": "upstream exploded"}).to_string(), Malformed),
    ];
    ensure!(table.len() == 20, "taxonomy table has {} rows", table.len());
    let max = 3;
    for (status, body, expected) in &table {
        let s = stub(*status, body.clone())?;
        let got = live_gateway(&s.url, max)?.describe(&synthetic_sketch(0, 64), "");
        let e = match got {
            Err(GatewayError::Provider(e)) => e,
            other => bail!("HTTP {status} {body}: expected provider error, got {other:?}"),
        };
        ensure!(e.kind == *expected, "HTTP {status} {body}: {:?}, expected {expected:?}", e.kind);
        ensure!(e.retryable == expected.is_retryable(), "HTTP {status}: retryable flag disagrees with kind");
        let requests = s.requests.load(Ordering::SeqCst);
        let want = if expected.is_retryable() { max as usize } else { 1 };
        ensure!(requests == want, "HTTP {status} {body}: {requests} requests, expected {want}");
    }
    Ok("500 fault scripts within bound; refusal = 1 request; 20/20 responses classified".into())
}

// ---------------------------------------------------------------------------
// live smoke

fn live_smoke() -> anyhow::Result<Verdict> {
    if std::env::var("S2P_API_KEY").map_or(true, |k| k.is_empty()) {
        return Ok(Verdict::Skip("S2P_API_KEY not set".into()));
    }
    let mut cfg = Config::load(None)?;
    cfg.provider.mode = ProviderMode::Live;
    cfg.provider.capabilities.clear();
    let dir = tempfile::tempdir()?;
    let g = Gateway::from_config(&cfg.provider)?;
    let p = Pipeline::new(Store::open(dir.path())?, g, cfg.pipeline.clone());
    let sketch = match std::env::var_os("S2P_SMOKE_SKETCH") {
        Some(path) => std::fs::read(path)?,
        None => synthetic_sketch(1, 512),
    };
    let s = p.create_session(&sketch, "")?;
    let rev = p.advance_describe(&s.id)?;
    let images = p.advance_images(&s.id, 4)?;
    p.select_image(&s.id, first_unflagged(&images).context("every image flagged")?, None)?;
    p.advance_mesh(&s.id, &[])?;
    p.select_mesh(&s.id, 0)?;
    let stl = p.postprocess_and_export(&s.id, &cfg.pipeline.repair)?;

    let blobs: Vec<Vec<u8>> = images.iter().map(|i| p.store().blobs.get(&i.blob)).collect::<Result<_, _>>()?;
    let record = RawAlignmentRecord { record_id: s.id.clone(), sketch, text: rev.text.clone(), images: blobs.clone() };
    let inputs = embed_alignment_corpus(p.gateway().embedder(), &[record], Exec::Sequential)?;
    let means = alignment_report(&inputs, Exec::Sequential)?.means;
    let sets =
        embed_image_sets(p.gateway().embedder(), &[RawImageSet { set_id: s.id.clone(), images: blobs }], Exec::Sequential)?;
    let div = diversity_distribution(&sets, &DEFAULT_PERCENTILES, Exec::Sequential)?;
    Ok(Verdict::Pass(format!(
        "exported {stl}; sketch-text {:.1}, image-text {:.1}, sketch-image {:.1}, pairwise {:.1}",
        means.sketch_text, means.image_text, means.sketch_image, div.set_scores[0].score
    )))
}

// ---------------------------------------------------------------------------

fn run(name: &str, f: impl FnOnce() -> anyhow::Result<Verdict>) -> bool {
    let started = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => Verdict::Fail(format!("{e:#}")),
        Err(panic) => Verdict::Fail(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default(),
        ),
    };
    let took = started.elapsed();
    let (tag, detail, ok) = match verdict {
        Verdict::Pass(d) => ("PASS", d, true),
        Verdict::Skip(d) => ("SKIP", d, true),
        Verdict::Fail(d) => ("FAIL", d, false),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} {name} [{took:.2?}]: {detail}");
    ok
}

fn check(f: fn() -> Check) -> impl FnOnce() -> anyhow::Result<Verdict> {
    move || f().map(Verdict::Pass)
}

#[test]
fn acceptance() {
    // The harness prints "test acceptance ... " without a newline first.
    let _ = writeln!(std::io::stdout().lock());
    let results = [
        run("metric-math oracle suite", check(metric_math)),
        run("mesh kernel suite", check(mesh_kernel)),
        run("pipeline end to end (mock, offline)", check(pipeline_e2e)),
        run("baseline route comparison structure", check(baseline_comparison)),
        run("feedback iteration", check(feedback_iteration)),
        run("dataset builder", check(dataset_builder)),
        run("provider gateway", check(provider_gateway)),
        run("live-mode smoke", live_smoke),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
