use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use draftforge_core::config::{MockConfig, MockMeshSpec, PipelineConfig, ProviderConfig};
use draftforge_core::gateway::{DescribeResult, Describer, Gateway, MeshBackend, ProviderError, ProviderErrorKind};
use draftforge_core::imaging::synthetic_sketch;
use draftforge_core::mesh::{self, RepairPlan};
use draftforge_core::pipeline::{
    first_unflagged, fold, run_route, DesignSession, Operation, Pipeline, PipelineError, Route, RouteOptions, Stage,
};
use draftforge_core::store::Store;
use tempfile::TempDir;

fn pipeline_with(gateway: Gateway) -> (TempDir, Pipeline) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    (dir, Pipeline::new(store, gateway, PipelineConfig::default()))
}

fn mock_pipeline() -> (TempDir, Pipeline) {
    pipeline_with(Gateway::mock(7))
}

fn defect_gateway(seed: u64) -> Gateway {
    let cfg = ProviderConfig {
        seed,
        mock: MockConfig {
            mesh_backends: ["prim-holes", "prim-fragments"].map(MockMeshSpec::named).to_vec(),
            ..MockConfig::default()
        },
        ..ProviderConfig::default()
    };
    Gateway::from_config(&cfg).unwrap()
}

fn replayed(p: &Pipeline, id: &str) -> DesignSession {
    fold(&p.store().events.load(id).unwrap()).unwrap()
}

/// Runs `op` with valid arguments.
fn run_op(p: &Pipeline, id: &str, op: Operation) -> Result<(), PipelineError> {
    match op {
        Operation::Describe => p.advance_describe(id).map(drop),
        Operation::EditDescription => p.edit_description(id, "a taller frother").map(drop),
        Operation::AdvanceImages => p.advance_images(id, 2).map(drop),
        Operation::AppendFeedback => p.append_feedback(id, "make it matte", 2).map(drop),
        Operation::FlagImages => {
            let n = p.load(id)?.current().map_or(0, |i| i.images.len());
            p.flag_images(id, &vec![false; n]).map(drop)
        }
        Operation::SelectImage => p.select_image(id, 0, None).map(drop),
        Operation::AdvanceMesh => p.advance_mesh(id, &[]).map(drop),
        Operation::SelectMesh => p.select_mesh(id, 0).map(drop),
        Operation::PostProcess => p.postprocess(id, &RepairPlan::default()).map(drop),
        Operation::Export => p.export(id).map(drop),
    }
}

const PATH: [Operation; 7] = [
    Operation::Describe,
    Operation::AdvanceImages,
    Operation::SelectImage,
    Operation::AdvanceMesh,
    Operation::SelectMesh,
    Operation::PostProcess,
    Operation::Export,
];

fn session_at(p: &Pipeline, stage: Stage) -> String {
    let s = p.create_session(&synthetic_sketch(1, 128), "milk frother").unwrap();
    for op in PATH {
        if p.load(&s.id).unwrap().stage == stage {
            break;
        }
        run_op(p, &s.id, op).unwrap();
    }
    assert_eq!(p.load(&s.id).unwrap().stage, stage);
    s.id
}

#[test]
fn replay_equals_state_after_every_operation() {
    let (_d, p) = mock_pipeline();
    let s = p.create_session(&synthetic_sketch(3, 128), "my milk frother idea").unwrap();
    assert_eq!((s.stage, s.version), (Stage::Created, 1));
    assert_eq!(replayed(&p, &s.id), s);
    let mut version = 1;
    let ops = [
        Operation::Describe,
        Operation::EditDescription,
        Operation::AdvanceImages,
        Operation::AppendFeedback,
        Operation::FlagImages,
        Operation::SelectImage,
        Operation::AdvanceMesh,
        Operation::SelectMesh,
        Operation::SelectMesh,
        Operation::PostProcess,
        Operation::Export,
    ];
    for op in ops {
        run_op(&p, &s.id, op).unwrap();
        version += 1;
        let live = p.load(&s.id).unwrap();
        assert_eq!(live.version, version, "{op:?}");
        assert_eq!(replayed(&p, &s.id), live);
    }
    assert_eq!(p.load(&s.id).unwrap().stage, Stage::Exported);
}

#[test]
fn transition_table_is_exact() {
    let (_d, p) = mock_pipeline();
    for stage in Stage::ALL {
        for op in Operation::ALL {
            let id = session_at(&p, stage);
            let before = p.load(&id).unwrap();
            let result = run_op(&p, &id, op);
            if op.allowed(stage) {
                result.unwrap_or_else(|e| panic!("{op:?} from {stage:?}: {e}"));
                let after = p.load(&id).unwrap();
                assert_eq!(after.version, before.version + 1);
                if let Some(target) = op.target() {
                    assert_eq!(after.stage, target, "{op:?} from {stage:?}");
                }
            } else {
                assert_eq!(result, Err(PipelineError::InvalidState { stage, operation: op }));
                assert_eq!(p.load(&id).unwrap(), before);
            }
        }
    }
}

#[test]
fn feedback_lineage_is_parent_space_feedback() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::ImagesGenerated);
    let parent = p.load(&id).unwrap().current_revision().unwrap().clone();
    let it = p.append_feedback(&id, "Add a chrome base.", 4).unwrap();
    assert_eq!(it.prompt.text, format!("{} Add a chrome base.", parent.text));
    assert_eq!(it.prompt.parent, Some(parent.index));
    assert_eq!(it.prompt.appended_feedback.as_deref(), Some("Add a chrome base."));
    assert_eq!(it.images.len(), 4);
}

#[test]
fn image_counts_follow_request() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::Described);
    assert_eq!(p.advance_images(&id, 4).unwrap().len(), 4);
    assert_eq!(p.advance_images(&id, 9).unwrap().len(), 9);
    assert_eq!(p.advance_images(&id, 0), Err(PipelineError::InvalidCount));
}

#[test]
fn invalid_inputs_are_rejected() {
    let (_d, p) = mock_pipeline();
    assert!(matches!(p.create_session(b"", ""), Err(PipelineError::UnsupportedImage(_))));
    assert!(matches!(p.create_session(b"GIF89a....", ""), Err(PipelineError::UnsupportedImage(_))));
    let id = session_at(&p, Stage::Described);
    assert_eq!(p.edit_description(&id, "  "), Err(PipelineError::EmptyText));
    p.advance_images(&id, 3).unwrap();
    assert_eq!(p.select_image(&id, 3, None), Err(PipelineError::IndexOutOfRange { index: 3, len: 3 }));
    assert!(matches!(p.flag_images(&id, &[true]), Err(PipelineError::InvalidArgument(_))));
    assert!(matches!(p.load("missing-session"), Err(PipelineError::NotFound(_))));
}

#[test]
fn text_flagged_images_cannot_be_selected() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::ImagesGenerated);
    p.flag_images(&id, &[true, false]).unwrap();
    assert_eq!(p.select_image(&id, 0, None), Err(PipelineError::TextFlaggedImage(0)));
    p.select_image(&id, 1, None).unwrap();
    // flagging the selected image is refused; re-selection with new flags is fine
    assert_eq!(p.flag_images(&id, &[false, true]), Err(PipelineError::TextFlaggedImage(1)));
    let s = p.select_image(&id, 0, Some(&[false, true])).unwrap();
    assert_eq!(s.selected_image().map(|i| i.contains_text), Some(false));
    assert_eq!(first_unflagged(&s.current().unwrap().images), Some(0));
    for sess in [s, replayed(&p, &id)] {
        let it = sess.current().unwrap();
        assert!(!it.images[it.selected_image.unwrap()].contains_text);
    }
}

#[test]
fn each_mock_backend_yields_a_candidate() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::ImageSelected);
    let candidates = p.advance_mesh(&id, &[]).unwrap();
    let names: Vec<_> = candidates.iter().map(|c| c.backend.as_str()).collect();
    assert_eq!(names, ["prim-clean", "prim-holes", "prim-fragments"]);
    for c in &candidates {
        let parsed = mesh::parse_ply(&p.store().blobs.get(&c.blob).unwrap()).unwrap();
        assert_eq!(mesh::analyze(&parsed), c.report, "report must match stored mesh");
        let sim = c.similarity_to_image.expect("similarity computed");
        assert!((0.0..=100.0).contains(&sim));
    }
    assert!(candidates[0].report.printable);
    assert!(!candidates[1].report.printable);
    assert_eq!(p.advance_mesh(&id, &["nope".into()]).unwrap_err(), PipelineError::UnknownBackend("nope".into()));
}

struct Broken;

impl MeshBackend for Broken {
    fn image_to_mesh(&self, _: &[u8]) -> Result<Vec<u8>, ProviderError> {
        Err(ProviderError::malformed("no mesh today"))
    }
}

#[test]
fn backend_failures_are_recorded_and_total_failure_aborts() {
    let g = Gateway::mock(1).with_mesh_backend("broken", Arc::new(Broken));
    let (_d, p) = pipeline_with(g);
    let id = session_at(&p, Stage::ImageSelected);
    let c = p.advance_mesh(&id, &["prim-clean".into(), "broken".into()]).unwrap();
    assert_eq!(c.len(), 1);
    let s = p.load(&id).unwrap();
    assert_eq!(s.current().unwrap().mesh_failures[0].backend, "broken");
    assert_eq!(s.current().unwrap().mesh_failures[0].kind, "Malformed");

    let id = session_at(&p, Stage::ImageSelected);
    let before = p.load(&id).unwrap();
    assert!(matches!(p.advance_mesh(&id, &["broken".into()]), Err(PipelineError::AllBackendsFailed(f)) if f.len() == 1));
    assert_eq!(p.load(&id).unwrap(), before);
}

#[test]
fn postprocess_closes_injected_holes() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::ImageSelected);
    let candidates = p.advance_mesh(&id, &["prim-holes".into()]).unwrap();
    assert!(!candidates[0].report.is_watertight());
    p.select_mesh(&id, 0).unwrap();
    let result = p.postprocess(&id, &RepairPlan::default()).unwrap();
    assert!(result.report.is_watertight());
    let stl_hash = p.export(&id).unwrap();
    let stl = p.store().blobs.get(&stl_hash).unwrap();
    let tris = mesh::read_stl(&stl).unwrap();
    assert_eq!(tris.len(), result.report.triangle_count);
}

#[test]
fn clean_mesh_export_is_byte_stable() {
    let export = || {
        let (_d, p) = mock_pipeline();
        let id = session_at(&p, Stage::ImageSelected);
        p.advance_mesh(&id, &["prim-clean".into()]).unwrap();
        p.select_mesh(&id, 0).unwrap();
        let h = p.postprocess_and_export(&id, &RepairPlan::default()).unwrap();
        p.store().blobs.get(&h).unwrap()
    };
    assert_eq!(export(), export());
}

#[test]
fn unprintable_export_still_succeeds() {
    let plan = RepairPlan { fill_holes: false, ..RepairPlan::default() };
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::ImageSelected);
    p.advance_mesh(&id, &["prim-holes".into()]).unwrap();
    p.select_mesh(&id, 0).unwrap();
    let r = p.postprocess(&id, &plan).unwrap();
    assert!(!r.report.printable);
    p.export(&id).unwrap();
    let s = p.load(&id).unwrap();
    assert_eq!(s.stage, Stage::Exported);
    assert!(!s.postprocess.unwrap().report.printable);
}

#[test]
fn edit_after_export_restarts_from_described() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::Exported);
    p.edit_description(&id, "smaller").unwrap();
    let s = p.load(&id).unwrap();
    assert_eq!(s.stage, Stage::Described);
    assert!(s.postprocess.is_none() && s.export.is_none());
    assert_eq!(s.current().unwrap().prompt.text, "smaller");
    assert_eq!(replayed(&p, &id), s);
}

#[test]
fn concurrent_operations_on_one_session_serialize() {
    let (_d, p) = mock_pipeline();
    let id = session_at(&p, Stage::Described);
    let start = p.load(&id).unwrap().version;
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| p.advance_images(&id, 1).unwrap());
        }
    });
    let end = p.load(&id).unwrap();
    assert_eq!(end.version, start + 8);
    assert_eq!(end.iterations.len(), 8);
    assert_eq!(replayed(&p, &id), end);
}

#[test]
fn distinct_sessions_progress_concurrently() {
    let (_d, p) = mock_pipeline();
    let ids: Vec<String> = (0..6).map(|_| session_at(&p, Stage::Created)).collect();
    std::thread::scope(|s| {
        for id in &ids {
            let p = &p;
            s.spawn(move || {
                for op in &PATH[..3] {
                    run_op(p, id, *op).unwrap();
                }
            });
        }
    });
    for id in &ids {
        assert_eq!(p.load(id).unwrap().stage, Stage::ImageSelected);
    }
}

struct CountingRefuser(AtomicUsize);

impl Describer for CountingRefuser {
    fn describe(&self, _: &[u8], _: &str) -> Result<DescribeResult, ProviderError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::safety("content_policy_violation"))
    }
}

#[test]
fn safety_rejection_is_not_retried_and_leaves_stage() {
    let refuser = Arc::new(CountingRefuser(AtomicUsize::new(0)));
    let (_d, p) = pipeline_with(Gateway::mock(1).with_describer(refuser.clone()));
    let s = p.create_session(&synthetic_sketch(0, 128), "").unwrap();
    let err = p.advance_describe(&s.id).unwrap_err();
    assert!(matches!(&err, PipelineError::Provider(e) if e.kind == ProviderErrorKind::SafetyRejected && !e.retryable));
    assert_eq!(refuser.0.load(Ordering::SeqCst), 1);
    assert_eq!(p.load(&s.id).unwrap(), s);
}

#[test]
fn blocked_note_is_rejected_by_mock_policy() {
    let cfg = ProviderConfig {
        mock: MockConfig { blocked_terms: vec!["weapon".into()], ..MockConfig::default() },
        ..ProviderConfig::default()
    };
    let (_d, p) = pipeline_with(Gateway::from_config(&cfg).unwrap());
    let s = p.create_session(&synthetic_sketch(0, 128), "a Weapon-shaped frother").unwrap();
    assert!(matches!(p.advance_describe(&s.id), Err(PipelineError::Provider(e)) if e.kind == ProviderErrorKind::SafetyRejected));
}

#[test]
fn full_route_matches_stepwise_execution() {
    let sketch = synthetic_sketch(11, 256);
    let opts = RouteOptions::default();
    let (_d1, p1) = mock_pipeline();
    let rec = run_route(&p1, &sketch, Route::Full, &opts).unwrap();
    assert!(rec.failures.is_empty(), "{:?}", rec.failures);

    let (_d2, p2) = mock_pipeline();
    let s = p2.create_session(&sketch, "").unwrap();
    p2.advance_describe(&s.id).unwrap();
    let images = p2.advance_images(&s.id, 4).unwrap();
    p2.select_image(&s.id, first_unflagged(&images).unwrap(), None).unwrap();
    let meshes = p2.advance_mesh(&s.id, &[]).unwrap();
    p2.select_mesh(&s.id, 0).unwrap();
    let stl = p2.postprocess_and_export(&s.id, &RepairPlan::default()).unwrap();

    let routed = p1.load(rec.session_id.as_deref().unwrap()).unwrap();
    let stepped = p2.load(&s.id).unwrap();
    assert_eq!(rec.images, images.iter().map(|i| i.blob.clone()).collect::<Vec<_>>());
    assert_eq!(rec.meshes.iter().map(|m| &m.blob).collect::<Vec<_>>(), meshes.iter().map(|m| &m.blob).collect::<Vec<_>>());
    assert_eq!(rec.exported_stl, Some(stl));
    assert_eq!(routed.iterations, stepped.iterations);
    assert_eq!(routed.postprocess, stepped.postprocess);
    assert_eq!(routed.version, stepped.version);
}

#[test]
fn route_comparison_has_expected_shape() {
    let sketch = synthetic_sketch(5, 256);
    let (_d, p) = pipeline_with(defect_gateway(3));
    let opts = RouteOptions::default();
    let direct = run_route(&p, &sketch, Route::SketchDirect, &opts).unwrap();
    let guided = run_route(&p, &sketch, Route::SketchGuided, &opts).unwrap();
    let full = run_route(&p, &sketch, Route::Full, &opts).unwrap();

    assert_eq!(direct.meshes.len(), 1);
    assert!(!direct.meshes[0].report.printable);
    assert!(direct.images.is_empty() && direct.session_id.is_none());

    assert_eq!(guided.images.len(), 4);
    assert_eq!(guided.meshes.len(), 4);
    assert!(guided.image_diversity.is_some());

    assert_eq!(full.images.len(), 4);
    assert_eq!(full.meshes.len(), 2);
    assert!(full.final_report.is_some() && full.exported_stl.is_some());

    let g_sim = guided.mean_similarity_to_sketch.unwrap();
    let f_sim = full.mean_similarity_to_sketch.unwrap();
    assert!(g_sim > f_sim, "guided {g_sim} vs full {f_sim}");
    let g_div = guided.image_diversity.unwrap();
    let f_div = full.image_diversity.unwrap();
    assert!(f_div < g_div, "full {f_div} vs guided {g_div}");
}

#[test]
fn route_names_parse_with_hyphens() {
    assert_eq!("sketch-direct".parse::<Route>().unwrap(), Route::SketchDirect);
    assert_eq!("sketch_guided".parse::<Route>().unwrap(), Route::SketchGuided);
    assert!("other".parse::<Route>().is_err());
}

#[test]
fn route_validation_errors() {
    let (_d, p) = mock_pipeline();
    let opts = RouteOptions { count: 0, ..RouteOptions::default() };
    assert_eq!(run_route(&p, &synthetic_sketch(0, 64), Route::Full, &opts).unwrap_err(), PipelineError::InvalidCount);
    assert!(matches!(run_route(&p, b"junk", Route::Full, &RouteOptions::default()), Err(PipelineError::UnsupportedImage(_))));
}
