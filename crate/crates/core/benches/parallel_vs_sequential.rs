use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use draftforge_core::imaging::synthetic_sketch;
use draftforge_core::mesh::{self, primitives, RepairPlan};
use draftforge_core::metrics::{
    diversity_distribution, embed_image_sets, DeterministicEmbedder, EmbeddingVector, ImageSet, RawImageSet,
};
use draftforge_core::Exec;
use rand::{Rng, SeedableRng};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_sets(count: usize, dim: usize) -> Vec<ImageSet> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    (0..count)
        .map(|i| ImageSet {
            set_id: format!("set{i:05}"),
            embeddings: (0..4)
                .map(|_| EmbeddingVector::raw((0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).normalize().unwrap())
                .collect(),
        })
        .collect()
}

fn diversity(c: &mut Criterion) {
    let sets = random_sets(4000, 512);
    let mut g = c.benchmark_group("diversity_distribution_4000x4");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| diversity_distribution(&sets, &[5.0, 50.0, 95.0], exec).unwrap())
        });
    }
    g.finish();
}

fn embedding(c: &mut Criterion) {
    let raw: Vec<RawImageSet> = (0..16)
        .map(|i| RawImageSet { set_id: format!("s{i}"), images: (0..4).map(|k| synthetic_sketch(i * 4 + k, 256)).collect() })
        .collect();
    let mut g = c.benchmark_group("embed_image_sets_16x4");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| embed_image_sets(&DeterministicEmbedder, &raw, exec).unwrap())
        });
    }
    g.finish();
}

fn repair(c: &mut Criterion) {
    let meshes: Vec<_> = (0..32)
        .map(|i| {
            let mut m = primitives::uv_sphere([i as f64 * 3.0, 0.0, 0.0], 1.0, 24, 48);
            m.triangles.truncate(m.triangles.len() - 3);
            m
        })
        .collect();
    let plan = RepairPlan { smoothing: mesh::SmoothingParams { iterations: 5, ..Default::default() }, ..RepairPlan::default() };
    let mut g = c.benchmark_group("repair_32_spheres");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&meshes, |m| mesh::apply_plan(m, &plan).unwrap().1))
        });
    }
    g.finish();
}

criterion_group!(benches, diversity, embedding, repair);
criterion_main!(benches);
