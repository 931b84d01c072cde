use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use yolof_assign::encoder::{forward_with, EncoderSpec, WeightSet};
use yolof_assign::geometry::BoxXYXY;
use yolof_assign::io::{run_match_stats, AnnotationCorpus, AnnotationRecord, Category, ImageRecord, RunConfig};
use yolof_assign::parallel::Execution;
use yolof_assign::postprocess::{nms_with, Detection};
use yolof_assign::synth::{random_scene, SceneSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus(images: u64) -> AnnotationCorpus {
    let spec = SceneSpec {
        per_bucket: 4,
        ..SceneSpec::default()
    };
    let mut imgs = Vec::new();
    let mut anns = Vec::new();
    for id in 0..images {
        imgs.push(ImageRecord {
            id,
            size: spec.image,
            file_name: format!("{id}.jpg"),
        });
        let scene = random_scene(&spec, id);
        for (i, b) in scene.boxes().iter().enumerate() {
            anns.push(AnnotationRecord::new(id * 100 + i as u64, id, *b, scene.class_ids()[i]));
        }
    }
    let cats = (0..3)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
            supercategory: String::new(),
        })
        .collect();
    AnnotationCorpus::from_parts(imgs, anns, cats).unwrap()
}

fn detections(n: usize, classes: u32) -> Vec<Detection> {
    let mut rng = Pcg32::seed_from_u64(7);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..1200.0);
            let y = rng.random_range(0.0..720.0);
            let w = rng.random_range(8.0..80.0);
            let h = rng.random_range(8.0..80.0);
            let b = BoxXYXY::new(x, y, x + w, y + h).unwrap();
            Detection::new(b, rng.random_range(0.0..1.0), rng.random_range(0..classes)).unwrap()
        })
        .collect()
}

fn bench_match_stats(c: &mut Criterion) {
    let data = corpus(64);
    let cfg = RunConfig::default();
    let mut g = c.benchmark_group("match_stats_64_images");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| run_match_stats(&data, &cfg, exec).unwrap()));
    }
    g.finish();
}

fn bench_nms(c: &mut Criterion) {
    let dets = detections(8000, 80);
    let mut g = c.benchmark_group("nms_8000_dets");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &dets, |b, d| b.iter(|| nms_with(d, 0.6, exec)));
    }
    g.finish();
}

fn bench_encoder(c: &mut Criterion) {
    let spec = EncoderSpec {
        in_channels: 32,
        mid_channels: 32,
        ..EncoderSpec::default()
    };
    let weights = WeightSet::random(&spec, 3);
    let mut rng = Pcg32::seed_from_u64(5);
    let input = Array3::from_shape_fn((32, 25, 40), |_| rng.random_range(-1.0..1.0));
    let mut g = c.benchmark_group("encoder_forward_32ch_25x40");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| forward_with(&spec, &input, &weights, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_match_stats, bench_nms, bench_encoder);
criterion_main!(benches);
