use dsmfuse::network::{
    build_discriminator, build_generator, init_discriminator, init_generator, GeneratorKind,
    GeneratorVariant,
};
use dsmfuse::tensor::Shape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: &str = include_str!("golden/param_counts.txt");

struct GoldenRow {
    kind: GeneratorKind,
    depth: usize,
    width: usize,
    generator: usize,
    discriminator: usize,
    discriminator_pan: usize,
}

fn golden() -> Vec<GoldenRow> {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let n = |i: usize| f[i].parse::<usize>().unwrap();
            GoldenRow {
                kind: GeneratorKind::parse(f[0]).unwrap(),
                depth: n(1),
                width: n(2),
                generator: n(3),
                discriminator: n(4),
                discriminator_pan: n(5),
            }
        })
        .collect()
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    k * k * cin * cout + cout
}

fn channels(width: usize, level: usize) -> usize {
    width << level.min(3)
}

/// Closed-form count: 4x4 convolutions with biases, two batch-norm
/// scalars per normalized channel.
fn expected_generator(kind: GeneratorKind, d: usize, b: usize) -> usize {
    let encoder = (0..d)
        .map(|l| {
            let cin = if l == 0 { 1 } else { channels(b, l - 1) };
            let out = channels(b, l);
            conv(cin, out, 4) + if l > 0 && l < d - 1 { 2 * out } else { 0 }
        })
        .sum::<usize>();
    let decoder = |streams: usize, head: usize| {
        (0..d)
            .map(|j| {
                let cin = if j == 0 {
                    streams * channels(b, d - 1)
                } else {
                    (streams + 1) * channels(b, d - 1 - j)
                };
                let out = if j == d - 1 {
                    head
                } else {
                    channels(b, d - 2 - j)
                };
                conv(cin, out, 4) + if j < d - 1 { 2 * out } else { 0 }
            })
            .sum::<usize>()
    };
    match kind {
        GeneratorKind::SingleStream => encoder + decoder(1, 1),
        GeneratorKind::Hybrid => 2 * encoder + decoder(2, 1),
        GeneratorKind::WNet => 2 * encoder + 2 * decoder(1, b) + conv(2 * b, 1, 3),
        GeneratorKind::Identity => 0,
    }
}

fn expected_discriminator(b: usize, inputs: usize) -> usize {
    let widths = [b, 2 * b, 4 * b, 8 * b, 1];
    let mut cin = inputs;
    let mut total = 0;
    for (l, &out) in widths.iter().enumerate() {
        total += conv(cin, out, 4) + if (1..=3).contains(&l) { 2 * out } else { 0 };
        cin = out;
    }
    total
}

#[test]
fn parameter_counts_match_the_golden_file() {
    let rows = golden();
    assert_eq!(rows.len(), 9);
    for r in rows {
        let spec = build_generator(GeneratorVariant::new(r.kind, r.depth, r.width)).unwrap();
        assert_eq!(
            spec.param_count(),
            r.generator,
            "{:?} depth {} width {}",
            r.kind,
            r.depth,
            r.width
        );
        assert_eq!(expected_generator(r.kind, r.depth, r.width), r.generator);
        let patch = 1 << r.depth;
        for (on_pan, golden, inputs) in
            [(false, r.discriminator, 2), (true, r.discriminator_pan, 3)]
        {
            let d = build_discriminator(r.width, on_pan, patch).unwrap();
            assert_eq!(d.param_count(), golden);
            assert_eq!(expected_discriminator(r.width, inputs), golden);
        }
    }
}

#[test]
fn parameter_count_ordering() {
    for (d, b) in [(8, 64), (6, 16)] {
        let count = |k| {
            build_generator(GeneratorVariant::new(k, d, b))
                .unwrap()
                .param_count()
        };
        let (single, wnet, hybrid) = (
            count(GeneratorKind::SingleStream),
            count(GeneratorKind::WNet),
            count(GeneratorKind::Hybrid),
        );
        assert!(hybrid > single);
        assert!(hybrid < 2 * wnet);
    }
}

#[test]
fn initialized_stores_hold_exactly_the_counted_scalars() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [
        GeneratorKind::SingleStream,
        GeneratorKind::WNet,
        GeneratorKind::Hybrid,
    ] {
        let spec = build_generator(GeneratorVariant::new(kind, 6, 16)).unwrap();
        let store = init_generator::<f32, _>(&spec, &mut rng).unwrap();
        assert_eq!(store.trainable_count(), spec.param_count());
    }
    let d = build_discriminator(16, false, 64).unwrap();
    assert_eq!(
        init_discriminator::<f32, _>(&d, &mut rng)
            .unwrap()
            .trainable_count(),
        d.param_count()
    );
}

#[test]
fn hybrid_contract_at_full_depth() {
    let spec = build_generator(GeneratorVariant::new(GeneratorKind::Hybrid, 8, 64)).unwrap();
    assert_eq!(spec.skip_count(), 14);
    assert_eq!(spec.patch, 256);
    assert_eq!(spec.bottleneck(), Some((2 * 512, 1)));
    let shapes = spec.dry_run(256).unwrap();
    assert_eq!(shapes.last().unwrap().1, Shape::new(1, 1, 256, 256));
    let single =
        build_generator(GeneratorVariant::new(GeneratorKind::SingleStream, 8, 64)).unwrap();
    assert_eq!(single.skip_count(), 7);
    let d = build_discriminator(64, false, 256).unwrap();
    assert_eq!(d.layers.len(), 5);
    assert_eq!(d.score_size(), 8);
}

#[test]
fn dry_runs_compose_for_all_variants() {
    for kind in [
        GeneratorKind::SingleStream,
        GeneratorKind::WNet,
        GeneratorKind::Hybrid,
    ] {
        for patch in [32usize, 64, 256] {
            let depth = patch.trailing_zeros() as usize;
            let spec = build_generator(GeneratorVariant::new(kind, depth, 4)).unwrap();
            let shapes = spec.dry_run(patch).unwrap();
            assert_eq!(
                shapes.last().unwrap().1,
                Shape::new(1, 1, patch, patch),
                "{kind:?} {patch}"
            );
            assert!(spec.dry_run(patch * 2).is_err());
        }
    }
}
