//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on failure.

mod common;

use std::time::{Duration, Instant};

use common::{frobenius, heavy_tailed_vector, oracle_groups};
use dts_core::archive::{decode_archive, encode_archive, matrix_bytes, ratio_for_budget, shape_amr, Accounting};
use dts_core::bench::suite::{DTS_D, DTS_T, INDIVIDUAL, NO_SCALING, WEIGHT_AVERAGE};
use dts_core::bench::{run_suite, BenchConfig, BenchReport, BenchRng};
use dts_core::codec::{decode_layer, encode_layer, encode_task, threshold_codes};
use dts_core::container::{decode_tensor_map, encode_tensor_map};
use dts_core::lowrank::{rank_for_ratio, truncated_svd, CodecConfig, CodecMode};
use dts_core::tensor::{DeltaKind, DeltaMap, Matrix, Tensor, TensorMap};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde::Deserialize;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = BenchRng::new(2024);
    let mut worst = 0.0f64;
    let mut mismatched_codes = 0;
    for _ in 0..1000 {
        let len = 1 + (rng.next_u64() % 4096) as usize;
        let v = heavy_tailed_vector(&mut rng, len);
        let (codes, scales) = threshold_codes(&v, CodecMode::FourGroup).unwrap();
        let oracle = oracle_groups(&v, CodecMode::FourGroup);
        for (got, want) in scales.to_array().iter().zip(oracle.scales) {
            worst = worst.max((*got as f64 - want).abs());
        }
        for (i, g) in oracle.groups.iter().enumerate() {
            let code = match (codes.sign_bits.get(i), codes.mag_bits.get(i)) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            mismatched_codes += usize::from(code != *g);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && mismatched_codes == 0 && elapsed < Duration::from_secs(60),
        format!("max absolute scale error {worst:.2e}, {mismatched_codes} code mismatches, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = BenchRng::new(77);
    let (mut four_sum, mut two_sum, mut wins) = (0.0, 0.0, 0);
    let cases = 200;
    for _ in 0..cases {
        let data: Vec<f32> = (0..64 * 64).map(|_| rng.normal() as f32).collect();
        let t = Tensor::new(vec![64, 64], data.clone()).unwrap();
        let norm = frobenius(&data, &vec![0.0; data.len()]);
        let err = |mode| {
            let rec = encode_layer("w", &t, &CodecConfig::new(0.3, mode).unwrap()).unwrap();
            frobenius(&data, decode_layer(&rec).unwrap().data()) / norm
        };
        let (four, two) = (err(CodecMode::FourGroup), err(CodecMode::TwoGroup));
        four_sum += four;
        two_sum += two;
        wins += usize::from(four < two);
    }
    let (four, two) = (four_sum / cases as f64, two_sum / cases as f64);
    let rate = wins as f64 / cases as f64;
    outcome(
        four < two && rate >= 0.9,
        format!(
            "mean relative error four-group {four:.4} vs two-group {two:.4}, win rate {:.1}%",
            rate * 100.0
        ),
    )
}

fn avg(report: &BenchReport, name: &str) -> f64 {
    report.strategy(name).unwrap().average
}

fn criterion_3(reports: &[BenchReport]) -> Outcome {
    let pairs: Vec<(f64, f64)> = reports.iter().map(|r| (avg(r, NO_SCALING), avg(r, DTS_T))).collect();
    let ok = pairs.iter().filter(|(n, t)| n < t).count();
    outcome(
        ok == reports.len(),
        format!(
            "no-scaling below DTS-T on {ok}/{} seeds: {}",
            reports.len(),
            pairs
                .iter()
                .map(|(n, t)| format!("{n:.2}<{t:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

#[derive(Deserialize)]
struct ShapeFixture {
    layers: Vec<ShapeEntry>,
}

#[derive(Deserialize)]
struct ShapeEntry {
    name: String,
    shape: Vec<usize>,
}

fn criterion_4() -> Outcome {
    let bytes = matrix_bytes(768, 768, rank_for_ratio(768, 768, 0.3).unwrap(), Accounting::TwoBit);
    let square = vec![("w".to_string(), vec![768, 768])];
    let amr = shape_amr(&square, 0.3, Accounting::TwoBit).unwrap();
    let budget_r = ratio_for_budget(&square, 0.01).unwrap();

    let fixture: ShapeFixture = serde_json::from_str(include_str!("../fixtures/vit_b32_shapes.json")).unwrap();
    let vit: Vec<(String, Vec<usize>)> = fixture.layers.into_iter().map(|l| (l.name, l.shape)).collect();
    let vit_three = shape_amr(&vit, 0.3, Accounting::ThreeMask).unwrap();
    let vit_two = shape_amr(&vit, 0.3, Accounting::TwoBit).unwrap();
    let vit_r = ratio_for_budget(&vit, 0.01).unwrap();
    let vit_budget = shape_amr(&vit, vit_r, Accounting::TwoBit).unwrap();

    let pass = bytes == 89_660
        && (amr - 0.0380).abs() <= 1e-4
        && budget_r <= 0.078
        && (vit_three - 0.0368).abs() <= 0.005
        && vit_budget <= 0.01;
    outcome(
        pass,
        format!(
            "768x768: {bytes} B, AMR {amr:.4}, budget r {budget_r}; ViT-B/32 AMR {:.3}% (three-mask), {:.3}% (two-bit); budget r {vit_r} gives {:.3}%",
            vit_three * 100.0,
            vit_two * 100.0,
            vit_budget * 100.0
        ),
    )
}

fn criterion_5(reports: &[BenchReport]) -> Outcome {
    let mut rng = BenchRng::new(31);
    let (m, n) = (40, 30);
    let data: Vec<f32> = (0..m * n).map(|_| rng.normal() as f32).collect();
    let matrix = Matrix::new(m, n, data.clone()).unwrap();
    let errors: Vec<f64> = (1..=n)
        .map(|k| {
            let approx = truncated_svd(&matrix, k).unwrap().reconstruct();
            data.iter()
                .zip(&approx)
                .map(|(x, y)| (*x as f64 - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let svd_ok = errors.windows(2).all(|w| w[1] <= w[0]);

    let at = |r: &BenchReport, x: f64| r.r_sweep.iter().find(|s| (s.r - x).abs() < 1e-12).map(|s| s.dts_t);
    let trend: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| (at(r, 0.05).unwrap(), at(r, 0.5).unwrap()))
        .collect();
    let ok = trend.iter().filter(|(lo, hi)| hi >= lo).count();
    outcome(
        svd_ok && ok >= 4,
        format!(
            "SVD error non-increasing over k=1..{n}: {svd_ok}; DTS-T r=0.05 -> 0.5 non-decreasing on {ok}/5: {}",
            trend
                .iter()
                .map(|(a, b)| format!("{a:.2}->{b:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn criterion_6(reports: &[BenchReport], elapsed: Duration) -> Outcome {
    let rows: Vec<(f64, f64, f64)> = reports
        .iter()
        .map(|r| (avg(r, INDIVIDUAL), avg(r, DTS_T), avg(r, WEIGHT_AVERAGE)))
        .collect();
    let ok = rows.iter().filter(|(i, t, w)| i - t <= 2.0 && t - w >= 10.0).count();
    outcome(
        ok >= 4 && elapsed < Duration::from_secs(120),
        format!(
            "{ok}/5 seeds within 2 of individual and 10 above weight averaging ({}); suite {elapsed:.2?} on one thread",
            rows.iter()
                .map(|(i, t, w)| format!("{i:.2}/{t:.2}/{w:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn criterion_7(reports: &[BenchReport]) -> Outcome {
    let gaps: Vec<f64> = reports.iter().map(|r| avg(r, DTS_D) - avg(r, DTS_T)).collect();
    let ok = gaps.iter().filter(|g| **g >= -0.5).count();
    outcome(
        ok == reports.len(),
        format!(
            "DTS-D minus DTS-T per seed: {}",
            gaps.iter().map(|g| format!("{g:+.2}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_8(reports: &[BenchReport]) -> Outcome {
    let mut wins = 0;
    let mut weights_ok = true;
    let mut parts = Vec::new();
    for r in reports {
        let u = r.unseen.as_ref().unwrap();
        wins += usize::from(u.fused_accuracy >= u.base_accuracy);
        weights_ok &= u.weights.weights.iter().all(|(_, g)| *g >= 0.0) && (u.weights.sum() - 1.0).abs() <= 1e-12;
        parts.push(format!("{:.2}>={:.2}", u.fused_accuracy, u.base_accuracy));
    }
    outcome(
        wins >= 4 && weights_ok,
        format!(
            "fused >= merged base on {wins}/5 ({}); weights valid: {weights_ok}",
            parts.join(" ")
        ),
    )
}

fn criterion_9(reports: &[BenchReport]) -> Outcome {
    let mut total = 0;
    let mut below = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in reports {
        for p in &r.pairwise {
            total += 1;
            below += usize::from(p.merged < p.individual);
            worst = worst.max(p.merged - p.individual);
        }
        for p in &r.partners {
            total += 2;
            below += usize::from(p.similar_merged < p.individual) + usize::from(p.dissimilar_merged < p.individual);
        }
    }
    outcome(
        below == total,
        format!(
            "{below}/{total} ordered pairs and partner rows below individual; smallest drop {:.2}",
            -worst
        ),
    )
}

fn tensor_map_strategy() -> impl Strategy<Value = TensorMap> {
    let t = prop::collection::vec(1usize..6, 1..4).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        prop::collection::vec(-50.0f32..50.0, len).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    });
    prop::collection::btree_map("[a-z]{1,5}", t, 1..5).prop_map(|m| TensorMap::from_entries(m).unwrap())
}

fn criterion_10() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    let container = runner.run(&tensor_map_strategy(), |map| {
        let bytes = encode_tensor_map(&map);
        let back = decode_tensor_map(&bytes).unwrap();
        for (name, t) in map.iter() {
            let b = back.get(name).unwrap();
            prop_assert_eq!(b.shape(), t.shape());
            prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(encode_tensor_map(&back), bytes);
        Ok(())
    });
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    let archive = runner.run(&(tensor_map_strategy(), 0.01f64..=1.0), |(map, r)| {
        let d = DeltaMap::from_map(map, DeltaKind::TaskVector);
        let a = encode_task("t", &d, 42, &CodecConfig::new(r, CodecMode::FourGroup).unwrap()).unwrap();
        let bytes = encode_archive(&a);
        let back = decode_archive(&bytes).unwrap();
        prop_assert_eq!(&back, &a);
        prop_assert_eq!(encode_archive(&back), bytes);
        Ok(())
    });

    let map = TensorMap::from_entries([(
        "w",
        Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]).unwrap(),
    )])
    .unwrap();
    let a = encode_task(
        "t",
        &DeltaMap::from_map(map.clone(), DeltaKind::TaskVector),
        0,
        &CodecConfig::new(0.5, CodecMode::FourGroup).unwrap(),
    )
    .unwrap();
    let mut bytes = encode_archive(&a);
    let truncated = decode_archive(&bytes[..bytes.len() - 1]).err().map(|e| e.name());
    bytes[0] ^= 0xff;
    let magic = decode_archive(&bytes).err().map(|e| e.name());
    let c = encode_tensor_map(&map);
    let c_trunc = decode_tensor_map(&c[..c.len() - 1]).err().map(|e| e.name());

    let pass = container.is_ok()
        && archive.is_ok()
        && magic == Some("BadMagic")
        && truncated == Some("OffsetOutOfRange")
        && c_trunc == Some("TruncatedPayload");
    outcome(
        pass,
        format!(
            "container 100 cases: {}, DTSA 100 cases: {}; bad magic -> {magic:?}, truncated archive -> {truncated:?}, truncated container -> {c_trunc:?}",
            if container.is_ok() { "ok" } else { "FAILED" },
            if archive.is_ok() { "ok" } else { "FAILED" },
        ),
    )
}

/// Harness sanity guard: no merged strategy beats the individual models by
/// more than half a point.
fn upper_bound_guard(reports: &[BenchReport]) -> Option<String> {
    for r in reports {
        let ind = avg(r, INDIVIDUAL);
        let sweep = r.r_sweep.iter().flat_map(|s| [s.dts_t, s.dts_d]);
        let all = r.strategies.iter().map(|s| s.average).chain(sweep);
        if let Some(v) = all.into_iter().find(|v| *v > ind + 0.5) {
            return Some(format!("seed {}: {v:.2} exceeds individual {ind:.2}", r.config.seed));
        }
    }
    None
}

fn main() {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let reports: Vec<BenchReport> = single.install(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                run_suite(&BenchConfig {
                    seed,
                    unseen_holdout: Some(1),
                    ..BenchConfig::default()
                })
                .expect("benchmark runs")
            })
            .collect()
    });
    let suite_time = start.elapsed();

    let results = [
        ("scale-oracle equivalence", criterion_1()),
        ("four-group refinement advantage", criterion_2()),
        ("no-scaling collapse", criterion_3(&reports)),
        ("AMR analytics", criterion_4()),
        ("monotonicity", criterion_5(&reports)),
        ("end-to-end personalization", criterion_6(&reports, suite_time)),
        ("difference-vector parity", criterion_7(&reports)),
        ("unseen-task gain", criterion_8(&reports)),
        ("pairwise degradation", criterion_9(&reports)),
        ("format integrity", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {:>2} {}: {}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    match upper_bound_guard(&reports) {
        None => println!("guard       PASS: no strategy exceeds the individual average by more than 0.5"),
        Some(msg) => {
            println!("guard       FAIL: {msg}");
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
