//! Hand-computed reference values.

mod common;

use common::*;
use ndarray::array;
use rdkg_core::analysis::{coverage, coverage_tolerance, knee_point, percentile, PercentileMode, RdPoint};
use rdkg_core::llm::TfIdfNamer;
use rdkg_core::ot::{fgw, sinkhorn, sinkhorn_report, structure_value, Coupling, SolverConfig};
use rdkg_core::refine::symmetric_kl;

/// Off-diagonal mass of the entropic 2×2 plan with uniform marginals.
fn closed_form_offdiag(c: &[[f64; 2]; 2], eps: f64) -> f64 {
    let delta = c[0][1] + c[1][0] - c[0][0] - c[1][1];
    let r = (-delta / (2.0 * eps)).exp();
    0.5 * r / (1.0 + r)
}

#[test]
fn sinkhorn_matches_closed_form_on_2x2() {
    let cases = [
        [[0.0, 1.0], [1.0, 0.0]],
        [[0.3, 0.1], [0.7, 0.2]],
        [[1.5, 0.2], [0.4, 1.9]],
        [[0.0, 0.0], [0.0, 0.0]],
    ];
    for c in cases {
        for eps in [0.05, 0.2, 1.0] {
            let cost = array![[c[0][0], c[0][1]], [c[1][0], c[1][1]]];
            let rep = sinkhorn_report(&cost, &[0.5, 0.5], &[0.5, 0.5], eps, 2000).unwrap();
            let t = closed_form_offdiag(&c, eps);
            let p = &rep.coupling.matrix;
            assert!((p[[0, 1]] - t).abs() < 1e-8, "{c:?} eps {eps}: {} vs {t}", p[[0, 1]]);
            assert!((p[[1, 0]] - t).abs() < 1e-8);
            assert!((p[[0, 0]] - (0.5 - t)).abs() < 1e-8);
        }
    }
}

#[test]
fn sinkhorn_small_epsilon_is_nearly_diagonal() {
    let cost = array![[0.0, 1.0], [1.0, 0.0]];
    let pi = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 0.01, 200).unwrap();
    let target = array![[0.5, 0.0], [0.0, 0.5]];
    for (a, b) in pi.matrix.iter().zip(target.iter()) {
        assert!((a - b).abs() < 1e-3);
    }
}

#[test]
fn gw_structure_value_on_2x2() {
    let c1 = array![[0.0, 1.0], [1.0, 0.0]];
    let c2 = array![[0.0, 2.0], [2.0, 0.0]];
    let pi = array![[0.5, 0.0], [0.0, 0.5]];
    assert!((structure_value(&c1, &c2, &pi).unwrap() - 0.5).abs() < 1e-15);
    assert!((four_index(&c1, &c2, &pi) - 0.5).abs() < 1e-15);
    // product plan: every (i,k,j,l) has weight 1/16; C1 entries {0,0,1,1}, C2 entries {0,0,2,2}
    let prod = Coupling::product(&[0.5, 0.5], &[0.5, 0.5]).matrix;
    let expected = (4.0 * 0.0 + 4.0 * 4.0 + 4.0 * 1.0 + 4.0 * 1.0) / 16.0;
    assert!((structure_value(&c1, &c2, &prod).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn fgw_with_full_feature_weight_is_plain_sinkhorn() {
    let mut r = rng(5);
    for _ in 0..10 {
        let d_z = random_metric(&mut r, 4);
        let d_v = random_metric(&mut r, 3);
        let m = random_matrix(&mut r, 4, 3, 2.0);
        let (mu, nu) = (uniform(4), uniform(3));
        let cfg = SolverConfig {
            lambda_feat: 1.0,
            ..Default::default()
        };
        let res = fgw(&d_z, &d_v, &m, &mu, &nu, &cfg).unwrap();
        let direct = sinkhorn(&m, &mu, &nu, cfg.epsilon, cfg.sinkhorn_iters).unwrap();
        let lin: f64 = m.iter().zip(direct.matrix.iter()).map(|(c, p)| c * p).sum();
        assert!((res.distortion - lin).abs() < 1e-9, "{} vs {lin}", res.distortion);
    }
}

#[test]
fn symmetric_kl_of_mirrored_pair() {
    let v = symmetric_kl(&[0.75, 0.25], &[0.25, 0.75], 0.0).unwrap();
    assert!((v - 0.5 * 3f64.ln()).abs() < 1e-15);
    assert!((v - 0.5493061443340549).abs() < 1e-15);
    assert_eq!(symmetric_kl(&[0.3, 0.7], &[0.3, 0.7], 0.0).unwrap(), 0.0);
}

fn point(t: usize, rate: f64, distortion: f64) -> RdPoint {
    RdPoint {
        t,
        rate,
        distortion,
        objective: rate + distortion,
        structure: 0.0,
        feature: 0.0,
    }
}

#[test]
fn knee_of_hand_trace() {
    // normalized: (0,1) (1/3,0.2) (2/3,0.1) (1,0); chord x + y = 1
    // distances 0, 0.4667/√2, 0.2333/√2, 0
    let pts = [point(0, 0.0, 1.0), point(1, 1.0, 0.2), point(2, 2.0, 0.1), point(3, 3.0, 0.0)];
    assert_eq!(knee_point(&pts).unwrap(), 1);
    // distances 0.2333/√2 and 0.2833/√2
    let later = [point(0, 0.0, 1.0), point(1, 1.0, 0.9), point(2, 2.0, 0.05), point(3, 3.0, 0.0)];
    assert_eq!(knee_point(&later).unwrap(), 2);
}

#[test]
fn percentile_interpolates_linearly() {
    assert!((percentile(&[1.0, 2.0, 3.0, 4.0], 30.0).unwrap() - 1.9).abs() < 1e-15);
    assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.0).unwrap(), 1.0);
    assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 100.0).unwrap(), 4.0);
    assert_eq!(percentile(&[7.0], 30.0).unwrap(), 7.0);
}

#[test]
fn coverage_of_2x2() {
    // sorted 0.2 0.8 0.9 1.0, rank 0.9 → q = 0.2 + 0.9·0.6 = 0.74
    let m = array![[0.2, 0.9], [1.0, 0.8]];
    let q = coverage_tolerance(&m, PercentileMode::AllEntries).unwrap();
    assert!((q - 0.74).abs() < 1e-12);
    let pi = Coupling::new(array![[0.4, 0.1], [0.1, 0.4]], vec![0.5, 0.5], vec![0.5, 0.5]);
    assert_eq!(coverage(&m, &pi).unwrap(), 0.5);
    // row minima 0.2 0.8 → q = 0.38
    let q_rows = coverage_tolerance(&m, PercentileMode::RowMinima).unwrap();
    assert!((q_rows - 0.38).abs() < 1e-12);
}

#[test]
fn tfidf_label_prefers_rare_repeated_terms() {
    let corpus: Vec<String> = [
        "set_index reset_index set_index",
        "dataframe groupby columns",
        "dataframe merge columns",
        "groupby reset_index dataframe",
    ]
    .map(String::from)
    .to_vec();
    let namer = TfIdfNamer::new(&corpus);
    let scores = namer.scores(&corpus[..1]);
    // set_index: 2·ln(1 + 4/1); reset_index: 1·ln(1 + 4/2)
    assert_eq!(scores[0].0, "set_index");
    assert!((scores[0].1 - 2.0 * 5f64.ln()).abs() < 1e-12);
    assert_eq!(scores[1].0, "reset_index");
    assert!((scores[1].1 - 3f64.ln()).abs() < 1e-12);
    assert_eq!(namer.label(&corpus[..1]), "Set_index Reset_index");
}
