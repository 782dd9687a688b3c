//! Unit tests for `pipeline`.

use sindy_core::cull::CullEvent;
use sindy_core::dynsys::system;
use sindy_core::error::Error;
use sindy_core::evolve_fom::FomSuite;
use sindy_core::library::{build_polynomial_library, FunctionalTerm};
use sindy_core::model::SparseModel;
use sindy_core::pipeline::*;

fn rec(
    home: usize,
    iteration: usize,
    rows: Vec<Vec<(usize, f64)>>,
    env: &[f64],
) -> IterationRecord {
    let foms = env
        .iter()
        .map(|&e| {
            Some(FomSuite {
                evolution_ok: true,
                failure: None,
                stability: Some(0.0),
                in_bounds_frac: vec![1.0],
                in_envelope_frac: vec![e],
                std_rel_err: vec![0.0],
                fft_power_corr: vec![1.0],
                hist_corr: vec![1.0],
            })
        })
        .collect();
    IterationRecord {
        pass: 1,
        home,
        iteration,
        active_counts: rows.iter().map(Vec::len).collect(),
        model: ModelSnapshot { rows },
        foms,
        event: CullEvent::none(),
        rank_deficient: vec![],
        removed_variables: vec![],
    }
}

fn log(records: Vec<IterationRecord>) -> RunLog {
    RunLog {
        pass: 1,
        home: 0,
        records,
        aborted: None,
    }
}

#[test]
fn selection_examples() {
    let single = log(vec![rec(0, 0, vec![vec![(1, 1.0)]], &[1.0, 1.0])]);
    assert_eq!(select_best_model(&single, 2.0, 0.0).unwrap(), 0);

    let tie = log(vec![
        rec(0, 0, vec![(0..7).map(|i| (i, 1.0)).collect()], &[0.9, 0.9]),
        rec(0, 1, vec![(0..5).map(|i| (i, 1.0)).collect()], &[0.9, 0.9]),
    ]);
    assert_eq!(select_best_model(&tie, 2.0, 0.0).unwrap(), 1);

    // home flat, validation in-envelope peaks at iteration 2
    let peaks = log((0..5)
        .map(|k| {
            let v = [0.2, 0.4, 0.9, 0.5, 0.3][k];
            rec(0, k, vec![vec![(0, 1.0), (1, 1.0)]], &[0.6, v])
        })
        .collect());
    assert_eq!(select_best_model(&peaks, 2.0, 0.05).unwrap(), 2);

    let mut failed = rec(0, 0, vec![vec![(0, 1.0)]], &[1.0]);
    failed.foms[0] = Some(FomSuite::failed(sindy_core::FailureKind::Diverged));
    assert_eq!(
        select_best_model(&log(vec![failed]), 2.0, 0.05),
        Err(Error::NoViableModel)
    );
}

#[test]
fn union_examples() {
    let lib = build_polynomial_library(2, 1, true).unwrap();
    let t = |e: [u32; 2]| FunctionalTerm::new(e.to_vec());
    let a = SparseModel::from_entries(lib.clone(), &[(0, t([1, 0]), 1.0)]).unwrap();
    let b = SparseModel::from_entries(lib.clone(), &[(1, t([0, 1]), 1.0)]).unwrap();
    let u = union_of_libraries(&[a.clone(), a.clone()]).unwrap();
    assert_eq!(u.active, a.library.active);
    let u = union_of_libraries(&[a, b]).unwrap();
    assert_eq!(
        u.active,
        vec![vec![false, true, false], vec![false, false, true]]
    );

    let c = SparseModel::from_entries(lib.clone(), &[(0, t([0, 0]), 2.0)]).unwrap();
    let d = SparseModel::from_entries(lib.clone(), &[(0, t([0, 1]), 2.0)]).unwrap();
    let e = SparseModel::from_entries(lib, &[(1, t([1, 0]), 2.0)]).unwrap();
    let u = union_of_libraries(&[c, d, e]).unwrap();
    assert_eq!(u.active_counts().iter().sum::<usize>(), 3);
}

#[test]
fn restart_library_drops_removed_variable() {
    let lib = build_polynomial_library(3, 2, true).unwrap();
    let r = restart_library(&lib, &lib, &[false, false, true]);
    let names: Vec<String> = r
        .active_terms(0)
        .iter()
        .map(|&i| lib.terms[i].name())
        .collect();
    assert_eq!(names, vec!["1", "x", "y", "x^2", "x*y", "y^2"]);
    assert_eq!(r.active_count(2), 0);
    let same = restart_library(&lib, &lib, &[false, false, false]);
    assert_eq!(same, lib);
}

#[test]
fn snapshot_roundtrip() {
    let s = system("lorenz").unwrap();
    let snap = ModelSnapshot::of(&s.true_model);
    assert_eq!(snap.to_model(&s.true_model.library), s.true_model);
    assert_eq!(snap.total_active(), 7);
}

#[test]
fn noise_free_harmonic_recovery() {
    let s = system("harm_linear").unwrap();
    let data = synthetic_dataset(&s, 4.0, 0.0, 1).unwrap();
    let cfg = RunConfig {
        max_degree: 2,
        ..Default::default()
    };
    let res = run_full(&cfg, &data).unwrap();
    let truth = s.true_model.embed(&res.universe).unwrap();
    for m in res.final_models.iter().flatten() {
        for j in 0..2 {
            assert_eq!(m.support(j), truth.support(j), "{}", m.render(Some(3)));
            for i in truth.support(j) {
                let rel = ((m.coefficients[j][i] - truth.coefficients[j][i])
                    / truth.coefficients[j][i])
                    .abs();
                assert!(rel < 0.01, "{}", m.render(Some(4)));
            }
        }
    }
    let mut buf = Vec::new();
    write_log(&mut buf, &cfg, &res.universe, 3, 2, &res.pass1).unwrap();
    let parsed = read_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(
        parsed.records,
        res.pass1
            .iter()
            .flat_map(|l| l.records.clone())
            .collect::<Vec<_>>()
    );
    assert_eq!(parsed.universe.terms, res.universe.terms);
}
